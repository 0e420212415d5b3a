//! Renders explanation records for end-user surfaces.

use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::narrative::ExplanationRecord;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("cannot write {}: {source}", path.as_deref().map(|p| p.display().to_string()).unwrap_or_else(|| "output".into()))]
    IoFailure {
        path: Option<PathBuf>,
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl From<io::Error> for ExportError {
    fn from(source: io::Error) -> Self {
        ExportError::IoFailure { path: None, source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    #[default]
    Jsonl,
    Markdown,
    Html,
    TextEmail,
}

impl ExportFormat {
    pub const ALL: [ExportFormat; 4] = [
        ExportFormat::Jsonl,
        ExportFormat::Markdown,
        ExportFormat::Html,
        ExportFormat::TextEmail,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExportFormat::Jsonl => "jsonl",
            ExportFormat::Markdown => "markdown",
            ExportFormat::Html => "html",
            ExportFormat::TextEmail => "text_email",
        }
    }
}

impl fmt::Display for ExportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| {
                format!("unknown format `{s}` (expected jsonl, markdown, html or text_email)")
            })
    }
}

/// Paragraphs when the record was concatenated, otherwise one line per
/// narrative.
fn body_lines(r: &ExplanationRecord) -> Vec<&str> {
    if r.paragraphs.is_empty() {
        r.narratives.iter().map(|n| n.text.as_str()).collect()
    } else {
        r.paragraphs.iter().map(|p| p.text.as_str()).collect()
    }
}

pub fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

/// Writes any serializable records one JSON document per line.
pub fn write_jsonl<T: Serialize>(records: &[T], out: &mut dyn Write) -> Result<(), ExportError> {
    for r in records {
        serde_json::to_writer(&mut *out, r).map_err(io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>, ExportError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ExportError::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn write_markdown(records: &[ExplanationRecord], out: &mut dyn Write) -> io::Result<()> {
    for (i, r) in records.iter().enumerate() {
        if i > 0 {
            writeln!(out)?;
        }
        writeln!(out, "## {}", r.sample_id)?;
        writeln!(out)?;
        writeln!(out, "{}", r.headline)?;
        let lines = body_lines(r);
        if !lines.is_empty() {
            writeln!(out)?;
        }
        if r.paragraphs.is_empty() {
            for l in lines {
                writeln!(out, "- {l}")?;
            }
        } else {
            for (j, l) in lines.iter().enumerate() {
                if j > 0 {
                    writeln!(out)?;
                }
                writeln!(out, "{l}")?;
            }
        }
    }
    Ok(())
}

fn write_html(records: &[ExplanationRecord], out: &mut dyn Write) -> io::Result<()> {
    writeln!(out, "<!DOCTYPE html>")?;
    writeln!(out, "<html lang=\"en\">")?;
    writeln!(out, "<head>")?;
    writeln!(out, "<meta charset=\"utf-8\">")?;
    writeln!(out, "<title>Narrative explanations</title>")?;
    writeln!(out, "</head>")?;
    writeln!(out, "<body>")?;
    for r in records {
        let id = escape_html(&r.sample_id);
        writeln!(out, "<section>")?;
        writeln!(out, "<h2>{id}</h2>")?;
        writeln!(out, "<p>{}</p>", escape_html(&r.headline))?;
        let lines = body_lines(r);
        if r.paragraphs.is_empty() {
            if !lines.is_empty() {
                writeln!(out, "<ul>")?;
                for l in lines {
                    writeln!(out, "<li>{}</li>", escape_html(l))?;
                }
                writeln!(out, "</ul>")?;
            }
        } else {
            for l in lines {
                writeln!(out, "<p>{}</p>", escape_html(l))?;
            }
        }
        writeln!(out, "</section>")?;
    }
    writeln!(out, "</body>")?;
    writeln!(out, "</html>")?;
    Ok(())
}

/// First sentence of the headline, used as the subject line.
fn subject(headline: &str) -> &str {
    match headline.find(". ") {
        Some(i) => &headline[..=i],
        None => headline.trim_end_matches(':'),
    }
}

fn write_text_email(records: &[ExplanationRecord], out: &mut dyn Write) -> io::Result<()> {
    for (i, r) in records.iter().enumerate() {
        if i > 0 {
            writeln!(out)?;
            writeln!(out, "----")?;
            writeln!(out)?;
        }
        writeln!(out, "Subject: [{}] {}", r.sample_id, subject(&r.headline))?;
        writeln!(out)?;
        writeln!(out, "{}", r.headline)?;
        let bullet = if r.paragraphs.is_empty() { "  * " } else { "" };
        for l in body_lines(r) {
            if bullet.is_empty() {
                writeln!(out)?;
            }
            writeln!(out, "{bullet}{l}")?;
        }
    }
    Ok(())
}

/// Writes `records` in `format`. Records are written in the order given.
pub fn export(
    records: &[ExplanationRecord],
    format: ExportFormat,
    out: &mut dyn Write,
) -> Result<(), ExportError> {
    match format {
        ExportFormat::Jsonl => write_jsonl(records, out)?,
        ExportFormat::Markdown => write_markdown(records, out)?,
        ExportFormat::Html => write_html(records, out)?,
        ExportFormat::TextEmail => write_text_email(records, out)?,
    }
    out.flush()?;
    Ok(())
}

pub fn export_to_string(records: &[ExplanationRecord], format: ExportFormat) -> String {
    let mut buf = Vec::new();
    export(records, format, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("renderers emit UTF-8")
}

pub fn export_to_path(
    records: &[ExplanationRecord],
    format: ExportFormat,
    path: &Path,
) -> Result<(), ExportError> {
    let with_path = |source| ExportError::IoFailure {
        path: Some(path.to_path_buf()),
        source,
    };
    let file = File::create(path).map_err(with_path)?;
    let mut w = BufWriter::new(file);
    export(records, format, &mut w).map_err(|e| match e {
        ExportError::IoFailure { source, .. } => with_path(source),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::narrative::{Narrative, Paragraph};

    fn record(id: &str, texts: &[&str]) -> ExplanationRecord {
        ExplanationRecord {
            sample_id: id.into(),
            headline: "This account is extremely likely to upsell. Its upsell likelihood is larger than 98% of all accounts, which is driven by:".into(),
            narratives: texts
                .iter()
                .map(|t| Narrative {
                    text: t.to_string(),
                    importance: 0.5,
                    super_feature: "s".into(),
                    ultra_feature: "u".into(),
                    category: "c".into(),
                })
                .collect(),
            paragraphs: vec![],
            warnings: vec![],
        }
    }

    #[test]
    fn markdown_heading_and_bullets() {
        let md = export_to_string(&[record("acct-1", &["A.", "B."])], ExportFormat::Markdown);
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines[0], "## acct-1");
        assert_eq!(&lines[lines.len() - 2..], ["- A.", "- B."]);
    }

    #[test]
    fn html_escapes_text() {
        let html = export_to_string(
            &[record("<id>", &["Use <b>bold</b> & more"])],
            ExportFormat::Html,
        );
        assert!(html.contains("<li>Use &lt;b&gt;bold&lt;/b&gt; &amp; more</li>"));
        assert!(html.contains("<h2>&lt;id&gt;</h2>"));
        assert!(!html.contains("<b>"));
    }

    #[test]
    fn empty_input_is_a_valid_document() {
        assert_eq!(export_to_string(&[], ExportFormat::Jsonl), "");
        assert_eq!(export_to_string(&[], ExportFormat::Markdown), "");
        assert_eq!(export_to_string(&[], ExportFormat::TextEmail), "");
        let html = export_to_string(&[], ExportFormat::Html);
        assert!(html.starts_with("<!DOCTYPE html>") && html.trim_end().ends_with("</html>"));
    }

    #[test]
    fn email_subject_from_headline() {
        let mail = export_to_string(&[record("a", &["X."])], ExportFormat::TextEmail);
        assert!(mail.starts_with("Subject: [a] This account is extremely likely to upsell.\n"));
        assert!(mail.contains("  * X."));
    }

    #[test]
    fn paragraphs_replace_bullets() {
        let mut r = record("a", &["X.", "Y."]);
        r.paragraphs = vec![Paragraph {
            category: "c".into(),
            text: "X, and y.".into(),
            importance: 0.5,
            member_count: 2,
        }];
        let md = export_to_string(&[r], ExportFormat::Markdown);
        assert!(md.ends_with("\nX, and y.\n"));
        assert!(!md.contains("- X."));
    }

    #[test]
    fn format_names_round_trip() {
        for f in ExportFormat::ALL {
            assert_eq!(f.name().parse::<ExportFormat>(), Ok(f));
        }
        assert!("pdf".parse::<ExportFormat>().is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let rs = vec![record("a", &["X."]), record("b", &[])];
        let text = export_to_string(&rs, ExportFormat::Jsonl);
        assert_eq!(read_jsonl::<ExplanationRecord>(&text).unwrap(), rs);
    }
}
