use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::expr::{is_identifier, Expr};
use super::{read_file, DesignError};

/// Placeholder naming the super-feature itself.
pub const SUPER_NAME: &str = "super_name";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Literal(String),
    Placeholder(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemFormat {
    #[default]
    Number,
    /// Renders ` (+X%)` / ` (-X%)`, or nothing when the value is not finite.
    SignedPercent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtraItem {
    pub name: String,
    pub expression: Expr,
    pub format: ItemFormat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NarrativeTemplate {
    pub insight_type: String,
    pub segments: Vec<Segment>,
    pub extra_items: Vec<ExtraItem>,
}

impl NarrativeTemplate {
    pub fn parse(
        insight_type: &str,
        text: &str,
        extra_items: Vec<ExtraItem>,
    ) -> Result<Self, DesignError> {
        let segments = parse_segments(text).map_err(|(position, message)| {
            DesignError::MalformedPlaceholder {
                insight_type: insight_type.to_string(),
                position,
                message,
            }
        })?;
        let bad = |name: &str, message: String| DesignError::BadExpression {
            context: format!("extra item `{name}` of template `{insight_type}`"),
            position: 0,
            message,
        };
        let mut names = HashSet::new();
        for item in &extra_items {
            if !is_identifier(&item.name) || item.name == SUPER_NAME {
                return Err(bad(&item.name, "invalid extra item name".into()));
            }
            if !names.insert(item.name.as_str()) {
                return Err(bad(&item.name, "duplicate extra item name".into()));
            }
        }
        for item in &extra_items {
            for id in item.expression.identifiers() {
                if names.contains(id) {
                    return Err(bad(
                        &item.name,
                        format!("references extra item `{id}`; only insight items are allowed"),
                    ));
                }
                if id == SUPER_NAME {
                    return Err(bad(&item.name, "`super_name` is not numeric".into()));
                }
            }
        }
        Ok(Self {
            insight_type: insight_type.to_string(),
            segments,
            extra_items,
        })
    }

    /// Distinct placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for s in &self.segments {
            if let Segment::Placeholder(name) = s {
                if !out.contains(&name.as_str()) {
                    out.push(name);
                }
            }
        }
        out
    }

    pub fn extra_item(&self, name: &str) -> Option<&ExtraItem> {
        self.extra_items.iter().find(|e| e.name == name)
    }

    /// The template text with literal braces re-escaped.
    pub fn text(&self) -> String {
        let mut out = String::new();
        for s in &self.segments {
            match s {
                Segment::Literal(l) => out.push_str(&l.replace('{', "{{").replace('}', "}}")),
                Segment::Placeholder(p) => {
                    out.push('{');
                    out.push_str(p);
                    out.push('}');
                }
            }
        }
        out
    }
}

/// Splits template text into literal and `{placeholder}` segments. `{{` and
/// `}}` are literal braces. Errors carry a byte offset.
fn parse_segments(text: &str) -> Result<Vec<Segment>, (usize, String)> {
    let mut segments = Vec::new();
    let mut lit = String::new();
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        match c {
            '{' if chars.peek().map(|&(_, n)| n) == Some('{') => {
                chars.next();
                lit.push('{');
            }
            '}' if chars.peek().map(|&(_, n)| n) == Some('}') => {
                chars.next();
                lit.push('}');
            }
            '}' => return Err((i, "unmatched `}`".into())),
            '{' => {
                let mut name = String::new();
                let mut closed = false;
                for (_, n) in chars.by_ref() {
                    if n == '}' {
                        closed = true;
                        break;
                    }
                    if n == '{' {
                        return Err((i, "nested `{` in placeholder".into()));
                    }
                    name.push(n);
                }
                if !closed {
                    return Err((i, "unclosed placeholder".into()));
                }
                if !is_identifier(&name) {
                    return Err((i, format!("invalid placeholder name `{name}`")));
                }
                if !lit.is_empty() {
                    segments.push(Segment::Literal(std::mem::take(&mut lit)));
                }
                segments.push(Segment::Placeholder(name));
            }
            _ => lit.push(c),
        }
    }
    if !lit.is_empty() {
        segments.push(Segment::Literal(lit));
    }
    Ok(segments)
}

/// Templates keyed by insight type, in document order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TemplateSet {
    templates: Vec<NarrativeTemplate>,
}

impl TemplateSet {
    pub fn new(templates: Vec<NarrativeTemplate>) -> Result<Self, DesignError> {
        let mut seen = HashSet::new();
        for t in &templates {
            if !seen.insert(t.insight_type.as_str()) {
                return Err(DesignError::DuplicateInsightType(t.insight_type.clone()));
            }
        }
        Ok(Self { templates })
    }

    pub fn get(&self, insight_type: &str) -> Option<&NarrativeTemplate> {
        self.templates
            .iter()
            .find(|t| t.insight_type == insight_type)
    }

    pub fn position(&self, insight_type: &str) -> Option<usize> {
        self.templates
            .iter()
            .position(|t| t.insight_type == insight_type)
    }

    pub fn templates(&self) -> &[NarrativeTemplate] {
        &self.templates
    }

    pub fn remove(&mut self, insight_type: &str) -> Option<NarrativeTemplate> {
        let i = self.position(insight_type)?;
        Some(self.templates.remove(i))
    }

    pub fn from_json(text: &str) -> Result<Self, DesignError> {
        let raw: RawDocument = serde_json::from_str(text)
            .map_err(|e| DesignError::Document(format!("templates: {e}")))?;
        let mut templates = Vec::with_capacity(raw.0.len());
        let mut seen = HashSet::new();
        for (insight_type, t) in raw.0 {
            if !seen.insert(insight_type.clone()) {
                return Err(DesignError::DuplicateInsightType(insight_type));
            }
            if !is_identifier(&insight_type) {
                return Err(DesignError::Document(format!(
                    "templates: invalid insight type `{insight_type}`"
                )));
            }
            let extra_items = t
                .extra_items
                .into_iter()
                .map(|e| {
                    let expression =
                        Expr::parse(&e.expression).map_err(|err| DesignError::BadExpression {
                            context: format!(
                                "extra item `{}` of template `{insight_type}`",
                                e.name
                            ),
                            position: err.position,
                            message: err.message,
                        })?;
                    Ok(ExtraItem {
                        name: e.name,
                        expression,
                        format: e.format,
                    })
                })
                .collect::<Result<Vec<_>, DesignError>>()?;
            templates.push(NarrativeTemplate::parse(
                &insight_type,
                &t.text,
                extra_items,
            )?);
        }
        Ok(Self { templates })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("templates serialize")
    }
}

impl Serialize for TemplateSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.templates.len()))?;
        for t in &self.templates {
            let raw = RawTemplate {
                text: t.text(),
                extra_items: t
                    .extra_items
                    .iter()
                    .map(|e| RawExtraItem {
                        name: e.name.clone(),
                        expression: e.expression.to_string(),
                        format: e.format,
                    })
                    .collect(),
            };
            map.serialize_entry(&t.insight_type, &raw)?;
        }
        map.end()
    }
}

/// Reads and validates a templates document.
pub fn parse_templates(path: impl AsRef<Path>) -> Result<TemplateSet, DesignError> {
    TemplateSet::from_json(&read_file(path.as_ref())?)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTemplate {
    text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    extra_items: Vec<RawExtraItem>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExtraItem {
    name: String,
    expression: String,
    #[serde(default)]
    format: ItemFormat,
}

/// Top-level object kept as an ordered entry list so duplicate keys survive
/// deserialization and can be reported.
struct RawDocument(Vec<(String, RawTemplate)>);

impl<'de> Deserialize<'de> for RawDocument {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct EntriesVisitor;

        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = RawDocument;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an object keyed by insight type")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<RawDocument, A::Error> {
                let mut entries = Vec::new();
                while let Some(entry) = map.next_entry()? {
                    entries.push(entry);
                }
                Ok(RawDocument(entries))
            }
        }

        d.deserialize_map(EntriesVisitor)
    }
}
