use std::collections::BTreeMap;

use crate::design::{ItemFormat, NarrativeTemplate, Segment, SUPER_NAME};

/// A resolved insight item: model values and numeric user values are
/// numbers, anything else from the side file is text.
#[derive(Debug, Clone, PartialEq)]
pub enum ItemValue {
    Number(f64),
    Text(String),
}

impl ItemValue {
    /// Numeric view used by expressions and thresholds; text that does not
    /// parse as a number is NaN, which fails every comparison.
    pub fn as_f64(&self) -> f64 {
        match self {
            ItemValue::Number(v) => *v,
            ItemValue::Text(s) => s.trim().parse().unwrap_or(f64::NAN),
        }
    }
}

pub type ItemValues = BTreeMap<String, ItemValue>;

fn round1(v: f64) -> f64 {
    // f64::round is half-away-from-zero; the sum normalizes -0.0 to 0.0.
    (v * 10.0).round() / 10.0 + 0.0
}

fn trim_decimal(r: f64) -> String {
    if r.fract() == 0.0 {
        format!("{r:.0}")
    } else {
        format!("{r:.1}")
    }
}

/// Up to one decimal place, half away from zero, trailing `.0` dropped.
pub fn format_number(v: f64) -> String {
    if !v.is_finite() {
        return "n/a".to_string();
    }
    trim_decimal(round1(v))
}

/// ` (+X%)` for values that round to ≥ 0, ` (-X%)` below, nothing when the
/// value is not finite. The slot owns its leading space and parentheses.
pub fn format_signed_percent(v: f64) -> String {
    if !v.is_finite() {
        return String::new();
    }
    let r = round1(v);
    let sign = if r >= 0.0 { "+" } else { "" };
    format!(" ({sign}{}%)", trim_decimal(r))
}

pub(crate) fn capitalize_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

pub(crate) fn lowercase_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Imputes `template` for one super-feature.
///
/// # Panics
///
/// If a placeholder has no value. Link checking in
/// [`build_super_feature_mapping`](crate::design::build_super_feature_mapping)
/// rules this out for every mapping it returns.
pub fn render_narrative(
    template: &NarrativeTemplate,
    super_name: &str,
    items: &ItemValues,
) -> String {
    let mut out = String::new();
    for seg in &template.segments {
        match seg {
            Segment::Literal(l) => out.push_str(l),
            Segment::Placeholder(p) if p == SUPER_NAME => out.push_str(super_name),
            Segment::Placeholder(p) => {
                let value = items.get(p).unwrap_or_else(|| {
                    panic!(
                        "placeholder `{p}` of template `{}` is unbound",
                        template.insight_type
                    )
                });
                let format = template.extra_item(p).map(|e| e.format).unwrap_or_default();
                match (value, format) {
                    (ItemValue::Text(s), _) => out.push_str(s),
                    (ItemValue::Number(v), ItemFormat::Number) => out.push_str(&format_number(*v)),
                    (ItemValue::Number(v), ItemFormat::SignedPercent) => {
                        out.push_str(&format_signed_percent(*v))
                    }
                }
            }
        }
    }
    capitalize_first(&out)
}
