//! Narrative generation: per-super-feature values, ranking and
//! deduplication, template imputation, threshold filtering, paragraph
//! concatenation and the headline sentence.

mod render;

pub use render::{format_number, format_signed_percent, render_narrative, ItemValue, ItemValues};

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{
    InsightsDesign, ItemFormat, Source, SuperFeature, SuperFeatureMapping, UserValue, UserValues,
};
use crate::interpreter::AttributionList;
use crate::model_io::{BundleError, DatasetBundle, Sample};
use render::lowercase_first;

#[derive(Debug, Error)]
pub enum NarrativeError {
    #[error(
        "sample `{sample_id}`: no user value for `{feature}` (super-feature `{super_feature}`)"
    )]
    MissingUserValue {
        sample_id: String,
        super_feature: String,
        feature: String,
    },
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error("invalid engine config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Narrative {
    pub text: String,
    pub importance: f64,
    #[serde(rename = "super")]
    pub super_feature: String,
    #[serde(rename = "ultra")]
    pub ultra_feature: String,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paragraph {
    pub category: String,
    pub text: String,
    pub importance: f64,
    pub member_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub sample_id: String,
    pub headline: String,
    pub narratives: Vec<Narrative>,
    pub paragraphs: Vec<Paragraph>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tier {
    pub min_percentile: f64,
    pub phrase: String,
}

/// Wording of the opening sentence. The tier table is a configurable
/// stand-in: only the top tier's phrasing has a worked example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadlineConfig {
    pub subject: String,
    pub outcome: String,
    pub population: String,
    /// Checked in order; the first tier whose minimum is met applies.
    pub tiers: Vec<Tier>,
}

impl Default for HeadlineConfig {
    fn default() -> Self {
        let tier = |min_percentile: f64, phrase: &str| Tier {
            min_percentile,
            phrase: phrase.to_string(),
        };
        Self {
            subject: "account".into(),
            outcome: "upsell".into(),
            population: "accounts".into(),
            tiers: vec![
                tier(98.0, "extremely likely"),
                tier(90.0, "very likely"),
                tier(70.0, "likely"),
            ],
        }
    }
}

impl HeadlineConfig {
    pub fn render(&self, percentile: f64, has_narratives: bool) -> String {
        let p = percentile.floor().clamp(0.0, 100.0);
        let Self {
            subject,
            outcome,
            population,
            ..
        } = self;
        let comparison = format!("likelihood is larger than {p:.0}% of all {population}");
        let mut out = match self.tiers.iter().find(|t| percentile >= t.min_percentile) {
            Some(t) => format!(
                "This {subject} is {} to {outcome}. Its {outcome} {comparison}",
                t.phrase
            ),
            None => format!("This {subject}'s {outcome} {comparison}"),
        };
        out.push_str(if has_narratives {
            ", which is driven by:"
        } else {
            "."
        });
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub dedup_k: usize,
    pub max_narratives: usize,
    pub concatenate: bool,
    pub conjunctions: Vec<String>,
    pub headline: HeadlineConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            dedup_k: 1,
            max_narratives: 5,
            concatenate: false,
            conjunctions: vec!["and".into(), "moreover".into(), "what's more".into()],
            headline: HeadlineConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), NarrativeError> {
        let bad = |m: &str| Err(NarrativeError::InvalidConfig(m.to_string()));
        if self.dedup_k == 0 {
            return bad("dedup_k must be at least 1");
        }
        if self.max_narratives == 0 {
            return bad("max_narratives must be at least 1");
        }
        if self.conjunctions.is_empty() {
            return bad("conjunctions must not be empty");
        }
        Ok(())
    }
}

/// A super-feature with its narrative importance score.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedSuper {
    /// Position in [`SuperFeatureMapping::supers`] (Feature Info File order).
    pub index: usize,
    pub name: String,
    pub importance: f64,
}

fn user_item(v: &UserValue) -> ItemValue {
    match v {
        UserValue::Number(n) => ItemValue::Number(*n),
        UserValue::Text(s) => ItemValue::Text(s.clone()),
    }
}

fn collect_one(
    mapping: &SuperFeatureMapping,
    s: &SuperFeature,
    sample: &Sample,
    user_values: &UserValues,
) -> Result<ItemValues, NarrativeError> {
    let mut items = ItemValues::new();
    for m in &s.members {
        let value = match (m.source, m.index) {
            (Source::Model, Some(i)) => ItemValue::Number(sample.features[i]),
            _ => user_values
                .get(&sample.sample_id, &m.original_feature)
                .map(user_item)
                .ok_or_else(|| NarrativeError::MissingUserValue {
                    sample_id: sample.sample_id.clone(),
                    super_feature: s.name.clone(),
                    feature: m.original_feature.clone(),
                })?,
        };
        items.insert(m.item.clone(), value);
    }
    let template = mapping.template(s);
    let mut extras = Vec::with_capacity(template.extra_items.len());
    for extra in &template.extra_items {
        let ids = extra.expression.identifiers();
        let lookup = |id: &str| items.get(id).map(ItemValue::as_f64);
        // A percent change between two zeros is "no change", not 0/0.
        let all_zero = !ids.is_empty() && ids.iter().all(|id| lookup(id) == Some(0.0));
        let v = if extra.format == ItemFormat::SignedPercent && all_zero {
            0.0
        } else {
            extra.expression.eval(&lookup).unwrap_or(f64::NAN)
        };
        extras.push((extra.name.clone(), ItemValue::Number(v)));
    }
    items.extend(extras);
    Ok(items)
}

/// Item values (insight items plus evaluated extra items) for every
/// super-feature, in mapping order.
pub fn collect_super_values(
    mapping: &SuperFeatureMapping,
    sample: &Sample,
    user_values: &UserValues,
) -> Vec<Result<ItemValues, NarrativeError>> {
    mapping
        .supers()
        .iter()
        .map(|s| collect_one(mapping, s, sample, user_values))
        .collect()
}

/// Narrative importance of every super-feature that has at least one
/// attributed model feature, sorted descending (ties: file order).
/// Negative scores are dropped: narrative importances are non-negative.
fn score_supers(mapping: &SuperFeatureMapping, attribution: &AttributionList) -> Vec<RankedSuper> {
    let key = attribution.ranking_key;
    let mut out: Vec<RankedSuper> = mapping
        .supers()
        .iter()
        .enumerate()
        .filter_map(|(index, s)| {
            let best = s
                .model_members()
                .filter_map(|m| {
                    let imp = attribution.importance_of(m.index?)?;
                    Some(key.key(imp) * m.weight)
                })
                .fold(None, |acc: Option<f64>, v| {
                    Some(acc.map_or(v, |a| a.max(v)))
                })?;
            (best >= 0.0).then(|| RankedSuper {
                index,
                name: s.name.clone(),
                importance: best,
            })
        })
        .collect();
    out.sort_by(|a, b| {
        b.importance
            .total_cmp(&a.importance)
            .then(a.index.cmp(&b.index))
    });
    out
}

fn dedup(mapping: &SuperFeatureMapping, ranked: Vec<RankedSuper>, k: usize) -> Vec<RankedSuper> {
    let mut seen: std::collections::HashMap<&str, usize> = Default::default();
    ranked
        .into_iter()
        .filter(|r| {
            let count = seen
                .entry(&mapping.supers()[r.index].ultra_feature)
                .or_insert(0);
            *count += 1;
            *count <= k
        })
        .collect()
}

/// Ranks super-features by narrative importance, keeps the top `dedup_k`
/// per ultra-feature and truncates to `max_narratives`.
pub fn rank_super_features(
    mapping: &SuperFeatureMapping,
    attribution: &AttributionList,
    cfg: &EngineConfig,
) -> Vec<RankedSuper> {
    let mut out = dedup(mapping, score_supers(mapping, attribution), cfg.dedup_k);
    out.truncate(cfg.max_narratives);
    out
}

/// True when `s` has no threshold or its threshold holds for `items`.
pub fn passes_threshold(s: &SuperFeature, items: &ItemValues) -> bool {
    match &s.threshold {
        None => true,
        Some(t) => t.eval(&|id: &str| items.get(id).map(ItemValue::as_f64)),
    }
}

/// Removes ranked entries whose threshold fails. `values` is indexed like
/// the mapping; entries whose values could not be collected are kept (they
/// are reported elsewhere).
pub fn apply_thresholds(
    ranked: Vec<RankedSuper>,
    values: &[Result<ItemValues, NarrativeError>],
    mapping: &SuperFeatureMapping,
) -> Vec<RankedSuper> {
    ranked
        .into_iter()
        .filter(|r| match &values[r.index] {
            Ok(items) => passes_threshold(&mapping.supers()[r.index], items),
            Err(_) => true,
        })
        .collect()
}

fn with_period(text: &str) -> String {
    let t = text.trim_end();
    if t.ends_with('.') {
        t.to_string()
    } else {
        format!("{t}.")
    }
}

/// Groups narratives by category into paragraphs, ordered by paragraph
/// importance (the members' maximum), ties by first appearance.
pub fn concatenate(narratives: &[Narrative], cfg: &EngineConfig) -> Vec<Paragraph> {
    let mut groups: Vec<(String, Vec<&Narrative>)> = Vec::new();
    for n in narratives {
        match groups.iter_mut().find(|(c, _)| *c == n.category) {
            Some((_, members)) => members.push(n),
            None => groups.push((n.category.clone(), vec![n])),
        }
    }
    let mut paragraphs: Vec<Paragraph> = groups
        .into_iter()
        .map(|(category, mut members)| {
            members.sort_by(|a, b| b.importance.total_cmp(&a.importance));
            let importance = members
                .iter()
                .map(|n| n.importance)
                .fold(f64::NEG_INFINITY, f64::max);
            let text = if members.len() == 1 {
                members[0].text.clone()
            } else {
                let mut text = String::new();
                for (i, n) in members.iter().enumerate() {
                    let sentence = with_period(&n.text);
                    if i == 0 {
                        text.push_str(&sentence);
                    } else {
                        text.pop();
                        let conj = &cfg.conjunctions[(i - 1) % cfg.conjunctions.len()];
                        text.push_str(&format!(", {conj} {}", lowercase_first(&sentence)));
                    }
                }
                text
            };
            Paragraph {
                category,
                text,
                importance,
                member_count: members.len(),
            }
        })
        .collect();
    paragraphs.sort_by(|a, b| b.importance.total_cmp(&a.importance));
    paragraphs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SampleStats {
    pub dropped_by_threshold: usize,
    pub missing_user_values: usize,
}

/// Runs ranking, deduplication, threshold filtering, truncation, imputation
/// and (optionally) concatenation for one sample.
pub fn generate_for_sample(
    bundle: &DatasetBundle,
    sample_id: &str,
    attribution: &AttributionList,
    design: &InsightsDesign,
    cfg: &EngineConfig,
) -> Result<(ExplanationRecord, SampleStats), NarrativeError> {
    let sample = bundle.sample(sample_id)?;
    let percentile = bundle.score_percentile(sample_id)?;
    let mapping = &design.mapping;
    let values = collect_super_values(mapping, sample, &design.user_values);

    let mut stats = SampleStats::default();
    let mut warnings = Vec::new();
    let mut narratives = Vec::new();
    let mut reported = HashSet::new();
    for r in dedup(mapping, score_supers(mapping, attribution), cfg.dedup_k) {
        if narratives.len() == cfg.max_narratives {
            break;
        }
        let s = &mapping.supers()[r.index];
        let items = match &values[r.index] {
            Ok(items) => items,
            Err(e) => {
                stats.missing_user_values += 1;
                if reported.insert(r.index) {
                    warnings.push(e.to_string());
                }
                continue;
            }
        };
        if !passes_threshold(s, items) {
            stats.dropped_by_threshold += 1;
            continue;
        }
        narratives.push(Narrative {
            text: render_narrative(mapping.template(s), &s.name, items),
            importance: r.importance,
            super_feature: s.name.clone(),
            ultra_feature: s.ultra_feature.clone(),
            category: s.category.clone(),
        });
    }
    let paragraphs = if cfg.concatenate {
        concatenate(&narratives, cfg)
    } else {
        Vec::new()
    };
    let record = ExplanationRecord {
        sample_id: sample_id.to_string(),
        headline: cfg.headline.render(percentile, !narratives.is_empty()),
        narratives,
        paragraphs,
        warnings,
    };
    Ok((record, stats))
}
