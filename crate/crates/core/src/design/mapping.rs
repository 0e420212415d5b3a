use std::collections::HashMap;

use super::expr::ThresholdExpr;
use super::feature_info::{FeatureInfoTable, Source};
use super::templates::{NarrativeTemplate, TemplateSet, SUPER_NAME};
use super::{DesignError, UnboundReason};
use crate::model_io::DatasetManifest;

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub original_feature: String,
    pub item: String,
    pub source: Source,
    /// Position in the feature vector; `None` for user-source features.
    pub index: Option<usize>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperFeature {
    pub name: String,
    pub ultra_feature: String,
    pub category: String,
    pub insight_type: String,
    pub members: Vec<Member>,
    pub threshold: Option<ThresholdExpr>,
    template: usize,
}

impl SuperFeature {
    pub fn model_members(&self) -> impl Iterator<Item = &Member> {
        self.members.iter().filter(|m| m.source == Source::Model)
    }

    pub fn member_for_item(&self, item: &str) -> Option<&Member> {
        self.members.iter().find(|m| m.item == item)
    }
}

/// Super-features in Feature Info File order, each linked to its template.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperFeatureMapping {
    supers: Vec<SuperFeature>,
    templates: TemplateSet,
}

impl SuperFeatureMapping {
    pub fn supers(&self) -> &[SuperFeature] {
        &self.supers
    }

    pub fn get(&self, name: &str) -> Option<&SuperFeature> {
        self.supers.iter().find(|s| s.name == name)
    }

    pub fn template(&self, s: &SuperFeature) -> &NarrativeTemplate {
        &self.templates.templates()[s.template]
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn len(&self) -> usize {
        self.supers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.supers.is_empty()
    }

    /// Overrides the insight weight of every member of `super_name`.
    pub fn set_weight(&mut self, super_name: &str, weight: f64) {
        for s in self.supers.iter_mut().filter(|s| s.name == super_name) {
            s.members.iter_mut().for_each(|m| m.weight = weight);
        }
    }
}

/// Groups Feature Info records into super-features and checks every template
/// slot, extra-item expression and threshold against the items each
/// super-feature actually binds. A mapping that passes cannot hit an unbound
/// placeholder at render time.
pub fn build_super_feature_mapping(
    info: &FeatureInfoTable,
    templates: &TemplateSet,
    manifest: &DatasetManifest,
) -> Result<SuperFeatureMapping, DesignError> {
    let mut supers: Vec<SuperFeature> = Vec::new();
    let mut by_name: HashMap<&str, usize> = HashMap::new();
    for r in info.records() {
        let index = match r.source {
            Source::Model => {
                Some(manifest.feature_index(&r.original_feature).ok_or_else(|| {
                    DesignError::UnknownModelFeature {
                        feature: r.original_feature.clone(),
                        line: r.line,
                    }
                })?)
            }
            Source::User => None,
        };
        let member = Member {
            original_feature: r.original_feature.clone(),
            item: r.insight_item.clone(),
            source: r.source,
            index,
            weight: r.insight_weight,
        };
        match by_name.get(r.super_feature.as_str()) {
            Some(&i) => {
                let s = &mut supers[i];
                if s.member_for_item(&member.item).is_some() {
                    return Err(DesignError::UnboundPlaceholder {
                        super_feature: s.name.clone(),
                        placeholder: member.item,
                        reason: UnboundReason::Ambiguous,
                    });
                }
                if s.threshold.is_none() {
                    s.threshold = r.insight_threshold.clone();
                }
                s.members.push(member);
            }
            None => {
                let template = templates.position(&r.insight_type).ok_or_else(|| {
                    DesignError::MissingTemplate {
                        insight_type: r.insight_type.clone(),
                        super_feature: r.super_feature.clone(),
                    }
                })?;
                by_name.insert(&r.super_feature, supers.len());
                supers.push(SuperFeature {
                    name: r.super_feature.clone(),
                    ultra_feature: r.ultra_feature.clone(),
                    category: r.category.clone(),
                    insight_type: r.insight_type.clone(),
                    members: vec![member],
                    threshold: r.insight_threshold.clone(),
                    template,
                });
            }
        }
    }

    for s in &supers {
        let template = &templates.templates()[s.template];
        let unbound = |name: &str| DesignError::UnboundPlaceholder {
            super_feature: s.name.clone(),
            placeholder: name.to_string(),
            reason: UnboundReason::Missing,
        };
        let is_item = |name: &str| s.member_for_item(name).is_some();
        for p in template.placeholders() {
            if p != SUPER_NAME && template.extra_item(p).is_none() && !is_item(p) {
                return Err(unbound(p));
            }
        }
        for extra in &template.extra_items {
            if let Some(id) = extra
                .expression
                .identifiers()
                .into_iter()
                .find(|id| !is_item(id))
            {
                return Err(unbound(id));
            }
        }
        if let Some(t) = &s.threshold {
            if let Some(id) = t
                .identifiers()
                .into_iter()
                .find(|id| !is_item(id) && template.extra_item(id).is_none())
            {
                return Err(unbound(id));
            }
        }
    }

    Ok(SuperFeatureMapping {
        supers,
        templates: templates.clone(),
    })
}
