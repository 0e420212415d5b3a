use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::expr::{parse_threshold, ThresholdExpr};
use super::{read_file, DesignError};
use crate::model_io::DatasetManifest;

pub const COL_ORIGINAL: &str = "Original-Feature";
pub const COL_SUPER: &str = "Super-Feature";
pub const COL_ULTRA: &str = "Ultra-Feature";
pub const COL_CATEGORY: &str = "Category";
pub const COL_TYPE: &str = "Insight Type";
pub const COL_ITEM: &str = "Insight Item";
pub const COL_THRESHOLD: &str = "Insight Threshold";
pub const COL_WEIGHT: &str = "Insight Weight";
pub const COL_SOURCE: &str = "Source";

const REQUIRED: [&str; 6] = [
    COL_ORIGINAL,
    COL_SUPER,
    COL_ULTRA,
    COL_CATEGORY,
    COL_TYPE,
    COL_ITEM,
];
const OPTIONAL: [&str; 3] = [COL_THRESHOLD, COL_WEIGHT, COL_SOURCE];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    #[default]
    Model,
    User,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Model => "model",
            Source::User => "user",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureInfoRecord {
    pub original_feature: String,
    pub super_feature: String,
    pub ultra_feature: String,
    pub category: String,
    pub insight_type: String,
    pub insight_item: String,
    pub insight_threshold: Option<ThresholdExpr>,
    pub insight_weight: f64,
    pub source: Source,
    /// 1-based line in the source file (0 when built in memory).
    pub line: usize,
}

/// Validated Feature Info File, records in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureInfoTable {
    records: Vec<FeatureInfoRecord>,
}

impl FeatureInfoTable {
    /// Validates records against each other and against the bundle manifest.
    pub fn new(
        records: Vec<FeatureInfoRecord>,
        manifest: &DatasetManifest,
    ) -> Result<Self, DesignError> {
        let mut seen = HashSet::new();
        let mut supers: HashMap<&str, &FeatureInfoRecord> = HashMap::new();
        for r in &records {
            if !seen.insert(r.original_feature.as_str()) {
                return Err(DesignError::DuplicateOriginalFeature {
                    feature: r.original_feature.clone(),
                    line: r.line,
                });
            }
            if !(0.0..=1.0).contains(&r.insight_weight) {
                return Err(DesignError::WeightOutOfRange {
                    feature: r.original_feature.clone(),
                    weight: r.insight_weight,
                    line: r.line,
                });
            }
            if r.source == Source::Model && manifest.feature_index(&r.original_feature).is_none() {
                return Err(DesignError::UnknownModelFeature {
                    feature: r.original_feature.clone(),
                    line: r.line,
                });
            }
            match supers.get(r.super_feature.as_str()) {
                None => {
                    supers.insert(&r.super_feature, r);
                }
                Some(first) => {
                    let mismatch = if first.insight_type != r.insight_type {
                        Some(COL_TYPE)
                    } else if first.ultra_feature != r.ultra_feature {
                        Some(COL_ULTRA)
                    } else if first.category != r.category {
                        Some(COL_CATEGORY)
                    } else {
                        None
                    };
                    if let Some(field) = mismatch {
                        return Err(DesignError::InconsistentSuperFeature {
                            super_feature: r.super_feature.clone(),
                            field: field.into(),
                            line: r.line,
                        });
                    }
                }
            }
        }
        // Thresholds: blank cells defer to the group; non-blank ones must agree.
        let mut thresholds: HashMap<&str, &ThresholdExpr> = HashMap::new();
        for r in &records {
            if let Some(t) = &r.insight_threshold {
                match thresholds.get(r.super_feature.as_str()) {
                    Some(prev) if *prev != t => {
                        return Err(DesignError::InconsistentSuperFeature {
                            super_feature: r.super_feature.clone(),
                            field: COL_THRESHOLD.into(),
                            line: r.line,
                        })
                    }
                    _ => {
                        thresholds.insert(&r.super_feature, t);
                    }
                }
            }
        }
        let paired: HashSet<&str> = records
            .iter()
            .filter(|r| r.source == Source::Model)
            .map(|r| r.super_feature.as_str())
            .collect();
        if let Some(r) = records
            .iter()
            .find(|r| !paired.contains(r.super_feature.as_str()))
        {
            return Err(DesignError::UnpairedUserFeature {
                super_feature: r.super_feature.clone(),
            });
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[FeatureInfoRecord] {
        &self.records
    }

    pub fn from_csv(text: &str, manifest: &DatasetManifest) -> Result<Self, DesignError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| DesignError::Csv {
                line: 1,
                message: e.to_string(),
            })?
            .clone();
        let mut columns: HashMap<&str, usize> = HashMap::new();
        for (i, h) in headers.iter().enumerate() {
            if !REQUIRED.contains(&h) && !OPTIONAL.contains(&h) {
                return Err(DesignError::BadHeader(format!("unknown column `{h}`")));
            }
            if columns.insert(h, i).is_some() {
                return Err(DesignError::BadHeader(format!("duplicate column `{h}`")));
            }
        }
        if let Some(missing) = REQUIRED.iter().find(|c| !columns.contains_key(*c)) {
            return Err(DesignError::BadHeader(format!(
                "missing column `{missing}`"
            )));
        }

        let mut records = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| DesignError::Csv {
                line: e.position().map_or(0, |p| p.line() as usize),
                message: e.to_string(),
            })?;
            let line = row.position().map_or(0, |p| p.line() as usize);
            let cell = |col: &str| columns.get(col).and_then(|&i| row.get(i)).unwrap_or("");
            let required = |col: &str| {
                let v = cell(col);
                if v.is_empty() {
                    Err(DesignError::MissingValue {
                        column: col.into(),
                        line,
                    })
                } else {
                    Ok(v.to_string())
                }
            };
            let original_feature = required(COL_ORIGINAL)?;
            let super_feature = required(COL_SUPER)?;
            let insight_type = required(COL_TYPE)?;
            let insight_item = required(COL_ITEM)?;
            let or_super = |v: &str| {
                if v.is_empty() {
                    super_feature.clone()
                } else {
                    v.to_string()
                }
            };
            let ultra_feature = or_super(cell(COL_ULTRA));
            let category = or_super(cell(COL_CATEGORY));
            let insight_threshold = match cell(COL_THRESHOLD) {
                "" => None,
                t => Some(parse_threshold(t).map_err(|e| DesignError::BadExpression {
                    context: format!("threshold of `{original_feature}` (line {line})"),
                    position: e.position,
                    message: e.message,
                })?),
            };
            let insight_weight = match cell(COL_WEIGHT) {
                "" => 1.0,
                w => w.parse::<f64>().map_err(|_| DesignError::InvalidValue {
                    column: COL_WEIGHT.into(),
                    value: w.into(),
                    line,
                })?,
            };
            let source = match cell(COL_SOURCE) {
                "" | "model" => Source::Model,
                "user" => Source::User,
                s => {
                    return Err(DesignError::InvalidValue {
                        column: COL_SOURCE.into(),
                        value: s.into(),
                        line,
                    })
                }
            };
            records.push(FeatureInfoRecord {
                original_feature,
                super_feature,
                ultra_feature,
                category,
                insight_type,
                insight_item,
                insight_threshold,
                insight_weight,
                source,
                line,
            });
        }
        Self::new(records, manifest)
    }

    /// Writes all nine columns. Line numbers are not part of the output.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(REQUIRED.iter().chain(OPTIONAL.iter()))
            .expect("in-memory write");
        for r in &self.records {
            let threshold = r
                .insight_threshold
                .as_ref()
                .map(ToString::to_string)
                .unwrap_or_default();
            w.write_record([
                r.original_feature.as_str(),
                &r.super_feature,
                &r.ultra_feature,
                &r.category,
                &r.insight_type,
                &r.insight_item,
                &threshold,
                &r.insight_weight.to_string(),
                &r.source.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }
}

/// Reads and validates a Feature Info File.
pub fn parse_feature_info(
    path: impl AsRef<Path>,
    manifest: &DatasetManifest,
) -> Result<FeatureInfoTable, DesignError> {
    FeatureInfoTable::from_csv(&read_file(path.as_ref())?, manifest)
}
