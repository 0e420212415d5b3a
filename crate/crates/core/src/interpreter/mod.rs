//! Sample-level feature attribution behind one input/output shape: every
//! method takes a bundle (plus a scoring channel where the model must be
//! queried) and returns an [`AttributionList`] per explained sample.

mod exact_shap;
mod kernel_shap;
mod klime;
mod lime;

pub use exact_shap::{exact_shap_explain, MAX_EXACT_FEATURES};
pub use kernel_shap::kernel_shap_explain;
pub use klime::{klime_explain, ClusterFit, KLimeResult};
pub use lime::lime_explain;

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::model_io::{BundleError, ChannelError, DatasetBundle};

#[derive(Debug, Error)]
pub enum InterpretError {
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error("need at least {needed} samples, bundle has {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("exact Shapley values support at most {max} features, got {found}")]
    TooManyFeatures { max: usize, found: usize },
    #[error("background row {row} has {found} values, expected {expected}")]
    BadBackground {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("k-means left cluster {cluster} empty after {attempts} seedings")]
    EmptyCluster { cluster: usize, attempts: usize },
    #[error("{what} fit is singular even with ridge {lambda}")]
    SingularFit { what: String, lambda: f64 },
    #[error("invalid interpreter configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lime,
    KernelShap,
    ExactShap,
    Klime,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Lime => "lime",
            Method::KernelShap => "kernel_shap",
            Method::ExactShap => "exact_shap",
            Method::Klime => "klime",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lime" => Ok(Method::Lime),
            "kernel_shap" => Ok(Method::KernelShap),
            "exact_shap" => Ok(Method::ExactShap),
            "klime" => Ok(Method::Klime),
            _ => Err(format!(
                "unknown method `{s}` (expected lime, kernel_shap, exact_shap or klime)"
            )),
        }
    }
}

/// How attribution entries are ordered (and how narratives rank them).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankingKey {
    #[default]
    Signed,
    Absolute,
}

impl RankingKey {
    pub fn key(self, importance: f64) -> f64 {
        match self {
            RankingKey::Signed => importance,
            RankingKey::Absolute => importance.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub feature_index: usize,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionList {
    pub sample_id: String,
    pub entries: Vec<Attribution>,
    pub method: Method,
    pub baseline: f64,
    #[serde(default)]
    pub ranking_key: RankingKey,
    /// Set when the model output did not vary and all importances are zero.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<usize>,
}

impl AttributionList {
    /// Builds a list from dense per-feature importances, sorted by `key`
    /// (descending, ties by ascending feature index).
    pub fn from_dense(
        sample_id: impl Into<String>,
        importances: &[f64],
        method: Method,
        baseline: f64,
        key: RankingKey,
    ) -> Self {
        let mut entries: Vec<Attribution> = importances
            .iter()
            .enumerate()
            .map(|(feature_index, &importance)| Attribution {
                feature_index,
                importance,
            })
            .collect();
        sort_entries(&mut entries, key);
        Self {
            sample_id: sample_id.into(),
            entries,
            method,
            baseline,
            ranking_key: key,
            degenerate: false,
            cluster: None,
        }
    }

    /// Importance of `feature_index`, if listed.
    pub fn importance_of(&self, feature_index: usize) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.feature_index == feature_index)
            .map(|e| e.importance)
    }

    /// Importances scattered back to feature order; unlisted features are 0.
    pub fn dense(&self, n_features: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_features];
        for e in &self.entries {
            if e.feature_index < n_features {
                out[e.feature_index] = e.importance;
            }
        }
        out
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.importance).sum()
    }
}

pub(crate) fn sort_entries(entries: &mut [Attribution], key: RankingKey) {
    entries.sort_by(|a, b| {
        key.key(b.importance)
            .total_cmp(&key.key(a.importance))
            .then(a.feature_index.cmp(&b.feature_index))
    });
}

/// Keeps the first `k` entries.
pub fn top_features(attr: &AttributionList, k: usize) -> AttributionList {
    let mut out = attr.clone();
    out.entries.truncate(k);
    out
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    /// One row holding the per-feature dataset means.
    #[default]
    DatasetMeans,
    Rows(Vec<Vec<f64>>),
}

/// Proximity-kernel width for the local surrogate; `auto` is `0.75·√d`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum KernelWidth {
    #[default]
    Auto,
    Fixed(f64),
}

impl KernelWidth {
    pub fn resolve(self, n_features: usize) -> f64 {
        match self {
            KernelWidth::Auto => 0.75 * (n_features as f64).sqrt(),
            KernelWidth::Fixed(w) => w,
        }
    }
}

impl Serialize for KernelWidth {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            KernelWidth::Auto => s.serialize_str("auto"),
            KernelWidth::Fixed(w) => s.serialize_f64(*w),
        }
    }
}

impl<'de> Deserialize<'de> for KernelWidth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(w) => Ok(KernelWidth::Fixed(w)),
            Raw::Text(t) if t == "auto" => Ok(KernelWidth::Auto),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "kernel_width must be a number or \"auto\", got {t:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpreterConfig {
    pub n_perturbations: usize,
    pub kernel_width: KernelWidth,
    pub background: Background,
    pub top_k_features: usize,
    pub ridge_lambda: f64,
    pub rng_seed: u64,
    pub ranking_key: RankingKey,
}

impl Default for InterpreterConfig {
    fn default() -> Self {
        Self {
            n_perturbations: 5000,
            kernel_width: KernelWidth::Auto,
            background: Background::DatasetMeans,
            top_k_features: 10,
            ridge_lambda: 1e-3,
            rng_seed: 0,
            ranking_key: RankingKey::Signed,
        }
    }
}

impl InterpreterConfig {
    pub fn validate(&self) -> Result<(), InterpretError> {
        let bad = |m: &str| Err(InterpretError::InvalidConfig(m.to_string()));
        if self.n_perturbations == 0 {
            return bad("n_perturbations must be positive");
        }
        if self.top_k_features == 0 {
            return bad("top_k_features must be positive");
        }
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return bad("ridge_lambda must be a finite non-negative number");
        }
        if let KernelWidth::Fixed(w) = self.kernel_width {
            if !(w > 0.0 && w.is_finite()) {
                return bad("kernel_width must be positive");
            }
        }
        Ok(())
    }
}

/// Materializes the background rows for Shapley-style masking.
pub(crate) fn resolve_background(
    bundle: &DatasetBundle,
    background: &Background,
) -> Result<Vec<Vec<f64>>, InterpretError> {
    let d = bundle.n_features();
    match background {
        Background::DatasetMeans => {
            if bundle.is_empty() {
                return Err(InterpretError::TooFewSamples {
                    needed: 1,
                    found: 0,
                });
            }
            Ok(vec![bundle.feature_means()])
        }
        Background::Rows(rows) => {
            if rows.is_empty() {
                return Err(InterpretError::InvalidConfig(
                    "explicit background needs at least one row".into(),
                ));
            }
            if let Some((row, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
                return Err(InterpretError::BadBackground {
                    row,
                    expected: d,
                    found: r.len(),
                });
            }
            Ok(rows.clone())
        }
    }
}

/// All entries equal (exactly) to the first one.
pub(crate) fn is_constant(values: &[f64]) -> bool {
    values
        .split_first()
        .is_none_or(|(first, rest)| rest.iter().all(|v| v.total_cmp(first) == Ordering::Equal))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn account_a() -> AttributionList {
        // paid_job_s4, job_view_s4, hire_cntr_s3, conn_cmp_s4
        AttributionList::from_dense(
            "A",
            &[0.013, 0.009, 0.030, 0.011],
            Method::Lime,
            0.0,
            RankingKey::Signed,
        )
    }

    #[test]
    fn entries_sorted_descending_with_index_ties() {
        let a = AttributionList::from_dense(
            "s",
            &[0.1, 0.3, 0.3, -0.5],
            Method::Lime,
            0.0,
            RankingKey::Signed,
        );
        let order: Vec<usize> = a.entries.iter().map(|e| e.feature_index).collect();
        assert_eq!(order, vec![1, 2, 0, 3]);
        let a = AttributionList::from_dense(
            "s",
            &[0.1, 0.3, 0.3, -0.5],
            Method::Lime,
            0.0,
            RankingKey::Absolute,
        );
        let order: Vec<usize> = a.entries.iter().map(|e| e.feature_index).collect();
        assert_eq!(order, vec![3, 1, 2, 0]);
    }

    #[test]
    fn top_features_truncates() {
        let t = top_features(&account_a(), 2);
        let got: Vec<(usize, f64)> = t
            .entries
            .iter()
            .map(|e| (e.feature_index, e.importance))
            .collect();
        assert_eq!(got, vec![(2, 0.030), (0, 0.013)]);
        assert_eq!(top_features(&account_a(), 10), account_a());
    }

    #[test]
    fn top_one_of_ranking_example() {
        // job_qty, job_dprice_usd, job_view_s3, job_view_s4, job_viewer_s3, job_viewer_s4
        let a = AttributionList::from_dense(
            "A",
            &[0.3, 0.4, 0.2, 0.6, 0.3, 0.2],
            Method::Lime,
            0.0,
            RankingKey::Signed,
        );
        let t = top_features(&a, 1);
        assert_eq!(
            t.entries,
            vec![Attribution {
                feature_index: 3,
                importance: 0.6
            }]
        );
    }

    #[test]
    fn kernel_width_serde() {
        #[derive(Deserialize)]
        struct W {
            w: KernelWidth,
        }
        let a: W = toml::from_str("w = \"auto\"").unwrap();
        assert_eq!(a.w, KernelWidth::Auto);
        let b: W = toml::from_str("w = 1.5").unwrap();
        assert_eq!(b.w, KernelWidth::Fixed(1.5));
        assert!(toml::from_str::<W>("w = \"wide\"").is_err());
        assert!((KernelWidth::Auto.resolve(4) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(InterpreterConfig::default().validate().is_ok());
        let cfg = InterpreterConfig {
            n_perturbations: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
