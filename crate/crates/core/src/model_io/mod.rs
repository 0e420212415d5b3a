//! Standardized model output: a manifest document plus a line-delimited
//! samples file, and the scoring channels interpreters use to query a model.
//!
//! Manifest (JSON):
//!
//! ```text
//! {"feature_names":["a","b"],"sample_count":1,"samples_path":"samples.jsonl","score_range":[0,1]}
//! ```
//!
//! Samples file, one record per line:
//!
//! ```text
//! {"sample_id":"A","features":[10,15],"score":0.85}
//! ```

mod channel;
mod external;

pub use channel::{
    score_batch, ChannelError, ChannelKind, ConstantModel, DepthTwoTree, FnModel, LinearModel,
    ScoringChannel, Stump, StumpEnsemble, SyntheticModel,
};
pub use external::{ExternalChannel, HANDSHAKE_LINE};

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("schema violation at {file}:{line} field `{field}`: {message}")]
    SchemaViolation {
        file: String,
        line: usize,
        field: String,
        message: String,
    },
    #[error("duplicate sample id `{id}` at line {line}")]
    DuplicateSampleId { id: String, line: usize },
    #[error("line {line}: feature vector has {found} values, manifest declares {expected}")]
    LengthMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("unknown sample id `{0}`")]
    UnknownSampleId(String),
    #[error("bundle has no samples")]
    EmptyBundle,
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Manifest document describing a bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub feature_names: Vec<String>,
    pub sample_count: usize,
    pub samples_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_range: Option<(f64, f64)>,
}

impl DatasetManifest {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: String,
    pub features: Vec<f64>,
    pub score: f64,
}

/// A loaded, validated bundle. Immutable after load.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    manifest: DatasetManifest,
    samples: Vec<Sample>,
    index: HashMap<String, usize>,
}

impl PartialEq for DatasetBundle {
    fn eq(&self, other: &Self) -> bool {
        self.manifest == other.manifest && self.samples == other.samples
    }
}

impl DatasetBundle {
    /// Builds a bundle from in-memory parts, applying the same validation as
    /// [`load_bundle`]. `samples_path` in the manifest is kept as given.
    pub fn new(manifest: DatasetManifest, samples: Vec<Sample>) -> Result<Self, BundleError> {
        validate_feature_names(&manifest, "<manifest>")?;
        let mut index = HashMap::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            check_sample(&manifest, s, i + 1, "<samples>")?;
            if index.insert(s.sample_id.clone(), i).is_some() {
                return Err(BundleError::DuplicateSampleId {
                    id: s.sample_id.clone(),
                    line: i + 1,
                });
            }
        }
        if manifest.sample_count != samples.len() {
            return Err(BundleError::SchemaViolation {
                file: "<manifest>".into(),
                line: 1,
                field: "sample_count".into(),
                message: format!(
                    "declares {} samples, found {}",
                    manifest.sample_count,
                    samples.len()
                ),
            });
        }
        Ok(Self {
            manifest,
            samples,
            index,
        })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn feature_names(&self) -> &[String] {
        &self.manifest.feature_names
    }

    pub fn n_features(&self) -> usize {
        self.manifest.feature_names.len()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample(&self, sample_id: &str) -> Result<&Sample, BundleError> {
        self.index
            .get(sample_id)
            .map(|&i| &self.samples[i])
            .ok_or_else(|| BundleError::UnknownSampleId(sample_id.to_string()))
    }

    pub fn position(&self, sample_id: &str) -> Option<usize> {
        self.index.get(sample_id).copied()
    }

    /// Per-feature arithmetic mean over all samples.
    pub fn feature_means(&self) -> Vec<f64> {
        let d = self.n_features();
        let mut means = vec![0.0; d];
        if self.samples.is_empty() {
            return means;
        }
        for s in &self.samples {
            for (m, v) in means.iter_mut().zip(&s.features) {
                *m += v;
            }
        }
        let n = self.samples.len() as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    /// Per-feature sample standard deviation (n - 1 denominator). Zero for
    /// bundles with fewer than two samples.
    pub fn feature_stds(&self) -> Vec<f64> {
        let d = self.n_features();
        let n = self.samples.len();
        if n < 2 {
            return vec![0.0; d];
        }
        let means = self.feature_means();
        let mut acc = vec![0.0; d];
        for s in &self.samples {
            for ((a, v), m) in acc.iter_mut().zip(&s.features).zip(&means) {
                *a += (v - m) * (v - m);
            }
        }
        acc.into_iter()
            .map(|a| (a / (n as f64 - 1.0)).sqrt())
            .collect()
    }

    /// Percentile rank of a sample's stored score: the share of *other*
    /// samples with a strictly lower score, in percent. A singleton bundle
    /// ranks at 100.
    pub fn score_percentile(&self, sample_id: &str) -> Result<f64, BundleError> {
        if self.samples.is_empty() {
            return Err(BundleError::EmptyBundle);
        }
        let target = self.sample(sample_id)?.score;
        let n = self.samples.len();
        if n == 1 {
            return Ok(100.0);
        }
        let lower = self.samples.iter().filter(|s| s.score < target).count();
        Ok(100.0 * lower as f64 / (n - 1) as f64)
    }
}

/// Loads and validates a bundle. `samples_path` is resolved relative to the
/// manifest's directory.
pub fn load_bundle(manifest_path: impl AsRef<Path>) -> Result<DatasetBundle, BundleError> {
    let manifest_path = manifest_path.as_ref();
    let manifest_file = manifest_path.display().to_string();
    let text = read_existing(manifest_path)?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| BundleError::SchemaViolation {
            file: manifest_file.clone(),
            line: e.line(),
            field: manifest_field_hint(&text, &e),
            message: e.to_string(),
        })?;
    validate_feature_names(&manifest, &manifest_file)?;
    if let Some((lo, hi)) = manifest.score_range {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(BundleError::SchemaViolation {
                file: manifest_file,
                line: 1,
                field: "score_range".into(),
                message: format!("invalid range [{lo}, {hi}]"),
            });
        }
    }

    let samples_path = resolve_relative(manifest_path, &manifest.samples_path);
    let samples_file = samples_path.display().to_string();
    if !samples_path.is_file() {
        return Err(BundleError::MissingFile(samples_path));
    }
    let reader =
        BufReader::new(
            fs::File::open(&samples_path).map_err(|source| BundleError::Io {
                path: samples_path.clone(),
                source,
            })?,
        );

    let mut samples = Vec::with_capacity(manifest.sample_count);
    let mut index = HashMap::with_capacity(manifest.sample_count);
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| BundleError::Io {
            path: samples_path.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = parse_sample_line(&line, line_no, &manifest, &samples_file)?;
        if index
            .insert(sample.sample_id.clone(), samples.len())
            .is_some()
        {
            return Err(BundleError::DuplicateSampleId {
                id: sample.sample_id,
                line: line_no,
            });
        }
        samples.push(sample);
    }
    if samples.len() != manifest.sample_count {
        return Err(BundleError::SchemaViolation {
            file: manifest_file,
            line: 1,
            field: "sample_count".into(),
            message: format!(
                "declares {} samples, samples file has {}",
                manifest.sample_count,
                samples.len()
            ),
        });
    }
    Ok(DatasetBundle {
        manifest,
        samples,
        index,
    })
}

/// Writes `bundle` as `<dir>/<manifest_name>` plus the samples file named in
/// its manifest (relative to `dir`). Returns the manifest path.
pub fn write_bundle(
    bundle: &DatasetBundle,
    dir: impl AsRef<Path>,
    manifest_name: &str,
) -> Result<PathBuf, BundleError> {
    let dir = dir.as_ref();
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| BundleError::Io { path, source }
    };
    let samples_path = dir.join(&bundle.manifest.samples_path);
    if let Some(parent) = samples_path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut out =
        std::io::BufWriter::new(fs::File::create(&samples_path).map_err(io_err(&samples_path))?);
    for s in &bundle.samples {
        let line = serde_json::to_string(s).expect("sample serializes");
        writeln!(out, "{line}").map_err(io_err(&samples_path))?;
    }
    out.flush().map_err(io_err(&samples_path))?;

    let manifest_path = dir.join(manifest_name);
    let text = serde_json::to_string_pretty(&bundle.manifest).expect("manifest serializes");
    fs::write(&manifest_path, text + "\n").map_err(io_err(&manifest_path))?;
    Ok(manifest_path)
}

pub(crate) fn resolve_relative(anchor_file: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        anchor_file
            .parent()
            .map(|d| d.join(p))
            .unwrap_or_else(|| p.to_path_buf())
    }
}

fn read_existing(path: &Path) -> Result<String, BundleError> {
    if !path.is_file() {
        return Err(BundleError::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|source| BundleError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn manifest_field_hint(text: &str, err: &serde_json::Error) -> String {
    let msg = err.to_string();
    for field in [
        "feature_names",
        "sample_count",
        "samples_path",
        "score_range",
    ] {
        if msg.contains(field) {
            return field.to_string();
        }
    }
    // Fall back to the key that opens the offending line, if any.
    text.lines()
        .nth(err.line().saturating_sub(1))
        .and_then(|l| l.split('"').nth(1))
        .unwrap_or("<document>")
        .to_string()
}

fn validate_feature_names(manifest: &DatasetManifest, file: &str) -> Result<(), BundleError> {
    let mut seen = HashSet::new();
    for name in &manifest.feature_names {
        if name.is_empty() {
            return Err(BundleError::SchemaViolation {
                file: file.into(),
                line: 1,
                field: "feature_names".into(),
                message: "empty feature name".into(),
            });
        }
        if !seen.insert(name.as_str()) {
            return Err(BundleError::SchemaViolation {
                file: file.into(),
                line: 1,
                field: "feature_names".into(),
                message: format!("duplicate feature name `{name}`"),
            });
        }
    }
    Ok(())
}

fn schema(file: &str, line: usize, field: &str, message: impl Into<String>) -> BundleError {
    BundleError::SchemaViolation {
        file: file.into(),
        line,
        field: field.into(),
        message: message.into(),
    }
}

fn parse_sample_line(
    line: &str,
    line_no: usize,
    manifest: &DatasetManifest,
    file: &str,
) -> Result<Sample, BundleError> {
    let value: Value =
        serde_json::from_str(line).map_err(|e| schema(file, line_no, "<record>", e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| schema(file, line_no, "<record>", "expected an object"))?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "sample_id" | "features" | "score") {
            return Err(schema(file, line_no, key, "unknown field"));
        }
    }
    let sample_id = match obj.get("sample_id") {
        Some(Value::String(s)) if !s.is_empty() => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        Some(_) => {
            return Err(schema(
                file,
                line_no,
                "sample_id",
                "expected a non-empty string",
            ))
        }
        None => return Err(schema(file, line_no, "sample_id", "missing")),
    };
    let features = match obj.get("features") {
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(j, v)| {
                v.as_f64().ok_or_else(|| {
                    schema(
                        file,
                        line_no,
                        &format!("features[{j}]"),
                        "missing or non-numeric feature value",
                    )
                })
            })
            .collect::<Result<Vec<_>, _>>()?,
        Some(_) => return Err(schema(file, line_no, "features", "expected an array")),
        None => return Err(schema(file, line_no, "features", "missing")),
    };
    let score = match obj.get("score") {
        Some(v) => v
            .as_f64()
            .ok_or_else(|| schema(file, line_no, "score", "expected a number"))?,
        None => return Err(schema(file, line_no, "score", "missing")),
    };
    let sample = Sample {
        sample_id,
        features,
        score,
    };
    check_sample(manifest, &sample, line_no, file)?;
    Ok(sample)
}

fn check_sample(
    manifest: &DatasetManifest,
    s: &Sample,
    line_no: usize,
    file: &str,
) -> Result<(), BundleError> {
    if s.features.len() != manifest.n_features() {
        return Err(BundleError::LengthMismatch {
            line: line_no,
            expected: manifest.n_features(),
            found: s.features.len(),
        });
    }
    if let Some(j) = s.features.iter().position(|v| !v.is_finite()) {
        return Err(schema(
            file,
            line_no,
            &format!("features[{j}]"),
            "non-finite feature value",
        ));
    }
    if !s.score.is_finite() {
        return Err(schema(file, line_no, "score", "non-finite score"));
    }
    if let Some((lo, hi)) = manifest.score_range {
        if s.score < lo || s.score > hi {
            return Err(schema(
                file,
                line_no,
                "score",
                format!("score {} outside declared range [{lo}, {hi}]", s.score),
            ));
        }
    }
    Ok(())
}
