//! End-to-end runs driven by a single TOML configuration.
//!
//! ```toml
//! bundle = "bundle/manifest.json"
//! feature_info = "feature_info.csv"
//! templates = "templates.json"
//! user_values = "user_values.jsonl"   # optional
//! method = "lime"
//! format = "markdown"
//! output = "narratives.md"            # omitted: stdout
//! scoring_command = ["python3", "serve.py"]
//!
//! [interpreter]
//! n_perturbations = 5000
//!
//! [engine]
//! dedup_k = 1
//! ```
//!
//! Relative paths are resolved against the configuration file's directory.
//! Instead of `scoring_command`, a `[model]` table may describe an in-process
//! synthetic model; K-LIME needs neither.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{DesignError, InsightsDesign};
use crate::export::{export, export_to_path, ExportError, ExportFormat};
use crate::interpreter::{
    exact_shap_explain, kernel_shap_explain, klime_explain, lime_explain, top_features,
    AttributionList, InterpretError, InterpreterConfig, Method,
};
use crate::model_io::{
    load_bundle, BundleError, ChannelError, ConstantModel, DatasetBundle, ExternalChannel,
    LinearModel, ScoringChannel, StumpEnsemble, SyntheticModel,
};
use crate::narrative::{generate_for_sample, EngineConfig, ExplanationRecord, NarrativeError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Interpret(#[from] InterpretError),
    #[error(transparent)]
    Narrative(#[from] NarrativeError),
    #[error("scoring channel: {0}")]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Export(#[from] ExportError),
}

impl PipelineError {
    /// Errors caused by the inputs rather than by the run itself.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            PipelineError::Config(_)
                | PipelineError::Bundle(_)
                | PipelineError::Design(_)
                | PipelineError::Interpret(InterpretError::InvalidConfig(_))
                | PipelineError::Narrative(NarrativeError::InvalidConfig(_))
        )
    }

    pub fn exit_code(&self) -> i32 {
        if self.is_validation() {
            1
        } else {
            2
        }
    }
}

/// An in-process model for runs without an external scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Linear {
        coefficients: Vec<f64>,
        #[serde(default)]
        intercept: f64,
    },
    Constant {
        value: f64,
    },
    /// A seeded random ensemble of depth-two trees.
    RandomEnsemble {
        n_trees: usize,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticScorer {
    Linear(LinearModel),
    Constant(ConstantModel),
    Ensemble(StumpEnsemble),
}

impl SyntheticModel for SyntheticScorer {
    fn n_features(&self) -> usize {
        match self {
            SyntheticScorer::Linear(m) => SyntheticModel::n_features(m),
            SyntheticScorer::Constant(m) => SyntheticModel::n_features(m),
            SyntheticScorer::Ensemble(m) => SyntheticModel::n_features(m),
        }
    }

    fn predict(&self, row: &[f64]) -> f64 {
        match self {
            SyntheticScorer::Linear(m) => m.predict(row),
            SyntheticScorer::Constant(m) => m.predict(row),
            SyntheticScorer::Ensemble(m) => m.predict(row),
        }
    }
}

impl ModelSpec {
    pub fn build(&self, n_features: usize) -> Result<SyntheticScorer, PipelineError> {
        Ok(match self {
            ModelSpec::Linear {
                coefficients,
                intercept,
            } => {
                if coefficients.len() != n_features {
                    return Err(PipelineError::Config(format!(
                        "linear model has {} coefficients but the bundle has {n_features} features",
                        coefficients.len()
                    )));
                }
                SyntheticScorer::Linear(LinearModel::new(coefficients.clone(), *intercept))
            }
            ModelSpec::Constant { value } => SyntheticScorer::Constant(ConstantModel {
                value: *value,
                n_features,
            }),
            ModelSpec::RandomEnsemble { n_trees, seed } => {
                SyntheticScorer::Ensemble(StumpEnsemble::random(n_features, *n_trees, *seed))
            }
        })
    }
}

fn default_method() -> Method {
    Method::Lime
}

fn default_clusters() -> usize {
    4
}

fn default_parallel() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub bundle: PathBuf,
    pub feature_info: PathBuf,
    pub templates: PathBuf,
    #[serde(default)]
    pub user_values: Option<PathBuf>,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default)]
    pub format: ExportFormat,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub scoring_command: Option<Vec<String>>,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default = "default_clusters")]
    pub klime_clusters: usize,
    /// Restricts the run to these sample ids (in this order).
    #[serde(default)]
    pub samples: Option<Vec<String>>,
    /// Explain samples concurrently when the model is in-process.
    #[serde(default = "default_parallel")]
    pub parallel: bool,
    #[serde(default)]
    pub interpreter: InterpreterConfig,
    #[serde(default)]
    pub engine: EngineConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.bundle);
        fix(&mut self.feature_info);
        fix(&mut self.templates);
        if let Some(p) = self.user_values.as_mut() {
            fix(p);
        }
        if let Some(p) = self.output.as_mut() {
            fix(p);
        }
    }

    /// Checks everything that can be checked without loading data.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut inputs = vec![
            ("bundle", &self.bundle),
            ("feature_info", &self.feature_info),
            ("templates", &self.templates),
        ];
        if let Some(p) = &self.user_values {
            inputs.push(("user_values", p));
        }
        for (name, p) in inputs {
            if !p.is_file() {
                return Err(PipelineError::Config(format!(
                    "{name} file {} does not exist",
                    p.display()
                )));
            }
        }
        self.interpreter.validate()?;
        self.engine.validate()?;
        if self.scoring_command.is_some() && self.model.is_some() {
            return Err(PipelineError::Config(
                "set either scoring_command or [model], not both".into(),
            ));
        }
        if let Some(cmd) = &self.scoring_command {
            if cmd.is_empty() {
                return Err(PipelineError::Config("scoring_command is empty".into()));
            }
        }
        if self.method != Method::Klime && self.scoring_command.is_none() && self.model.is_none() {
            return Err(PipelineError::Config(format!(
                "method {} queries the model: set scoring_command or [model]",
                self.method
            )));
        }
        if self.method == Method::Klime && self.klime_clusters == 0 {
            return Err(PipelineError::Config(
                "klime_clusters must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Loaded and cross-checked inputs.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub bundle: DatasetBundle,
    pub design: InsightsDesign,
}

/// Validates the configuration, then loads and links bundle and design.
/// Nothing is scored.
pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs, PipelineError> {
    cfg.validate()?;
    let bundle = load_bundle(&cfg.bundle)?;
    let design = InsightsDesign::load(
        &cfg.feature_info,
        &cfg.templates,
        cfg.user_values.as_deref(),
        bundle.manifest(),
    )?;
    if let Some(ids) = &cfg.samples {
        for id in ids {
            bundle.sample(id)?;
        }
    }
    if let Some(model) = &cfg.model {
        model.build(bundle.n_features())?;
    }
    Ok(Inputs { bundle, design })
}

fn selected_ids<'a>(cfg: &'a RunConfig, bundle: &'a DatasetBundle) -> Vec<&'a str> {
    match &cfg.samples {
        Some(ids) => ids.iter().map(String::as_str).collect(),
        None => bundle
            .samples()
            .iter()
            .map(|s| s.sample_id.as_str())
            .collect(),
    }
}

fn explain_one<C: ScoringChannel + ?Sized>(
    method: Method,
    bundle: &DatasetBundle,
    id: &str,
    channel: &mut C,
    cfg: &InterpreterConfig,
) -> Result<AttributionList, InterpretError> {
    match method {
        Method::Lime => lime_explain(bundle, id, channel, cfg),
        Method::KernelShap => kernel_shap_explain(bundle, id, channel, cfg),
        Method::ExactShap => {
            exact_shap_explain(bundle, id, channel, &cfg.background).map(|a| with_key(a, cfg))
        }
        Method::Klime => unreachable!("K-LIME explains the whole bundle at once"),
    }
}

fn with_key(mut a: AttributionList, cfg: &InterpreterConfig) -> AttributionList {
    if a.ranking_key != cfg.ranking_key {
        a = AttributionList::from_dense(
            a.sample_id.clone(),
            &a.dense(a.entries.len()),
            a.method,
            a.baseline,
            cfg.ranking_key,
        );
    }
    a
}

/// Attributions for the selected samples, in selection order. Per-sample
/// failures are returned as warnings and the sample is skipped.
pub fn explain_samples(
    cfg: &RunConfig,
    bundle: &DatasetBundle,
) -> Result<(Vec<AttributionList>, Vec<String>), PipelineError> {
    let ids = selected_ids(cfg, bundle);
    let icfg = &cfg.interpreter;
    let results: Vec<(String, Result<AttributionList, InterpretError>)> = match cfg.method {
        Method::Klime => {
            let result = klime_explain(bundle, icfg, cfg.klime_clusters)?;
            ids.iter()
                .map(|id| {
                    let pos = bundle.position(id).expect("ids validated");
                    (id.to_string(), Ok(result.attributions[pos].clone()))
                })
                .collect()
        }
        method => match (&cfg.model, &cfg.scoring_command) {
            (Some(spec), _) => {
                let model = spec.build(bundle.n_features())?;
                let run = |id: &&str| {
                    let mut m = model.clone();
                    (
                        id.to_string(),
                        explain_one(method, bundle, id, &mut m, icfg),
                    )
                };
                if cfg.parallel {
                    ids.par_iter().map(run).collect()
                } else {
                    ids.iter().map(run).collect()
                }
            }
            (None, Some(cmd)) => {
                let mut channel = ExternalChannel::spawn(cmd)?.with_n_features(bundle.n_features());
                ids.iter()
                    .map(|id| {
                        (
                            id.to_string(),
                            explain_one(method, bundle, id, &mut channel, icfg),
                        )
                    })
                    .collect()
            }
            (None, None) => {
                return Err(PipelineError::Config(format!(
                    "method {method} needs a model"
                )))
            }
        },
    };
    let mut attributions = Vec::with_capacity(results.len());
    let mut warnings = Vec::new();
    for (id, r) in results {
        match r {
            Ok(a) => attributions.push(a),
            Err(e) => {
                warn!("sample {id}: {e}");
                warnings.push(format!("sample `{id}` skipped: {e}"));
            }
        }
    }
    Ok((attributions, warnings))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NarrationSummary {
    pub narratives: usize,
    pub dropped_by_threshold: usize,
    pub warnings: Vec<String>,
}

/// Turns attributions into explanation records, keeping the top
/// `top_k_features` entries of each list.
pub fn narrate(
    bundle: &DatasetBundle,
    design: &InsightsDesign,
    attributions: &[AttributionList],
    top_k_features: usize,
    engine: &EngineConfig,
) -> Result<(Vec<ExplanationRecord>, NarrationSummary), PipelineError> {
    engine.validate()?;
    let mut summary = NarrationSummary::default();
    let mut records = Vec::with_capacity(attributions.len());
    for a in attributions {
        let top = top_features(a, top_k_features);
        let (record, stats) = generate_for_sample(bundle, &a.sample_id, &top, design, engine)?;
        summary.narratives += record.narratives.len();
        summary.dropped_by_threshold += stats.dropped_by_threshold;
        summary.warnings.extend(record.warnings.iter().cloned());
        records.push(record);
    }
    Ok((records, summary))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub samples_processed: usize,
    pub samples_skipped: usize,
    pub narratives: usize,
    pub dropped_by_threshold: usize,
    pub warnings: Vec<String>,
    pub elapsed: Duration,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.warnings.is_empty() {
            0
        } else {
            3
        }
    }
}

impl std::fmt::Display for RunSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "processed {} samples ({} skipped), {} narratives, {} dropped by threshold, {} warnings in {:.2?}",
            self.samples_processed,
            self.samples_skipped,
            self.narratives,
            self.dropped_by_threshold,
            self.warnings.len(),
            self.elapsed
        )
    }
}

/// Load → explain → narrate → export. Records are also returned.
///
/// Output goes to `cfg.output`, or to `stdout` when no output path is set.
pub fn run_pipeline(
    cfg: &RunConfig,
    stdout: &mut dyn Write,
) -> Result<(Vec<ExplanationRecord>, RunSummary), PipelineError> {
    let start = Instant::now();
    let Inputs { bundle, design } = load_inputs(cfg)?;
    let selected = selected_ids(cfg, &bundle).len();
    info!("explaining {selected} samples with {}", cfg.method);
    let (attributions, mut warnings) = explain_samples(cfg, &bundle)?;
    let (records, narration) = narrate(
        &bundle,
        &design,
        &attributions,
        cfg.interpreter.top_k_features,
        &cfg.engine,
    )?;
    match &cfg.output {
        Some(path) => export_to_path(&records, cfg.format, path)?,
        None => export(&records, cfg.format, stdout)?,
    }
    warnings.extend(narration.warnings);
    let summary = RunSummary {
        samples_processed: records.len(),
        samples_skipped: selected - records.len(),
        narratives: narration.narratives,
        dropped_by_threshold: narration.dropped_by_threshold,
        warnings,
        elapsed: start.elapsed(),
    };
    info!("{summary}");
    Ok((records, summary))
}
