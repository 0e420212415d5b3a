use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rows per call for in-process models.
const SYNTHETIC_BATCH_LIMIT: usize = 4096;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("scoring channel broken: {0}")]
    ChannelBroken(String),
    #[error("model returned non-finite score {value} for row {row}")]
    NonFiniteScore { row: usize, value: f64 },
    #[error("row {row} has {found} values, model expects {expected}")]
    RowWidth {
        row: usize,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    InProcessSynthetic,
    ExternalProcess,
}

/// Something that can score feature rows. Implementations see at most
/// `batch_limit()` rows per `score_chunk` call; use [`score_batch`] to score
/// arbitrary row counts.
pub trait ScoringChannel {
    fn kind(&self) -> ChannelKind;

    fn batch_limit(&self) -> usize;

    /// Expected row width, when the channel knows it.
    fn n_features(&self) -> Option<usize>;

    fn score_chunk(&mut self, rows: &[Vec<f64>]) -> Result<Vec<f64>, ChannelError>;
}

/// Scores `rows` in order, chunking to the channel's batch limit and checking
/// that exactly one finite score comes back per row.
pub fn score_batch<C: ScoringChannel + ?Sized>(
    channel: &mut C,
    rows: &[Vec<f64>],
) -> Result<Vec<f64>, ChannelError> {
    if let Some(width) = channel.n_features() {
        if let Some((row, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
            return Err(ChannelError::RowWidth {
                row,
                expected: width,
                found: r.len(),
            });
        }
    }
    let limit = channel.batch_limit().max(1);
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(limit) {
        let scores = channel.score_chunk(chunk)?;
        if scores.len() != chunk.len() {
            return Err(ChannelError::ChannelBroken(format!(
                "expected {} scores, got {}",
                chunk.len(),
                scores.len()
            )));
        }
        let offset = out.len();
        if let Some((i, &value)) = scores.iter().enumerate().find(|(_, s)| !s.is_finite()) {
            return Err(ChannelError::NonFiniteScore {
                row: offset + i,
                value,
            });
        }
        out.extend(scores);
    }
    Ok(out)
}

/// A model evaluated in-process, one row at a time.
pub trait SyntheticModel {
    fn n_features(&self) -> usize;
    fn predict(&self, row: &[f64]) -> f64;
}

impl<M: SyntheticModel> ScoringChannel for M {
    fn kind(&self) -> ChannelKind {
        ChannelKind::InProcessSynthetic
    }

    fn batch_limit(&self) -> usize {
        SYNTHETIC_BATCH_LIMIT
    }

    fn n_features(&self) -> Option<usize> {
        Some(SyntheticModel::n_features(self))
    }

    fn score_chunk(&mut self, rows: &[Vec<f64>]) -> Result<Vec<f64>, ChannelError> {
        Ok(rows.iter().map(|r| self.predict(r)).collect())
    }
}

/// `f(x) = intercept + Σ coefficients[i]·x[i]`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    #[serde(default)]
    pub intercept: f64,
}

impl LinearModel {
    pub fn new(coefficients: Vec<f64>, intercept: f64) -> Self {
        Self {
            coefficients,
            intercept,
        }
    }
}

impl SyntheticModel for LinearModel {
    fn n_features(&self) -> usize {
        self.coefficients.len()
    }

    fn predict(&self, row: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(row)
                .map(|(c, x)| c * x)
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantModel {
    pub value: f64,
    pub n_features: usize,
}

impl SyntheticModel for ConstantModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict(&self, _row: &[f64]) -> f64 {
        self.value
    }
}

type RowFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Wraps an arbitrary closure; handy for tests.
#[derive(Clone)]
pub struct FnModel {
    n_features: usize,
    f: RowFn,
}

impl FnModel {
    pub fn new(n_features: usize, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            n_features,
            f: Arc::new(f),
        }
    }
}

impl fmt::Debug for FnModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnModel")
            .field("n_features", &self.n_features)
            .finish_non_exhaustive()
    }
}

impl SyntheticModel for FnModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict(&self, row: &[f64]) -> f64 {
        (self.f)(row)
    }
}

/// Two-level tree: a root split whose branches are each a decision stump.
/// Root and child splits may use different features, so an ensemble of these
/// has genuine pairwise interactions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthTwoTree {
    pub feature: usize,
    pub threshold: f64,
    pub low: Stump,
    pub high: Stump,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub low: f64,
    pub high: f64,
}

impl Stump {
    fn eval(&self, row: &[f64]) -> f64 {
        if row[self.feature] <= self.threshold {
            self.low
        } else {
            self.high
        }
    }
}

impl DepthTwoTree {
    fn eval(&self, row: &[f64]) -> f64 {
        if row[self.feature] <= self.threshold {
            self.low.eval(row)
        } else {
            self.high.eval(row)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StumpEnsemble {
    pub n_features: usize,
    #[serde(default)]
    pub bias: f64,
    pub trees: Vec<DepthTwoTree>,
}

impl StumpEnsemble {
    /// Random ensemble over features in `[0, 1)`; thresholds and leaf values
    /// are drawn from a seeded generator, so equal seeds give equal models.
    pub fn random(n_features: usize, n_trees: usize, seed: u64) -> Self {
        assert!(n_features > 0, "ensemble needs at least one feature");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stump = |rng: &mut ChaCha8Rng| Stump {
            feature: rng.random_range(0..n_features),
            threshold: rng.random_range(0.1..0.9),
            low: rng.random_range(-1.0..1.0),
            high: rng.random_range(-1.0..1.0),
        };
        let trees = (0..n_trees)
            .map(|_| {
                let feature = rng.random_range(0..n_features);
                let threshold = rng.random_range(0.1..0.9);
                let low = stump(&mut rng);
                let high = stump(&mut rng);
                DepthTwoTree {
                    feature,
                    threshold,
                    low,
                    high,
                }
            })
            .collect();
        Self {
            n_features,
            bias: 0.0,
            trees,
        }
    }
}

impl SyntheticModel for StumpEnsemble {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict(&self, row: &[f64]) -> f64 {
        self.bias + self.trees.iter().map(|t| t.eval(row)).sum::<f64>()
    }
}
