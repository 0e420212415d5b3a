use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{is_constant, AttributionList, InterpretError, InterpreterConfig, Method};
use crate::linalg::weighted_ridge;
use crate::model_io::{score_batch, DatasetBundle, ScoringChannel};

/// Local surrogate around one sample.
///
/// Draws `n_perturbations` points `x + z ⊙ σ` with `z ~ N(0, I)` and `σ` the
/// dataset standard deviation per feature (the first point is `x` itself),
/// weights them by `sqrt(exp(-‖z‖² / width²))`, and fits a weighted ridge
/// regression on the standardized offsets `z`. The coefficient on `z_j` is the
/// raw slope times `σ_j`, which is the reported importance. Features with zero
/// spread are never perturbed and get importance 0.
pub fn lime_explain<C: ScoringChannel + ?Sized>(
    bundle: &DatasetBundle,
    sample_id: &str,
    channel: &mut C,
    cfg: &InterpreterConfig,
) -> Result<AttributionList, InterpretError> {
    cfg.validate()?;
    if bundle.len() < 2 {
        return Err(InterpretError::TooFewSamples {
            needed: 2,
            found: bundle.len(),
        });
    }
    let x = &bundle.sample(sample_id)?.features;
    let d = x.len();
    let sigma = bundle.feature_stds();
    let active: Vec<usize> = (0..d).filter(|&j| sigma[j] > 0.0).collect();
    let width = cfg.kernel_width.resolve(d);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let n = cfg.n_perturbations;
    let mut offsets: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let z: Vec<f64> = if i == 0 {
            vec![0.0; active.len()]
        } else {
            active
                .iter()
                .map(|_| StandardNormal.sample(&mut rng))
                .collect()
        };
        let mut row = x.clone();
        for (zj, &j) in z.iter().zip(&active) {
            row[j] += zj * sigma[j];
        }
        let dist2: f64 = z.iter().map(|v| v * v).sum();
        weights.push((-dist2 / (width * width)).exp().sqrt());
        offsets.push(z);
        rows.push(row);
    }
    let scores = score_batch(channel, &rows)?;

    let mut importances = vec![0.0; d];
    if is_constant(&scores) {
        log::warn!("sample {sample_id}: model output constant under perturbation");
        let mut out = AttributionList::from_dense(
            sample_id,
            &importances,
            Method::Lime,
            scores.first().copied().unwrap_or(0.0),
            cfg.ranking_key,
        );
        out.degenerate = true;
        return Ok(out);
    }

    let fit = weighted_ridge(&offsets, &scores, &weights, cfg.ridge_lambda)
        .or_else(|| {
            weighted_ridge(
                &offsets,
                &scores,
                &weights,
                cfg.ridge_lambda.max(1e-8) * 10.0,
            )
        })
        .ok_or_else(|| InterpretError::SingularFit {
            what: format!("local surrogate for {sample_id}"),
            lambda: cfg.ridge_lambda,
        })?;
    for (c, &j) in fit.coefficients.iter().zip(&active) {
        importances[j] = *c;
    }
    Ok(AttributionList::from_dense(
        sample_id,
        &importances,
        Method::Lime,
        fit.intercept,
        cfg.ranking_key,
    ))
}
