use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::exact_shap::{binomial, coalition_values};
use super::{
    is_constant, resolve_background, AttributionList, InterpretError, InterpreterConfig, Method,
};
use crate::linalg::weighted_lstsq;
use crate::model_io::{score_batch, DatasetBundle, ScoringChannel};

/// Shapley-kernel weighted regression over coalitions.
///
/// When every non-trivial coalition fits in the perturbation budget
/// (`2^d − 2 ≤ n_perturbations`) all of them are enumerated with their exact
/// kernel weights; otherwise coalitions are drawn with probability
/// proportional to those weights and each draw counts once. The efficiency
/// constraint `Σ φ = f(x) − f(background)` is imposed by eliminating the last
/// feature before solving.
pub fn kernel_shap_explain<C: ScoringChannel + ?Sized>(
    bundle: &DatasetBundle,
    sample_id: &str,
    channel: &mut C,
    cfg: &InterpreterConfig,
) -> Result<AttributionList, InterpretError> {
    cfg.validate()?;
    let d = bundle.n_features();
    if d == 0 {
        return Err(InterpretError::InvalidConfig(
            "bundle has no features".into(),
        ));
    }
    let x = &bundle.sample(sample_id)?.features;
    let bg = resolve_background(bundle, &cfg.background)?;

    let ends: Vec<Vec<f64>> = std::iter::once(x.clone())
        .chain(bg.iter().cloned())
        .collect();
    let end_scores = score_batch(channel, &ends)?;
    let fx = end_scores[0];
    let base = end_scores[1..].iter().sum::<f64>() / bg.len() as f64;
    let delta = fx - base;

    let finish = |phi: Vec<f64>, degenerate: bool| {
        let mut out =
            AttributionList::from_dense(sample_id, &phi, Method::KernelShap, base, cfg.ranking_key);
        out.degenerate = degenerate;
        out
    };

    if d == 1 {
        return Ok(finish(vec![delta], delta == 0.0));
    }

    let full = d < usize::BITS as usize - 1 && (1usize << d) - 2 <= cfg.n_perturbations;
    let (masks, weights) = if full {
        enumerate_coalitions(d)
    } else {
        sample_coalitions(d, cfg.n_perturbations, cfg.rng_seed)
    };
    let values = coalition_values(channel, x, &bg, &masks)?;

    if delta == 0.0 && is_constant(&values) && values.first().is_none_or(|&v| v == base) {
        log::warn!("sample {sample_id}: model output constant over coalitions");
        return Ok(finish(vec![0.0; d], true));
    }

    // φ_last = Δ − Σ_{j<last} φ_j, so each coalition gives the reduced row
    // (z_j − z_last) with target v(S) − base − z_last·Δ.
    let last = d - 1;
    let rows: Vec<Vec<f64>> = masks
        .iter()
        .map(|m| {
            let zl = f64::from(u8::from(m[last]));
            (0..last).map(|j| f64::from(u8::from(m[j])) - zl).collect()
        })
        .collect();
    let targets: Vec<f64> = masks
        .iter()
        .zip(&values)
        .map(|(m, v)| v - base - if m[last] { delta } else { 0.0 })
        .collect();
    // Sampled designs can be rank deficient (few draws, many features); only
    // then does the ridge term come in.
    let fallback = cfg.ridge_lambda.max(1e-8);
    let reduced = weighted_lstsq(&rows, &targets, &weights, 0.0)
        .or_else(|| {
            (!full)
                .then(|| weighted_lstsq(&rows, &targets, &weights, fallback))
                .flatten()
        })
        .ok_or_else(|| InterpretError::SingularFit {
            what: format!("coalition regression for {sample_id}"),
            lambda: if full { 0.0 } else { fallback },
        })?;
    let mut phi = reduced;
    let rest: f64 = phi.iter().sum();
    phi.push(delta - rest);
    Ok(finish(phi, false))
}

/// Shapley kernel weight of one coalition of size `s` out of `d`.
fn kernel_weight(d: usize, s: usize) -> f64 {
    (d - 1) as f64 / (binomial(d, s) * s as f64 * (d - s) as f64)
}

fn enumerate_coalitions(d: usize) -> (Vec<Vec<bool>>, Vec<f64>) {
    let n = (1usize << d) - 2;
    let mut masks = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for mask in 1..(1usize << d) - 1 {
        let m: Vec<bool> = (0..d).map(|j| mask >> j & 1 == 1).collect();
        weights.push(kernel_weight(d, mask.count_ones() as usize));
        masks.push(m);
    }
    (masks, weights)
}

/// Draws coalition sizes with probability ∝ (d−1)/(s(d−s)) (the total kernel
/// mass of size `s`), then a uniform subset of that size.
fn sample_coalitions(d: usize, n: usize, seed: u64) -> (Vec<Vec<bool>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size_mass: Vec<f64> = (1..d)
        .map(|s| (d - 1) as f64 / (s * (d - s)) as f64)
        .collect();
    let total: f64 = size_mass.iter().sum();
    let mut masks = Vec::with_capacity(n);
    for _ in 0..n {
        let mut u = rng.random::<f64>() * total;
        let mut size = d - 1;
        for (i, m) in size_mass.iter().enumerate() {
            if u < *m {
                size = i + 1;
                break;
            }
            u -= m;
        }
        let mut mask = vec![false; d];
        for j in sample_indices(&mut rng, d, size) {
            mask[j] = true;
        }
        masks.push(mask);
    }
    (masks, vec![1.0; n])
}
