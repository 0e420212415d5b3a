use super::{resolve_background, AttributionList, Background, InterpretError, Method, RankingKey};
use crate::model_io::{score_batch, DatasetBundle, ScoringChannel};

pub const MAX_EXACT_FEATURES: usize = 20;

/// Coalitions evaluated per scoring call.
const MASK_BLOCK: usize = 1 << 14;

/// Row for coalition `mask`: features in the mask come from `x`, the rest from
/// `bg`.
pub(crate) fn masked_row(x: &[f64], bg: &[f64], mask: impl Fn(usize) -> bool) -> Vec<f64> {
    x.iter()
        .zip(bg)
        .enumerate()
        .map(|(j, (&xv, &bv))| if mask(j) { xv } else { bv })
        .collect()
}

/// Value of each coalition: the model output averaged over background rows.
pub(crate) fn coalition_values<C: ScoringChannel + ?Sized>(
    channel: &mut C,
    x: &[f64],
    background: &[Vec<f64>],
    masks: &[Vec<bool>],
) -> Result<Vec<f64>, InterpretError> {
    let rows: Vec<Vec<f64>> = masks
        .iter()
        .flat_map(|m| background.iter().map(move |bg| masked_row(x, bg, |j| m[j])))
        .collect();
    let scores = score_batch(channel, &rows)?;
    Ok(scores
        .chunks(background.len())
        .map(|c| c.iter().sum::<f64>() / background.len() as f64)
        .collect())
}

/// Exact Shapley values by enumerating all `2^d` coalitions, with masked
/// features taking background values.
///
/// `φ_i = Σ_{S ∌ i} |S|!(d−|S|−1)!/d! · (v(S ∪ {i}) − v(S))`
pub fn exact_shap_explain<C: ScoringChannel + ?Sized>(
    bundle: &DatasetBundle,
    sample_id: &str,
    channel: &mut C,
    background: &Background,
) -> Result<AttributionList, InterpretError> {
    let d = bundle.n_features();
    if d > MAX_EXACT_FEATURES {
        return Err(InterpretError::TooManyFeatures {
            max: MAX_EXACT_FEATURES,
            found: d,
        });
    }
    let x = &bundle.sample(sample_id)?.features;
    let bg = resolve_background(bundle, background)?;

    let n_masks = 1usize << d;
    let mut values = Vec::with_capacity(n_masks);
    for start in (0..n_masks).step_by(MASK_BLOCK) {
        let end = (start + MASK_BLOCK).min(n_masks);
        let rows: Vec<Vec<f64>> = (start..end)
            .flat_map(|mask| {
                bg.iter()
                    .map(move |b| masked_row(x, b, |j| mask >> j & 1 == 1))
            })
            .collect();
        let scores = score_batch(channel, &rows)?;
        values.extend(
            scores
                .chunks(bg.len())
                .map(|c| c.iter().sum::<f64>() / bg.len() as f64),
        );
    }

    // weight[s] = s!(d−s−1)!/d! = 1 / (d · C(d−1, s))
    let weight: Vec<f64> = (0..d)
        .map(|s| 1.0 / (d as f64 * binomial(d - 1, s)))
        .collect();
    let mut phi = vec![0.0; d];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        for mask in (0..n_masks).filter(|m| m & bit == 0) {
            let s = mask.count_ones() as usize;
            *p += weight[s] * (values[mask | bit] - values[mask]);
        }
    }
    let mut out = AttributionList::from_dense(
        sample_id,
        &phi,
        Method::ExactShap,
        values[0],
        RankingKey::Signed,
    );
    out.degenerate = super::is_constant(&values);
    Ok(out)
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
