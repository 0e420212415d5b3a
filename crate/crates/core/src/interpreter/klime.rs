//! K-LIME: cluster the samples, fit one linear surrogate of the stored
//! scores per cluster, and attribute each sample against its cluster mean.
//! Needs no scoring channel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AttributionList, InterpretError, InterpreterConfig, Method};
use crate::linalg::weighted_ridge;
use crate::model_io::DatasetBundle;

const MAX_ITERATIONS: usize = 100;
const MAX_RESEEDS: usize = 3;
const MAX_LAMBDA_ESCALATIONS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterFit {
    pub size: usize,
    pub centroid: Vec<f64>,
    pub feature_means: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub mean_score: f64,
    pub r_squared: f64,
    pub lambda: f64,
    /// Ridge had to be raised above the configured value to solve.
    pub regularized: bool,
    /// Fewer samples than parameters; coefficients are not identified.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KLimeResult {
    /// One list per sample, in bundle order.
    pub attributions: Vec<AttributionList>,
    pub assignments: Vec<usize>,
    pub clusters: Vec<ClusterFit>,
}

pub fn klime_explain(
    bundle: &DatasetBundle,
    cfg: &InterpreterConfig,
    n_clusters: usize,
) -> Result<KLimeResult, InterpretError> {
    cfg.validate()?;
    if n_clusters == 0 {
        return Err(InterpretError::InvalidConfig(
            "n_clusters must be positive".into(),
        ));
    }
    if bundle.len() < n_clusters {
        return Err(InterpretError::TooFewSamples {
            needed: n_clusters,
            found: bundle.len(),
        });
    }
    let points: Vec<&[f64]> = bundle
        .samples()
        .iter()
        .map(|s| s.features.as_slice())
        .collect();
    let (assignments, centroids) = kmeans(&points, n_clusters, cfg.rng_seed)?;

    let d = bundle.n_features();
    let mut clusters = Vec::with_capacity(n_clusters);
    for (c, centroid) in centroids.into_iter().enumerate() {
        let members: Vec<usize> = (0..points.len()).filter(|&i| assignments[i] == c).collect();
        let rows: Vec<Vec<f64>> = members.iter().map(|&i| points[i].to_vec()).collect();
        let y: Vec<f64> = members.iter().map(|&i| bundle.samples()[i].score).collect();
        clusters.push(fit_cluster(c, &rows, &y, cfg.ridge_lambda, d, centroid)?);
    }

    let attributions = bundle
        .samples()
        .iter()
        .zip(&assignments)
        .map(|(s, &c)| {
            let fit = &clusters[c];
            let contrib: Vec<f64> = s
                .features
                .iter()
                .zip(&fit.feature_means)
                .zip(&fit.coefficients)
                .map(|((x, m), b)| b * (x - m))
                .collect();
            let mut list = AttributionList::from_dense(
                s.sample_id.clone(),
                &contrib,
                Method::Klime,
                fit.mean_score,
                cfg.ranking_key,
            );
            list.cluster = Some(c);
            list.degenerate = fit.degenerate;
            list
        })
        .collect();
    Ok(KLimeResult {
        attributions,
        assignments,
        clusters,
    })
}

fn fit_cluster(
    cluster: usize,
    rows: &[Vec<f64>],
    y: &[f64],
    lambda: f64,
    d: usize,
    centroid: Vec<f64>,
) -> Result<ClusterFit, InterpretError> {
    let ones = vec![1.0; rows.len()];
    let mut used = lambda;
    let mut fit = weighted_ridge(rows, y, &ones, used);
    let mut escalations = 0;
    while fit.is_none() && escalations < MAX_LAMBDA_ESCALATIONS {
        used = if used > 0.0 { used * 10.0 } else { 1e-8 };
        fit = weighted_ridge(rows, y, &ones, used);
        escalations += 1;
    }
    let fit = fit.ok_or_else(|| InterpretError::SingularFit {
        what: format!("cluster {cluster}"),
        lambda: used,
    })?;
    if escalations > 0 {
        log::warn!("cluster {cluster}: singular fit, ridge raised to {used}");
    }

    let n = rows.len() as f64;
    let mut feature_means = vec![0.0; d];
    for r in rows {
        for (m, v) in feature_means.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mean_score = y.iter().sum::<f64>() / n;
    let predict = |r: &[f64]| {
        fit.intercept
            + r.iter()
                .zip(&fit.coefficients)
                .map(|(a, b)| a * b)
                .sum::<f64>()
    };
    let ss_res: f64 = rows
        .iter()
        .zip(y)
        .map(|(r, yi)| (yi - predict(r)).powi(2))
        .sum();
    let ss_tot: f64 = y.iter().map(|yi| (yi - mean_score).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res <= f64::EPSILON {
        1.0
    } else {
        0.0
    };
    Ok(ClusterFit {
        size: rows.len(),
        centroid,
        feature_means,
        coefficients: fit.coefficients,
        intercept: fit.intercept,
        mean_score,
        r_squared,
        lambda: used,
        regularized: escalations > 0,
        degenerate: rows.len() < d + 1,
    })
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the closest centroid; ties go to the lowest index.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let dd = dist2(p, centroid);
        if dd < best_d {
            best = c;
            best_d = dd;
        }
    }
    best
}

fn kmeans_pp_seed(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].to_vec()];
    while centroids.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| {
                centroids
                    .iter()
                    .map(|c| dist2(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[pick].to_vec());
    }
    centroids
}

/// Lloyd iterations from a k-means++ start. An empty cluster triggers a fresh
/// seeding, up to `MAX_RESEEDS` times.
fn kmeans(
    points: &[&[f64]],
    k: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<Vec<f64>>), InterpretError> {
    let d = points[0].len();
    let mut empty = 0;
    for attempt in 0..=MAX_RESEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64));
        let mut centroids = kmeans_pp_seed(points, k, &mut rng);
        let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        let mut failed = None;
        for _ in 0..MAX_ITERATIONS {
            let mut sums = vec![vec![0.0; d]; k];
            let mut counts = vec![0usize; k];
            for (p, &c) in points.iter().zip(&assignments) {
                counts[c] += 1;
                for (s, v) in sums[c].iter_mut().zip(p.iter()) {
                    *s += v;
                }
            }
            if let Some(c) = counts.iter().position(|&n| n == 0) {
                failed = Some(c);
                break;
            }
            for ((centroid, sum), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
                *centroid = sum.into_iter().map(|s| s / n as f64).collect();
            }
            let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
            if next == assignments {
                break;
            }
            assignments = next;
        }
        if failed.is_none() {
            let mut counts = vec![0usize; k];
            assignments.iter().for_each(|&c| counts[c] += 1);
            failed = counts.iter().position(|&n| n == 0);
        }
        match failed {
            None => return Ok((assignments, centroids)),
            Some(c) => {
                log::debug!("k-means attempt {attempt}: cluster {c} empty, reseeding");
                empty = c;
            }
        }
    }
    Err(InterpretError::EmptyCluster {
        cluster: empty,
        attempts: MAX_RESEEDS + 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_io::{DatasetManifest, Sample};

    fn bundle(rows: Vec<(Vec<f64>, f64)>) -> DatasetBundle {
        let d = rows[0].0.len();
        let manifest = DatasetManifest {
            feature_names: (0..d).map(|j| format!("f{j}")).collect(),
            sample_count: rows.len(),
            samples_path: "s".into(),
            score_range: None,
        };
        let samples = rows
            .into_iter()
            .enumerate()
            .map(|(i, (features, score))| Sample {
                sample_id: format!("s{i}"),
                features,
                score,
            })
            .collect();
        DatasetBundle::new(manifest, samples).unwrap()
    }

    #[test]
    fn nearest_ties_go_low() {
        let centroids = vec![vec![0.0], vec![2.0]];
        assert_eq!(nearest(&[1.0], &centroids), 0);
    }

    #[test]
    fn one_cluster_per_sample_is_flagged() {
        let b = bundle(
            (0..4)
                .map(|i| (vec![i as f64, (i * i) as f64], i as f64))
                .collect(),
        );
        let r = klime_explain(&b, &InterpreterConfig::default(), 4).unwrap();
        assert!(r.clusters.iter().all(|c| c.degenerate && c.size == 1));
        assert!(r.attributions.iter().all(|a| a.degenerate));
    }

    #[test]
    fn singular_fit_escalates_ridge() {
        // Collinear features and no ridge: solvable only after escalation.
        let b = bundle(
            (0..10)
                .map(|i| (vec![i as f64, 2.0 * i as f64], i as f64))
                .collect(),
        );
        let cfg = InterpreterConfig {
            ridge_lambda: 0.0,
            ..Default::default()
        };
        let r = klime_explain(&b, &cfg, 1).unwrap();
        assert!(r.clusters[0].regularized);
        assert!(r.clusters[0].lambda > 0.0);
    }

    #[test]
    fn too_many_clusters() {
        let b = bundle(vec![(vec![0.0], 0.0), (vec![1.0], 1.0)]);
        assert!(matches!(
            klime_explain(&b, &InterpreterConfig::default(), 3),
            Err(InterpretError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn duplicate_points_cannot_fill_clusters() {
        let b = bundle(vec![(vec![1.0], 0.0); 5]);
        assert!(matches!(
            klime_explain(&b, &InterpreterConfig::default(), 2),
            Err(InterpretError::EmptyCluster { attempts: 4, .. })
        ));
    }
}
