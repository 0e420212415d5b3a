#![allow(dead_code)]

pub mod props;

use std::path::{Path, PathBuf};

use crystal_core::design::{
    build_super_feature_mapping, FeatureInfoTable, InsightsDesign, TemplateSet, UserValues,
};
use crystal_core::interpreter::{Attribution, AttributionList, Method, RankingKey};
use crystal_core::model_io::{DatasetBundle, DatasetManifest, Sample};
use crystal_core::narrative::{collect_super_values, render_narrative};
use crystal_core::pipeline::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn jobs_dir() -> PathBuf {
    fixture_dir().join("jobs_upsell")
}

pub fn jobs_config() -> RunConfig {
    RunConfig::load(jobs_dir().join("run.toml")).expect("fixture config loads")
}

pub fn scorer(name: &str) -> String {
    fixture_dir()
        .join("scorers")
        .join(name)
        .display()
        .to_string()
}

pub const JOB_TEMPLATES: &str = r#"{
  "quantity": {"text": "Purchased {quantity_num} {super_name} for ${total_price}."},
  "value_change": {
    "text": "{super_name} changed from {prev_value} to {current_value}{percent_change} in the last month.",
    "extra_items": [
      {"name": "percent_change", "expression": "(current_value-prev_value)/prev_value*100", "format": "signed_percent"}
    ]
  }
}"#;

/// The hierarchy and insight columns for the six features of the ranking
/// example, every feature model-sourced with weight 1.
pub const RANKING_INFO: &str = "\
Original-Feature,Super-Feature,Ultra-Feature,Category,Insight Type,Insight Item,Insight Threshold,Insight Weight,Source
job_qty,job slots,job slots,product booking,quantity,quantity_num,,,
job_dprice_usd,job slots,job slots,product booking,quantity,total_price,,,
job_view_s3,views per job,job view,product performance,value_change,prev_value,,,
job_view_s4,views per job,job view,product performance,value_change,current_value,,,
job_viewer_s3,viewers per job,job view,product performance,value_change,prev_value,,,
job_viewer_s4,viewers per job,job view,product performance,value_change,current_value,,,
";

pub const RANKING_FEATURES: [&str; 6] = [
    "job_qty",
    "job_dprice_usd",
    "job_view_s3",
    "job_view_s4",
    "job_viewer_s3",
    "job_viewer_s4",
];

/// The importance column of the ranking example, in `RANKING_FEATURES` order.
pub const RANKING_IMPORTANCES: [f64; 6] = [0.3, 0.4, 0.2, 0.6, 0.3, 0.2];

pub fn manifest(names: &[&str], n: usize) -> DatasetManifest {
    DatasetManifest {
        feature_names: names.iter().map(|s| s.to_string()).collect(),
        sample_count: n,
        samples_path: "samples.jsonl".into(),
        score_range: None,
    }
}

pub fn bundle_from_rows(names: &[&str], rows: Vec<Vec<f64>>, scores: Vec<f64>) -> DatasetBundle {
    let samples = rows
        .into_iter()
        .zip(scores)
        .enumerate()
        .map(|(i, (features, score))| Sample {
            sample_id: format!("s{i}"),
            features,
            score,
        })
        .collect::<Vec<_>>();
    DatasetBundle::new(manifest(names, samples.len()), samples).expect("valid bundle")
}

/// Customer A of the ranking example plus one other account.
pub fn ranking_bundle() -> DatasetBundle {
    let mut b = bundle_from_rows(
        &RANKING_FEATURES,
        vec![
            vec![30.0, 1200.0, 200.0, 300.0, 50.0, 52.0],
            vec![5.0, 200.0, 100.0, 90.0, 20.0, 25.0],
        ],
        vec![0.85, 0.2],
    );
    let samples: Vec<Sample> = b
        .samples()
        .iter()
        .cloned()
        .zip(["A", "B"])
        .map(|(mut s, id)| {
            s.sample_id = id.into();
            s
        })
        .collect();
    b = DatasetBundle::new(b.manifest().clone(), samples).unwrap();
    b
}

pub fn design(info_csv: &str, templates: &str, bundle: &DatasetBundle) -> InsightsDesign {
    let info = FeatureInfoTable::from_csv(info_csv, bundle.manifest()).expect("info parses");
    let templates = TemplateSet::from_json(templates).expect("templates parse");
    let mapping =
        build_super_feature_mapping(&info, &templates, bundle.manifest()).expect("design links");
    InsightsDesign {
        info,
        mapping,
        user_values: UserValues::default(),
    }
}

pub fn ranking_design() -> InsightsDesign {
    design(RANKING_INFO, JOB_TEMPLATES, &ranking_bundle())
}

/// Attribution list holding exactly the given (feature, importance) pairs.
pub fn attribution(sample_id: &str, pairs: &[(usize, f64)]) -> AttributionList {
    let mut entries: Vec<Attribution> = pairs
        .iter()
        .map(|&(feature_index, importance)| Attribution {
            feature_index,
            importance,
        })
        .collect();
    entries.sort_by(|a, b| {
        b.importance
            .total_cmp(&a.importance)
            .then(a.feature_index.cmp(&b.feature_index))
    });
    AttributionList {
        sample_id: sample_id.into(),
        entries,
        method: Method::Lime,
        baseline: 0.0,
        ranking_key: RankingKey::Signed,
        degenerate: false,
        cluster: None,
    }
}

pub fn ranking_attribution() -> AttributionList {
    let pairs: Vec<(usize, f64)> = RANKING_IMPORTANCES.iter().copied().enumerate().collect();
    attribution("A", &pairs)
}

/// Renders the value-change template the way the engine does, computing the
/// percent change through the mapping's extra-item pipeline.
pub fn render_change(prev: f64, current: f64) -> String {
    let b = bundle_from_rows(
        &RANKING_FEATURES,
        vec![vec![1.0, 1.0, prev, current, 1.0, 1.0]],
        vec![0.5],
    );
    let d = design(RANKING_INFO, JOB_TEMPLATES, &b);
    let values = collect_super_values(&d.mapping, &b.samples()[0], &d.user_values);
    let views = d.mapping.get("views per job").unwrap();
    let idx = d
        .mapping
        .supers()
        .iter()
        .position(|s| s.name == views.name)
        .unwrap();
    render_narrative(
        d.mapping.template(views),
        &views.name,
        values[idx].as_ref().unwrap(),
    )
}

/// `n` rows of `d` features uniform in `[0, 1)`, scored by `f`.
pub fn uniform_bundle(d: usize, n: usize, seed: u64, f: impl Fn(&[f64]) -> f64) -> DatasetBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
        .collect();
    let scores = rows.iter().map(|r| f(r)).collect();
    let names: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    bundle_from_rows(&names, rows, scores)
}

/// Shapley values by direct subset enumeration,
/// `φ_i = Σ_{S ⊆ N∖{i}} |S|!(d−|S|−1)!/d! · (v(S∪{i}) − v(S))`, where `v(S)`
/// averages `f` over background rows with features outside `S` replaced.
pub fn shapley_oracle(f: &dyn Fn(&[f64]) -> f64, x: &[f64], background: &[Vec<f64>]) -> Vec<f64> {
    let d = x.len();
    let fact: Vec<f64> = (0..=d)
        .scan(1.0, |acc, k| {
            if k > 0 {
                *acc *= k as f64;
            }
            Some(*acc)
        })
        .collect();
    let value = |mask: usize| -> f64 {
        background
            .iter()
            .map(|b| {
                let row: Vec<f64> = (0..d)
                    .map(|j| if mask >> j & 1 == 1 { x[j] } else { b[j] })
                    .collect();
                f(&row)
            })
            .sum::<f64>()
            / background.len() as f64
    };
    let values: Vec<f64> = (0..1usize << d).map(value).collect();
    (0..d)
        .map(|i| {
            (0..1usize << d)
                .filter(|s| s >> i & 1 == 0)
                .map(|s| {
                    let k = s.count_ones() as usize;
                    fact[k] * fact[d - k - 1] / fact[d] * (values[s | 1 << i] - values[s])
                })
                .sum()
        })
        .collect()
}
