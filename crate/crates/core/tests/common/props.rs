//! Strategies and checks behind the property suites. `properties.rs` drives
//! them through `proptest!`; the acceptance runner drives them directly.

use std::collections::HashMap;

use crystal_core::design::{InsightsDesign, SuperFeatureMapping};
use crystal_core::export::{read_jsonl, write_jsonl};
use crystal_core::interpreter::{AttributionList, Method, RankingKey};
use crystal_core::model_io::{load_bundle, write_bundle, DatasetBundle, Sample};
use crystal_core::narrative::{
    collect_super_values, format_number, rank_super_features, render_narrative, EngineConfig,
    ExplanationRecord, Narrative, Paragraph, RankedSuper,
};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use super::{bundle_from_rows, design, manifest};

pub const CASES: u32 = 1000;
pub const MAX_SUPERS: usize = 4;

/// A random but always-valid design over `f0..f{d-1}`.
#[derive(Debug, Clone)]
pub struct DesignSpec {
    super_of: Vec<usize>,
    ultra_of: [usize; MAX_SUPERS],
    weights: Vec<f64>,
    words: Vec<String>,
    /// Per super: rotation of the item order in the sentence.
    shuffle: [u64; MAX_SUPERS],
    /// Per super: no extra item, a signed-percent one, or a plain number.
    extra: [Option<bool>; MAX_SUPERS],
}

pub fn design_spec() -> impl Strategy<Value = DesignSpec> {
    (2usize..=8).prop_flat_map(|d| {
        (
            prop::collection::vec(0..MAX_SUPERS, d),
            [0usize..3, 0usize..3, 0usize..3, 0usize..3],
            prop::collection::vec(prop::sample::select(vec![1.0, 0.75, 0.5, 0.25, 0.0]), d),
            prop::collection::vec("[A-Za-z0-9 ,.$%()'-]{0,8}", 4),
            any::<[u64; MAX_SUPERS]>(),
            any::<[Option<bool>; MAX_SUPERS]>(),
        )
            .prop_map(
                |(super_of, ultra_of, weights, words, shuffle, extra)| DesignSpec {
                    super_of,
                    ultra_of,
                    weights,
                    words,
                    shuffle,
                    extra,
                },
            )
    })
}

impl DesignSpec {
    pub fn d(&self) -> usize {
        self.super_of.len()
    }

    fn members(&self, s: usize) -> Vec<usize> {
        (0..self.d()).filter(|&j| self.super_of[j] == s).collect()
    }

    fn feature_info(&self) -> String {
        let mut csv = String::from(
            "Original-Feature,Super-Feature,Ultra-Feature,Category,Insight Type,Insight Item,Insight Threshold,Insight Weight,Source\n",
        );
        for j in 0..self.d() {
            let s = self.super_of[j];
            let u = self.ultra_of[s];
            csv += &format!("f{j},s{s},u{u},c{u},t{s},i{j},,{},model\n", self.weights[j]);
        }
        csv
    }

    fn templates(&self) -> String {
        let mut doc = serde_json::Map::new();
        for s in 0..MAX_SUPERS {
            let mut items = self.members(s);
            if items.is_empty() {
                continue;
            }
            let n = items.len();
            items.rotate_left(self.shuffle[s] as usize % n);
            let mut text = format!("{}{{super_name}}", self.words[0]);
            for (k, j) in items.iter().enumerate() {
                text += &format!("{}{{i{j}}}", self.words[1 + k % 3]);
            }
            let mut t = serde_json::json!({});
            if let Some(percent) = self.extra[s] {
                let (a, b) = (items[0], items[n - 1]);
                let (expression, format) = if percent {
                    (format!("(i{a}-i{b})/i{b}*100"), "signed_percent")
                } else {
                    (format!("i{a}*2 - i{b}"), "number")
                };
                text += "{x}";
                t["extra_items"] = serde_json::json!([
                    {"name": "x", "expression": expression, "format": format}
                ]);
            }
            t["text"] = text.into();
            doc.insert(format!("t{s}"), t);
        }
        serde_json::Value::Object(doc).to_string()
    }

    fn bundle(&self, row: Vec<f64>) -> DatasetBundle {
        let names: Vec<String> = (0..self.d()).map(|j| format!("f{j}")).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        bundle_from_rows(&names, vec![row], vec![0.5])
    }

    fn design(&self, bundle: &DatasetBundle) -> InsightsDesign {
        design(&self.feature_info(), &self.templates(), bundle)
    }

    /// File order of a super = its first line in the Feature Info File.
    fn first_line(&self, s: usize) -> usize {
        self.super_of.iter().position(|&x| x == s).unwrap()
    }
}

fn dense_attribution(importances: &[f64], key: RankingKey) -> AttributionList {
    AttributionList::from_dense("s0", importances, Method::Lime, 0.0, key)
}

/// Exactly representable importances, so that scaling by [`scale`] is exact
/// and cannot merge two distinct scores into a tie.
fn importances(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-1000i32..=1000).prop_map(|k| k as f64 / 64.0), d)
}

fn scale() -> impl Strategy<Value = f64> {
    prop_oneof![
        (1u32..=1000).prop_map(f64::from),
        (-20i32..=20).prop_map(|e| 2f64.powi(e)),
    ]
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6..1e6f64,
        (-10_000i64..10_000).prop_map(|v| v as f64),
        Just(0.0),
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
    ]
}

fn spec_with_importances() -> impl Strategy<Value = (DesignSpec, Vec<f64>)> {
    design_spec().prop_flat_map(|s| {
        let d = s.d();
        (Just(s), importances(d))
    })
}

fn names_of(ranked: &[RankedSuper]) -> Vec<String> {
    ranked.iter().map(|r| r.name.clone()).collect()
}

// ---- argsort invariance ---------------------------------------------------

pub type ScalingCase = ((DesignSpec, Vec<f64>), f64, usize, bool);

pub fn scaling_case() -> impl Strategy<Value = ScalingCase> {
    (spec_with_importances(), scale(), 1usize..=3, any::<bool>())
}

pub fn check_scaling(((spec, imps), c, k, absolute): ScalingCase) -> Result<(), TestCaseError> {
    let design = spec.design(&spec.bundle(vec![1.0; spec.d()]));
    let key = if absolute {
        RankingKey::Absolute
    } else {
        RankingKey::Signed
    };
    let cfg = EngineConfig {
        dedup_k: k,
        max_narratives: 10,
        ..Default::default()
    };
    let scaled: Vec<f64> = imps.iter().map(|v| v * c).collect();
    let a = rank_super_features(&design.mapping, &dense_attribution(&imps, key), &cfg);
    let b = rank_super_features(&design.mapping, &dense_attribution(&scaled, key), &cfg);
    prop_assert_eq!(names_of(&a), names_of(&b));
    Ok(())
}

// ---- dedup cardinality ----------------------------------------------------

pub type DedupCase = ((DesignSpec, Vec<f64>), usize);

pub fn dedup_case() -> impl Strategy<Value = DedupCase> {
    (spec_with_importances(), 1usize..=3)
}

pub fn check_dedup(((spec, imps), k): DedupCase) -> Result<(), TestCaseError> {
    let design = spec.design(&spec.bundle(vec![1.0; spec.d()]));
    let cfg = EngineConfig {
        dedup_k: k,
        max_narratives: 100,
        ..Default::default()
    };
    let ranked = rank_super_features(
        &design.mapping,
        &dense_attribution(&imps, RankingKey::Signed),
        &cfg,
    );

    // Oracle computed from the generated design: score = max(importance × weight),
    // negatives dropped, top k per ultra-feature, ties by file order.
    let order = |a: &(f64, usize), b: &(f64, usize)| {
        b.0.total_cmp(&a.0)
            .then(spec.first_line(a.1).cmp(&spec.first_line(b.1)))
    };
    let mut by_ultra: HashMap<usize, Vec<(f64, usize)>> = HashMap::new();
    for s in 0..MAX_SUPERS {
        let score = spec
            .members(s)
            .iter()
            .map(|&j| imps[j] * spec.weights[j])
            .fold(f64::NEG_INFINITY, f64::max);
        if score >= 0.0 {
            by_ultra
                .entry(spec.ultra_of[s])
                .or_default()
                .push((score, s));
        }
    }
    let mut expected = Vec::new();
    for group in by_ultra.values_mut() {
        group.sort_by(order);
        expected.extend(group.iter().take(k).copied());
    }
    expected.sort_by(order);
    let expected: Vec<String> = expected.iter().map(|(_, s)| format!("s{s}")).collect();
    prop_assert_eq!(names_of(&ranked), expected);

    let mut per_ultra: HashMap<&str, usize> = HashMap::new();
    for r in &ranked {
        *per_ultra
            .entry(&design.mapping.supers()[r.index].ultra_feature)
            .or_default() += 1;
    }
    prop_assert!(per_ultra.values().all(|&n| n <= k));
    prop_assert!(ranked
        .windows(2)
        .all(|w| w[0].importance >= w[1].importance));
    Ok(())
}

// ---- monotone weights -----------------------------------------------------

pub type WeightCase = ((DesignSpec, Vec<f64>), usize, f64, usize);

pub fn weight_case() -> impl Strategy<Value = WeightCase> {
    (
        spec_with_importances(),
        0..MAX_SUPERS,
        0.0..=1.0f64,
        1usize..=3,
    )
}

pub fn check_weight(((spec, imps), target, factor, k): WeightCase) -> Result<(), TestCaseError> {
    let mut design = spec.design(&spec.bundle(vec![1.0; spec.d()]));
    let name = format!("s{target}");
    let Some(s) = design.mapping.get(&name) else {
        return Ok(());
    };
    let lowest = s
        .members
        .iter()
        .map(|m| m.weight)
        .fold(f64::INFINITY, f64::min);
    let cfg = EngineConfig {
        dedup_k: k,
        max_narratives: 100,
        ..Default::default()
    };
    let attr = dense_attribution(&imps, RankingKey::Signed);
    let position = |m: &SuperFeatureMapping| {
        names_of(&rank_super_features(m, &attr, &cfg))
            .iter()
            .position(|n| *n == name)
            .unwrap_or(usize::MAX)
    };
    let before = position(&design.mapping);
    design.mapping.set_weight(&name, lowest * factor);
    prop_assert!(position(&design.mapping) >= before);
    Ok(())
}

// ---- rendering totality ---------------------------------------------------

pub type RenderCase = (DesignSpec, Vec<f64>);

pub fn render_case() -> impl Strategy<Value = RenderCase> {
    design_spec().prop_flat_map(|s| {
        let d = s.d();
        (Just(s), prop::collection::vec(finite(), d))
    })
}

pub fn check_render((spec, row): RenderCase) -> Result<(), TestCaseError> {
    let bundle = spec.bundle(row.clone());
    let design = spec.design(&bundle);
    let values = collect_super_values(&design.mapping, &bundle.samples()[0], &design.user_values);
    for (s, items) in design.mapping.supers().iter().zip(values) {
        let items = items.unwrap();
        let text = render_narrative(design.mapping.template(s), &s.name, &items);
        prop_assert!(!text.contains('{') && !text.contains('}'), "{}", text);
        // Every model feature of the super shows up with its value.
        for m in s.model_members() {
            let shown = format_number(row[m.index.unwrap()]);
            prop_assert!(text.contains(&shown), "{} missing {}", text, shown);
        }
    }
    Ok(())
}

// ---- jsonl round trip -----------------------------------------------------

fn record() -> impl Strategy<Value = ExplanationRecord> {
    let narrative = (".*", finite(), ".*", ".*", ".*").prop_map(
        |(text, importance, super_feature, ultra_feature, category)| Narrative {
            text,
            importance,
            super_feature,
            ultra_feature,
            category,
        },
    );
    let paragraph = (".*", ".*", finite(), 0usize..10).prop_map(
        |(category, text, importance, member_count)| Paragraph {
            category,
            text,
            importance,
            member_count,
        },
    );
    (
        ".*",
        ".*",
        prop::collection::vec(narrative, 0..4),
        prop::collection::vec(paragraph, 0..3),
        prop::collection::vec(".*", 0..2),
    )
        .prop_map(|(sample_id, headline, narratives, paragraphs, warnings)| {
            ExplanationRecord {
                sample_id,
                headline,
                narratives,
                paragraphs,
                warnings,
            }
        })
}

pub fn records() -> impl Strategy<Value = Vec<ExplanationRecord>> {
    prop::collection::vec(record(), 0..5)
}

pub fn check_jsonl(records: Vec<ExplanationRecord>) -> Result<(), TestCaseError> {
    let mut buf = Vec::new();
    write_jsonl(&records, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    prop_assert_eq!(text.lines().count(), records.len());
    let back: Vec<ExplanationRecord> = read_jsonl(&text).unwrap();
    prop_assert_eq!(back, records);
    Ok(())
}

// ---- bundle round trip ----------------------------------------------------

pub type BundleCase = (
    std::collections::HashSet<String>,
    HashMap<String, (Vec<f64>, f64)>,
);

pub fn bundle_case() -> impl Strategy<Value = BundleCase> {
    (1usize..6).prop_flat_map(|d| {
        (
            prop::collection::hash_set("[a-z_][a-z0-9_ ]{0,10}", d),
            prop::collection::hash_map(
                ".{1,12}",
                (prop::collection::vec(finite(), d), finite()),
                0..8,
            ),
        )
    })
}

pub fn check_bundle((names, samples): BundleCase) -> Result<(), TestCaseError> {
    let names: Vec<String> = names.into_iter().collect();
    let samples: Vec<Sample> = samples
        .into_iter()
        .map(|(sample_id, (features, score))| Sample {
            sample_id,
            features,
            score,
        })
        .collect();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let bundle = DatasetBundle::new(manifest(&name_refs, samples.len()), samples).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = write_bundle(&bundle, dir.path(), "manifest.json").unwrap();
    let loaded = load_bundle(&path).unwrap();
    prop_assert_eq!(&loaded, &bundle);
    // Serialising the loaded bundle again gives the same bytes.
    let dir2 = tempfile::tempdir().unwrap();
    write_bundle(&loaded, dir2.path(), "manifest.json").unwrap();
    for f in ["manifest.json", "samples.jsonl"] {
        prop_assert_eq!(
            std::fs::read(dir.path().join(f)).unwrap(),
            std::fs::read(dir2.path().join(f)).unwrap()
        );
    }
    Ok(())
}
