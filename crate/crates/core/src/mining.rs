//! Mining new positive character samples from detector output.
//!
//! Semi-supervised mining keeps candidates whose score exceeds `S`. Weakly
//! supervised mining keeps candidates whose score exceeds `S'` and whose
//! horizontal and vertical overlap with one word box covers more than `T_x`
//! of their width and `T_y` of their height. All comparisons are strict.

use std::collections::{HashMap, HashSet};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    CharAnnotation, CharCandidate, DatasetManifest, DetectionSet, ImageRecord, Provenance,
    SourceTier, Tier, WeakAnnotation,
};
use crate::error::{Error, Result};
use crate::geometry::{directional_intersections, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningConfig {
    /// `S`: score threshold without annotations.
    pub semi_threshold: f64,
    /// `S'`: score threshold inside word boxes.
    pub weak_threshold: f64,
    /// `T_x`: required share of candidate width covered by the word box.
    pub overlap_x: f64,
    /// `T_y`: required share of candidate height covered by the word box.
    pub overlap_y: f64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            semi_threshold: 0.5,
            weak_threshold: 0.2,
            overlap_x: 0.8,
            overlap_y: 0.8,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.semi_threshold,
            self.weak_threshold,
            self.overlap_x,
            self.overlap_y,
        ];
        if all.iter().all(|v| *v > 0.0 && *v < 1.0) {
            Ok(())
        } else {
            Err(Error::validation(format!(
                "mining thresholds must lie in (0, 1): {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinedSample {
    pub image_id: String,
    pub bbox: BBox,
    pub score: f64,
    pub source_tier: SourceTier,
    /// Self-training round that produced the sample (1-based).
    pub round: u32,
}

/// True when the candidate passes the word-box overlap test against `g`.
pub fn overlaps_word(c: &BBox, g: &BBox, config: &MiningConfig) -> bool {
    let (ix, iy) = directional_intersections(c, g);
    ix / c.width() > config.overlap_x && iy / c.height() > config.overlap_y
}

/// Candidates with score strictly above `S`, in input order.
pub fn mine_semi(
    image_id: &str,
    candidates: &[CharCandidate],
    config: &MiningConfig,
    round: u32,
) -> Vec<MinedSample> {
    candidates
        .iter()
        .filter(|c| c.score > config.semi_threshold)
        .map(|c| sample(image_id, c, SourceTier::Semi, round))
        .collect()
}

/// Candidates with score strictly above `S'` that fit inside one word box,
/// in input order. Empty when there are no word boxes.
pub fn mine_weak(
    image_id: &str,
    candidates: &[CharCandidate],
    weak: &WeakAnnotation,
    config: &MiningConfig,
    round: u32,
) -> Vec<MinedSample> {
    candidates
        .iter()
        .filter(|c| {
            c.score > config.weak_threshold
                && weak.boxes.iter().any(|g| overlaps_word(&c.bbox, g, config))
        })
        .map(|c| sample(image_id, c, SourceTier::Weak, round))
        .collect()
}

fn sample(image_id: &str, c: &CharCandidate, source_tier: SourceTier, round: u32) -> MinedSample {
    MinedSample {
        image_id: image_id.to_string(),
        bbox: c.bbox,
        score: c.score,
        source_tier,
        round,
    }
}

/// Summary written next to every mined dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningReport {
    pub mode: SourceTier,
    pub round: u32,
    pub config: MiningConfig,
    pub source_manifest: String,
    pub images: usize,
    pub total: usize,
    pub counts: IndexMap<String, usize>,
}

/// Mines every image of `source` from its detections.
///
/// Semi mode never looks at annotations; weak mode only reads word boxes.
pub fn mine_dataset(
    detections: &DetectionSet,
    source: &DatasetManifest,
    mode: SourceTier,
    config: &MiningConfig,
    round: u32,
) -> Result<(Vec<MinedSample>, MiningReport)> {
    config.validate()?;
    let mut mined = Vec::new();
    let mut counts = IndexMap::new();
    for record in &source.records {
        let cands = detections.get(&record.image_id).ok_or_else(|| {
            Error::validation(format!("no detections for image {}", record.image_id))
        })?;
        let found = match mode {
            SourceTier::Semi => mine_semi(&record.image_id, cands, config, round),
            SourceTier::Weak => mine_weak(&record.image_id, cands, &record.words, config, round),
        };
        counts.insert(record.image_id.clone(), found.len());
        mined.extend(found);
    }
    let report = MiningReport {
        mode,
        round,
        config: *config,
        source_manifest: source.name.clone(),
        images: source.len(),
        total: mined.len(),
        counts,
    };
    Ok((mined, report))
}

/// Detections restricted to mined samples, for persisting as a standard dump.
pub fn mined_as_detections(mined: &[MinedSample]) -> DetectionSet {
    let mut out = DetectionSet::new();
    for m in mined {
        out.entry(m.image_id.clone()).or_default().push(CharCandidate {
            bbox: m.bbox,
            score: m.score,
        });
    }
    out
}

/// Base set plus one fully annotated record per source image that received
/// mined samples. Base records are copied untouched.
pub fn merge_training_set(
    base: &DatasetManifest,
    mined: &[MinedSample],
    source: &DatasetManifest,
) -> Result<DatasetManifest> {
    let base_ids: HashSet<&str> = base.records.iter().map(|r| r.image_id.as_str()).collect();
    let source_ids: HashSet<&str> = source.records.iter().map(|r| r.image_id.as_str()).collect();
    let mut by_image: HashMap<&str, Vec<&MinedSample>> = HashMap::new();
    for m in mined {
        if base_ids.contains(m.image_id.as_str()) {
            return Err(Error::validation(format!(
                "mined image {} is already in the annotated base set",
                m.image_id
            )));
        }
        if !source_ids.contains(m.image_id.as_str()) {
            return Err(Error::validation(format!(
                "mined image {} is not in source manifest {}",
                m.image_id, source.name
            )));
        }
        by_image.entry(m.image_id.as_str()).or_default().push(m);
    }

    let same_root = base.base_dir == source.base_dir;
    let mut merged = DatasetManifest::new(if mined.is_empty() {
        base.name.clone()
    } else {
        format!("{}+{}", base.name, source.name)
    });
    merged.version = base.version.clone();
    merged.base_dir = if same_root { base.base_dir.clone() } else { None };
    for r in &base.records {
        let mut r = r.clone();
        if !same_root {
            r.image_path = base.resolve_path(&r);
        }
        merged.records.push(r);
    }
    for r in &source.records {
        let Some(samples) = by_image.get(r.image_id.as_str()) else {
            continue;
        };
        let first = samples[0];
        merged.records.push(ImageRecord {
            image_id: r.image_id.clone(),
            image_path: if same_root {
                r.image_path.clone()
            } else {
                source.resolve_path(r)
            },
            width: r.width,
            height: r.height,
            tier: Tier::Full,
            chars: samples
                .iter()
                .map(|m| CharAnnotation {
                    bbox: m.bbox,
                    label: None,
                })
                .collect(),
            words: WeakAnnotation::default(),
            provenance: Some(Provenance {
                source_manifest: source.name.clone(),
                source_tier: first.source_tier,
                round: first.round,
            }),
        });
    }
    merged.validate()?;
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn cand(bbox: BBox, score: f64) -> CharCandidate {
        CharCandidate::new(bbox, score).unwrap()
    }

    fn scores(v: &[MinedSample]) -> Vec<f64> {
        v.iter().map(|m| m.score).collect()
    }

    #[test]
    fn semi_examples() {
        let cfg = MiningConfig::default();
        let box_ = b(0., 0., 5., 5.);
        let cs = [cand(box_, 0.6), cand(box_, 0.45), cand(box_, 0.9)];
        assert_eq!(scores(&mine_semi("i", &cs, &cfg, 1)), vec![0.6, 0.9]);
        assert!(mine_semi("i", &[cand(box_, 0.5)], &cfg, 1).is_empty());
        assert!(mine_semi("i", &[], &cfg, 1).is_empty());
    }

    #[test]
    fn weak_examples() {
        let cfg = MiningConfig::default();
        let c = b(0., 0., 10., 10.);
        let word = WeakAnnotation {
            boxes: vec![b(0., 0., 100., 12.)],
        };
        assert_eq!(mine_weak("i", &[cand(c, 0.25)], &word, &cfg, 1).len(), 1);
        assert!(mine_weak("i", &[cand(c, 0.15)], &word, &cfg, 1).is_empty());
        let side = WeakAnnotation {
            boxes: vec![b(8., 0., 20., 10.)],
        };
        assert!(mine_weak("i", &[cand(c, 0.9)], &side, &cfg, 1).is_empty());
        assert!(mine_weak("i", &[cand(c, 0.9)], &WeakAnnotation::default(), &cfg, 1).is_empty());
    }

    #[test]
    fn ratios_must_hold_for_the_same_word() {
        let cfg = MiningConfig::default();
        let c = b(0., 0., 10., 10.);
        // one word covers x fully, the other covers y fully; neither both
        let words = WeakAnnotation {
            boxes: vec![b(0., 5., 20., 30.), b(5., 0., 30., 10.)],
        };
        assert!(mine_weak("i", &[cand(c, 0.9)], &words, &cfg, 1).is_empty());
    }

    fn record(id: &str, tier: Tier) -> ImageRecord {
        ImageRecord {
            image_id: id.into(),
            image_path: format!("{id}.png").into(),
            width: 50,
            height: 50,
            tier,
            chars: if tier == Tier::Full {
                vec![CharAnnotation {
                    bbox: b(1., 1., 5., 5.),
                    label: Some('A'),
                }]
            } else {
                vec![]
            },
            words: WeakAnnotation::default(),
            provenance: None,
        }
    }

    fn manifests() -> (DatasetManifest, DatasetManifest) {
        let mut base = DatasetManifest::new("base");
        base.records.push(record("b1", Tier::Full));
        let mut src = DatasetManifest::new("src");
        src.records.push(record("s1", Tier::None));
        src.records.push(record("s2", Tier::None));
        (base, src)
    }

    fn mined(id: &str) -> MinedSample {
        MinedSample {
            image_id: id.into(),
            bbox: b(2., 2., 8., 8.),
            score: 0.7,
            source_tier: SourceTier::Semi,
            round: 1,
        }
    }

    #[test]
    fn merge_rules() {
        let (base, src) = manifests();
        let same = merge_training_set(&base, &[], &src).unwrap();
        assert_eq!(same.records, base.records);

        let merged = merge_training_set(&base, &[mined("s2"), mined("s2")], &src).unwrap();
        assert_eq!(merged.len(), base.len() + 1);
        assert_eq!(merged.records[0], base.records[0]);
        let added = &merged.records[1];
        assert_eq!(added.tier, Tier::Full);
        assert_eq!(added.chars.len(), 2);
        assert_eq!(added.provenance.as_ref().unwrap().round, 1);

        assert!(merge_training_set(&base, &[mined("b1")], &src).is_err());
        assert!(merge_training_set(&base, &[mined("zz")], &src).is_err());
    }

    #[test]
    fn thresholds_validated() {
        let mut cfg = MiningConfig::default();
        cfg.overlap_x = 1.0;
        assert!(cfg.validate().is_err());
    }

    fn arb_case() -> impl Strategy<Value = (Vec<CharCandidate>, WeakAnnotation)> {
        let bx = (0.0..60.0f64, 0.0..60.0f64, 1.0..30.0f64, 1.0..30.0f64)
            .prop_map(|(x, y, w, h)| b(x, y, x + w, y + h));
        (
            prop::collection::vec((bx.clone(), 0.0..=1.0f64), 0..20)
                .prop_map(|v| v.into_iter().map(|(bb, s)| cand(bb, s)).collect()),
            prop::collection::vec(bx, 0..4).prop_map(|boxes| WeakAnnotation { boxes }),
        )
    }

    proptest! {
        #[test]
        fn monotone_in_thresholds((cs, g) in arb_case(), lo in 0.05..0.5f64, hi in 0.5..0.95f64) {
            let loose = MiningConfig { semi_threshold: lo, weak_threshold: lo, overlap_x: lo, overlap_y: lo };
            let tight = MiningConfig { semi_threshold: hi, weak_threshold: hi, overlap_x: hi, overlap_y: hi };
            let ls = mine_semi("i", &cs, &loose, 1);
            for m in mine_semi("i", &cs, &tight, 1) {
                prop_assert!(ls.contains(&m));
            }
            let lw = mine_weak("i", &cs, &g, &loose, 1);
            for m in mine_weak("i", &cs, &g, &tight, 1) {
                prop_assert!(lw.contains(&m));
            }
        }

        #[test]
        fn weak_subset_of_semi_at_equal_threshold((cs, g) in arb_case(), s in 0.05..0.95f64) {
            let cfg = MiningConfig { semi_threshold: s, weak_threshold: s, ..MiningConfig::default() };
            let semi: Vec<(BBox, f64)> = mine_semi("i", &cs, &cfg, 1).iter().map(|m| (m.bbox, m.score)).collect();
            for m in mine_weak("i", &cs, &g, &cfg, 1) {
                prop_assert!(semi.contains(&(m.bbox, m.score)));
            }
        }

        #[test]
        fn exact_ground_truth_is_recovered(boxes in prop::collection::vec((0.0..60.0f64, 0.0..60.0f64, 1.0..30.0f64, 1.0..30.0f64), 1..10), s in 0.21..1.0f64) {
            let cfg = MiningConfig::default();
            let words: Vec<BBox> = boxes.iter().map(|&(x, y, w, h)| b(x, y, x + w, y + h)).collect();
            let cs: Vec<CharCandidate> = words.iter().map(|w| cand(*w, s)).collect();
            let kept = mine_weak("i", &cs, &WeakAnnotation { boxes: words }, &cfg, 1);
            prop_assert_eq!(kept.len(), cs.len());
        }
    }
}
