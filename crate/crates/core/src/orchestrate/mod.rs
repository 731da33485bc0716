//! Pipeline configuration and the self-training loop: pretrain a light model
//! on the small annotated set, then repeatedly search an unannotated or
//! weakly annotated pool for new characters and retrain on the union.

mod config;
mod timing;

use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

pub use config::{Config, EvalConfig, InitFrom, LoopConfig, LoopSection, Schedules, SynthConfig};
pub use timing::{timing_report, TimingReport, PUBLISHED_DETECT_S, PUBLISHED_LINES_S};

use crate::datamodel::{
    save_detections, save_manifest, write_json, DatasetManifest, DetectionSet, DetectionWriter,
    Tier,
};
use crate::detector::{train, DetectorConfig, DetectorModel, ManifestRef, TrainSchedule};
use crate::error::{Error, Result};
use crate::eval::{char_eval_inputs, eval_lines, total_counts, Counts, EvalReport, Level};
use crate::linegroup::{extract_lines, FlowGraphConfig, ImageLines};
use crate::mining::{mine_dataset, mined_as_detections, merge_training_set, MinedSample, MiningReport};

pub fn manifest_ref(manifest: &DatasetManifest) -> ManifestRef {
    ManifestRef {
        name: manifest.name.clone(),
        sha256: manifest.digest(),
    }
}

/// Runs the detector over every image of `manifest`, in manifest order.
pub fn detect_manifest(model: &DetectorModel, manifest: &DatasetManifest) -> Result<DetectionSet> {
    let mut out = DetectionSet::with_capacity(manifest.len());
    for r in &manifest.records {
        out.insert(r.image_id.clone(), model.detect(&load_gray(manifest, r)?)?);
    }
    Ok(out)
}

/// Like [`detect_manifest`] but streams the dump to `path` as it goes.
pub fn detect_manifest_to(
    model: &DetectorModel,
    manifest: &DatasetManifest,
    path: &Path,
) -> Result<DetectionSet> {
    let mut w = DetectionWriter::create(path, &manifest.name)?;
    let mut out = DetectionSet::with_capacity(manifest.len());
    for r in &manifest.records {
        let cands = model.detect(&load_gray(manifest, r)?)?;
        w.write(&r.image_id, &cands)?;
        out.insert(r.image_id.clone(), cands);
    }
    w.finish()?;
    Ok(out)
}

pub(crate) fn load_gray(
    manifest: &DatasetManifest,
    record: &crate::datamodel::ImageRecord,
) -> Result<image::GrayImage> {
    let path = manifest.resolve_path(record);
    Ok(image::open(&path)
        .map_err(|source| Error::Image { path, source })?
        .to_luma8())
}

/// Trains the light model on the fully annotated set. The result is round 0
/// and records the manifest digest.
pub fn pretrain_light(
    detector: &DetectorConfig,
    full: &DatasetManifest,
    schedule: &TrainSchedule,
) -> Result<DetectorModel> {
    if full.is_empty() {
        return Err(Error::validation(format!("manifest {} is empty", full.name)));
    }
    if let Some(r) = full.records.iter().find(|r| r.tier != Tier::Full) {
        return Err(Error::validation(format!(
            "pretraining needs full-tier records, {} is {:?}",
            r.image_id, r.tier
        )));
    }
    let model = DetectorModel::new(detector.clone(), schedule.seed)?;
    let mut model = train(model, full, schedule)?;
    model.metadata.round = 0;
    model.metadata.parent_checkpoint = None;
    model.metadata.mined_with = None;
    model.metadata.source_manifests = vec![manifest_ref(full)];
    Ok(model)
}

/// Everything one search-and-retrain round produced.
#[derive(Debug, Clone)]
pub struct RoundOutput {
    pub detections: DetectionSet,
    pub mined: Vec<MinedSample>,
    pub report: MiningReport,
    pub merged: DatasetManifest,
    pub model: DetectorModel,
    /// False when nothing was mined and the search model was returned as is.
    pub retrained: bool,
}

/// One round: detect on `source` with `search`, mine, merge with `base` and
/// retrain starting from `init`'s weights.
///
/// The returned model is tagged one round past `search`. An empty mined set
/// skips retraining and returns `search` unchanged.
pub fn run_round(
    search: &DetectorModel,
    init: &DetectorModel,
    base: &DatasetManifest,
    source: &DatasetManifest,
    config: &LoopConfig,
) -> Result<RoundOutput> {
    config.validate()?;
    check_disjoint(base, source)?;
    let detections = detect_manifest(search, source)?;
    finish_round(search, init, base, source, config, detections)
}

fn check_disjoint(base: &DatasetManifest, source: &DatasetManifest) -> Result<()> {
    let ids: std::collections::HashSet<&str> =
        base.records.iter().map(|r| r.image_id.as_str()).collect();
    match source.records.iter().find(|r| ids.contains(r.image_id.as_str())) {
        Some(r) => Err(Error::validation(format!(
            "source image {} is also in the base set {}",
            r.image_id, base.name
        ))),
        None => Ok(()),
    }
}

fn finish_round(
    search: &DetectorModel,
    init: &DetectorModel,
    base: &DatasetManifest,
    source: &DatasetManifest,
    config: &LoopConfig,
    detections: DetectionSet,
) -> Result<RoundOutput> {
    let round = search.metadata.round + 1;
    let (mined, report) = mine_dataset(&detections, source, config.mode, &config.mining, round)?;
    if mined.is_empty() {
        warn!(
            "round {round}: nothing mined from {}, keeping model {}",
            source.name,
            search.checkpoint_id()
        );
        return Ok(RoundOutput {
            detections,
            mined,
            report,
            merged: base.clone(),
            model: search.clone(),
            retrained: false,
        });
    }
    let merged = merge_training_set(base, &mined, source)?;
    info!(
        "round {round}: mined {} samples in {} images, retraining on {} images",
        mined.len(),
        merged.len() - base.len(),
        merged.len()
    );
    let mut model = train(init.clone(), &merged, &config.schedules.retrain)?;
    model.metadata.round = round;
    model.metadata.mined_with = Some(search.checkpoint_id());
    model.metadata.source_manifests = vec![manifest_ref(base), manifest_ref(source), manifest_ref(&merged)];
    Ok(RoundOutput {
        detections,
        mined,
        report,
        merged,
        model,
        retrained: true,
    })
}

/// Character and line level scores of one model on a test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestScores {
    pub char_level: EvalReport,
    pub line_level: EvalReport,
}

/// Evaluates characters at the operating threshold and lines extracted with
/// `lines`. Line ground truth is the word boxes of the test records.
pub fn evaluate(
    model_id: &str,
    detections: &DetectionSet,
    test: &DatasetManifest,
    eval: &EvalConfig,
    lines: &FlowGraphConfig,
) -> Result<TestScores> {
    let inputs = char_eval_inputs(detections, test, eval.operating_threshold)?;
    let chars = total_counts(&inputs, eval.iou_min);
    let mut line_counts = Counts::default();
    for r in &test.records {
        let cands = detections
            .get(&r.image_id)
            .ok_or_else(|| Error::validation(format!("no detections for image {}", r.image_id)))?;
        let found = extract_lines(cands, lines);
        line_counts += eval_lines(&found, &r.words.boxes, eval.iou_min).0;
    }
    Ok(TestScores {
        char_level: EvalReport::new(&test.name, model_id, Level::Char, chars, eval.operating_threshold),
        line_level: EvalReport::new(&test.name, model_id, Level::Line, line_counts, lines.conf_floor),
    })
}

/// Text lines for every image of a detection dump.
pub fn extract_all_lines(detections: &DetectionSet, config: &FlowGraphConfig) -> Vec<ImageLines> {
    detections
        .iter()
        .map(|(id, cands)| ImageLines {
            image_id: id.clone(),
            lines: extract_lines(cands, config),
        })
        .collect()
}

/// Datasets the loop works on.
#[derive(Debug, Clone, Copy)]
pub struct LoopData<'a> {
    pub base: &'a DatasetManifest,
    pub source: &'a DatasetManifest,
    pub test: &'a DatasetManifest,
}

/// One executed round of [`run_loop`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub mined: usize,
    pub retrained: bool,
    pub checkpoint: String,
    pub scores: TestScores,
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
    _file: File,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(".lock");
        let file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => Error::Runtime(format!(
                    "{} is locked by another run (remove {} if it is stale)",
                    dir.display(),
                    path.display()
                )),
                _ => Error::io(&path, e),
            })?;
        Ok(Self { path, _file: file })
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Mined-count change below which the loop stops.
pub const EARLY_STOP_CHANGE: f64 = 0.01;

/// Runs up to `config.rounds` rounds starting from `light`, evaluating on the
/// test set after each.
///
/// Writes `round-<k>/` under `out` with the source detections, the mined dump
/// and its report, the merged manifest, the checkpoint, test detections and
/// evaluation reports, plus `history.json` at the top. Stops after a round
/// whose mined count moved by less than 1% from the previous one.
pub fn run_loop(
    config: &LoopConfig,
    lines: &FlowGraphConfig,
    eval: &EvalConfig,
    data: LoopData<'_>,
    light: &DetectorModel,
    out: &Path,
) -> Result<Vec<RoundRecord>> {
    config.validate()?;
    check_disjoint(data.base, data.source)?;
    let _lock = DirLock::acquire(out)?;
    std::fs::write(out.join("loop.toml"), config.to_toml()?).map_err(|e| Error::io(out, e))?;

    let mut history: Vec<RoundRecord> = Vec::new();
    let mut latest = light.clone();
    for k in 1..=config.rounds {
        let dir = out.join(format!("round-{k}"));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let init = match config.init_from {
            InitFrom::Light => light,
            InitFrom::Previous => &latest,
        };
        let dets = detect_manifest_to(&latest, data.source, &dir.join("source_detections.jsonl"))?;
        let mut step = finish_round(&latest, init, data.base, data.source, config, dets)?;
        // a skipped retrain must still advance the round counter
        step.model.metadata.round = latest.metadata.round + 1;
        save_detections(dir.join("mined.jsonl"), &data.source.name, &mined_as_detections(&step.mined))?;
        write_json(dir.join("mining_report.json"), &step.report)?;
        save_manifest(&step.merged, dir.join("merged.jsonl"))?;
        step.model.save(dir.join("model.ckpt"))?;

        let test_dets = detect_manifest_to(&step.model, data.test, &dir.join("test_detections.jsonl"))?;
        let id = step.model.checkpoint_id();
        let scores = evaluate(&id, &test_dets, data.test, eval, lines)?;
        scores.char_level.save(dir.join("report_char.json"))?;
        scores.line_level.save(dir.join("report_line.json"))?;
        info!(
            "round {k}: mined {} char F {:.4} line F {:.4}",
            step.mined.len(),
            scores.char_level.fscore,
            scores.line_level.fscore
        );

        let stop = history
            .last()
            .is_some_and(|prev| mined_change(prev.mined, step.mined.len()) < EARLY_STOP_CHANGE);
        history.push(RoundRecord {
            round: k,
            mined: step.mined.len(),
            retrained: step.retrained,
            checkpoint: id,
            scores,
        });
        write_json(out.join("history.json"), &history)?;
        latest = step.model;
        if stop {
            info!("mined count settled after round {k}, stopping");
            break;
        }
    }
    Ok(history)
}

/// Relative change of the mined count; two empty rounds count as no change.
pub fn mined_change(prev: usize, cur: usize) -> f64 {
    if prev == 0 {
        return if cur == 0 { 0.0 } else { f64::INFINITY };
    }
    (cur as f64 - prev as f64).abs() / prev as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mined_change_rule() {
        assert_eq!(mined_change(0, 0), 0.0);
        assert!(mined_change(0, 1).is_infinite());
        assert!(mined_change(1000, 1009) < EARLY_STOP_CHANGE);
        assert!(mined_change(1000, 1010) >= EARLY_STOP_CHANGE);
        assert!(mined_change(1000, 989) >= EARLY_STOP_CHANGE);
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = DirLock::acquire(dir.path()).unwrap();
        assert!(matches!(DirLock::acquire(dir.path()), Err(Error::Runtime(_))));
        drop(lock);
        DirLock::acquire(dir.path()).unwrap();
    }
}
