//! Single-shot character detector: anchors, network, training and inference.

pub mod anchors;
pub mod checkpoint;
pub mod net;
pub mod nms;
pub mod train;

use std::path::Path;

use image::{imageops, GrayImage};
use serde::{Deserialize, Serialize};

use crate::datamodel::CharCandidate;
use crate::error::{Error, Result};
use crate::geometry::BBox;

pub use anchors::{
    decode, encode, generate_anchors, match_anchors, AnchorConfig, AnchorMatch, DefaultAnchor,
    ScaleLevel,
};
pub use net::{BackboneConfig, ConvSpec, Network};
pub use nms::{nms, NMS_OVERLAP};
pub use train::{train, TrainReport, TrainSchedule, TrainStage};

/// Candidates kept before suppression.
pub const PRE_NMS_TOP_K: usize = 1000;
/// Detections kept after suppression.
pub const POST_NMS_TOP_K: usize = 500;

/// Log-size offsets are clamped to this magnitude when decoding predictions.
const MAX_LOG_SCALE: f64 = 4.0;

/// The network regresses box offsets divided by these per-coordinate
/// variances, which keeps the localization loss out of its flat quadratic
/// region for small offsets.
pub const BOX_VARIANCE: [f64; 4] = [0.1, 0.1, 0.2, 0.2];

/// Architecture and input geometry of a detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Square training input side in pixels.
    pub input_size: usize,
    /// Square inference input side in pixels.
    pub test_size: usize,
    pub backbone: BackboneConfig,
    /// Anchor layout at `input_size`.
    pub anchors: AnchorConfig,
}

impl Default for DetectorConfig {
    /// Desk-scale detector: 128 px input, four downsampling stages, heads on
    /// the last three.
    fn default() -> Self {
        let conv = |out_channels, stride| ConvSpec {
            out_channels,
            stride,
        };
        let level = |f, scales: &[f64]| ScaleLevel {
            feature_map_size: f,
            anchor_scales: scales.to_vec(),
            aspect_ratios: vec![0.7],
        };
        Self {
            input_size: 128,
            test_size: 128,
            backbone: BackboneConfig {
                layers: vec![
                    conv(8, 2),
                    conv(16, 2),
                    conv(16, 1),
                    conv(32, 2),
                    conv(32, 1),
                    conv(32, 2),
                ],
                head_taps: vec![2, 4, 5],
            },
            anchors: AnchorConfig {
                levels: vec![
                    level(32, &[0.065, 0.09]),
                    level(16, &[0.125]),
                    level(8, &[0.18]),
                ],
            },
        }
    }
}

impl DetectorConfig {
    /// Full-resolution geometry: 512 px training input, 600 px testing.
    pub fn full_scale() -> Self {
        let desk = Self::default();
        let sizes = desk.backbone.head_sizes(512);
        Self {
            input_size: 512,
            test_size: 600,
            anchors: desk
                .anchors
                .with_feature_maps(&sizes)
                .expect("desk anchor layout is valid"),
            backbone: desk.backbone,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.anchors.validate()?;
        if self.input_size == 0 || self.test_size == 0 {
            return Err(Error::validation("input and test sizes must be positive"));
        }
        let sizes = self.backbone.head_sizes(self.input_size);
        let declared: Vec<usize> = self.anchors.levels.iter().map(|l| l.feature_map_size).collect();
        if sizes != declared {
            return Err(Error::validation(format!(
                "anchor feature maps {declared:?} do not match network outputs {sizes:?} at {} px",
                self.input_size
            )));
        }
        Ok(())
    }
}

/// A manifest that contributed to training, identified by content hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRef {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    /// Self-training round that produced the model; 0 for the light model.
    pub round: u32,
    pub seed: u64,
    pub schedule: Option<TrainSchedule>,
    pub source_manifests: Vec<ManifestRef>,
    /// Checkpoint id of the model whose weights initialized training.
    pub parent_checkpoint: Option<String>,
    /// Checkpoint id of the model that mined this model's extra samples.
    pub mined_with: Option<String>,
    pub report: Option<TrainReport>,
}

#[derive(Debug, Clone)]
pub struct DetectorModel {
    pub config: DetectorConfig,
    pub network: Network,
    pub metadata: TrainingMetadata,
}

impl DetectorModel {
    /// Freshly initialized model.
    pub fn new(config: DetectorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let per_cell = config
            .anchors
            .levels
            .iter()
            .map(ScaleLevel::anchors_per_cell)
            .collect();
        let network = Network::new(config.backbone.clone(), per_cell, seed)?;
        Ok(Self {
            config,
            network,
            metadata: TrainingMetadata {
                seed,
                ..TrainingMetadata::default()
            },
        })
    }

    /// Content hash of the parameters; stable across save/load.
    pub fn checkpoint_id(&self) -> String {
        checkpoint::params_digest(self.network.params())
    }

    /// Anchors for a square input of `side` pixels.
    pub fn anchors_for(&self, side: usize) -> Result<Vec<DefaultAnchor>> {
        let sizes = self.config.backbone.head_sizes(side);
        Ok(generate_anchors(&self.config.anchors.with_feature_maps(&sizes)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        checkpoint::load(path.as_ref())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save(self, path.as_ref())
    }

    /// Detects characters in `image` at the configured test size.
    pub fn detect(&self, image: &GrayImage) -> Result<Vec<CharCandidate>> {
        infer(self, image, self.config.test_size)
    }
}

/// Converts a grayscale image to the network's input tensor, standardized
/// to zero mean and unit variance per image.
pub fn preprocess(image: &GrayImage, side: usize) -> Vec<f32> {
    // flat images would otherwise blow sensor noise up to unit variance
    const MIN_STD: f32 = 8.0;
    let side32 = side as u32;
    let resized;
    let img = if image.width() == side32 && image.height() == side32 {
        image
    } else {
        resized = imageops::resize(image, side32, side32, imageops::FilterType::Triangle);
        &resized
    };
    let raw = img.as_raw();
    let n = raw.len().max(1) as f32;
    let mean = raw.iter().map(|&v| v as f32).sum::<f32>() / n;
    let var = raw.iter().map(|&v| (v as f32 - mean).powi(2)).sum::<f32>() / n;
    let inv = 1.0 / var.sqrt().max(MIN_STD);
    raw.iter().map(|&v| (v as f32 - mean) * inv).collect()
}

/// Per-anchor (text probability, raw offsets) for one forward pass.
pub(crate) fn anchor_predictions(
    network: &Network,
    acts: &net::Activations,
) -> Vec<(f32, [f32; 4])> {
    let mut out = Vec::new();
    for (h, &per_cell) in network.anchors_per_cell().iter().enumerate() {
        let (head, side) = acts.head(network, h);
        let plane = side * side;
        for cell in 0..plane {
            for a in 0..per_cell {
                let v = |t: usize| head[(a * net::VALUES_PER_ANCHOR + t) * plane + cell];
                let (bg, txt) = (v(4), v(5));
                let m = bg.max(txt);
                let (eb, et) = ((bg - m).exp(), (txt - m).exp());
                out.push((et / (eb + et), [v(0), v(1), v(2), v(3)]));
            }
        }
    }
    out
}

/// Runs the detector and its post-processing.
///
/// The image is resized to `test_size` square, candidates are ranked by text
/// score, the best [`PRE_NMS_TOP_K`] go through suppression at
/// [`NMS_OVERLAP`], and at most [`POST_NMS_TOP_K`] survivors are returned in
/// original image coordinates.
pub fn infer(model: &DetectorModel, image: &GrayImage, test_size: usize) -> Result<Vec<CharCandidate>> {
    if test_size == 0 {
        return Err(Error::validation("test size must be positive"));
    }
    let input = preprocess(image, test_size);
    let mut acts = net::Activations::default();
    model.network.forward(&input, test_size, &mut acts);
    let anchors = model.anchors_for(test_size)?;
    let preds = anchor_predictions(&model.network, &acts);
    debug_assert_eq!(preds.len(), anchors.len());

    let (w, h) = (image.width() as f64, image.height() as f64);
    let mut cands = Vec::with_capacity(preds.len());
    for ((score, off), anchor) in preds.iter().zip(&anchors) {
        let v = |k: usize| off[k] as f64 * BOX_VARIANCE[k];
        let off = [
            v(0),
            v(1),
            v(2).clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE),
            v(3).clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE),
        ];
        let Some(bbox) = decode(&off, anchor)
            .ok()
            .and_then(|b| b.scale(w, h).ok())
            .and_then(|b| b.clip(w, h))
        else {
            continue;
        };
        let score = (*score as f64).clamp(0.0, 1.0);
        cands.push(CharCandidate { bbox, score });
    }
    cands.sort_by(nms::rank_order);
    cands.truncate(PRE_NMS_TOP_K);
    let mut kept = nms(&cands, NMS_OVERLAP);
    kept.truncate(POST_NMS_TOP_K);
    Ok(kept)
}

/// Ground truth boxes normalized to `[0, 1]` image coordinates.
pub(crate) fn normalize_boxes(boxes: &[BBox], width: u32, height: u32) -> Vec<BBox> {
    let (sx, sy) = (1.0 / width as f64, 1.0 / height as f64);
    boxes
        .iter()
        .filter_map(|b| b.scale(sx, sy).ok())
        .collect()
}
