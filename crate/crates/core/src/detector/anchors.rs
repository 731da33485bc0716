//! Default anchors, the offset codec and ground-truth assignment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

/// Anchor layout of one prediction level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleLevel {
    /// Cells per side of the square feature map.
    pub feature_map_size: usize,
    /// Anchor sizes relative to the image side, in `(0, 1]`.
    pub anchor_scales: Vec<f64>,
    /// Width / height ratios.
    pub aspect_ratios: Vec<f64>,
}

impl ScaleLevel {
    pub fn anchors_per_cell(&self) -> usize {
        self.anchor_scales.len() * self.aspect_ratios.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    pub levels: Vec<ScaleLevel>,
}

impl AnchorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::validation("anchor config needs at least one level"));
        }
        for pair in self.levels.windows(2) {
            if pair[1].feature_map_size >= pair[0].feature_map_size {
                return Err(Error::validation(
                    "feature map sizes must strictly decrease across levels",
                ));
            }
        }
        for level in &self.levels {
            if level.feature_map_size == 0 {
                return Err(Error::validation("feature map size must be positive"));
            }
            if level.anchor_scales.is_empty() || level.aspect_ratios.is_empty() {
                return Err(Error::validation("every level needs scales and ratios"));
            }
            if level.anchor_scales.iter().any(|s| !(*s > 0.0 && *s <= 1.0)) {
                return Err(Error::validation("anchor scales must lie in (0, 1]"));
            }
            if level.aspect_ratios.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
                return Err(Error::validation("aspect ratios must be positive"));
            }
        }
        Ok(())
    }

    pub fn anchor_count(&self) -> usize {
        self.levels
            .iter()
            .map(|l| l.feature_map_size * l.feature_map_size * l.anchors_per_cell())
            .sum()
    }

    /// Same scales and ratios laid over different feature map sizes.
    pub fn with_feature_maps(&self, sizes: &[usize]) -> Result<AnchorConfig> {
        if sizes.len() != self.levels.len() {
            return Err(Error::validation("feature map count does not match levels"));
        }
        let levels = self
            .levels
            .iter()
            .zip(sizes)
            .map(|(l, &f)| ScaleLevel {
                feature_map_size: f,
                ..l.clone()
            })
            .collect();
        let cfg = AnchorConfig { levels };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Prior box in normalized image coordinates (center form).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefaultAnchor {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl DefaultAnchor {
    pub fn to_bbox(&self) -> BBox {
        BBox::from_center(self.cx, self.cy, self.w, self.h).expect("anchor extent is positive")
    }
}

/// One anchor per (cell, scale, ratio), ordered level-major, then row-major
/// over cells, with the aspect ratio varying fastest.
pub fn generate_anchors(config: &AnchorConfig) -> Vec<DefaultAnchor> {
    let mut out = Vec::with_capacity(config.anchor_count());
    for level in &config.levels {
        let f = level.feature_map_size as f64;
        for row in 0..level.feature_map_size {
            for col in 0..level.feature_map_size {
                let cx = (col as f64 + 0.5) / f;
                let cy = (row as f64 + 0.5) / f;
                for &s in &level.anchor_scales {
                    for &r in &level.aspect_ratios {
                        let sr = r.sqrt();
                        out.push(DefaultAnchor {
                            cx,
                            cy,
                            w: (s * sr).min(1.0),
                            h: (s / sr).min(1.0),
                        });
                    }
                }
            }
        }
    }
    out
}

/// Regression targets of `gt` relative to `anchor`:
/// `((cx - cx_a) / w_a, (cy - cy_a) / h_a, ln(w / w_a), ln(h / h_a))`.
pub fn encode(gt: &BBox, anchor: &DefaultAnchor) -> [f64; 4] {
    let (cx, cy) = gt.center();
    [
        (cx - anchor.cx) / anchor.w,
        (cy - anchor.cy) / anchor.h,
        (gt.width() / anchor.w).ln(),
        (gt.height() / anchor.h).ln(),
    ]
}

/// Inverse of [`encode`].
pub fn decode(offsets: &[f64; 4], anchor: &DefaultAnchor) -> Result<BBox> {
    let cx = anchor.cx + offsets[0] * anchor.w;
    let cy = anchor.cy + offsets[1] * anchor.h;
    let w = anchor.w * offsets[2].exp();
    let h = anchor.h * offsets[3].exp();
    BBox::from_center(cx, cy, w, h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnchorMatch {
    Positive { gt: usize, iou: f64 },
    Negative,
}

impl AnchorMatch {
    pub fn is_positive(&self) -> bool {
        matches!(self, AnchorMatch::Positive { .. })
    }
}

pub const MATCH_IOU: f64 = 0.5;

/// Assigns ground truth to anchors.
///
/// Each gt first claims its best-IoU anchor among those not already claimed
/// (forced positive, lowest anchor index on ties). Every other anchor becomes
/// positive for its best gt when that IoU reaches [`MATCH_IOU`].
pub fn match_anchors(anchors: &[DefaultAnchor], gt_boxes: &[BBox]) -> Vec<AnchorMatch> {
    let mut out = vec![AnchorMatch::Negative; anchors.len()];
    if gt_boxes.is_empty() {
        return out;
    }
    let anchor_boxes: Vec<BBox> = anchors.iter().map(DefaultAnchor::to_bbox).collect();
    let ious: Vec<Vec<f64>> = gt_boxes
        .iter()
        .map(|g| anchor_boxes.iter().map(|a| iou(g, a)).collect())
        .collect();

    let mut forced = vec![false; anchors.len()];
    for (gi, row) in ious.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (ai, &v) in row.iter().enumerate() {
            if forced[ai] {
                continue;
            }
            if best.map_or(true, |(_, bv)| v > bv) {
                best = Some((ai, v));
            }
        }
        if let Some((ai, v)) = best {
            forced[ai] = true;
            out[ai] = AnchorMatch::Positive { gt: gi, iou: v };
        }
    }

    for ai in 0..anchors.len() {
        if forced[ai] {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (gi, row) in ious.iter().enumerate() {
            if best.map_or(true, |(_, bv)| row[ai] > bv) {
                best = Some((gi, row[ai]));
            }
        }
        if let Some((gi, v)) = best {
            if v >= MATCH_IOU {
                out[ai] = AnchorMatch::Positive { gt: gi, iou: v };
            }
        }
    }
    out
}
