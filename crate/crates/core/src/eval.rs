//! Detection scoring: greedy one-to-one IoU matching, precision/recall/F,
//! precision-recall sweeps and report files.

use std::io::Write;
use std::path::Path;

use image::{Rgb, RgbImage};
use imageproc::drawing::{draw_filled_rect_mut, draw_line_segment_mut};
use imageproc::rect::Rect;
use serde::{Deserialize, Serialize};

use crate::datamodel::{write_json, CharCandidate, DatasetManifest, DetectionSet};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::linegroup::TextLine;

pub const IOU_MIN: f64 = 0.5;
/// Score gate for the reported operating point.
pub const OPERATING_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matching {
    /// Per detection, in the order of the input: true for a true positive.
    pub labels: Vec<bool>,
    pub false_negatives: usize,
}

impl Matching {
    pub fn counts(&self) -> Counts {
        let tp = self.labels.iter().filter(|&&l| l).count();
        Counts {
            tp,
            fp: self.labels.len() - tp,
            fn_: self.false_negatives,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

/// Precision is 1 without detections, recall is 1 without ground truth and
/// F is 0 when both are 0.
pub fn prf(c: Counts) -> Prf {
    let precision = if c.tp + c.fp == 0 {
        1.0
    } else {
        c.tp as f64 / (c.tp + c.fp) as f64
    };
    let recall = if c.tp + c.fn_ == 0 {
        1.0
    } else {
        c.tp as f64 / (c.tp + c.fn_) as f64
    };
    let fscore = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf {
        precision,
        recall,
        fscore,
    }
}

/// Matches detections in descending score order (stable for equal scores);
/// each claims the unclaimed ground truth of highest IoU (lowest index on
/// ties) when that IoU is at least `iou_min`.
pub fn match_boxes(dets: &[(BBox, f64)], gts: &[BBox], iou_min: f64) -> Matching {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].1.total_cmp(&dets[a].1));
    let mut claimed = vec![false; gts.len()];
    let mut labels = vec![false; dets.len()];
    for i in order {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if claimed[j] {
                continue;
            }
            let o = iou(&dets[i].0, g);
            if best.map_or(true, |(_, b)| o > b) {
                best = Some((j, o));
            }
        }
        if let Some((j, o)) = best {
            if o >= iou_min {
                claimed[j] = true;
                labels[i] = true;
            }
        }
    }
    Matching {
        labels,
        false_negatives: claimed.iter().filter(|&&c| !c).count(),
    }
}

pub fn match_detections(dets: &[CharCandidate], gts: &[BBox], iou_min: f64) -> Matching {
    let d: Vec<(BBox, f64)> = dets.iter().map(|c| (c.bbox, c.score)).collect();
    match_boxes(&d, gts, iou_min)
}

/// Line boxes ranked by line score, matched like character detections.
pub fn eval_lines(lines: &[TextLine], gt_regions: &[BBox], iou_min: f64) -> (Counts, Prf) {
    let d: Vec<(BBox, f64)> = lines.iter().map(|l| (l.bbox, l.line_score)).collect();
    let c = match_boxes(&d, gt_regions, iou_min).counts();
    (c, prf(c))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// One point per distinct detection score, thresholds descending, counting
/// detections with score at or above the threshold.
///
/// Matching is greedy in score order, so the detections kept at a threshold
/// are matched exactly as in the full run and one pass suffices.
pub fn pr_curve(images: &[(Vec<(BBox, f64)>, Vec<BBox>)], iou_min: f64) -> Vec<PrPoint> {
    let mut labelled = Vec::new();
    let mut total_gt = 0;
    for (dets, gts) in images {
        total_gt += gts.len();
        let m = match_boxes(dets, gts, iou_min);
        labelled.extend(dets.iter().zip(&m.labels).map(|(d, &l)| (d.1, l)));
    }
    labelled.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < labelled.len() {
        let s = labelled[i].0;
        while i < labelled.len() && labelled[i].0 == s {
            if labelled[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let p = prf(Counts {
            tp,
            fp,
            fn_: total_gt - tp,
        });
        points.push(PrPoint {
            threshold: s,
            recall: p.recall,
            precision: p.precision,
        });
    }
    points
}

/// Pairs detections with ground truth character boxes for every image of
/// `gt`, keeping detections scored at or above `min_score`.
pub fn char_eval_inputs(
    detections: &DetectionSet,
    gt: &DatasetManifest,
    min_score: f64,
) -> Result<Vec<(Vec<(BBox, f64)>, Vec<BBox>)>> {
    gt.records
        .iter()
        .map(|r| {
            let dets = detections.get(&r.image_id).ok_or_else(|| {
                Error::validation(format!("no detections for test image {}", r.image_id))
            })?;
            Ok((
                dets.iter()
                    .filter(|c| c.score >= min_score)
                    .map(|c| (c.bbox, c.score))
                    .collect(),
                r.char_boxes(),
            ))
        })
        .collect()
}

/// Summed counts over images.
pub fn total_counts(images: &[(Vec<(BBox, f64)>, Vec<BBox>)], iou_min: f64) -> Counts {
    let mut c = Counts::default();
    for (d, g) in images {
        c += match_boxes(d, g, iou_min).counts();
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Char,
    Line,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub model_checkpoint: String,
    pub level: Level,
    #[serde(rename = "P")]
    pub precision: f64,
    #[serde(rename = "R")]
    pub recall: f64,
    #[serde(rename = "F")]
    pub fscore: f64,
    pub operating_threshold: f64,
    pub counts: Counts,
}

impl EvalReport {
    pub fn new(
        dataset: &str,
        model_checkpoint: &str,
        level: Level,
        counts: Counts,
        operating_threshold: f64,
    ) -> Self {
        let p = prf(counts);
        Self {
            dataset: dataset.to_string(),
            model_checkpoint: model_checkpoint.to_string(),
            level,
            precision: p.precision,
            recall: p.recall,
            fscore: p.fscore,
            operating_threshold,
            counts,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }
}

pub fn write_pr_csv(points: &[PrPoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("threshold,recall,precision\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.recall, p.precision));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Draws one or more curves on a unit square, recall on x and precision on y.
pub fn plot_pr_curves(curves: &[&[PrPoint]], path: impl AsRef<Path>) -> Result<()> {
    const SIZE: u32 = 400;
    const MARGIN: f32 = 30.0;
    const COLORS: [[u8; 3]; 4] = [[200, 40, 40], [40, 120, 200], [40, 160, 60], [150, 80, 170]];
    let path = path.as_ref();
    let mut img = RgbImage::from_pixel(SIZE, SIZE, Rgb([255, 255, 255]));
    let span = SIZE as f32 - 2.0 * MARGIN;
    let to_px = |r: f64, p: f64| {
        (
            MARGIN + r as f32 * span,
            SIZE as f32 - MARGIN - p as f32 * span,
        )
    };
    let axis = Rgb([0, 0, 0]);
    let grid = Rgb([225, 225, 225]);
    for k in 1..10 {
        let v = k as f64 / 10.0;
        draw_line_segment_mut(&mut img, to_px(v, 0.0), to_px(v, 1.0), grid);
        draw_line_segment_mut(&mut img, to_px(0.0, v), to_px(1.0, v), grid);
    }
    draw_line_segment_mut(&mut img, to_px(0.0, 0.0), to_px(1.0, 0.0), axis);
    draw_line_segment_mut(&mut img, to_px(0.0, 0.0), to_px(0.0, 1.0), axis);
    for (k, curve) in curves.iter().enumerate() {
        let color = Rgb(COLORS[k % COLORS.len()]);
        for w in curve.windows(2) {
            draw_line_segment_mut(
                &mut img,
                to_px(w[0].recall, w[0].precision),
                to_px(w[1].recall, w[1].precision),
                color,
            );
        }
        for p in curve.iter() {
            let (x, y) = to_px(p.recall, p.precision);
            draw_filled_rect_mut(&mut img, Rect::at(x as i32 - 1, y as i32 - 1).of_size(2, 2), color);
        }
    }
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}
