//! Wall-clock cost of detection and line extraction per image.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::load_gray;
use crate::datamodel::DatasetManifest;
use crate::detector::DetectorModel;
use crate::error::{Error, Result};
use crate::linegroup::{extract_lines, FlowGraphConfig};

/// Published per-image detection time, seconds.
pub const PUBLISHED_DETECT_S: f64 = 0.19;
/// Published per-image line extraction time, seconds.
pub const PUBLISHED_LINES_S: f64 = 0.13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub images: usize,
    pub detect_s_per_image: f64,
    pub lines_s_per_image: f64,
    pub published_detect_s_per_image: f64,
    pub published_lines_s_per_image: f64,
}

/// Mean detection and line extraction time over `manifest`. Image decoding
/// is not timed.
pub fn timing_report(
    model: &DetectorModel,
    manifest: &DatasetManifest,
    lines: &FlowGraphConfig,
) -> Result<TimingReport> {
    if manifest.is_empty() {
        return Err(Error::validation("nothing to time: manifest is empty"));
    }
    let (mut detect, mut group) = (0.0, 0.0);
    for r in &manifest.records {
        let image = load_gray(manifest, r)?;
        let t = Instant::now();
        let cands = model.detect(&image)?;
        detect += t.elapsed().as_secs_f64();
        let t = Instant::now();
        std::hint::black_box(extract_lines(&cands, lines));
        group += t.elapsed().as_secs_f64();
    }
    let n = manifest.len() as f64;
    Ok(TimingReport {
        images: manifest.len(),
        detect_s_per_image: detect / n,
        lines_s_per_image: group / n,
        published_detect_s_per_image: PUBLISHED_DETECT_S,
        published_lines_s_per_image: PUBLISHED_LINES_S,
    })
}

impl fmt::Display for TimingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>12} {:>12} {:>8}", "", "detect s/img", "lines s/img", "images")?;
        writeln!(
            f,
            "{:<10} {:>12.4} {:>12.4} {:>8}",
            "measured", self.detect_s_per_image, self.lines_s_per_image, self.images
        )?;
        write!(
            f,
            "{:<10} {:>12.2} {:>12.2} {:>8}",
            "published", self.published_detect_s_per_image, self.published_lines_s_per_image, "-"
        )
    }
}
