//! Multibox training: anchor matching, smooth-L1 + softmax loss with hard
//! negative mining, and momentum SGD with weight decay.

use image::{imageops, GrayImage};
use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::anchors::{encode, match_anchors, AnchorMatch, DefaultAnchor};
use super::net::{Activations, VALUES_PER_ANCHOR};
use super::{normalize_boxes, preprocess, DetectorModel, BOX_VARIANCE};
use crate::datamodel::{DatasetManifest, Tier};
use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Negatives kept per positive by hard negative mining.
pub const NEG_POS_RATIO: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainStage {
    pub iterations: usize,
    pub learning_rate: f64,
}

/// Piecewise-constant learning rate schedule plus optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub stages: Vec<TrainStage>,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Random crop/expand scale augmentation of every training sample.
    #[serde(default)]
    pub augment: bool,
}

impl TrainSchedule {
    fn with_stages(stages: &[(usize, f64)]) -> Self {
        Self {
            stages: stages
                .iter()
                .map(|&(iterations, learning_rate)| TrainStage {
                    iterations,
                    learning_rate,
                })
                .collect(),
            batch_size: 32,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            augment: true,
        }
    }

    /// Light model recipe: 15k iterations, 1e-3 dropping to 1e-4 after 10k.
    pub fn light() -> Self {
        Self::with_stages(&[(10_000, 1e-3), (5_000, 1e-4)])
    }

    /// Fine-tuning on a small mined set: 3k @ 1e-3, 1k @ 1e-4, 1k @ 1e-5.
    pub fn finetune_small() -> Self {
        Self::with_stages(&[(3_000, 1e-3), (1_000, 1e-4), (1_000, 1e-5)])
    }

    /// Fine-tuning on a large mined set: 10k @ 1e-3, 3k @ 1e-4, 2k @ 1e-5.
    pub fn finetune_large() -> Self {
        Self::with_stages(&[(10_000, 1e-3), (3_000, 1e-4), (2_000, 1e-5)])
    }

    /// CPU-sized light model recipe for the small desk network.
    pub fn desk_pretrain() -> Self {
        Self {
            batch_size: 8,
            ..Self::with_stages(&[(4_800, 2e-3), (1_200, 2e-4)])
        }
    }

    /// CPU-sized fine-tuning recipe for the small desk network.
    pub fn desk_retrain() -> Self {
        Self {
            batch_size: 8,
            ..Self::with_stages(&[(2_400, 2e-3), (600, 2e-4)])
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn total_iterations(&self) -> usize {
        self.stages.iter().map(|s| s.iterations).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::validation("schedule needs at least one stage"));
        }
        if self.stages.iter().any(|s| s.iterations == 0) {
            return Err(Error::validation("stage iterations must be positive"));
        }
        if self
            .stages
            .iter()
            .any(|s| !(s.learning_rate > 0.0 && s.learning_rate.is_finite()))
        {
            return Err(Error::validation("learning rates must be positive"));
        }
        if self
            .stages
            .windows(2)
            .any(|w| w[1].learning_rate >= w[0].learning_rate)
        {
            return Err(Error::validation("learning rates must decrease across stages"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch size must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::validation("momentum must be in [0, 1), weight decay >= 0"));
        }
        Ok(())
    }

    /// Learning rate in effect at iteration `it` (0-based).
    pub fn lr_at(&self, it: usize) -> f64 {
        let mut end = 0;
        for s in &self.stages {
            end += s.iterations;
            if it < end {
                return s.learning_rate;
            }
        }
        self.stages.last().map_or(0.0, |s| s.learning_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: usize,
    pub images: usize,
    pub positives: usize,
    /// Loss of the first batch.
    pub initial_loss: f64,
    /// Mean loss over the last tenth of training.
    pub final_loss: f64,
}

/// An image with character boxes in pixel coordinates.
#[derive(Debug, Clone)]
pub struct TrainImage {
    pub image: GrayImage,
    pub boxes: Vec<BBox>,
}

/// Loads every full-tier record of the manifest as a training image.
pub fn load_training_images(manifest: &DatasetManifest) -> Result<Vec<TrainImage>> {
    let mut out = Vec::new();
    for r in manifest.records.iter().filter(|r| r.tier == Tier::Full) {
        let path = manifest.resolve_path(r);
        let image = image::open(&path)
            .map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?
            .to_luma8();
        out.push(TrainImage {
            image,
            boxes: r.char_boxes(),
        });
    }
    Ok(out)
}

/// Trains on the full-tier records of `manifest`.
pub fn train(
    model: DetectorModel,
    manifest: &DatasetManifest,
    schedule: &TrainSchedule,
) -> Result<DetectorModel> {
    let images = load_training_images(manifest)?;
    train_images(model, &images, schedule)
}

struct Sample {
    input: Vec<f32>,
    /// Per anchor: matched gt encoded offsets, or `None` for background.
    targets: Vec<Option<[f32; 4]>>,
    positives: usize,
}

fn make_sample(image: &GrayImage, boxes: &[BBox], side: usize, anchors: &[DefaultAnchor]) -> Sample {
    let gts = normalize_boxes(boxes, image.width(), image.height());
    let matches = match_anchors(anchors, &gts);
    let mut positives = 0;
    let targets = matches
        .iter()
        .zip(anchors)
        .map(|(m, a)| match m {
            AnchorMatch::Positive { gt, .. } => {
                positives += 1;
                let t = encode(&gts[*gt], a);
                Some(std::array::from_fn(|k| (t[k] / BOX_VARIANCE[k]) as f32))
            }
            AnchorMatch::Negative => None,
        })
        .collect();
    Sample {
        input: preprocess(image, side),
        targets,
        positives,
    }
}

/// Smallest crop side and largest zoom-out factor, relative to the image.
const MIN_CROP: f64 = 0.5;
const MAX_EXPAND: f64 = 1.6;

/// Random crop (zoom in) or expansion onto a mean-filled canvas (zoom out),
/// each with probability 1/3. Boxes keep their part inside the crop when
/// their centre falls inside it.
fn augment(ti: &TrainImage, rng: &mut ChaCha8Rng) -> (GrayImage, Vec<BBox>) {
    let (w, h) = (ti.image.width() as f64, ti.image.height() as f64);
    match rng.gen_range(0..3) {
        0 => {
            let s = rng.gen_range(MIN_CROP..1.0);
            let (cw, ch) = ((w * s).round().max(1.0), (h * s).round().max(1.0));
            let x0 = rng.gen_range(0.0..=w - cw).floor();
            let y0 = rng.gen_range(0.0..=h - ch).floor();
            let img = imageops::crop_imm(&ti.image, x0 as u32, y0 as u32, cw as u32, ch as u32)
                .to_image();
            let boxes = ti
                .boxes
                .iter()
                .filter(|b| {
                    let (cx, cy) = b.center();
                    cx >= x0 && cx < x0 + cw && cy >= y0 && cy < y0 + ch
                })
                .filter_map(|b| b.translate(-x0, -y0).ok()?.clip(cw, ch))
                .collect();
            (img, boxes)
        }
        1 => {
            let r = rng.gen_range(1.0..MAX_EXPAND);
            let (ew, eh) = ((w * r).round(), (h * r).round());
            let x0 = rng.gen_range(0.0..=ew - w).floor();
            let y0 = rng.gen_range(0.0..=eh - h).floor();
            let raw = ti.image.as_raw();
            let mean = raw.iter().map(|&v| v as u64).sum::<u64>() / raw.len().max(1) as u64;
            let mut img = GrayImage::from_pixel(ew as u32, eh as u32, image::Luma([mean as u8]));
            imageops::replace(&mut img, &ti.image, x0 as i64, y0 as i64);
            let boxes = ti
                .boxes
                .iter()
                .filter_map(|b| b.translate(x0, y0).ok())
                .collect();
            (img, boxes)
        }
        _ => (ti.image.clone(), ti.boxes.clone()),
    }
}

/// Loss of one sample; writes `scale`-weighted gradients into `head_grads`.
fn sample_loss(
    model: &DetectorModel,
    acts: &Activations,
    sample: &Sample,
    scale: f32,
    head_grads: &mut Vec<Vec<f32>>,
) -> f64 {
    let net = &model.network;
    let per_cell = net.anchors_per_cell();
    head_grads.resize_with(per_cell.len(), Vec::new);

    // (head, value index base, plane) per anchor in global order
    let mut slots = Vec::with_capacity(sample.targets.len());
    for (h, &a_n) in per_cell.iter().enumerate() {
        let (head, side) = acts.head(net, h);
        let plane = side * side;
        head_grads[h].clear();
        head_grads[h].resize(head.len(), 0.0);
        for cell in 0..plane {
            for a in 0..a_n {
                slots.push((h, a * VALUES_PER_ANCHOR * plane + cell, plane));
            }
        }
    }
    debug_assert_eq!(slots.len(), sample.targets.len());

    let value = |h: usize, base: usize, plane: usize, t: usize| acts.head(net, h).0[base + t * plane];

    let mut loss = 0.0f64;
    let mut neg_losses: Vec<(f32, usize)> = Vec::new();
    for (i, (&(h, base, plane), target)) in slots.iter().zip(&sample.targets).enumerate() {
        let bg = value(h, base, plane, 4);
        let txt = value(h, base, plane, 5);
        let m = bg.max(txt);
        let lse = m + ((bg - m).exp() + (txt - m).exp()).ln();
        match target {
            Some(t) => {
                loss += (lse - txt) as f64;
                let p_txt = (txt - lse).exp();
                let g = &mut head_grads[h];
                g[base + 4 * plane] += scale * (1.0 - p_txt);
                g[base + 5 * plane] += scale * (p_txt - 1.0);
                for (k, &tk) in t.iter().enumerate() {
                    let d = value(h, base, plane, k) - tk;
                    let (l, grad) = if d.abs() < 1.0 {
                        (0.5 * d * d, d)
                    } else {
                        (d.abs() - 0.5, d.signum())
                    };
                    loss += l as f64;
                    g[base + k * plane] += scale * grad;
                }
            }
            None => neg_losses.push((lse - bg, i)),
        }
    }

    let keep = (NEG_POS_RATIO * sample.positives.max(1)).min(neg_losses.len());
    neg_losses.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(l, i) in &neg_losses[..keep] {
        loss += l as f64;
        let (h, base, plane) = slots[i];
        let p_bg = (-l).exp();
        let g = &mut head_grads[h];
        g[base + 4 * plane] += scale * (p_bg - 1.0);
        g[base + 5 * plane] += scale * (1.0 - p_bg);
    }
    loss
}

/// Trains from the model's current weights on in-memory images.
pub fn train_images(
    mut model: DetectorModel,
    images: &[TrainImage],
    schedule: &TrainSchedule,
) -> Result<DetectorModel> {
    schedule.validate()?;
    let side = model.config.input_size;
    let anchors = model.anchors_for(side)?;
    let samples: Vec<Sample> = images
        .iter()
        .map(|ti| make_sample(&ti.image, &ti.boxes, side, &anchors))
        .collect();
    let positives: usize = samples.iter().map(|s| s.positives).sum();
    if samples.is_empty() || positives == 0 {
        return Err(Error::Training(
            "training set has no positive character boxes".into(),
        ));
    }
    let parent = model.checkpoint_id();
    let total = schedule.total_iterations();
    let decay = model.network.decay_mask();
    let n_params = model.network.param_count();
    let mut grads = vec![0.0f32; n_params];
    let mut velocity = vec![0.0f32; n_params];
    let mut acts = Activations::default();
    let mut head_grads = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let tail = (total / 10).max(1);
    let mut initial_loss = f64::NAN;
    let mut tail_sum = 0.0;

    for it in 0..total {
        let batch: Vec<usize> = (0..schedule.batch_size)
            .map(|_| rng.gen_range(0..samples.len()))
            .collect();
        let augmented: Vec<Sample> = if schedule.augment {
            batch
                .iter()
                .map(|&i| {
                    let (img, boxes) = augment(&images[i], &mut rng);
                    make_sample(&img, &boxes, side, &anchors)
                })
                .collect()
        } else {
            Vec::new()
        };
        let batch_samples: Vec<&Sample> = if schedule.augment {
            augmented.iter().collect()
        } else {
            batch.iter().map(|&i| &samples[i]).collect()
        };
        let npos: usize = batch_samples.iter().map(|s| s.positives.max(1)).sum();
        let scale = 1.0 / npos as f32;
        grads.fill(0.0);
        let mut batch_loss = 0.0;
        for s in batch_samples {
            model.network.forward(&s.input, side, &mut acts);
            batch_loss += sample_loss(&model, &acts, s, scale, &mut head_grads);
            model.network.backward(&acts, &head_grads, &mut grads);
        }
        let batch_loss = batch_loss / npos as f64;
        if !batch_loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training(format!(
                "non-finite loss at iteration {it} (lr {})",
                schedule.lr_at(it)
            )));
        }
        if it == 0 {
            initial_loss = batch_loss;
        }
        if it >= total - tail {
            tail_sum += batch_loss;
        }
        if it % 100 == 0 {
            debug!("iter {it}/{total} loss {batch_loss:.4}");
        }

        let lr = schedule.lr_at(it) as f32;
        let mom = schedule.momentum as f32;
        let wd = schedule.weight_decay as f32;
        let params = &mut model.network.params;
        for j in 0..n_params {
            let mut g = grads[j];
            if decay[j] {
                g += wd * params[j];
            }
            velocity[j] = mom * velocity[j] + lr * g;
            params[j] -= velocity[j];
        }
    }

    let report = TrainReport {
        iterations: total,
        images: samples.len(),
        positives,
        initial_loss,
        final_loss: tail_sum / tail as f64,
    };
    model.metadata.schedule = Some(schedule.clone());
    model.metadata.seed = schedule.seed;
    model.metadata.parent_checkpoint = Some(parent);
    model.metadata.report = Some(report);
    Ok(model)
}
