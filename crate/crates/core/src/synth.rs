//! Deterministic synthetic scene-text images with exact character and word
//! boxes.
//!
//! Glyphs are 5x7 block bitmaps rendered with 3x3 supersampling. Each word
//! sits in its own horizontal band so word boxes double as text-line ground
//! truth. Clutter shapes (blocks, rings, strokes and random bitmaps) are kept
//! out of word bands.

use std::path::Path;

use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    save_manifest, CharAnnotation, DatasetManifest, ImageRecord, Tier, WeakAnnotation,
};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

const GLYPH_COLS: usize = 5;
const GLYPH_ROWS: usize = 7;

#[rustfmt::skip]
const GLYPHS: [(char, [u8; GLYPH_ROWS]); 36] = [
    ('0', [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110]),
    ('1', [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110]),
    ('2', [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111]),
    ('3', [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110]),
    ('4', [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010]),
    ('5', [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110]),
    ('6', [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110]),
    ('7', [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000]),
    ('8', [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110]),
    ('9', [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100]),
    ('A', [0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001]),
    ('B', [0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110]),
    ('C', [0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110]),
    ('D', [0b11100, 0b10010, 0b10001, 0b10001, 0b10001, 0b10010, 0b11100]),
    ('E', [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111]),
    ('F', [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000]),
    ('G', [0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111]),
    ('H', [0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001]),
    ('I', [0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110]),
    ('J', [0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100]),
    ('K', [0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001]),
    ('L', [0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111]),
    ('M', [0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001]),
    ('N', [0b10001, 0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001]),
    ('O', [0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110]),
    ('P', [0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000]),
    ('Q', [0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101]),
    ('R', [0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001]),
    ('S', [0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110]),
    ('T', [0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100]),
    ('U', [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110]),
    ('V', [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100]),
    ('W', [0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b10101, 0b01010]),
    ('X', [0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001]),
    ('Y', [0b10001, 0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100]),
    ('Z', [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111]),
];

/// Parameters of the scene distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    /// Inclusive range of words per image.
    pub words_per_image: (usize, usize),
    /// Inclusive range of characters per word.
    pub chars_per_word: (usize, usize),
    /// Character height range in pixels.
    pub font_height: (f64, f64),
    /// Distractor density in `[0, 1]`; 0 draws no distractor shapes.
    pub clutter: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            words_per_image: (1, 3),
            chars_per_word: (2, 6),
            font_height: (10.0, 20.0),
            clutter: 0.5,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.width > 0
            && self.height > 0
            && self.words_per_image.0 <= self.words_per_image.1
            && self.chars_per_word.0 >= 1
            && self.chars_per_word.0 <= self.chars_per_word.1
            && self.font_height.0 >= 3.0
            && self.font_height.0 <= self.font_height.1
            && (0.0..=1.0).contains(&self.clutter);
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!("invalid scene spec {self:?}")))
        }
    }
}

/// A rendered scene with its ground truth.
#[derive(Debug, Clone)]
pub struct Scene {
    pub image: GrayImage,
    pub chars: Vec<CharAnnotation>,
    pub words: Vec<BBox>,
    /// Index into `words` for every character.
    pub char_word: Vec<usize>,
    /// Bounding boxes of drawn distractor shapes.
    pub clutter: Vec<BBox>,
}

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<f32>,
}

impl Canvas {
    /// Blends `value` into every pixel by the fraction of its 3x3 subsamples
    /// for which `inside` holds.
    fn paint(&mut self, area: &BBox, value: f32, inside: impl Fn(f64, f64) -> bool) {
        let x0 = area.x_min().floor().max(0.0) as usize;
        let y0 = area.y_min().floor().max(0.0) as usize;
        let x1 = (area.x_max().ceil() as usize).min(self.w);
        let y1 = (area.y_max().ceil() as usize).min(self.h);
        for y in y0..y1 {
            for x in x0..x1 {
                let mut hits = 0;
                for sy in 0..3 {
                    for sx in 0..3 {
                        let fx = x as f64 + (sx as f64 + 0.5) / 3.0;
                        let fy = y as f64 + (sy as f64 + 0.5) / 3.0;
                        if inside(fx, fy) {
                            hits += 1;
                        }
                    }
                }
                if hits > 0 {
                    let cov = hits as f32 / 9.0;
                    let p = &mut self.px[y * self.w + x];
                    *p = *p * (1.0 - cov) + value * cov;
                }
            }
        }
    }

    fn bitmap(&mut self, cell: &BBox, rows: &[u8; GLYPH_ROWS], value: f32, style: &GlyphStyle) {
        let on = |r: isize, c: isize| {
            r >= 0
                && c >= 0
                && (r as usize) < GLYPH_ROWS
                && (c as usize) < GLYPH_COLS
                && rows[r as usize] >> (GLYPH_COLS - 1 - c as usize) & 1 == 1
        };
        // the sheared glyph must stay inside its cell, so it is drawn narrower
        let slant = style.shear.abs() * cell.height();
        let gw = (cell.width() - slant).max(cell.width() * 0.5);
        let (y0, ch, y1) = (cell.y_min(), cell.height(), cell.y_max());
        let x0 = cell.x_min() + if style.shear < 0.0 { slant } else { 0.0 };
        let half = style.weight / 2.0;
        self.paint(cell, value, |x, y| {
            let xs = x - x0 - style.shear * (y1 - y);
            let fc = xs / gw * GLYPH_COLS as f64;
            let fr = (y - y0) / ch * GLYPH_ROWS as f64;
            let (c, r) = (fc.floor() as isize, fr.floor() as isize);
            if !on(r, c) {
                return false;
            }
            let (u, v) = (fc - c as f64 - 0.5, fr - r as f64 - 0.5);
            let core_x = u.abs() <= half;
            let core_y = v.abs() <= half;
            (core_x && core_y)
                || (core_y && ((u > 0.0 && on(r, c + 1)) || (u < 0.0 && on(r, c - 1))))
                || (core_x && ((v > 0.0 && on(r + 1, c)) || (v < 0.0 && on(r - 1, c))))
        });
    }
}

fn random_glyph(rng: &mut ChaCha8Rng) -> [u8; GLYPH_ROWS] {
    let mut rows = [0u8; GLYPH_ROWS];
    for r in rows.iter_mut() {
        for c in 0..GLYPH_COLS {
            if rng.gen_bool(0.45) {
                *r |= 1 << c;
            }
        }
    }
    rows
}

/// Per-word rendering style.
#[derive(Debug, Clone, Copy)]
struct GlyphStyle {
    /// Stroke thickness as a share of one bitmap cell.
    weight: f64,
    /// Horizontal displacement per unit of height above the baseline.
    shear: f64,
}

impl GlyphStyle {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: rng.gen_range(0.3..1.0),
            shear: if rng.gen_bool(0.5) {
                0.0
            } else {
                rng.gen_range(-0.25..0.25)
            },
        }
    }
}

fn scene_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

struct WordLayout {
    cells: Vec<BBox>,
    glyphs: Vec<usize>,
    band: BBox,
    style: GlyphStyle,
}

/// Whole layouts are redrawn this many times before giving up.
const LAYOUT_RESTARTS: usize = 50;

fn layout_words(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Vec<WordLayout>> {
    for _ in 0..LAYOUT_RESTARTS {
        if let Some(words) = try_layout(spec, rng)? {
            return Ok(words);
        }
    }
    Err(Error::Generation(format!(
        "could not place {:?} words in a {}x{} image",
        spec.words_per_image, spec.width, spec.height
    )))
}

fn try_layout(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Option<Vec<WordLayout>>> {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let n_words = rng.gen_range(spec.words_per_image.0..=spec.words_per_image.1);
    let mut words: Vec<WordLayout> = Vec::with_capacity(n_words);
    const MARGIN: f64 = 2.0;
    for _ in 0..n_words {
        let mut placed = false;
        for _attempt in 0..40 {
            let n_chars = rng.gen_range(spec.chars_per_word.0..=spec.chars_per_word.1);
            let ch = rng.gen_range(spec.font_height.0..=spec.font_height.1);
            let cw = ch * rng.gen_range(0.6..0.85);
            let gap = ch * rng.gen_range(0.25..0.5);
            let word_w = n_chars as f64 * cw + (n_chars - 1) as f64 * gap;
            if word_w + 2.0 * MARGIN > w || ch + 2.0 * MARGIN > h {
                continue;
            }
            let x0 = rng.gen_range(MARGIN..=w - MARGIN - word_w);
            let y0 = rng.gen_range(MARGIN..=h - MARGIN - ch);
            // each word owns a band half a character tall above and below
            let band = BBox::new(0.0, y0 - 0.5 * ch, w, y0 + 1.5 * ch)?;
            if words.iter().any(|o| iou(&o.band, &band) > 0.0) {
                continue;
            }
            let cells = (0..n_chars)
                .map(|i| {
                    let cx = x0 + i as f64 * (cw + gap);
                    BBox::new(cx, y0, cx + cw, y0 + ch)
                })
                .collect::<Result<Vec<_>>>()?;
            let glyphs = (0..n_chars).map(|_| rng.gen_range(0..GLYPHS.len())).collect();
            words.push(WordLayout {
                cells,
                glyphs,
                band,
                style: GlyphStyle::sample(rng),
            });
            placed = true;
            break;
        }
        if !placed {
            return Ok(None);
        }
    }
    Ok(Some(words))
}

/// Renders scene `index` of the distribution; a pure function of
/// `(spec, index)`.
pub fn render_scene(spec: &SceneSpec, index: u64) -> Result<Scene> {
    spec.validate()?;
    let mut rng = scene_rng(spec.seed, index);
    let (w, h) = (spec.width as usize, spec.height as usize);

    let base: f32 = rng.gen_range(40.0..215.0);
    let gx: f32 = rng.gen_range(-0.4..0.4);
    let gy: f32 = rng.gen_range(-0.4..0.4);
    let mut canvas = Canvas {
        w,
        h,
        px: (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f32 - w as f32 / 2.0, (i / w) as f32 - h as f32 / 2.0);
                base + gx * x + gy * y
            })
            .collect(),
    };
    // ink contrast is signed so that text stays inside [0, 255]
    let ink = |rng: &mut ChaCha8Rng| -> f32 {
        let c: f32 = rng.gen_range(25.0..140.0);
        if base > 127.5 {
            (base - c).max(0.0)
        } else {
            (base + c).min(255.0)
        }
    };

    let words = layout_words(spec, &mut rng)?;

    let mut clutter = Vec::new();
    if spec.clutter > 0.0 {
        let n = (spec.clutter * 12.0 * rng.gen_range(0.5..1.5)).round() as usize;
        for _ in 0..n {
            let kind = rng.gen_range(0..4);
            let size = rng.gen_range(spec.font_height.0 * 0.6..spec.font_height.1 * 1.8);
            let aspect: f64 = rng.gen_range(0.4..2.5);
            let (bw, bh) = (size * aspect.sqrt(), size / aspect.sqrt());
            let mut slot = None;
            for _ in 0..30 {
                if bw + 2.0 >= w as f64 || bh + 2.0 >= h as f64 {
                    break;
                }
                let x0 = rng.gen_range(1.0..w as f64 - bw - 1.0);
                let y0 = rng.gen_range(1.0..h as f64 - bh - 1.0);
                let b = BBox::new(x0, y0, x0 + bw, y0 + bh)?;
                let clear = words.iter().all(|wl| {
                    let word = BBox::union_all(&wl.cells).expect("words are non-empty");
                    let guard = BBox::new(
                        word.x_min() - 3.0,
                        wl.band.y_min(),
                        word.x_max() + 3.0,
                        wl.band.y_max(),
                    )
                    .expect("guard box is valid");
                    iou(&guard, &b) == 0.0
                });
                if clear {
                    slot = Some(b);
                    break;
                }
            }
            let Some(b) = slot else { continue };
            let value = ink(&mut rng);
            match kind {
                0 => canvas.paint(&b, value, |_, _| true),
                1 => {
                    let (cx, cy) = b.center();
                    let (rx, ry) = (b.width() / 2.0, b.height() / 2.0);
                    let t = rng.gen_range(0.15..0.35);
                    canvas.paint(&b, value, move |x, y| {
                        let d = ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2);
                        d <= 1.0 && d >= (1.0 - t) * (1.0 - t)
                    });
                }
                2 => {
                    let thick = rng.gen_range(1.0..3.5);
                    let (ax, ay, bx, by) = if rng.gen_bool(0.5) {
                        (b.x_min(), b.y_min(), b.x_max(), b.y_max())
                    } else {
                        (b.x_min(), b.y_max(), b.x_max(), b.y_min())
                    };
                    canvas.paint(&b, value, move |x, y| {
                        segment_distance(x, y, ax, ay, bx, by) <= thick / 2.0
                    });
                }
                _ => {
                    let style = GlyphStyle::sample(&mut rng);
                    canvas.bitmap(&b, &random_glyph(&mut rng), value, &style);
                }
            }
            clutter.push(b);
        }
    }

    let mut chars = Vec::new();
    let mut char_word = Vec::new();
    let mut word_boxes = Vec::new();
    for (wi, wl) in words.iter().enumerate() {
        let value = ink(&mut rng);
        for (cell, &g) in wl.cells.iter().zip(&wl.glyphs) {
            let (label, rows) = GLYPHS[g];
            canvas.bitmap(cell, &rows, value, &wl.style);
            chars.push(CharAnnotation {
                bbox: *cell,
                label: Some(label),
            });
            char_word.push(wi);
        }
        word_boxes.push(BBox::union_all(&wl.cells).expect("words are non-empty"));
    }

    let sigma: f32 = rng.gen_range(2.0..8.0);
    let noise = Normal::new(0.0f32, sigma).expect("valid sigma");
    let mut image = GrayImage::new(spec.width, spec.height);
    for (i, p) in canvas.px.iter().enumerate() {
        let v = (p + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8;
        image.put_pixel((i % w) as u32, (i / w) as u32, Luma([v]));
    }

    Ok(Scene {
        image,
        chars,
        words: word_boxes,
        char_word,
        clutter,
    })
}

fn segment_distance(x: f64, y: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((x - ax) * dx + (y - ay) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((x - ax - t * dx).powi(2) + (y - ay - t * dy).powi(2)).sqrt()
}

/// Share of generated images per supervision tier; the remainder is held
/// out for testing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierFractions {
    pub full: f64,
    pub weak: f64,
    pub none: f64,
}

impl TierFractions {
    /// 50 full / 500 weak / 500 none / 200 test out of 1250 images.
    pub const DESK: TierFractions = TierFractions {
        full: 0.04,
        weak: 0.4,
        none: 0.4,
    };
    pub const DESK_IMAGES: usize = 1250;

    fn counts(&self, n: usize) -> Result<[usize; 4]> {
        let fr = [self.full, self.weak, self.none];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || fr.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err(Error::validation(format!(
                "tier fractions {self:?} must be in [0, 1] and sum to at most 1"
            )));
        }
        let c: Vec<usize> = fr.iter().map(|f| (f * n as f64).round() as usize).collect();
        if fr.iter().zip(&c).any(|(&f, &k)| f > 0.0 && k == 0) {
            return Err(Error::validation(format!(
                "{n} images are too few for tier fractions {self:?}"
            )));
        }
        let used: usize = c.iter().sum();
        if used > n {
            return Err(Error::validation("tier counts exceed image count"));
        }
        Ok([c[0], c[1], c[2], n - used])
    }
}

/// The four disjoint splits of a synthetic benchmark.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub full: DatasetManifest,
    pub weak: DatasetManifest,
    pub none: DatasetManifest,
    pub test: DatasetManifest,
}

impl Benchmark {
    pub fn manifests(&self) -> [&DatasetManifest; 4] {
        [&self.full, &self.weak, &self.none, &self.test]
    }
}

/// Renders `n_images` scenes into `out_dir/images` and writes
/// `full.jsonl`, `weak.jsonl`, `none.jsonl` and `test.jsonl`.
///
/// Full-tier images keep character boxes, weak-tier images only word boxes,
/// none-tier images nothing; test images keep both.
pub fn make_benchmark(
    spec: &SceneSpec,
    n_images: usize,
    fractions: TierFractions,
    out_dir: &Path,
) -> Result<Benchmark> {
    spec.validate()?;
    let counts = fractions.counts(n_images)?;
    let img_dir = out_dir.join("images");
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;

    let names = ["full", "weak", "none", "test"];
    let mut manifests: Vec<DatasetManifest> = names
        .iter()
        .map(|n| {
            let mut m = DatasetManifest::new(format!("synth-s{}-{n}", spec.seed));
            m.base_dir = Some(out_dir.to_path_buf());
            m
        })
        .collect();
    let mut index = 0usize;
    for (split, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            let scene = render_scene(spec, index as u64)?;
            let image_id = format!("s{}-{index:05}", spec.seed);
            let rel = Path::new("images").join(format!("{image_id}.png"));
            let path = out_dir.join(&rel);
            scene.image.save(&path).map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?;
            let (tier, chars, words) = match split {
                0 => (Tier::Full, scene.chars, Vec::new()),
                1 => (Tier::Weak, Vec::new(), scene.words),
                2 => (Tier::None, Vec::new(), Vec::new()),
                _ => (Tier::Full, scene.chars, scene.words),
            };
            manifests[split].records.push(ImageRecord {
                image_id,
                image_path: rel,
                width: spec.width,
                height: spec.height,
                tier,
                chars,
                words: WeakAnnotation { boxes: words },
                provenance: None,
            });
            index += 1;
        }
    }
    for (m, n) in manifests.iter().zip(names) {
        save_manifest(m, out_dir.join(format!("{n}.jsonl")))?;
    }
    let mut it = manifests.into_iter();
    Ok(Benchmark {
        full: it.next().unwrap(),
        weak: it.next().unwrap(),
        none: it.next().unwrap(),
        test: it.next().unwrap(),
    })
}
