//! Renders a synthetic benchmark and a contact sheet of annotated test
//! scenes.
//!
//! ```text
//! cargo run --release --example synth_benchmark -- [out_dir] [n_images]
//! ```

use std::error::Error;
use std::path::Path;

use image::{GrayImage, Rgb, RgbImage};
use imageproc::drawing::draw_hollow_rect_mut;
use imageproc::rect::Rect;

use scenechar::geometry::BBox;
use scenechar::synth::{make_benchmark, render_scene, SceneSpec, TierFractions};

pub fn run_example(out: &Path, n_images: usize) -> Result<(), Box<dyn Error>> {
    let spec = SceneSpec::default();
    let bench = make_benchmark(&spec, n_images, TierFractions::DESK, out)?;
    for m in bench.manifests() {
        let words: usize = m.records.iter().map(|r| r.words.boxes.len()).sum();
        println!(
            "{:<16} {:>5} images {:>6} char boxes {:>5} word boxes",
            m.name,
            m.len(),
            m.char_count(),
            words
        );
    }

    // the test split starts after the three training tiers
    let first = bench.full.len() + bench.weak.len() + bench.none.len();
    let tiles: Vec<RgbImage> = (0..8)
        .map(|k| {
            let scene = render_scene(&spec, (first + k) as u64)?;
            Ok(annotate(&scene.image, &scene.chars.iter().map(|c| c.bbox).collect::<Vec<_>>(), &scene.words))
        })
        .collect::<Result<_, scenechar::Error>>()?;
    let (w, h) = (spec.width, spec.height);
    let mut sheet = RgbImage::new(w * 4, h * 2);
    for (k, t) in tiles.iter().enumerate() {
        image::imageops::overlay(&mut sheet, t, (k as u32 % 4 * w).into(), (k as u32 / 4 * h).into());
    }
    let path = out.join("contact_sheet.png");
    sheet.save(&path)?;
    println!("character boxes in green, word boxes in red: {}", path.display());
    Ok(())
}

fn annotate(image: &GrayImage, chars: &[BBox], words: &[BBox]) -> RgbImage {
    let mut rgb = RgbImage::from_fn(image.width(), image.height(), |x, y| {
        let v = image.get_pixel(x, y).0[0];
        Rgb([v, v, v])
    });
    let rect = |b: &BBox| {
        Rect::at(b.x_min().floor() as i32, b.y_min().floor() as i32)
            .of_size(b.width().ceil().max(1.0) as u32, b.height().ceil().max(1.0) as u32)
    };
    for b in words {
        draw_hollow_rect_mut(&mut rgb, rect(b), Rgb([220, 40, 40]));
    }
    for b in chars {
        draw_hollow_rect_mut(&mut rgb, rect(b), Rgb([40, 200, 60]));
    }
    rgb
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "target/synth_benchmark".into());
    let n = args.next().map(|s| s.parse()).transpose()?.unwrap_or(TierFractions::DESK_IMAGES);
    run_example(Path::new(&out), n)
}
