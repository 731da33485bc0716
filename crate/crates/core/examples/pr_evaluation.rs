//! Precision/recall evaluation: a curve over all thresholds, the operating
//! point at score 0.05, a CSV dump and a plot comparing two detectors.

use std::error::Error;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scenechar::eval::{pr_curve, prf, total_counts, plot_pr_curves, write_pr_csv, PrPoint, OPERATING_THRESHOLD};
use scenechar::geometry::BBox;
use scenechar::synth::{render_scene, SceneSpec};

type Labeled = Vec<(Vec<(BBox, f64)>, Vec<BBox>)>;

/// Simulated detector: finds each character with probability `hit`, scores
/// hits higher than the clutter false alarms by `margin`.
fn detector(images: u64, hit: f64, margin: f64, seed: u64) -> Result<Labeled, scenechar::Error> {
    let spec = SceneSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..images)
        .map(|i| {
            let scene = render_scene(&spec, i)?;
            let truth: Vec<BBox> = scene.chars.iter().map(|c| c.bbox).collect();
            let mut dets = Vec::new();
            for b in &truth {
                if rng.gen_bool(hit) {
                    dets.push((*b, (rng.gen_range(0.0..1.0) + margin).min(1.0)));
                }
            }
            dets.extend(scene.clutter.iter().map(|b| (*b, rng.gen_range(0.0..1.0 - margin))));
            Ok((dets, truth))
        })
        .collect()
}

pub fn run_example(out: &Path, images: u64) -> Result<Vec<Vec<PrPoint>>, Box<dyn Error>> {
    std::fs::create_dir_all(out)?;
    let mut curves = Vec::new();
    for (name, hit, margin) in [("weaker", 0.8, 0.1), ("stronger", 0.9, 0.3)] {
        let data = detector(images, hit, margin, 5)?;
        let curve = pr_curve(&data, 0.5);
        let gated: Labeled = data
            .iter()
            .map(|(d, g)| (d.iter().copied().filter(|x| x.1 >= OPERATING_THRESHOLD).collect(), g.clone()))
            .collect();
        let p = prf(total_counts(&gated, 0.5));
        println!(
            "{name:<9} at {OPERATING_THRESHOLD}: P {:.3} R {:.3} F {:.3}  ({} curve points)",
            p.precision,
            p.recall,
            p.fscore,
            curve.len()
        );
        write_pr_csv(&curve, out.join(format!("pr_{name}.csv")))?;
        curves.push(curve);
    }
    let refs: Vec<&[PrPoint]> = curves.iter().map(Vec::as_slice).collect();
    plot_pr_curves(&refs, out.join("pr_curves.png"))?;
    println!("wrote {}", out.join("pr_curves.png").display());
    Ok(curves)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/pr_evaluation".into());
    run_example(Path::new(&out), 200)?;
    Ok(())
}
