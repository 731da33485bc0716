//! Sanity check for the detector and its training loop: a fresh network
//! memorizes a single clutter-free scene.

use std::error::Error;

use scenechar::detector::train::{train_images, TrainImage};
use scenechar::detector::{DetectorConfig, DetectorModel, TrainSchedule, TrainStage};
use scenechar::eval::{match_detections, prf, OPERATING_THRESHOLD};
use scenechar::synth::{render_scene, SceneSpec};

fn main() -> Result<(), Box<dyn Error>> {
    let iterations: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let spec = SceneSpec { clutter: 0.0, ..SceneSpec::default() };
    let scene = render_scene(&spec, 0)?;
    let truth: Vec<_> = scene.chars.iter().map(|c| c.bbox).collect();
    let image = TrainImage { image: scene.image.clone(), boxes: truth.clone() };

    let schedule = TrainSchedule {
        stages: vec![TrainStage { iterations, learning_rate: 1e-3 }],
        batch_size: 1,
        momentum: 0.9,
        weight_decay: 5e-4,
        seed: 0,
        augment: false,
    };
    let model = DetectorModel::new(DetectorConfig::default(), 0)?;
    let t = std::time::Instant::now();
    let model = train_images(model, std::slice::from_ref(&image), &schedule)?;
    let report = model.metadata.report.as_ref().expect("training fills the report");
    println!(
        "{} iterations in {:.1?}: loss {:.3} -> {:.3}",
        report.iterations,
        t.elapsed(),
        report.initial_loss,
        report.final_loss
    );

    let dets: Vec<_> = model
        .detect(&scene.image)?
        .into_iter()
        .filter(|c| c.score >= OPERATING_THRESHOLD)
        .collect();
    let p = prf(match_detections(&dets, &truth, 0.5).counts());
    println!(
        "{} characters, {} detections above {OPERATING_THRESHOLD}: P {:.3} R {:.3} F {:.3}",
        truth.len(),
        dets.len(),
        p.precision,
        p.recall,
        p.fscore
    );
    Ok(())
}
