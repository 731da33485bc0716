//! Semi-supervised versus weakly supervised sample mining on simulated
//! detector output.
//!
//! A stand-in detector scores every true character, proposes boxes on
//! clutter and drifts some boxes between neighbouring characters. Mining
//! then runs with only scores (semi) or with word boxes as well (weak), and
//! the mined sets are checked against the rendered truth.

use std::error::Error;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scenechar::datamodel::CharCandidate;
use scenechar::datamodel::WeakAnnotation;
use scenechar::eval::{match_boxes, prf, Counts};
use scenechar::geometry::BBox;
use scenechar::mining::{mine_semi, mine_weak, MiningConfig};
use scenechar::synth::{render_scene, Scene, SceneSpec};

/// Fake detections: every character with a noisy score, plus false alarms.
pub fn simulate(scene: &Scene, rng: &mut ChaCha8Rng) -> Vec<CharCandidate> {
    let mut out = Vec::new();
    for c in &scene.chars {
        let b = c.bbox;
        let jitter = b.translate(rng.gen_range(-0.1..0.1) * b.width(), 0.0).unwrap_or(b);
        out.push(CharCandidate { bbox: jitter, score: rng.gen_range(0.1..1.0) });
        if rng.gen_bool(0.3) {
            // a box straddling this character and the next
            let half = b.translate(0.6 * b.width(), 0.0).unwrap_or(b);
            out.push(CharCandidate { bbox: half, score: rng.gen_range(0.05..0.7) });
        }
    }
    for b in &scene.clutter {
        out.push(CharCandidate { bbox: *b, score: rng.gen_range(0.0..0.9) });
    }
    out
}

pub fn run_example(images: u64) -> Result<Vec<(f64, Counts, Counts)>, Box<dyn Error>> {
    let spec = SceneSpec::default();
    let mut rows = Vec::new();
    for s in [0.3, 0.5, 0.7] {
        let config = MiningConfig { semi_threshold: s, weak_threshold: s, ..MiningConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mut semi, mut weak) = (Counts::default(), Counts::default());
        for i in 0..images {
            let scene = render_scene(&spec, i)?;
            let cands = simulate(&scene, &mut rng);
            let truth: Vec<BBox> = scene.chars.iter().map(|c| c.bbox).collect();
            let words = WeakAnnotation { boxes: scene.words.clone() };
            let score = |mined: Vec<scenechar::mining::MinedSample>| {
                let d: Vec<_> = mined.iter().map(|m| (m.bbox, m.score)).collect();
                match_boxes(&d, &truth, 0.5).counts()
            };
            semi += score(mine_semi("img", &cands, &config, 1));
            weak += score(mine_weak("img", &cands, &words, &config, 1));
        }
        rows.push((s, semi, weak));
    }
    Ok(rows)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    println!("threshold   semi P / R         weak P / R");
    for (s, semi, weak) in run_example(200)? {
        let (a, b) = (prf(semi), prf(weak));
        println!(
            "{s:>9.1}   {:.3} / {:.3}      {:.3} / {:.3}",
            a.precision, a.recall, b.precision, b.recall
        );
    }
    Ok(())
}
