//! Groups character candidates into text lines with the min-cost flow
//! formulation and scores the lines against word boxes.

use std::error::Error;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scenechar::datamodel::CharCandidate;
use scenechar::eval::{eval_lines, prf, Counts};
use scenechar::linegroup::{build_flow_graph, extract_lines, FlowGraphConfig};
use scenechar::synth::{render_scene, SceneSpec};

pub fn run_example(images: u64, verbose: bool) -> Result<Counts, Box<dyn Error>> {
    let spec = SceneSpec::default();
    let config = FlowGraphConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut total = Counts::default();
    for i in 0..images {
        let scene = render_scene(&spec, i)?;
        let mut cands: Vec<CharCandidate> = scene
            .chars
            .iter()
            .map(|c| CharCandidate { bbox: c.bbox, score: rng.gen_range(0.3..1.0) })
            .collect();
        // distractors: clutter the detector half believes in
        cands.extend(scene.clutter.iter().map(|b| CharCandidate { bbox: *b, score: rng.gen_range(0.0..0.6) }));

        let lines = extract_lines(&cands, &config);
        let (counts, _) = eval_lines(&lines, &scene.words, 0.5);
        total += counts;
        if verbose && i < 3 {
            let net = build_flow_graph(&cands, &config);
            println!(
                "image {i}: {} candidates, {} gated, {} transition edges, {} lines / {} words",
                cands.len(),
                net.gated.len(),
                net.transitions().count(),
                lines.len(),
                scene.words.len()
            );
            for l in &lines {
                println!("  {:?} members {:?} score {:.3}", l.bbox.to_array(), l.members, l.line_score);
            }
        }
    }
    Ok(total)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    let c = run_example(200, true)?;
    let p = prf(c);
    println!("lines: tp {} fp {} fn {}  P {:.3} R {:.3} F {:.3}", c.tp, c.fp, c.fn_, p.precision, p.recall, p.fscore);
    Ok(())
}
