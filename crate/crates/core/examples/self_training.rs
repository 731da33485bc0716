//! The whole self-training pipeline on a synthetic benchmark: pretrain a
//! light model on the small annotated tier, then mine the weak tier for
//! two rounds and retrain, evaluating after every round.
//!
//! ```text
//! cargo run --release --example self_training -- [out_dir] [--desk]
//! ```
//!
//! Without `--desk` a reduced benchmark and short schedules keep the run to
//! a few minutes; `--desk` uses the default 1250-image benchmark and the
//! default schedules.

use std::error::Error;
use std::path::PathBuf;

use scenechar::datamodel::SourceTier;
use scenechar::detector::{TrainSchedule, TrainStage};
use scenechar::orchestrate::{
    detect_manifest, evaluate, pretrain_light, run_loop, timing_report, Config, LoopData,
};
use scenechar::synth::make_benchmark;

fn short(iterations: usize, seed: u64) -> TrainSchedule {
    TrainSchedule {
        stages: vec![
            TrainStage { iterations: iterations * 4 / 5, learning_rate: 2e-3 },
            TrainStage { iterations: iterations / 5, learning_rate: 2e-4 },
        ],
        seed,
        ..TrainSchedule::desk_retrain()
    }
}

fn main() -> Result<(), Box<dyn Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let desk = args.iter().any(|a| a == "--desk");
    let out = PathBuf::from(
        args.iter().find(|a| !a.starts_with("--")).cloned().unwrap_or_else(|| "target/self_training".into()),
    );

    let mut config = Config::default().with_seed(0);
    config.loop_.mode = SourceTier::Weak;
    config.loop_.rounds = 2;
    if !desk {
        config.synth.images = 400;
        config.schedules.pretrain = short(1500, 0);
        config.schedules.retrain = short(800, 0);
    }
    config.validate()?;
    config.persist(&out)?;

    let bench = make_benchmark(&config.synth.scene, config.synth.images, config.synth.fractions, &out.join("data"))?;
    println!(
        "benchmark: {} full / {} weak / {} none / {} test images",
        bench.full.len(),
        bench.weak.len(),
        bench.none.len(),
        bench.test.len()
    );

    let t = std::time::Instant::now();
    let light = pretrain_light(&config.detector, &bench.full, &config.schedules.pretrain)?;
    light.save(out.join("light.ckpt"))?;
    let base = evaluate(
        &light.checkpoint_id(),
        &detect_manifest(&light, &bench.test)?,
        &bench.test,
        &config.eval,
        &config.linegroup,
    )?;
    println!(
        "light model ({:.0?}): char F {:.4}  line F {:.4}",
        t.elapsed(),
        base.char_level.fscore,
        base.line_level.fscore
    );

    let data = LoopData { base: &bench.full, source: &bench.weak, test: &bench.test };
    let history = run_loop(&config.loop_config(), &config.linegroup, &config.eval, data, &light, &out.join("weak"))?;
    for h in &history {
        println!(
            "round {}: mined {:>5}  char P {:.4} R {:.4} F {:.4}  line F {:.4}",
            h.round,
            h.mined,
            h.scores.char_level.precision,
            h.scores.char_level.recall,
            h.scores.char_level.fscore,
            h.scores.line_level.fscore
        );
    }

    let timing = timing_report(&light, &bench.test, &config.linegroup)?;
    println!("{timing}");
    Ok(())
}
