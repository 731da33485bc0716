use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use scenechar::datamodel::{
    load_detections, load_manifest, save_detections, write_json, DatasetManifest, SourceTier,
};
use scenechar::detector::{train, DetectorModel};
use scenechar::eval::{
    char_eval_inputs, eval_lines, plot_pr_curves, pr_curve, total_counts, write_pr_csv, Counts,
    EvalReport, Level,
};
use scenechar::linegroup::{load_lines, save_lines};
use scenechar::mining::{mine_dataset, mined_as_detections, merge_training_set, MinedSample};
use scenechar::orchestrate::{
    detect_manifest_to, extract_all_lines, manifest_ref, pretrain_light, run_loop, timing_report,
    Config, LoopData,
};
use scenechar::synth::make_benchmark;
use scenechar::{Error, Result};

#[derive(Parser)]
#[command(name = "scenechar", version, about = "Self-trained scene character detection")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; missing keys use the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Input dataset manifest.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Model checkpoint to read.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed for generation and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the mining mode.
    #[arg(long, global = true)]
    mode: Option<Mode>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Semi,
    Weak,
}

impl From<Mode> for SourceTier {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Semi => SourceTier::Semi,
            Mode::Weak => SourceTier::Weak,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Char,
    Line,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic benchmark (full/weak/none/test manifests).
    Synth,
    /// Train the light model on a fully annotated manifest.
    Pretrain,
    /// Run a checkpoint over a manifest and dump detections.
    Infer,
    /// Mine new character samples from a detection dump.
    Mine {
        #[arg(long)]
        detections: PathBuf,
    },
    /// Merge mined samples into the base set and retrain from a checkpoint.
    Retrain {
        /// Manifest of the images the samples were mined from.
        #[arg(long)]
        source: PathBuf,
        /// Mined dump written by `mine`.
        #[arg(long)]
        mined: PathBuf,
    },
    /// Run the full self-training loop from a light checkpoint.
    Iterate {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Group detections into text lines.
    ExtractLines {
        #[arg(long)]
        detections: PathBuf,
    },
    /// Score detections or lines against a test manifest.
    Eval {
        /// Detection dump for character level, lines dump for line level.
        #[arg(long)]
        detections: PathBuf,
        #[arg(long, value_enum, default_value = "char")]
        level: LevelArg,
    },
    /// Time detection and line extraction per image.
    Timing,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}

fn required<'a>(flag: &str, value: &'a Option<PathBuf>) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Validation(format!("--{flag} is required for this command")))
}

fn manifest(path: &Path) -> Result<DatasetManifest> {
    let (m, report) = load_manifest(path)?;
    for w in &report.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(m)
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let mut config = match &c.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = c.seed {
        config = config.with_seed(seed);
    }
    if let Some(mode) = c.mode {
        config.loop_.mode = mode.into();
    }
    config.validate()?;
    let out = c.out.as_path();
    config.persist(out)?;

    match cli.command {
        Command::Synth => {
            let b = make_benchmark(&config.synth.scene, config.synth.images, config.synth.fractions, out)?;
            for m in b.manifests() {
                info!("{}: {} images, {} characters", m.name, m.len(), m.char_count());
            }
        }
        Command::Pretrain => {
            let full = manifest(required("manifest", &c.manifest)?)?;
            let model = pretrain_light(&config.detector, &full, &config.schedules.pretrain)?;
            let path = out.join("light.ckpt");
            model.save(&path)?;
            println!("{} {}", path.display(), model.checkpoint_id());
        }
        Command::Infer => {
            let m = manifest(required("manifest", &c.manifest)?)?;
            let model = DetectorModel::load(required("checkpoint", &c.checkpoint)?)?;
            let path = out.join("detections.jsonl");
            let dets = detect_manifest_to(&model, &m, &path)?;
            let n: usize = dets.values().map(Vec::len).sum();
            println!("{} {n} candidates in {} images", path.display(), dets.len());
        }
        Command::Mine { detections } => {
            let source = manifest(required("manifest", &c.manifest)?)?;
            let dets = load_detections(&detections)?;
            let round = match &c.checkpoint {
                Some(p) => DetectorModel::load(p)?.metadata.round + 1,
                None => 1,
            };
            let (mined, report) = mine_dataset(&dets, &source, config.loop_.mode, &config.mining, round)?;
            save_detections(out.join("mined.jsonl"), &source.name, &mined_as_detections(&mined))?;
            write_json(out.join("mining_report.json"), &report)?;
            println!("mined {} samples from {} images", report.total, report.images);
        }
        Command::Retrain { source, mined } => {
            let base = manifest(required("manifest", &c.manifest)?)?;
            let source = manifest(&source)?;
            let init = DetectorModel::load(required("checkpoint", &c.checkpoint)?)?;
            let round = init.metadata.round + 1;
            let samples: Vec<MinedSample> = load_detections(&mined)?
                .into_iter()
                .flat_map(|(id, cands)| {
                    cands.into_iter().map(move |cand| MinedSample {
                        image_id: id.clone(),
                        bbox: cand.bbox,
                        score: cand.score,
                        source_tier: config.loop_.mode,
                        round,
                    })
                })
                .collect();
            if samples.is_empty() {
                log::warn!("no mined samples, checkpoint left unchanged");
                return Ok(());
            }
            let merged = merge_training_set(&base, &samples, &source)?;
            scenechar::datamodel::save_manifest(&merged, out.join("merged.jsonl"))?;
            let mut model = train(init.clone(), &merged, &config.schedules.retrain)?;
            model.metadata.round = round;
            model.metadata.source_manifests =
                vec![manifest_ref(&base), manifest_ref(&source), manifest_ref(&merged)];
            let path = out.join(format!("round-{round}.ckpt"));
            model.save(&path)?;
            println!("{} {}", path.display(), model.checkpoint_id());
        }
        Command::Iterate { source, test } => {
            let base = manifest(required("manifest", &c.manifest)?)?;
            let (source, test) = (manifest(&source)?, manifest(&test)?);
            let light = match &c.checkpoint {
                Some(p) => DetectorModel::load(p)?,
                None => {
                    let m = pretrain_light(&config.detector, &base, &config.schedules.pretrain)?;
                    m.save(out.join("light.ckpt"))?;
                    m
                }
            };
            let data = LoopData {
                base: &base,
                source: &source,
                test: &test,
            };
            let history = run_loop(&config.loop_config(), &config.linegroup, &config.eval, data, &light, out)?;
            for h in &history {
                println!(
                    "round {} mined {:>6} char F {:.4} line F {:.4}",
                    h.round, h.mined, h.scores.char_level.fscore, h.scores.line_level.fscore
                );
            }
        }
        Command::ExtractLines { detections } => {
            let dets = load_detections(&detections)?;
            let lines = extract_all_lines(&dets, &config.linegroup);
            let n: usize = lines.iter().map(|l| l.lines.len()).sum();
            save_lines(out.join("lines.jsonl"), "lines", &lines)?;
            println!("{n} lines in {} images", lines.len());
        }
        Command::Eval { detections, level } => {
            let test = manifest(required("manifest", &c.manifest)?)?;
            let ev = &config.eval;
            let report = match level {
                LevelArg::Char => {
                    let dets = load_detections(&detections)?;
                    let curve = pr_curve(&char_eval_inputs(&dets, &test, 0.0)?, ev.iou_min);
                    write_pr_csv(&curve, out.join("pr_curve.csv"))?;
                    plot_pr_curves(&[&curve], out.join("pr_curve.png"))?;
                    let counts = total_counts(&char_eval_inputs(&dets, &test, ev.operating_threshold)?, ev.iou_min);
                    EvalReport::new(&test.name, &detections.display().to_string(), Level::Char, counts, ev.operating_threshold)
                }
                LevelArg::Line => {
                    let lines = load_lines(&detections)?;
                    let mut counts = Counts::default();
                    for il in &lines {
                        let r = test.get(&il.image_id).ok_or_else(|| {
                            Error::Validation(format!("image {} is not in the test manifest", il.image_id))
                        })?;
                        counts += eval_lines(&il.lines, &r.words.boxes, ev.iou_min).0;
                    }
                    EvalReport::new(&test.name, &detections.display().to_string(), Level::Line, counts, config.linegroup.conf_floor)
                }
            };
            report.save(out.join("report.json"))?;
            println!("P {:.4} R {:.4} F {:.4}", report.precision, report.recall, report.fscore);
        }
        Command::Timing => {
            let m = manifest(required("manifest", &c.manifest)?)?;
            let model = DetectorModel::load(required("checkpoint", &c.checkpoint)?)?;
            let report = timing_report(&model, &m, &config.linegroup)?;
            write_json(out.join("timing.json"), &report)?;
            println!("{report}");
        }
    }
    Ok(())
}
