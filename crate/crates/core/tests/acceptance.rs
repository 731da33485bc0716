//! Acceptance suite. Every check prints one `PASS`/`FAIL` line before
//! asserting, so the test log doubles as a report. The reference implementations here are written independently of
//! the library code they check.

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scenechar::datamodel::{CharCandidate, DatasetManifest, SourceTier, WeakAnnotation};
use scenechar::detector::anchors::{decode, encode, DefaultAnchor};
use scenechar::detector::train::{train_images, TrainImage};
use scenechar::detector::{nms, DetectorConfig, DetectorModel, TrainSchedule, TrainStage};
use scenechar::eval::{pr_curve, prf, total_counts, Counts, PrPoint};
use scenechar::geometry::BBox;
use scenechar::linegroup::{extract_lines, FlowGraphConfig};
use scenechar::mining::{mine_semi, mine_weak, MiningConfig};
use scenechar::orchestrate::{detect_manifest, evaluate, pretrain_light, run_round, Config, TestScores};
use scenechar::synth::{make_benchmark, render_scene, SceneSpec};

// Writes to the stdout handle directly: libtest only captures the print
// macros, so report lines show up in a plain `cargo test` run.
macro_rules! report {
    ($($arg:tt)*) => {
        writeln!(std::io::stdout().lock(), $($arg)*).unwrap()
    };
}

fn verdict(id: u32, name: &str, ok: bool, detail: &str) {
    report!("{} criterion {id:>2} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
}

fn bbox(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
    BBox::new(x0, y0, x1, y1).unwrap()
}

fn overlap_1d(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

fn ref_iou(a: &BBox, b: &BBox) -> f64 {
    let inter = overlap_1d(a.x_min(), a.x_max(), b.x_min(), b.x_max())
        * overlap_1d(a.y_min(), a.y_max(), b.y_min(), b.y_max());
    let union = a.width() * a.height() + b.width() * b.height() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Random box on a half-pixel grid, so that exact threshold hits are common.
fn grid_box(rng: &mut ChaCha8Rng, max: f64) -> BBox {
    let q = |v: f64| (v * 2.0).round() / 2.0;
    let x0 = q(rng.gen_range(0.0..max - 2.0));
    let y0 = q(rng.gen_range(0.0..max - 2.0));
    let x1 = q(rng.gen_range(x0 + 0.5..(x0 + max / 3.0).min(max)));
    let y1 = q(rng.gen_range(y0 + 0.5..(y0 + max / 3.0).min(max)));
    bbox(x0, y0, x1.max(x0 + 0.5), y1.max(y0 + 0.5))
}

// ---------------------------------------------------------------- 1: mining

#[test]
fn c01_mining_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let grid = [0.0, 0.1, 0.2, 0.25, 0.5, 0.75, 0.8, 0.9, 1.0];
    let start = Instant::now();
    let mut mismatches = 0;
    let cases = 10_000;
    for _ in 0..cases {
        let cfg = MiningConfig {
            semi_threshold: grid[rng.gen_range(1..8)],
            weak_threshold: grid[rng.gen_range(1..8)],
            overlap_x: grid[rng.gen_range(1..8)],
            overlap_y: grid[rng.gen_range(1..8)],
        };
        let cands: Vec<CharCandidate> = (0..rng.gen_range(0..12))
            .map(|_| {
                let score = if rng.gen_bool(0.3) { grid[rng.gen_range(0..9)] } else { rng.gen() };
                CharCandidate::new(grid_box(&mut rng, 20.0), score).unwrap()
            })
            .collect();
        let words = WeakAnnotation {
            boxes: (0..rng.gen_range(0..4)).map(|_| grid_box(&mut rng, 20.0)).collect(),
        };

        let semi_ref: Vec<BBox> = cands
            .iter()
            .filter(|c| c.score > cfg.semi_threshold)
            .map(|c| c.bbox)
            .collect();
        let weak_ref: Vec<BBox> = cands
            .iter()
            .filter(|c| {
                c.score > cfg.weak_threshold
                    && words.boxes.iter().any(|g| {
                        let c = &c.bbox;
                        let ix = overlap_1d(c.x_min(), c.x_max(), g.x_min(), g.x_max());
                        let iy = overlap_1d(c.y_min(), c.y_max(), g.y_min(), g.y_max());
                        ix / c.width() > cfg.overlap_x && iy / c.height() > cfg.overlap_y
                    })
            })
            .map(|c| c.bbox)
            .collect();

        let semi: Vec<BBox> = mine_semi("i", &cands, &cfg, 1).iter().map(|m| m.bbox).collect();
        let weak: Vec<BBox> = mine_weak("i", &cands, &words, &cfg, 1).iter().map(|m| m.bbox).collect();
        mismatches += usize::from(semi != semi_ref) + usize::from(weak != weak_ref);
    }
    let took = start.elapsed();
    let ok = mismatches == 0 && took < Duration::from_secs(10);
    verdict(1, "mining oracle", ok, &format!("{cases} cases, {mismatches} mismatches, {took:.2?}"));
    assert!(ok);
}

// ---------------------------------------------------------------- 2: NMS

fn ref_nms(cands: &[CharCandidate], t: f64) -> Vec<CharCandidate> {
    let before = |a: &CharCandidate, b: &CharCandidate| {
        a.score > b.score
            || a.score == b.score
                && (a.bbox.x_min() < b.bbox.x_min()
                    || a.bbox.x_min() == b.bbox.x_min() && a.bbox.y_min() < b.bbox.y_min())
    };
    let mut left = cands.to_vec();
    let mut kept = Vec::new();
    while !left.is_empty() {
        let mut top = 0;
        for i in 1..left.len() {
            if before(&left[i], &left[top]) {
                top = i;
            }
        }
        // full ties keep input order
        let k = left.remove(top);
        left.retain(|c| ref_iou(&c.bbox, &k.bbox) <= t);
        kept.push(k);
    }
    kept
}

#[test]
fn c02_nms_matches_quadratic_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let start = Instant::now();
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(0..=200);
        let cands: Vec<CharCandidate> = (0..n)
            .map(|_| {
                // coarse scores force the tie-break rules to matter
                let score = if rng.gen_bool(0.5) { rng.gen_range(0..5) as f64 / 4.0 } else { rng.gen() };
                CharCandidate::new(grid_box(&mut rng, 60.0), score).unwrap()
            })
            .collect();
        if nms(&cands, 0.45) != ref_nms(&cands, 0.45) {
            mismatches += 1;
        }
    }
    let took = start.elapsed();
    let ok = mismatches == 0 && took < Duration::from_secs(30);
    verdict(2, "NMS oracle", ok, &format!("1000 sets, {mismatches} mismatches, {took:.2?}"));
    assert!(ok);
}

// ---------------------------------------------------------------- 3: box coding

#[test]
fn c03_encode_decode_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let gt = BBox::from_center(
            rng.gen_range(0.05..0.95),
            rng.gen_range(0.05..0.95),
            rng.gen_range(0.01..0.5),
            rng.gen_range(0.01..0.5),
        )
        .unwrap();
        let a = DefaultAnchor {
            cx: rng.gen_range(0.0..1.0),
            cy: rng.gen_range(0.0..1.0),
            w: rng.gen_range(0.02..0.6),
            h: rng.gen_range(0.02..0.6),
        };
        let back = decode(&encode(&gt, &a), &a).unwrap();
        for (x, y) in back.to_array().iter().zip(gt.to_array()) {
            worst = worst.max((x - y).abs() / y.abs().max(1e-12));
        }
    }
    let ok = worst < 1e-9;
    verdict(3, "encode/decode round trip", ok, &format!("max relative error {worst:.2e} over 1000 pairs"));
    assert!(ok);
}

// ---------------------------------------------------------------- 4: line grouping

struct RefCost<'a> {
    cfg: &'a FlowGraphConfig,
    c: &'a [CharCandidate],
}

impl RefCost<'_> {
    fn link(&self, i: usize, j: usize) -> Option<f64> {
        let (a, b) = (&self.c[i].bbox, &self.c[j].bbox);
        let (acx, acy) = ((a.x_min() + a.x_max()) / 2.0, (a.y_min() + a.y_max()) / 2.0);
        let (bcx, bcy) = ((b.x_min() + b.x_max()) / 2.0, (b.y_min() + b.y_max()) / 2.0);
        let (ha, hb) = (a.height(), b.height());
        let h = ha.min(hb);
        let gap = (b.x_min() - a.x_max()).max(0.0);
        let vert = (acy - bcy).abs();
        let ok = bcx > acx
            && gap <= self.cfg.max_pair_gap * h
            && ha.max(hb) / h <= self.cfg.max_height_ratio
            && vert <= self.cfg.max_vert_offset * h;
        ok.then(|| {
            self.cfg.w_dist * gap / h + self.cfg.w_scale * (ha / hb).ln().abs() + self.cfg.w_vert * vert / h
        })
    }

    fn node(&self, i: usize) -> f64 {
        self.cfg.data_cost_scale * (self.cfg.conf_floor - self.c[i].score)
    }

    fn chain(&self, members: &[usize]) -> Option<f64> {
        let mut cost = self.cfg.entry_cost + self.cfg.exit_cost;
        for &m in members {
            cost += self.node(m);
        }
        for w in members.windows(2) {
            cost += self.link(w[0], w[1])?;
        }
        Some(cost)
    }

    /// Minimum over every way of picking disjoint left-to-right chains.
    fn exhaustive(&self) -> f64 {
        let mut order: Vec<usize> = (0..self.c.len()).filter(|&i| self.c[i].score > self.cfg.conf_floor).collect();
        order.sort_by(|&a, &b| {
            let ca = self.c[a].bbox.x_min() + self.c[a].bbox.x_max();
            let cb = self.c[b].bbox.x_min() + self.c[b].bbox.x_max();
            ca.total_cmp(&cb)
        });
        let mut best = 0.0f64;
        let mut chains: Vec<Vec<usize>> = Vec::new();
        self.walk(&order, 0, &mut chains, &mut best);
        best
    }

    fn walk(&self, order: &[usize], k: usize, chains: &mut Vec<Vec<usize>>, best: &mut f64) {
        if k == order.len() {
            let total: Option<f64> = chains.iter().map(|c| self.chain(c)).sum();
            if let Some(t) = total {
                *best = best.min(t);
            }
            return;
        }
        let i = order[k];
        self.walk(order, k + 1, chains, best);
        chains.push(vec![i]);
        self.walk(order, k + 1, chains, best);
        chains.pop();
        for c in 0..chains.len() {
            let last = *chains[c].last().unwrap();
            if self.link(last, i).is_some() {
                chains[c].push(i);
                self.walk(order, k + 1, chains, best);
                chains[c].pop();
            }
        }
    }
}

fn line_scene(rng: &mut ChaCha8Rng) -> Vec<CharCandidate> {
    let n = rng.gen_range(1..=8);
    let rows: Vec<f64> = (0..rng.gen_range(1..=2)).map(|_| rng.gen_range(10.0..90.0)).collect();
    (0..n)
        .map(|_| {
            let h = rng.gen_range(8.0..16.0);
            let cy = rows[rng.gen_range(0..rows.len())] + rng.gen_range(-3.0..3.0);
            let cx = rng.gen_range(10.0..110.0);
            let b = BBox::from_center(cx, cy, h * rng.gen_range(0.5..0.9), h).unwrap();
            CharCandidate::new(b, rng.gen()).unwrap()
        })
        .collect()
}

#[test]
fn c04_flow_grouping_is_optimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let configs = [
        FlowGraphConfig::default(),
        FlowGraphConfig {
            entry_cost: 0.3,
            exit_cost: 0.3,
            ..FlowGraphConfig::default()
        },
    ];
    let start = Instant::now();
    let mut mismatches = 0;
    let mut nonempty = 0;
    for scene in 0..200 {
        let cfg = &configs[scene % 2];
        let cands = line_scene(&mut rng);
        let oracle = RefCost { cfg, c: &cands };
        let lines = extract_lines(&cands, cfg);
        nonempty += usize::from(!lines.is_empty());
        let got: Option<f64> = lines.iter().map(|l| oracle.chain(&l.members)).sum();
        let want = oracle.exhaustive();
        // equal-cost partitions may differ; only the cost must agree
        match got {
            Some(g) if (g - want).abs() <= 1e-9 => {}
            _ => mismatches += 1,
        }
    }
    let took = start.elapsed();
    let ok = mismatches == 0 && took < Duration::from_secs(60);
    verdict(
        4,
        "flow grouping optimality",
        ok,
        &format!("200 scenes ({nonempty} with lines), {mismatches} cost mismatches, {took:.2?}"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 5-7: supervision

const SEEDS: [u64; 3] = [0, 1, 2];

struct SeedRun {
    baseline: TestScores,
    semi: TestScores,
    weak1: TestScores,
    weak2: TestScores,
}

fn score(model: &DetectorModel, test: &DatasetManifest, cfg: &Config) -> TestScores {
    let dets = detect_manifest(model, test).unwrap();
    evaluate(&model.checkpoint_id(), &dets, test, &cfg.eval, &cfg.linegroup).unwrap()
}

fn run_seed(seed: u64, dir: &Path) -> SeedRun {
    let cfg = Config::default().with_seed(seed);
    let bench = make_benchmark(&cfg.synth.scene, cfg.synth.images, cfg.synth.fractions, dir).unwrap();
    assert_eq!(
        [bench.full.len(), bench.weak.len(), bench.none.len(), bench.test.len()],
        [50, 500, 500, 200]
    );
    let light = pretrain_light(&cfg.detector, &bench.full, &cfg.schedules.pretrain).unwrap();
    let baseline = score(&light, &bench.test, &cfg);

    let mut lc = cfg.loop_config();
    lc.mode = SourceTier::Semi;
    let semi = run_round(&light, &light, &bench.full, &bench.none, &lc).unwrap();
    lc.mode = SourceTier::Weak;
    let weak1 = run_round(&light, &light, &bench.full, &bench.weak, &lc).unwrap();
    let weak2 = run_round(&weak1.model, &light, &bench.full, &bench.weak, &lc).unwrap();
    assert_eq!(weak2.model.metadata.round, 2);

    let run = SeedRun {
        baseline,
        semi: score(&semi.model, &bench.test, &cfg),
        weak1: score(&weak1.model, &bench.test, &cfg),
        weak2: score(&weak2.model, &bench.test, &cfg),
    };
    report!(
        "  seed {seed}: char F baseline {:.4} semi {:.4} weak {:.4} weak-r2 {:.4} | line F {:.4} {:.4} {:.4} {:.4} | mined semi {} weak {} weak-r2 {}",
        run.baseline.char_level.fscore,
        run.semi.char_level.fscore,
        run.weak1.char_level.fscore,
        run.weak2.char_level.fscore,
        run.baseline.line_level.fscore,
        run.semi.line_level.fscore,
        run.weak1.line_level.fscore,
        run.weak2.line_level.fscore,
        semi.mined.len(),
        weak1.mined.len(),
        weak2.mined.len(),
    );
    for (name, s) in [("baseline", &run.baseline), ("semi", &run.semi), ("weak", &run.weak1), ("weak-r2", &run.weak2)] {
        let c = &s.char_level;
        report!("    {name:<8} char P {:.4} R {:.4} (tp {} fp {} fn {})", c.precision, c.recall, c.counts.tp, c.counts.fp, c.counts.fn_);
    }
    run
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn c05_c07_supervision_ordering() {
    let start = Instant::now();
    let runs: Vec<SeedRun> = SEEDS
        .iter()
        .map(|&s| {
            let dir = tempfile::tempdir().unwrap();
            run_seed(s, dir.path())
        })
        .collect();
    let took = start.elapsed();
    let pts = |f: fn(&SeedRun) -> f64| 100.0 * mean(runs.iter().map(f));

    let (b, s, w) = (
        pts(|r| r.baseline.char_level.fscore),
        pts(|r| r.semi.char_level.fscore),
        pts(|r| r.weak1.char_level.fscore),
    );
    let ok5 = w - s >= 1.0 && s - b >= 1.0;
    verdict(
        5,
        "supervision ordering (chars)",
        ok5,
        &format!("3-seed mean F weak {w:.2} / semi {s:.2} / baseline {b:.2}; gaps {:.2}, {:.2} (need >= 1.0); {took:.0?}", w - s, s - b),
    );

    let (bl, sl, wl) = (
        pts(|r| r.baseline.line_level.fscore),
        pts(|r| r.semi.line_level.fscore),
        pts(|r| r.weak1.line_level.fscore),
    );
    let ok6 = wl - sl >= 0.5 && sl - bl >= 0.5;
    verdict(
        6,
        "supervision ordering (lines)",
        ok6,
        &format!("3-seed mean F weak {wl:.2} / semi {sl:.2} / baseline {bl:.2}; gaps {:.2}, {:.2} (need >= 0.5)", wl - sl, sl - bl),
    );

    let w2 = pts(|r| r.weak2.char_level.fscore);
    let improved = runs.iter().filter(|r| r.weak2.char_level.fscore >= r.weak1.char_level.fscore).count();
    let ok7 = w2 >= w - 0.2 && improved >= 2;
    verdict(
        7,
        "second round",
        ok7,
        &format!("3-seed mean F round 2 {w2:.2} vs round 1 {w:.2} (need >= {:.2}); not worse in {improved}/3 seeds", w - 0.2),
    );
    assert!(ok5 && ok6 && ok7);
}

// ---------------------------------------------------------------- 8: overfit

#[test]
fn c08_overfits_single_image() {
    let spec = SceneSpec { clutter: 0.0, ..SceneSpec::default() };
    let scene = render_scene(&spec, 0).unwrap();
    let truth: Vec<BBox> = scene.chars.iter().map(|c| c.bbox).collect();
    let schedule = TrainSchedule {
        stages: vec![TrainStage { iterations: 2000, learning_rate: 1e-3 }],
        batch_size: 1,
        momentum: 0.9,
        weight_decay: 5e-4,
        seed: 0,
        augment: false,
    };
    let model = DetectorModel::new(DetectorConfig::default(), 0).unwrap();
    let image = TrainImage { image: scene.image.clone(), boxes: truth.clone() };
    let model = train_images(model, &[image], &schedule).unwrap();
    let dets: Vec<(BBox, f64)> = model
        .detect(&scene.image)
        .unwrap()
        .into_iter()
        .filter(|c| c.score >= 0.05)
        .map(|c| (c.bbox, c.score))
        .collect();
    let c = total_counts(&[(dets, truth.clone())], 0.5);
    let f = prf(c).fscore;
    let ok = f == 1.0;
    verdict(
        8,
        "overfit sanity",
        ok,
        &format!("F {f:.4} on {} characters after 2000 iterations (tp {} fp {} fn {})", truth.len(), c.tp, c.fp, c.fn_),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 9: determinism

fn cli(args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_scenechar"))
        .args(args)
        .env("RUST_LOG", "warn")
        .status()
        .unwrap();
    assert!(status.success(), "scenechar {args:?} failed: {status}");
}

#[test]
fn c09_pretrain_and_infer_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p).to_str().unwrap().to_string();
    std::fs::write(
        d("cfg.toml"),
        "[synth]\nimages = 60\n\n[schedules.pretrain]\nstages = [{ iterations = 60, learning_rate = 0.002 }]\n\
         batch_size = 4\nmomentum = 0.9\nweight_decay = 0.0005\nseed = 5\naugment = true\n",
    )
    .unwrap();
    cli(&["synth", "--config", &d("cfg.toml"), "--out", &d("bench")]);
    for run in ["a", "b"] {
        cli(&["pretrain", "--config", &d("cfg.toml"), "--seed", "5", "--manifest", &d("bench/full.jsonl"), "--out", &d(run)]);
        cli(&[
            "infer",
            "--checkpoint",
            &d(&format!("{run}/light.ckpt")),
            "--manifest",
            &d("bench/test.jsonl"),
            "--out",
            &d(run),
        ]);
    }
    let a = std::fs::read(d("a/detections.jsonl")).unwrap();
    let b = std::fs::read(d("b/detections.jsonl")).unwrap();
    let ok = !a.is_empty() && a == b;
    verdict(9, "determinism", ok, &format!("detection dumps {} bytes, identical: {}", a.len(), a == b));
    assert!(ok);
}

// ---------------------------------------------------------------- 10: evaluation

/// Greedy matching written out directly: score descending (stable), each
/// detection takes the free ground truth of highest IoU, lowest index first.
fn ref_counts(dets: &[(BBox, f64)], gts: &[BBox]) -> Counts {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&a, &b| dets[b].1.partial_cmp(&dets[a].1).unwrap_or(Ordering::Equal));
    let mut used = vec![false; gts.len()];
    let mut tp = 0;
    for &i in &idx {
        let mut pick: Option<usize> = None;
        let mut best = -1.0;
        for (j, g) in gts.iter().enumerate() {
            let o = ref_iou(&dets[i].0, g);
            if !used[j] && o > best {
                best = o;
                pick = Some(j);
            }
        }
        if let Some(j) = pick.filter(|_| best >= 0.5) {
            used[j] = true;
            tp += 1;
        }
    }
    Counts { tp, fp: dets.len() - tp, fn_: gts.len() - tp }
}

fn ref_prf(c: Counts) -> (f64, f64, f64) {
    let p = if c.tp + c.fp > 0 { c.tp as f64 / (c.tp + c.fp) as f64 } else { 1.0 };
    let r = if c.tp + c.fn_ > 0 { c.tp as f64 / (c.tp + c.fn_) as f64 } else { 1.0 };
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f)
}

type Labeled = Vec<(Vec<(BBox, f64)>, Vec<BBox>)>;

fn random_labeled(rng: &mut ChaCha8Rng) -> Labeled {
    (0..rng.gen_range(1..5))
        .map(|_| {
            let gts: Vec<BBox> = (0..rng.gen_range(0..6)).map(|_| grid_box(rng, 30.0)).collect();
            let mut dets = Vec::new();
            for g in &gts {
                if rng.gen_bool(0.7) {
                    let d = g.translate(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).unwrap();
                    dets.push((d, rng.gen_range(0..10) as f64 / 9.0));
                }
            }
            for _ in 0..rng.gen_range(0..4) {
                dets.push((grid_box(rng, 30.0), rng.gen_range(0..10) as f64 / 9.0));
            }
            (dets, gts)
        })
        .collect()
}

#[test]
fn c10_evaluation_matches_direct_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut mismatches = 0;
    for _ in 0..500 {
        let data = random_labeled(&mut rng);
        let mut total = Counts::default();
        for (d, g) in &data {
            let c = ref_counts(d, g);
            total.tp += c.tp;
            total.fp += c.fp;
            total.fn_ += c.fn_;
        }
        let got = prf(total_counts(&data, 0.5));
        let (p, r, f) = ref_prf(total);
        if total_counts(&data, 0.5) != total || (got.precision, got.recall, got.fscore) != (p, r, f) {
            mismatches += 1;
        }

        // the curve: rematch from scratch at every distinct score
        let mut scores: Vec<f64> = data.iter().flat_map(|(d, _)| d.iter().map(|x| x.1)).collect();
        scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
        scores.dedup();
        let want: Vec<PrPoint> = scores
            .iter()
            .map(|&t| {
                let mut c = Counts::default();
                for (d, g) in &data {
                    let kept: Vec<(BBox, f64)> = d.iter().copied().filter(|x| x.1 >= t).collect();
                    let k = ref_counts(&kept, g);
                    c.tp += k.tp;
                    c.fp += k.fp;
                    c.fn_ += k.fn_;
                }
                let (p, r, _) = ref_prf(c);
                PrPoint { threshold: t, recall: r, precision: p }
            })
            .collect();
        if pr_curve(&data, 0.5) != want {
            mismatches += 1;
        }
    }
    let ok = mismatches == 0;
    verdict(10, "evaluation oracle", ok, &format!("500 labeled sets, {mismatches} mismatches"));
    assert!(ok);
}
