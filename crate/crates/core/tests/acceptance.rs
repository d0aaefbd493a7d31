//! End-to-end acceptance checks, run without the libtest harness so each
//! criterion's PASS/FAIL line is always printed. Exits non-zero if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use landval::augment::{add_noise, apply_geometric, augment, AugmentConfig};
use landval::balance::assign_ranges;
use landval::config::RunConfig;
use landval::eval::{discard_worst, evaluate, DiscardMode, EvalConfig, EvalRecord, DISCARD_FRACTIONS};
use landval::loss::{loss_gradient, total_loss, Aggregation, InnerDistance, LossConfig, OuterNorm};
use landval::net::{ModelState, NetConfig};
use landval::pose::linalg::{add, norm, sub};
use landval::pose::{fit_head_pose, kabsch, rotation_distance, CameraModel, FitOptions, Mat3, Template3D, Vec3};
use landval::stats::chi_square_gof;
use landval::synth::{generate, SynthConfig, SynthOutput};
use landval::train::{train, Balancing};
use landval::types::{FaceBox, GrayImage, LandmarkSet, Point2, Sample, Triplet, TripletVector};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

// ---------------------------------------------------------------- 1

fn oracle_loss(pred: &[(f64, f64, f64)], gt: &[(f64, f64)], l2: bool, euclid: bool, mean: bool) -> f64 {
    let rho = |r: f64| if l2 { 0.5 * r * r } else { r.abs() };
    let mut acc = 0.0;
    for (&(x, y, v), &(gx, gy)) in pred.iter().zip(gt) {
        let d = if euclid { ((x - gx).powi(2) + (y - gy).powi(2)).sqrt() } else { (x - gx).abs() + (y - gy).abs() };
        acc += rho(gx - x) + rho(gy - y) + rho(d - v);
    }
    if mean {
        acc / (3 * pred.len()) as f64
    } else {
        acc
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut per_combo = BTreeMap::new();
    for case in 0..100_000 {
        let (l2, euclid) = (case % 2 == 0, (case / 2) % 2 == 0);
        let mean = rng.random_bool(0.5);
        let l = rng.random_range(1..=12);
        let pred: Vec<(f64, f64, f64)> = (0..l).map(|_| (rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-10.0..60.0))).collect();
        let gt: Vec<(f64, f64)> = (0..l).map(|_| (rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0))).collect();
        let cfg = LossConfig {
            outer: if l2 { OuterNorm::L2 } else { OuterNorm::L1 },
            inner_distance: if euclid { InnerDistance::Euclidean } else { InnerDistance::Manhattan },
            aggregation: if mean { Aggregation::Mean } else { Aggregation::Sum },
            ..LossConfig::default()
        };
        let tv = TripletVector::new(pred.iter().map(|&(x, y, v)| Triplet { x, y, validity: v }).collect());
        let gs = LandmarkSet::new(gt.iter().map(|&(x, y)| Point2::new(x, y)).collect()).unwrap();
        let got = total_loss(&tv, &gs, &cfg).unwrap();
        let want = oracle_loss(&pred, &gt, l2, euclid, mean);
        worst = worst.max((got - want).abs());
        *per_combo.entry((l2, euclid, mean)).or_insert(0) += 1;
    }
    let t = start.elapsed();
    let pass = worst <= 1e-12 && per_combo.len() == 8 && within(t, 10.0);
    outcome(pass, format!("100000 cases over {} norm and aggregation combinations, max |diff| {worst:.3e}, {:.2}s", per_combo.len(), t.as_secs_f64()))
}

// ---------------------------------------------------------------- 2

/// Loss whose validity target is frozen at `d_fixed` when given.
fn surrogate(out: &[f64], gt: &LandmarkSet, cfg: &LossConfig, d_fixed: Option<&[f64]>) -> f64 {
    let tv = TripletVector::from_flat(out).unwrap();
    match d_fixed {
        None => total_loss(&tv, gt, cfg).unwrap(),
        Some(d) => {
            let rho = |r: f64| match cfg.outer {
                OuterNorm::L2 => 0.5 * r * r,
                OuterNorm::L1 => r.abs(),
            };
            let s: f64 = tv.triplets.iter().zip(&gt.points).zip(d).map(|((t, g), d)| rho(g.x - t.x) + rho(g.y - t.y) + rho(d - t.validity)).sum();
            s / (3 * gt.len()) as f64
        }
    }
}

fn distances(out: &[f64], gt: &LandmarkSet, kind: InnerDistance) -> Vec<f64> {
    out.chunks(3)
        .zip(&gt.points)
        .map(|(t, g)| match kind {
            InnerDistance::Euclidean => (t[0] - g.x).hypot(t[1] - g.y),
            InnerDistance::Manhattan => (t[0] - g.x).abs() + (t[1] - g.y).abs(),
        })
        .collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn net_gradient_check(detach: bool, seed: u64) -> f64 {
    let cfg = NetConfig {
        input_size: 8,
        landmark_count: 2,
        stem_channels: 2,
        stem_kernel: 3,
        stem_stride: 1,
        pool_size: 2,
        residual_block_channels: vec![3],
        fc_hidden: 5,
    };
    let loss = LossConfig { outer: OuterNorm::L2, inner_distance: InnerDistance::Euclidean, detach_distance_target: detach, aggregation: Aggregation::Mean };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = ModelState::init(&cfg, seed).unwrap();
    for p in &mut model.params {
        for w in &mut p.value {
            *w += rng.random_range(-0.05..0.05);
        }
    }
    let img = GrayImage::new(8, 8, (0..64).map(|_| rng.random()).collect()).unwrap();
    let gt = LandmarkSet::new((0..2).map(|_| Point2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))).collect()).unwrap();
    let (_, grads) = model.backward(std::slice::from_ref(&img), std::slice::from_ref(&gt), &loss).unwrap();
    let out0 = model.forward_flat(&img).unwrap();
    let d0 = distances(&out0, &gt, loss.inner_distance);
    let frozen = if detach { Some(d0.as_slice()) } else { None };
    let h = 1e-5;
    let mut worst = 0.0f64;
    for pi in 0..model.params.len() {
        for wi in 0..model.params[pi].value.len() {
            let w0 = model.params[pi].value[wi];
            model.params[pi].value[wi] = w0 + h;
            let up = surrogate(&model.forward_flat(&img).unwrap(), &gt, &loss, frozen);
            model.params[pi].value[wi] = w0 - h;
            let down = surrogate(&model.forward_flat(&img).unwrap(), &gt, &loss, frozen);
            model.params[pi].value[wi] = w0;
            worst = worst.max(rel_err(grads.tensors[pi][wi], (up - down) / (2.0 * h)));
        }
    }
    worst
}

fn loss_gradient_check() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for case in 0..400 {
        let outer = if case % 2 == 0 { OuterNorm::L2 } else { OuterNorm::L1 };
        let inner = if (case / 2) % 2 == 0 { InnerDistance::Euclidean } else { InnerDistance::Manhattan };
        let detach = (case / 4) % 2 == 0;
        let cfg = LossConfig { outer, inner_distance: inner, detach_distance_target: detach, aggregation: Aggregation::Mean };
        let l = rng.random_range(1..6);
        let flat: Vec<f64> = (0..3 * l).map(|_| rng.random_range(-5.0..5.0)).collect();
        let gt = LandmarkSet::new((0..l).map(|_| Point2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0))).collect()).unwrap();
        let d0 = distances(&flat, &gt, inner);
        let frozen = if detach { Some(d0.as_slice()) } else { None };
        let grad = loss_gradient(&TripletVector::from_flat(&flat).unwrap(), &gt, &cfg).unwrap();
        let h = 1e-4;
        for i in 0..flat.len() {
            let mut up = flat.clone();
            up[i] += h;
            let mut down = flat.clone();
            down[i] -= h;
            let fd = (surrogate(&up, &gt, &cfg, frozen) - surrogate(&down, &gt, &cfg, frozen)) / (2.0 * h);
            worst = worst.max(rel_err(grad[i], fd));
        }
    }
    worst
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let attached = (0..3).map(|s| net_gradient_check(false, 300 + s)).fold(0.0, f64::max);
    let detached = (0..3).map(|s| net_gradient_check(true, 310 + s)).fold(0.0, f64::max);
    let loss_only = loss_gradient_check();
    let t = start.elapsed();
    let pass = attached < 1e-4 && detached < 1e-4 && loss_only < 1e-6 && within(t, 60.0);
    outcome(
        pass,
        format!("network max rel err {attached:.2e} (attached), {detached:.2e} (detached); loss alone {loss_only:.2e}; {:.2}s", t.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let losses = vec![("a".to_string(), 1.0), ("b".to_string(), 3.0), ("c".to_string(), 6.0)];
    let table = assign_ranges(&losses, 10_000).unwrap();
    let ranges: Vec<(u64, u64)> = table.entries().iter().map(|e| (e.range_start, e.range_end)).collect();
    let exact = ranges == vec![(0, 1000), (1000, 4000), (4000, 10_000)];
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut counts = [0u64; 3];
    for _ in 0..1_000_000 {
        counts[table.draw_indices(1, &mut rng, false).unwrap()[0]] += 1;
    }
    let probs = [0.1, 0.3, 0.6];
    let max_dev = counts.iter().zip(probs).map(|(c, p)| (*c as f64 / 1e6 - p).abs()).fold(0.0, f64::max);
    let (stat, p) = chi_square_gof(&counts, &probs).unwrap();
    let t = start.elapsed();
    let pass = exact && max_dev <= 0.005 && p > 0.001 && within(t, 10.0);
    outcome(pass, format!("ranges {ranges:?}, counts {counts:?}, max dev {max_dev:.5}, chi2 {stat:.3} p {p:.4}, {:.2}s", t.as_secs_f64()))
}

// ---------------------------------------------------------------- 4

/// Uniform rotation from a normalized Gaussian quaternion.
fn quaternion_rotation(rng: &mut impl Rng) -> Mat3 {
    let mut q = [0.0f64; 4];
    loop {
        for v in &mut q {
            *v = rng.random_range(-1.0..1.0);
        }
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            q.iter_mut().for_each(|v| *v /= n);
            break;
        }
    }
    let [w, x, y, z] = q;
    Mat3([
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ])
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut worst_rot, mut worst_t) = (0.0f64, 0.0f64);
    let mut reflections_ok = true;
    for _ in 0..1000 {
        let n = rng.random_range(4..40);
        let p: Vec<Vec3> = (0..n).map(|_| [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)]).collect();
        let r = quaternion_rotation(&mut rng);
        let t = [rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)];
        let q: Vec<Vec3> = p.iter().map(|x| add(r * *x, t)).collect();
        let fit = kabsch(&p, &q, None).unwrap();
        worst_rot = worst_rot.max(rotation_distance(&fit.rotation, &r).to_radians());
        worst_t = worst_t.max(norm(sub(fit.translation, t)));
        let mirrored: Vec<Vec3> = q.iter().map(|x| [-x[0], x[1], x[2]]).collect();
        let m = kabsch(&p, &mirrored, None).unwrap();
        reflections_ok &= (m.rotation.det() - 1.0).abs() < 1e-9;
    }
    let t = start.elapsed();
    let pass = worst_rot < 1e-9 && worst_t < 1e-9 && reflections_ok && within(t, 5.0);
    outcome(pass, format!("max rotation err {worst_rot:.2e} rad, max translation err {worst_t:.2e}, reflections proper: {reflections_ok}, {:.2}s", t.as_secs_f64()))
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let cfg = SynthConfig { train_common: 250, train_challenging: 250, test_common: 0, test_challenging: 0, seed: 505, ..SynthConfig::default() };
    let data = generate(&cfg).unwrap();
    let template = Template3D::for_count(cfg.landmark_count).unwrap();
    let half = cfg.image_size as f64 / 2.0;
    let camera = CameraModel { focal_px: Some(cfg.focal_px), principal: (half, half) };
    let (mut worst_rot, mut worst_t) = (0.0f64, 0.0f64);
    for m in &data.train.meta {
        let fit = fit_head_pose(&m.exact, &template, &camera, None, &FitOptions::default()).unwrap();
        worst_rot = worst_rot.max(rotation_distance(&fit.transform.rotation, &m.transform.rotation).to_radians());
        worst_t = worst_t.max(norm(sub(fit.transform.translation, m.transform.translation)) / norm(m.transform.translation));
    }
    let t = start.elapsed();
    let pass = data.train.meta.len() == 500 && worst_rot < 1e-3 && worst_t < 1e-3 && within(t, 30.0);
    outcome(pass, format!("500 samples, max rotation err {worst_rot:.2e} rad, max relative translation err {worst_t:.2e}, {:.2}s", t.as_secs_f64()))
}

// ---------------------------------------------------------------- 6 and 7

struct DeskRun {
    records: Vec<EvalRecord>,
    summary: String,
    elapsed: Duration,
}

fn desk_run() -> DeskRun {
    let start = Instant::now();
    let run = RunConfig::default();
    let seed = 42;
    let data = generate(&run.synth_config(seed)).unwrap();
    let mut train_set = data.train.dataset.clone();
    let cfg = run.train_config(seed);
    let outcome = train(&mut train_set, None, &cfg).unwrap();
    let ev = evaluate(&outcome.model, &data.test.dataset, &run.eval).unwrap();
    let summary = ev
        .summaries
        .iter()
        .map(|s| format!("{} NME {:.2}", s.subset, 100.0 * s.nme[0]))
        .collect::<Vec<_>>()
        .join(", ");
    DeskRun { records: ev.records, summary, elapsed: start.elapsed() }
}

fn criterion_6(run: &DeskRun) -> Outcome {
    let c = landval::eval::signal_error_correlation(&run.records).unwrap();
    let pass = c.r > 0.2 && c.p_value < 0.001 && within(run.elapsed, 1800.0);
    outcome(pass, format!("pooled r {:.4}, p {:.2e}, n {}; {}; {:.0}s", c.r, c.p_value, c.n, run.summary, run.elapsed.as_secs_f64()))
}

fn discard_curve(records: &[EvalRecord]) -> Vec<f64> {
    DISCARD_FRACTIONS.iter().map(|&f| discard_worst(records, f, DiscardMode::Global).unwrap()).collect()
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn criterion_7(run: &DeskRun) -> Outcome {
    let learned = discard_curve(&run.records);
    let oracle_records: Vec<EvalRecord> = run
        .records
        .iter()
        .map(|r| EvalRecord::new(r.sample_id.clone(), r.errors.clone(), r.errors.clone(), r.interocular, r.subset).unwrap())
        .collect();
    let oracle = discard_curve(&oracle_records);
    let pass = strictly_decreasing(&learned) && strictly_decreasing(&oracle);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{:.3}", 100.0 * x)).collect::<Vec<_>>().join(" > ");
    outcome(pass, format!("learned signal {}; oracle signal {}", fmt(&learned), fmt(&oracle)))
}

// ---------------------------------------------------------------- 8

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let mut run = RunConfig::default();
    // reduced effort so ten runs fit the test budget; both modes see identical compute
    run.synth.train_common = 800;
    run.synth.train_challenging = 200;
    run.training.epochs = 30;
    run.optim.schedule = vec![(0, run.optim.learning_rate), (20, 0.1 * run.optim.learning_rate)];
    let mut results: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for seed in 1..=5u64 {
        let data: SynthOutput = generate(&run.synth_config(seed)).unwrap();
        for (name, mode) in [("balanced", Balancing::LossProportional), ("uniform", Balancing::Uniform)] {
            let mut cfg = run.train_config(seed);
            cfg.balancing = mode;
            let mut train_set = data.train.dataset.clone();
            let model = train(&mut train_set, None, &cfg).unwrap().model;
            let ev = evaluate(&model, &data.test.dataset, &EvalConfig::default()).unwrap();
            let entry = results.entry(name).or_default();
            entry.0.push(ev.summary("challenging").unwrap().nme[0]);
            entry.1.push(ev.summary("common").unwrap().nme[0]);
        }
    }
    let med = |name: &str, common: bool| {
        let (ch, co) = &results[name];
        100.0 * median(if common { co.clone() } else { ch.clone() })
    };
    let (bc, uc) = (med("balanced", false), med("uniform", false));
    let (bco, uco) = (med("balanced", true), med("uniform", true));
    let per_seed: Vec<String> = results["balanced"].0.iter().zip(&results["uniform"].0).map(|(b, u)| format!("{:.2}/{:.2}", 100.0 * b, 100.0 * u)).collect();
    outcome(
        bc <= uc,
        format!(
            "median challenging NME {bc:.2} balanced vs {uc:.2} uniform (per seed {}); common {bco:.2} vs {uco:.2}; {:.0}s",
            per_seed.join(", "),
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 9

fn run_cli(args: &[&str]) -> i32 {
    use clap::Parser;
    let cli = landval::cli::Cli::try_parse_from(std::iter::once("landval").chain(args.iter().copied())).unwrap();
    match landval::cli::run(&cli) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("{}", landval::cli::error_line(&e));
            landval::cli::exit_code(&e)
        }
    }
}

fn pipeline(dir: &Path, config: &Path) -> Vec<(String, Vec<u8>)> {
    let p = |s: &str| dir.join(s).to_string_lossy().into_owned();
    let c = config.to_string_lossy().into_owned();
    let common = ["--config", c.as_str(), "--seed", "9", "--quiet"];
    let steps: Vec<Vec<String>> = vec![
        vec!["gen".into(), "--out".into(), p("data")],
        vec!["train".into(), "--train".into(), p("data/train"), "--val".into(), p("data/test"), "--out".into(), p("run")],
        vec!["eval".into(), "--checkpoint".into(), p("run/model.ckpt"), "--data".into(), p("data/test"), "--out".into(), p("eval/summary.csv"), "--records".into(), p("eval/records.csv")],
        vec!["pose".into(), "--data".into(), p("data/test"), "--checkpoint".into(), p("run/model.ckpt"), "--out".into(), p("pose/poses.csv")],
        vec!["report".into(), p("eval/summary.csv"), "--out".into(), p("report.txt")],
    ];
    for step in &steps {
        let mut args: Vec<&str> = common.to_vec();
        args.extend(step.iter().map(String::as_str));
        assert_eq!(run_cli(&args), 0, "step {step:?} failed");
    }
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push((path.strip_prefix(dir).unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("small.json");
    std::fs::write(
        &config,
        r#"{"synth": {"train_common": 40, "train_challenging": 20, "test_common": 10, "test_challenging": 10},
            "training": {"epochs": 3, "eval_every": 1}}"#,
    )
    .unwrap();
    let a = pipeline(&tmp.path().join("a"), &config);
    let b = pipeline(&tmp.path().join("b"), &config);
    let csvs = a.iter().filter(|(n, _)| n.ends_with(".csv")).count();
    let ckpts = a.iter().filter(|(n, _)| n.ends_with(".ckpt")).count();
    let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    let pass = a.len() == b.len() && differing.is_empty() && ckpts == 1 && csvs >= 6;
    outcome(pass, format!("{} files ({csvs} CSV, {ckpts} checkpoint), {} differ, {:.1}s", a.len(), differing.len(), start.elapsed().as_secs_f64()))
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Outcome {
    let start = Instant::now();
    let cfg = AugmentConfig::default();
    let noise_only = AugmentConfig { blur_prob: 0.0, occlude_prob: 0.0, contrast_range: (0.0, 0.0), ..cfg.clone() };
    let base = generate(&SynthConfig { train_common: 20, train_challenging: 20, test_common: 0, test_challenging: 0, image_size: 48, seed: 1010, ..SynthConfig::default() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1011);
    let out_area = (cfg.output_size * cfg.output_size) as f64;
    let noise_cap = cfg.noise_max_frac * 255.0;
    let (mut max_area, mut max_noise, mut max_geo) = (0.0f64, 0.0f64, 0.0f64);
    let mut violations = 0usize;
    for i in 0..10_000u64 {
        let mut s: Sample = base.train.dataset.samples[(i % 40) as usize].clone();
        let (x, y) = (rng.random_range(0.0..12.0), rng.random_range(0.0..12.0));
        s.face_box = FaceBox { x, y, w: rng.random_range(20.0..48.0 - x), h: rng.random_range(20.0..48.0 - y) };
        let seed = rng.random::<u64>();
        let (out, rec) = augment(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        if out.image.width() != cfg.output_size || out.image.height() != cfg.output_size {
            violations += 1;
        }
        if let Some(o) = rec.occlusion {
            max_area = max_area.max(o.area() as f64 / out_area);
            if o.x + o.w > cfg.output_size || o.y + o.h > cfg.output_size {
                violations += 1;
            }
        }
        max_noise = max_noise.max(rec.noise_amplitude / 255.0);
        // closed-form map of the jittered box
        let b = &s.face_box;
        let (cx, cy) = (b.x + 0.5 * b.w + rec.shift.0 * b.w, b.y + 0.5 * b.h + rec.shift.1 * b.h);
        let (w, h) = (b.w * rec.scale.0, b.h * rec.scale.1);
        let (ox, oy) = (cx - 0.5 * w, cy - 0.5 * h);
        let n = cfg.output_size as f64;
        for (p, q) in s.annotation.points.iter().zip(&out.annotation.points) {
            max_geo = max_geo.max(((p.x - ox) * n / w - q.x).abs()).max(((p.y - oy) * n / h - q.y).abs());
        }
        // per-pixel change caused by noise alone: same draws with the other photometric steps disabled
        let (noisy, nrec) = augment(&s, &noise_only, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let (geo, _) = apply_geometric(&s, nrec.shift, nrec.scale, cfg.output_size).unwrap();
        for (a, g) in noisy.image.data().iter().zip(geo.image.data()) {
            let d = (*a as f64 - *g as f64).abs();
            if d > noise_cap {
                violations += 1;
            }
        }
    }
    // direct noise bound on a mid-grey image
    let grey = GrayImage::filled(32, 32, 128);
    for _ in 0..200 {
        let noisy = add_noise(&grey, 0.3, &mut rng);
        violations += noisy.data().iter().filter(|v| !(51..=205).contains(*v)).count();
    }
    let t = start.elapsed();
    let pass = violations == 0 && max_area <= cfg.occlude_max_area_frac && max_noise <= cfg.noise_max_frac && max_geo <= 1e-9 && within(t, 60.0);
    outcome(
        pass,
        format!(
            "10000 draws: {violations} violations, max occluded area {max_area:.3}, max noise amplitude {max_noise:.3} of range, max landmark map err {max_geo:.2e} px, {:.1}s",
            t.as_secs_f64()
        ),
    )
}

fn main() {
    // LANDVAL_CRITERIA=1,2,5 runs a subset while iterating; unset runs everything
    let only: Option<Vec<usize>> = std::env::var("LANDVAL_CRITERIA").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut report = |n: usize, o: Outcome| {
        println!("CRITERION {n}: {} - {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, o));
    };
    let simple: [(usize, fn() -> Outcome); 5] = [(1, criterion_1), (2, criterion_2), (3, criterion_3), (4, criterion_4), (5, criterion_5)];
    for (n, f) in simple {
        if wanted(n) {
            report(n, f());
        }
    }
    if wanted(6) || wanted(7) {
        let desk = desk_run();
        report(6, criterion_6(&desk));
        report(7, criterion_7(&desk));
    }
    let rest: [(usize, fn() -> Outcome); 3] = [(8, criterion_8), (9, criterion_9), (10, criterion_10)];
    for (n, f) in rest {
        if wanted(n) {
            report(n, f());
        }
    }
    let failed: Vec<usize> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
