//! Acceptance checks, one PASS/FAIL line each.
//!
//! Runs as a plain binary (`cargo test -p engage-cli --test acceptance`); the
//! process exits non-zero when any check fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use engage_core::dataset::{class_weights, SessionData};
use engage_core::eval::{
    accuracy, balanced_accuracy, cross_validate, mean_f_score, BalancedFormula, ConfusionMatrix,
    CvConfig, CvReport, ForestConfig, Method,
};
use engage_core::features::FeatureConfig;
use engage_core::fusion::{icp_register, FusionConfig, IcpParams, RigidTransform};
use engage_core::model::{
    backward_from_logits, clip_grad_norm, forward_route, weighted_ce_loss, ClassWeighting, Mode,
    NetConfig, NetParams, ParamGroup, Route, Sgd, SgdConfig, TrainConfig, Trainable,
};
use engage_core::skeleton::{Joint, Point3, NUM_JOINTS};
use engage_core::synthgen::{generate_dataset, write_dataset, SynthConfig};
use engage_core::{pipeline, Result};
use nalgebra::Vector3;
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Synthetic benchmark seed for the end-to-end and fusion checks.
const BENCH_SEED: u64 = 0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn run(name: &str, limit: Option<Duration>, check: impl FnOnce() -> Result<Outcome>) -> Option<bool> {
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    if filter.is_some_and(|f| !name.contains(f.as_str())) {
        return None;
    }
    let t = Instant::now();
    let res = check();
    let elapsed = t.elapsed();
    let (mut pass, mut detail) = match res {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    if let Some(limit) = limit {
        if elapsed > limit {
            pass = false;
            detail.push_str(&format!("; over the {:.0} s limit", limit.as_secs_f64()));
        }
    }
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("{tag} {name}: {detail} [{:.2} s]", elapsed.as_secs_f64());
    Some(pass)
}

fn metric_oracles() -> Result<Outcome> {
    let counts = [281u64, 2578, 745];
    let mut cells = [[0u64; 3]; 3];
    for (c, &n) in counts.iter().enumerate() {
        cells[c][1] = n;
    }
    let cm = ConfusionMatrix::new(cells);
    let ba = balanced_accuracy(&cm, BalancedFormula::MacroRecall)?;
    let f = mean_f_score(&cm)?;
    let acc = accuracy(&cm)?;

    // Closed forms for a constant predictor of the middle class.
    let total: u64 = counts.iter().sum();
    let p = counts[1] as f64 / total as f64;
    let f_oracle = 100.0 * (2.0 * p / (p + 1.0)) / 3.0;
    let acc_oracle = 100.0 * p;

    let pass = (ba - 100.0 / 3.0).abs() < 1e-9
        && (f - f_oracle).abs() < 1e-9
        && (acc - acc_oracle).abs() < 1e-9
        && (f - 27.80).abs() <= 0.5
        && (acc - 71.53).abs() <= 0.5;
    Ok(outcome(
        pass,
        format!("balanced accuracy {ba:.2}, mean F {f:.2} (target 27.80 +/- 0.5), accuracy {acc:.2} (target 71.53 +/- 0.5)"),
    ))
}

fn gradient_check() -> Result<Outcome> {
    let cfg = NetConfig {
        input_dim: 10,
        hidden: 8,
        seq_len: 3,
        batch_size: 2,
        dropout_p: 0.0,
        ..NetConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = NetParams::init(&cfg, &mut rng)?;
    let x = Array3::from_shape_fn((2, 3, 10), |_| rng.random_range(-1.0..1.0));
    let y: Vec<usize> = (0..6).map(|_| rng.random_range(0..3)).collect();
    let w = [9.16, 1.0, 3.42];
    let loss = |q: &NetParams| -> Result<f64> {
        let c = forward_route(q, &x, Route::Sequence, Mode::Eval)?;
        Ok(weighted_ce_loss(c.probs_time_major(), &y, &w).loss)
    };

    let cache = forward_route(&p, &x, Route::Sequence, Mode::Eval)?;
    let out = weighted_ce_loss(cache.probs_time_major(), &y, &w);
    let mut g = p.zeros_like();
    backward_from_logits(&p, &cache, &out.d_logits, Trainable::ALL, &mut g);

    let eps = 1e-4;
    let analytic: Vec<Vec<f64>> = g.tensors().into_iter().map(|(_, _, t)| t.iter().copied().collect()).collect();
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for (k, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let mut plus = p.clone();
            plus.tensors_mut()[k].1.as_slice_mut().expect("contiguous")[j] += eps;
            let mut minus = p.clone();
            minus.tensors_mut()[k].1.as_slice_mut().expect("contiguous")[j] -= eps;
            let num = (loss(&plus)? - loss(&minus)?) / (2.0 * eps);
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    Ok(outcome(worst < 1e-4, format!("{checked} parameters, worst relative error {worst:.2e}")))
}

fn random_rotation<R: Rng>(rng: &mut R, max_angle: f64, max_shift: f64) -> RigidTransform {
    let axis = Vector3::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    );
    let dir = Vector3::<f64>::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    );
    RigidTransform::from_axis_angle(
        axis,
        rng.random_range(0.0..=max_angle),
        dir.normalize() * rng.random_range(0.0..=max_shift),
    )
}

fn icp_recovery() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let trials = 100;
    let mut good = 0;
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let source: Vec<Point3> = (0..200)
            .map(|_| {
                let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
                Point3::new(0.8 * v[0], 0.5 * v[1], 0.3 * v[2])
            })
            .collect();
        let truth = random_rotation(&mut rng, 30f64.to_radians(), 0.5);
        let target: Vec<Point3> = source.iter().map(|p| truth.apply(p)).collect();
        let init = random_rotation(&mut rng, 10f64.to_radians(), 0.2).compose(&truth);
        let res = icp_register(&source, &target, &init, &IcpParams::default())?;
        let sq: f64 = source
            .iter()
            .map(|p| (res.transform.apply(p) - truth.apply(p)).norm_squared())
            .sum();
        let err = (sq / source.len() as f64).sqrt();
        worst = worst.max(err);
        if err < 1e-3 {
            good += 1;
        }
    }
    Ok(outcome(good >= 99, format!("{good}/{trials} trials under 1 mm, worst {worst:.2e} m")))
}

fn overfit() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let (n, l, d) = (16, 30, 116);
    let net = NetConfig { hidden: 64, dropout_p: 0.0, ..NetConfig::default() };
    let mut p = NetParams::init(&net, &mut rng)?;
    let x = Array3::from_shape_fn((n, l, d), |_| StandardNormal.sample(&mut rng));
    // Time-major labels, three 10-step blocks per sequence.
    let y: Vec<usize> = (0..l * n).map(|r| (r % n + (r / n) / 10) % 3).collect();
    let mut counts = [0usize; 3];
    y.iter().for_each(|&c| counts[c] += 1);
    let w = class_weights(counts)?;

    let defaults = TrainConfig::default();
    let sgd = SgdConfig { lr: defaults.lr0, momentum: defaults.momentum, weight_decay: defaults.weight_decay };
    let mut opt = Sgd::new(&p);
    let mut loss = f64::INFINITY;
    let mut epochs = 0;
    while epochs < 500 {
        let cache = forward_route(&p, &x, Route::Sequence, Mode::Eval)?;
        let out = weighted_ce_loss(cache.probs_time_major(), &y, &w);
        loss = out.loss;
        if loss < 0.01 {
            break;
        }
        let mut g = p.zeros_like();
        backward_from_logits(&p, &cache, &out.d_logits, Trainable::ALL, &mut g);
        clip_grad_norm(&mut g, ParamGroup::Lstm, defaults.grad_clip);
        opt.step(&mut p, &g, &[ParamGroup::Fc, ParamGroup::Lstm, ParamGroup::Out], &sgd);
        epochs += 1;
    }
    Ok(outcome(loss < 0.01, format!("loss {loss:.2e} after {epochs} epochs (limit 500)")))
}

fn bench_sessions(dir: &Path) -> Result<Vec<SessionData>> {
    let cfg = SynthConfig { sessions: 8, duration_s: 120, seed: BENCH_SEED, ..SynthConfig::default() };
    let data = generate_dataset(&cfg)?;
    write_dataset(dir, &cfg, &data)?;
    let (_, sessions) = pipeline::process_dataset(dir, &FusionConfig::default(), &FeatureConfig::default())?;
    Ok(sessions.into_iter().map(|s| s.data).collect())
}

fn fold_averaged(report: &CvReport) -> f64 {
    report.equal_weight.map_or(f64::NAN, |a| a.balanced_accuracy)
}

fn end_to_end() -> Result<Outcome> {
    let tmp = tempfile::tempdir().map_err(|e| engage_core::Error::io(Path::new("tempdir"), e))?;
    let sessions = bench_sessions(tmp.path())?;
    let cv = |method| CvConfig {
        method,
        segments_per_second: 6,
        formula: BalancedFormula::MacroRecall,
        jobs: 0,
        seed: 1,
    };
    let majority = cross_validate(&sessions, &cv(Method::Majority))?;
    let forest = cross_validate(&sessions, &cv(Method::RandomForest(ForestConfig::default())))?;
    let network = cross_validate(
        &sessions,
        &cv(Method::Network {
            net: NetConfig { hidden: 64, ..NetConfig::default() },
            train: TrainConfig { class_weights: ClassWeighting::FromCounts, ..TrainConfig::default() },
        }),
    )?;
    let (m, r, n) = (fold_averaged(&majority), fold_averaged(&forest), fold_averaged(&network));
    let complete = [&majority, &forest, &network].iter().all(|r| r.aborted() == 0);
    Ok(outcome(
        complete && n >= 85.0 && n > r && r > m && m > 33.33 - 1e-9,
        format!("balanced accuracy: network {n:.2}, RF {r:.2}, majority {m:.2}"),
    ))
}

fn fusion_robustness() -> Result<Outcome> {
    let cfg = SynthConfig { sessions: 2, duration_s: 60, seed: BENCH_SEED, ..SynthConfig::default() };
    let tmp = tempfile::tempdir().map_err(|e| engage_core::Error::io(Path::new("tempdir"), e))?;
    let data = generate_dataset(&cfg)?;
    write_dataset(tmp.path(), &cfg, &data)?;
    let (_, processed) =
        pipeline::process_dataset(tmp.path(), &FusionConfig::default(), &FeatureConfig::default())?;
    let mut worst = (0.0f64, String::new());
    for (gen, proc) in data.sessions.iter().zip(&processed) {
        for j in 0..NUM_JOINTS {
            let joint = Joint::ALL[j];
            let mut sq = 0.0;
            let mut n = 0usize;
            for (truth, fused) in gen.truth.pose.iter().zip(&proc.fused.pose.frames) {
                if let (Some(a), Some(b)) = (truth.position(joint), fused.position(joint)) {
                    sq += (a - b).norm_squared();
                    n += 1;
                }
            }
            let rms = (sq / n.max(1) as f64).sqrt();
            if n == 0 || rms > worst.0 {
                worst = (if n == 0 { f64::INFINITY } else { rms }, format!("{} {}", gen.session_id, joint.name()));
            }
        }
    }
    Ok(outcome(
        worst.0 < 0.05,
        format!(
            "outliers {:.0}%, dropout {:.0}%, worst per-joint RMS {:.2} cm ({})",
            100.0 * cfg.outlier_p,
            100.0 * cfg.dropout_p,
            100.0 * worst.0,
            worst.1
        ),
    ))
}

const SMALL_CONFIG: &str = "\
seed = 5
jobs = 1
[synth]
sessions = 3
duration_s = 60
[net]
hidden = 8
[train]
max_epochs_per_stage = 3
[forest]
n_trees = 5
";

fn engage(cwd: &Path, args: &[&str]) -> std::result::Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_engage"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("engage {args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn small_workspace() -> std::result::Result<tempfile::TempDir, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    fs::write(tmp.path().join("config.toml"), SMALL_CONFIG).map_err(|e| e.to_string())?;
    engage(tmp.path(), &["--config", "config.toml", "synth"])?;
    Ok(tmp)
}

fn ablation() -> std::result::Result<Outcome, String> {
    let tmp = small_workspace()?;
    engage(tmp.path(), &["--config", "config.toml", "ablate"])?;
    let path = tmp.path().join("runs").join("ablate").join("ablation.csv");
    let mut reader = csv::Reader::from_path(&path).map_err(|e| e.to_string())?;
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(done), Some(ba)) = (col("Completed Folds"), col("Balanced Accuracy")) else {
        return Ok(outcome(false, format!("unexpected header {headers:?}")));
    };
    let mut rows = 0;
    let mut valid = 0;
    for rec in reader.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        rows += 1;
        let complete = rec[done].split_once('/').is_some_and(|(k, n)| k == n && n == "3");
        let v: f64 = rec[ba].parse().unwrap_or(f64::NAN);
        if complete && (0.0..=100.0).contains(&v) {
            valid += 1;
        }
    }
    Ok(outcome(rows == 9 && valid == 9, format!("{valid}/{rows} variants completed with valid metrics (9 expected)")))
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else if let Ok(bytes) = fs::read(&p) {
                out.push((p.strip_prefix(dir).unwrap_or(&p).to_path_buf(), bytes));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> std::result::Result<Outcome, String> {
    let tmp = small_workspace()?;
    let mut differing = Vec::new();
    let commands: [&[&str]; 6] = [
        &["synth", "--sessions", "2"],
        &["fuse"],
        &["features"],
        &["train"],
        &["eval"],
        &["ablate"],
    ];
    for cmd in commands {
        let out = tmp.path().join("rerun");
        let mut args = vec!["--config", "config.toml", "--out", "rerun"];
        args.extend_from_slice(cmd);
        let mut snaps = Vec::new();
        for _ in 0..2 {
            let _ = fs::remove_dir_all(&out);
            engage(tmp.path(), &args)?;
            snaps.push(snapshot(&out));
        }
        if snaps[0].is_empty() || snaps[0] != snaps[1] {
            differing.push(cmd[0]);
        }
    }
    let detail = if differing.is_empty() {
        "synth, fuse, features, train, eval and ablate reproduce byte for byte".to_string()
    } else {
        format!("artifacts differ between runs for {differing:?}")
    };
    Ok(outcome(differing.is_empty(), detail))
}

fn main() {
    let cli = |f: fn() -> std::result::Result<Outcome, String>| {
        move || f().map_err(engage_core::Error::InvalidInput)
    };
    let minutes = |m: u64| Some(Duration::from_secs(60 * m));
    let results = [
        run("metric oracles", Some(Duration::from_secs(1)), metric_oracles),
        run("gradient check", Some(Duration::from_secs(30)), gradient_check),
        run("ICP recovery", Some(Duration::from_secs(60)), icp_recovery),
        run("overfit one batch", None, overfit),
        run("end-to-end learning", minutes(15), end_to_end),
        run("ablation harness", None, cli(ablation)),
        run("fusion robustness", None, fusion_robustness),
        run("determinism", None, cli(determinism)),
    ];
    let ran: Vec<bool> = results.into_iter().flatten().collect();
    let passed = ran.iter().filter(|&&p| p).count();
    println!("{passed}/{} acceptance checks passed", ran.len());
    if passed != ran.len() {
        std::process::exit(1);
    }
}
