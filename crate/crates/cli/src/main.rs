//! `engage`: fusion, features, training, evaluation, ablation and synthetic
//! data for child engagement estimation.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tracing::info;

use engage_core::config::PipelineConfig;
use engage_core::dataset::{segments_per_second, Normalizer, SessionData};
use engage_core::eval::{cross_validate, run_ablation, BalancedFormula, CvConfig, CvReport, Method};
use engage_core::io::{self, FeatureRecord, FusedRecord};
use engage_core::model::{train, write_weights};
use engage_core::pipeline::{process_dataset, ProcessedSession};
use engage_core::synthgen::{generate_dataset, write_dataset};

#[derive(Parser, Debug)]
#[command(name = "engage", version, about = "Child engagement estimation from multi-camera pose streams")]
struct Cli {
    /// TOML pipeline configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for training, forests and synthesis.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Dataset directory containing manifest.json.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// LSTM hidden size; fully connected layers are twice as wide.
    #[arg(long, global = true)]
    hidden: Option<usize>,
    /// Output directory; defaults to <runs_dir>/<command>.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// More log output (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fuse every session's camera streams into room-frame tracks.
    Fuse,
    /// Write labelled segment features for every session.
    Features,
    /// Train the network on every session and save its weights.
    Train,
    /// Leave-one-session-out evaluation of the network and baselines.
    Eval(EvalArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Evaluate the configured grid of architectures and batch shapes.
    Ablate(FormulaArgs),
}

#[derive(Args, Debug)]
struct FormulaArgs {
    /// Balanced accuracy definition.
    #[arg(long, value_enum)]
    formula: Option<FormulaArg>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Methods to evaluate; repeat for several. Defaults to all three.
    #[arg(long = "method", value_enum)]
    methods: Vec<MethodArg>,
    #[command(flatten)]
    formula: FormulaArgs,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Number of sessions.
    #[arg(long)]
    sessions: Option<usize>,
    /// Seconds per session.
    #[arg(long)]
    duration: Option<u32>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Majority,
    Rf,
    Network,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormulaArg {
    MacroRecall,
    AsPrinted,
}

impl From<FormulaArg> for BalancedFormula {
    fn from(f: FormulaArg) -> Self {
        match f {
            FormulaArg::MacroRecall => BalancedFormula::MacroRecall,
            FormulaArg::AsPrinted => BalancedFormula::AsPrinted,
        }
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Fuse => "fuse",
            Command::Features => "features",
            Command::Train => "train",
            Command::Eval(_) => "eval",
            Command::Synth(_) => "synth",
            Command::Ablate(_) => "ablate",
        }
    }
}

/// File, then flags, over the defaults.
fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    if let Some(d) = &cli.data_dir {
        cfg.paths.data_dir = d.clone();
    }
    if let Some(h) = cli.hidden {
        cfg.net.hidden = h;
    }
    match &cli.command {
        Command::Eval(a) => apply_formula(&mut cfg, &a.formula),
        Command::Ablate(a) => apply_formula(&mut cfg, a),
        Command::Synth(a) => {
            if let Some(n) = a.sessions {
                cfg.synth.sessions = n;
            }
            if let Some(d) = a.duration {
                cfg.synth.duration_s = d;
            }
        }
        _ => {}
    }
    cfg.propagate_seed();
    cfg.validate()?;
    Ok(cfg)
}

fn apply_formula(cfg: &mut PipelineConfig, a: &FormulaArgs) {
    if let Some(f) = a.formula {
        cfg.eval.formula = f.into();
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    io::write_json(path, value)?;
    info!(path = %path.display(), "wrote");
    Ok(())
}

fn load_sessions(cfg: &PipelineConfig) -> Result<Vec<ProcessedSession>> {
    let dir = &cfg.paths.data_dir;
    let (manifest, sessions) = process_dataset(dir, &cfg.fusion, &cfg.features)
        .with_context(|| format!("processing dataset {}", dir.display()))?;
    info!(sessions = sessions.len(), fps = manifest.fps, "dataset processed");
    Ok(sessions)
}

fn labelled(sessions: Vec<ProcessedSession>) -> Vec<SessionData> {
    sessions.into_iter().map(|s| s.data).collect()
}

fn fps_of(cfg: &PipelineConfig) -> Result<f64> {
    Ok(io::Manifest::load(&cfg.paths.data_dir)?.fps)
}

#[derive(Serialize)]
struct RegistrationRecord {
    camera_id: String,
    transform: [f64; 12],
    icp_rms: Option<f64>,
    icp_iterations: Option<usize>,
    icp_converged: Option<bool>,
}

fn cmd_fuse(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    for s in load_sessions(cfg)? {
        let sid = &s.data.session_id;
        let frames = s.fused.pose.frames.iter().enumerate().map(|(i, f)| FusedRecord {
            frame_idx: f.frame_idx,
            timestamp_s: f.timestamp,
            keypoints: f.keypoints.iter().map(|k| k.get().map(|p| [p.x, p.y, p.z])).collect(),
            robot: s.fused.robot.get(i).map(|p| [p.x, p.y, p.z]),
        });
        io::write_jsonl(&out.join("fused").join(format!("{sid}.jsonl")), frames)?;
        let regs: Vec<_> = s
            .fused
            .registrations
            .iter()
            .map(|r| RegistrationRecord {
                camera_id: r.camera_id.clone(),
                transform: r.transform.to_row_major_3x4(),
                icp_rms: r.icp.map(|i| i.rms),
                icp_iterations: r.icp.map(|i| i.iterations),
                icp_converged: r.icp.map(|i| i.converged),
            })
            .collect();
        write_json(&out.join("fused").join(format!("{sid}.registration.json")), &regs)?;
    }
    Ok(())
}

fn cmd_features(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let sessions = load_sessions(cfg)?;
    let records = sessions.iter().flat_map(|s| {
        s.features.iter().map(move |f| {
            let label = s.data.segments.get(f.segment_idx).map(|l| l.label);
            FeatureRecord::new(&s.data.session_id, f, label)
        })
    });
    io::write_jsonl(&out.join("features.jsonl"), records)?;
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    sessions: Vec<String>,
    class_weights: [f64; 3],
    epochs: usize,
    parameters: usize,
}

fn cmd_train(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let sessions = labelled(load_sessions(cfg)?);
    let norm = Normalizer::fit_segments(sessions.iter().flat_map(|s| &s.segments))?;
    let sessions: Vec<_> = sessions.iter().map(|s| norm.apply_session(s)).collect();
    let outcome = train(&sessions, &cfg.net, &cfg.train)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let weights = out.join("model.engg");
    write_weights(&outcome.params, BufWriter::new(File::create(&weights)?))?;
    write_json(&out.join("normalizer.json"), &norm)?;
    io::write_training_log(&out.join("training_log.csv"), &outcome.log)?;
    write_json(
        &out.join("train_summary.json"),
        &TrainSummary {
            sessions: sessions.iter().map(|s| s.session_id.clone()).collect(),
            class_weights: outcome.class_weights,
            epochs: outcome.log.len(),
            parameters: outcome.params.parameter_count(),
        },
    )?;
    info!(path = %weights.display(), "wrote weights");
    Ok(())
}

fn cv_config(cfg: &PipelineConfig, method: Method, fps: f64) -> Result<CvConfig> {
    Ok(CvConfig {
        method,
        segments_per_second: segments_per_second(fps)?,
        formula: cfg.eval.formula,
        jobs: cfg.jobs,
        seed: cfg.seed,
    })
}

fn print_reports(reports: &[CvReport]) {
    println!("{:<16} {:>13} {:>9} {:>17}", "Method", "Mean F-Score", "Accuracy", "Balanced Accuracy");
    for r in reports {
        match r.equal_weight {
            Some(a) => println!(
                "{:<16} {:>13.2} {:>9.2} {:>17.2}",
                r.method, a.mean_f_score, a.accuracy, a.balanced_accuracy
            ),
            None => println!("{:<16} all folds aborted", r.method),
        }
    }
}

fn cmd_eval(cfg: &PipelineConfig, args: &EvalArgs, out: &Path) -> Result<()> {
    let fps = fps_of(cfg)?;
    let sessions = labelled(load_sessions(cfg)?);
    let chosen = if args.methods.is_empty() {
        vec![MethodArg::Majority, MethodArg::Rf, MethodArg::Network]
    } else {
        args.methods.clone()
    };
    let mut reports = Vec::new();
    for m in chosen {
        let method = match m {
            MethodArg::Majority => Method::Majority,
            MethodArg::Rf => Method::RandomForest(cfg.forest),
            MethodArg::Network => Method::Network { net: cfg.net, train: cfg.train.clone() },
        };
        info!(method = %method.name(), "cross-validating");
        reports.push(cross_validate(&sessions, &cv_config(cfg, method, fps)?)?);
    }
    io::write_report_csv(&out.join("report.csv"), &reports)?;
    io::write_confusion_csv(&out.join("confusion.csv"), &reports)?;
    write_json(&out.join("report.json"), &reports)?;
    print_reports(&reports);
    Ok(())
}

fn cmd_ablate(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let fps = fps_of(cfg)?;
    let sessions = labelled(load_sessions(cfg)?);
    let cv = cv_config(cfg, Method::Majority, fps)?;
    let rows = run_ablation(
        &sessions,
        &cfg.net,
        &cfg.train,
        &cfg.ablation.architectures,
        &cfg.ablation.batch_shapes,
        &cv,
    )?;
    io::write_ablation_csv(&out.join("ablation.csv"), &rows)?;
    write_json(&out.join("ablation.json"), &rows)?;
    let reports: Vec<CvReport> = rows
        .iter()
        .map(|r| CvReport { method: r.variant.clone(), ..r.report.clone() })
        .collect();
    print_reports(&reports);
    Ok(())
}

fn cmd_synth(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let data = generate_dataset(&cfg.synth)?;
    let manifest = write_dataset(out, &cfg.synth, &data)?;
    info!(sessions = manifest.sessions.len(), dir = %out.display(), "synthetic dataset written");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    if cfg.jobs > 0 {
        // Sessions are processed on the global pool; folds build their own.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build_global();
    }
    let out = match (&cli.out, &cli.command) {
        (Some(o), _) => o.clone(),
        (None, Command::Synth(_)) => cfg.paths.data_dir.clone(),
        (None, c) => cfg.paths.runs_dir.join(c.name()),
    };
    if !matches!(cli.command, Command::Synth(_)) {
        let manifest = cfg.paths.data_dir.join(io::MANIFEST_FILE);
        if !manifest.is_file() {
            bail!("no {} in {}", io::MANIFEST_FILE, cfg.paths.data_dir.display());
        }
    }
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let snapshot = cfg.to_toml_string()?;
    info!("resolved configuration:\n{snapshot}");
    std::fs::write(out.join("config.toml"), &snapshot)
        .with_context(|| format!("writing config snapshot to {}", out.display()))?;
    match &cli.command {
        Command::Fuse => cmd_fuse(&cfg, &out),
        Command::Features => cmd_features(&cfg, &out),
        Command::Train => cmd_train(&cfg, &out),
        Command::Eval(a) => cmd_eval(&cfg, a, &out),
        Command::Synth(_) => cmd_synth(&cfg, &out),
        Command::Ablate(_) => cmd_ablate(&cfg, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .with_target(false)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .without_time()
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
