//! The `landval` command line.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate, format_report, format_summary_csv, predict, read_summary_csv, write_records_csv};
use crate::io::load_dataset;
use crate::net::{load_checkpoint, save_checkpoint};
use crate::pose::{fit_head_pose, write_pose_report, CameraModel, HeadPose};
use crate::synth::generate;
use crate::train::train;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_SCHEMA: i32 = 3;
pub const EXIT_DATA: i32 = 4;
pub const EXIT_NUMERIC: i32 = 5;

const EXIT_CODES: &str = "Exit codes:
  0  success
  2  usage error (bad flags or arguments)
  3  schema error (invalid config, or model/data/template shapes that do not match)
  4  data error (missing, unreadable or malformed files)
  5  numeric failure (NaN during training, degenerate geometry)";

#[derive(Debug, Parser)]
#[command(name = "landval", version, about = "Landmark regression with self-assessed validity", after_help = EXIT_CODES)]
pub struct Cli {
    /// Run config (JSON); defaults to the built-in desk config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic train and test sets under OUT/train and OUT/test.
    Gen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes OUT/model.ckpt and OUT/history.csv.
    Train {
        #[arg(long)]
        train: PathBuf,
        /// Dataset evaluated during training.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint and write the summary CSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-landmark records.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Fit head poses to annotations, or to predictions when a checkpoint is given.
    Pose(PoseArgs),
    /// Side-by-side table of summary CSVs.
    Report {
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
        /// Column labels, one per summary (default: file stems).
        #[arg(long = "label")]
        labels: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct PoseArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Schema(_) | Error::InvalidArgument(_) | Error::ShapeMismatch(_) | Error::Infeasible(_) => EXIT_SCHEMA,
        Error::Parse { .. }
        | Error::UnsupportedFormat(_)
        | Error::Io { .. }
        | Error::CountMismatch { .. }
        | Error::Empty(_)
        | Error::UnknownId(_)
        | Error::Checkpoint(_)
        | Error::DegenerateNormalizer(_) => EXIT_DATA,
        Error::Numeric(_) | Error::CorruptState(_) | Error::Degenerate(_) | Error::UndefinedCorrelation(_) => EXIT_NUMERIC,
    }
}

fn kind(e: &Error) -> &'static str {
    match exit_code(e) {
        EXIT_SCHEMA => "schema",
        EXIT_DATA => "data",
        _ => "numeric",
    }
}

/// One line: `error[<kind>]: <message>`.
pub fn error_line(e: &Error) -> String {
    format!("error[{}]: {}", kind(e), e.to_string().replace('\n', " "))
}

struct Ctx {
    config: RunConfig,
    seed: u64,
    quiet: bool,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_gen(ctx: &Ctx, out: &Path) -> Result<()> {
    let data = generate(&ctx.config.synth_config(ctx.seed))?;
    data.save(out)?;
    ctx.note(format!(
        "wrote {} training and {} test samples to {}",
        data.train.dataset.len(),
        data.test.dataset.len(),
        out.display()
    ));
    Ok(())
}

fn cmd_train(ctx: &Ctx, train_dir: &Path, val_dir: Option<&Path>, out: &Path) -> Result<()> {
    let mut data = load_dataset(train_dir)?;
    let val = val_dir.map(load_dataset).transpose()?;
    let cfg = ctx.config.train_config(ctx.seed);
    ctx.note(format!("training on {} samples for {} epochs", data.len(), cfg.epochs));
    let outcome = train(&mut data, val.as_ref(), &cfg)?;
    create_dir(out)?;
    save_checkpoint(&outcome.model, out.join("model.ckpt"))?;
    outcome.history.write_csv(out.join("history.csv"))?;
    if let Some(last) = outcome.history.last() {
        ctx.note(format!("final mean loss {:.6}", last.mean_loss));
    }
    Ok(())
}

fn cmd_eval(ctx: &Ctx, checkpoint: &Path, data_dir: &Path, out: &Path, records: Option<&Path>) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let data = load_dataset(data_dir)?;
    let ev = evaluate(&model, &data, &ctx.config.eval)?;
    write_file(out, &format_summary_csv(&ev.summaries))?;
    if let Some(r) = records {
        if let Some(parent) = r.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        write_records_csv(&ev.records, r)?;
    }
    if let Some(full) = ev.summary("full") {
        ctx.note(format!("NME {:.4} over {} samples", 100.0 * full.nme[0], full.samples));
    }
    Ok(())
}

fn cmd_pose(ctx: &Ctx, args: &PoseArgs) -> Result<()> {
    let data = load_dataset(&args.data)?;
    let l = data.landmark_count().ok_or_else(|| Error::Empty(format!("no samples in {}", args.data.display())))?;
    let pose_cfg = &ctx.config.pose;
    let template = pose_cfg.template(l)?;
    let predictions = match &args.checkpoint {
        Some(p) => Some(predict(&load_checkpoint(p)?, &data)?),
        None => None,
    };
    let mut rows: Vec<(String, HeadPose)> = Vec::with_capacity(data.len());
    for (i, s) in data.samples.iter().enumerate() {
        let camera = CameraModel {
            focal_px: pose_cfg.focal_px,
            principal: (s.image.width() as f64 / 2.0, s.image.height() as f64 / 2.0),
        };
        let (landmarks, weights) = match &predictions {
            Some(p) => {
                let w: Option<Vec<f64>> = pose_cfg
                    .max_validity_px
                    .map(|t| p[i].triplets.iter().map(|tr| if tr.validity > t { 0.0 } else { 1.0 }).collect());
                (p[i].positions(), w)
            }
            None => (s.annotation.clone(), None),
        };
        let pose = fit_head_pose(&landmarks, &template, &camera, weights.as_deref(), &pose_cfg.fit)
            .map_err(|e| match e {
                Error::Degenerate(m) => Error::Degenerate(format!("sample {}: {m}", s.id)),
                other => other,
            })?;
        rows.push((s.id.clone(), pose));
    }
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_pose_report(&rows, &args.out)?;
    ctx.note(format!("fitted {} poses", rows.len()));
    Ok(())
}

fn cmd_report(summaries: &[PathBuf], labels: &[String], out: Option<&Path>) -> Result<String> {
    if !labels.is_empty() && labels.len() != summaries.len() {
        return Err(Error::InvalidArgument(format!("{} labels for {} summaries", labels.len(), summaries.len())));
    }
    let runs = summaries
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let label = labels.get(i).cloned().unwrap_or_else(|| p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned()));
            Ok((label, read_summary_csv(p)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let table = format_report(&runs);
    if let Some(o) = out {
        write_file(o, &table)?;
    }
    Ok(table)
}

/// Runs a parsed command line; the string is what goes to stdout.
pub fn run(cli: &Cli) -> Result<String> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidArgument("--threads must be at least 1".into()));
        }
        // a pool that is already set up keeps its size; results do not depend on it
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let ctx = Ctx { config, seed: cli.seed, quiet: cli.quiet };
    match &cli.command {
        Command::Gen { out } => cmd_gen(&ctx, out)?,
        Command::Train { train, val, out } => cmd_train(&ctx, train, val.as_deref(), out)?,
        Command::Eval { checkpoint, data, out, records } => cmd_eval(&ctx, checkpoint, data, out, records.as_deref())?,
        Command::Pose(args) => cmd_pose(&ctx, args)?,
        Command::Report { summaries, labels, out } => return cmd_report(summaries, labels, out.as_deref()),
    }
    Ok(String::new())
}

/// Parses `args`, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            if code == EXIT_OK {
                let _ = e.print();
            } else {
                eprintln!("error[usage]: {}", e.to_string().lines().next().unwrap_or("invalid arguments"));
            }
            return code;
        }
    };
    match run(&cli) {
        Ok(stdout) => {
            print!("{stdout}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("{}", error_line(&e));
            exit_code(&e)
        }
    }
}
