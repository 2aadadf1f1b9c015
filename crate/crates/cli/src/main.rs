//! `flsn`: synthesize data, train, infer, evaluate and inspect FLSN models.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime or
//! numeric failure.

mod pgm;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flsn::checkpoint::Checkpoint;
use flsn::config::RunConfig;
use flsn::metrics::{evaluate, BilinearBaseline, CostSummary, EvalReport};
use flsn::model::{Flsn, ModelConfig};
use flsn::selfcheck::{gradcheck_suite, EndToEnd, GRADCHECK_TOL};
use flsn::synth::{build_dataset, denormalize, normalize, Dataset, Regime, Split, FRAMES_PER_SAMPLE};
use flsn::tensor::{read_flt1_file, write_flt1_file, Tensor};
use flsn::train::{fit, EpochSummary, FitOptions, FINAL_CHECKPOINT, LOG_FILE};
use flsn::Error;

const EVAL_REPORT: &str = "eval_report.csv";

#[derive(Parser)]
#[command(name = "flsn", version, about = "Single-frame SIM super-resolution pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of raw SIM frames and ground truth.
    Synth(SynthArgs),
    /// Train a model on a synthetic dataset.
    Train(TrainArgs),
    /// Super-resolve one FLT1 frame with a trained checkpoint.
    Infer(InferArgs),
    /// Score a checkpoint (or the bilinear baseline) on a dataset split.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences for every op,
    /// block and the end-to-end network.
    Gradcheck(GradcheckArgs),
    /// Print parameter and FLOP counts for a model.
    Info(InfoArgs),
    /// Convert between FLT1 tensors and 16-bit PGM images; the direction
    /// follows the output extension (.pgm or .flt).
    Convert(ConvertArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration file with [model], [train], [optics], [noise] and
    /// [data] sections.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set model.nc=8`. Repeatable; applied
    /// after the config file and before dedicated flags.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects SECTION.KEY=VALUE, got {o:?}")))?;
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RegimeArg {
    #[value(name = "HE")]
    He,
    #[value(name = "LE")]
    Le,
    #[value(name = "BOTH")]
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    Both,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Dataset root. With `--regime BOTH`, HE/ and LE/ are created inside.
    #[arg(long)]
    out: PathBuf,
    /// Samples to generate per selected split.
    #[arg(long)]
    samples: Option<usize>,
    /// Noise regime; defaults to `noise.regime` from the config.
    #[arg(long, value_enum)]
    regime: Option<RegimeArg>,
    #[arg(long, value_enum, default_value = "train")]
    split: SplitArg,
    #[arg(long)]
    seed: Option<u64>,
    /// Side of the square low-resolution frames.
    #[arg(long)]
    lr_size: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Dataset root holding a train split.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the log, checkpoints and resolved config.
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint; the model section comes from it.
    #[arg(long, value_name = "CHECKPOINT")]
    resume: Option<PathBuf>,
    /// Ablation: drop the noise estimator.
    #[arg(long)]
    no_ne: bool,
    /// Ablation: drop bandpass attention.
    #[arg(long)]
    no_ba: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    crop_size: Option<usize>,
    /// Seeds both weight initialization and batch sampling.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// FLT1 frame with one channel, in camera counts.
    #[arg(long)]
    input: PathBuf,
    /// FLT1 output at twice the input resolution, in camera counts.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to score; omit with `--baseline` to score bilinear
    /// upsampling.
    #[arg(long, required_unless_present = "baseline")]
    checkpoint: Option<PathBuf>,
    #[arg(long, conflicts_with = "checkpoint")]
    baseline: bool,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Comma-separated frame indices in 0..15; all frames by default.
    #[arg(long, value_delimiter = ',')]
    frames: Vec<usize>,
    /// Directory for the CSV report and resolved config.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Side of the square end-to-end input.
    #[arg(long, default_value_t = 16)]
    size: usize,
}

#[derive(Args)]
struct InfoArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Read the model configuration from a checkpoint instead.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Input height and width for the FLOP count.
    #[arg(long, default_value_t = 64)]
    size: usize,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Info(a) => info(a),
        Command::Convert(a) => convert(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn splits(s: SplitArg) -> &'static [Split] {
    match s {
        SplitArg::Train => &[Split::Train],
        SplitArg::Test => &[Split::Test],
        SplitArg::Both => &[Split::Train, Split::Test],
    }
}

fn synth(a: SynthArgs) -> CmdResult {
    let mut cfg = a.cfg.resolve()?;
    if let Some(s) = a.seed {
        cfg.data.seed = s;
    }
    if let Some(n) = a.lr_size {
        cfg.data.lr_size = n;
    }
    if let Some(n) = a.samples {
        cfg.data.train_samples = n;
        cfg.data.test_samples = n;
    }
    let roots: Vec<(Regime, PathBuf)> = match a.regime {
        Some(RegimeArg::He) => vec![(Regime::High, a.out.clone())],
        Some(RegimeArg::Le) => vec![(Regime::Low, a.out.clone())],
        Some(RegimeArg::Both) => vec![(Regime::High, a.out.join("HE")), (Regime::Low, a.out.join("LE"))],
        None => vec![(cfg.noise.regime, a.out.clone())],
    };
    for (regime, root) in roots {
        let mut echo = cfg.clone();
        echo.noise.regime = regime;
        let mut manifest = None;
        for &split in splits(a.split) {
            manifest = Some(build_dataset(&echo.dataset_spec(split, regime), &root)?);
        }
        echo.echo_into(&root)?;
        if let Some(m) = manifest {
            println!("{regime}: {} samples, manifest {}", m.entries.len(), m.path.display());
        }
    }
    Ok(())
}

/// Copies the log that sits next to `checkpoint` into `out` so a resumed
/// run in a fresh directory keeps the earlier rows.
fn carry_log(checkpoint: &Path, out: &Path) -> Result<(), Error> {
    let dst = out.join(LOG_FILE);
    let src = checkpoint.parent().unwrap_or(Path::new(".")).join(LOG_FILE);
    if dst.exists() || !src.exists() {
        return Ok(());
    }
    fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.into(),
        source: e,
    })?;
    fs::copy(&src, &dst).map_err(|e| Error::Io { path: dst, source: e })?;
    Ok(())
}

fn train(a: TrainArgs) -> CmdResult {
    let mut cfg = a.cfg.resolve()?;
    let t = &mut cfg.train;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = &a.lr {
        t.set("lr0", v)?;
    }
    if let Some(v) = a.crop_size {
        t.crop_size = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if a.no_ne {
        cfg.model.use_noise_estimator = false;
    }
    if a.no_ba {
        cfg.model.use_bandpass_attention = false;
    }
    let start = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::<f32>::load(path)?;
            if (a.no_ne && ck.config.use_noise_estimator) || (a.no_ba && ck.config.use_bandpass_attention) {
                return Err(Failure::Usage(format!(
                    "ablation flags conflict with the model stored in {}",
                    path.display()
                )));
            }
            cfg.model = ck.config.clone();
            carry_log(path, &a.out)?;
            ck
        }
        None => {
            cfg.model.validate()?;
            Checkpoint::fresh(Flsn::new(cfg.model.clone(), cfg.train.seed)?)
        }
    };
    cfg.train.validate(&cfg.model)?;
    let dataset = Dataset::load(&a.data, Split::Train)?;
    cfg.echo_into(&a.out)?;
    let cost = CostSummary::of(&cfg.model, dataset.lr_size().0, dataset.lr_size().1);
    println!(
        "training {} params on {} samples, epochs {}..{}",
        cost.params,
        dataset.len(),
        start.epoch,
        cfg.train.epochs
    );
    let quiet = a.quiet;
    let mut progress = |s: &EpochSummary| {
        if !quiet {
            println!(
                "epoch {:>4}  step {:>6}  lr {:.3e}  loss {:.6}",
                s.epoch, s.steps, s.lr, s.mean_loss
            );
        }
    };
    let opts = FitOptions {
        out_dir: Some(&a.out),
        on_epoch: Some(&mut progress),
    };
    let outcome = fit(start, &dataset, &cfg.train, opts)?;
    println!(
        "wrote {} ({} steps)",
        a.out.join(FINAL_CHECKPOINT).display(),
        outcome.checkpoint.optim.step
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<Flsn<f32>, Error> {
    Checkpoint::<f32>::load(path)?.model()
}

fn infer(a: InferArgs) -> CmdResult {
    let model = load_model(&a.checkpoint)?;
    let frame: Tensor<f32> = read_flt1_file(&a.input)?;
    let s = frame.shape();
    if s.c != 1 {
        return Err(Failure::Runtime(format!(
            "{} has {} channels; the model takes single-channel frames (shape {s})",
            a.input.display(),
            s.c
        )));
    }
    model.config.check_input(s.h, s.w)?;
    let start = Instant::now();
    let out = denormalize(&model.infer(&normalize(&frame))?);
    let ms = start.elapsed().as_secs_f64() * 1e3;
    write_flt1_file(&out, &a.output)?;
    println!("{s} -> {} in {ms:.2} ms", out.shape());
    Ok(())
}

fn print_report(r: &EvalReport) {
    println!(
        "mean RMSE {:.3}  mean SSIM {:.5}  over {} frames ({} params, {:.4} GFLOPs per frame)",
        r.mean_rmse,
        r.mean_ssim,
        r.rows.len(),
        r.cost.params,
        r.cost.gflops()
    );
}

fn eval(a: EvalArgs) -> CmdResult {
    let frames: Vec<usize> = if a.frames.is_empty() {
        (0..FRAMES_PER_SAMPLE).collect()
    } else {
        a.frames.clone()
    };
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
        SplitArg::Both => return Err(Failure::Usage("eval scores one split at a time".into())),
    };
    let mut cfg = RunConfig::default();
    let model = match &a.checkpoint {
        Some(path) => {
            let ck = Checkpoint::<f32>::load(path)?;
            cfg.model = ck.config.clone();
            Some(ck.model()?)
        }
        None => None,
    };
    let dataset = Dataset::load(&a.data, split)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    let report_path = a.out.join(EVAL_REPORT);
    let report = match &model {
        Some(m) => evaluate(m, &dataset, &frames, Some(&report_path))?,
        None => evaluate(&BilinearBaseline, &dataset, &frames, Some(&report_path))?,
    };
    cfg.echo_into(&a.out)?;
    print_report(&report);
    println!("wrote {}", report_path.display());
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> CmdResult {
    let setup = EndToEnd {
        height: a.size,
        width: a.size,
        ..EndToEnd::default()
    };
    let start = Instant::now();
    let results = gradcheck_suite(&setup, a.seed)?;
    let mut failed = 0;
    for r in &results {
        let verdict = if r.passed() { "ok  " } else { "FAIL" };
        failed += usize::from(!r.passed());
        println!(
            "{verdict} {:<28} max rel err {:.3e} over {} coords",
            r.name, r.report.max_rel_error, r.report.coordinates_checked
        );
    }
    println!(
        "{} of {} checks within {GRADCHECK_TOL:e} in {:.1} s",
        results.len() - failed,
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} gradient checks failed")));
    }
    Ok(())
}

fn info(a: InfoArgs) -> CmdResult {
    let model = match &a.checkpoint {
        Some(p) => Checkpoint::<f32>::load(p)?.config,
        None => a.cfg.resolve()?.model,
    };
    model.validate()?;
    model.check_input(a.size, a.size)?;
    for (k, v) in model.to_kv() {
        println!("{k:<20} {v}");
    }
    println!();
    println!("{:<22} {:>10} {:>12}", "variant", "params", "GFLOPs");
    let variants = [
        ("model", model.clone()),
        (
            "without noise est.",
            ModelConfig {
                use_noise_estimator: false,
                ..model.clone()
            },
        ),
        (
            "without bandpass att.",
            ModelConfig {
                use_bandpass_attention: false,
                ..model.clone()
            },
        ),
    ];
    for (name, cfg) in &variants {
        let c = CostSummary::of(cfg, a.size, a.size);
        println!("{name:<22} {:>10} {:>12.6}", c.params, c.gflops());
    }
    println!("FLOPs for a {0}x{0} input, one multiply-add counted as 2", a.size);
    Ok(())
}

fn has_ext(p: &Path, ext: &str) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

fn convert(a: ConvertArgs) -> CmdResult {
    let read = |p: &Path| fs::read(p).map_err(|e| Failure::Runtime(format!("failed to load {}: {e}", p.display())));
    let write = |p: &Path, bytes: &[u8]| {
        fs::write(p, bytes).map_err(|e| Failure::Runtime(format!("failed to write {}: {e}", p.display())))
    };
    if has_ext(&a.output, "pgm") {
        let t: Tensor<f32> = read_flt1_file(&a.input)?;
        let bytes = pgm::encode(&t).map_err(|m| Failure::Runtime(format!("{}: {m}", a.input.display())))?;
        write(&a.output, &bytes)?;
    } else if has_ext(&a.output, "flt") {
        let t = pgm::decode(&read(&a.input)?).map_err(|m| Failure::Runtime(format!("{}: {m}", a.input.display())))?;
        write_flt1_file(&t, &a.output)?;
    } else {
        return Err(Failure::Usage(format!(
            "cannot infer conversion from {}; use a .pgm or .flt output",
            a.output.display()
        )));
    }
    println!("wrote {}", a.output.display());
    Ok(())
}
