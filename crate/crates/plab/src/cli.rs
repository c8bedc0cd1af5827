//! `plab` command line. Data goes to stdout or files, diagnostics to
//! stderr. Exit 0 on success, 1 on validation failure, 2 on runtime error.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use plab_core::augment::augment_batch;
use plab_core::dataio::{make_batches, SynthConfig};
use plab_core::gradcheck::{finite_difference_check, random_batch};
use plab_core::model::ModelConfig;
use plab_core::rng::{self, tag};
use plab_core::{AugmentConfig, LossConfig, Split};
use serde_json::json;

use crate::config::{ExperimentConfig, Selection};
use crate::dataset::{load_dataset, save_dataset};
use crate::error::{Error, Result};
use crate::experiment::{evaluate_checkpoint, run_experiment, RunOptions, Subset};
use crate::report::{emit_f1_plot, report_csv};

#[derive(Parser, Debug)]
#[command(
    name = "plab",
    version,
    about = "Partial-label multi-label sequence classifier"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic planted-signature dataset.
    Synth(SynthArgs),
    /// Train on the train split and score the test split.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Evaluate(EvaluateArgs),
    /// Compare analytic and finite-difference gradients on a random batch.
    Gradcheck(GradcheckArgs),
    /// Show what augmentation does to one batch, as JSON.
    AugmentPreview(PreviewArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    clips: usize,
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 10)]
    timesteps: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 0.0)]
    mask_rate: f64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Fraction of clips, taken from the end, assigned to the test split.
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SelectionArg {
    MacroF1,
    MicroF1,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    selection_metric: Option<SelectionArg>,
    #[arg(long)]
    focal_alpha: Option<f64>,
    #[arg(long)]
    focal_gamma: Option<f64>,
    #[arg(long)]
    beta_alpha: Option<f64>,
    #[arg(long)]
    mixup_prob: Option<f64>,
    #[arg(long)]
    concat_prob: Option<f64>,
    /// Same as `--mixup-prob 0 --concat-prob 0`.
    #[arg(long, conflicts_with_all = ["mixup_prob", "concat_prob"])]
    no_augment: bool,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    recurrent_dropout: Option<f64>,
    #[arg(long)]
    attention_clip: Option<f64>,
    /// Record wall time in history.csv (makes it non-reproducible).
    #[arg(long)]
    wall_time: bool,
    /// No per-epoch progress on stderr.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SubsetArg {
    Train,
    Test,
    All,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SubsetArg,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 10.0)]
    attention_clip: f64,
    /// Report CSV path; stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also write the per-class F1 bar chart here.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 3)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    hidden: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 4)]
    timesteps: usize,
    #[arg(long, default_value_t = 3)]
    batch: usize,
    /// Exit 2 when the error reaches this value.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args, Debug)]
struct PreviewArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    beta_alpha: Option<f64>,
    #[arg(long)]
    mixup_prob: Option<f64>,
    #[arg(long)]
    concat_prob: Option<f64>,
}

/// Parse `argv` (including the program name) and run one subcommand.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().ansi().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                1
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Synth(a) => synth(a, out),
        Command::Train(a) => train(a, out),
        Command::Evaluate(a) => evaluate(a, out),
        Command::Gradcheck(a) => gradcheck(a, out, err),
        Command::AugmentPreview(a) => preview(a, out),
    }
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> Result<i32> {
    let ds = SynthConfig {
        num_clips: a.clips,
        num_classes: a.classes,
        timesteps: a.timesteps,
        feature_dim: a.dim,
        mask_rate: a.mask_rate,
        noise_scale: a.noise,
        test_fraction: a.test_fraction,
        seed: a.seed,
        ..SynthConfig::default()
    }
    .generate()?;
    save_dataset(&ds, &a.out)?;
    let test = ds
        .examples()
        .iter()
        .filter(|e| e.split == Split::Test)
        .count();
    writeln!(
        out,
        "wrote {} clips ({} train, {test} test) to {}",
        ds.len(),
        ds.len() - test,
        a.out.display()
    )
    .map_err(stdout_err)?;
    Ok(0)
}

fn effective_config(a: &TrainArgs) -> Result<ExperimentConfig> {
    let mut c = match &a.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    macro_rules! set {
        ($field:expr, $flag:expr) => {
            if let Some(v) = $flag {
                $field = v;
            }
        };
    }
    set!(c.epochs, a.epochs);
    set!(c.batch_size, a.batch_size);
    set!(c.learning_rate, a.learning_rate);
    set!(c.val_fraction, a.val_fraction);
    set!(c.seed, a.seed);
    set!(
        c.selection_metric,
        a.selection_metric.map(|s| match s {
            SelectionArg::MacroF1 => Selection::MacroF1,
            SelectionArg::MicroF1 => Selection::MicroF1,
        })
    );
    set!(c.loss.alpha, a.focal_alpha);
    set!(c.loss.gamma, a.focal_gamma);
    set!(c.augment.beta_alpha, a.beta_alpha);
    set!(c.augment.mixup_prob, a.mixup_prob);
    set!(c.augment.concat_prob, a.concat_prob);
    if a.no_augment {
        c.augment.mixup_prob = 0.0;
        c.augment.concat_prob = 0.0;
    }
    set!(c.model.hidden, a.hidden);
    set!(c.model.dropout_rate, a.dropout);
    set!(c.model.recurrent_dropout_rate, a.recurrent_dropout);
    set!(c.model.attention_clip, a.attention_clip);
    c.validate()?;
    Ok(c)
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let config = effective_config(&a)?;
    let opts = RunOptions {
        wall_time: a.wall_time,
        progress: !a.quiet,
    };
    let o = run_experiment(&a.data, &config, &a.out, opts)?;
    writeln!(
        out,
        "best_epoch {}  test macro-F1 {:.6}  micro-F1 {:.6}",
        o.history
            .best_epoch
            .map_or("none".to_string(), |e| e.to_string()),
        o.test_report.macro_f1(),
        o.test_report.micro_f1()
    )
    .map_err(stdout_err)?;
    Ok(0)
}

fn evaluate(a: EvaluateArgs, out: &mut dyn Write) -> Result<i32> {
    let subset = match a.split {
        SubsetArg::Train => Subset::Train,
        SubsetArg::Test => Subset::Test,
        SubsetArg::All => Subset::All,
    };
    let (report, names) = evaluate_checkpoint(
        &a.data,
        &a.checkpoint,
        subset,
        a.threshold,
        a.attention_clip,
    )?;
    let csv = report_csv(&report, &names)?;
    match &a.report {
        Some(path) => std::fs::write(path, &csv).map_err(|e| Error::io(path, e))?,
        None => out.write_all(csv.as_bytes()).map_err(stdout_err)?,
    }
    if let Some(path) = &a.plot {
        emit_f1_plot(&report, &names, path)?;
    }
    Ok(0)
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    if !(a.eps > 0.0 && a.eps.is_finite()) {
        return Err(Error::Config(format!("eps {} must be positive", a.eps)));
    }
    if a.timesteps == 0 || a.batch == 0 {
        return Err(Error::Config(
            "timesteps and batch must be at least 1".into(),
        ));
    }
    let model = ModelConfig {
        input_dim: a.dim,
        hidden: a.hidden,
        num_classes: a.classes,
        ..ModelConfig::default()
    };
    model.validate()?;
    let items = random_batch(&model, a.timesteps, a.batch, a.seed)?;
    let e = finite_difference_check(&model, &LossConfig::default(), &items, a.seed, a.eps)?;
    writeln!(out, "max_relative_error {e:.6e}").map_err(stdout_err)?;
    if e < a.tolerance {
        Ok(0)
    } else {
        let _ = writeln!(err, "gradient check failed: {e:.3e} >= {:.3e}", a.tolerance);
        Ok(2)
    }
}

fn preview(a: PreviewArgs, out: &mut dyn Write) -> Result<i32> {
    let mut cfg = AugmentConfig::default();
    cfg.beta_alpha = a.beta_alpha.unwrap_or(cfg.beta_alpha);
    cfg.mixup_prob = a.mixup_prob.unwrap_or(cfg.mixup_prob);
    cfg.concat_prob = a.concat_prob.unwrap_or(cfg.concat_prob);
    cfg.validate()?;
    if a.batch == 0 {
        return Err(Error::Config("batch must be at least 1".into()));
    }
    let ds = load_dataset(&a.data)?.split(Split::Train);
    let batches = make_batches(&ds, a.batch, true, rng::derive(a.seed, &[tag::SHUFFLE, 1]))?;
    let batch = &batches[0];
    let groups = augment_batch(batch, &cfg, &mut rng::stream(a.seed, &[tag::AUGMENT, 1, 0]))?;
    let items: Vec<_> = groups
        .iter()
        .flatten()
        .map(|it| {
            let f = it.features.as_slice();
            json!({
                "timesteps": it.timesteps(),
                "targets": it.targets.targets,
                "mask": it.targets.mask,
                "feature_min": f.iter().copied().fold(f64::INFINITY, f64::min),
                "feature_max": f.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            })
        })
        .collect();
    let doc = json!({
        "source_clips": batch.examples.iter().map(|e| &e.clip_id).collect::<Vec<_>>(),
        "source_labels": batch.examples.iter().map(|e| e.labels.iter().map(|l| l.value()).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "items": items,
    });
    serde_json::to_writer_pretty(&mut *out, &doc).map_err(|e| Error::Config(e.to_string()))?;
    writeln!(out).map_err(stdout_err)?;
    Ok(0)
}
