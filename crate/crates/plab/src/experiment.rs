//! End-to-end runs: load, train on `train`, score on `test`, write artifacts.

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::time::Instant;

use plab_core::metrics::{evaluate, report, DEFAULT_THRESHOLD};
use plab_core::model::{ModelConfig, ModelParams};
use plab_core::trainer::{train_with_hooks, EpochRecord, TrainHistory, TrainHooks};
use plab_core::{Dataset, LabelVector, MetricsReport, Split};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::ExperimentConfig;
use crate::dataset::load_dataset;
use crate::error::{Error, Result};
use crate::report::{emit_f1_plot, history_csv, report_csv};

pub const CHECKPOINT_FILE: &str = "checkpoint.plab";
pub const HISTORY_FILE: &str = "history.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const PLOT_FILE: &str = "f1.svg";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Fill the `seconds` column with wall time. Off by default so that
    /// reruns produce byte-identical history files.
    pub wall_time: bool,
    /// One line per epoch on stderr.
    pub progress: bool,
}

struct StdHooks {
    start: Instant,
    opts: RunOptions,
    epochs: usize,
}

impl TrainHooks for StdHooks {
    fn elapsed(&mut self) -> f64 {
        if self.opts.wall_time {
            self.start.elapsed().as_secs_f64()
        } else {
            0.0
        }
    }

    fn on_epoch(&mut self, r: &EpochRecord) {
        if self.opts.progress {
            eprintln!(
                "epoch {:>4}/{}  loss {:.5}  val macro-F1 {:.4}  micro-F1 {:.4}",
                r.epoch, self.epochs, r.train_loss, r.val_macro_f1, r.val_micro_f1
            );
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub params: ModelParams,
    pub history: TrainHistory,
    pub test_report: MetricsReport,
    pub class_names: Vec<String>,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Train on the `train` split of `data_root`, score the selected checkpoint
/// on the `test` split, and write checkpoint, history, report, plot and the
/// effective config to `out_dir`.
pub fn run_experiment(
    data_root: impl AsRef<Path>,
    config: &ExperimentConfig,
    out_dir: impl AsRef<Path>,
    opts: RunOptions,
) -> Result<ExperimentOutcome> {
    config.validate()?;
    let ds = load_dataset(data_root)?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write(&out_dir.join(CONFIG_FILE), config.to_json())?;

    let train_set = ds.split(Split::Train);
    let test_set = ds.split(Split::Test);
    let test_ids: HashSet<&str> = test_set
        .examples()
        .iter()
        .map(|e| e.clip_id.as_str())
        .collect();
    assert!(
        train_set
            .examples()
            .iter()
            .all(|e| !test_ids.contains(e.clip_id.as_str())),
        "train/test clip ids overlap"
    );

    let tc = config.train_config(ds.feature_dim(), ds.num_classes());
    let mut hooks = StdHooks {
        start: Instant::now(),
        opts,
        epochs: tc.epochs,
    };
    let outcome = train_with_hooks(&tc, &train_set, &mut hooks)?;
    let test_report = evaluate(&outcome.params, &tc.model, &test_set, DEFAULT_THRESHOLD)?;

    save_checkpoint(&outcome.params, out_dir.join(CHECKPOINT_FILE))?;
    write(&out_dir.join(HISTORY_FILE), history_csv(&outcome.history))?;
    write(
        &out_dir.join(REPORT_FILE),
        report_csv(&test_report, ds.class_names())?,
    )?;
    emit_f1_plot(&test_report, ds.class_names(), out_dir.join(PLOT_FILE))?;

    Ok(ExperimentOutcome {
        params: outcome.params,
        history: outcome.history,
        test_report,
        class_names: ds.class_names().to_vec(),
    })
}

/// Which clips of a dataset to score.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subset {
    Train,
    Test,
    All,
}

impl Subset {
    pub fn select(self, ds: &Dataset) -> Dataset {
        match self {
            Subset::Train => ds.split(Split::Train),
            Subset::Test => ds.split(Split::Test),
            Subset::All => ds.clone(),
        }
    }
}

/// Score a saved checkpoint. Dropout rates do not matter at inference, so
/// only the attention clip has to be supplied.
pub fn evaluate_checkpoint(
    data_root: impl AsRef<Path>,
    checkpoint: impl AsRef<Path>,
    subset: Subset,
    threshold: f64,
    attention_clip: f64,
) -> Result<(MetricsReport, Vec<String>)> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!(
            "threshold {threshold} outside (0, 1)"
        )));
    }
    let params = load_checkpoint(checkpoint)?;
    let ds = load_dataset(data_root)?;
    let d = params.dims();
    let model = ModelConfig {
        input_dim: d.input_dim,
        hidden: d.hidden,
        num_classes: d.num_classes,
        attention_clip,
        ..ModelConfig::default()
    };
    model.validate().map_err(|e| Error::Config(e.to_string()))?;
    let r = evaluate(&params, &model, &subset.select(&ds), threshold)?;
    Ok((r, ds.class_names().to_vec()))
}

/// Report for a predictor that outputs `p` for every clip and class.
pub fn constant_report(ds: &Dataset, p: f64, threshold: f64) -> Result<MetricsReport> {
    let preds = vec![vec![p; ds.num_classes()]; ds.len()];
    let labels: Vec<LabelVector> = ds.examples().iter().map(|e| e.labels.clone()).collect();
    Ok(report(&preds, &labels, threshold)?)
}
