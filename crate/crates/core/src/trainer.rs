//! Training loop: split, shuffle, augment, optimize, validate, select.

use alloc::format;
use alloc::vec::Vec;

use crate::augment::{augment_batch, AugmentConfig, TrainItem};
use crate::dataio::{make_batches, split_train_val, Dataset, Split};
use crate::loss::{focal_loss, LossConfig};
use crate::metrics::{evaluate, DEFAULT_THRESHOLD};
use crate::model::{forward, init_params, model_backward, DropoutMasks, ModelConfig, ModelParams};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::rng::{self, tag};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionMetric {
    MacroF1,
    MicroF1,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub val_fraction: f64,
    pub loss: LossConfig,
    pub augment: AugmentConfig,
    pub model: ModelConfig,
    pub seed: u64,
    pub selection_metric: SelectionMetric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 32,
            learning_rate: 5e-4,
            val_fraction: 0.15,
            loss: LossConfig::default(),
            augment: AugmentConfig::default(),
            model: ModelConfig::default(),
            seed: 0,
            selection_metric: SelectionMetric::MacroF1,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::invalid(
                "val_fraction",
                format!("{} outside (0, 1)", self.val_fraction),
            ));
        }
        self.adam().validate()?;
        self.loss.validate()?;
        self.augment.validate()?;
        self.model.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_macro_f1: f64,
    pub val_micro_f1: f64,
    /// Seconds since training started, as reported by [`TrainHooks::elapsed`].
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
}

/// Observation points for the loop. The core has no clock, so timing comes
/// from the caller.
pub trait TrainHooks {
    fn elapsed(&mut self) -> f64 {
        0.0
    }

    fn on_epoch(&mut self, _record: &EpochRecord) {}

    /// Parameters as they stand at the end of `epoch`, before selection.
    fn on_params(&mut self, _epoch: usize, _params: &ModelParams) {}
}

/// No clock, no logging.
pub struct Silent;

impl TrainHooks for Silent {}

/// Mean focal loss over `items` and its gradient, each item run with the
/// matching dropout masks. Gradients are summed in item order then divided
/// by the item count.
pub fn batch_gradient(
    params: &ModelParams,
    model: &ModelConfig,
    loss: &LossConfig,
    items: &[&TrainItem],
    masks: &[DropoutMasks],
) -> Result<(f64, ModelParams)> {
    if items.len() != masks.len() {
        return Err(Error::Shape(format!(
            "{} items but {} dropout masks",
            items.len(),
            masks.len()
        )));
    }
    let mut grads = ModelParams::zeros(params.dims());
    let mut total = 0.0;
    for (item, m) in items.iter().zip(masks) {
        let cache = forward(params, model, &item.features, m)?;
        let (l, dp) = focal_loss(&cache.predictions.clip_probs, &item.targets, loss)?;
        total += l;
        grads.add_scaled(&model_backward(params, &cache, &dp)?, 1.0);
    }
    let n = items.len().max(1) as f64;
    for g in grads.as_mut_slice() {
        *g /= n;
    }
    Ok((total / n, grads))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: TrainHistory,
}

pub fn train(config: &TrainConfig, train_set: &Dataset) -> Result<TrainOutcome> {
    train_with_hooks(config, train_set, &mut Silent)
}

/// Train for `config.epochs` epochs and return the parameters with the best
/// validation score (earliest epoch on ties). A pure function of the
/// config and the dataset.
pub fn train_with_hooks(
    config: &TrainConfig,
    train_set: &Dataset,
    hooks: &mut dyn TrainHooks,
) -> Result<TrainOutcome> {
    config.validate()?;
    let m = &config.model;
    if train_set.feature_dim() != m.input_dim || train_set.num_classes() != m.num_classes {
        return Err(Error::Shape(format!(
            "dataset is D={} C={}, model is D={} C={}",
            train_set.feature_dim(),
            train_set.num_classes(),
            m.input_dim,
            m.num_classes
        )));
    }
    if let Some(ex) = train_set
        .examples()
        .iter()
        .find(|e| e.split != Split::Train)
    {
        return Err(Error::invalid(
            "train_set",
            format!(
                "clip {:?} belongs to the {} split",
                ex.clip_id,
                ex.split.as_str()
            ),
        ));
    }

    let mut params = init_params(m, config.seed)?;
    let mut history = TrainHistory::default();
    if config.epochs == 0 {
        return Ok(TrainOutcome { params, history });
    }

    let (fit_set, val_set) = split_train_val(train_set, config.val_fraction, config.seed)?;
    let mut adam = AdamState::new(config.adam(), params.as_slice().len());
    let mut best: Option<(f64, ModelParams)> = None;
    let start = hooks.elapsed();

    for epoch in 1..=config.epochs {
        let e = epoch as u64;
        let shuffle_seed = rng::derive(config.seed, &[tag::SHUFFLE, e]);
        let batches = make_batches(&fit_set, config.batch_size, true, shuffle_seed)?;
        let mut loss_sum = 0.0;
        let mut item_count = 0usize;
        for (b, batch) in batches.iter().enumerate() {
            let mut aug_rng = rng::stream(config.seed, &[tag::AUGMENT, e, b as u64]);
            let groups = augment_batch(batch, &config.augment, &mut aug_rng)?;
            let mut items: Vec<&TrainItem> = Vec::new();
            let mut masks = Vec::new();
            for (g, group) in groups.iter().enumerate() {
                for (k, item) in group.iter().enumerate() {
                    let mut drop_rng = rng::stream(
                        config.seed,
                        &[tag::DROPOUT, e, b as u64, g as u64, k as u64],
                    );
                    masks.push(DropoutMasks::sample(m, &mut drop_rng));
                    items.push(item);
                }
            }
            let (loss, grads) = batch_gradient(&params, m, &config.loss, &items, &masks)?;
            if !loss.is_finite() || grads.as_slice().iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            adam_step(&mut params, &grads, &mut adam)?;
            loss_sum += loss * items.len() as f64;
            item_count += items.len();
        }

        let report = evaluate(&params, m, &val_set, DEFAULT_THRESHOLD)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / item_count.max(1) as f64,
            val_macro_f1: report.macro_f1(),
            val_micro_f1: report.micro_f1(),
            seconds: hooks.elapsed() - start,
        };
        let score = match config.selection_metric {
            SelectionMetric::MacroF1 => record.val_macro_f1,
            SelectionMetric::MicroF1 => record.val_micro_f1,
        };
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, params.clone()));
            history.best_epoch = Some(epoch);
        }
        hooks.on_epoch(&record);
        hooks.on_params(epoch, &params);
        history.epochs.push(record);
    }

    let params = best.map(|(_, p)| p).unwrap_or(params);
    Ok(TrainOutcome { params, history })
}
