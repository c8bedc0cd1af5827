//! Central finite-difference check of the analytic gradient.

use alloc::vec::Vec;

use rand::Rng as _;

use crate::augment::TrainItem;
use crate::dataio::{FeatureSequence, Label, LabelVector};
use crate::loss::{map_labels_to_targets, LossConfig};
use crate::model::{init_params, DropoutMasks, ModelConfig, ModelParams};
use crate::rng::{self, tag};
use crate::trainer::batch_gradient;
use crate::Result;

/// Random features in `[-1, 1)` with labels drawn 40% present, 40% absent,
/// 20% unknown.
pub fn random_batch(
    config: &ModelConfig,
    timesteps: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<TrainItem>> {
    let mut r = rng::stream(seed, &[tag::GRADCHECK]);
    (0..count)
        .map(|_| {
            let data = (0..timesteps * config.input_dim)
                .map(|_| r.random_range(-1.0..1.0))
                .collect();
            let features = FeatureSequence::new(timesteps, config.input_dim, data)?;
            let labels = (0..config.num_classes)
                .map(|_| match r.random_range(0..10) {
                    0..=3 => Label::Present,
                    4..=7 => Label::Absent,
                    _ => Label::Unknown,
                })
                .collect();
            Ok(TrainItem {
                features,
                targets: map_labels_to_targets(&LabelVector::new(labels)),
            })
        })
        .collect()
}

fn eval_loss(
    params: &ModelParams,
    model: &ModelConfig,
    loss: &LossConfig,
    items: &[&TrainItem],
    masks: &[DropoutMasks],
) -> Result<f64> {
    Ok(batch_gradient(params, model, loss, items, masks)?.0)
}

/// Central differences of the eval-mode batch loss for every parameter.
pub fn numeric_gradient(
    params: &ModelParams,
    model: &ModelConfig,
    loss: &LossConfig,
    items: &[TrainItem],
    eps: f64,
) -> Result<Vec<f64>> {
    let refs: Vec<&TrainItem> = items.iter().collect();
    let masks = alloc::vec![DropoutMasks::identity(params.dims()); items.len()];
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(params.as_slice().len());
    for i in 0..params.as_slice().len() {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + eps;
        let hi = eval_loss(&probe, model, loss, &refs, &masks)?;
        probe.as_mut_slice()[i] = orig - eps;
        let lo = eval_loss(&probe, model, loss, &refs, &masks)?;
        probe.as_mut_slice()[i] = orig;
        out.push((hi - lo) / (2.0 * eps));
    }
    Ok(out)
}

/// `max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-8)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Eval-mode analytic gradient of the batch loss.
pub fn analytic_gradient(
    params: &ModelParams,
    model: &ModelConfig,
    loss: &LossConfig,
    items: &[TrainItem],
) -> Result<ModelParams> {
    let refs: Vec<&TrainItem> = items.iter().collect();
    let masks = alloc::vec![DropoutMasks::identity(params.dims()); items.len()];
    Ok(batch_gradient(params, model, loss, &refs, &masks)?.1)
}

/// Compare a supplied gradient against central differences.
pub fn check_gradient(
    params: &ModelParams,
    model: &ModelConfig,
    loss: &LossConfig,
    items: &[TrainItem],
    eps: f64,
    analytic: &ModelParams,
) -> Result<f64> {
    let numeric = numeric_gradient(params, model, loss, items, eps)?;
    Ok(max_relative_error(analytic.as_slice(), &numeric))
}

/// Initialize parameters from `seed`, then return the worst relative error
/// between the analytic and finite-difference gradients of the batch loss.
pub fn finite_difference_check(
    config: &ModelConfig,
    loss: &LossConfig,
    items: &[TrainItem],
    seed: u64,
    eps: f64,
) -> Result<f64> {
    let params = init_params(config, seed)?;
    let analytic = analytic_gradient(&params, config, loss, items)?;
    check_gradient(&params, config, loss, items, eps, &analytic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Block;

    fn tiny() -> ModelConfig {
        ModelConfig {
            input_dim: 3,
            hidden: 2,
            num_classes: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn correct_gradient_passes() {
        let cfg = tiny();
        for seed in 0..3 {
            let items = random_batch(&cfg, 4, 3, seed).unwrap();
            let err =
                finite_difference_check(&cfg, &LossConfig::default(), &items, seed, 1e-5).unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn zeroed_attention_gradient_is_detected() {
        let cfg = tiny();
        let items = random_batch(&cfg, 4, 3, 1).unwrap();
        let loss = LossConfig::default();
        let params = init_params(&cfg, 1).unwrap();
        let mut g = analytic_gradient(&params, &cfg, &loss, &items).unwrap();
        g.block_mut(Block::WAtt).fill(0.0);
        let err = check_gradient(&params, &cfg, &loss, &items, 1e-5, &g).unwrap();
        assert!(err > 0.99, "{err}");
    }

    #[test]
    fn deterministic() {
        let cfg = tiny();
        let items = random_batch(&cfg, 4, 2, 5).unwrap();
        let a = finite_difference_check(&cfg, &LossConfig::default(), &items, 5, 1e-5).unwrap();
        let b = finite_difference_check(&cfg, &LossConfig::default(), &items, 5, 1e-5).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
