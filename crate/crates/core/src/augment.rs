//! Mix-up and concatenation augmentation.
//!
//! Mix-up interpolates features and soft targets of two equal-length items.
//! Labels are mixed in target space and the observation masks are AND-ed,
//! so an unknown label in either source leaves the class unsupervised.
//! Concatenation stacks two clips in time and fuses their labels with a
//! three-valued OR.

use alloc::format;
use alloc::vec::Vec;

use rand_distr::{Beta, Distribution};

use crate::dataio::{Batch, Example, FeatureSequence};
use crate::loss::{map_labels_to_targets, TargetMask};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Shape of the symmetric Beta distribution the mix-up weight is drawn from.
    pub beta_alpha: f64,
    pub mixup_prob: f64,
    pub concat_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            beta_alpha: 0.2,
            mixup_prob: 0.5,
            concat_prob: 0.5,
        }
    }
}

impl AugmentConfig {
    /// No augmentation at all.
    pub fn disabled() -> Self {
        AugmentConfig {
            mixup_prob: 0.0,
            concat_prob: 0.0,
            ..AugmentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta_alpha > 0.0 && self.beta_alpha.is_finite()) {
            return Err(Error::invalid("beta_alpha", "must be finite and > 0"));
        }
        for (name, p) in [
            ("mixup_prob", self.mixup_prob),
            ("concat_prob", self.concat_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(name, format!("{p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// A training input with soft targets.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem {
    pub features: FeatureSequence,
    pub targets: TargetMask,
}

impl TrainItem {
    pub fn from_example(ex: &Example) -> Self {
        TrainItem {
            features: ex.features.clone(),
            targets: map_labels_to_targets(&ex.labels),
        }
    }

    pub fn timesteps(&self) -> usize {
        self.features.timesteps()
    }
}

/// Draw `lambda ~ Beta(beta_alpha, beta_alpha)`.
pub fn sample_mixup_weight<R: rand::Rng + ?Sized>(beta_alpha: f64, rng: &mut R) -> Result<f64> {
    let beta = Beta::new(beta_alpha, beta_alpha)
        .map_err(|e| Error::invalid("beta_alpha", format!("{e}")))?;
    Ok(beta.sample(rng).clamp(0.0, 1.0))
}

/// Weights `(w_a, w_b)` with `w_a + w_b == 1` computed so that
/// `weights(l) == swap(weights(1 - l))` holds bit for bit.
fn mix_weights(lambda: f64) -> (f64, f64) {
    if lambda >= 0.5 {
        (lambda, 1.0 - lambda)
    } else {
        let wb = 1.0 - lambda;
        (1.0 - wb, wb)
    }
}

/// `lambda * a + (1 - lambda) * b` for features and targets; the mask is
/// `m_a AND m_b`. Targets at unsupervised classes are set to zero. Mixed
/// features are clamped to the span of their two sources to absorb rounding.
pub fn mixup(a: &TrainItem, b: &TrainItem, lambda: f64) -> Result<TrainItem> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid("lambda", format!("{lambda} outside [0, 1]")));
    }
    if a.features.timesteps() != b.features.timesteps() || a.features.dim() != b.features.dim() {
        return Err(Error::Shape(format!(
            "cannot mix {}x{} with {}x{}",
            a.features.timesteps(),
            a.features.dim(),
            b.features.timesteps(),
            b.features.dim()
        )));
    }
    if a.targets.len() != b.targets.len() {
        return Err(Error::Shape(format!(
            "cannot mix {} targets with {}",
            a.targets.len(),
            b.targets.len()
        )));
    }
    let (wa, wb) = mix_weights(lambda);
    let features = if wb == 0.0 {
        a.features.clone()
    } else if wa == 0.0 {
        b.features.clone()
    } else {
        let data = a
            .features
            .as_slice()
            .iter()
            .zip(b.features.as_slice())
            .map(|(x, y)| (wa * x + wb * y).clamp(x.min(*y), x.max(*y)))
            .collect();
        FeatureSequence::new(a.features.timesteps(), a.features.dim(), data)?
    };
    let mask: Vec<bool> = a
        .targets
        .mask
        .iter()
        .zip(&b.targets.mask)
        .map(|(x, y)| *x && *y)
        .collect();
    let targets = a
        .targets
        .targets
        .iter()
        .zip(&b.targets.targets)
        .zip(&mask)
        .map(|((ta, tb), m)| if *m { wa * ta + wb * tb } else { 0.0 })
        .collect();
    Ok(TrainItem {
        features,
        targets: TargetMask { targets, mask },
    })
}

/// Stack `a` over `b` in time and OR their labels.
pub fn concat_augment(a: &Example, b: &Example) -> Result<Example> {
    Ok(Example {
        clip_id: format!("{}+{}", a.clip_id, b.clip_id),
        features: a.features.concat(&b.features)?,
        labels: a.labels.or(&b.labels)?,
        split: a.split,
    })
}

/// Apply the augmentation policy to one batch.
///
/// Each example is first concatenated, with probability `concat_prob`, with
/// another example drawn uniformly from the batch. The resulting items are
/// grouped by length (order of first appearance). Within a group each item
/// is then replaced, with probability `mixup_prob`, by its mix with a
/// uniformly drawn partner from the same group, using a fresh weight.
/// Every returned group is homogeneous in length.
pub fn augment_batch<R: rand::Rng + ?Sized>(
    batch: &Batch<'_>,
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<Vec<Vec<TrainItem>>> {
    config.validate()?;
    let n = batch.len();
    let mut groups: Vec<Vec<TrainItem>> = Vec::new();
    for (i, ex) in batch.examples.iter().enumerate() {
        let item = if rng.random_bool(config.concat_prob) {
            let j = pick_other(n, i, rng);
            TrainItem::from_example(&concat_augment(ex, batch.examples[j])?)
        } else {
            TrainItem::from_example(ex)
        };
        match groups
            .iter_mut()
            .find(|g| g[0].timesteps() == item.timesteps())
        {
            Some(g) => g.push(item),
            None => groups.push(alloc::vec![item]),
        }
    }
    for group in groups.iter_mut() {
        let originals = group.clone();
        let len = originals.len();
        for (k, slot) in group.iter_mut().enumerate() {
            if len > 1 && rng.random_bool(config.mixup_prob) {
                let partner = pick_other(len, k, rng);
                let lambda = sample_mixup_weight(config.beta_alpha, rng)?;
                *slot = mixup(&originals[k], &originals[partner], lambda)?;
            }
        }
    }
    Ok(groups)
}

/// Uniform index in `0..n` other than `i` (or `i` itself when `n == 1`).
fn pick_other<R: rand::Rng + ?Sized>(n: usize, i: usize, rng: &mut R) -> usize {
    if n <= 1 {
        return i;
    }
    let j = rng.random_range(0..n - 1);
    if j >= i {
        j + 1
    } else {
        j
    }
}
