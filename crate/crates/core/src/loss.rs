//! Focal loss over soft targets with an observation mask.

use alloc::format;
use alloc::vec::Vec;

use crate::dataio::{Label, LabelVector};
use crate::{Error, Result};

/// Lower bound applied to probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Loss-facing label encoding: a soft target per class and whether the
/// class is supervised at all.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetMask {
    pub targets: Vec<f64>,
    pub mask: Vec<bool>,
}

impl TargetMask {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn observed(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// `+1 -> (1, observed)`, `-1 -> (0, observed)`, `0 -> (0, masked)`.
pub fn map_labels_to_targets(labels: &LabelVector) -> TargetMask {
    let targets = labels
        .iter()
        .map(|l| if *l == Label::Present { 1.0 } else { 0.0 })
        .collect();
    let mask = labels.iter().map(|l| l.is_observed()).collect();
    TargetMask { targets, mask }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of the positive branch; negatives get `1 - alpha`.
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.75,
            gamma: 2.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(
                "alpha",
                format!("{} outside (0, 1)", self.alpha),
            ));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(
                "gamma",
                format!("{} must be >= 0", self.gamma),
            ));
        }
        Ok(())
    }
}

/// Returns the loss and its gradient with respect to `probs`.
///
/// Per class:
/// `m * [ -t * a * (1-p)^g * ln p  -  (1-t) * (1-a) * p^g * ln(1-p) ]`,
/// summed and divided by `max(1, number of observed classes)`. Masked
/// classes are skipped entirely, so their `p` and `t` never reach the
/// arithmetic. `p` is clamped to `[1e-12, 1 - 1e-12]`; the gradient is zero
/// where the clamp is active.
pub fn focal_loss(probs: &[f64], tm: &TargetMask, config: &LossConfig) -> Result<(f64, Vec<f64>)> {
    if probs.len() != tm.targets.len() || tm.mask.len() != tm.targets.len() {
        return Err(Error::Shape(format!(
            "{} probabilities for {} targets / {} mask entries",
            probs.len(),
            tm.targets.len(),
            tm.mask.len()
        )));
    }
    let (alpha, gamma) = (config.alpha, config.gamma);
    let norm = tm.observed().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = alloc::vec![0.0; probs.len()];
    for c in 0..probs.len() {
        if !tm.mask[c] {
            continue;
        }
        let (raw, t) = (probs[c], tm.targets[c]);
        if !raw.is_finite() {
            return Err(Error::NonFinite("probabilities"));
        }
        if !t.is_finite() {
            return Err(Error::NonFinite("targets"));
        }
        let p = raw.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let q = 1.0 - p;
        let (ln_p, ln_q) = (libm::log(p), libm::log(q));
        let pos_w = t * alpha;
        let neg_w = (1.0 - t) * (1.0 - alpha);
        let q_g = libm::pow(q, gamma);
        let p_g = libm::pow(p, gamma);
        loss += -pos_w * q_g * ln_p - neg_w * p_g * ln_q;

        if raw == p {
            // d/dp [(1-p)^g ln p] = -g (1-p)^(g-1) ln p + (1-p)^g / p
            let d_pos = if gamma == 0.0 {
                1.0 / p
            } else {
                -gamma * libm::pow(q, gamma - 1.0) * ln_p + q_g / p
            };
            // d/dp [p^g ln(1-p)] = g p^(g-1) ln(1-p) - p^g / (1-p)
            let d_neg = if gamma == 0.0 {
                -1.0 / q
            } else {
                gamma * libm::pow(p, gamma - 1.0) * ln_q - p_g / q
            };
            grad[c] = (-pos_w * d_pos - neg_w * d_neg) / norm;
        }
    }
    Ok((loss / norm, grad))
}
