//! Per-class precision, recall and F1 with macro and micro aggregation.
//!
//! Only observed (clip, class) pairs are counted; unknown labels are skipped
//! for both positives and negatives. A prediction is positive iff its
//! probability is strictly greater than the threshold.

use alloc::format;
use alloc::vec::Vec;

use crate::dataio::{Dataset, Label, LabelVector};
use crate::model::{predict, ModelConfig, ModelParams};
use crate::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ClassCounts {
    pub fn observed(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn add(&mut self, other: &ClassCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub per_class: Vec<ClassCounts>,
}

impl ConfusionCounts {
    pub fn total(&self) -> ClassCounts {
        let mut t = ClassCounts::default();
        for c in &self.per_class {
            t.add(c);
        }
        t
    }
}

pub fn confusion_counts<P: AsRef<[f64]>>(
    predictions: &[P],
    labels: &[LabelVector],
    threshold: f64,
) -> Result<ConfusionCounts> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} label vectors",
            predictions.len(),
            labels.len()
        )));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(
            "threshold",
            format!("{threshold} outside (0, 1)"),
        ));
    }
    let num_classes = labels.first().map_or(0, |l| l.len());
    let mut per_class = alloc::vec![ClassCounts::default(); num_classes];
    for (p, y) in predictions.iter().zip(labels) {
        let p = p.as_ref();
        if p.len() != num_classes || y.len() != num_classes {
            return Err(Error::Shape(format!(
                "clip with {} predictions / {} labels, expected {num_classes}",
                p.len(),
                y.len()
            )));
        }
        for ((prob, label), counts) in p.iter().zip(y.iter()).zip(per_class.iter_mut()) {
            let predicted = *prob > threshold;
            match (label, predicted) {
                (Label::Unknown, _) => {}
                (Label::Present, true) => counts.tp += 1,
                (Label::Present, false) => counts.fn_ += 1,
                (Label::Absent, true) => counts.fp += 1,
                (Label::Absent, false) => counts.tn += 1,
            }
        }
    }
    Ok(ConfusionCounts { per_class })
}

/// Precision, recall and F1 for one set of counts. `degenerate` marks that
/// at least one of them had a zero denominator and was set to 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate: bool,
}

fn ratio(num: f64, den: f64, degenerate: &mut bool) -> f64 {
    if den == 0.0 {
        *degenerate = true;
        0.0
    } else {
        num / den
    }
}

pub fn class_prf1(counts: &ClassCounts) -> Prf1 {
    let mut degenerate = false;
    let tp = counts.tp as f64;
    let precision = ratio(tp, tp + counts.fp as f64, &mut degenerate);
    let recall = ratio(tp, tp + counts.fn_ as f64, &mut degenerate);
    let f1 = ratio(
        2.0 * precision * recall,
        precision + recall,
        &mut degenerate,
    );
    Prf1 {
        precision,
        recall,
        f1,
        degenerate,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Precision, recall and F1 of the counts summed over classes.
    pub micro: Prf1,
}

pub fn aggregate(per_class: &[Prf1], counts: &ConfusionCounts) -> Result<Aggregate> {
    if per_class.is_empty() {
        return Err(Error::invalid("per_class", "need at least one class"));
    }
    let n = per_class.len() as f64;
    let mean = |f: fn(&Prf1) -> f64| per_class.iter().map(f).sum::<f64>() / n;
    Ok(Aggregate {
        macro_precision: mean(|r| r.precision),
        macro_recall: mean(|r| r.recall),
        macro_f1: mean(|r| r.f1),
        micro: class_prf1(&counts.total()),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub per_class: Vec<Prf1>,
    pub summary: Aggregate,
}

impl MetricsReport {
    pub fn macro_f1(&self) -> f64 {
        self.summary.macro_f1
    }

    pub fn micro_f1(&self) -> f64 {
        self.summary.micro.f1
    }
}

pub fn report<P: AsRef<[f64]>>(
    predictions: &[P],
    labels: &[LabelVector],
    threshold: f64,
) -> Result<MetricsReport> {
    let counts = confusion_counts(predictions, labels, threshold)?;
    let per_class: Vec<Prf1> = counts.per_class.iter().map(class_prf1).collect();
    let summary = aggregate(&per_class, &counts)?;
    Ok(MetricsReport {
        threshold,
        counts,
        per_class,
        summary,
    })
}

/// Eval-mode predictions for every clip, in dataset order.
pub fn predict_dataset(
    params: &ModelParams,
    config: &ModelConfig,
    dataset: &Dataset,
) -> Result<Vec<Vec<f64>>> {
    if dataset.feature_dim() != config.input_dim || dataset.num_classes() != config.num_classes {
        return Err(Error::Shape(format!(
            "dataset is D={} C={}, model is D={} C={}",
            dataset.feature_dim(),
            dataset.num_classes(),
            config.input_dim,
            config.num_classes
        )));
    }
    dataset
        .examples()
        .iter()
        .map(|ex| predict(params, config, &ex.features))
        .collect()
}

pub fn evaluate(
    params: &ModelParams,
    config: &ModelConfig,
    dataset: &Dataset,
    threshold: f64,
) -> Result<MetricsReport> {
    let preds = predict_dataset(params, config, dataset)?;
    let labels: Vec<LabelVector> = dataset
        .examples()
        .iter()
        .map(|e| e.labels.clone())
        .collect();
    if labels.is_empty() {
        let per_class = alloc::vec![class_prf1(&ClassCounts::default()); dataset.num_classes()];
        let counts = ConfusionCounts {
            per_class: alloc::vec![ClassCounts::default(); dataset.num_classes()],
        };
        let summary = aggregate(&per_class, &counts)?;
        return Ok(MetricsReport {
            threshold,
            counts,
            per_class,
            summary,
        });
    }
    report(&preds, &labels, threshold)
}
