//! Dataset model: three-valued labels, feature sequences, splits, batching
//! and the planted-signature synthetic generator.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Deref;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::rng::{self, tag};
use crate::{Error, Result};

/// Per (clip, class) annotation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(i8)]
pub enum Label {
    Absent = -1,
    Unknown = 0,
    Present = 1,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Absent, Label::Unknown, Label::Present];

    pub fn from_value(v: i64) -> Result<Label> {
        match v {
            -1 => Ok(Label::Absent),
            0 => Ok(Label::Unknown),
            1 => Ok(Label::Present),
            other => Err(Error::InvalidLabel(other)),
        }
    }

    pub fn value(self) -> i8 {
        self as i8
    }

    pub fn is_observed(self) -> bool {
        self != Label::Unknown
    }

    /// Kleene disjunction: present wins, absent only if both are absent.
    pub fn or(self, other: Label) -> Label {
        match (self, other) {
            (Label::Present, _) | (_, Label::Present) => Label::Present,
            (Label::Absent, Label::Absent) => Label::Absent,
            _ => Label::Unknown,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelVector(Vec<Label>);

impl LabelVector {
    pub fn new(labels: Vec<Label>) -> Self {
        LabelVector(labels)
    }

    pub fn from_values(values: &[i64]) -> Result<Self> {
        values
            .iter()
            .map(|&v| Label::from_value(v))
            .collect::<Result<Vec<_>>>()
            .map(LabelVector)
    }

    pub fn unknown(num_classes: usize) -> Self {
        LabelVector(alloc::vec![Label::Unknown; num_classes])
    }

    pub fn as_slice(&self) -> &[Label] {
        &self.0
    }

    pub fn set(&mut self, class: usize, label: Label) {
        self.0[class] = label;
    }

    /// Element-wise three-valued OR.
    pub fn or(&self, other: &LabelVector) -> Result<LabelVector> {
        if self.len() != other.len() {
            return Err(Error::Shape(format!(
                "label vectors of length {} and {}",
                self.len(),
                other.len()
            )));
        }
        Ok(LabelVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a.or(*b)).collect(),
        ))
    }
}

impl Deref for LabelVector {
    type Target = [Label];

    fn deref(&self) -> &[Label] {
        &self.0
    }
}

/// A `timesteps × dim` row-major matrix of finite features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    timesteps: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureSequence {
    pub fn new(timesteps: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if timesteps == 0 || dim == 0 {
            return Err(Error::Shape(format!(
                "feature sequence must be non-empty, got {timesteps}x{dim}"
            )));
        }
        if data.len() != timesteps * dim {
            return Err(Error::Shape(format!(
                "expected {}x{} = {} features, got {}",
                timesteps,
                dim,
                timesteps * dim,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        Ok(FeatureSequence {
            timesteps,
            dim,
            data,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    /// Stack `self` over `other` along time.
    pub fn concat(&self, other: &FeatureSequence) -> Result<FeatureSequence> {
        if self.dim != other.dim {
            return Err(Error::Shape(format!(
                "cannot concatenate feature dims {} and {}",
                self.dim, other.dim
            )));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(FeatureSequence {
            timesteps: self.timesteps + other.timesteps,
            dim: self.dim,
            data,
        })
    }

    /// Rows in reverse time order.
    pub fn reversed(&self) -> FeatureSequence {
        let mut data = Vec::with_capacity(self.data.len());
        for t in (0..self.timesteps).rev() {
            data.extend_from_slice(self.row(t));
        }
        FeatureSequence {
            timesteps: self.timesteps,
            dim: self.dim,
            data,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub clip_id: String,
    pub features: FeatureSequence,
    pub labels: LabelVector,
    pub split: Split,
}

/// An immutable collection of examples sharing feature dimension, class
/// count and sequence length.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    class_names: Vec<String>,
    feature_dim: usize,
    base_timesteps: usize,
}

impl Dataset {
    pub fn new(
        examples: Vec<Example>,
        class_names: Vec<String>,
        feature_dim: usize,
        base_timesteps: usize,
    ) -> Result<Self> {
        if class_names.is_empty() {
            return Err(Error::invalid("class_names", "need at least one class"));
        }
        let mut ids = BTreeSet::new();
        for ex in &examples {
            if ex.features.dim() != feature_dim || ex.features.timesteps() != base_timesteps {
                return Err(Error::Shape(format!(
                    "clip {:?} has shape {}x{}, dataset expects {}x{}",
                    ex.clip_id,
                    ex.features.timesteps(),
                    ex.features.dim(),
                    base_timesteps,
                    feature_dim
                )));
            }
            if ex.labels.len() != class_names.len() {
                return Err(Error::Shape(format!(
                    "clip {:?} has {} labels, dataset has {} classes",
                    ex.clip_id,
                    ex.labels.len(),
                    class_names.len()
                )));
            }
            if !ids.insert(ex.clip_id.as_str()) {
                return Err(Error::DuplicateClip(ex.clip_id.clone()));
            }
        }
        Ok(Dataset {
            examples,
            class_names,
            feature_dim,
            base_timesteps,
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn base_timesteps(&self) -> usize {
        self.base_timesteps
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// New dataset holding the examples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            class_names: self.class_names.clone(),
            feature_dim: self.feature_dim,
            base_timesteps: self.base_timesteps,
        }
    }

    pub fn split(&self, split: Split) -> Dataset {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| self.examples[i].split == split)
            .collect();
        self.select(&idx)
    }
}

/// Map a continuous relevance annotation to a three-valued label.
pub fn encode_label(relevance: f64, observed: bool, threshold: f64) -> Result<Label> {
    if !(0.0..=1.0).contains(&relevance) {
        return Err(Error::invalid(
            "relevance",
            format!("{relevance} outside [0, 1]"),
        ));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(
            "threshold",
            format!("{threshold} outside (0, 1)"),
        ));
    }
    Ok(match (observed, relevance >= threshold) {
        (false, _) => Label::Unknown,
        (true, true) => Label::Present,
        (true, false) => Label::Absent,
    })
}

/// Uniform random per-clip partition into (train, validation). The
/// validation set has `round(val_fraction * N)` clips; both keep the
/// original relative order.
pub fn split_train_val(
    train_set: &Dataset,
    val_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::invalid(
            "val_fraction",
            format!("{val_fraction} outside (0, 1)"),
        ));
    }
    let n = train_set.len();
    let n_val = libm::round(val_fraction * n as f64) as usize;
    if n_val == 0 {
        return Err(Error::EmptyPartition("validation"));
    }
    if n_val >= n {
        return Err(Error::EmptyPartition("training"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[tag::SPLIT]));
    let mut val_idx = order[..n_val].to_vec();
    let mut train_idx = order[n_val..].to_vec();
    val_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok((train_set.select(&train_idx), train_set.select(&val_idx)))
}

/// A group of examples sharing sequence length.
#[derive(Clone, Debug)]
pub struct Batch<'a> {
    pub examples: Vec<&'a Example>,
}

impl<'a> Batch<'a> {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn timesteps(&self) -> usize {
        self.examples.first().map_or(0, |e| e.features.timesteps())
    }
}

/// Partition one epoch into batches of at most `batch_size`, optionally
/// shuffled by a stream keyed on `seed`. The final batch may be short.
pub fn make_batches(
    dataset: &Dataset,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
) -> Result<Vec<Batch<'_>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size", "must be at least 1"));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    if shuffle {
        order.shuffle(&mut rng::stream(seed, &[tag::SHUFFLE]));
    }
    Ok(order
        .chunks(batch_size)
        .map(|chunk| Batch {
            examples: chunk.iter().map(|&i| &dataset.examples[i]).collect(),
        })
        .collect())
}

/// Parameters of the planted-signature generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub num_clips: usize,
    pub num_classes: usize,
    pub timesteps: usize,
    pub feature_dim: usize,
    pub mask_rate: f64,
    pub noise_scale: f64,
    pub amplitude: f64,
    pub presence_prob: f64,
    /// Fraction of clips (taken from the end) assigned to the test split.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_clips: 100,
            num_classes: 5,
            timesteps: 10,
            feature_dim: 16,
            mask_rate: 0.0,
            noise_scale: 0.1,
            amplitude: 1.0,
            presence_prob: 0.3,
            test_fraction: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.num_clips == 0
            || self.num_classes == 0
            || self.timesteps == 0
            || self.feature_dim == 0
        {
            return Err(Error::invalid("synthetic dims", "all counts must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.mask_rate) {
            return Err(Error::invalid("mask_rate", "must lie in [0, 1)"));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::invalid("noise_scale", "must be finite and >= 0"));
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::invalid("amplitude", "must be finite and > 0"));
        }
        if !(0.0..=1.0).contains(&self.presence_prob) {
            return Err(Error::invalid("presence_prob", "must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::invalid("test_fraction", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Each class owns a random unit signature (mutually orthogonal when
    /// `num_classes <= feature_dim`). A clip positive for a class
    /// carries that signature (times `amplitude`) at two distinct random
    /// timesteps on top of Gaussian background noise. Features are rounded
    /// to `f32` so the dataset survives the on-disk format bit-exactly.
    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        let mut rng = rng::stream(self.seed, &[tag::SYNTH]);
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        let (c_count, t_count, d) = (self.num_classes, self.timesteps, self.feature_dim);

        // Orthonormal while there is room (C <= D), otherwise just unit norm.
        let mut signatures: Vec<Vec<f64>> = Vec::with_capacity(c_count);
        while signatures.len() < c_count {
            let mut v: Vec<f64> = (0..d).map(|_| std_normal.sample(&mut rng)).collect();
            if signatures.len() < d {
                for s in &signatures {
                    let dot: f64 = v.iter().zip(s).map(|(a, b)| a * b).sum();
                    for (a, b) in v.iter_mut().zip(s) {
                        *a -= dot * b;
                    }
                }
            }
            let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
            if norm > 1e-6 {
                signatures.push(v.into_iter().map(|x| x / norm).collect());
            }
        }

        let n_test = libm::round(self.test_fraction * self.num_clips as f64) as usize;
        let planted_steps = t_count.min(2);
        let mut examples = Vec::with_capacity(self.num_clips);
        for clip in 0..self.num_clips {
            let mut data: Vec<f64> = (0..t_count * d)
                .map(|_| self.noise_scale * std_normal.sample(&mut rng))
                .collect();
            let mut labels = Vec::with_capacity(c_count);
            for sig in &signatures {
                let present = rng.random_bool(self.presence_prob);
                if present {
                    for t in index::sample(&mut rng, t_count, planted_steps) {
                        for (x, s) in data[t * d..(t + 1) * d].iter_mut().zip(sig) {
                            *x += self.amplitude * s;
                        }
                    }
                }
                labels.push(if present {
                    Label::Present
                } else {
                    Label::Absent
                });
            }
            for label in labels.iter_mut() {
                if rng.random_bool(self.mask_rate) {
                    *label = Label::Unknown;
                }
            }
            for x in data.iter_mut() {
                *x = *x as f32 as f64;
            }
            examples.push(Example {
                clip_id: format!("synth-{clip:06}"),
                features: FeatureSequence::new(t_count, d, data)?,
                labels: LabelVector::new(labels),
                split: if clip >= self.num_clips - n_test {
                    Split::Test
                } else {
                    Split::Train
                },
            });
        }
        let class_names = (0..c_count).map(|c| format!("class_{c:02}")).collect();
        Dataset::new(examples, class_names, d, t_count)
    }
}

/// Planted-signature dataset with default amplitude (1.0), presence
/// probability 0.3 and every clip in the train split.
pub fn generate_synthetic(
    num_clips: usize,
    num_classes: usize,
    timesteps: usize,
    feature_dim: usize,
    mask_rate: f64,
    noise_scale: f64,
    seed: u64,
) -> Result<Dataset> {
    SynthConfig {
        num_clips,
        num_classes,
        timesteps,
        feature_dim,
        mask_rate,
        noise_scale,
        seed,
        ..SynthConfig::default()
    }
    .generate()
}
