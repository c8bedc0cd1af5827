//! BiLSTM encoder with per-class attention pooling.
//!
//! Shapes, with `D` input features, `H` hidden units per direction and `C`
//! classes:
//!
//! * LSTM, per direction: `W` is `4H x D`, `U` is `4H x H`, `b` is `4H`.
//!   Gate rows are ordered input, forget, cell candidate, output.
//! * Attention head `W_att` (`C x 2H`, `b_att` C) gives per-step scores,
//!   clipped to `[-kappa, kappa]` and softmax-normalized over time per class.
//! * Classification head `W_cla` (`C x 2H`, `b_cla` C) gives per-step
//!   sigmoid probabilities `q`. The clip probability is `p_c = sum_t a_tc q_tc`.
//!
//! All matrices are row-major. Parameters live in one flat buffer, laid out
//! block by block in [`Block::ALL`] order, which is also the checkpoint order.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand_distr::{Distribution, Normal, Uniform};

use crate::dataio::FeatureSequence;
use crate::rng::{self, tag};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub num_classes: usize,
    pub dropout_rate: f64,
    pub recurrent_dropout_rate: f64,
    pub attention_clip: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 128,
            hidden: 64,
            num_classes: 20,
            dropout_rate: 0.2,
            recurrent_dropout_rate: 0.2,
            attention_clip: 10.0,
        }
    }
}

impl ModelConfig {
    pub fn dims(&self) -> Dims {
        Dims {
            input_dim: self.input_dim,
            hidden: self.hidden,
            num_classes: self.num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.num_classes == 0 {
            return Err(Error::invalid("model dims", "all dims must be >= 1"));
        }
        for (name, r) in [
            ("dropout_rate", self.dropout_rate),
            ("recurrent_dropout_rate", self.recurrent_dropout_rate),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::invalid(name, format!("{r} outside [0, 1)")));
            }
        }
        if !(self.attention_clip > 0.0) {
            return Err(Error::invalid("attention_clip", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub input_dim: usize,
    pub hidden: usize,
    pub num_classes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    fn index(self) -> usize {
        self as usize
    }
}

/// Named parameter blocks, in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Block {
    WFwd,
    UFwd,
    BFwd,
    WBwd,
    UBwd,
    BBwd,
    WAtt,
    BAtt,
    WCla,
    BCla,
}

impl Block {
    pub const ALL: [Block; 10] = [
        Block::WFwd,
        Block::UFwd,
        Block::BFwd,
        Block::WBwd,
        Block::UBwd,
        Block::BBwd,
        Block::WAtt,
        Block::BAtt,
        Block::WCla,
        Block::BCla,
    ];

    /// `(rows, cols)`; vectors have one column.
    pub fn shape(self, d: Dims) -> (usize, usize) {
        let (dd, h, c) = (d.input_dim, d.hidden, d.num_classes);
        match self {
            Block::WFwd | Block::WBwd => (4 * h, dd),
            Block::UFwd | Block::UBwd => (4 * h, h),
            Block::BFwd | Block::BBwd => (4 * h, 1),
            Block::WAtt | Block::WCla => (c, 2 * h),
            Block::BAtt | Block::BCla => (c, 1),
        }
    }

    pub fn len(self, d: Dims) -> usize {
        let (r, c) = self.shape(d);
        r * c
    }
}

impl Dims {
    pub fn num_params(&self) -> usize {
        Block::ALL.iter().map(|b| b.len(*self)).sum()
    }

    pub fn range(&self, block: Block) -> Range<usize> {
        let mut start = 0;
        for b in Block::ALL {
            let len = b.len(*self);
            if b == block {
                return start..start + len;
            }
            start += len;
        }
        unreachable!()
    }
}

/// All learnable weights (or a gradient with the same layout).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    dims: Dims,
    data: Vec<f64>,
}

/// Borrowed weights of one LSTM direction.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights<'a> {
    pub w: &'a [f64],
    pub u: &'a [f64],
    pub b: &'a [f64],
    pub input_dim: usize,
    pub hidden: usize,
}

impl ModelParams {
    pub fn zeros(dims: Dims) -> Self {
        ModelParams {
            dims,
            data: vec![0.0; dims.num_params()],
        }
    }

    pub fn from_vec(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.num_params() {
            return Err(Error::Shape(format!(
                "{} parameters for dims needing {}",
                data.len(),
                dims.num_params()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameters"));
        }
        Ok(ModelParams { dims, data })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn block(&self, b: Block) -> &[f64] {
        &self.data[self.dims.range(b)]
    }

    pub fn block_mut(&mut self, b: Block) -> &mut [f64] {
        let r = self.dims.range(b);
        &mut self.data[r]
    }

    pub fn lstm(&self, dir: Direction) -> LstmWeights<'_> {
        let (w, u, b) = match dir {
            Direction::Forward => (Block::WFwd, Block::UFwd, Block::BFwd),
            Direction::Backward => (Block::WBwd, Block::UBwd, Block::BBwd),
        };
        LstmWeights {
            w: self.block(w),
            u: self.block(u),
            b: self.block(b),
            input_dim: self.dims.input_dim,
            hidden: self.dims.hidden,
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }
}

/// Glorot-uniform input and head weights, per-gate orthogonal recurrent
/// weights, zero biases except the LSTM forget gate (1.0).
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let d = config.dims();
    let mut p = ModelParams::zeros(d);
    let mut rng = rng::stream(seed, &[tag::INIT]);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let h = d.hidden;
    for block in Block::ALL {
        let (rows, cols) = block.shape(d);
        match block {
            Block::WFwd | Block::WBwd | Block::WAtt | Block::WCla => {
                let limit = libm::sqrt(6.0 / (rows + cols) as f64);
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
                for v in p.block_mut(block) {
                    *v = dist.sample(&mut rng);
                }
            }
            Block::UFwd | Block::UBwd => {
                let u = p.block_mut(block);
                for gate in 0..4 {
                    let q = random_orthogonal(h, &mut rng, &normal);
                    u[gate * h * h..(gate + 1) * h * h].copy_from_slice(&q);
                }
            }
            Block::BFwd | Block::BBwd => {
                p.block_mut(block)[h..2 * h].fill(1.0);
            }
            Block::BAtt | Block::BCla => {}
        }
    }
    Ok(p)
}

/// Square orthogonal matrix from Gram-Schmidt (two passes) on a Gaussian
/// matrix. Rows are orthonormal.
fn random_orthogonal(n: usize, rng: &mut rng::Rng, normal: &Normal<f64>) -> Vec<f64> {
    let mut m: Vec<f64> = (0..n * n).map(|_| normal.sample(rng)).collect();
    let mut i = 0;
    while i < n {
        for _ in 0..2 {
            for j in 0..i {
                let dot: f64 = (0..n).map(|k| m[i * n + k] * m[j * n + k]).sum();
                for k in 0..n {
                    m[i * n + k] -= dot * m[j * n + k];
                }
            }
        }
        let norm = libm::sqrt((0..n).map(|k| m[i * n + k] * m[i * n + k]).sum::<f64>());
        if norm < 1e-8 {
            for k in 0..n {
                m[i * n + k] = normal.sample(rng);
            }
            continue;
        }
        for k in 0..n {
            m[i * n + k] /= norm;
        }
        i += 1;
    }
    m
}

/// Variational dropout masks: one draw per sequence, reused at every step.
/// Entries are `0` or `1 / (1 - rate)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMasks {
    pub input: Vec<f64>,
    pub recurrent: [Vec<f64>; 2],
}

impl DropoutMasks {
    pub fn identity(d: Dims) -> Self {
        DropoutMasks {
            input: vec![1.0; d.input_dim],
            recurrent: [vec![1.0; d.hidden], vec![1.0; d.hidden]],
        }
    }

    pub fn sample<R: rand::Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        fn draw<R: rand::Rng + ?Sized>(n: usize, rate: f64, rng: &mut R) -> Vec<f64> {
            if rate == 0.0 {
                return vec![1.0; n];
            }
            let keep = 1.0 / (1.0 - rate);
            (0..n)
                .map(|_| if rng.random_bool(rate) { 0.0 } else { keep })
                .collect()
        }
        DropoutMasks {
            input: draw(config.input_dim, config.dropout_rate, rng),
            recurrent: [
                draw(config.hidden, config.recurrent_dropout_rate, rng),
                draw(config.hidden, config.recurrent_dropout_rate, rng),
            ],
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `out += m * x` for row-major `m` (`out.len() x x.len()`).
#[inline]
fn gemv_acc(m: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        let mut s = 0.0;
        for (a, b) in row.iter().zip(x) {
            s += a * b;
        }
        *o += s;
    }
}

/// `out += m^T * y` for row-major `m` (`y.len() x out.len()`).
#[inline]
fn gemv_t_acc(m: &[f64], y: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (row, &yv) in m.chunks_exact(cols).zip(y) {
        if yv == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += yv * a;
        }
    }
}

/// `g += y x^T`.
#[inline]
fn outer_acc(g: &mut [f64], y: &[f64], x: &[f64]) {
    let cols = x.len();
    for (row, &yv) in g.chunks_exact_mut(cols).zip(y) {
        if yv == 0.0 {
            continue;
        }
        for (o, b) in row.iter_mut().zip(x) {
            *o += yv * b;
        }
    }
}

/// One cell update from already-masked inputs. Writes post-activation gates
/// `[i, f, g, o]` (length 4H), the new cell state, `tanh(c)` and `h`.
fn cell_step(
    w: LstmWeights<'_>,
    x_masked: &[f64],
    h_prev_masked: &[f64],
    c_prev: &[f64],
    gates: &mut [f64],
    c_out: &mut [f64],
    tanh_c_out: &mut [f64],
    h_out: &mut [f64],
) {
    let h = w.hidden;
    gates.copy_from_slice(w.b);
    gemv_acc(w.w, x_masked, gates);
    gemv_acc(w.u, h_prev_masked, gates);
    for k in 0..h {
        let i = sigmoid(gates[k]);
        let f = sigmoid(gates[h + k]);
        let g = libm::tanh(gates[2 * h + k]);
        let o = sigmoid(gates[3 * h + k]);
        gates[k] = i;
        gates[h + k] = f;
        gates[2 * h + k] = g;
        gates[3 * h + k] = o;
        let c = f * c_prev[k] + i * g;
        let tc = libm::tanh(c);
        c_out[k] = c;
        tanh_c_out[k] = tc;
        h_out[k] = o * tc;
    }
}

/// Hidden and cell state after one step.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

/// A single LSTM step with dropout masks applied to `x` and `h_prev`.
pub fn lstm_cell_forward(
    weights: LstmWeights<'_>,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    input_mask: &[f64],
    recurrent_mask: &[f64],
) -> CellState {
    let h = weights.hidden;
    let xm: Vec<f64> = x.iter().zip(input_mask).map(|(a, m)| a * m).collect();
    let hm: Vec<f64> = h_prev
        .iter()
        .zip(recurrent_mask)
        .map(|(a, m)| a * m)
        .collect();
    let mut gates = vec![0.0; 4 * h];
    let mut c = vec![0.0; h];
    let mut tc = vec![0.0; h];
    let mut hn = vec![0.0; h];
    cell_step(
        weights, &xm, &hm, c_prev, &mut gates, &mut c, &mut tc, &mut hn,
    );
    CellState { h: hn, c }
}

/// Per-direction activations, indexed by absolute timestep.
#[derive(Clone, Debug, PartialEq)]
struct DirectionCache {
    gates: Vec<f64>,
    cells: Vec<f64>,
    tanh_cells: Vec<f64>,
    hidden: Vec<f64>,
}

/// Model output for one sequence. Per-step arrays are `T x C`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub timesteps: usize,
    pub clip_probs: Vec<f64>,
    pub per_step_probs: Vec<f64>,
    pub attention: Vec<f64>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardCache {
    dims: Dims,
    attention_clip: f64,
    timesteps: usize,
    masks: DropoutMasks,
    masked_input: Vec<f64>,
    dirs: [DirectionCache; 2],
    hidden: Vec<f64>,
    scores: Vec<f64>,
    pub predictions: Predictions,
}

impl ForwardCache {
    pub fn masks(&self) -> &DropoutMasks {
        &self.masks
    }

    /// Input rows as the LSTM saw them (after the input mask), `T x D`.
    pub fn masked_input(&self) -> &[f64] {
        &self.masked_input
    }

    /// BiLSTM output, `T x 2H`.
    pub fn hidden(&self) -> &[f64] {
        &self.hidden
    }
}

fn run_direction(
    w: LstmWeights<'_>,
    masked_input: &[f64],
    rec_mask: &[f64],
    timesteps: usize,
    dir: Direction,
) -> DirectionCache {
    let (d, h) = (w.input_dim, w.hidden);
    let mut cache = DirectionCache {
        gates: vec![0.0; timesteps * 4 * h],
        cells: vec![0.0; timesteps * h],
        tanh_cells: vec![0.0; timesteps * h],
        hidden: vec![0.0; timesteps * h],
    };
    let mut h_prev_masked = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    for step in 0..timesteps {
        let t = match dir {
            Direction::Forward => step,
            Direction::Backward => timesteps - 1 - step,
        };
        let x = &masked_input[t * d..(t + 1) * d];
        let (hs, ts) = (t * h..(t + 1) * h, t * 4 * h..(t + 1) * 4 * h);
        cell_step(
            w,
            x,
            &h_prev_masked,
            &c_prev,
            &mut cache.gates[ts],
            &mut cache.cells[hs.clone()],
            &mut cache.tanh_cells[hs.clone()],
            &mut cache.hidden[hs.clone()],
        );
        c_prev.copy_from_slice(&cache.cells[hs.clone()]);
        for ((hp, hv), m) in h_prev_masked
            .iter_mut()
            .zip(&cache.hidden[hs])
            .zip(rec_mask)
        {
            *hp = hv * m;
        }
    }
    cache
}

fn check_features(d: Dims, features: &FeatureSequence) -> Result<()> {
    if features.dim() != d.input_dim {
        return Err(Error::Shape(format!(
            "feature dim {} does not match model input dim {}",
            features.dim(),
            d.input_dim
        )));
    }
    Ok(())
}

/// BiLSTM output rows `[h_fwd_t | h_bwd_t]`, `T x 2H`.
pub fn bilstm_forward(
    params: &ModelParams,
    features: &FeatureSequence,
    masks: &DropoutMasks,
) -> Result<Vec<f64>> {
    check_features(params.dims, features)?;
    let (_, dirs) = encode(params, features, masks);
    Ok(interleave(params.dims.hidden, features.timesteps(), &dirs))
}

fn encode(
    params: &ModelParams,
    features: &FeatureSequence,
    masks: &DropoutMasks,
) -> (Vec<f64>, [DirectionCache; 2]) {
    let t_len = features.timesteps();
    let d = params.dims.input_dim;
    let mut masked = Vec::with_capacity(t_len * d);
    for t in 0..t_len {
        masked.extend(features.row(t).iter().zip(&masks.input).map(|(x, m)| x * m));
    }
    let fwd = run_direction(
        params.lstm(Direction::Forward),
        &masked,
        &masks.recurrent[0],
        t_len,
        Direction::Forward,
    );
    let bwd = run_direction(
        params.lstm(Direction::Backward),
        &masked,
        &masks.recurrent[1],
        t_len,
        Direction::Backward,
    );
    (masked, [fwd, bwd])
}

fn interleave(h: usize, t_len: usize, dirs: &[DirectionCache; 2]) -> Vec<f64> {
    let mut out = Vec::with_capacity(t_len * 2 * h);
    for t in 0..t_len {
        out.extend_from_slice(&dirs[0].hidden[t * h..(t + 1) * h]);
        out.extend_from_slice(&dirs[1].hidden[t * h..(t + 1) * h]);
    }
    out
}

/// Attention pooling over a `T x 2H` hidden sequence. Returns the raw
/// (unclipped) scores alongside the predictions.
fn attend(params: &ModelParams, kappa: f64, hidden: &[f64]) -> (Vec<f64>, Predictions) {
    let d = params.dims;
    let (c_len, width) = (d.num_classes, 2 * d.hidden);
    let t_len = hidden.len() / width;
    let (w_att, b_att) = (params.block(Block::WAtt), params.block(Block::BAtt));
    let (w_cla, b_cla) = (params.block(Block::WCla), params.block(Block::BCla));
    let mut raw = vec![0.0; t_len * c_len];
    let mut scores = vec![0.0; t_len * c_len];
    let mut q = vec![0.0; t_len * c_len];
    for t in 0..t_len {
        let h_t = &hidden[t * width..(t + 1) * width];
        let r = &mut raw[t * c_len..(t + 1) * c_len];
        gemv_acc(w_att, h_t, r);
        for ((s, r), b) in scores[t * c_len..(t + 1) * c_len]
            .iter_mut()
            .zip(r.iter())
            .zip(b_att)
        {
            *s = r + b;
        }
        let qt = &mut q[t * c_len..(t + 1) * c_len];
        qt.copy_from_slice(b_cla);
        gemv_acc(w_cla, h_t, qt);
        for v in qt.iter_mut() {
            *v = sigmoid(*v);
        }
    }
    let mut a = vec![0.0; t_len * c_len];
    let mut p = vec![0.0; c_len];
    for c in 0..c_len {
        // Softmax ignores a shared shift, so while no score is clipped the
        // bias is left out; this keeps the output exactly independent of it.
        let clipped = (0..t_len).any(|t| scores[t * c_len + c].abs() >= kappa);
        let z = |t: usize| {
            if clipped {
                scores[t * c_len + c].clamp(-kappa, kappa)
            } else {
                raw[t * c_len + c]
            }
        };
        let max = (0..t_len).map(z).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for t in 0..t_len {
            let e = libm::exp(z(t) - max);
            a[t * c_len + c] = e;
            sum += e;
        }
        let mut pc = 0.0;
        for t in 0..t_len {
            a[t * c_len + c] /= sum;
            pc += a[t * c_len + c] * q[t * c_len + c];
        }
        p[c] = pc;
    }
    (
        scores,
        Predictions {
            timesteps: t_len,
            clip_probs: p,
            per_step_probs: q,
            attention: a,
        },
    )
}

/// Attention pooling over a `T x 2H` BiLSTM output.
pub fn attention_forward(
    params: &ModelParams,
    attention_clip: f64,
    hidden: &[f64],
) -> Result<Predictions> {
    let width = 2 * params.dims.hidden;
    if hidden.is_empty() || !hidden.len().is_multiple_of(width) {
        return Err(Error::Shape(format!(
            "hidden sequence of {} values is not a non-empty multiple of {width}",
            hidden.len()
        )));
    }
    Ok(attend(params, attention_clip, hidden).1)
}

/// Full forward pass for one sequence with the given dropout masks.
pub fn forward(
    params: &ModelParams,
    config: &ModelConfig,
    features: &FeatureSequence,
    masks: &DropoutMasks,
) -> Result<ForwardCache> {
    let d = params.dims;
    if config.dims() != d {
        return Err(Error::Shape(
            "model config dims differ from parameter dims".into(),
        ));
    }
    check_features(d, features)?;
    if masks.input.len() != d.input_dim || masks.recurrent.iter().any(|m| m.len() != d.hidden) {
        return Err(Error::Shape(
            "dropout mask sizes do not match model dims".into(),
        ));
    }
    let t_len = features.timesteps();
    let (masked_input, dirs) = encode(params, features, masks);
    let hidden = interleave(d.hidden, t_len, &dirs);
    let (scores, predictions) = attend(params, config.attention_clip, &hidden);
    Ok(ForwardCache {
        dims: d,
        attention_clip: config.attention_clip,
        timesteps: t_len,
        masks: masks.clone(),
        masked_input,
        dirs,
        hidden,
        scores,
        predictions,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Forward pass over a batch. Eval mode uses identity masks and ignores
/// `rng`; train mode draws one set of masks per sequence, in batch order.
pub fn model_forward<R: rand::Rng + ?Sized>(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &[&FeatureSequence],
    mode: Mode,
    rng: &mut R,
) -> Result<Vec<ForwardCache>> {
    let identity = DropoutMasks::identity(params.dims);
    batch
        .iter()
        .map(|f| match mode {
            Mode::Eval => forward(params, config, f, &identity),
            Mode::Train => {
                let masks = DropoutMasks::sample(config, rng);
                forward(params, config, f, &masks)
            }
        })
        .collect()
}

/// Eval-mode clip probabilities for one sequence.
pub fn predict(
    params: &ModelParams,
    config: &ModelConfig,
    features: &FeatureSequence,
) -> Result<Vec<f64>> {
    let masks = DropoutMasks::identity(params.dims);
    Ok(forward(params, config, features, &masks)?
        .predictions
        .clip_probs)
}

/// Reverse-mode gradient of `sum_c grad_clip_probs[c] * p_c` with respect
/// to every parameter. Dropout masks are constants.
pub fn model_backward(
    params: &ModelParams,
    cache: &ForwardCache,
    grad_clip_probs: &[f64],
) -> Result<ModelParams> {
    let d = params.dims;
    if cache.dims != d {
        return Err(Error::Shape(
            "forward cache was produced with different dims".into(),
        ));
    }
    if grad_clip_probs.len() != d.num_classes {
        return Err(Error::Shape(format!(
            "{} upstream gradients for {} classes",
            grad_clip_probs.len(),
            d.num_classes
        )));
    }
    let mut grads = ModelParams::zeros(d);
    let (h, c_len, t_len) = (d.hidden, d.num_classes, cache.timesteps);
    let width = 2 * h;
    let kappa = cache.attention_clip;
    let pred = &cache.predictions;

    // Attention and classification heads.
    let mut d_hidden = vec![0.0; t_len * width];
    let mut d_score = vec![0.0; c_len];
    let mut d_logit = vec![0.0; c_len];
    for t in 0..t_len {
        for c in 0..c_len {
            let i = t * c_len + c;
            let (a, q, dp) = (
                pred.attention[i],
                pred.per_step_probs[i],
                grad_clip_probs[c],
            );
            let s = cache.scores[i];
            d_score[c] = if s > -kappa && s < kappa {
                a * dp * (q - pred.clip_probs[c])
            } else {
                0.0
            };
            d_logit[c] = dp * a * q * (1.0 - q);
        }
        let h_t = &cache.hidden[t * width..(t + 1) * width];
        outer_acc(grads.block_mut(Block::WAtt), &d_score, h_t);
        outer_acc(grads.block_mut(Block::WCla), &d_logit, h_t);
        for (g, v) in grads.block_mut(Block::BAtt).iter_mut().zip(&d_score) {
            *g += v;
        }
        for (g, v) in grads.block_mut(Block::BCla).iter_mut().zip(&d_logit) {
            *g += v;
        }
        let dh = &mut d_hidden[t * width..(t + 1) * width];
        gemv_t_acc(params.block(Block::WAtt), &d_score, dh);
        gemv_t_acc(params.block(Block::WCla), &d_logit, dh);
    }

    for dir in [Direction::Forward, Direction::Backward] {
        backward_direction(params, cache, dir, &d_hidden, &mut grads);
    }
    Ok(grads)
}

fn backward_direction(
    params: &ModelParams,
    cache: &ForwardCache,
    dir: Direction,
    d_hidden: &[f64],
    grads: &mut ModelParams,
) {
    let d = params.dims;
    let (dd, h, t_len) = (d.input_dim, d.hidden, cache.timesteps);
    let width = 2 * h;
    let dc_cache = &cache.dirs[dir.index()];
    let rec_mask = &cache.masks.recurrent[dir.index()];
    let offset = dir.index() * h;
    let u = params.lstm(dir).u;
    let (wb, ub, bb) = match dir {
        Direction::Forward => (Block::WFwd, Block::UFwd, Block::BFwd),
        Direction::Backward => (Block::WBwd, Block::UBwd, Block::BBwd),
    };
    let mut dw = vec![0.0; 4 * h * dd];
    let mut du = vec![0.0; 4 * h * h];
    let mut db = vec![0.0; 4 * h];

    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut da = vec![0.0; 4 * h];
    let mut dh_prev_masked = vec![0.0; h];
    let mut h_prev_masked = vec![0.0; h];
    // Reverse of processing order.
    for step in (0..t_len).rev() {
        let (t, prev) = match dir {
            Direction::Forward => (step, step.checked_sub(1)),
            Direction::Backward => {
                let t = t_len - 1 - step;
                (t, if t + 1 < t_len { Some(t + 1) } else { None })
            }
        };
        let gates = &dc_cache.gates[t * 4 * h..(t + 1) * 4 * h];
        let tanh_c = &dc_cache.tanh_cells[t * h..(t + 1) * h];
        for k in 0..h {
            let (i, f, g, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
            let dh = d_hidden[t * width + offset + k] + dh_next[k];
            let dc = dc_next[k] + dh * o * (1.0 - tanh_c[k] * tanh_c[k]);
            let c_prev = prev.map_or(0.0, |p| dc_cache.cells[p * h + k]);
            da[k] = dc * g * i * (1.0 - i);
            da[h + k] = dc * c_prev * f * (1.0 - f);
            da[2 * h + k] = dc * i * (1.0 - g * g);
            da[3 * h + k] = dh * tanh_c[k] * o * (1.0 - o);
            dc_next[k] = dc * f;
        }
        match prev {
            Some(p) => {
                for k in 0..h {
                    h_prev_masked[k] = dc_cache.hidden[p * h + k] * rec_mask[k];
                }
            }
            None => h_prev_masked.fill(0.0),
        }
        outer_acc(&mut dw, &da, &cache.masked_input[t * dd..(t + 1) * dd]);
        outer_acc(&mut du, &da, &h_prev_masked);
        for (g, v) in db.iter_mut().zip(&da) {
            *g += v;
        }
        dh_prev_masked.fill(0.0);
        gemv_t_acc(u, &da, &mut dh_prev_masked);
        for k in 0..h {
            dh_next[k] = dh_prev_masked[k] * rec_mask[k];
        }
    }
    grads.block_mut(wb).copy_from_slice(&dw);
    grads.block_mut(ub).copy_from_slice(&du);
    grads.block_mut(bb).copy_from_slice(&db);
}
