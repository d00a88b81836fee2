//! Minimal neural substrate for the goal generator.
//!
//! Everything is 64-bit floating point so finite-difference checks can be
//! tight. There is no autodiff graph: each operation comes as a forward
//! function plus an explicit backward that returns gradients as values; the
//! caller accumulates them into a [`ParamStore`]. The only architecture
//! served is the fixed conditional VAE, so the op set is deliberately small:
//! dense layers, three activations, a vanilla tanh recurrent cell, the two
//! losses, Adam, and a gradient checker.

use std::collections::HashMap;
use std::fmt;

use rand::Rng;
use thiserror::Error;

/// Smallest sigmoid output; outputs are clamped to `[SIGMOID_MIN, 1 −
/// SIGMOID_MIN]` so downstream logs stay finite.
pub const SIGMOID_MIN: f64 = 1e-7;

/// Log-variances are clamped to this symmetric range before exponentiation.
pub const LOGVAR_CLAMP: f64 = 10.0;

/// Dense row-major tensor of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Panics if `data.len()` does not match the shape product.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(data.len(), n, "data length {} != shape product {n}", data.len());
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    /// Glorot-uniform initialization for a `[fan_in, fan_out]` matrix:
    /// entries from `Uniform(±√(6 / (fan_in + fan_out)))`.
    pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.gen::<f64>() * 2.0 * limit - limit).collect();
        Tensor { shape: vec![fan_in, fan_out], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "expected a matrix, got shape {:?}", self.shape);
        self.shape[0]
    }

    fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "expected a matrix, got shape {:?}", self.shape);
        self.shape[1]
    }

    /// Row `r` of a matrix.
    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }
}

/// Two tensors disagreed with an operation's shape contract.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{op}: expected {expected}, got {got}")]
pub struct ShapeError {
    pub op: &'static str,
    pub expected: String,
    pub got: String,
}

fn shape_err(op: &'static str, expected: impl fmt::Debug, got: impl fmt::Debug) -> ShapeError {
    ShapeError { op, expected: format!("{expected:?}"), got: format!("{got:?}") }
}

/// Named parameters with mirrored gradient accumulators. Iteration follows
/// insertion order, so training is deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    params: HashMap<String, Tensor>,
    grads: HashMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter; its gradient starts at zero. Panics on a
    /// duplicate name.
    pub fn insert(&mut self, name: &str, value: Tensor) {
        assert!(!self.params.contains_key(name), "duplicate parameter {name:?}");
        self.grads.insert(name.to_string(), Tensor::zeros(value.shape()));
        self.params.insert(name.to_string(), value);
        self.names.push(name.to_string());
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.params.get(name).unwrap_or_else(|| panic!("unknown parameter {name:?}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.params.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name:?}"))
    }

    pub fn grad(&self, name: &str) -> &Tensor {
        self.grads.get(name).unwrap_or_else(|| panic!("unknown parameter {name:?}"))
    }

    /// Adds `delta` into the named gradient accumulator.
    pub fn add_grad(&mut self, name: &str, delta: &Tensor) {
        let g = self.grads.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name:?}"));
        assert_eq!(g.shape(), delta.shape(), "gradient shape mismatch for {name:?}");
        for (a, d) in g.data.iter_mut().zip(&delta.data) {
            *a += d;
        }
    }

    /// Adds sparse row updates (row index, row values) into a matrix
    /// gradient; used for embedding tables.
    pub fn add_grad_rows(&mut self, name: &str, rows: &[(usize, Vec<f64>)]) {
        let g = self.grads.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name:?}"));
        for (r, values) in rows {
            let row = g.row_mut(*r);
            assert_eq!(row.len(), values.len(), "row width mismatch for {name:?}");
            for (a, d) in row.iter_mut().zip(values) {
                *a += d;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads.values_mut() {
            g.data.fill(0.0);
        }
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.names.iter().map(|n| self.params[n].len()).sum()
    }
}

// ---------------------------------------------------------------------------
// Dense layer
// ---------------------------------------------------------------------------

/// `input · w + b` for `input [B, in]`, `w [in, out]`, `b [out]`.
pub fn linear(input: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, ShapeError> {
    if input.shape.len() != 2 || w.shape.len() != 2 || input.cols() != w.rows() {
        return Err(shape_err("linear", "[B, in] x [in, out]", (&input.shape, &w.shape)));
    }
    if b.shape != [w.cols()] {
        return Err(shape_err("linear", [w.cols()], &b.shape));
    }
    let (batch, out_dim) = (input.rows(), w.cols());
    let mut out = Tensor::zeros(&[batch, out_dim]);
    for r in 0..batch {
        let out_row = out.row_mut(r);
        out_row.copy_from_slice(b.data());
        for (x, w_row) in input.row(r).iter().zip(0..) {
            if *x != 0.0 {
                for (o, wv) in out_row.iter_mut().zip(w.row(w_row)) {
                    *o += x * wv;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`linear`]: returns `(d_input, d_w, d_b)` given the upstream
/// gradient `d_out [B, out]`.
pub fn linear_backward(input: &Tensor, w: &Tensor, d_out: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (batch, in_dim, out_dim) = (input.rows(), input.cols(), w.cols());
    assert_eq!(d_out.shape(), [batch, out_dim], "linear_backward: upstream shape");

    let mut d_input = Tensor::zeros(&[batch, in_dim]);
    let mut d_w = Tensor::zeros(&[in_dim, out_dim]);
    let mut d_b = Tensor::zeros(&[out_dim]);
    for r in 0..batch {
        let d_row = d_out.row(r);
        for (db, d) in d_b.data.iter_mut().zip(d_row) {
            *db += d;
        }
        let x_row = input.row(r);
        for (i, &x) in x_row.iter().enumerate() {
            let w_row = w.row(i);
            let dw_row = d_w.row_mut(i);
            let mut acc = 0.0;
            for o in 0..out_dim {
                acc += d_row[o] * w_row[o];
                dw_row[o] += x * d_row[o];
            }
            d_input.row_mut(r)[i] = acc;
        }
    }
    (d_input, d_w, d_b)
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor { shape: x.shape.clone(), data: x.data.iter().map(|v| f(*v)).collect() }
}

fn map2(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!(a.shape, b.shape, "elementwise shape mismatch");
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect(),
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    map(x, |v| v.max(0.0))
}

/// `d_out ⊙ 1[x > 0]`, taking the pre-activation input.
pub fn relu_backward(x: &Tensor, d_out: &Tensor) -> Tensor {
    map2(x, d_out, |v, d| if v > 0.0 { d } else { 0.0 })
}

pub fn tanh(x: &Tensor) -> Tensor {
    map(x, f64::tanh)
}

/// `d_out ⊙ (1 − tanh(x)²)`, taking the pre-activation input.
pub fn tanh_backward(x: &Tensor, d_out: &Tensor) -> Tensor {
    map2(x, d_out, |v, d| {
        let t = v.tanh();
        d * (1.0 - t * t)
    })
}

/// Logistic function with outputs clamped to `[SIGMOID_MIN, 1 −
/// SIGMOID_MIN]`.
pub fn sigmoid(x: &Tensor) -> Tensor {
    map(x, |v| (1.0 / (1.0 + (-v).exp())).clamp(SIGMOID_MIN, 1.0 - SIGMOID_MIN))
}

/// `d_out ⊙ σ(x)(1 − σ(x))` using the clamped output.
pub fn sigmoid_backward(x: &Tensor, d_out: &Tensor) -> Tensor {
    map2(x, d_out, |v, d| {
        let s = (1.0 / (1.0 + (-v).exp())).clamp(SIGMOID_MIN, 1.0 - SIGMOID_MIN);
        d * s * (1.0 - s)
    })
}

// ---------------------------------------------------------------------------
// Recurrent sentence encoder
// ---------------------------------------------------------------------------

/// The token list was empty; a sentence embedding needs at least one word.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot encode an empty token sequence")]
pub struct EmptySequenceError;

/// Per-step hidden states recorded by [`rnn_forward`] for backpropagation
/// through time. `hidden[t]` is the state after consuming token `t`.
#[derive(Debug, Clone)]
pub struct RnnTrace {
    hidden: Vec<Vec<f64>>,
}

/// Gradients of the recurrent encoder. Embedding gradients come back as
/// sparse `(vocabulary row, d_row)` pairs, one per consumed token.
#[derive(Debug, Clone)]
pub struct RnnGrads {
    pub d_embed_rows: Vec<(usize, Vec<f64>)>,
    pub d_wx: Tensor,
    pub d_wh: Tensor,
    pub d_b: Tensor,
}

/// Runs the vanilla recurrent cell `h_t = tanh(e_t · wx + h_{t−1} · wh + b)`
/// with `h_0 = 0` over embedded tokens and returns the final hidden state
/// plus the trace needed by [`rnn_backward`]. `embed` is `[V, E]`, `wx`
/// `[E, H]`, `wh` `[H, H]`, `b` `[H]`.
pub fn rnn_forward(
    tokens: &[usize],
    embed: &Tensor,
    wx: &Tensor,
    wh: &Tensor,
    b: &Tensor,
) -> Result<(Tensor, RnnTrace), EmptySequenceError> {
    if tokens.is_empty() {
        return Err(EmptySequenceError);
    }
    let (embed_dim, hidden_dim) = (wx.rows(), wx.cols());
    assert_eq!(embed.cols(), embed_dim, "embedding width must match wx rows");
    assert_eq!(wh.shape(), [hidden_dim, hidden_dim], "wh must be square [H, H]");
    assert_eq!(b.shape(), [hidden_dim], "bias must be [H]");

    let mut h = vec![0.0; hidden_dim];
    let mut trace = RnnTrace { hidden: Vec::with_capacity(tokens.len()) };
    for &tok in tokens {
        assert!(tok < embed.rows(), "token index {tok} out of vocabulary");
        let e = embed.row(tok);
        let mut a = b.data().to_vec();
        for (x, wx_row) in e.iter().zip(0..) {
            for (acc, wv) in a.iter_mut().zip(wx.row(wx_row)) {
                *acc += x * wv;
            }
        }
        for (x, wh_row) in h.iter().zip(0..) {
            for (acc, wv) in a.iter_mut().zip(wh.row(wh_row)) {
                *acc += x * wv;
            }
        }
        h = a.iter().map(|v| v.tanh()).collect();
        trace.hidden.push(h.clone());
    }
    Ok((Tensor::from_vec(&[hidden_dim], h), trace))
}

/// Final hidden state only; the common inference entry point.
pub fn rnn_encode(
    tokens: &[usize],
    embed: &Tensor,
    wx: &Tensor,
    wh: &Tensor,
    b: &Tensor,
) -> Result<Tensor, EmptySequenceError> {
    rnn_forward(tokens, embed, wx, wh, b).map(|(h, _)| h)
}

/// Exact backpropagation through time for [`rnn_forward`], given the
/// gradient `d_h` at the final hidden state.
pub fn rnn_backward(
    tokens: &[usize],
    embed: &Tensor,
    wx: &Tensor,
    wh: &Tensor,
    trace: &RnnTrace,
    d_h: &Tensor,
) -> RnnGrads {
    let (embed_dim, hidden_dim) = (wx.rows(), wx.cols());
    assert_eq!(trace.hidden.len(), tokens.len(), "trace does not match token count");
    assert_eq!(d_h.shape(), [hidden_dim], "upstream gradient must be [H]");

    let mut d_wx = Tensor::zeros(&[embed_dim, hidden_dim]);
    let mut d_wh = Tensor::zeros(&[hidden_dim, hidden_dim]);
    let mut d_b = Tensor::zeros(&[hidden_dim]);
    let mut d_embed_rows = Vec::with_capacity(tokens.len());

    let mut dh = d_h.data().to_vec();
    for t in (0..tokens.len()).rev() {
        let h_t = &trace.hidden[t];
        // d pre-activation: dh ⊙ (1 − h²), since h = tanh(a).
        let da: Vec<f64> = dh.iter().zip(h_t).map(|(d, h)| d * (1.0 - h * h)).collect();

        for (db, d) in d_b.data.iter_mut().zip(&da) {
            *db += d;
        }
        let e = embed.row(tokens[t]);
        for (i, x) in e.iter().enumerate() {
            for (acc, d) in d_wx.row_mut(i).iter_mut().zip(&da) {
                *acc += x * d;
            }
        }
        let h_prev: &[f64] = if t == 0 { &vec![0.0; hidden_dim] } else { &trace.hidden[t - 1] };
        for (i, x) in h_prev.iter().enumerate() {
            for (acc, d) in d_wh.row_mut(i).iter_mut().zip(&da) {
                *acc += x * d;
            }
        }
        let d_e: Vec<f64> =
            (0..embed_dim).map(|i| wx.row(i).iter().zip(&da).map(|(w, d)| w * d).sum()).collect();
        d_embed_rows.push((tokens[t], d_e));
        dh = (0..hidden_dim)
            .map(|i| wh.row(i).iter().zip(&da).map(|(w, d)| w * d).sum())
            .collect();
    }
    RnnGrads { d_embed_rows, d_wx, d_wh, d_b }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Binary cross-entropy between probabilities and 0/1 targets, summed over
/// the feature axis and averaged over the batch: `probs`, `targets` are
/// `[B, F]`. The per-sample feature sum keeps the reconstruction term on the
/// same footing as the latent term, which sums over latent dimensions.
pub fn bce_loss(probs: &Tensor, targets: &Tensor) -> Result<f64, ShapeError> {
    if probs.shape != targets.shape || probs.shape.len() != 2 {
        return Err(shape_err("bce_loss", &probs.shape, &targets.shape));
    }
    debug_assert!(probs.data.iter().all(|p| *p > 0.0 && *p < 1.0), "probs must be pre-clamped");
    debug_assert!(targets.data.iter().all(|t| *t == 0.0 || *t == 1.0), "targets must be 0/1");
    let batch = probs.rows() as f64;
    let total: f64 = probs
        .data
        .iter()
        .zip(&targets.data)
        .map(|(p, t)| -(t * p.ln() + (1.0 - t) * (1.0 - p).ln()))
        .sum();
    Ok(total / batch)
}

/// `d bce_loss / d probs`.
pub fn bce_backward(probs: &Tensor, targets: &Tensor) -> Tensor {
    let batch = probs.rows() as f64;
    map2(probs, targets, |p, t| (p - t) / (p * (1.0 - p)) / batch)
}

/// KL divergence of `N(mu, exp(logvar))` from the standard normal:
/// `−½ Σ_dims (1 + logvar − mu² − exp(logvar))`, averaged over the batch.
/// Both inputs are `[B, Z]`.
pub fn kl_loss(mu: &Tensor, logvar: &Tensor) -> Result<f64, ShapeError> {
    if mu.shape != logvar.shape || mu.shape.len() != 2 {
        return Err(shape_err("kl_loss", &mu.shape, &logvar.shape));
    }
    let batch = mu.rows() as f64;
    let total: f64 = mu
        .data
        .iter()
        .zip(&logvar.data)
        .map(|(m, l)| -0.5 * (1.0 + l - m * m - l.exp()))
        .sum();
    Ok(total / batch)
}

/// `(d kl / d mu, d kl / d logvar)`.
pub fn kl_backward(mu: &Tensor, logvar: &Tensor) -> (Tensor, Tensor) {
    let batch = mu.rows() as f64;
    let d_mu = map(mu, |m| m / batch);
    let d_logvar = map(logvar, |l| (l.exp() - 1.0) / (2.0 * batch));
    (d_mu, d_logvar)
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Adam state: first/second moments per parameter plus the shared step
/// counter and hyperparameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: HashMap<String, Tensor>,
    v: HashMap<String, Tensor>,
}

/// A parameter had no moment tensors in the optimizer state.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("optimizer state missing for parameter {0:?}")]
pub struct UninitializedStateError(pub String);

impl AdamState {
    /// Zero-initialized moments for every parameter in `params`; β1 = 0.9,
    /// β2 = 0.999, ε = 1e−8.
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let mut m = HashMap::new();
        let mut v = HashMap::new();
        for name in params.names() {
            m.insert(name.clone(), Tensor::zeros(params.get(name).shape()));
            v.insert(name.clone(), Tensor::zeros(params.get(name).shape()));
        }
        AdamState { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update over every parameter, reading the accumulated gradients.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState) -> Result<(), UninitializedStateError> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for name in params.names.clone() {
        let m = state
            .m
            .get_mut(&name)
            .ok_or_else(|| UninitializedStateError(name.clone()))?;
        let v = state
            .v
            .get_mut(&name)
            .ok_or_else(|| UninitializedStateError(name.clone()))?;
        let g = &params.grads[&name];
        for i in 0..g.data.len() {
            let grad = g.data[i];
            m.data[i] = state.beta1 * m.data[i] + (1.0 - state.beta1) * grad;
            v.data[i] = state.beta2 * v.data[i] + (1.0 - state.beta2) * grad * grad;
        }
        let p = params.params.get_mut(&name).expect("params and grads share names");
        for i in 0..p.data.len() {
            let m_hat = m.data[i] / bc1;
            let v_hat = v.data[i] / bc2;
            p.data[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Base central-difference step for [`gradient_check`].
pub const FD_STEP: f64 = 1e-5;

/// Fallback steps tried when a coordinate disagrees at [`FD_STEP`]. A ReLU
/// or clamp kink lying inside the base window makes the symmetric
/// difference return the average of the two one-sided slopes — an estimate
/// that is stable in `h` and wrong. Shrinking the window below the kink
/// distance recovers the local slope, so a mismatch that heals on retry is
/// a nondifferentiability artifact, while a genuine gradient bug disagrees
/// at every step.
const FD_RETRY_STEPS: [f64; 2] = [1e-7, 1e-8];

/// Outcome of a finite-difference sweep.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: Option<(String, usize)>,
    pub n_checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: max rel err {:.3e} over {} coordinates (tolerance {:.1e})",
            if self.passed { "pass" } else { "FAIL" },
            self.max_rel_err,
            self.n_checked,
            self.tolerance,
        )?;
        if let Some((name, idx)) = &self.worst_param {
            write!(f, ", worst at {name:?}[{idx}]")?;
        }
        Ok(())
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Compares every coordinate of every parameter's accumulated gradient
/// against central finite differences of `loss_fn` (step `FD_STEP`, with
/// smaller retry steps for coordinates the base window misjudges — see
/// `FD_RETRY_STEPS`). The caller must already have run its backward pass so
/// `params` holds the analytic gradients; `loss_fn` must be deterministic
/// and must match the loss those gradients were taken from.
pub fn gradient_check<F>(params: &mut ParamStore, loss_fn: F, tolerance: f64) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> f64,
{
    gradient_check_sampled(params, loss_fn, tolerance, usize::MAX)
}

/// [`gradient_check`] limited to at most `max_per_tensor` evenly-spaced
/// coordinates per parameter tensor (every tensor is still visited). The
/// full sweep is quadratic in model size, so large models are spot-checked
/// on a deterministic stride while small models can afford `usize::MAX`.
pub fn gradient_check_sampled<F>(
    params: &mut ParamStore,
    mut loss_fn: F,
    tolerance: f64,
    max_per_tensor: usize,
) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> f64,
{
    assert!(max_per_tensor > 0, "must check at least one coordinate per tensor");
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: None,
        n_checked: 0,
        tolerance,
        passed: true,
    };
    for name in params.names.clone() {
        let n = params.get(&name).len();
        let k = n.min(max_per_tensor);
        for j in 0..k {
            let idx = j * n / k;
            let analytic = params.grad(&name).data()[idx];
            let original = params.get(&name).data()[idx];
            let mut central = |h: f64| {
                params.get_mut(&name).data_mut()[idx] = original + h;
                let up = loss_fn(params);
                params.get_mut(&name).data_mut()[idx] = original - h;
                let down = loss_fn(params);
                params.get_mut(&name).data_mut()[idx] = original;
                (up - down) / (2.0 * h)
            };

            let mut err = rel_err(analytic, central(FD_STEP));
            if err > tolerance {
                for &h in &FD_RETRY_STEPS {
                    err = err.min(rel_err(analytic, central(h)));
                    if err <= tolerance {
                        break;
                    }
                }
            }
            report.n_checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_param = Some((name.clone(), idx));
            }
        }
    }
    report.passed = report.max_rel_err <= tolerance;
    report
}
