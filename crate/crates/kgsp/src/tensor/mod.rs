//! Dense 64-bit tensors and the forward numerics shared by the recorded
//! (training) and pure (inference) execution paths.
//!
//! The op set is deliberately small: exactly what a stack of
//! linear / layer-norm / relu / dropout layers with a softmax cross-entropy
//! loss needs. Every op validates shapes and rejects non-finite outputs;
//! NaN or Inf anywhere is a contract violation, not a value.

mod adam;
mod tape;

pub use adam::{adam_step, AdamParams, AdamState};
pub use tape::{Gradients, NodeId, Tape};

use crate::error::{Error, Result};
use crate::rng::Stream;
use rand::Rng;

/// Whether stochastic layers (dropout) are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Dense row-major tensor of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking the element count and that every value is finite.
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} holds {} elements, got {}",
                shape,
                expected,
                values.len()
            )));
        }
        let t = Tensor { shape, values };
        t.check_finite("new tensor")?;
        Ok(t)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Tensor::new(vec![1], vec![v])
    }

    /// 2-d constructor: `rows * cols` values in row-major order.
    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn vector(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Tensor::new(vec![n], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.values[0])
        } else {
            Err(Error::ShapeMismatch(format!(
                "expected scalar, got shape {:?}",
                self.shape
            )))
        }
    }

    /// Interprets the tensor as 2-d, treating a rank-1 tensor as a single row.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.len() {
            1 => Ok((1, self.shape[0])),
            2 => Ok((self.shape[0], self.shape[1])),
            _ => Err(Error::ShapeMismatch(format!(
                "expected rank <= 2, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Row `i` of a 2-d tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let (_, cols) = self.dims2().expect("row() on tensor of rank > 2");
        &self.values[i * cols..(i + 1) * cols]
    }

    fn check_finite(&self, context: &str) -> Result<()> {
        check_finite_slice(&self.values, context)
    }
}

pub(crate) fn check_finite_slice(values: &[f64], context: &str) -> Result<()> {
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "{context} produced {} at flat index {pos}",
            values[pos]
        )));
    }
    Ok(())
}

// ── Pure forward ops ─────────────────────────────────────────────────

/// `a[m×k] · b[k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::ShapeMismatch(format!(
            "matmul inner dims disagree: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let av = a.values();
    let bv = b.values();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = av[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &bv[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bval) in orow.iter_mut().zip(brow) {
                *o += aip * bval;
            }
        }
    }
    check_finite_slice(&out, "matmul")?;
    Tensor::new(vec![m, n], out)
}

/// Adds a length-`n` bias vector to every row of `x[b×n]`.
pub fn add_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (rows, cols) = x.dims2()?;
    if bias.shape() != [cols] {
        return Err(Error::ShapeMismatch(format!(
            "bias shape {:?} does not match row width {cols}",
            bias.shape()
        )));
    }
    let mut out = x.values().to_vec();
    for r in 0..rows {
        for (o, &b) in out[r * cols..(r + 1) * cols].iter_mut().zip(bias.values()) {
            *o += b;
        }
    }
    check_finite_slice(&out, "add_bias")?;
    Tensor::new(x.shape().to_vec(), out)
}

pub fn relu(x: &Tensor) -> Tensor {
    let values = x.values().iter().map(|&v| v.max(0.0)).collect();
    Tensor {
        shape: x.shape().to_vec(),
        values,
    }
}

/// Per-row layer normalization with population variance (divisor `d`),
/// followed by an affine transform `gamma * xhat + beta`.
///
/// Also returns the per-row `1/sqrt(var+eps)` and the normalized rows, which
/// the tape caches for the backward pass.
pub fn layer_norm_detailed(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    if eps <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "layer_norm eps must be positive, got {eps}"
        )));
    }
    let (rows, cols) = x.dims2()?;
    if gamma.shape() != [cols] || beta.shape() != [cols] {
        return Err(Error::ShapeMismatch(format!(
            "layer_norm gamma/beta shapes {:?}/{:?} do not match row width {cols}",
            gamma.shape(),
            beta.shape()
        )));
    }
    let xv = x.values();
    let gv = gamma.values();
    let bv = beta.values();
    let mut out = vec![0.0; rows * cols];
    let mut inv_std = vec![0.0; rows];
    let mut normalized = vec![0.0; rows * cols];
    let d = cols as f64;
    for r in 0..rows {
        let row = &xv[r * cols..(r + 1) * cols];
        let mean = row.iter().sum::<f64>() / d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std[r] = inv;
        for c in 0..cols {
            let xhat = (row[c] - mean) * inv;
            normalized[r * cols + c] = xhat;
            out[r * cols + c] = gv[c] * xhat + bv[c];
        }
    }
    check_finite_slice(&out, "layer_norm")?;
    Ok((Tensor::new(x.shape().to_vec(), out)?, inv_std, normalized))
}

pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    layer_norm_detailed(x, gamma, beta, eps).map(|(t, _, _)| t)
}

/// Inverted dropout. Train mode zeroes each element with probability `p` and
/// scales survivors by `1/(1-p)`; eval mode is the identity.
///
/// Returns the output and the per-element multiplier applied (empty in eval
/// mode), which the backward pass reuses.
pub fn dropout_detailed(
    x: &Tensor,
    p: f64,
    mode: Mode,
    rng: &mut Stream,
) -> Result<(Tensor, Vec<f64>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate must be in [0,1), got {p}"
        )));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok((x.clone(), Vec::new()));
    }
    let keep_scale = 1.0 / (1.0 - p);
    let mut multipliers = Vec::with_capacity(x.len());
    let mut out = Vec::with_capacity(x.len());
    for &v in x.values() {
        let m = if rng.random::<f64>() < p {
            0.0
        } else {
            keep_scale
        };
        multipliers.push(m);
        out.push(v * m);
    }
    Ok((Tensor::new(x.shape().to_vec(), out)?, multipliers))
}

pub fn dropout(x: &Tensor, p: f64, mode: Mode, rng: &mut Stream) -> Result<Tensor> {
    dropout_detailed(x, p, mode, rng).map(|(t, _)| t)
}

/// Row-wise softmax with max-subtraction.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let (log_probs, _) = log_softmax_rows(logits)?;
    let values = log_probs.iter().map(|&lp| lp.exp()).collect();
    Tensor::new(logits.shape().to_vec(), values)
}

/// Row-wise log-softmax; also returns per-row max for reuse.
pub(crate) fn log_softmax_rows(logits: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let (rows, cols) = logits.dims2()?;
    if cols == 0 {
        return Err(Error::ShapeMismatch("softmax over zero classes".into()));
    }
    let lv = logits.values();
    let mut out = vec![0.0; rows * cols];
    let mut row_max = vec![0.0; rows];
    for r in 0..rows {
        let row = &lv[r * cols..(r + 1) * cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row_max[r] = max;
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        for c in 0..cols {
            out[r * cols + c] = row[c] - max - lse;
        }
    }
    check_finite_slice(&out, "log_softmax")?;
    Ok((out, row_max))
}

/// Mean of `-log softmax(logits)[target]` over rows with a target; rows whose
/// target is `None` contribute nothing. Returns the loss and the cached
/// softmax matrix for the backward pass.
pub fn softmax_cross_entropy_detailed(
    logits: &Tensor,
    targets: &[Option<usize>],
) -> Result<(f64, Vec<f64>, usize)> {
    let (rows, cols) = logits.dims2()?;
    if targets.len() != rows {
        return Err(Error::ShapeMismatch(format!(
            "{} targets for {} logit rows",
            targets.len(),
            rows
        )));
    }
    for (r, t) in targets.iter().enumerate() {
        if let Some(t) = t {
            if *t >= cols {
                return Err(Error::InvalidArgument(format!(
                    "target {t} out of range for {cols} classes (row {r})"
                )));
            }
        }
    }
    let count = targets.iter().flatten().count();
    if count == 0 {
        return Err(Error::InvalidArgument(
            "cross-entropy over a batch with no targets".into(),
        ));
    }
    let (log_probs, _) = log_softmax_rows(logits)?;
    let softmax: Vec<f64> = log_probs.iter().map(|&lp| lp.exp()).collect();
    let mut loss = 0.0;
    for (r, t) in targets.iter().enumerate() {
        if let Some(t) = t {
            loss -= log_probs[r * cols + t];
        }
    }
    loss /= count as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("cross-entropy loss is {loss}")));
    }
    Ok((loss, softmax, count))
}

/// Mean cross-entropy over a fully labeled batch.
pub fn softmax_cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<f64> {
    let opts: Vec<Option<usize>> = targets.iter().map(|&t| Some(t)).collect();
    softmax_cross_entropy_detailed(logits, &opts).map(|(l, _, _)| l)
}

/// Mean Shannon entropy of `softmax(logits)` over the selected rows.
/// Returns the value plus cached softmax and per-row entropies.
pub fn softmax_entropy_detailed(
    logits: &Tensor,
    rows_selected: &[bool],
) -> Result<(f64, Vec<f64>, Vec<f64>, usize)> {
    let (rows, cols) = logits.dims2()?;
    if rows_selected.len() != rows {
        return Err(Error::ShapeMismatch(format!(
            "{} row flags for {} logit rows",
            rows_selected.len(),
            rows
        )));
    }
    let count = rows_selected.iter().filter(|&&s| s).count();
    if count == 0 {
        return Err(Error::InvalidArgument(
            "entropy over a batch with no selected rows".into(),
        ));
    }
    let (log_probs, _) = log_softmax_rows(logits)?;
    let softmax: Vec<f64> = log_probs.iter().map(|&lp| lp.exp()).collect();
    let mut row_entropy = vec![0.0; rows];
    let mut total = 0.0;
    for r in 0..rows {
        let mut h = 0.0;
        for c in 0..cols {
            let idx = r * cols + c;
            h -= softmax[idx] * log_probs[idx];
        }
        row_entropy[r] = h;
        if rows_selected[r] {
            total += h;
        }
    }
    let mean = total / count as f64;
    if !mean.is_finite() {
        return Err(Error::NonFinite(format!("entropy term is {mean}")));
    }
    Ok((mean, softmax, row_entropy, count))
}

/// Mean Shannon entropy of each row of a matrix that is already a
/// distribution per row (used by reporting paths; the differentiable variant
/// lives on the tape).
pub fn mean_row_entropy(probs: &Tensor) -> Result<f64> {
    let (rows, cols) = probs.dims2()?;
    if rows == 0 {
        return Err(Error::InvalidArgument("entropy of an empty batch".into()));
    }
    let mut total = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            let p = probs.values()[r * cols + c];
            if p > 0.0 {
                total -= p * p.ln();
            }
        }
    }
    Ok(total / rows as f64)
}
