//! Reverse-mode differentiation over recorded tensor ops.
//!
//! A [`Tape`] is built fresh for each training step: push parameter and input
//! leaves, apply ops (each records its output plus whatever the backward rule
//! needs), then call [`Tape::backward`] on a scalar loss node. Nodes are
//! appended in execution order, so walking the list in reverse is a valid
//! reverse topological order.

use super::{
    add_bias, check_finite_slice, dropout_detailed, layer_norm_detailed, matmul,
    softmax_cross_entropy_detailed, softmax_entropy_detailed, Mode, Tensor,
};
use crate::error::{Error, Result};
use crate::rng::Stream;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

struct Node {
    value: Tensor,
    op: Op,
}

enum Op {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
    },
    AddBias {
        x: usize,
        bias: usize,
    },
    Relu {
        x: usize,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        inv_std: Vec<f64>,
        normalized: Vec<f64>,
    },
    Dropout {
        x: usize,
        multipliers: Vec<f64>,
    },
    SoftmaxCrossEntropy {
        logits: usize,
        targets: Vec<Option<usize>>,
        softmax: Vec<f64>,
        count: usize,
    },
    SoftmaxEntropy {
        logits: usize,
        rows: Vec<bool>,
        softmax: Vec<f64>,
        row_entropy: Vec<f64>,
        count: usize,
    },
    Sum {
        x: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Scale {
        x: usize,
        factor: f64,
    },
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. the given node. Nodes not on any path to
    /// the loss have an exactly-zero gradient.
    pub fn get(&self, id: NodeId, shape: &[usize]) -> Tensor {
        match &self.grads[id.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(shape.to_vec()),
        }
    }

    /// Gradient if the node was touched by backpropagation.
    pub fn try_get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Registers an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = matmul(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::MatMul { a: a.0, b: b.0 }))
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let value = add_bias(self.value(x), self.value(bias))?;
        Ok(self.push(value, Op::AddBias { x: x.0, bias: bias.0 }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = super::relu(self.value(x));
        self.push(value, Op::Relu { x: x.0 })
    }

    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let (value, inv_std, normalized) =
            layer_norm_detailed(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                inv_std,
                normalized,
            },
        ))
    }

    /// Inverted dropout. Eval mode records nothing and returns `x` itself.
    pub fn dropout(&mut self, x: NodeId, p: f64, mode: Mode, rng: &mut Stream) -> Result<NodeId> {
        if mode == Mode::Eval {
            // Still validate the rate so eval and train reject the same configs.
            if !(0.0..1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!(
                    "dropout rate must be in [0,1), got {p}"
                )));
            }
            return Ok(x);
        }
        let (value, multipliers) = dropout_detailed(self.value(x), p, mode, rng)?;
        if multipliers.is_empty() {
            return Ok(x); // p == 0
        }
        Ok(self.push(
            value,
            Op::Dropout {
                x: x.0,
                multipliers,
            },
        ))
    }

    /// Mean `-log softmax(logits)[target]` over rows with a `Some` target.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[Option<usize>],
    ) -> Result<NodeId> {
        let (loss, softmax, count) =
            softmax_cross_entropy_detailed(self.value(logits), targets)?;
        Ok(self.push(
            Tensor::scalar(loss)?,
            Op::SoftmaxCrossEntropy {
                logits: logits.0,
                targets: targets.to_vec(),
                softmax,
                count,
            },
        ))
    }

    /// Mean Shannon entropy of `softmax(logits)` over the selected rows.
    pub fn softmax_entropy(&mut self, logits: NodeId, rows: &[bool]) -> Result<NodeId> {
        let (value, softmax, row_entropy, count) =
            softmax_entropy_detailed(self.value(logits), rows)?;
        Ok(self.push(
            Tensor::scalar(value)?,
            Op::SoftmaxEntropy {
                logits: logits.0,
                rows: rows.to_vec(),
                softmax,
                row_entropy,
                count,
            },
        ))
    }

    /// Sum of all elements.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let total: f64 = self.value(x).values().iter().sum();
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("sum is {total}")));
        }
        Ok(self.push(Tensor::scalar(total)?, Op::Sum { x: x.0 }))
    }

    /// Elementwise sum of two same-shape nodes.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch(format!(
                "add of shapes {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let values: Vec<f64> = ta
            .values()
            .iter()
            .zip(tb.values())
            .map(|(&x, &y)| x + y)
            .collect();
        check_finite_slice(&values, "add")?;
        let value = Tensor::new(ta.shape().to_vec(), values)?;
        Ok(self.push(value, Op::Add { a: a.0, b: b.0 }))
    }

    /// Multiplication by a finite constant.
    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        if !factor.is_finite() {
            return Err(Error::NonFinite(format!("scale factor {factor}")));
        }
        let values: Vec<f64> = self.value(x).values().iter().map(|&v| v * factor).collect();
        check_finite_slice(&values, "scale")?;
        let value = Tensor::new(self.value(x).shape().to_vec(), values)?;
        Ok(self.push(value, Op::Scale { x: x.0, factor }))
    }

    /// Reverse-mode sweep from a scalar loss node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::ShapeMismatch(format!(
                "backward from non-scalar node of shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let upstream = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(idx, &upstream, &mut grads);
            grads[idx] = Some(upstream);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|values| {
                    Tensor::new(self.nodes[i].value.shape().to_vec(), values)
                        .expect("gradient shape matches node shape")
                })
            })
            .collect::<Vec<_>>();
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, upstream: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let ta = &self.nodes[*a].value;
                let tb = &self.nodes[*b].value;
                let (m, k) = ta.dims2().expect("recorded op shapes are valid");
                let (_, n) = tb.dims2().expect("recorded op shapes are valid");
                let av = ta.values();
                let bv = tb.values();
                {
                    let da = ensure(grads, *a, m * k);
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += upstream[i * n + j] * bv[p * n + j];
                            }
                            da[i * k + p] += acc;
                        }
                    }
                }
                let db = ensure(grads, *b, k * n);
                for p in 0..k {
                    for i in 0..m {
                        let aip = av[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[p * n + j] += aip * upstream[i * n + j];
                        }
                    }
                }
            }
            Op::AddBias { x, bias } => {
                let cols = self.nodes[*bias].value.len();
                let rows = upstream.len() / cols;
                {
                    let dx = ensure(grads, *x, upstream.len());
                    for (g, &u) in dx.iter_mut().zip(upstream) {
                        *g += u;
                    }
                }
                let dbias = ensure(grads, *bias, cols);
                for r in 0..rows {
                    for c in 0..cols {
                        dbias[c] += upstream[r * cols + c];
                    }
                }
            }
            Op::Relu { x } => {
                let xv = self.nodes[*x].value.values();
                let dx = ensure(grads, *x, upstream.len());
                for i in 0..upstream.len() {
                    if xv[i] > 0.0 {
                        dx[i] += upstream[i];
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                inv_std,
                normalized,
            } => {
                let gv = self.nodes[*gamma].value.values();
                let cols = gv.len();
                let rows = upstream.len() / cols;
                let d = cols as f64;
                {
                    let dgamma = ensure(grads, *gamma, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            dgamma[c] += upstream[r * cols + c] * normalized[r * cols + c];
                        }
                    }
                }
                {
                    let dbeta = ensure(grads, *beta, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            dbeta[c] += upstream[r * cols + c];
                        }
                    }
                }
                let dx = ensure(grads, *x, upstream.len());
                for r in 0..rows {
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    for c in 0..cols {
                        let dxhat = upstream[r * cols + c] * gv[c];
                        mean_dxhat += dxhat;
                        mean_dxhat_xhat += dxhat * normalized[r * cols + c];
                    }
                    mean_dxhat /= d;
                    mean_dxhat_xhat /= d;
                    for c in 0..cols {
                        let dxhat = upstream[r * cols + c] * gv[c];
                        dx[r * cols + c] += inv_std[r]
                            * (dxhat - mean_dxhat - normalized[r * cols + c] * mean_dxhat_xhat);
                    }
                }
            }
            Op::Dropout { x, multipliers } => {
                let dx = ensure(grads, *x, upstream.len());
                for i in 0..upstream.len() {
                    dx[i] += upstream[i] * multipliers[i];
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                softmax,
                count,
            } => {
                let g = upstream[0];
                let cols = softmax.len() / targets.len();
                let scale = g / *count as f64;
                let dlogits = ensure(grads, *logits, softmax.len());
                for (r, t) in targets.iter().enumerate() {
                    if let Some(t) = t {
                        for c in 0..cols {
                            let indicator = if c == *t { 1.0 } else { 0.0 };
                            dlogits[r * cols + c] += scale * (softmax[r * cols + c] - indicator);
                        }
                    }
                }
            }
            Op::SoftmaxEntropy {
                logits,
                rows,
                softmax,
                row_entropy,
                count,
            } => {
                let g = upstream[0];
                let cols = softmax.len() / rows.len();
                let scale = g / *count as f64;
                let dlogits = ensure(grads, *logits, softmax.len());
                for (r, &selected) in rows.iter().enumerate() {
                    if !selected {
                        continue;
                    }
                    for c in 0..cols {
                        let p = softmax[r * cols + c];
                        dlogits[r * cols + c] -= scale * p * (p.ln() + row_entropy[r]);
                    }
                }
            }
            Op::Sum { x } => {
                let g = upstream[0];
                let len = self.nodes[*x].value.len();
                let dx = ensure(grads, *x, len);
                for v in dx.iter_mut() {
                    *v += g;
                }
            }
            Op::Add { a, b } => {
                {
                    let da = ensure(grads, *a, upstream.len());
                    for (g, &u) in da.iter_mut().zip(upstream) {
                        *g += u;
                    }
                }
                let db = ensure(grads, *b, upstream.len());
                for (g, &u) in db.iter_mut().zip(upstream) {
                    *g += u;
                }
            }
            Op::Scale { x, factor } => {
                let dx = ensure(grads, *x, upstream.len());
                for (g, &u) in dx.iter_mut().zip(upstream) {
                    *g += factor * u;
                }
            }
        }
    }
}

fn ensure<'a>(grads: &'a mut [Option<Vec<f64>>], idx: usize, len: usize) -> &'a mut Vec<f64> {
    grads[idx].get_or_insert_with(|| vec![0.0; len])
}
