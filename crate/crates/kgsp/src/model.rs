//! The two independent primitive classifiers.
//!
//! Each head is a multi-layer perceptron over the shared feature vector:
//! hidden blocks of linear -> layer norm -> relu -> dropout, then a final
//! linear projecting to class logits. The default stack is
//! `input -> 768 -> 1024 -> classes` with dropout 0.5; width and depth are
//! configurable for ablations and small synthetic runs. The state and object
//! heads share the input but no parameters, so perturbing one never moves
//! the other's predictions.

use crate::data::ExampleRecord;
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::{softmax_rows, Mode, NodeId, Tape, Tensor};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const DEFAULT_HIDDEN_DIMS: [usize; 2] = [768, 1024];
pub const DEFAULT_DROPOUT: f64 = 0.5;
const LAYER_NORM_EPS: f64 = 1e-5;

const MAGIC: &[u8; 4] = b"KGSM";
const VERSION: u32 = 1;

struct LinearLayer {
    weight: Tensor, // in x out, row-major
    bias: Tensor,   // out
}

struct NormParams {
    gamma: Tensor,
    beta: Tensor,
}

/// One multi-layer classifier head.
pub struct PrimitiveHead {
    input_dim: usize,
    n_classes: usize,
    hidden_dims: Vec<usize>,
    dropout: f64,
    linears: Vec<LinearLayer>,
    norms: Vec<NormParams>,
}

impl PrimitiveHead {
    /// Kaiming-style fan-in uniform init for the linear weights, zero biases,
    /// identity layer norm.
    pub fn new(
        input_dim: usize,
        hidden_dims: &[usize],
        n_classes: usize,
        dropout: f64,
        rng: &mut Stream,
    ) -> Result<Self> {
        if input_dim == 0 || n_classes == 0 || hidden_dims.contains(&0) {
            return Err(Error::InvalidArgument(
                "head dimensions must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate must be in [0,1), got {dropout}"
            )));
        }
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden_dims);
        dims.push(n_classes);

        let mut linears = Vec::new();
        let mut norms = Vec::new();
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let weight: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random::<f64>() * 2.0 * bound - bound)
                .collect();
            linears.push(LinearLayer {
                weight: Tensor::matrix(fan_in, fan_out, weight)?,
                bias: Tensor::zeros(vec![fan_out]),
            });
        }
        for &h in hidden_dims {
            norms.push(NormParams {
                gamma: Tensor::new(vec![h], vec![1.0; h])?,
                beta: Tensor::zeros(vec![h]),
            });
        }
        Ok(PrimitiveHead {
            input_dim,
            n_classes,
            hidden_dims: hidden_dims.to_vec(),
            dropout,
            linears,
            norms,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Number of layers (hidden plus output).
    pub fn depth(&self) -> usize {
        self.linears.len()
    }

    /// Parameter tensors in canonical order: per hidden layer the weight,
    /// bias, gamma, beta; then the output weight and bias. Checkpoints and
    /// the optimizer both rely on this order.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for (i, lin) in self.linears.iter().enumerate() {
            out.push(&lin.weight);
            out.push(&lin.bias);
            if i < self.norms.len() {
                out.push(&self.norms[i].gamma);
                out.push(&self.norms[i].beta);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        let norms = &mut self.norms;
        let mut norm_iter = norms.iter_mut();
        let n_hidden = self.hidden_dims.len();
        for (i, lin) in self.linears.iter_mut().enumerate() {
            out.push(&mut lin.weight);
            out.push(&mut lin.bias);
            if i < n_hidden {
                let norm = norm_iter.next().expect("one norm per hidden layer");
                out.push(&mut norm.gamma);
                out.push(&mut norm.beta);
            }
        }
        out
    }

    /// Pushes all parameters as tape leaves, in canonical order.
    pub fn push_params(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.params()
            .into_iter()
            .map(|p| tape.leaf(p.clone()))
            .collect()
    }

    /// Recorded forward pass producing the logits node. `param_ids` must be
    /// the ids returned by [`PrimitiveHead::push_params`] on the same tape.
    pub fn logits_on_tape(
        &self,
        tape: &mut Tape,
        param_ids: &[NodeId],
        features: NodeId,
        mode: Mode,
        rng: &mut Stream,
    ) -> Result<NodeId> {
        self.check_input(tape.value(features))?;
        let mut x = features;
        let mut cursor = 0;
        for i in 0..self.linears.len() {
            let weight = param_ids[cursor];
            let bias = param_ids[cursor + 1];
            cursor += 2;
            x = tape.matmul(x, weight)?;
            x = tape.add_bias(x, bias)?;
            if i < self.hidden_dims.len() {
                let gamma = param_ids[cursor];
                let beta = param_ids[cursor + 1];
                cursor += 2;
                x = tape.layer_norm(x, gamma, beta, LAYER_NORM_EPS)?;
                x = tape.relu(x);
                x = tape.dropout(x, self.dropout, mode, rng)?;
            }
        }
        Ok(x)
    }

    /// Pure forward pass. Train mode applies dropout from `rng`; eval mode is
    /// deterministic and needs no randomness.
    pub fn logits(&self, features: &Tensor, mode: Mode, rng: Option<&mut Stream>) -> Result<Tensor> {
        self.check_input(features)?;
        let mut rng = rng;
        let mut x = features.clone();
        for i in 0..self.linears.len() {
            x = crate::tensor::matmul(&x, &self.linears[i].weight)?;
            x = crate::tensor::add_bias(&x, &self.linears[i].bias)?;
            if i < self.hidden_dims.len() {
                x = crate::tensor::layer_norm(
                    &x,
                    &self.norms[i].gamma,
                    &self.norms[i].beta,
                    LAYER_NORM_EPS,
                )?;
                x = crate::tensor::relu(&x);
                if mode == Mode::Train && self.dropout > 0.0 {
                    let rng = rng.as_deref_mut().ok_or_else(|| {
                        Error::InvalidArgument("train-mode forward needs an rng".into())
                    })?;
                    x = crate::tensor::dropout(&x, self.dropout, mode, rng)?;
                }
            }
        }
        Ok(x)
    }

    fn check_input(&self, features: &Tensor) -> Result<()> {
        let (_, dim) = features.dims2()?;
        if dim != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "features have width {dim}, head expects {}",
                self.input_dim
            )));
        }
        Ok(())
    }
}

/// The full model: a state head and an object head over shared features.
pub struct KgSpModel {
    pub state_head: PrimitiveHead,
    pub object_head: PrimitiveHead,
}

impl KgSpModel {
    pub fn new(
        input_dim: usize,
        n_states: usize,
        n_objects: usize,
        hidden_dims: &[usize],
        dropout: f64,
        rng: &mut Stream,
    ) -> Result<Self> {
        let state_head = PrimitiveHead::new(input_dim, hidden_dims, n_states, dropout, rng)?;
        let object_head = PrimitiveHead::new(input_dim, hidden_dims, n_objects, dropout, rng)?;
        Ok(KgSpModel {
            state_head,
            object_head,
        })
    }

    /// Default architecture from the hyperparameter table.
    pub fn with_defaults(
        input_dim: usize,
        n_states: usize,
        n_objects: usize,
        rng: &mut Stream,
    ) -> Result<Self> {
        Self::new(
            input_dim,
            n_states,
            n_objects,
            &DEFAULT_HIDDEN_DIMS,
            DEFAULT_DROPOUT,
            rng,
        )
    }

    pub fn input_dim(&self) -> usize {
        self.state_head.input_dim()
    }

    pub fn n_states(&self) -> usize {
        self.state_head.n_classes()
    }

    pub fn n_objects(&self) -> usize {
        self.object_head.n_classes()
    }

    /// Class probability rows for both heads.
    pub fn forward(
        &self,
        features: &Tensor,
        mode: Mode,
        mut rng: Option<&mut Stream>,
    ) -> Result<(Tensor, Tensor)> {
        let state_logits = self.state_head.logits(features, mode, rng.as_deref_mut())?;
        let object_logits = self.object_head.logits(features, mode, rng.as_deref_mut())?;
        Ok((softmax_rows(&state_logits)?, softmax_rows(&object_logits)?))
    }

    /// Eval-mode probabilities; deterministic.
    pub fn predict_probs(&self, features: &Tensor) -> Result<(Tensor, Tensor)> {
        self.forward(features, Mode::Eval, None)
    }

    /// All parameters, state head first, in canonical order.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = self.state_head.params();
        out.extend(self.object_head.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.state_head.params_mut();
        out.extend(self.object_head.params_mut());
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(MAGIC).map_err(io)?;
        w.write_u32::<LittleEndian>(VERSION).map_err(io)?;
        w.write_u32::<LittleEndian>(self.input_dim() as u32).map_err(io)?;
        w.write_u32::<LittleEndian>(self.n_states() as u32).map_err(io)?;
        w.write_u32::<LittleEndian>(self.n_objects() as u32).map_err(io)?;
        let hidden = &self.state_head.hidden_dims;
        w.write_u32::<LittleEndian>(hidden.len() as u32).map_err(io)?;
        for &h in hidden {
            w.write_u32::<LittleEndian>(h as u32).map_err(io)?;
        }
        w.write_f64::<LittleEndian>(self.state_head.dropout).map_err(io)?;
        for param in self.params() {
            for &v in param.values() {
                w.write_f64::<LittleEndian>(v).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "{}: bad magic, not a model checkpoint",
                path.display()
            )));
        }
        let version = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported version {version}",
                path.display()
            )));
        }
        let input_dim = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))? as usize;
        let n_states = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))? as usize;
        let n_objects = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))? as usize;
        let n_hidden = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))? as usize;
        let mut hidden = Vec::with_capacity(n_hidden);
        for _ in 0..n_hidden {
            hidden.push(r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))? as usize);
        }
        let dropout = r.read_f64::<LittleEndian>().map_err(|e| Error::io(path, e))?;

        // Parameter layout is fully determined by the dims; build a zeroed
        // model and fill its tensors in canonical order.
        let mut rng = crate::rng::substream(0, "checkpoint-shape");
        let mut model = KgSpModel::new(input_dim, n_states, n_objects, &hidden, dropout, &mut rng)?;
        for param in model.params_mut() {
            for v in param.values_mut().iter_mut() {
                *v = r.read_f64::<LittleEndian>().map_err(|e| {
                    if e.kind() == std::io::ErrorKind::UnexpectedEof {
                        Error::Checkpoint(format!("{}: truncated parameter data", path.display()))
                    } else {
                        Error::io(path, e)
                    }
                })?;
            }
            crate::tensor::check_finite_slice(param.values(), "checkpoint parameter").map_err(
                |_| Error::Checkpoint(format!("{}: non-finite parameter", path.display())),
            )?;
        }
        let mut trailing = [0u8; 1];
        match r.read(&mut trailing) {
            Ok(0) => Ok(model),
            Ok(_) => Err(Error::Checkpoint(format!(
                "{}: trailing bytes after parameters",
                path.display()
            ))),
            Err(e) => Err(Error::io(path, e)),
        }
    }
}

/// Indicator-style supervised loss on probability rows: the mean of
/// `-log p[label]` over rows carrying a state label, plus the same for
/// object labels. Rows missing a label contribute exactly zero to that term.
pub fn visprod_loss(
    state_probs: &Tensor,
    object_probs: &Tensor,
    batch: &[&ExampleRecord],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let (s_rows, _) = state_probs.dims2()?;
    let (o_rows, _) = object_probs.dims2()?;
    if s_rows != batch.len() || o_rows != batch.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} records but {s_rows}/{o_rows} probability rows",
            batch.len()
        )));
    }
    let mut state_loss = 0.0;
    let mut state_count = 0usize;
    let mut object_loss = 0.0;
    let mut object_count = 0usize;
    for (i, rec) in batch.iter().enumerate() {
        if rec.state.is_none() && rec.object.is_none() {
            return Err(Error::Train(format!(
                "record {:?} has no labels and pseudo-labeling is disabled",
                rec.example_id
            )));
        }
        if let Some(s) = rec.state {
            state_loss -= state_probs.row(i)[s].ln();
            state_count += 1;
        }
        if let Some(o) = rec.object {
            object_loss -= object_probs.row(i)[o].ln();
            object_count += 1;
        }
    }
    let mut total = 0.0;
    if state_count > 0 {
        total += state_loss / state_count as f64;
    }
    if object_count > 0 {
        total += object_loss / object_count as f64;
    }
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("loss is {total}")));
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SplitTag;
    use crate::rng::substream;

    fn record(id: &str, state: Option<usize>, object: Option<usize>) -> ExampleRecord {
        ExampleRecord {
            example_id: id.into(),
            feature_row: 0,
            state,
            object,
            split: SplitTag::Train,
        }
    }

    fn small_model(seed: u64) -> KgSpModel {
        let mut rng = substream(seed, "init");
        KgSpModel::new(6, 3, 4, &[5, 5], 0.5, &mut rng).unwrap()
    }

    fn features(rows: usize) -> Tensor {
        let mut rng = substream(77, "test");
        let vals: Vec<f64> = (0..rows * 6).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        Tensor::matrix(rows, 6, vals).unwrap()
    }

    #[test]
    fn forward_rows_are_distributions() {
        let model = small_model(1);
        let (sp, op) = model.predict_probs(&features(4)).unwrap();
        assert_eq!(sp.shape(), &[4, 3]);
        assert_eq!(op.shape(), &[4, 4]);
        for r in 0..4 {
            assert!((sp.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!((op.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zeroed_final_layer_gives_uniform_probs() {
        let mut model = small_model(2);
        // Final layer of the state head is the 5th tensor pair in canonical
        // order; zero both heads' output layers via the dims instead.
        for param in model.state_head.params_mut().into_iter().rev().take(2) {
            for v in param.values_mut() {
                *v = 0.0;
            }
        }
        let (sp, _) = model.predict_probs(&features(2)).unwrap();
        for r in 0..2 {
            for &p in sp.row(r) {
                assert!((p - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eval_forward_is_bit_deterministic() {
        let model = small_model(3);
        let x = features(3);
        let (a1, b1) = model.predict_probs(&x).unwrap();
        let (a2, b2) = model.predict_probs(&x).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
    }

    #[test]
    fn input_width_mismatch_is_an_error() {
        let model = small_model(4);
        let x = Tensor::matrix(1, 5, vec![0.0; 5]).unwrap();
        assert!(model.predict_probs(&x).is_err());
    }

    #[test]
    fn heads_share_no_parameters() {
        let mut model = small_model(5);
        let x = features(3);
        let (_, before) = model.predict_probs(&x).unwrap();
        for param in model.state_head.params_mut() {
            for v in param.values_mut() {
                *v += 0.37;
            }
        }
        let (_, after) = model.predict_probs(&x).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn visprod_uniform_heads_give_log_cardinalities() {
        let n = 3;
        let sp = Tensor::matrix(n, 4, vec![0.25; n * 4]).unwrap();
        let op = Tensor::matrix(n, 5, vec![0.2; n * 5]).unwrap();
        let batch: Vec<ExampleRecord> = (0..n)
            .map(|i| record(&format!("r{i}"), Some(i), Some(i)))
            .collect();
        let refs: Vec<&ExampleRecord> = batch.iter().collect();
        let loss = visprod_loss(&sp, &op, &refs).unwrap();
        assert!((loss - (4.0f64.ln() + 5.0f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn visprod_mixed_batch_decomposes_into_single_term_losses() {
        let mut rng = substream(6, "test");
        let n = 6;
        let raw_s: Vec<f64> = (0..n * 3).map(|_| rng.random::<f64>() + 0.1).collect();
        let raw_o: Vec<f64> = (0..n * 4).map(|_| rng.random::<f64>() + 0.1).collect();
        let norm = |vals: Vec<f64>, cols: usize| {
            let mut out = vals;
            for r in 0..n {
                let sum: f64 = out[r * cols..(r + 1) * cols].iter().sum();
                for v in &mut out[r * cols..(r + 1) * cols] {
                    *v /= sum;
                }
            }
            out
        };
        let sp = Tensor::matrix(n, 3, norm(raw_s, 3)).unwrap();
        let op = Tensor::matrix(n, 4, norm(raw_o, 4)).unwrap();
        let batch: Vec<ExampleRecord> = (0..n)
            .map(|i| {
                if i % 2 == 0 {
                    record(&format!("r{i}"), Some(i % 3), None)
                } else {
                    record(&format!("r{i}"), None, Some(i % 4))
                }
            })
            .collect();
        let refs: Vec<&ExampleRecord> = batch.iter().collect();
        let mixed = visprod_loss(&sp, &op, &refs).unwrap();

        // Oracle: compute the two single-term losses separately and add.
        let mut state_term = 0.0;
        let mut count = 0;
        for (i, r) in batch.iter().enumerate() {
            if let Some(s) = r.state {
                state_term -= sp.row(i)[s].ln();
                count += 1;
            }
        }
        state_term /= count as f64;
        let mut object_term = 0.0;
        let mut count = 0;
        for (i, r) in batch.iter().enumerate() {
            if let Some(o) = r.object {
                object_term -= op.row(i)[o].ln();
                count += 1;
            }
        }
        object_term /= count as f64;
        assert!((mixed - (state_term + object_term)).abs() < 1e-12);
    }

    #[test]
    fn visprod_rejects_unlabeled_record() {
        let sp = Tensor::matrix(1, 2, vec![0.5, 0.5]).unwrap();
        let op = Tensor::matrix(1, 2, vec![0.5, 0.5]).unwrap();
        let rec = record("r0", None, None);
        assert!(visprod_loss(&sp, &op, &[&rec]).is_err());
    }

    #[test]
    fn object_only_batch_has_zero_state_head_gradients() {
        let model = small_model(7);
        let x = features(3);
        let mut tape = Tape::new();
        let state_ids = model.state_head.push_params(&mut tape);
        let object_ids = model.object_head.push_params(&mut tape);
        let x_id = tape.leaf(x);
        let mut rng = substream(8, "dropout");
        let s_logits = model
            .state_head
            .logits_on_tape(&mut tape, &state_ids, x_id, Mode::Eval, &mut rng)
            .unwrap();
        let o_logits = model
            .object_head
            .logits_on_tape(&mut tape, &object_ids, x_id, Mode::Eval, &mut rng)
            .unwrap();
        let _ = s_logits;
        let loss = tape
            .softmax_cross_entropy(o_logits, &[Some(0), Some(1), Some(2)])
            .unwrap();
        let grads = tape.backward(loss).unwrap();
        for (id, param) in state_ids.iter().zip(model.state_head.params()) {
            let g = grads.get(*id, param.shape());
            assert!(g.values().iter().all(|&v| v == 0.0));
        }
        // And the object head does receive gradient.
        let some_nonzero = object_ids
            .iter()
            .zip(model.object_head.params())
            .any(|(id, p)| grads.get(*id, p.shape()).values().iter().any(|&v| v != 0.0));
        assert!(some_nonzero);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let model = small_model(9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.kgsm");
        model.save(&path).unwrap();
        let loaded = KgSpModel::load(&path).unwrap();
        for (a, b) in model.params().iter().zip(loaded.params()) {
            assert_eq!(a.values(), b.values());
        }
        let bytes = std::fs::read(&path).unwrap();
        loaded.save(&path).unwrap();
        assert_eq!(bytes, std::fs::read(&path).unwrap());
    }

    #[test]
    fn truncated_checkpoint_is_an_error() {
        let model = small_model(10);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.kgsm");
        model.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        std::fs::write(&path, bytes).unwrap();
        assert!(KgSpModel::load(&path).is_err());
    }
}
