//! Training loops: fully supervised, partially supervised with
//! knowledge-guided pseudo-labeling, and the two semi-supervised baselines
//! (thresholded pseudo-labeling and entropy minimization).
//!
//! A record missing its state label can borrow one from the model itself:
//! the current state probabilities are reweighted by the feasibility column
//! of the record's known object and a hard class is drawn with the
//! Gumbel-max trick, so only feasible classes can ever be sampled and the
//! draw follows the reweighted distribution exactly. Pseudo-labels are
//! resampled from eval-mode probabilities at every step and only switch on
//! after a warmup of purely supervised epochs.

use crate::data::{DatasetManifest, ExampleRecord, FeatureStore, Regime, SplitTag};
use crate::error::{Error, Result};
use crate::feasibility::{pseudo_weight_slices, FeasibilityMatrix};
use crate::model::KgSpModel;
use crate::rng::{substream, Stream};
use crate::tensor::{adam_step, AdamParams, AdamState, Mode, NodeId, Tape, Tensor};
use rand::distr::Open01;
use rand::seq::SliceRandom;
use rand::Rng;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// How missing labels are filled in during partially supervised training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PseudoMode {
    /// Indicator loss only: missing labels contribute nothing.
    Off,
    /// Top predicted class, taken only above a confidence threshold.
    Vanilla { threshold: f64 },
    /// Gumbel-max sample from probabilities reweighted by feasibility.
    KgGumbel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub pseudo: PseudoMode,
    /// Supervised-only epochs before pseudo-label terms activate.
    pub warmup_epochs: usize,
    /// Weight of the mean-entropy term on rows lacking a label; 0 disables.
    pub entropy_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 128,
            lr: 5e-5,
            weight_decay: 5e-5,
            seed: 0,
            pseudo: PseudoMode::Off,
            warmup_epochs: 5,
            entropy_weight: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if self.pseudo != PseudoMode::Off && self.warmup_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "warmup_epochs ({}) must be below epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        if let PseudoMode::Vanilla { threshold } = self.pseudo {
            if !(0.0 < threshold && threshold < 1.0) {
                return Err(Error::Config(format!(
                    "vanilla threshold must be in (0,1), got {threshold}"
                )));
            }
        }
        if self.entropy_weight < 0.0 || !self.entropy_weight.is_finite() {
            return Err(Error::Config(format!(
                "entropy_weight must be finite and >= 0, got {}",
                self.entropy_weight
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("bad lr / weight_decay".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PseudoOrigin {
    Vanilla,
    GumbelKg,
}

/// A sampled stand-in for a missing label.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    pub class: usize,
    pub origin: PseudoOrigin,
    /// The weights the class was drawn from (probabilities, or their product
    /// with the feasibility slice).
    pub weights: Vec<f64>,
}

/// Gumbel-max draw: `argmax_k ln(w_k) + g_k` over indices with `w_k > 0`,
/// which samples `k` with probability `w_k / sum(w)`.
pub fn gumbel_sample(weights: &[f64], rng: &mut Stream) -> Result<usize> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidArgument(
            "gumbel_sample weights must be finite and non-negative".into(),
        ));
    }
    let mut best: Option<(f64, usize)> = None;
    for (k, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        let u: f64 = rng.sample(Open01);
        let gumbel = -(-u.ln()).ln();
        let score = w.ln() + gumbel;
        if best.is_none_or(|(b, _)| score > b) {
            best = Some((score, k));
        }
    }
    match best {
        Some((_, k)) => Ok(k),
        None => Err(Error::Train("no feasible pseudo-label".into())),
    }
}

/// Feasibility-weighted pseudo-label: a Gumbel-max draw over
/// `probs * slice`. Returns `None` when every weighted class is zero, in
/// which case the caller skips the term and counts the skip.
pub fn kg_pseudo_label(
    probs: &[f64],
    slice: &[f64],
    rng: &mut Stream,
) -> Result<Option<PseudoLabel>> {
    if probs.len() != slice.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} probabilities vs {} feasibility weights",
            probs.len(),
            slice.len()
        )));
    }
    if slice.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidArgument(
            "feasibility weights must be finite and non-negative".into(),
        ));
    }
    let weights: Vec<f64> = probs.iter().zip(slice).map(|(&p, &w)| p * w).collect();
    if weights.iter().all(|&w| w <= 0.0) {
        return Ok(None);
    }
    let class = gumbel_sample(&weights, rng)?;
    Ok(Some(PseudoLabel {
        class,
        origin: PseudoOrigin::GumbelKg,
        weights,
    }))
}

/// Plain confidence-thresholded pseudo-label: the argmax class when its
/// probability exceeds the threshold, ties broken toward the lowest index.
pub fn vanilla_pseudo_label(probs: &[f64], threshold: f64) -> Result<Option<PseudoLabel>> {
    if !(0.0 < threshold && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must be in (0,1), got {threshold}"
        )));
    }
    if probs.is_empty() {
        return Err(Error::InvalidArgument("empty probability vector".into()));
    }
    let mut best = 0usize;
    for (k, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = k;
        }
    }
    if probs[best] > threshold {
        Ok(Some(PseudoLabel {
            class: best,
            origin: PseudoOrigin::Vanilla,
            weights: probs.to_vec(),
        }))
    } else {
        Ok(None)
    }
}

/// Mean Shannon entropy of a batch of probability rows.
pub fn entropy_min_term(probs: &Tensor) -> Result<f64> {
    let (rows, cols) = probs.dims2()?;
    for r in 0..rows {
        let sum: f64 = probs.row(r).iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "row {r} sums to {sum}, not a distribution"
            )));
        }
    }
    let _ = cols;
    crate::tensor::mean_row_entropy(probs)
}

/// Per-epoch means of each loss term plus the pseudo-label skip count.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss_state: f64,
    pub loss_obj: f64,
    pub loss_pseudo_state: f64,
    pub loss_pseudo_obj: f64,
    /// Weighted entropy contribution actually added to the loss.
    pub entropy_term: f64,
    pub skipped_pseudo_count: usize,
}

impl EpochStats {
    pub fn total_loss(&self) -> f64 {
        self.loss_state
            + self.loss_obj
            + self.loss_pseudo_state
            + self.loss_pseudo_obj
            + self.entropy_term
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epoch,loss_state,loss_obj,loss_pseudo_state,loss_pseudo_obj,entropy_term,skipped_pseudo_count\n",
        );
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                e.epoch,
                e.loss_state,
                e.loss_obj,
                e.loss_pseudo_state,
                e.loss_pseudo_obj,
                e.entropy_term,
                e.skipped_pseudo_count
            );
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Trains the model in place and returns the per-epoch log.
///
/// Fully labeled manifests train the plain indicator loss. Partially labeled
/// manifests add pseudo-label terms per [`PseudoMode`] after
/// `warmup_epochs`, plus an optional entropy term on rows lacking a label.
/// Deterministic given the config seed.
pub fn train(
    model: &mut KgSpModel,
    manifest: &DatasetManifest,
    features: &FeatureStore,
    config: &TrainConfig,
    feasibility: Option<&FeasibilityMatrix>,
) -> Result<TrainLog> {
    config.validate()?;
    manifest.validate_against(features)?;
    let vocab = manifest.vocabulary();
    if model.n_states() != vocab.n_states() || model.n_objects() != vocab.n_objects() {
        return Err(Error::Train(format!(
            "model heads ({} states, {} objects) do not match the vocabulary ({}, {})",
            model.n_states(),
            model.n_objects(),
            vocab.n_states(),
            vocab.n_objects()
        )));
    }
    if features.dim() != model.input_dim() {
        return Err(Error::Train(format!(
            "feature dim {} does not match model input dim {}",
            features.dim(),
            model.input_dim()
        )));
    }
    if config.pseudo != PseudoMode::Off && manifest.regime() == Regime::Full {
        return Err(Error::Train(
            "pseudo-labeling requested but every train record is fully labeled".into(),
        ));
    }
    if config.pseudo == PseudoMode::KgGumbel {
        let feas = feasibility.ok_or_else(|| {
            Error::Train("knowledge-guided pseudo-labeling needs a feasibility matrix".into())
        })?;
        if feas.n_states() != vocab.n_states() || feas.n_objects() != vocab.n_objects() {
            return Err(Error::Train(format!(
                "feasibility matrix is {}x{}, vocabulary is {}x{}",
                feas.n_states(),
                feas.n_objects(),
                vocab.n_states(),
                vocab.n_objects()
            )));
        }
    }

    let train_records: Vec<&ExampleRecord> = manifest.split_records(SplitTag::Train).collect();
    let mut rng_batch = substream(config.seed, "batch");
    let mut rng_dropout = substream(config.seed, "dropout");
    let mut rng_gumbel = substream(config.seed, "gumbel");

    let hp = AdamParams {
        lr: config.lr,
        weight_decay: config.weight_decay,
        ..AdamParams::default()
    };
    let mut adam = AdamState::new(&model.params());
    let mut log = TrainLog::default();

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_records.len()).collect();
        order.shuffle(&mut rng_batch);

        let pseudo_active = config.pseudo != PseudoMode::Off && epoch >= config.warmup_epochs;
        let mut sums = EpochStats {
            epoch,
            loss_state: 0.0,
            loss_obj: 0.0,
            loss_pseudo_state: 0.0,
            loss_pseudo_obj: 0.0,
            entropy_term: 0.0,
            skipped_pseudo_count: 0,
        };
        let mut steps = 0usize;

        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&ExampleRecord> = chunk.iter().map(|&i| train_records[i]).collect();
            let rows: Vec<usize> = batch.iter().map(|r| r.feature_row).collect();
            let x = features.gather(&rows)?;

            let mut pseudo_state: Vec<Option<usize>> = vec![None; batch.len()];
            let mut pseudo_object: Vec<Option<usize>> = vec![None; batch.len()];
            if pseudo_active {
                let (state_probs, object_probs) = model.predict_probs(&x)?;
                for (i, rec) in batch.iter().enumerate() {
                    match (rec.state, rec.object) {
                        (None, Some(o)) => {
                            let label = match config.pseudo {
                                PseudoMode::Vanilla { threshold } => {
                                    vanilla_pseudo_label(state_probs.row(i), threshold)?
                                }
                                PseudoMode::KgGumbel => {
                                    let slice = pseudo_weight_slices(
                                        feasibility.expect("checked above"),
                                        None,
                                        Some(o),
                                    )?;
                                    kg_pseudo_label(state_probs.row(i), &slice, &mut rng_gumbel)?
                                }
                                PseudoMode::Off => unreachable!(),
                            };
                            match label {
                                Some(p) => pseudo_state[i] = Some(p.class),
                                None => sums.skipped_pseudo_count += 1,
                            }
                        }
                        (Some(s), None) => {
                            let label = match config.pseudo {
                                PseudoMode::Vanilla { threshold } => {
                                    vanilla_pseudo_label(object_probs.row(i), threshold)?
                                }
                                PseudoMode::KgGumbel => {
                                    let slice = pseudo_weight_slices(
                                        feasibility.expect("checked above"),
                                        Some(s),
                                        None,
                                    )?;
                                    kg_pseudo_label(object_probs.row(i), &slice, &mut rng_gumbel)?
                                }
                                PseudoMode::Off => unreachable!(),
                            };
                            match label {
                                Some(p) => pseudo_object[i] = Some(p.class),
                                None => sums.skipped_pseudo_count += 1,
                            }
                        }
                        _ => {}
                    }
                }
            }

            let mut tape = Tape::new();
            let state_ids = model.state_head.push_params(&mut tape);
            let object_ids = model.object_head.push_params(&mut tape);
            let x_id = tape.leaf(x);
            let state_logits = model.state_head.logits_on_tape(
                &mut tape,
                &state_ids,
                x_id,
                Mode::Train,
                &mut rng_dropout,
            )?;
            let object_logits = model.object_head.logits_on_tape(
                &mut tape,
                &object_ids,
                x_id,
                Mode::Train,
                &mut rng_dropout,
            )?;

            let state_targets: Vec<Option<usize>> = batch.iter().map(|r| r.state).collect();
            let object_targets: Vec<Option<usize>> = batch.iter().map(|r| r.object).collect();
            for rec in &batch {
                if rec.state.is_none() && rec.object.is_none() {
                    return Err(Error::Train(format!(
                        "record {:?} has no labels and pseudo-labeling is disabled",
                        rec.example_id
                    )));
                }
            }

            let mut terms: Vec<NodeId> = Vec::new();
            let push_ce = |tape: &mut Tape,
                               logits: NodeId,
                               targets: &[Option<usize>],
                               sum: &mut f64|
             -> Result<Option<NodeId>> {
                if targets.iter().all(Option::is_none) {
                    return Ok(None);
                }
                let node = tape.softmax_cross_entropy(logits, targets)?;
                *sum += tape.value(node).item()?;
                Ok(Some(node))
            };
            if let Some(n) = push_ce(&mut tape, state_logits, &state_targets, &mut sums.loss_state)? {
                terms.push(n);
            }
            if let Some(n) = push_ce(&mut tape, object_logits, &object_targets, &mut sums.loss_obj)? {
                terms.push(n);
            }
            if let Some(n) = push_ce(
                &mut tape,
                state_logits,
                &pseudo_state,
                &mut sums.loss_pseudo_state,
            )? {
                terms.push(n);
            }
            if let Some(n) = push_ce(
                &mut tape,
                object_logits,
                &pseudo_object,
                &mut sums.loss_pseudo_obj,
            )? {
                terms.push(n);
            }

            if config.entropy_weight > 0.0 {
                let missing_state: Vec<bool> = batch.iter().map(|r| r.state.is_none()).collect();
                let missing_object: Vec<bool> = batch.iter().map(|r| r.object.is_none()).collect();
                for (logits, missing) in [
                    (state_logits, &missing_state),
                    (object_logits, &missing_object),
                ] {
                    if missing.iter().any(|&m| m) {
                        let h = tape.softmax_entropy(logits, missing)?;
                        let weighted = tape.scale(h, config.entropy_weight)?;
                        sums.entropy_term += tape.value(weighted).item()?;
                        terms.push(weighted);
                    }
                }
            }

            let mut total = *terms
                .first()
                .ok_or_else(|| Error::Train("batch produced no loss terms".into()))?;
            for &t in &terms[1..] {
                total = tape.add(total, t)?;
            }

            let grads_by_node = tape.backward(total)?;
            let all_ids: Vec<NodeId> = state_ids.iter().chain(&object_ids).copied().collect();
            let grads: Vec<Tensor> = all_ids
                .iter()
                .map(|&id| {
                    let shape = tape.value(id).shape().to_vec();
                    grads_by_node.get(id, &shape)
                })
                .collect();
            let mut params = model.params_mut();
            adam_step(&mut params, &grads, &mut adam, &hp)?;
            steps += 1;
        }

        let n = steps.max(1) as f64;
        sums.loss_state /= n;
        sums.loss_obj /= n;
        sums.loss_pseudo_state /= n;
        sums.loss_pseudo_obj /= n;
        sums.entropy_term /= n;
        log.epochs.push(sums);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Vocabulary;
    use crate::feasibility::Provenance;

    #[test]
    fn gumbel_degenerate_distribution() {
        let mut rng = substream(1, "gumbel");
        for _ in 0..200 {
            assert_eq!(gumbel_sample(&[0.0, 0.0, 1.0], &mut rng).unwrap(), 2);
        }
    }

    #[test]
    fn gumbel_uniform_two_way_frequencies() {
        let mut rng = substream(2, "gumbel");
        let n = 100_000;
        let mut counts = [0usize; 2];
        for _ in 0..n {
            counts[gumbel_sample(&[1.0, 1.0], &mut rng).unwrap()] += 1;
        }
        let f0 = counts[0] as f64 / n as f64;
        assert!((0.49..=0.51).contains(&f0), "freq {f0}");
    }

    #[test]
    fn gumbel_respects_weight_ratios_and_zeros() {
        let mut rng = substream(3, "gumbel");
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[gumbel_sample(&[2.0, 1.0, 0.0], &mut rng).unwrap()] += 1;
        }
        assert_eq!(counts[2], 0);
        let ratio = counts[0] as f64 / counts[1] as f64;
        assert!((ratio - 2.0).abs() / 2.0 < 0.05, "ratio {ratio}");
    }

    #[test]
    fn gumbel_rejects_all_zero_and_negative_weights() {
        let mut rng = substream(4, "gumbel");
        assert!(gumbel_sample(&[0.0, 0.0], &mut rng).is_err());
        assert!(gumbel_sample(&[1.0, -0.1], &mut rng).is_err());
    }

    #[test]
    fn kg_pseudo_label_uniform_probs_one_hot_slice() {
        let mut rng = substream(5, "gumbel");
        for _ in 0..100 {
            let p = kg_pseudo_label(&[0.25; 4], &[0.0, 0.0, 1.0, 0.0], &mut rng)
                .unwrap()
                .unwrap();
            assert_eq!(p.class, 2);
            assert_eq!(p.origin, PseudoOrigin::GumbelKg);
        }
    }

    #[test]
    fn kg_pseudo_label_identity_slice_samples_from_probs() {
        let mut rng = substream(6, "gumbel");
        let n = 100_000;
        let mut counts = [0usize; 2];
        for _ in 0..n {
            let p = kg_pseudo_label(&[0.6, 0.4], &[1.0, 1.0], &mut rng)
                .unwrap()
                .unwrap();
            counts[p.class] += 1;
        }
        let f0 = counts[0] as f64 / n as f64;
        assert!((f0 - 0.6).abs() < 0.01, "freq {f0}");
    }

    #[test]
    fn kg_pseudo_label_all_zero_product_is_skipped() {
        let mut rng = substream(7, "gumbel");
        assert_eq!(
            kg_pseudo_label(&[0.5, 0.5], &[0.0, 0.0], &mut rng).unwrap(),
            None
        );
    }

    #[test]
    fn kg_pseudo_label_never_emits_zero_weight_class() {
        let mut rng = substream(8, "gumbel");
        for _ in 0..5_000 {
            let p = kg_pseudo_label(&[0.3, 0.3, 0.4], &[1.0, 0.0, 0.5], &mut rng)
                .unwrap()
                .unwrap();
            assert_ne!(p.class, 1);
        }
    }

    #[test]
    fn vanilla_pseudo_label_threshold_cases() {
        let p = vanilla_pseudo_label(&[0.9, 0.1], 0.5).unwrap().unwrap();
        assert_eq!(p.class, 0);
        assert_eq!(vanilla_pseudo_label(&[0.4, 0.6], 0.7).unwrap(), None);
        // Tie at the argmax goes to the lowest index.
        let p = vanilla_pseudo_label(&[0.45, 0.45, 0.1], 0.3).unwrap().unwrap();
        assert_eq!(p.class, 0);
        assert!(vanilla_pseudo_label(&[1.0], 1.0).is_err());
    }

    #[test]
    fn entropy_term_basics() {
        let one_hot = Tensor::matrix(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert!(entropy_min_term(&one_hot).unwrap().abs() < 1e-12);
        let uniform = Tensor::matrix(2, 4, vec![0.25; 8]).unwrap();
        assert!((entropy_min_term(&uniform).unwrap() - 4.0f64.ln()).abs() < 1e-12);

        // Random distributions vs a direct summation oracle.
        let mut rng = substream(9, "test");
        let mut vals = vec![0.0; 12];
        for r in 0..3 {
            let mut sum = 0.0;
            for c in 0..4 {
                vals[r * 4 + c] = rng.random::<f64>() + 0.05;
                sum += vals[r * 4 + c];
            }
            for c in 0..4 {
                vals[r * 4 + c] /= sum;
            }
        }
        let probs = Tensor::matrix(3, 4, vals.clone()).unwrap();
        let mut oracle = 0.0;
        for r in 0..3 {
            for c in 0..4 {
                let p = vals[r * 4 + c];
                oracle -= p * p.ln();
            }
        }
        oracle /= 3.0;
        assert!((entropy_min_term(&probs).unwrap() - oracle).abs() < 1e-12);
    }

    // ── Loop-level tests on a small separable synthetic set ─────────────

    struct Toy {
        manifest: DatasetManifest,
        features: FeatureStore,
    }

    /// 4 states x 4 objects; features are a noisy concatenation of one-hot
    /// state and object blocks, so the primitives are linearly separable.
    fn toy_dataset(per_comp: usize, seed: u64) -> Toy {
        let vocab = Vocabulary::new(
            (0..4).map(|i| format!("s{i}")),
            (0..4).map(|i| format!("o{i}")),
        )
        .unwrap();
        let mut rng = substream(seed, "toy");
        let mut records = Vec::new();
        let mut values: Vec<f32> = Vec::new();
        let mut row = 0usize;
        for s in 0..4usize {
            for o in 0..4usize {
                for k in 0..per_comp {
                    let mut feat = vec![0.0f32; 8];
                    feat[s] = 1.0;
                    feat[4 + o] = 1.0;
                    for v in feat.iter_mut() {
                        *v += 0.1 * (rng.random::<f32>() - 0.5);
                    }
                    values.extend(feat);
                    records.push(ExampleRecord {
                        example_id: format!("tr-{s}-{o}-{k}"),
                        feature_row: row,
                        state: Some(s),
                        object: Some(o),
                        split: SplitTag::Train,
                    });
                    row += 1;
                }
            }
        }
        // One test record keeps the manifest well-formed.
        let mut feat = vec![0.0f32; 8];
        feat[0] = 1.0;
        feat[4] = 1.0;
        values.extend(feat);
        records.push(ExampleRecord {
            example_id: "te-0".into(),
            feature_row: row,
            state: Some(0),
            object: Some(0),
            split: SplitTag::Test,
        });
        let features = FeatureStore::new(row + 1, 8, values).unwrap();
        let manifest = DatasetManifest::from_parts(vocab, records, None).unwrap();
        Toy { manifest, features }
    }

    fn toy_model(seed: u64) -> KgSpModel {
        let mut rng = substream(seed, "init");
        KgSpModel::new(8, 4, 4, &[16], 0.1, &mut rng).unwrap()
    }

    fn primitive_accuracy(model: &KgSpModel, toy: &Toy) -> (f64, f64) {
        let records: Vec<&ExampleRecord> =
            toy.manifest.split_records(SplitTag::Train).collect();
        let rows: Vec<usize> = records.iter().map(|r| r.feature_row).collect();
        let x = toy.features.gather(&rows).unwrap();
        let (sp, op) = model.predict_probs(&x).unwrap();
        let mut s_ok = 0;
        let mut o_ok = 0;
        for (i, rec) in records.iter().enumerate() {
            let s_pred = argmax(sp.row(i));
            let o_pred = argmax(op.row(i));
            if Some(s_pred) == rec.state {
                s_ok += 1;
            }
            if Some(o_pred) == rec.object {
                o_ok += 1;
            }
        }
        (
            s_ok as f64 / records.len() as f64,
            o_ok as f64 / records.len() as f64,
        )
    }

    fn argmax(xs: &[f64]) -> usize {
        let mut best = 0;
        for (i, &x) in xs.iter().enumerate() {
            if x > xs[best] {
                best = i;
            }
        }
        best
    }

    #[test]
    fn supervised_training_learns_separable_primitives() {
        let toy = toy_dataset(8, 21);
        let mut model = toy_model(22);
        let config = TrainConfig {
            epochs: 200,
            batch_size: 32,
            lr: 1e-3,
            seed: 23,
            ..TrainConfig::default()
        };
        let log = train(&mut model, &toy.manifest, &toy.features, &config, None).unwrap();
        let (s_acc, o_acc) = primitive_accuracy(&model, &toy);
        assert!(s_acc > 0.95, "state accuracy {s_acc}");
        assert!(o_acc > 0.95, "object accuracy {o_acc}");
        let first = log.epochs.first().unwrap().total_loss();
        let last = log.epochs.last().unwrap().total_loss();
        assert!(first.is_finite() && last.is_finite());
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn same_seed_gives_identical_logs_and_params() {
        let toy = toy_dataset(4, 31);
        let config = TrainConfig {
            epochs: 5,
            batch_size: 16,
            lr: 1e-3,
            seed: 33,
            ..TrainConfig::default()
        };
        let mut m1 = toy_model(32);
        let log1 = train(&mut m1, &toy.manifest, &toy.features, &config, None).unwrap();
        let mut m2 = toy_model(32);
        let log2 = train(&mut m2, &toy.manifest, &toy.features, &config, None).unwrap();
        assert_eq!(log1.to_csv(), log2.to_csv());
        for (a, b) in m1.params().iter().zip(m2.params()) {
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn inactive_pseudo_path_matches_indicator_training_bit_exactly() {
        // With entropy off and no pseudo term ever firing, the partial-label
        // loop must walk the exact same parameter trajectory as plain
        // indicator training: sub-streams keep disabled features from
        // perturbing the shared randomness.
        let toy = toy_dataset(4, 41);
        let partial = crate::data::make_pczsl_split(&toy.manifest, 7).unwrap();
        let base = TrainConfig {
            epochs: 4,
            batch_size: 16,
            lr: 1e-3,
            seed: 43,
            ..TrainConfig::default()
        };
        let mut m_off = toy_model(42);
        train(&mut m_off, &partial, &toy.features, &base, None).unwrap();
        // Vanilla pseudo-labeling armed from epoch 0, but early probabilities
        // never clear a 0.999 confidence bar, so every attempt is skipped.
        let skip_all = TrainConfig {
            pseudo: PseudoMode::Vanilla { threshold: 0.999 },
            warmup_epochs: 0,
            ..base
        };
        let mut m_skip = toy_model(42);
        let log_skip = train(&mut m_skip, &partial, &toy.features, &skip_all, None).unwrap();
        assert!(log_skip.epochs.iter().all(|e| e.skipped_pseudo_count > 0));
        for (a, b) in m_off.params().iter().zip(m_skip.params()) {
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn pseudo_on_full_manifest_is_an_error() {
        let toy = toy_dataset(2, 51);
        let mut model = toy_model(52);
        let config = TrainConfig {
            epochs: 2,
            warmup_epochs: 0,
            pseudo: PseudoMode::KgGumbel,
            seed: 53,
            ..TrainConfig::default()
        };
        assert!(train(&mut model, &toy.manifest, &toy.features, &config, None).is_err());
    }

    #[test]
    fn kg_mode_requires_feasibility() {
        let toy = toy_dataset(2, 61);
        let partial = crate::data::make_pczsl_split(&toy.manifest, 1).unwrap();
        let mut model = toy_model(62);
        let config = TrainConfig {
            epochs: 2,
            warmup_epochs: 0,
            pseudo: PseudoMode::KgGumbel,
            seed: 63,
            ..TrainConfig::default()
        };
        let err = train(&mut model, &partial, &toy.features, &config, None).unwrap_err();
        assert!(err.to_string().contains("feasibility"), "{err}");
    }

    #[test]
    fn kg_pseudo_training_runs_and_logs_pseudo_terms() {
        let toy = toy_dataset(4, 71);
        let partial = crate::data::make_pczsl_split(&toy.manifest, 3).unwrap();
        let feas = FeasibilityMatrix::new(4, 4, vec![1.0; 16], Provenance::Oracle).unwrap();
        let mut model = toy_model(72);
        let config = TrainConfig {
            epochs: 6,
            warmup_epochs: 2,
            batch_size: 16,
            lr: 1e-3,
            pseudo: PseudoMode::KgGumbel,
            seed: 73,
            ..TrainConfig::default()
        };
        let log = train(&mut model, &partial, &toy.features, &config, Some(&feas)).unwrap();
        // Warmup epochs have no pseudo terms; later epochs do.
        assert_eq!(log.epochs[0].loss_pseudo_state, 0.0);
        assert_eq!(log.epochs[0].loss_pseudo_obj, 0.0);
        let activated = &log.epochs[3];
        assert!(activated.loss_pseudo_state > 0.0 || activated.loss_pseudo_obj > 0.0);
    }
}
