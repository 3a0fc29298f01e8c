//! Prediction over the compositional space and the generalized evaluation
//! protocol.
//!
//! A prediction is the argmax of `p_state(s) * p_object(o)` over all
//! (state, object) cells, optionally restricted to a feasibility mask, with
//! ties broken toward the lexicographically smallest pair. The biased
//! protocol raises every unseen composition's score by a calibration bias
//! `b` and sweeps it: seen accuracy falls and unseen accuracy rises as `b`
//! grows, tracing a trade-off curve. Reported are the best seen and unseen
//! accuracy, the best harmonic mean along the sweep, and the area under the
//! (unseen, seen) curve scaled to [0, 100].
//!
//! The sweep is exact rather than grid-based: a prediction can only flip
//! from the best seen cell to the best unseen cell at `b = s* - u*`, so
//! evaluating those per-image differences plus one bias inside each plateau
//! between them (and the -inf/+inf endpoints) visits every value the curve
//! ever takes.

use crate::data::{DatasetManifest, FeatureStore, SplitTag};
use crate::error::{Error, Result};
use crate::feasibility::FeasibilityMask;
use crate::model::KgSpModel;
use crate::tensor::Tensor;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// Outer product of two probability rows: the joint score of every
/// composition. Entries lie in [0, 1] and sum to 1.
pub fn joint_scores(state_probs: &[f64], object_probs: &[f64]) -> Result<Tensor> {
    let mut values = Vec::with_capacity(state_probs.len() * object_probs.len());
    for &ps in state_probs {
        for &po in object_probs {
            values.push(ps * po);
        }
    }
    Tensor::matrix(state_probs.len(), object_probs.len(), values)
}

/// Row and column sums of a compositional score matrix: per-state and
/// per-object scores for adapting compositional models to primitive tasks.
pub fn marginalize(comp_scores: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n_states, n_objects) = comp_scores.dims2()?;
    let mut state_scores = vec![0.0; n_states];
    let mut object_scores = vec![0.0; n_objects];
    for s in 0..n_states {
        for o in 0..n_objects {
            let v = comp_scores.values()[s * n_objects + o];
            state_scores[s] += v;
            object_scores[o] += v;
        }
    }
    Ok((state_scores, object_scores))
}

fn check_mask_dims(
    mask: Option<&FeasibilityMask>,
    n_states: usize,
    n_objects: usize,
) -> Result<()> {
    if let Some(m) = mask {
        if m.n_states() != n_states || m.n_objects() != n_objects {
            return Err(Error::Eval(format!(
                "mask is {}x{}, output space is {n_states}x{n_objects}",
                m.n_states(),
                m.n_objects()
            )));
        }
    }
    Ok(())
}

/// Joint argmax over the (masked) compositional space. Ties break toward the
/// lexicographically smallest (state, object).
pub fn predict(
    state_probs: &[f64],
    object_probs: &[f64],
    mask: Option<&FeasibilityMask>,
) -> Result<(usize, usize)> {
    check_mask_dims(mask, state_probs.len(), object_probs.len())?;
    let mut best: Option<(f64, (usize, usize))> = None;
    for (s, &ps) in state_probs.iter().enumerate() {
        for (o, &po) in object_probs.iter().enumerate() {
            if mask.is_some_and(|m| !m.allows(s, o)) {
                continue;
            }
            let score = ps * po;
            if best.is_none_or(|(b, _)| score > b) {
                best = Some((score, (s, o)));
            }
        }
    }
    best.map(|(_, cell)| cell)
        .ok_or_else(|| Error::Eval("mask admits no composition".into()))
}

/// Best (score, cell) within the seen group and within the unseen group.
fn group_bests(
    state_probs: &[f64],
    object_probs: &[f64],
    mask: Option<&FeasibilityMask>,
    seen: &BTreeSet<(usize, usize)>,
) -> (
    Option<(f64, (usize, usize))>,
    Option<(f64, (usize, usize))>,
) {
    let mut best_seen: Option<(f64, (usize, usize))> = None;
    let mut best_unseen: Option<(f64, (usize, usize))> = None;
    for (s, &ps) in state_probs.iter().enumerate() {
        for (o, &po) in object_probs.iter().enumerate() {
            if mask.is_some_and(|m| !m.allows(s, o)) {
                continue;
            }
            let score = ps * po;
            let slot = if seen.contains(&(s, o)) {
                &mut best_seen
            } else {
                &mut best_unseen
            };
            if slot.is_none_or(|(b, _)| score > b) {
                *slot = Some((score, (s, o)));
            }
        }
    }
    (best_seen, best_unseen)
}

fn choose_at_bias(
    best_seen: Option<(f64, (usize, usize))>,
    best_unseen: Option<(f64, (usize, usize))>,
    bias: f64,
) -> Option<(usize, usize)> {
    match (best_seen, best_unseen) {
        (None, None) => None,
        (Some((_, cell)), None) => Some(cell),
        (None, Some((_, cell))) => Some(cell),
        (Some((s_score, s_cell)), Some((u_score, u_cell))) => {
            // The bias endpoints act as group selectors (the limit of
            // score + b), so within-group ordering stays intact.
            if bias == f64::INFINITY {
                return Some(u_cell);
            }
            if bias == f64::NEG_INFINITY {
                return Some(s_cell);
            }
            let biased = u_score + bias;
            if biased > s_score {
                Some(u_cell)
            } else if biased < s_score {
                Some(s_cell)
            } else {
                Some(s_cell.min(u_cell))
            }
        }
    }
}

/// Masked argmax with a calibration bias added to every unseen composition.
pub fn predict_with_bias(
    state_probs: &[f64],
    object_probs: &[f64],
    mask: Option<&FeasibilityMask>,
    seen: &BTreeSet<(usize, usize)>,
    bias: f64,
) -> Result<(usize, usize)> {
    check_mask_dims(mask, state_probs.len(), object_probs.len())?;
    let (best_seen, best_unseen) = group_bests(state_probs, object_probs, mask, seen);
    choose_at_bias(best_seen, best_unseen, bias)
        .ok_or_else(|| Error::Eval("mask admits no composition".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Biased,
    Unbiased,
}

impl EvalMode {
    fn as_str(self) -> &'static str {
        match self {
            EvalMode::Biased => "biased",
            EvalMode::Unbiased => "unbiased",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub bias: f64,
    pub seen_acc: f64,
    pub unseen_acc: f64,
}

impl CurvePoint {
    pub fn hm(&self) -> f64 {
        harmonic_mean(self.seen_acc, self.unseen_acc)
    }
}

pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Metrics of one evaluation run. Accuracies are fractions in [0, 1]; the
/// AUC is scaled by 100 and absent in unbiased mode.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mode: EvalMode,
    pub curve: Vec<CurvePoint>,
    pub best_seen: f64,
    pub best_unseen: f64,
    pub best_hm: f64,
    pub auc: Option<f64>,
}

impl MetricsReport {
    /// Seen accuracy at the single unbiased operating point.
    pub fn seen_acc(&self) -> f64 {
        self.best_seen
    }

    pub fn unseen_acc(&self) -> f64 {
        self.best_unseen
    }

    pub fn hm(&self) -> f64 {
        self.best_hm
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bias,seen_acc,unseen_acc,hm\n");
        for p in &self.curve {
            let _ = writeln!(out, "{},{},{},{}", p.bias, p.seen_acc, p.unseen_acc, p.hm());
        }
        let auc = match self.auc {
            Some(a) => format!("{a}"),
            None => "none".into(),
        };
        let _ = writeln!(
            out,
            "#summary mode={} best_seen={} best_unseen={} best_hm={} auc={auc}",
            self.mode.as_str(),
            self.best_seen,
            self.best_unseen,
            self.best_hm
        );
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut curve = Vec::new();
        let mut summary = None;
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                if line != "bias,seen_acc,unseen_acc,hm" {
                    return Err(Error::Eval(format!("bad metrics header {line:?}")));
                }
                continue;
            }
            if let Some(rest) = line.strip_prefix("#summary ") {
                summary = Some(rest.to_string());
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::Eval(format!("line {}: bad metrics row", i + 1)));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::Eval(format!("line {}: bad number {s:?}", i + 1)))
            };
            curve.push(CurvePoint {
                bias: parse(fields[0])?,
                seen_acc: parse(fields[1])?,
                unseen_acc: parse(fields[2])?,
            });
        }
        let summary = summary.ok_or_else(|| Error::Eval("metrics file has no summary".into()))?;
        let mut mode = None;
        let mut best_seen = None;
        let mut best_unseen = None;
        let mut best_hm = None;
        let mut auc = None;
        for field in summary.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::Eval(format!("bad summary field {field:?}")))?;
            match key {
                "mode" => {
                    mode = Some(match value {
                        "biased" => EvalMode::Biased,
                        "unbiased" => EvalMode::Unbiased,
                        other => return Err(Error::Eval(format!("bad mode {other:?}"))),
                    })
                }
                "best_seen" => best_seen = Some(value.parse().map_err(|_| bad_num(value))?),
                "best_unseen" => best_unseen = Some(value.parse().map_err(|_| bad_num(value))?),
                "best_hm" => best_hm = Some(value.parse().map_err(|_| bad_num(value))?),
                "auc" => {
                    auc = Some(if value == "none" {
                        None
                    } else {
                        Some(value.parse().map_err(|_| bad_num(value))?)
                    })
                }
                other => return Err(Error::Eval(format!("unknown summary key {other:?}"))),
            }
        }
        Ok(MetricsReport {
            mode: mode.ok_or_else(|| Error::Eval("summary missing mode".into()))?,
            curve,
            best_seen: best_seen.ok_or_else(|| Error::Eval("summary missing best_seen".into()))?,
            best_unseen: best_unseen
                .ok_or_else(|| Error::Eval("summary missing best_unseen".into()))?,
            best_hm: best_hm.ok_or_else(|| Error::Eval("summary missing best_hm".into()))?,
            auc: auc.ok_or_else(|| Error::Eval("summary missing auc".into()))?,
        })
    }

    /// Human-readable table with percentages.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "mode: {}", self.mode.as_str());
        let _ = writeln!(out, "{:>12} {:>8} {:>8} {:>8}", "bias", "seen%", "unseen%", "hm%");
        for p in &self.curve {
            let bias = if p.bias == f64::NEG_INFINITY {
                "-inf".to_string()
            } else if p.bias == f64::INFINITY {
                "+inf".to_string()
            } else {
                format!("{:.6}", p.bias)
            };
            let _ = writeln!(
                out,
                "{bias:>12} {:>8.2} {:>8.2} {:>8.2}",
                p.seen_acc * 100.0,
                p.unseen_acc * 100.0,
                p.hm() * 100.0
            );
        }
        match self.auc {
            Some(auc) => {
                let _ = writeln!(
                    out,
                    "best seen {:.2} | best unseen {:.2} | best hm {:.2} | auc {:.2}",
                    self.best_seen * 100.0,
                    self.best_unseen * 100.0,
                    self.best_hm * 100.0,
                    auc
                );
            }
            None => {
                let _ = writeln!(
                    out,
                    "seen {:.2} | unseen {:.2} | hm {:.2}",
                    self.best_seen * 100.0,
                    self.best_unseen * 100.0,
                    self.best_hm * 100.0
                );
            }
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn bad_num(value: &str) -> Error {
    Error::Eval(format!("bad number {value:?}"))
}

/// Pre-extracted scores of one labeled test set: one probability row pair
/// per image, the true composition, and the seen/unseen partition.
pub struct ScoredTestSet<'a> {
    pub state_probs: &'a Tensor,
    pub object_probs: &'a Tensor,
    pub labels: &'a [(usize, usize)],
    pub seen: &'a BTreeSet<(usize, usize)>,
    pub mask: Option<&'a FeasibilityMask>,
}

struct ImageBests {
    best_seen: Option<(f64, (usize, usize))>,
    best_unseen: Option<(f64, (usize, usize))>,
    label: (usize, usize),
    label_is_seen: bool,
}

fn image_bests(set: &ScoredTestSet) -> Result<Vec<ImageBests>> {
    let (rows, n_states) = set.state_probs.dims2()?;
    let (o_rows, n_objects) = set.object_probs.dims2()?;
    if rows != o_rows || rows != set.labels.len() {
        return Err(Error::Eval(format!(
            "{rows} state rows, {o_rows} object rows, {} labels",
            set.labels.len()
        )));
    }
    if rows == 0 {
        return Err(Error::Eval("empty test set".into()));
    }
    check_mask_dims(set.mask, n_states, n_objects)?;
    let mut out = Vec::with_capacity(rows);
    for i in 0..rows {
        let (s, o) = set.labels[i];
        if s >= n_states || o >= n_objects {
            return Err(Error::Eval(format!("label ({s},{o}) out of range")));
        }
        let (best_seen, best_unseen) = group_bests(
            set.state_probs.row(i),
            set.object_probs.row(i),
            set.mask,
            set.seen,
        );
        if best_seen.is_none() && best_unseen.is_none() {
            return Err(Error::Eval("mask admits no composition".into()));
        }
        out.push(ImageBests {
            best_seen,
            best_unseen,
            label: (s, o),
            label_is_seen: set.seen.contains(&(s, o)),
        });
    }
    Ok(out)
}

fn accuracy_at_bias(images: &[ImageBests], bias: f64) -> (f64, f64) {
    let mut seen_total = 0usize;
    let mut seen_correct = 0usize;
    let mut unseen_total = 0usize;
    let mut unseen_correct = 0usize;
    for img in images {
        let predicted = choose_at_bias(img.best_seen, img.best_unseen, bias)
            .expect("image_bests guarantees a candidate cell");
        let correct = predicted == img.label;
        if img.label_is_seen {
            seen_total += 1;
            seen_correct += usize::from(correct);
        } else {
            unseen_total += 1;
            unseen_correct += usize::from(correct);
        }
    }
    let frac = |c: usize, t: usize| if t == 0 { 0.0 } else { c as f64 / t as f64 };
    (frac(seen_correct, seen_total), frac(unseen_correct, unseen_total))
}

/// Bias sweep over pre-extracted scores.
///
/// An image's prediction flips from its best seen cell to its best unseen
/// cell exactly at `b = s* - u*`, so the accuracy curve is a step function
/// whose jumps all sit at those per-image differences. The sweep evaluates
/// every flip point and one bias inside every plateau between them (plus the
/// -inf/+inf endpoints), which captures each accuracy level the curve ever
/// attains — a dense grid adds nothing but duplicates.
pub fn evaluate_scores_biased(set: &ScoredTestSet) -> Result<MetricsReport> {
    if set.seen.is_empty() {
        return Err(Error::Eval("seen composition set is empty".into()));
    }
    let images = image_bests(set)?;
    if !images.iter().any(|i| !i.label_is_seen) {
        return Err(Error::Eval(
            "no unseen-composition test images; the sweep metrics are undefined".into(),
        ));
    }
    if !images.iter().any(|i| i.label_is_seen) {
        return Err(Error::Eval(
            "no seen-composition test images; the sweep metrics are undefined".into(),
        ));
    }

    let mut flips: Vec<f64> = images
        .iter()
        .filter_map(|img| match (img.best_seen, img.best_unseen) {
            (Some((s, _)), Some((u, _))) => Some(s - u),
            _ => None,
        })
        .collect();
    flips.sort_by(f64::total_cmp);
    flips.dedup();
    let mut candidates = vec![f64::NEG_INFINITY];
    if let (Some(&first), Some(&last)) = (flips.first(), flips.last()) {
        candidates.push(first - 1.0);
        for w in flips.windows(2) {
            candidates.push(w[0]);
            candidates.push((w[0] + w[1]) / 2.0);
        }
        candidates.push(last);
        candidates.push(last + 1.0);
    }
    candidates.push(f64::INFINITY);

    let curve: Vec<CurvePoint> = candidates
        .iter()
        .map(|&bias| {
            let (seen_acc, unseen_acc) = accuracy_at_bias(&images, bias);
            CurvePoint {
                bias,
                seen_acc,
                unseen_acc,
            }
        })
        .collect();

    let best_seen = curve.iter().map(|p| p.seen_acc).fold(0.0, f64::max);
    let best_unseen = curve.iter().map(|p| p.unseen_acc).fold(0.0, f64::max);
    let best_hm = curve.iter().map(|p| p.hm()).fold(0.0, f64::max);
    let auc = auc_from_curve(&curve);
    Ok(MetricsReport {
        mode: EvalMode::Biased,
        curve,
        best_seen,
        best_unseen,
        best_hm,
        auc: Some(auc),
    })
}

/// Trapezoidal area under the (unseen, seen) polyline, scaled by 100.
pub fn auc_from_curve(curve: &[CurvePoint]) -> f64 {
    let mut points: Vec<(f64, f64)> = curve.iter().map(|p| (p.unseen_acc, p.seen_acc)).collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let mut area = 0.0;
    for w in points.windows(2) {
        let (u1, s1) = w[0];
        let (u2, s2) = w[1];
        area += (u2 - u1) * (s1 + s2) / 2.0;
    }
    area * 100.0
}

/// Single-operating-point evaluation in the full compositional space, no
/// bias applied; the seen/unseen tags are used only for reporting.
pub fn evaluate_scores_unbiased(set: &ScoredTestSet) -> Result<MetricsReport> {
    let images = image_bests(set)?;
    let (seen_acc, unseen_acc) = accuracy_at_bias(&images, 0.0);
    Ok(MetricsReport {
        mode: EvalMode::Unbiased,
        curve: vec![CurvePoint {
            bias: 0.0,
            seen_acc,
            unseen_acc,
        }],
        best_seen: seen_acc,
        best_unseen: unseen_acc,
        best_hm: harmonic_mean(seen_acc, unseen_acc),
        auc: None,
    })
}

fn scored_test_set(
    model: &KgSpModel,
    manifest: &DatasetManifest,
    features: &FeatureStore,
) -> Result<(Tensor, Tensor, Vec<(usize, usize)>)> {
    manifest.validate_against(features)?;
    let test: Vec<_> = manifest.split_records(SplitTag::Test).collect();
    if test.is_empty() {
        return Err(Error::Eval("manifest has no test records".into()));
    }
    let rows: Vec<usize> = test.iter().map(|r| r.feature_row).collect();
    let labels: Vec<(usize, usize)> = test
        .iter()
        .map(|r| (r.state.expect("validated"), r.object.expect("validated")))
        .collect();
    let x = features.gather(&rows)?;
    let (state_probs, object_probs) = model.predict_probs(&x)?;
    Ok((state_probs, object_probs, labels))
}

/// Bias-sweep evaluation of a model on the manifest's test split. The seen
/// set is passed explicitly so partially supervised runs can carry it from
/// the original fully labeled manifest.
pub fn evaluate_biased(
    model: &KgSpModel,
    manifest: &DatasetManifest,
    features: &FeatureStore,
    seen: &BTreeSet<(usize, usize)>,
    mask: Option<&FeasibilityMask>,
) -> Result<MetricsReport> {
    let (state_probs, object_probs, labels) = scored_test_set(model, manifest, features)?;
    evaluate_scores_biased(&ScoredTestSet {
        state_probs: &state_probs,
        object_probs: &object_probs,
        labels: &labels,
        seen,
        mask,
    })
}

/// Unbiased single-point evaluation; seen/unseen tags come from the
/// manifest itself.
pub fn evaluate_unbiased(
    model: &KgSpModel,
    manifest: &DatasetManifest,
    features: &FeatureStore,
    mask: Option<&FeasibilityMask>,
) -> Result<MetricsReport> {
    let (state_probs, object_probs, labels) = scored_test_set(model, manifest, features)?;
    evaluate_scores_unbiased(&ScoredTestSet {
        state_probs: &state_probs,
        object_probs: &object_probs,
        labels: &labels,
        seen: manifest.seen_compositions(),
        mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feasibility::{feasibility_mask, FeasibilityMatrix, Provenance};
    use crate::rng::substream;
    use rand::Rng;

    #[test]
    fn predict_small_cases() {
        let (s, o) = predict(&[0.7, 0.3], &[0.2, 0.8], None).unwrap();
        assert_eq!((s, o), (0, 1)); // 0.7 * 0.8 = 0.56

        // Mask out the winner; next best is (1,1) at 0.24.
        let scores =
            FeasibilityMatrix::new(2, 2, vec![1.0, -1.0, 1.0, 1.0], Provenance::Oracle).unwrap();
        let mask = feasibility_mask(&scores, 0.0).unwrap();
        let (s, o) = predict(&[0.7, 0.3], &[0.2, 0.8], Some(&mask)).unwrap();
        assert_eq!((s, o), (1, 1));
    }

    #[test]
    fn predict_breaks_ties_lexicographically() {
        let (s, o) = predict(&[0.5, 0.5], &[0.5, 0.5], None).unwrap();
        assert_eq!((s, o), (0, 0));
    }

    #[test]
    fn predict_matches_brute_force_on_random_masked_spaces() {
        let mut rng = substream(23, "test");
        for trial in 0..300 {
            let n_states = 2 + (rng.random::<u32>() as usize) % 49;
            let n_objects = 2 + (rng.random::<u32>() as usize) % 49;
            let sp = random_distribution(&mut rng, n_states);
            let op = random_distribution(&mut rng, n_objects);
            let density: f64 = 0.1 + 0.9 * rng.random::<f64>();
            let mut scores = vec![-1.0; n_states * n_objects];
            for v in scores.iter_mut() {
                if rng.random::<f64>() < density {
                    *v = 1.0;
                }
            }
            if !scores.iter().any(|&v| v > 0.0) {
                scores[0] = 1.0;
            }
            let matrix =
                FeasibilityMatrix::new(n_states, n_objects, scores, Provenance::Oracle).unwrap();
            let mask = feasibility_mask(&matrix, 0.0).unwrap();
            let got = predict(&sp, &op, Some(&mask)).unwrap();

            // Independent oracle: materialize every cell and pick the max by
            // (score, reversed lexicographic) tuple comparison.
            let mut cells: Vec<(f64, usize, usize)> = Vec::new();
            for s in 0..n_states {
                for o in 0..n_objects {
                    if mask.allows(s, o) {
                        cells.push((sp[s] * op[o], s, o));
                    }
                }
            }
            let expect = cells
                .iter()
                .fold(None::<(f64, usize, usize)>, |acc, &(score, s, o)| {
                    match acc {
                        None => Some((score, s, o)),
                        Some((b, bs, bo)) => {
                            if score > b || (score == b && (s, o) < (bs, bo)) {
                                Some((score, s, o))
                            } else {
                                Some((b, bs, bo))
                            }
                        }
                    }
                })
                .unwrap();
            assert_eq!(got, (expect.1, expect.2), "trial {trial}");
            assert!(mask.allows(got.0, got.1));
        }
    }

    fn random_distribution(rng: &mut crate::rng::Stream, n: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
        let sum: f64 = v.iter().sum();
        for x in v.iter_mut() {
            *x /= sum;
        }
        v
    }

    #[test]
    fn marginalize_small_cases() {
        let m = Tensor::matrix(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let (states, objects) = marginalize(&m).unwrap();
        assert!((states[0] - 0.3).abs() < 1e-15);
        assert!((states[1] - 0.7).abs() < 1e-15);
        assert!((objects[0] - 0.4).abs() < 1e-15);
        assert!((objects[1] - 0.6).abs() < 1e-15);

        let one_hot = Tensor::matrix(2, 3, vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let (states, objects) = marginalize(&one_hot).unwrap();
        assert_eq!(states, vec![0.0, 1.0]);
        assert_eq!(objects, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn marginals_of_outer_product_recover_the_factors() {
        let mut rng = substream(29, "test");
        let p = random_distribution(&mut rng, 5);
        let q = random_distribution(&mut rng, 7);
        let joint = joint_scores(&p, &q).unwrap();
        let total: f64 = joint.values().iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        let (states, objects) = marginalize(&joint).unwrap();
        for (a, b) in states.iter().zip(&p) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in objects.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn harmonic_mean_zero_annihilates() {
        assert_eq!(harmonic_mean(1.0, 0.0), 0.0);
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
        assert!((harmonic_mean(0.5, 0.5) - 0.5).abs() < 1e-15);
    }

    /// Builds a scored test set where image i predicts exactly `peak[i]`
    /// with high confidence.
    struct FixedScores {
        state_probs: Tensor,
        object_probs: Tensor,
        labels: Vec<(usize, usize)>,
        seen: BTreeSet<(usize, usize)>,
    }

    fn peaked_scores(
        n_states: usize,
        n_objects: usize,
        labels: &[(usize, usize)],
        peaks: &[(usize, usize)],
        seen: &[(usize, usize)],
    ) -> FixedScores {
        let mut sp = Vec::new();
        let mut op = Vec::new();
        for &(ps, po) in peaks {
            let mut srow = vec![0.5 / (n_states as f64 - 1.0).max(1.0); n_states];
            srow[ps] = 0.5 + 0.5 / n_states as f64;
            let norm: f64 = srow.iter().sum();
            for v in srow.iter_mut() {
                *v /= norm;
            }
            sp.extend(srow);
            let mut orow = vec![0.5 / (n_objects as f64 - 1.0).max(1.0); n_objects];
            orow[po] = 0.5 + 0.5 / n_objects as f64;
            let norm: f64 = orow.iter().sum();
            for v in orow.iter_mut() {
                *v /= norm;
            }
            op.extend(orow);
        }
        FixedScores {
            state_probs: Tensor::matrix(labels.len(), n_states, sp).unwrap(),
            object_probs: Tensor::matrix(labels.len(), n_objects, op).unwrap(),
            labels: labels.to_vec(),
            seen: seen.iter().cloned().collect(),
        }
    }

    #[test]
    fn all_correct_model_scores_perfectly() {
        // 2x3 space, seen = 3 compositions, every image peaks at its label.
        let seen = [(0, 0), (0, 1), (1, 2)];
        let labels = [(0, 0), (0, 1), (1, 2), (1, 0), (1, 1), (0, 2)];
        let fs = peaked_scores(2, 3, &labels, &labels, &seen);
        let report = evaluate_scores_biased(&ScoredTestSet {
            state_probs: &fs.state_probs,
            object_probs: &fs.object_probs,
            labels: &fs.labels,
            seen: &fs.seen,
            mask: None,
        })
        .unwrap();
        assert_eq!(report.best_seen, 1.0);
        assert_eq!(report.best_unseen, 1.0);
        assert_eq!(report.best_hm, 1.0);
        assert!((report.auc.unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn all_wrong_model_scores_zero() {
        let seen = [(0, 0), (0, 1), (1, 2)];
        let labels = [(0, 0), (0, 1), (1, 2), (1, 0), (1, 1), (0, 2)];
        // Every image peaks at a different composition within its label's
        // own group, so even the group-restricted argmax at the bias
        // endpoints never recovers the true label.
        let peaks = [(0, 1), (1, 2), (0, 0), (1, 1), (0, 2), (1, 0)];
        let fs = peaked_scores(2, 3, &labels, &peaks, &seen);
        let report = evaluate_scores_biased(&ScoredTestSet {
            state_probs: &fs.state_probs,
            object_probs: &fs.object_probs,
            labels: &fs.labels,
            seen: &fs.seen,
            mask: None,
        })
        .unwrap();
        assert_eq!(report.best_seen, 0.0);
        assert_eq!(report.best_unseen, 0.0);
        assert_eq!(report.best_hm, 0.0);
        assert_eq!(report.auc.unwrap(), 0.0);
    }

    #[test]
    fn no_unseen_test_images_is_an_error() {
        let seen = [(0, 0), (0, 1)];
        let labels = [(0, 0), (0, 1)];
        let fs = peaked_scores(2, 2, &labels, &labels, &seen);
        let err = evaluate_scores_biased(&ScoredTestSet {
            state_probs: &fs.state_probs,
            object_probs: &fs.object_probs,
            labels: &fs.labels,
            seen: &fs.seen,
            mask: None,
        })
        .unwrap_err();
        assert!(err.to_string().contains("unseen"), "{err}");
    }

    #[test]
    fn biased_at_zero_equals_unbiased() {
        let mut rng = substream(31, "test");
        let n = 20;
        let mut sp = Vec::new();
        let mut op = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            sp.extend(random_distribution(&mut rng, 4));
            op.extend(random_distribution(&mut rng, 5));
            labels.push((i % 4, i % 5));
        }
        let seen: BTreeSet<(usize, usize)> =
            (0..4).flat_map(|s| [(s, 0), (s, 1)]).collect();
        let sp = Tensor::matrix(n, 4, sp).unwrap();
        let op = Tensor::matrix(n, 5, op).unwrap();
        let set = ScoredTestSet {
            state_probs: &sp,
            object_probs: &op,
            labels: &labels,
            seen: &seen,
            mask: None,
        };
        let unbiased = evaluate_scores_unbiased(&set).unwrap();
        let images = image_bests(&set).unwrap();
        let (s0, u0) = accuracy_at_bias(&images, 0.0);
        assert_eq!(unbiased.seen_acc(), s0);
        assert_eq!(unbiased.unseen_acc(), u0);
    }

    #[test]
    fn sweep_is_monotone_and_masked_predictions_stay_feasible() {
        let mut rng = substream(37, "test");
        let n = 40;
        let (n_states, n_objects) = (5, 6);
        let mut sp = Vec::new();
        let mut op = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            sp.extend(random_distribution(&mut rng, n_states));
            op.extend(random_distribution(&mut rng, n_objects));
            labels.push((i % n_states, i % n_objects));
        }
        let seen: BTreeSet<(usize, usize)> = (0..n_states)
            .flat_map(|s| (0..3).map(move |o| (s, o)))
            .collect();
        let mut scores = vec![1.0; n_states * n_objects];
        for (i, v) in scores.iter_mut().enumerate() {
            if i % 7 == 3 {
                *v = -1.0;
            }
        }
        let matrix =
            FeasibilityMatrix::new(n_states, n_objects, scores, Provenance::Oracle).unwrap();
        let mask = feasibility_mask(&matrix, 0.0).unwrap();
        let sp = Tensor::matrix(n, n_states, sp).unwrap();
        let op = Tensor::matrix(n, n_objects, op).unwrap();
        let set = ScoredTestSet {
            state_probs: &sp,
            object_probs: &op,
            labels: &labels,
            seen: &seen,
            mask: Some(&mask),
        };
        let report = evaluate_scores_biased(&set).unwrap();
        for w in report.curve.windows(2) {
            assert!(w[1].unseen_acc >= w[0].unseen_acc - 1e-12);
            assert!(w[1].seen_acc <= w[0].seen_acc + 1e-12);
        }
        // Every masked prediction is feasible at every candidate bias.
        let images = image_bests(&set).unwrap();
        for p in &report.curve {
            for img in &images {
                let cell = choose_at_bias(img.best_seen, img.best_unseen, p.bias).unwrap();
                assert!(mask.allows(cell.0, cell.1));
            }
        }
    }

    #[test]
    fn affine_rescaling_leaves_the_accuracy_curve_unchanged() {
        let mut rng = substream(41, "test");
        let n = 30;
        let (n_states, n_objects) = (4, 4);
        let mut sp_vals = Vec::new();
        let mut op_vals = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            sp_vals.extend(random_distribution(&mut rng, n_states));
            op_vals.extend(random_distribution(&mut rng, n_objects));
            labels.push((i % n_states, i % n_objects));
        }
        let seen: BTreeSet<(usize, usize)> =
            [(0, 0), (0, 1), (1, 0), (2, 3), (3, 2)].into_iter().collect();
        let sp = Tensor::matrix(n, n_states, sp_vals.clone()).unwrap();
        let op = Tensor::matrix(n, n_objects, op_vals.clone()).unwrap();
        let base = evaluate_scores_biased(&ScoredTestSet {
            state_probs: &sp,
            object_probs: &op,
            labels: &labels,
            seen: &seen,
            mask: None,
        })
        .unwrap();

        // A strictly increasing affine map of every joint score: scale one
        // factor by a > 0. Argmax order and flip order are preserved, so the
        // accuracy curve and the AUC must be identical.
        let scaled: Vec<f64> = sp_vals.iter().map(|v| v * 3.5).collect();
        let sp2 = Tensor::matrix(n, n_states, scaled).unwrap();
        let rescaled = evaluate_scores_biased(&ScoredTestSet {
            state_probs: &sp2,
            object_probs: &op,
            labels: &labels,
            seen: &seen,
            mask: None,
        })
        .unwrap();
        let accs: Vec<(f64, f64)> = base.curve.iter().map(|p| (p.seen_acc, p.unseen_acc)).collect();
        let accs2: Vec<(f64, f64)> =
            rescaled.curve.iter().map(|p| (p.seen_acc, p.unseen_acc)).collect();
        assert_eq!(accs, accs2);
        assert!((base.auc.unwrap() - rescaled.auc.unwrap()).abs() < 1e-9);
    }

    #[test]
    fn metrics_csv_round_trips() {
        let report = MetricsReport {
            mode: EvalMode::Biased,
            curve: vec![
                CurvePoint { bias: f64::NEG_INFINITY, seen_acc: 0.9, unseen_acc: 0.0 },
                CurvePoint { bias: 0.125, seen_acc: 0.8, unseen_acc: 0.5 },
                CurvePoint { bias: f64::INFINITY, seen_acc: 0.0, unseen_acc: 0.75 },
            ],
            best_seen: 0.9,
            best_unseen: 0.75,
            best_hm: 0.6153846153846154,
            auc: Some(42.5),
        };
        let parsed = MetricsReport::from_csv(&report.to_csv()).unwrap();
        assert_eq!(report, parsed);
        assert_eq!(report.to_csv(), parsed.to_csv());
    }
}
