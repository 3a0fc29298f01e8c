//! Composition feasibility: how plausible is each (state, object) pair?
//!
//! Two estimators are provided. The knowledge estimator scores a pair by the
//! cosine similarity of external word embeddings for the state and object
//! names, needing no compositional annotations at all. The seen-set estimator
//! scores an unseen pair by embedding similarity to its nearest seen
//! neighbors that share the state or the object, averaging the two sides.
//!
//! Scores are raw cosines in [-1, 1]. Masking applies the strict predicate
//! `score > threshold`; pseudo-label weights clamp non-positive scores to 0
//! so infeasible classes can never be sampled.

use crate::data::{EmbeddingTable, Vocabulary};
use crate::error::{Error, Result};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// Where a feasibility matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Cosine of external embeddings for the pair itself.
    Knowledge,
    /// Nearest seen-neighbor similarity, averaged over the two primitives.
    Compcos,
    /// Loaded from a file (synthetic ground truth or precomputed scores).
    Oracle,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Knowledge => "knowledge",
            Provenance::Compcos => "compcos",
            Provenance::Oracle => "oracle",
        }
    }
}

/// `|S| x |O|` score matrix in state-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityMatrix {
    n_states: usize,
    n_objects: usize,
    scores: Vec<f64>,
    provenance: Provenance,
}

impl FeasibilityMatrix {
    pub fn new(
        n_states: usize,
        n_objects: usize,
        scores: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self> {
        if scores.len() != n_states * n_objects {
            return Err(Error::Feasibility(format!(
                "{n_states} x {n_objects} matrix needs {} scores, got {}",
                n_states * n_objects,
                scores.len()
            )));
        }
        if let Some(pos) = scores.iter().position(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(Error::Feasibility(format!(
                "score {} at ({}, {}) outside [-1, 1]",
                scores[pos],
                pos / n_objects,
                pos % n_objects
            )));
        }
        Ok(FeasibilityMatrix {
            n_states,
            n_objects,
            scores,
            provenance,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_objects(&self) -> usize {
        self.n_objects
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn score(&self, state: usize, object: usize) -> f64 {
        self.scores[state * self.n_objects + object]
    }

    /// Row `state`: scores of every object for the given state.
    pub fn state_row(&self, state: usize) -> &[f64] {
        &self.scores[state * self.n_objects..(state + 1) * self.n_objects]
    }

    /// Column `object`: scores of every state for the given object.
    pub fn object_column(&self, object: usize) -> Vec<f64> {
        (0..self.n_states).map(|s| self.score(s, object)).collect()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Text serialization: `#feasibility |S| |O|` then one line of
    /// space-separated scores per state, in alphabetical state order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "#feasibility {} {}", self.n_states, self.n_objects);
        for s in 0..self.n_states {
            let line: Vec<String> = self.state_row(s).iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Loads a matrix written by [`FeasibilityMatrix::save`]; the provenance
    /// of file-loaded matrices is [`Provenance::Oracle`].
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Feasibility(msg) => Error::Feasibility(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Feasibility("empty feasibility file".into()))?;
        let rest = header
            .strip_prefix("#feasibility")
            .ok_or_else(|| Error::Feasibility(format!("bad header {header:?}")))?;
        let dims: Vec<usize> = rest
            .split_whitespace()
            .map(|f| {
                f.parse()
                    .map_err(|_| Error::Feasibility(format!("bad header field {f:?}")))
            })
            .collect::<Result<_>>()?;
        let [n_states, n_objects] = dims[..] else {
            return Err(Error::Feasibility(format!("bad header {header:?}")));
        };
        let mut scores = Vec::with_capacity(n_states * n_objects);
        for (i, line) in lines.enumerate() {
            if i >= n_states {
                return Err(Error::Feasibility(format!(
                    "more than {n_states} score rows"
                )));
            }
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|f| {
                    f.parse()
                        .map_err(|_| Error::Feasibility(format!("row {i}: bad score {f:?}")))
                })
                .collect::<Result<_>>()?;
            if row.len() != n_objects {
                return Err(Error::Feasibility(format!(
                    "row {i}: expected {n_objects} scores, got {}",
                    row.len()
                )));
            }
            scores.extend(row);
        }
        if scores.len() != n_states * n_objects {
            return Err(Error::Feasibility(format!(
                "expected {n_states} score rows, got {}",
                scores.len() / n_objects.max(1)
            )));
        }
        FeasibilityMatrix::new(n_states, n_objects, scores, Provenance::Oracle)
    }
}

/// Boolean `|S| x |O|` mask of feasible compositions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeasibilityMask {
    n_states: usize,
    n_objects: usize,
    allowed: Vec<bool>,
}

impl FeasibilityMask {
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_objects(&self) -> usize {
        self.n_objects
    }

    pub fn allows(&self, state: usize, object: usize) -> bool {
        self.allowed[state * self.n_objects + object]
    }

    pub fn n_allowed(&self) -> usize {
        self.allowed.iter().filter(|&&a| a).count()
    }

    /// All-true mask, for callers that want uniform code paths.
    pub fn all_allowed(n_states: usize, n_objects: usize) -> Self {
        FeasibilityMask {
            n_states,
            n_objects,
            allowed: vec![true; n_states * n_objects],
        }
    }
}

/// Cosine similarity, clamped to [-1, 1] against rounding spill.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Feasibility(format!(
            "cosine of vectors with dims {} and {}",
            u.len(),
            v.len()
        )));
    }
    let dot: f64 = u.iter().zip(v).map(|(&a, &b)| a * b).sum();
    let nu = u.iter().map(|&a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|&b| b * b).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Feasibility("cosine of a zero vector".into()));
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Scores every pair by the cosine of its state and object embeddings.
pub fn knowledge_feasibility(
    emb: &EmbeddingTable,
    vocab: &Vocabulary,
) -> Result<FeasibilityMatrix> {
    let state_vecs = resolve_all(emb, vocab.states())?;
    let object_vecs = resolve_all(emb, vocab.objects())?;
    let mut scores = Vec::with_capacity(vocab.n_compositions());
    for sv in &state_vecs {
        for ov in &object_vecs {
            scores.push(cosine(sv, ov)?);
        }
    }
    FeasibilityMatrix::new(
        vocab.n_states(),
        vocab.n_objects(),
        scores,
        Provenance::Knowledge,
    )
}

/// Seen-neighbor estimator. A seen pair scores 1. An unseen pair `(s, o)`
/// scores the mean of two sides: the best cosine between `o` and any object
/// seen with state `s`, and the best cosine between `s` and any state seen
/// with object `o`. A side with no seen neighbor contributes -1, so absent
/// evidence never inflates the score.
pub fn compcos_feasibility(
    emb: &EmbeddingTable,
    vocab: &Vocabulary,
    seen: &BTreeSet<(usize, usize)>,
) -> Result<FeasibilityMatrix> {
    if seen.is_empty() {
        return Err(Error::Feasibility(
            "seen-set feasibility needs a nonempty seen composition set".into(),
        ));
    }
    let state_vecs = resolve_all(emb, vocab.states())?;
    let object_vecs = resolve_all(emb, vocab.objects())?;

    let mut objects_with_state: Vec<Vec<usize>> = vec![Vec::new(); vocab.n_states()];
    let mut states_with_object: Vec<Vec<usize>> = vec![Vec::new(); vocab.n_objects()];
    for &(s, o) in seen {
        if s >= vocab.n_states() || o >= vocab.n_objects() {
            return Err(Error::Feasibility(format!(
                "seen composition ({s},{o}) out of range"
            )));
        }
        objects_with_state[s].push(o);
        states_with_object[o].push(s);
    }

    let mut scores = Vec::with_capacity(vocab.n_compositions());
    for s in 0..vocab.n_states() {
        for o in 0..vocab.n_objects() {
            if seen.contains(&(s, o)) {
                scores.push(1.0);
                continue;
            }
            let mut rho_obj = -1.0f64;
            for &o2 in &objects_with_state[s] {
                rho_obj = rho_obj.max(cosine(&object_vecs[o], &object_vecs[o2])?);
            }
            let mut rho_state = -1.0f64;
            for &s2 in &states_with_object[o] {
                rho_state = rho_state.max(cosine(&state_vecs[s], &state_vecs[s2])?);
            }
            scores.push((rho_obj + rho_state) / 2.0);
        }
    }
    FeasibilityMatrix::new(
        vocab.n_states(),
        vocab.n_objects(),
        scores,
        Provenance::Compcos,
    )
}

fn resolve_all<'a>(emb: &'a EmbeddingTable, names: &[String]) -> Result<Vec<&'a [f64]>> {
    names
        .iter()
        .map(|name| {
            emb.vector(name)
                .ok_or_else(|| Error::Embeddings(format!("name {name:?} not resolved")))
        })
        .collect()
}

/// Strict mask: a pair is feasible iff `score > threshold`.
pub fn feasibility_mask(matrix: &FeasibilityMatrix, threshold: f64) -> Result<FeasibilityMask> {
    let allowed: Vec<bool> = matrix.scores().iter().map(|&s| s > threshold).collect();
    if !allowed.iter().any(|&a| a) {
        return Err(Error::Feasibility(format!(
            "no composition passes threshold {threshold}; inference would be undefined"
        )));
    }
    Ok(FeasibilityMask {
        n_states: matrix.n_states(),
        n_objects: matrix.n_objects(),
        allowed,
    })
}

/// Pseudo-label weight slice for a record with exactly one known label.
///
/// A known object yields the per-state column; a known state yields the
/// per-object row. Non-positive scores are clamped to 0 so the sampler can
/// never pick an infeasible class.
pub fn pseudo_weight_slices(
    matrix: &FeasibilityMatrix,
    known_state: Option<usize>,
    known_object: Option<usize>,
) -> Result<Vec<f64>> {
    let slice = match (known_state, known_object) {
        (Some(s), None) => {
            if s >= matrix.n_states() {
                return Err(Error::Feasibility(format!("state {s} out of range")));
            }
            matrix.state_row(s).to_vec()
        }
        (None, Some(o)) => {
            if o >= matrix.n_objects() {
                return Err(Error::Feasibility(format!("object {o} out of range")));
            }
            matrix.object_column(o)
        }
        _ => {
            return Err(Error::InvalidArgument(
                "exactly one of known_state / known_object must be provided".into(),
            ))
        }
    };
    Ok(slice.into_iter().map(|v| v.max(0.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;
    use std::collections::HashMap;

    fn vocab(states: &[&str], objects: &[&str]) -> Vocabulary {
        Vocabulary::new(
            states.iter().map(|s| s.to_string()),
            objects.iter().map(|s| s.to_string()),
        )
        .unwrap()
    }

    fn table(vocab: &Vocabulary, entries: &[(&str, &[f64])]) -> EmbeddingTable {
        let tokens: HashMap<String, Vec<f64>> = entries
            .iter()
            .map(|(name, vec)| (name.to_string(), vec.to_vec()))
            .collect();
        EmbeddingTable::from_token_vectors(&tokens, vocab).unwrap()
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap().abs() < 1e-12);
        let c = cosine(&[1.0, 1.0], &[2.0, 0.0]).unwrap();
        assert!((c - 1.0 / 2.0f64.sqrt()).abs() < 1e-12);
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn knowledge_scores_match_pairwise_cosine_oracle() {
        let vocab = vocab(&["s0", "s1", "s2"], &["o0", "o1", "o2"]);
        let mut rng = substream(13, "test");
        let mut entries: Vec<(String, Vec<f64>)> = Vec::new();
        for name in vocab.states().iter().chain(vocab.objects()) {
            let v: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            entries.push((name.clone(), v));
        }
        let tokens: HashMap<String, Vec<f64>> = entries.iter().cloned().collect();
        let emb = EmbeddingTable::from_token_vectors(&tokens, &vocab).unwrap();
        let matrix = knowledge_feasibility(&emb, &vocab).unwrap();
        // Direct 9-pair enumeration.
        for (si, sname) in vocab.states().iter().enumerate() {
            for (oi, oname) in vocab.objects().iter().enumerate() {
                let expect = cosine(&tokens[sname], &tokens[oname]).unwrap();
                assert!((matrix.score(si, oi) - expect).abs() < 1e-12);
                // Pair-level symmetry.
                let swapped = cosine(&tokens[oname], &tokens[sname]).unwrap();
                assert!((matrix.score(si, oi) - swapped).abs() < 1e-12);
            }
        }
        assert_eq!(matrix.provenance(), Provenance::Knowledge);
    }

    #[test]
    fn identical_vectors_score_one_and_orthogonal_zero() {
        let vocab = vocab(&["a"], &["b", "c"]);
        let emb = table(&vocab, &[("a", &[1.0, 0.0]), ("b", &[1.0, 0.0]), ("c", &[0.0, 1.0])]);
        let m = knowledge_feasibility(&emb, &vocab).unwrap();
        assert_eq!(m.score(0, 0), 1.0);
        assert_eq!(m.score(0, 1), 0.0);
        // A score of exactly 0 fails the strict mask.
        let mask = feasibility_mask(&m, 0.0).unwrap();
        assert!(mask.allows(0, 0));
        assert!(!mask.allows(0, 1));
    }

    #[test]
    fn compcos_seen_pairs_score_one() {
        let vocab = vocab(&["s0", "s1"], &["o0", "o1"]);
        let emb = table(
            &vocab,
            &[
                ("s0", &[1.0, 0.0, 0.0]),
                ("s1", &[0.0, 1.0, 0.0]),
                ("o0", &[0.0, 0.0, 1.0]),
                ("o1", &[0.0, 0.0, 1.0]),
            ],
        );
        let seen: BTreeSet<(usize, usize)> = [(0usize, 0usize)].into_iter().collect();
        let m = compcos_feasibility(&emb, &vocab, &seen).unwrap();
        assert_eq!(m.score(0, 0), 1.0);
        // (s0, o1): object side max cos(e_o1, e_o0) = 1; state side has no
        // seen pair with o1 so it falls back to -1. Score (1 - 1) / 2 = 0.
        assert_eq!(m.score(0, 1), 0.0);
        assert_eq!(m.provenance(), Provenance::Compcos);
    }

    #[test]
    fn compcos_identical_embeddings_score_one_everywhere() {
        let vocab = vocab(&["s0", "s1"], &["o0", "o1"]);
        let emb = table(
            &vocab,
            &[
                ("s0", &[0.5, 0.5]),
                ("s1", &[0.5, 0.5]),
                ("o0", &[0.5, 0.5]),
                ("o1", &[0.5, 0.5]),
            ],
        );
        let seen: BTreeSet<(usize, usize)> =
            [(0usize, 0usize), (1usize, 1usize)].into_iter().collect();
        let m = compcos_feasibility(&emb, &vocab, &seen).unwrap();
        for s in 0..2 {
            for o in 0..2 {
                assert!((m.score(s, o) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn compcos_requires_seen_pairs() {
        let vocab = vocab(&["s0"], &["o0"]);
        let emb = table(&vocab, &[("s0", &[1.0]), ("o0", &[1.0])]);
        assert!(compcos_feasibility(&emb, &vocab, &BTreeSet::new()).is_err());
    }

    #[test]
    fn all_positive_scores_give_all_true_mask() {
        let m = FeasibilityMatrix::new(2, 2, vec![1.0; 4], Provenance::Oracle).unwrap();
        let mask = feasibility_mask(&m, 0.0).unwrap();
        assert_eq!(mask.n_allowed(), 4);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let m = FeasibilityMatrix::new(2, 2, vec![-0.5, 0.0, -1.0, 0.0], Provenance::Oracle).unwrap();
        assert!(feasibility_mask(&m, 0.0).is_err());
    }

    #[test]
    fn weight_slices_clamp_and_orient_correctly() {
        let m = FeasibilityMatrix::new(
            3,
            2,
            vec![0.5, 0.1, -0.2, 0.9, 0.0, -0.4],
            Provenance::Oracle,
        )
        .unwrap();
        // Known object 0: per-state column [0.5, -0.2, 0.0] clamps to [0.5, 0, 0].
        let w = pseudo_weight_slices(&m, None, Some(0)).unwrap();
        assert_eq!(w, vec![0.5, 0.0, 0.0]);
        // Known state 1: per-object row [-0.2, 0.9] clamps to [0, 0.9].
        let w = pseudo_weight_slices(&m, Some(1), None).unwrap();
        assert_eq!(w, vec![0.0, 0.9]);
        // All-positive slices come back unchanged.
        let w = pseudo_weight_slices(&m, Some(0), None).unwrap();
        assert_eq!(w, vec![0.5, 0.1]);
        assert!(pseudo_weight_slices(&m, None, None).is_err());
        assert!(pseudo_weight_slices(&m, Some(0), Some(0)).is_err());
    }

    #[test]
    fn slices_match_direct_extraction_on_random_matrix() {
        let mut rng = substream(17, "test");
        let scores: Vec<f64> = (0..20).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let m = FeasibilityMatrix::new(4, 5, scores.clone(), Provenance::Oracle).unwrap();
        for s in 0..4 {
            let w = pseudo_weight_slices(&m, Some(s), None).unwrap();
            for o in 0..5 {
                assert_eq!(w[o], scores[s * 5 + o].max(0.0));
                assert!(w[o] >= 0.0);
                assert_eq!(w[o] == 0.0, scores[s * 5 + o] <= 0.0);
            }
        }
        for o in 0..5 {
            let w = pseudo_weight_slices(&m, None, Some(o)).unwrap();
            for s in 0..4 {
                assert_eq!(w[s], scores[s * 5 + o].max(0.0));
            }
        }
    }

    #[test]
    fn file_round_trip_is_bit_equal() {
        let mut rng = substream(19, "test");
        let scores: Vec<f64> = (0..12).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let m = FeasibilityMatrix::new(3, 4, scores, Provenance::Knowledge).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feas.txt");
        m.save(&path).unwrap();
        let loaded = FeasibilityMatrix::load(&path).unwrap();
        assert_eq!(m.scores(), loaded.scores());
        assert_eq!(loaded.provenance(), Provenance::Oracle);
        assert_eq!(m.to_text(), loaded.to_text());
    }

    #[test]
    fn out_of_range_scores_are_rejected() {
        assert!(FeasibilityMatrix::new(1, 1, vec![1.5], Provenance::Oracle).is_err());
        assert!(FeasibilityMatrix::new(1, 1, vec![f64::NAN], Provenance::Oracle).is_err());
    }
}
