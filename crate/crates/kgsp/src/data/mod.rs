//! Dataset ingestion: vocabularies, example manifests, precomputed feature
//! matrices, and word-embedding tables.
//!
//! A manifest is a line-oriented UTF-8 file:
//!
//! ```text
//! #states: ancient,broken,new
//! #objects: car,dog
//! img_001<TAB>0<TAB>ancient<TAB>car<TAB>train
//! img_002<TAB>1<TAB>?<TAB>dog<TAB>train
//! ```
//!
//! Missing labels are written as `?`. Fully labeled manifests derive their
//! seen-composition set from the train records; partially labeled manifests
//! carry it forward in an optional `#seen:` header (written by the pCZSL
//! split) because evaluation still reports seen vs unseen accuracy while
//! training must not depend on it.

mod embeddings;
mod features;
mod split;

pub use embeddings::{load_embeddings, EmbeddingTable, ResolutionReport};
pub use features::FeatureStore;
pub use split::make_pczsl_split;

use crate::error::{Error, Result};
use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// Alphabetically ordered state and object name lists; the orderings are the
/// canonical index maps for every matrix in the crate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    states: Vec<String>,
    objects: Vec<String>,
}

impl Vocabulary {
    pub fn new(
        states: impl IntoIterator<Item = String>,
        objects: impl IntoIterator<Item = String>,
    ) -> Result<Self> {
        let states = canonical_names(states, "state")?;
        let objects = canonical_names(objects, "object")?;
        Ok(Vocabulary { states, objects })
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_objects(&self) -> usize {
        self.objects.len()
    }

    /// Size of the full compositional space `|S| * |O|`.
    pub fn n_compositions(&self) -> usize {
        self.states.len() * self.objects.len()
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.binary_search_by(|s| s.as_str().cmp(name)).ok()
    }

    pub fn object_index(&self, name: &str) -> Option<usize> {
        self.objects.binary_search_by(|o| o.as_str().cmp(name)).ok()
    }
}

fn canonical_names(names: impl IntoIterator<Item = String>, kind: &str) -> Result<Vec<String>> {
    let mut names: Vec<String> = names.into_iter().collect();
    for name in &names {
        if name.is_empty() || name == "?" {
            return Err(Error::Manifest(format!("invalid {kind} name {name:?}")));
        }
        if name.contains(['\t', ',', '|']) || name != name.trim() {
            return Err(Error::Manifest(format!(
                "{kind} name {name:?} contains a reserved character or stray whitespace"
            )));
        }
    }
    names.sort();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Manifest(format!("duplicate {kind} name {:?}", w[0])));
    }
    if names.is_empty() {
        return Err(Error::Manifest(format!("empty {kind} list")));
    }
    Ok(names)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(SplitTag::Train),
            "val" => Some(SplitTag::Val),
            "test" => Some(SplitTag::Test),
            _ => None,
        }
    }
}

/// One sample: a pointer into the feature store plus its (possibly partial)
/// labels. `None` is the unknown label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExampleRecord {
    pub example_id: String,
    pub feature_row: usize,
    pub state: Option<usize>,
    pub object: Option<usize>,
    pub split: SplitTag,
}

/// Label completeness of the train split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Every train record carries both labels.
    Full,
    /// Every train record carries exactly one label.
    Partial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    vocabulary: Vocabulary,
    records: Vec<ExampleRecord>,
    seen_compositions: BTreeSet<(usize, usize)>,
    regime: Regime,
}

impl DatasetManifest {
    /// Builds a manifest from parts, validating the record invariants.
    /// For fully labeled manifests the seen set is derived from the train
    /// records; `carried_seen` is only consulted for partial manifests.
    pub fn from_parts(
        vocabulary: Vocabulary,
        records: Vec<ExampleRecord>,
        carried_seen: Option<BTreeSet<(usize, usize)>>,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Manifest("no records".into()));
        }
        let mut ids = HashSet::new();
        let mut full_train = 0usize;
        let mut partial_train = 0usize;
        for rec in &records {
            if !ids.insert(rec.example_id.as_str()) {
                return Err(Error::Manifest(format!(
                    "duplicate example_id {:?}",
                    rec.example_id
                )));
            }
            if let Some(s) = rec.state {
                if s >= vocabulary.n_states() {
                    return Err(Error::Manifest(format!(
                        "record {:?}: state index {s} out of range",
                        rec.example_id
                    )));
                }
            }
            if let Some(o) = rec.object {
                if o >= vocabulary.n_objects() {
                    return Err(Error::Manifest(format!(
                        "record {:?}: object index {o} out of range",
                        rec.example_id
                    )));
                }
            }
            match rec.split {
                SplitTag::Train => match (rec.state, rec.object) {
                    (Some(_), Some(_)) => full_train += 1,
                    (None, None) => {
                        return Err(Error::Manifest(format!(
                            "train record {:?} has no labels at all",
                            rec.example_id
                        )))
                    }
                    _ => partial_train += 1,
                },
                SplitTag::Val | SplitTag::Test => {
                    if rec.state.is_none() || rec.object.is_none() {
                        return Err(Error::Manifest(format!(
                            "{} record {:?} must carry both labels",
                            rec.split.as_str(),
                            rec.example_id
                        )));
                    }
                }
            }
        }
        if full_train == 0 && partial_train == 0 {
            return Err(Error::Manifest("no train records".into()));
        }
        if full_train > 0 && partial_train > 0 {
            return Err(Error::Manifest(
                "train records mix full and partial labels".into(),
            ));
        }
        let regime = if partial_train > 0 {
            Regime::Partial
        } else {
            Regime::Full
        };
        let seen_compositions = match regime {
            Regime::Full => records
                .iter()
                .filter(|r| r.split == SplitTag::Train)
                .map(|r| (r.state.unwrap(), r.object.unwrap()))
                .collect(),
            Regime::Partial => {
                let seen = carried_seen.unwrap_or_default();
                for &(s, o) in &seen {
                    if s >= vocabulary.n_states() || o >= vocabulary.n_objects() {
                        return Err(Error::Manifest(format!(
                            "carried seen composition ({s},{o}) out of range"
                        )));
                    }
                }
                seen
            }
        };
        Ok(DatasetManifest {
            vocabulary,
            records,
            seen_compositions,
            regime,
        })
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn records(&self) -> &[ExampleRecord] {
        &self.records
    }

    pub fn split_records(&self, split: SplitTag) -> impl Iterator<Item = &ExampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Compositions observed fully labeled in train (or carried forward for
    /// partial manifests).
    pub fn seen_compositions(&self) -> &BTreeSet<(usize, usize)> {
        &self.seen_compositions
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    /// Checks that every feature_row points inside the store and the widths
    /// agree with `expected_dim` when given.
    pub fn validate_against(&self, store: &FeatureStore) -> Result<()> {
        for rec in &self.records {
            if rec.feature_row >= store.n_rows() {
                return Err(Error::Manifest(format!(
                    "record {:?}: feature_row {} out of bounds (store has {} rows)",
                    rec.example_id,
                    rec.feature_row,
                    store.n_rows()
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Manifest(msg) => Error::Manifest(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let states = parse_header(&mut lines, "#states:")?;
        let objects = parse_header(&mut lines, "#objects:")?;
        let vocabulary = Vocabulary::new(states, objects)?;

        let mut carried_seen: Option<BTreeSet<(usize, usize)>> = None;
        let mut records = Vec::new();
        let mut pending: Vec<(usize, &str)> = Vec::new();
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            pending.push((lineno, line));
        }
        for (i, (lineno, line)) in pending.iter().enumerate() {
            if let Some(rest) = line.strip_prefix("#seen:") {
                if i != 0 {
                    return Err(Error::Manifest(format!(
                        "line {}: #seen header must directly follow the vocabulary headers",
                        lineno + 1
                    )));
                }
                let mut seen = BTreeSet::new();
                for pair in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                    let (s, o) = pair.split_once('|').ok_or_else(|| {
                        Error::Manifest(format!("line {}: malformed seen pair {pair:?}", lineno + 1))
                    })?;
                    let s = vocabulary.state_index(s.trim()).ok_or_else(|| {
                        Error::Manifest(format!("line {}: unknown state {s:?}", lineno + 1))
                    })?;
                    let o = vocabulary.object_index(o.trim()).ok_or_else(|| {
                        Error::Manifest(format!("line {}: unknown object {o:?}", lineno + 1))
                    })?;
                    seen.insert((s, o));
                }
                carried_seen = Some(seen);
                continue;
            }
            if line.starts_with('#') {
                return Err(Error::Manifest(format!(
                    "line {}: unknown header {line:?}",
                    lineno + 1
                )));
            }
            records.push(parse_record(&vocabulary, *lineno, line)?);
        }
        Self::from_parts(vocabulary, records, carried_seen)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Canonical text serialization; byte-stable for identical manifests.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "#states: {}", self.vocabulary.states.join(","));
        let _ = writeln!(out, "#objects: {}", self.vocabulary.objects.join(","));
        if self.regime == Regime::Partial && !self.seen_compositions.is_empty() {
            let pairs: Vec<String> = self
                .seen_compositions
                .iter()
                .map(|&(s, o)| {
                    format!(
                        "{}|{}",
                        self.vocabulary.states[s], self.vocabulary.objects[o]
                    )
                })
                .collect();
            let _ = writeln!(out, "#seen: {}", pairs.join(","));
        }
        for rec in &self.records {
            let state = rec
                .state
                .map(|s| self.vocabulary.states[s].as_str())
                .unwrap_or("?");
            let object = rec
                .object
                .map(|o| self.vocabulary.objects[o].as_str())
                .unwrap_or("?");
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                rec.example_id,
                rec.feature_row,
                state,
                object,
                rec.split.as_str()
            );
        }
        out
    }
}

fn parse_header<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    prefix: &str,
) -> Result<Vec<String>> {
    loop {
        match lines.next() {
            Some((_, line)) if line.trim().is_empty() => continue,
            Some((lineno, line)) => {
                let rest = line.strip_prefix(prefix).ok_or_else(|| {
                    Error::Manifest(format!(
                        "line {}: expected {prefix} header, got {line:?}",
                        lineno + 1
                    ))
                })?;
                return Ok(rest
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect());
            }
            None => return Err(Error::Manifest("no records".into())),
        }
    }
}

fn parse_record(vocab: &Vocabulary, lineno: usize, line: &str) -> Result<ExampleRecord> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 5 {
        return Err(Error::Manifest(format!(
            "line {}: expected 5 tab-separated fields, got {}",
            lineno + 1,
            fields.len()
        )));
    }
    let example_id = fields[0].to_string();
    if example_id.is_empty() {
        return Err(Error::Manifest(format!("line {}: empty example_id", lineno + 1)));
    }
    let feature_row: usize = fields[1].parse().map_err(|_| {
        Error::Manifest(format!(
            "line {}: invalid feature_row {:?}",
            lineno + 1,
            fields[1]
        ))
    })?;
    let state = match fields[2] {
        "?" => None,
        name => Some(vocab.state_index(name).ok_or_else(|| {
            Error::Manifest(format!(
                "line {}: state {name:?} not in vocabulary",
                lineno + 1
            ))
        })?),
    };
    let object = match fields[3] {
        "?" => None,
        name => Some(vocab.object_index(name).ok_or_else(|| {
            Error::Manifest(format!(
                "line {}: object {name:?} not in vocabulary",
                lineno + 1
            ))
        })?),
    };
    let split = SplitTag::parse(fields[4]).ok_or_else(|| {
        Error::Manifest(format!(
            "line {}: invalid split tag {:?}",
            lineno + 1,
            fields[4]
        ))
    })?;
    Ok(ExampleRecord {
        example_id,
        feature_row,
        state,
        object,
        split,
    })
}
