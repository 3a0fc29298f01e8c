//! Word-embedding table keyed by vocabulary names.
//!
//! File format: one `token v1 v2 ... vd` line per token, whitespace
//! separated, dimension inferred from the first line. Multiword vocabulary
//! names resolve through two fallbacks: the underscore-joined token first
//! (the usual convention in knowledge-graph embedding exports), else the
//! mean of whichever sub-token vectors exist.

use super::Vocabulary;
use crate::error::{Error, Result};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

/// How each vocabulary name was resolved.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ResolutionReport {
    /// Names found directly (single tokens, or the underscore-joined form).
    pub direct: usize,
    /// Names resolved by averaging sub-token vectors.
    pub averaged: usize,
}

/// Embedding vectors for every state and object name of one vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
    report: ResolutionReport,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn report(&self) -> ResolutionReport {
        self.report
    }

    /// Vector for a vocabulary name; present for every name by construction.
    pub fn vector(&self, name: &str) -> Option<&[f64]> {
        self.vectors.get(name).map(Vec::as_slice)
    }

    /// Resolves a vocabulary against an in-memory token map. `tokens` may
    /// contain entries the vocabulary never asks for; they are ignored.
    pub fn from_token_vectors(
        tokens: &HashMap<String, Vec<f64>>,
        vocab: &Vocabulary,
    ) -> Result<Self> {
        let mut dim = None;
        for (token, vec) in tokens {
            match dim {
                None => dim = Some(vec.len()),
                Some(d) if d != vec.len() => {
                    return Err(Error::Embeddings(format!(
                        "token {token:?} has {} components, expected {d}",
                        vec.len()
                    )))
                }
                _ => {}
            }
        }
        let dim = dim.ok_or_else(|| Error::Embeddings("no embedding vectors".into()))?;

        let mut vectors = BTreeMap::new();
        let mut report = ResolutionReport::default();
        let mut unresolved = Vec::new();
        let names = vocab.states().iter().chain(vocab.objects());
        for name in names {
            let joined = name.split_whitespace().collect::<Vec<_>>().join("_");
            if let Some(vec) = tokens.get(&joined) {
                report.direct += 1;
                vectors.insert(name.clone(), vec.clone());
                continue;
            }
            let found: Vec<&Vec<f64>> = name
                .split_whitespace()
                .filter_map(|sub| tokens.get(sub))
                .collect();
            if found.is_empty() {
                unresolved.push(name.clone());
                continue;
            }
            let mut mean = vec![0.0; dim];
            for vec in &found {
                for (m, &v) in mean.iter_mut().zip(vec.iter()) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= found.len() as f64;
            }
            report.averaged += 1;
            vectors.insert(name.clone(), mean);
        }
        if !unresolved.is_empty() {
            unresolved.sort();
            return Err(Error::Embeddings(format!(
                "unresolvable names (no token or sub-token present): {}",
                unresolved.join(", ")
            )));
        }
        Ok(EmbeddingTable {
            dim,
            vectors,
            report,
        })
    }
}

/// Streams an embedding file, keeping only the tokens the vocabulary can use.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary) -> Result<EmbeddingTable> {
    let mut needed: HashSet<String> = HashSet::new();
    for name in vocab.states().iter().chain(vocab.objects()) {
        needed.insert(name.split_whitespace().collect::<Vec<_>>().join("_"));
        for sub in name.split_whitespace() {
            needed.insert(sub.to_string());
        }
    }

    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut tokens: HashMap<String, Vec<f64>> = HashMap::new();
    let mut dim: Option<usize> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut fields = line.split_whitespace();
        let token = match fields.next() {
            Some(t) => t,
            None => continue, // blank line
        };
        let n_components = fields.clone().count();
        match dim {
            None => {
                if n_components == 0 {
                    return Err(Error::Embeddings(format!(
                        "{}: line {}: token {token:?} has no components",
                        path.display(),
                        lineno + 1
                    )));
                }
                dim = Some(n_components);
            }
            Some(d) if d != n_components => {
                return Err(Error::Embeddings(format!(
                    "{}: line {}: expected {d} components, got {n_components}",
                    path.display(),
                    lineno + 1
                )))
            }
            _ => {}
        }
        if !needed.contains(token) || tokens.contains_key(token) {
            continue; // irrelevant token, or an earlier line already defined it
        }
        let mut vec = Vec::with_capacity(n_components);
        for field in fields {
            let v: f64 = field.parse().map_err(|_| {
                Error::Embeddings(format!(
                    "{}: line {}: invalid component {field:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Embeddings(format!(
                    "{}: line {}: non-finite component",
                    path.display(),
                    lineno + 1
                )));
            }
            vec.push(v);
        }
        tokens.insert(token.to_string(), vec);
    }
    if dim.is_none() {
        return Err(Error::Embeddings(format!(
            "{}: no embedding vectors",
            path.display()
        )));
    }
    EmbeddingTable::from_token_vectors(&tokens, vocab)
}
