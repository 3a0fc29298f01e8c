//! Synthetic dataset generator for end-to-end runs with known ground truth.
//!
//! Features are a concatenation of a per-state signal block and a per-object
//! signal block plus Gaussian noise, so the two primitives are separable by
//! construction and a sound pipeline must learn them. The generator can pad
//! the object vocabulary with classes that never occur in any image; the
//! emitted oracle feasibility matrix scores every generated composition 1
//! and every padded one -1, giving masking experiments an exact ground
//! truth.

use crate::data::{DatasetManifest, ExampleRecord, FeatureStore, SplitTag, Vocabulary};
use crate::error::{Error, Result};
use crate::feasibility::{FeasibilityMatrix, Provenance};
use crate::rng::substream;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeSet;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_states: usize,
    /// Objects that actually occur in images.
    pub n_objects: usize,
    /// Extra object names with no images and oracle score -1.
    pub pad_objects: usize,
    pub state_dim: usize,
    pub object_dim: usize,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    pub n_seen: usize,
    pub train_per_seen: usize,
    pub test_per_comp: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_states: 8,
            n_objects: 10,
            pad_objects: 0,
            state_dim: 16,
            object_dim: 16,
            noise: 0.25,
            n_seen: 40,
            train_per_seen: 40,
            test_per_comp: 5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.n_states < 2 || self.n_objects < 2 {
            return Err(Error::InvalidArgument(
                "need at least 2 states and 2 objects".into(),
            ));
        }
        if self.state_dim == 0 || self.object_dim == 0 {
            return Err(Error::InvalidArgument("signal dims must be positive".into()));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise must be finite and >= 0, got {}",
                self.noise
            )));
        }
        let total = self.n_states * self.n_objects;
        if self.n_seen < self.n_states.max(self.n_objects) {
            return Err(Error::InvalidArgument(format!(
                "{} seen compositions cannot cover {} states and {} objects",
                self.n_seen, self.n_states, self.n_objects
            )));
        }
        if self.n_seen >= total {
            return Err(Error::InvalidArgument(format!(
                "{} seen compositions leave no unseen composition in a {}x{} space",
                self.n_seen, self.n_states, self.n_objects
            )));
        }
        if self.train_per_seen == 0 || self.test_per_comp == 0 {
            return Err(Error::InvalidArgument(
                "train_per_seen and test_per_comp must be positive".into(),
            ));
        }
        Ok(())
    }
}

pub struct SynthOutput {
    pub manifest: DatasetManifest,
    pub features: FeatureStore,
    pub oracle: FeasibilityMatrix,
}

pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = substream(spec.seed, "synth");
    let dim = spec.state_dim + spec.object_dim;

    let state_names: Vec<String> = (0..spec.n_states).map(|i| format!("s{i:03}")).collect();
    let object_names: Vec<String> = (0..spec.n_objects + spec.pad_objects)
        .map(|i| format!("o{i:03}"))
        .collect();
    let vocab = Vocabulary::new(state_names, object_names)?;

    let state_protos: Vec<Vec<f64>> = (0..spec.n_states)
        .map(|_| (0..spec.state_dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let object_protos: Vec<Vec<f64>> = (0..spec.n_objects)
        .map(|_| (0..spec.object_dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();

    // Seen set: a shuffled diagonal cover guarantees every state and object
    // appears, then random fill up to the requested count.
    let mut states: Vec<usize> = (0..spec.n_states).collect();
    let mut objects: Vec<usize> = (0..spec.n_objects).collect();
    states.shuffle(&mut rng);
    objects.shuffle(&mut rng);
    let mut seen: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut i = 0usize;
    while seen.len() < spec.n_states.max(spec.n_objects) {
        seen.insert((states[i % spec.n_states], objects[i % spec.n_objects]));
        i += 1;
        if i > 4 * spec.n_states * spec.n_objects {
            return Err(Error::InvalidArgument(
                "could not construct a covering seen set".into(),
            ));
        }
    }
    let mut all_pairs: Vec<(usize, usize)> = (0..spec.n_states)
        .flat_map(|s| (0..spec.n_objects).map(move |o| (s, o)))
        .collect();
    all_pairs.shuffle(&mut rng);
    for pair in all_pairs {
        if seen.len() >= spec.n_seen {
            break;
        }
        seen.insert(pair);
    }

    let mut records = Vec::new();
    let mut values: Vec<f32> = Vec::new();
    let mut row = 0usize;
    let mut emit = |rng: &mut crate::rng::Stream,
                    values: &mut Vec<f32>,
                    records: &mut Vec<ExampleRecord>,
                    s: usize,
                    o: usize,
                    split: SplitTag,
                    id: String| {
        for d in 0..dim {
            let proto = if d < spec.state_dim {
                state_protos[s][d]
            } else {
                object_protos[o][d - spec.state_dim]
            };
            let n: f64 = rng.sample(StandardNormal);
            values.push((proto + spec.noise * n) as f32);
        }
        records.push(ExampleRecord {
            example_id: id,
            feature_row: row,
            state: Some(s),
            object: Some(o),
            split,
        });
        row += 1;
    };

    let mut counter = 0usize;
    for &(s, o) in &seen {
        for _ in 0..spec.train_per_seen {
            emit(
                &mut rng,
                &mut values,
                &mut records,
                s,
                o,
                SplitTag::Train,
                format!("tr{counter:06}"),
            );
            counter += 1;
        }
    }
    let mut counter = 0usize;
    for s in 0..spec.n_states {
        for o in 0..spec.n_objects {
            for _ in 0..spec.test_per_comp {
                emit(
                    &mut rng,
                    &mut values,
                    &mut records,
                    s,
                    o,
                    SplitTag::Test,
                    format!("te{counter:06}"),
                );
                counter += 1;
            }
        }
    }

    let features = FeatureStore::new(row, dim, values)?;
    let manifest = DatasetManifest::from_parts(vocab, records, None)?;

    let total_objects = spec.n_objects + spec.pad_objects;
    let mut scores = Vec::with_capacity(spec.n_states * total_objects);
    for _s in 0..spec.n_states {
        for o in 0..total_objects {
            scores.push(if o < spec.n_objects { 1.0 } else { -1.0 });
        }
    }
    let oracle = FeasibilityMatrix::new(spec.n_states, total_objects, scores, Provenance::Oracle)?;

    Ok(SynthOutput {
        manifest,
        features,
        oracle,
    })
}
