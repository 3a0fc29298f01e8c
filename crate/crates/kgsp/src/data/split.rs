//! Partial-supervision split: keep only the object label for half of the
//! train records and only the state label for the other half, while making
//! sure every trainable state still appears among the state-labeled records
//! and every trainable object among the object-labeled ones.
//!
//! Procedure: seeded uniform shuffle, alternate halves, then greedy pairwise
//! swaps until coverage holds; a handful of reshuffle attempts deal with
//! unlucky initial assignments. Fully deterministic given the seed.

use super::{DatasetManifest, Regime, SplitTag};
use crate::error::{Error, Result};
use crate::rng::substream;
use rand::seq::SliceRandom;
use std::collections::{BTreeMap, BTreeSet};

const MAX_ATTEMPTS: usize = 32;

pub fn make_pczsl_split(manifest: &DatasetManifest, seed: u64) -> Result<DatasetManifest> {
    if manifest.regime() != Regime::Full {
        return Err(Error::Split(
            "manifest train records are already partially labeled".into(),
        ));
    }
    let vocab = manifest.vocabulary();
    let records = manifest.records();
    let train_idx: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.split == SplitTag::Train)
        .map(|(i, _)| i)
        .collect();

    let present_states: BTreeSet<usize> =
        train_idx.iter().map(|&i| records[i].state.unwrap()).collect();
    let present_objects: BTreeSet<usize> =
        train_idx.iter().map(|&i| records[i].object.unwrap()).collect();

    // A class that is evaluated (val/test) but never trainable is a dataset
    // defect: the coverage guarantee cannot mean anything for it.
    let mut missing = Vec::new();
    for rec in records.iter().filter(|r| r.split != SplitTag::Train) {
        let s = rec.state.unwrap();
        let o = rec.object.unwrap();
        if !present_states.contains(&s) {
            missing.push(format!("state {:?}", vocab.states()[s]));
        }
        if !present_objects.contains(&o) {
            missing.push(format!("object {:?}", vocab.objects()[o]));
        }
    }
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(Error::Split(format!(
            "zero train samples for evaluated classes: {}",
            missing.join(", ")
        )));
    }

    let mut rng = substream(seed, "split");
    let mut last_uncovered = String::new();
    for _ in 0..MAX_ATTEMPTS {
        let mut order = train_idx.clone();
        order.shuffle(&mut rng);

        // Even shuffle positions keep the object label, odd keep the state.
        let mut keeps_object: BTreeMap<usize, bool> = BTreeMap::new();
        for (pos, &ri) in order.iter().enumerate() {
            keeps_object.insert(ri, pos % 2 == 0);
        }

        let mut state_count: BTreeMap<usize, usize> = BTreeMap::new();
        let mut object_count: BTreeMap<usize, usize> = BTreeMap::new();
        for (&ri, &obj) in &keeps_object {
            if obj {
                *object_count.entry(records[ri].object.unwrap()).or_insert(0) += 1;
            } else {
                *state_count.entry(records[ri].state.unwrap()).or_insert(0) += 1;
            }
        }

        let covered = |counts: &BTreeMap<usize, usize>, class: usize| {
            counts.get(&class).copied().unwrap_or(0) > 0
        };

        let mut stuck = false;
        loop {
            let uncovered_state = present_states
                .iter()
                .find(|&&s| !covered(&state_count, s))
                .copied();
            let uncovered_object = present_objects
                .iter()
                .find(|&&o| !covered(&object_count, o))
                .copied();
            if uncovered_state.is_none() && uncovered_object.is_none() {
                break;
            }

            let mut swapped = false;
            if let Some(s) = uncovered_state {
                // Move a record with state s into the state half, swapping a
                // safely removable partner the other way.
                'search: for &r in &train_idx {
                    if !keeps_object[&r] || records[r].state.unwrap() != s {
                        continue;
                    }
                    let r_object = records[r].object.unwrap();
                    for &b in &train_idx {
                        if keeps_object[&b] {
                            continue;
                        }
                        let b_state = records[b].state.unwrap();
                        let b_object = records[b].object.unwrap();
                        if state_count[&b_state] < 2 {
                            continue;
                        }
                        let objects_after = object_count[&r_object] - 1
                            + usize::from(b_object == r_object);
                        if objects_after == 0 {
                            continue;
                        }
                        keeps_object.insert(r, false);
                        keeps_object.insert(b, true);
                        *state_count.entry(s).or_insert(0) += 1;
                        *state_count.get_mut(&b_state).unwrap() -= 1;
                        *object_count.get_mut(&r_object).unwrap() -= 1;
                        *object_count.entry(b_object).or_insert(0) += 1;
                        swapped = true;
                        break 'search;
                    }
                }
            }
            if !swapped {
                if let Some(o) = uncovered_object {
                    'search: for &r in &train_idx {
                        if keeps_object[&r] || records[r].object.unwrap() != o {
                            continue;
                        }
                        let r_state = records[r].state.unwrap();
                        for &b in &train_idx {
                            if !keeps_object[&b] {
                                continue;
                            }
                            let b_state = records[b].state.unwrap();
                            let b_object = records[b].object.unwrap();
                            if object_count[&b_object] < 2 {
                                continue;
                            }
                            let states_after = state_count[&r_state] - 1
                                + usize::from(b_state == r_state);
                            if states_after == 0 {
                                continue;
                            }
                            keeps_object.insert(r, true);
                            keeps_object.insert(b, false);
                            *object_count.entry(o).or_insert(0) += 1;
                            *object_count.get_mut(&b_object).unwrap() -= 1;
                            *state_count.get_mut(&r_state).unwrap() -= 1;
                            *state_count.entry(b_state).or_insert(0) += 1;
                            swapped = true;
                            break 'search;
                        }
                    }
                }
            }
            if !swapped {
                let mut names = Vec::new();
                if let Some(s) = uncovered_state {
                    names.push(format!("state {:?}", vocab.states()[s]));
                }
                if let Some(o) = uncovered_object {
                    names.push(format!("object {:?}", vocab.objects()[o]));
                }
                last_uncovered = names.join(", ");
                stuck = true;
                break;
            }
        }
        if stuck {
            continue;
        }

        let mut new_records = records.to_vec();
        for (&ri, &obj) in &keeps_object {
            if obj {
                new_records[ri].state = None;
            } else {
                new_records[ri].object = None;
            }
        }
        return DatasetManifest::from_parts(
            vocab.clone(),
            new_records,
            Some(manifest.seen_compositions().clone()),
        );
    }
    Err(Error::Split(format!(
        "coverage impossible after {MAX_ATTEMPTS} attempts; could not cover {last_uncovered}"
    )))
}
