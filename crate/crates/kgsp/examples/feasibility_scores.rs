//! Scores the feasibility of every (state, object) composition from word
//! embeddings, two ways: pairwise cosine against external vectors, and
//! nearest-seen-neighbor similarity. Shows the strict mask and the
//! pseudo-label weight slices derived from the scores.
//!
//! Run with: `cargo run --example feasibility_scores`

use kgsp::data::{EmbeddingTable, Vocabulary};
use kgsp::eval::predict;
use kgsp::feasibility::{
    compcos_feasibility, feasibility_mask, knowledge_feasibility, pseudo_weight_slices,
};
use std::collections::{BTreeSet, HashMap};

fn main() {
    let vocab = Vocabulary::new(
        ["dry", "ripe", "wet"].map(String::from),
        ["apple", "car", "dog"].map(String::from),
    )
    .unwrap();

    // Tiny hand-made embedding space: food-ish, vehicle-ish, animal-ish and
    // a wetness direction.
    let tokens: HashMap<String, Vec<f64>> = [
        ("dry", vec![0.1, 0.2, 0.3, -0.9]),
        ("ripe", vec![0.9, -0.1, -0.2, 0.0]),
        ("wet", vec![0.0, 0.3, 0.4, 0.9]),
        ("apple", vec![0.95, 0.0, 0.1, 0.1]),
        ("car", vec![-0.1, 0.9, 0.1, 0.2]),
        ("dog", vec![0.0, 0.1, 0.9, 0.3]),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let table = EmbeddingTable::from_token_vectors(&tokens, &vocab).unwrap();

    let knowledge = knowledge_feasibility(&table, &vocab).unwrap();
    println!("knowledge scores (cosine of state and object vectors):");
    for (s, state) in vocab.states().iter().enumerate() {
        for (o, object) in vocab.objects().iter().enumerate() {
            print!("  {state} {object}: {:+.3}", knowledge.score(s, o));
        }
        println!();
    }

    let mask = feasibility_mask(&knowledge, 0.0).unwrap();
    println!(
        "strict mask at threshold 0 keeps {}/{} compositions",
        mask.n_allowed(),
        vocab.n_compositions()
    );

    // Masking in action: a classifier pair that narrowly favors an
    // infeasible composition gets redirected to the best feasible one.
    let state_probs = [0.30, 0.42, 0.28]; // leans "ripe"
    let object_probs = [0.35, 0.20, 0.45]; // leans "dog"
    let free = predict(&state_probs, &object_probs, None).unwrap();
    let masked = predict(&state_probs, &object_probs, Some(&mask)).unwrap();
    let name = |(s, o): (usize, usize)| {
        format!("{} {}", vocab.states()[s], vocab.objects()[o])
    };
    println!("argmax without mask: {}", name(free));
    println!("argmax with mask:    {}", name(masked));

    // Pseudo-label weights for a record whose object is known to be "dog":
    // the per-state column with non-positive scores clamped away.
    let dog = vocab.object_index("dog").unwrap();
    let weights = pseudo_weight_slices(&knowledge, None, Some(dog)).unwrap();
    println!("state pseudo-label weights given object \"dog\": {weights:?}");

    // The seen-set estimator only needs which compositions were observed.
    let seen: BTreeSet<(usize, usize)> = [
        (vocab.state_index("ripe").unwrap(), vocab.object_index("apple").unwrap()),
        (vocab.state_index("wet").unwrap(), vocab.object_index("dog").unwrap()),
        (vocab.state_index("dry").unwrap(), vocab.object_index("car").unwrap()),
    ]
    .into_iter()
    .collect();
    let neighbor = compcos_feasibility(&table, &vocab, &seen).unwrap();
    println!("seen-neighbor scores (seen pairs score 1):");
    for (s, state) in vocab.states().iter().enumerate() {
        for (o, object) in vocab.objects().iter().enumerate() {
            print!("  {state} {object}: {:+.3}", neighbor.score(s, o));
        }
        println!();
    }
}
