//! The Gumbel-max trick: adding independent Gumbel noise to log-weights and
//! taking the argmax samples exactly from the normalized weights. Used to
//! draw hard pseudo-labels from feasibility-reweighted probabilities.
//!
//! Run with: `cargo run --example gumbel_sampling`

use kgsp::rng::substream;
use kgsp::train::{gumbel_sample, kg_pseudo_label};

fn main() {
    let weights = [2.0, 1.0, 0.0, 0.5];
    let total: f64 = weights.iter().sum();
    let draws = 200_000;

    let mut rng = substream(42, "gumbel");
    let mut counts = vec![0usize; weights.len()];
    for _ in 0..draws {
        counts[gumbel_sample(&weights, &mut rng).unwrap()] += 1;
    }
    println!("weights {weights:?} over {draws} draws:");
    for (k, (&w, &c)) in weights.iter().zip(&counts).enumerate() {
        println!(
            "  class {k}: exact {:.4}  empirical {:.4}",
            w / total,
            c as f64 / draws as f64
        );
    }
    assert_eq!(counts[2], 0, "zero-weight classes are never sampled");

    // Pseudo-labeling composes model probabilities with a feasibility slice;
    // infeasible classes drop out of the draw entirely.
    let probs = [0.5, 0.3, 0.15, 0.05];
    let slice = [1.0, 0.0, 1.0, 1.0]; // class 1 infeasible
    let mut counts = vec![0usize; probs.len()];
    for _ in 0..draws {
        let label = kg_pseudo_label(&probs, &slice, &mut rng).unwrap().unwrap();
        counts[label.class] += 1;
    }
    println!("probs {probs:?} * slice {slice:?}:");
    let feasible_mass: f64 = probs
        .iter()
        .zip(&slice)
        .map(|(&p, &w)| p * w)
        .sum();
    for (k, &c) in counts.iter().enumerate() {
        println!(
            "  class {k}: exact {:.4}  empirical {:.4}",
            probs[k] * slice[k] / feasible_mass,
            c as f64 / draws as f64
        );
    }
    assert_eq!(counts[1], 0);
}
