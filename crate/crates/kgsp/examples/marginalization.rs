//! Adapting a compositional scorer to primitive tasks: marginalize a
//! |S| x |O| composition score matrix into per-state and per-object scores
//! by row and column sums. The marginals of an outer product recover the
//! original factors.
//!
//! Run with: `cargo run --example marginalization`

use kgsp::eval::{joint_scores, marginalize};
use kgsp::tensor::Tensor;

fn main() {
    // A compositional model's scores over 3 states x 4 objects for one image.
    let comp = Tensor::matrix(
        3,
        4,
        vec![
            0.02, 0.10, 0.05, 0.03, //
            0.30, 0.05, 0.15, 0.05, //
            0.05, 0.10, 0.05, 0.05,
        ],
    )
    .unwrap();
    let (state_scores, object_scores) = marginalize(&comp).unwrap();
    println!("state marginals:  {state_scores:?}");
    println!("object marginals: {object_scores:?}");

    // Independent per-primitive probabilities produce an outer-product joint
    // matrix; marginalizing it gives the factors back.
    let p_state = [0.6, 0.3, 0.1];
    let p_object = [0.4, 0.3, 0.2, 0.1];
    let joint = joint_scores(&p_state, &p_object).unwrap();
    let (s, o) = marginalize(&joint).unwrap();
    println!("recovered state factor:  {s:?}");
    println!("recovered object factor: {o:?}");
    for (a, b) in s.iter().zip(&p_state) {
        assert!((a - b).abs() < 1e-12);
    }
    for (a, b) in o.iter().zip(&p_object) {
        assert!((a - b).abs() < 1e-12);
    }
}
