//! Verifies the recorded backward pass of a full classifier head against
//! central finite differences, parameter by parameter.
//!
//! Run with: `cargo run --example gradcheck`

use kgsp::model::PrimitiveHead;
use kgsp::rng::substream;
use kgsp::tensor::{softmax_cross_entropy, Mode, Tape, Tensor};
use rand::Rng;

fn loss_of(head: &PrimitiveHead, features: &Tensor, targets: &[usize]) -> f64 {
    let logits = head.logits(features, Mode::Eval, None).unwrap();
    softmax_cross_entropy(&logits, targets).unwrap()
}

fn main() {
    let mut rng = substream(7, "init");
    let (input_dim, batch) = (7, 3);
    let mut head = PrimitiveHead::new(input_dim, &[6, 5], 4, 0.0, &mut rng).unwrap();
    let mut data_rng = substream(7, "data");
    let values: Vec<f64> = (0..batch * input_dim)
        .map(|_| data_rng.random::<f64>() * 4.0 - 2.0)
        .collect();
    let features = Tensor::matrix(batch, input_dim, values).unwrap();
    let targets = [0usize, 2, 3];
    let opt_targets: Vec<Option<usize>> = targets.iter().map(|&t| Some(t)).collect();

    // Analytic gradients from one recorded forward/backward pass.
    let mut tape = Tape::new();
    let param_ids = head.push_params(&mut tape);
    let x = tape.leaf(features.clone());
    let mut dropout_rng = substream(7, "dropout");
    let logits = head
        .logits_on_tape(&mut tape, &param_ids, x, Mode::Train, &mut dropout_rng)
        .unwrap();
    let loss = tape.softmax_cross_entropy(logits, &opt_targets).unwrap();
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<Tensor> = param_ids
        .iter()
        .map(|&id| grads.get(id, tape.value(id).shape()))
        .collect();

    // Central finite differences on every single parameter.
    let h = 1e-5;
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    let n_params = head.params().len();
    for p in 0..n_params {
        for i in 0..analytic[p].len() {
            let original = head.params()[p].values()[i];
            head.params_mut()[p].values_mut()[i] = original + h;
            let plus = loss_of(&head, &features, &targets);
            head.params_mut()[p].values_mut()[i] = original - h;
            let minus = loss_of(&head, &features, &targets);
            head.params_mut()[p].values_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[p].values()[i];
            let rel = (a - numeric).abs() / (a.abs().max(numeric.abs()) + 1e-6);
            max_rel = max_rel.max(rel);
            checked += 1;
        }
    }
    println!("checked {checked} parameters; max relative error {max_rel:.3e}");
    assert!(max_rel < 1e-4);
    println!("analytic gradients agree with finite differences");
}
