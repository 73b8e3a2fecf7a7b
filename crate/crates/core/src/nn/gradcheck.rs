//! Central finite-difference verification of tape gradients. Test
//! infrastructure: the checks here are the independent oracle for every
//! differentiable operation in the crate.

use super::store::ParameterStore;
use super::tape::{NodeId, Tape};

/// Gradients where both sides sit below this are within the resolution of
/// central differences at eps=1e-5 and are auto-passed.
const FD_NOISE_FLOOR: f64 = 1e-6;

/// Max relative error between the analytic gradients already accumulated in
/// `store` and central finite differences of `f` over every element of every
/// parameter. `f` must be a pure function of the store's values.
pub fn max_relative_error<F>(store: &mut ParameterStore, mut f: F, eps: f64) -> f64
where
    F: FnMut(&ParameterStore) -> f64,
{
    let base_loss = f(store);
    assert!(base_loss.is_finite(), "loss is not finite");
    let mut worst: f64 = 0.0;
    for id in store.ids().collect::<Vec<_>>() {
        for j in 0..store.value(id).len() {
            let orig = store.value(id).data()[j];
            store.value_mut(id).data_mut()[j] = orig + eps;
            let up = f(store);
            store.value_mut(id).data_mut()[j] = orig - eps;
            let down = f(store);
            store.value_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = store.grad(id).data()[j];
            if numeric.abs() < FD_NOISE_FLOOR && analytic.abs() < FD_NOISE_FLOOR {
                continue;
            }
            let denom = numeric.abs().max(analytic.abs());
            worst = worst.max((numeric - analytic).abs() / denom);
        }
    }
    worst
}

/// Evaluate a tape-building closure and return the scalar loss value.
pub fn loss_value(
    store: &ParameterStore,
    build: impl Fn(&mut Tape, &ParameterStore) -> NodeId,
) -> f64 {
    let mut tape = Tape::new();
    let loss = build(&mut tape, store);
    tape.scalar_value(loss)
}

/// Zero gradients, run the closure, and backpropagate from its loss node.
pub fn accumulate_gradients(
    store: &mut ParameterStore,
    build: impl Fn(&mut Tape, &ParameterStore) -> NodeId,
) -> f64 {
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = build(&mut tape, store);
    let value = tape.scalar_value(loss);
    tape.backward(store, loss);
    value
}
