//! Numerical kernel: dense arrays, a reverse-mode tape, GRU cells, additive
//! attention, stable softmax/cross-entropy, Adam, and checkpoint I/O.

pub mod adam;
pub mod array;
pub mod attention;
pub mod checkpoint;
pub mod gradcheck;
pub mod gru;
pub mod ops;
pub mod store;
pub mod tape;

pub use adam::{clip_gradients, Adam, AdamConfig};
pub use array::Array2;
pub use attention::{attention, Attention};
pub use gru::{gru_step, GruCell, GruStack};
pub use ops::{reparameterize, softmax, softmax_xent};
pub use store::{Init, ParamId, ParameterStore};
pub use tape::{gauss_kl_value, NodeId, Tape};

#[cfg(test)]
mod tests {
    use super::gradcheck::{accumulate_gradients, loss_value, max_relative_error};
    use super::store::Init;
    use super::tape::Tape;
    use super::*;

    #[test]
    fn gru_step_gradient_matches_finite_differences() {
        let mut store = ParameterStore::new(11);
        let cell = GruCell::register(&mut store, "g", 2, 2).unwrap();
        let build = move |tape: &mut Tape, store: &ParameterStore| {
            let h = tape.input(&[0.3, -0.4]);
            let x = tape.input(&[0.9, 0.1]);
            let out = cell.step(tape, store, h, x).unwrap();
            let probe = tape.input(&[1.0, -2.0]);
            tape.dot(out, probe)
        };
        accumulate_gradients(&mut store, &build);
        let err = max_relative_error(&mut store, |s| loss_value(s, &build), 1e-5);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn attention_gradient_matches_finite_differences() {
        let mut store = ParameterStore::new(13);
        let att = Attention::register(&mut store, "a", 2, 2, 3).unwrap();
        let build = move |tape: &mut Tape, store: &ParameterStore| {
            let s = tape.input(&[0.5, -0.2]);
            let h1 = tape.input(&[0.1, 0.7]);
            let h2 = tape.input(&[-0.3, 0.4]);
            let h3 = tape.input(&[0.9, -0.8]);
            let (ctx, _) = att.apply(tape, store, s, &[h1, h2, h3]).unwrap();
            let probe = tape.input(&[0.6, 1.4]);
            tape.dot(ctx, probe)
        };
        accumulate_gradients(&mut store, &build);
        let err = max_relative_error(&mut store, |s| loss_value(s, &build), 1e-5);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn softmax_xent_and_kl_gradients_match_finite_differences() {
        let mut store = ParameterStore::new(17);
        let w = store.register("w", 4, 3, Init::Uniform).unwrap();
        let proj = store.register("proj", 2, 3, Init::Uniform).unwrap();
        let build = move |tape: &mut Tape, store: &ParameterStore| {
            let x = tape.input(&[0.2, -0.5, 0.8]);
            let pw = tape.param(w);
            let logits = tape.matvec(store, pw, x);
            let xent = tape.softmax_xent(logits, &[1, 3]);
            let pp = tape.param(proj);
            let mu_q = tape.matvec(store, pp, x);
            let lv_q = tape.affine(mu_q, 0.3, -0.1);
            let mu_p = tape.input(&[0.05, -0.02]);
            let lv_p = tape.input(&[0.1, 0.2]);
            let kl = tape.gauss_kl(mu_p, lv_p, mu_q, lv_q);
            tape.add(xent, kl)
        };
        accumulate_gradients(&mut store, build);
        let err = max_relative_error(&mut store, |s| loss_value(s, build), 1e-5);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn reparameterize_on_tape_matches_plain_helper() {
        let mut tape = Tape::new();
        let mu = tape.input(&[1.0, -0.5]);
        let lv = tape.input(&[0.4, -1.2]);
        let eps = tape.input(&[0.3, 2.0]);
        let half_lv = tape.affine(lv, 0.5, 0.0);
        let sigma = tape.exp_of(half_lv);
        let noise = tape.mul(sigma, eps);
        let z = tape.add(mu, noise);
        let plain = reparameterize(&[1.0, -0.5], &[0.4, -1.2], &[0.3, 2.0]);
        assert_eq!(tape.value(z), &plain[..]);
    }
}
