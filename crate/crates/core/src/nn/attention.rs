//! Additive attention: e_j = v . tanh(Wa s + Ua h_j), weights = softmax(e),
//! context = sum_j weights_j h_j.

use super::store::{Init, ParamId, ParameterStore};
use super::tape::{NodeId, Tape};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Attention {
    wa: ParamId,
    ua: ParamId,
    v: ParamId,
}

impl Attention {
    pub fn register(
        store: &mut ParameterStore,
        prefix: &str,
        state_size: usize,
        enc_size: usize,
        attn_size: usize,
    ) -> Result<Self> {
        Ok(Attention {
            wa: store.register(&format!("{prefix}.wa"), attn_size, state_size, Init::Uniform)?,
            ua: store.register(&format!("{prefix}.ua"), attn_size, enc_size, Init::Uniform)?,
            v: store.register(&format!("{prefix}.v"), 1, attn_size, Init::Uniform)?,
        })
    }

    /// Score encoder states against `s_prev`; returns (context, weights).
    pub fn apply(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        s_prev: NodeId,
        enc_states: &[NodeId],
    ) -> Result<(NodeId, NodeId)> {
        if enc_states.is_empty() {
            return Err(Error::shape("attention", "no encoder states"));
        }
        let pwa = tape.param(self.wa);
        let pua = tape.param(self.ua);
        let ws = tape.matvec(store, pwa, s_prev);
        let v = tape.embed(store, self.v, 0);
        let mut scores = Vec::with_capacity(enc_states.len());
        for h in enc_states {
            let uh = tape.matvec(store, pua, *h);
            let s = tape.add(ws, uh);
            let t = tape.tanh_of(s);
            scores.push(tape.dot(v, t));
        }
        let stacked = tape.stack(&scores);
        let weights = tape.softmax_node(stacked);
        let context = tape.weighted_combine(weights, enc_states);
        Ok((context, weights))
    }
}

/// Plain forward attention over raw vectors.
pub fn attention(
    store: &ParameterStore,
    params: &Attention,
    s_prev: &[f64],
    enc_states: &[Vec<f64>],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut tape = Tape::new();
    let s = tape.input(s_prev);
    let hs: Vec<NodeId> = enc_states.iter().map(|h| tape.input(h)).collect();
    let (ctx, w) = params.apply(&mut tape, store, s, &hs)?;
    Ok((tape.value(ctx).to_vec(), tape.value(w).to_vec()))
}
