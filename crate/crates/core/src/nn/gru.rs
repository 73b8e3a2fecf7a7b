//! Gated recurrent unit with the standard two-gate formulation:
//! z = sigm(Wz x + Uz h + bz), r = sigm(Wr x + Ur h + br),
//! c = tanh(Wh x + Uh (r*h) + bh), h' = (1-z)*h + z*c.

use super::store::{Init, ParamId, ParameterStore};
use super::tape::{NodeId, Tape};
use crate::error::{Error, Result};

/// Parameter handles for one GRU layer.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub input_size: usize,
    pub hidden_size: usize,
    wz: ParamId,
    uz: ParamId,
    bz: ParamId,
    wr: ParamId,
    ur: ParamId,
    br: ParamId,
    wh: ParamId,
    uh: ParamId,
    bh: ParamId,
}

impl GruCell {
    /// Register the nine weight/bias arrays under `prefix`.
    pub fn register(
        store: &mut ParameterStore,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
    ) -> Result<Self> {
        let w = |store: &mut ParameterStore, n: &str| {
            store.register(&format!("{prefix}.{n}"), hidden_size, input_size, Init::Uniform)
        };
        let u = |store: &mut ParameterStore, n: &str| {
            store.register(&format!("{prefix}.{n}"), hidden_size, hidden_size, Init::Uniform)
        };
        let b = |store: &mut ParameterStore, n: &str| {
            store.register(&format!("{prefix}.{n}"), 1, hidden_size, Init::Zeros)
        };
        Ok(GruCell {
            input_size,
            hidden_size,
            wz: w(store, "wz")?,
            uz: u(store, "uz")?,
            bz: b(store, "bz")?,
            wr: w(store, "wr")?,
            ur: u(store, "ur")?,
            br: b(store, "br")?,
            wh: w(store, "wh")?,
            uh: u(store, "uh")?,
            bh: b(store, "bh")?,
        })
    }

    /// One recurrence step on the tape.
    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        h_prev: NodeId,
        x: NodeId,
    ) -> Result<NodeId> {
        if tape.value(h_prev).len() != self.hidden_size {
            return Err(Error::shape(
                "gru_step",
                format!(
                    "h_prev has {} entries, cell expects {}",
                    tape.value(h_prev).len(),
                    self.hidden_size
                ),
            ));
        }
        if tape.value(x).len() != self.input_size {
            return Err(Error::shape(
                "gru_step",
                format!(
                    "input has {} entries, cell expects {}",
                    tape.value(x).len(),
                    self.input_size
                ),
            ));
        }
        let gate = |tape: &mut Tape, w: ParamId, u: ParamId, b: ParamId, hx: NodeId| {
            let pw = tape.param(w);
            let pu = tape.param(u);
            let wx = tape.matvec(store, pw, x);
            let uh = tape.matvec(store, pu, hx);
            let bias = tape.embed(store, b, 0);
            let s = tape.add(wx, uh);
            tape.add(s, bias)
        };
        let z_pre = gate(tape, self.wz, self.uz, self.bz, h_prev);
        let z = tape.sigmoid(z_pre);
        let r_pre = gate(tape, self.wr, self.ur, self.br, h_prev);
        let r = tape.sigmoid(r_pre);
        let rh = tape.mul(r, h_prev);
        let c_pre = gate(tape, self.wh, self.uh, self.bh, rh);
        let c = tape.tanh_of(c_pre);
        // h' = (1-z)*h + z*c
        let one_minus_z = tape.affine(z, -1.0, 1.0);
        let keep = tape.mul(one_minus_z, h_prev);
        let write = tape.mul(z, c);
        Ok(tape.add(keep, write))
    }
}

/// Plain forward step outside any larger graph.
pub fn gru_step(
    store: &ParameterStore,
    cell: &GruCell,
    h_prev: &[f64],
    x: &[f64],
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let h = tape.input(h_prev);
    let xv = tape.input(x);
    let out = cell.step(&mut tape, store, h, xv)?;
    Ok(tape.value(out).to_vec())
}

/// A stack of GRU layers; layer i feeds its hidden state to layer i+1.
#[derive(Debug, Clone)]
pub struct GruStack {
    pub layers: Vec<GruCell>,
}

impl GruStack {
    pub fn register(
        store: &mut ParameterStore,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        num_layers: usize,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let in_size = if l == 0 { input_size } else { hidden_size };
            layers.push(GruCell::register(
                store,
                &format!("{prefix}.l{l}"),
                in_size,
                hidden_size,
            )?);
        }
        Ok(GruStack { layers })
    }

    pub fn hidden_size(&self) -> usize {
        self.layers[0].hidden_size
    }

    pub fn zero_state(&self, tape: &mut Tape) -> Vec<NodeId> {
        let h = vec![0.0; self.hidden_size()];
        self.layers.iter().map(|_| tape.input(&h)).collect()
    }

    /// Advance every layer one step; returns the new per-layer states.
    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        states: &[NodeId],
        x: NodeId,
    ) -> Result<Vec<NodeId>> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut inp = x;
        for (layer, h) in self.layers.iter().zip(states.iter()) {
            let next = layer.step(tape, store, *h, inp)?;
            out.push(next);
            inp = next;
        }
        Ok(out)
    }

    /// Run over a whole input sequence; returns per-step top-layer states and
    /// the final state of every layer.
    pub fn run(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        inputs: &[NodeId],
    ) -> Result<(Vec<NodeId>, Vec<NodeId>)> {
        let mut states = self.zero_state(tape);
        let mut tops = Vec::with_capacity(inputs.len());
        for x in inputs {
            states = self.step(tape, store, &states, *x)?;
            tops.push(*states.last().unwrap());
        }
        Ok((tops, states))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_cell(h: usize, d: usize) -> (ParameterStore, GruCell) {
        let mut store = ParameterStore::new(0);
        let cell = GruCell::register(&mut store, "g", d, h).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).fill(0.0);
        }
        (store, cell)
    }

    #[test]
    fn zero_weights_zero_state_gives_zero() {
        let (store, cell) = zero_cell(3, 2);
        let h = gru_step(&store, &cell, &[0.0; 3], &[1.0, -1.0]).unwrap();
        assert_eq!(h, vec![0.0; 3]);
    }

    #[test]
    fn zero_weights_halve_previous_state() {
        // z = 0.5, candidate = 0 -> h' = 0.5 * h_prev
        let (store, cell) = zero_cell(3, 2);
        let h = gru_step(&store, &cell, &[2.0, -4.0, 6.0], &[0.0, 0.0]).unwrap();
        assert_eq!(h, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let (store, cell) = zero_cell(3, 2);
        assert!(gru_step(&store, &cell, &[0.0; 3], &[0.0; 5]).is_err());
        assert!(gru_step(&store, &cell, &[0.0; 1], &[0.0; 2]).is_err());
    }

    #[test]
    fn output_stays_between_prev_state_and_unit_interval() {
        // h'_i is a convex mix of h_prev_i and a tanh value, so it lies in
        // [min(h_prev_i, -1), max(h_prev_i, 1)].
        let mut store = ParameterStore::new(42);
        let cell = GruCell::register(&mut store, "g", 4, 5).unwrap();
        let mut tape = Tape::new();
        let h_prev = vec![3.0, -2.5, 0.1, 0.0, -0.9];
        let x = vec![0.3, -1.0, 2.0, 0.7];
        let h = tape.input(&h_prev);
        let xv = tape.input(&x);
        let out = cell.step(&mut tape, &store, h, xv).unwrap();
        for (o, p) in tape.value(out).iter().zip(h_prev.iter()) {
            assert!(*o >= p.min(-1.0) - 1e-12);
            assert!(*o <= p.max(1.0) + 1e-12);
        }
    }
}
