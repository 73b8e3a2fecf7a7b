//! Direct responding semantics generator: a 2-layer GRU encoder-decoder with
//! additive attention, trained by teacher-forced maximum likelihood and
//! decoded greedily.

use crate::corpus::{BOS, EOS, PAD, SEP};
use crate::error::{Error, Result};
use crate::nn::attention::Attention;
use crate::nn::gru::GruStack;
use crate::nn::store::{Init, ParamId, ParameterStore};
use crate::nn::tape::{NodeId, Tape};

#[derive(Debug, Clone)]
pub struct DrsgModel {
    pub vocab_size: usize,
    pub embed_size: usize,
    pub hidden_size: usize,
    embedding: ParamId,
    encoder: GruStack,
    decoder: GruStack,
    attention: Attention,
    /// Per-layer affine bridge from the encoder's final state.
    bridges: Vec<(ParamId, ParamId)>,
    out_w: ParamId,
    out_b: ParamId,
}

impl DrsgModel {
    pub fn register(
        store: &mut ParameterStore,
        prefix: &str,
        vocab_size: usize,
        embed_size: usize,
        hidden_size: usize,
        layers: usize,
    ) -> Result<Self> {
        let embedding = store.register(
            &format!("{prefix}.embedding"),
            vocab_size,
            embed_size,
            Init::Uniform,
        )?;
        let encoder = GruStack::register(
            store,
            &format!("{prefix}.encoder"),
            embed_size,
            hidden_size,
            layers,
        )?;
        let decoder = GruStack::register(
            store,
            &format!("{prefix}.decoder"),
            embed_size + hidden_size,
            hidden_size,
            layers,
        )?;
        let attention = Attention::register(
            store,
            &format!("{prefix}.attention"),
            hidden_size,
            hidden_size,
            hidden_size,
        )?;
        let mut bridges = Vec::with_capacity(layers);
        for l in 0..layers {
            bridges.push((
                store.register(
                    &format!("{prefix}.bridge.l{l}.w"),
                    hidden_size,
                    hidden_size,
                    Init::Uniform,
                )?,
                store.register(&format!("{prefix}.bridge.l{l}.b"), 1, hidden_size, Init::Zeros)?,
            ));
        }
        let out_w = store.register(
            &format!("{prefix}.out.w"),
            vocab_size,
            hidden_size,
            Init::Uniform,
        )?;
        let out_b = store.register(&format!("{prefix}.out.b"), 1, vocab_size, Init::Zeros)?;
        Ok(DrsgModel {
            vocab_size,
            embed_size,
            hidden_size,
            embedding,
            encoder,
            decoder,
            attention,
            bridges,
            out_w,
            out_b,
        })
    }

    fn embed_ids(&self, tape: &mut Tape, store: &ParameterStore, ids: &[u32]) -> Vec<NodeId> {
        ids.iter()
            .map(|&id| tape.embed(store, self.embedding, id as usize))
            .collect()
    }

    /// Encode the post; returns top-layer states per position and the final
    /// state of every layer.
    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        post: &[u32],
    ) -> Result<(Vec<NodeId>, Vec<NodeId>)> {
        if post.is_empty() {
            return Err(Error::Invalid("cannot encode an empty post".into()));
        }
        let inputs = self.embed_ids(tape, store, post);
        self.encoder.run(tape, store, &inputs)
    }

    /// Top-layer encoder states as plain vectors.
    pub fn encode_states(&self, store: &ParameterStore, post: &[u32]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let (tops, _) = self.encode(&mut tape, store, post)?;
        Ok(tops.iter().map(|n| tape.value(*n).to_vec()).collect())
    }

    fn bridge_state(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        enc_finals: &[NodeId],
    ) -> Vec<NodeId> {
        self.bridges
            .iter()
            .zip(enc_finals.iter())
            .map(|((w, b), h)| {
                let pw = tape.param(*w);
                let wh = tape.matvec(store, pw, *h);
                let bias = tape.embed(store, *b, 0);
                tape.add(wh, bias)
            })
            .collect()
    }

    fn output_logits(&self, tape: &mut Tape, store: &ParameterStore, state: NodeId) -> NodeId {
        let pw = tape.param(self.out_w);
        let wh = tape.matvec(store, pw, state);
        let bias = tape.embed(store, self.out_b, 0);
        tape.add(wh, bias)
    }

    /// One decoder step: attention context from the previous top state, then
    /// the GRU stack on [embedding(y_prev); context].
    fn decode_step(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        states: &[NodeId],
        y_prev: u32,
        enc_tops: &[NodeId],
    ) -> Result<(Vec<NodeId>, NodeId)> {
        let s_prev = *states.last().unwrap();
        let (context, _) = self.attention.apply(tape, store, s_prev, enc_tops)?;
        let emb = tape.embed(store, self.embedding, y_prev as usize);
        let x = tape.concat(emb, context);
        let next = self.decoder.step(tape, store, states, x)?;
        let logits = self.output_logits(tape, store, *next.last().unwrap());
        Ok((next, logits))
    }

    /// Teacher-forced negative log-likelihood of `direct` (with terminal EOS)
    /// given the post, averaged over target tokens.
    pub fn loss(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        post: &[u32],
        direct: &[u32],
    ) -> Result<NodeId> {
        if direct.is_empty() {
            return Err(Error::Invalid("direct segment must be non-empty".into()));
        }
        let (enc_tops, enc_finals) = self.encode(tape, store, post)?;
        let mut states = self.bridge_state(tape, store, &enc_finals);
        let mut targets: Vec<u32> = direct.to_vec();
        targets.push(EOS);
        let mut losses = Vec::with_capacity(targets.len());
        let mut y_prev = BOS;
        for &target in &targets {
            let (next, logits) = self.decode_step(tape, store, &states, y_prev, &enc_tops)?;
            states = next;
            losses.push(tape.softmax_xent(logits, &[target as usize]));
            y_prev = target;
        }
        let sum = tape.add_n(&losses);
        Ok(tape.affine(sum, 1.0 / targets.len() as f64, 0.0))
    }

    /// Greedy decoding from BOS until EOS or `max_len` tokens. PAD, SEP and
    /// BOS are masked out; the terminal EOS is stripped.
    pub fn generate(&self, store: &ParameterStore, post: &[u32], max_len: usize) -> Result<Vec<u32>> {
        let mut tape = Tape::new();
        let (enc_tops, enc_finals) = self.encode(&mut tape, store, post)?;
        let mut states = self.bridge_state(&mut tape, store, &enc_finals);
        let mut out = Vec::new();
        let mut y_prev = BOS;
        for _ in 0..max_len {
            let (next, logits) = self.decode_step(&mut tape, store, &states, y_prev, &enc_tops)?;
            states = next;
            let token = greedy_pick(tape.value(logits));
            if token == EOS {
                break;
            }
            out.push(token);
            y_prev = token;
        }
        Ok(out)
    }
}

/// Argmax over logits with the non-generatable specials masked out.
pub(crate) fn greedy_pick(logits: &[f64]) -> u32 {
    let mut best = EOS;
    let mut best_score = f64::NEG_INFINITY;
    for (i, &score) in logits.iter().enumerate() {
        let id = i as u32;
        if id == PAD || id == SEP || id == BOS {
            continue;
        }
        if score > best_score {
            best_score = score;
            best = id;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{accumulate_gradients, loss_value, max_relative_error};

    fn toy_model(seed: u64, vocab: usize) -> (ParameterStore, DrsgModel) {
        let mut store = ParameterStore::new(seed);
        let model = DrsgModel::register(&mut store, "drsg", vocab, 3, 4, 2).unwrap();
        (store, model)
    }

    #[test]
    fn single_token_post_yields_single_state() {
        let (store, model) = toy_model(1, 10);
        let states = model.encode_states(&store, &[7]).unwrap();
        assert_eq!(states.len(), 1);
        assert_eq!(states[0].len(), 4);
    }

    #[test]
    fn zero_parameters_give_zero_states() {
        let (mut store, model) = toy_model(1, 10);
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).fill(0.0);
        }
        let states = model.encode_states(&store, &[5, 6, 7]).unwrap();
        for s in states {
            assert!(s.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn encoding_is_deterministic() {
        let (store, model) = toy_model(9, 12);
        let a = model.encode_states(&store, &[5, 6]).unwrap();
        let b = model.encode_states(&store, &[5, 6]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_post_is_error() {
        let (store, model) = toy_model(1, 10);
        assert!(model.encode_states(&store, &[]).is_err());
        let mut tape = Tape::new();
        assert!(model.loss(&mut tape, &store, &[], &[5]).is_err());
    }

    #[test]
    fn untrained_loss_is_near_log_vocab() {
        let vocab = 40;
        let (store, model) = toy_model(3, vocab);
        let mut tape = Tape::new();
        let loss = model.loss(&mut tape, &store, &[6, 7, 8], &[9, 10]).unwrap();
        let value = tape.scalar_value(loss);
        let expected = (vocab as f64).ln();
        assert!(value > 0.0);
        assert!(
            (value - expected).abs() / expected < 0.15,
            "loss {value} vs ln V {expected}"
        );
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let (mut store, model) = toy_model(5, 8);
        let m = model.clone();
        let build = move |tape: &mut Tape, store: &ParameterStore| {
            m.loss(tape, store, &[5, 6], &[7]).unwrap()
        };
        accumulate_gradients(&mut store, &build);
        let m2 = model.clone();
        let err = max_relative_error(
            &mut store,
            |s| loss_value(s, |t, s| m2.loss(t, s, &[5, 6], &[7]).unwrap()),
            1e-5,
        );
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn generation_budget_zero_is_empty() {
        let (store, model) = toy_model(1, 10);
        assert_eq!(model.generate(&store, &[5], 0).unwrap(), Vec::<u32>::new());
    }

    #[test]
    fn generation_is_deterministic_and_masks_specials() {
        let (store, model) = toy_model(17, 15);
        let a = model.generate(&store, &[5, 9], 12).unwrap();
        let b = model.generate(&store, &[5, 9], 12).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&t| t != PAD && t != SEP && t != BOS && t != EOS));
    }

    #[test]
    fn overfits_ten_pairs_in_300_epochs() {
        use crate::nn::adam::{Adam, AdamConfig};
        let vocab = 30;
        let mut store = ParameterStore::new(7);
        let model = DrsgModel::register(&mut store, "drsg", vocab, 16, 32, 2).unwrap();
        let pairs: Vec<(Vec<u32>, Vec<u32>)> = (0..10)
            .map(|i| {
                let a = 5 + i as u32;
                let b = 15 + i as u32;
                (vec![a, b, 25], vec![b, a, 26 + (i % 4) as u32])
            })
            .collect();
        let mut adam = Adam::new(&store, AdamConfig::default());
        let mut last = f64::INFINITY;
        for _ in 0..300 {
            let mut sum = 0.0;
            for (post, direct) in &pairs {
                store.zero_grads();
                let mut tape = Tape::new();
                let loss = model.loss(&mut tape, &store, post, direct).unwrap();
                sum += tape.scalar_value(loss);
                tape.backward(&mut store, loss);
                adam.step(&mut store, 5e-3).unwrap();
            }
            last = sum / pairs.len() as f64;
        }
        assert!(last < 0.1, "final mean loss {last}");
        for (post, direct) in &pairs {
            let generated = model.generate(&store, post, 10).unwrap();
            assert_eq!(&generated, direct, "post {post:?} not memorized");
        }
    }
}
