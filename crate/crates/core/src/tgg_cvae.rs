//! Topic-graph-guided CVAE for supplementary semantics: recurrent prior and
//! posterior encoders, a diagonal-Gaussian latent with reparametrization,
//! closed-form KL, a latent-driven topic mixture, a conditioned decoder, a
//! bag-of-words auxiliary loss, and KL annealing.

use crate::config::Ablation;
use crate::corpus::{is_special, Vocabulary, BOS, EOS, UNK};
use crate::drsg::greedy_pick;
use crate::error::{Error, Result};
use crate::nn::gru::GruStack;
use crate::nn::ops::reparameterize;
use crate::nn::store::{Init, ParamId, ParameterStore};
use crate::nn::tape::{gauss_kl_value, NodeId, Tape};
use crate::segmentation::SegmentedPair;
use crate::topic_graph::{TfIdfModel, TopicGraph};

/// Linear 0 -> 1 ramp of the KL weight over `warmup_steps`, with an optional
/// floor. The weight is non-decreasing and reaches 1.0 at `warmup_steps`.
#[derive(Debug, Clone, Copy)]
pub struct AnnealSchedule {
    pub warmup_steps: usize,
    pub floor: f64,
}

impl AnnealSchedule {
    pub fn weight(&self, step: usize) -> f64 {
        if step >= self.warmup_steps || self.warmup_steps == 0 {
            return 1.0;
        }
        (step as f64 / self.warmup_steps as f64).max(self.floor)
    }
}

/// One Gaussian draw: z = mu + exp(0.5 * log_var) * eps, stored with its
/// ingredients so the sample can be recomputed exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
    pub eps: Vec<f64>,
    pub z: Vec<f64>,
}

impl LatentState {
    pub fn new(mu: Vec<f64>, log_var: Vec<f64>, eps: Vec<f64>) -> Self {
        let z = reparameterize(&mu, &log_var, &eps);
        LatentState {
            mu,
            log_var,
            eps,
            z,
        }
    }
}

/// Closed-form KL between the posterior N(mu', diag exp(lv')) and the prior
/// N(mu, diag exp(lv)), summed over latent dimensions:
/// sum_i [ log(s/s') + (s'^2 + (mu - mu')^2) / (2 s^2) - 1/2 ].
pub fn kl_divergence(
    prior_mu: &[f64],
    prior_log_var: &[f64],
    post_mu: &[f64],
    post_log_var: &[f64],
) -> f64 {
    gauss_kl_value(prior_mu, prior_log_var, post_mu, post_log_var)
}

/// Everything needed to resolve decoder topic words for one input: TF-IDF
/// topics of the SEP-joined input, then their top-K graph neighbors.
pub struct TopicContext<'a> {
    pub vocab: &'a Vocabulary,
    pub tfidf: &'a TfIdfModel,
    pub graph: &'a TopicGraph,
    /// Topic words extracted per utterance.
    pub topic_words: usize,
    pub top_k: usize,
}

impl<'a> TopicContext<'a> {
    /// Top-K neighbor ids for the topics of `x_hat`. Out-of-vocabulary
    /// neighbors are dropped; order is the graph's score order.
    pub fn topics_for(&self, x_hat: &[u32]) -> Vec<u32> {
        let tokens: Vec<String> = x_hat
            .iter()
            .filter(|&&id| !is_special(id))
            .filter_map(|&id| self.vocab.token(id).map(|t| t.to_string()))
            .collect();
        let topics = self.tfidf.extract_topics(&tokens, self.topic_words);
        let mut out = Vec::new();
        for (neighbor, _) in self.graph.top_k_neighbors(&topics, self.top_k) {
            if let Some(id) = self.vocab.id(&neighbor) {
                if id != UNK && !is_special(id) && !out.contains(&id) {
                    out.push(id);
                }
            }
        }
        out
    }
}

/// Per-pair loss decomposition. `total = recon + kl_weight * kl + bow_weight * bow`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboParts {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub bow: f64,
    pub kl_weight: f64,
}

#[derive(Debug, Clone)]
pub struct TggCvaeModel {
    pub vocab_size: usize,
    pub embed_size: usize,
    pub hidden_size: usize,
    pub latent_size: usize,
    pub top_k: usize,
    embedding: ParamId,
    prior_encoder: GruStack,
    posterior_encoder: GruStack,
    prior_proj_w: ParamId,
    prior_proj_b: ParamId,
    posterior_proj_w: ParamId,
    posterior_proj_b: ParamId,
    topic_proj_w: ParamId,
    topic_proj_b: ParamId,
    decoder: GruStack,
    bridges: Vec<(ParamId, ParamId)>,
    out_w: ParamId,
    out_b: ParamId,
    bow_w: ParamId,
    bow_b: ParamId,
}

impl TggCvaeModel {
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        store: &mut ParameterStore,
        prefix: &str,
        vocab_size: usize,
        embed_size: usize,
        hidden_size: usize,
        latent_size: usize,
        layers: usize,
        top_k: usize,
    ) -> Result<Self> {
        let embedding = store.register(
            &format!("{prefix}.embedding"),
            vocab_size,
            embed_size,
            Init::Uniform,
        )?;
        let prior_encoder = GruStack::register(
            store,
            &format!("{prefix}.prior_encoder"),
            embed_size,
            hidden_size,
            layers,
        )?;
        let posterior_encoder = GruStack::register(
            store,
            &format!("{prefix}.posterior_encoder"),
            embed_size,
            hidden_size,
            layers,
        )?;
        let prior_proj_w = store.register(
            &format!("{prefix}.prior_proj.w"),
            2 * latent_size,
            hidden_size,
            Init::Uniform,
        )?;
        let prior_proj_b =
            store.register(&format!("{prefix}.prior_proj.b"), 1, 2 * latent_size, Init::Zeros)?;
        let posterior_proj_w = store.register(
            &format!("{prefix}.posterior_proj.w"),
            2 * latent_size,
            2 * hidden_size,
            Init::Uniform,
        )?;
        let posterior_proj_b = store.register(
            &format!("{prefix}.posterior_proj.b"),
            1,
            2 * latent_size,
            Init::Zeros,
        )?;
        let topic_proj_w = store.register(
            &format!("{prefix}.topic_proj.w"),
            top_k,
            latent_size,
            Init::Uniform,
        )?;
        let topic_proj_b =
            store.register(&format!("{prefix}.topic_proj.b"), 1, top_k, Init::Zeros)?;
        // decoder input: [embedding(y_prev); z; topic vector]
        let decoder = GruStack::register(
            store,
            &format!("{prefix}.decoder"),
            embed_size + latent_size + embed_size,
            hidden_size,
            layers,
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
        let bow_w = store.register(
            &format!("{prefix}.bow.w"),
            vocab_size,
            latent_size + hidden_size,
            Init::Uniform,
        )?;
        let bow_b = store.register(&format!("{prefix}.bow.b"), 1, vocab_size, Init::Zeros)?;
        Ok(TggCvaeModel {
            vocab_size,
            embed_size,
            hidden_size,
            latent_size,
            top_k,
            embedding,
            prior_encoder,
            posterior_encoder,
            prior_proj_w,
            prior_proj_b,
            posterior_proj_w,
            posterior_proj_b,
            topic_proj_w,
            topic_proj_b,
            decoder,
            bridges,
            out_w,
            out_b,
            bow_w,
            bow_b,
        })
    }

    fn embed_ids(&self, tape: &mut Tape, store: &ParameterStore, ids: &[u32]) -> Vec<NodeId> {
        ids.iter()
            .map(|&id| tape.embed(store, self.embedding, id as usize))
            .collect()
    }

    fn affine_map(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        w: ParamId,
        b: ParamId,
        x: NodeId,
    ) -> NodeId {
        let pw = tape.param(w);
        let wx = tape.matvec(store, pw, x);
        let bias = tape.embed(store, b, 0);
        tape.add(wx, bias)
    }

    /// Encode x_hat with the prior network; returns (h_x, mu, log_var).
    pub fn prior_params(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        x_hat: &[u32],
    ) -> Result<(NodeId, NodeId, NodeId)> {
        if x_hat.is_empty() {
            return Err(Error::Invalid("prior input must be non-empty".into()));
        }
        let inputs = self.embed_ids(tape, store, x_hat);
        let (_, finals) = self.prior_encoder.run(tape, store, &inputs)?;
        let h_x = *finals.last().unwrap();
        let packed = self.affine_map(tape, store, self.prior_proj_w, self.prior_proj_b, h_x);
        let mu = tape.slice(packed, 0, self.latent_size);
        let log_var = tape.slice(packed, self.latent_size, self.latent_size);
        Ok((h_x, mu, log_var))
    }

    /// Encode y_sup with the posterior network and project [h_x; h_y].
    pub fn posterior_params(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        h_x: NodeId,
        y_sup: &[u32],
    ) -> Result<(NodeId, NodeId)> {
        if y_sup.is_empty() {
            return Err(Error::Invalid("posterior input must be non-empty".into()));
        }
        let inputs = self.embed_ids(tape, store, y_sup);
        let (_, finals) = self.posterior_encoder.run(tape, store, &inputs)?;
        let h_y = *finals.last().unwrap();
        let joint = tape.concat(h_x, h_y);
        let packed = self.affine_map(
            tape,
            store,
            self.posterior_proj_w,
            self.posterior_proj_b,
            joint,
        );
        let mu = tape.slice(packed, 0, self.latent_size);
        let log_var = tape.slice(packed, self.latent_size, self.latent_size);
        Ok((mu, log_var))
    }

    /// Forward-only prior parameters as plain vectors.
    pub fn prior_params_values(
        &self,
        store: &ParameterStore,
        x_hat: &[u32],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let (_, mu, lv) = self.prior_params(&mut tape, store, x_hat)?;
        Ok((tape.value(mu).to_vec(), tape.value(lv).to_vec()))
    }

    /// Forward-only posterior parameters as plain vectors.
    pub fn posterior_params_values(
        &self,
        store: &ParameterStore,
        x_hat: &[u32],
        y_sup: &[u32],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let (h_x, _, _) = self.prior_params(&mut tape, store, x_hat)?;
        let (mu, lv) = self.posterior_params(&mut tape, store, h_x, y_sup)?;
        Ok((tape.value(mu).to_vec(), tape.value(lv).to_vec()))
    }

    /// z = mu + exp(0.5 * log_var) * eps on the tape, so gradients reach both
    /// Gaussian parameters.
    fn reparameterize_node(
        &self,
        tape: &mut Tape,
        mu: NodeId,
        log_var: NodeId,
        eps: &[f64],
    ) -> NodeId {
        let half = tape.affine(log_var, 0.5, 0.0);
        let sigma = tape.exp_of(half);
        let noise = tape.input(eps);
        let scaled = tape.mul(sigma, noise);
        tape.add(mu, scaled)
    }

    /// Softmax-weighted sum of topic embeddings, driven by the latent sample.
    /// With no topics the vector is zero and no weights are produced.
    pub fn topic_mixture(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        z: NodeId,
        topic_ids: &[u32],
    ) -> (NodeId, Option<NodeId>) {
        let k = topic_ids.len().min(self.top_k);
        if k == 0 {
            let zero = vec![0.0; self.embed_size];
            return (tape.input(&zero), None);
        }
        let logits = self.affine_map(tape, store, self.topic_proj_w, self.topic_proj_b, z);
        let first_k = tape.slice(logits, 0, k);
        let alpha = tape.softmax_node(first_k);
        let items = self.embed_ids(tape, store, &topic_ids[..k]);
        let t = tape.weighted_combine(alpha, &items);
        (t, Some(alpha))
    }

    fn bridge_state(&self, tape: &mut Tape, store: &ParameterStore, h_x: NodeId) -> Vec<NodeId> {
        self.bridges
            .iter()
            .map(|(w, b)| self.affine_map(tape, store, *w, *b, h_x))
            .collect()
    }

    fn decode_targets(y_sup: &[u32]) -> Vec<u32> {
        if y_sup == [EOS] {
            vec![EOS]
        } else {
            let mut t = y_sup.to_vec();
            t.push(EOS);
            t
        }
    }

    /// Teacher-forced reconstruction NLL of y_sup (with terminal EOS), where
    /// every decoder step consumes [embedding(y_prev); z; t].
    pub fn decode_loss(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        y_sup: &[u32],
        z: NodeId,
        t: NodeId,
        h_x: NodeId,
    ) -> Result<NodeId> {
        if y_sup.is_empty() {
            return Err(Error::Invalid("supplementary segment must be non-empty".into()));
        }
        let targets = Self::decode_targets(y_sup);
        let mut states = self.bridge_state(tape, store, h_x);
        let zt = tape.concat(z, t);
        let mut losses = Vec::with_capacity(targets.len());
        let mut y_prev = BOS;
        for &target in &targets {
            let emb = tape.embed(store, self.embedding, y_prev as usize);
            let x = tape.concat(emb, zt);
            states = self.decoder.step(tape, store, &states, x)?;
            let logits = self.affine_map(tape, store, self.out_w, self.out_b, *states.last().unwrap());
            losses.push(tape.softmax_xent(logits, &[target as usize]));
            y_prev = target;
        }
        let sum = tape.add_n(&losses);
        Ok(tape.affine(sum, 1.0 / targets.len() as f64, 0.0))
    }

    /// One softmax over the vocabulary from [z; h_x]; mean NLL of the
    /// distinct content tokens of y_sup. Zero when only specials remain.
    pub fn bow_loss(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        z: NodeId,
        h_x: NodeId,
        y_sup: &[u32],
    ) -> Result<NodeId> {
        let mut content: Vec<usize> = Vec::new();
        for &id in y_sup {
            if !is_special(id) && !content.contains(&(id as usize)) {
                content.push(id as usize);
            }
        }
        if content.is_empty() {
            return Ok(tape.scalar(0.0));
        }
        let joint = tape.concat(z, h_x);
        let logits = self.affine_map(tape, store, self.bow_w, self.bow_b, joint);
        Ok(tape.softmax_xent(logits, &content))
    }

    /// Assemble the full per-pair objective:
    /// total = recon + weight(step) * w_kl * KL + w_bow * BOW.
    /// Training draws z' from the posterior; the NoCvae ablation replaces the
    /// latent with the deterministic prior mean and drops the KL term.
    #[allow(clippy::too_many_arguments)]
    pub fn elbo_step(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        pair: &SegmentedPair,
        x_hat: &[u32],
        topic_ids: &[u32],
        schedule: &AnnealSchedule,
        step: usize,
        eps: &[f64],
        ablation: Ablation,
        w_kl: f64,
        w_bow: f64,
    ) -> Result<(NodeId, ElboParts)> {
        let (h_x, prior_mu, prior_lv) = self.prior_params(tape, store, x_hat)?;
        let (z, kl, kl_weight) = match ablation {
            Ablation::NoCvae => {
                let zero = tape.scalar(0.0);
                (prior_mu, zero, 0.0)
            }
            _ => {
                let (post_mu, post_lv) =
                    self.posterior_params(tape, store, h_x, &pair.supplementary)?;
                let z = self.reparameterize_node(tape, post_mu, post_lv, eps);
                let kl = tape.gauss_kl(prior_mu, prior_lv, post_mu, post_lv);
                (z, kl, schedule.weight(step) * w_kl)
            }
        };
        let effective_topics: &[u32] = match ablation {
            Ablation::NoTgg => &[],
            _ => topic_ids,
        };
        let (t, _alpha) = self.topic_mixture(tape, store, z, effective_topics);
        let recon = self.decode_loss(tape, store, &pair.supplementary, z, t, h_x)?;
        let bow = self.bow_loss(tape, store, z, h_x, &pair.supplementary)?;
        let weighted_kl = tape.affine(kl, kl_weight, 0.0);
        let weighted_bow = tape.affine(bow, w_bow, 0.0);
        let partial = tape.add(recon, weighted_kl);
        let total = tape.add(partial, weighted_bow);
        let parts = ElboParts {
            total: tape.scalar_value(total),
            recon: tape.scalar_value(recon),
            kl: tape.scalar_value(kl),
            bow: tape.scalar_value(bow),
            kl_weight,
        };
        Ok((total, parts))
    }

    /// Draw the prior latent for `x_hat` with the supplied noise.
    pub fn sample_prior(
        &self,
        store: &ParameterStore,
        x_hat: &[u32],
        eps: Vec<f64>,
    ) -> Result<LatentState> {
        let (mu, lv) = self.prior_params_values(store, x_hat)?;
        Ok(LatentState::new(mu, lv, eps))
    }

    /// Greedy supplementary decoding from a prior draw. An EOS on the first
    /// step means the direct semantics already complete the response, so the
    /// result is empty.
    pub fn generate(
        &self,
        store: &ParameterStore,
        x_hat: &[u32],
        topic_ids: &[u32],
        eps: &[f64],
        max_len: usize,
        ablation: Ablation,
    ) -> Result<Vec<u32>> {
        let mut tape = Tape::new();
        let (h_x, prior_mu, prior_lv) = self.prior_params(&mut tape, store, x_hat)?;
        let z = match ablation {
            Ablation::NoCvae => prior_mu,
            _ => self.reparameterize_node(&mut tape, prior_mu, prior_lv, eps),
        };
        let effective_topics: &[u32] = match ablation {
            Ablation::NoTgg => &[],
            _ => topic_ids,
        };
        let (t, _) = self.topic_mixture(&mut tape, store, z, effective_topics);
        let zt = tape.concat(z, t);
        let mut states = self.bridge_state(&mut tape, store, h_x);
        let mut out = Vec::new();
        let mut y_prev = BOS;
        for _ in 0..max_len {
            let emb = tape.embed(store, self.embedding, y_prev as usize);
            let x = tape.concat(emb, zt);
            states = self.decoder.step(&mut tape, store, &states, x)?;
            let logits =
                self.affine_map(&mut tape, store, self.out_w, self.out_b, *states.last().unwrap());
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
