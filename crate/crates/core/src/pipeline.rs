//! End-to-end wiring: preprocessing into a run directory, joint training of
//! the mediator and the TGG-CVAE, sentence-level response assembly, and a
//! synthetic corpus generator for desk-scale runs.
//!
//! Run directory layout:
//!   config.json, vocab.txt, segmented.tsv, graph.txt, stopwords.txt,
//!   checkpoints/epoch-N.ckpt, history.csv

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{Ablation, RunConfig};
use crate::corpus::{self, Vocabulary};
use crate::drsg::DrsgModel;
use crate::error::{Error, Result};
use crate::nn::adam::{clip_gradients, Adam, AdamConfig};
use crate::nn::checkpoint;
use crate::nn::store::ParameterStore;
use crate::nn::tape::Tape;
use crate::segmentation::{self, SegmentedPair, SegmentedTriple};
use crate::tgg_cvae::{AnnealSchedule, ElboParts, TggCvaeModel, TopicContext};
use crate::topic_graph::{self, TfIdfModel, TopicGraph};

/// The two generated segments and their concatenation.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult {
    pub direct: Vec<u32>,
    pub supplementary: Vec<u32>,
    pub full: Vec<u32>,
}

impl GenerationResult {
    pub fn new(direct: Vec<u32>, supplementary: Vec<u32>) -> Self {
        let mut full = direct.clone();
        full.extend_from_slice(&supplementary);
        GenerationResult {
            direct,
            supplementary,
            full,
        }
    }
}

/// Latent noise source for generation.
pub enum Noise<'a> {
    /// eps = 0: decode from the prior mean.
    Zero,
    Sample(&'a mut ChaCha8Rng),
}

impl Noise<'_> {
    fn draw(&mut self, dim: usize) -> Vec<f64> {
        match self {
            Noise::Zero => vec![0.0; dim],
            Noise::Sample(rng) => (0..dim).map(|_| rng.sample(StandardNormal)).collect(),
        }
    }
}

/// Both model halves over one parameter store.
pub struct SlarmModel {
    pub store: ParameterStore,
    pub drsg: DrsgModel,
    pub cvae: TggCvaeModel,
}

impl SlarmModel {
    pub fn new(config: &RunConfig, vocab_size: usize) -> Result<Self> {
        let mut store = ParameterStore::new(config.seed);
        let drsg = DrsgModel::register(
            &mut store,
            "drsg",
            vocab_size,
            config.embedding_size,
            config.hidden_size,
            config.layers,
        )?;
        let cvae = TggCvaeModel::register(
            &mut store,
            "tgg_cvae",
            vocab_size,
            config.embedding_size,
            config.hidden_size,
            config.latent_size,
            config.layers,
            config.top_k,
        )?;
        Ok(SlarmModel { store, drsg, cvae })
    }
}

/// Everything preprocess produces, in memory.
pub struct Artifacts {
    pub config: RunConfig,
    pub vocab: Vocabulary,
    pub triples: Vec<SegmentedTriple>,
    pub pairs: Vec<SegmentedPair>,
    pub tfidf: TfIdfModel,
    pub graph: TopicGraph,
    pub skipped: usize,
}

pub fn config_path(run_dir: &Path) -> PathBuf {
    run_dir.join("config.json")
}

pub fn history_path(run_dir: &Path) -> PathBuf {
    run_dir.join("history.csv")
}

/// Segment every pair, build the vocabulary, fit TF-IDF, build the topic
/// graph, and write all artifacts into `run_dir`.
pub fn preprocess(
    corpus_path: &Path,
    stop_words: &BTreeSet<String>,
    config: &RunConfig,
    run_dir: &Path,
) -> Result<Artifacts> {
    config.validate()?;
    let loaded = corpus::load_corpus(corpus_path, config.max_len)?;
    let punct = config.punctuation_set();

    let mut triples = Vec::with_capacity(loaded.pairs.len());
    for pair in &loaded.pairs {
        let (direct, sup) = segmentation::segment_response(&pair.response, &punct)?;
        triples.push((pair.post.clone(), direct, sup));
    }
    let vocab = corpus::build_vocabulary(&loaded.pairs, config.vocab_size)?;
    let pairs: Vec<SegmentedPair> = triples
        .iter()
        .map(|(post, direct, sup)| segmentation::encode_pair(&vocab, post, direct, sup))
        .collect();

    let mut documents: Vec<Vec<String>> = Vec::with_capacity(2 * loaded.pairs.len());
    for pair in &loaded.pairs {
        documents.push(pair.post.clone());
        documents.push(pair.response.clone());
    }
    let tfidf = topic_graph::fit_tfidf(&documents, stop_words)?;
    let graph_pairs: Vec<(Vec<String>, Vec<String>)> = loaded
        .pairs
        .iter()
        .map(|p| (p.post.clone(), p.response.clone()))
        .collect();
    let graph = topic_graph::build_graph(&graph_pairs, &tfidf, config.topic_words);

    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir.display().to_string(), e))?;
    config.save(&config_path(run_dir))?;
    vocab.save(&run_dir.join("vocab.txt"))?;
    segmentation::save_segmented(&run_dir.join("segmented.tsv"), &triples)?;
    graph.save(&run_dir.join("graph.txt"))?;
    let stop_body = stop_words.iter().cloned().collect::<Vec<_>>().join("\n") + "\n";
    fs::write(run_dir.join("stopwords.txt"), stop_body)
        .map_err(|e| Error::io(run_dir.display().to_string(), e))?;

    Ok(Artifacts {
        config: config.clone(),
        vocab,
        triples,
        pairs,
        tfidf,
        graph,
        skipped: loaded.skipped,
    })
}

pub fn load_stop_words(path: &Path) -> Result<BTreeSet<String>> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(body
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

/// Reload preprocess artifacts from a run directory. TF-IDF statistics are
/// refit from the segmented cache, which is deterministic.
pub fn load_artifacts(run_dir: &Path) -> Result<Artifacts> {
    let config = RunConfig::load(&config_path(run_dir))?;
    let vocab = Vocabulary::load(&run_dir.join("vocab.txt"))?;
    let triples = segmentation::load_segmented(&run_dir.join("segmented.tsv"))?;
    let graph = TopicGraph::load(&run_dir.join("graph.txt"))?;
    let stop_words = load_stop_words(&run_dir.join("stopwords.txt"))?;
    let pairs: Vec<SegmentedPair> = triples
        .iter()
        .map(|(post, direct, sup)| segmentation::encode_pair(&vocab, post, direct, sup))
        .collect();
    let mut documents = Vec::with_capacity(2 * triples.len());
    for (post, direct, sup) in &triples {
        documents.push(post.clone());
        let mut response = direct.clone();
        if sup != &[corpus::EOS_TOKEN.to_string()] {
            response.extend(sup.iter().cloned());
        }
        documents.push(response);
    }
    let tfidf = topic_graph::fit_tfidf(&documents, &stop_words)?;
    Ok(Artifacts {
        config,
        vocab,
        triples,
        pairs,
        tfidf,
        graph,
        skipped: 0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_direct: f64,
    pub recon: f64,
    pub kl: f64,
    pub bow: f64,
    pub kl_weight: f64,
    pub lr: f64,
}

pub struct TrainSummary {
    pub history: Vec<EpochRecord>,
    pub final_total: f64,
    pub final_l_direct: f64,
    pub last_checkpoint: PathBuf,
}

fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut body = String::from("epoch,l_direct,recon,kl,bow,kl_weight,lr\n");
    for r in history {
        body.push_str(&format!(
            "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}\n",
            r.epoch, r.l_direct, r.recon, r.kl, r.bow, r.kl_weight, r.lr
        ));
    }
    fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
}

struct PairLoss {
    l_direct: f64,
    parts: ElboParts,
}

/// One joint forward/backward for a single pair; gradients accumulate into
/// the store.
#[allow(clippy::too_many_arguments)]
fn pair_backward(
    drsg: &DrsgModel,
    cvae: &TggCvaeModel,
    store: &mut ParameterStore,
    pair: &SegmentedPair,
    ctx: &TopicContext,
    config: &RunConfig,
    schedule: &AnnealSchedule,
    step: usize,
    eps: &[f64],
    train_drsg: bool,
    train_cvae: bool,
) -> Result<PairLoss> {
    let mut tape = Tape::new();
    let mut loss_nodes = Vec::new();
    let mut l_direct = 0.0;
    if train_drsg {
        let node = drsg.loss(&mut tape, store, &pair.post, &pair.direct)?;
        l_direct = tape.scalar_value(node);
        let weighted = tape.affine(node, config.weight_direct, 0.0);
        loss_nodes.push(weighted);
    }
    let mut parts = ElboParts {
        total: 0.0,
        recon: 0.0,
        kl: 0.0,
        bow: 0.0,
        kl_weight: schedule.weight(step) * config.weight_kl,
    };
    if train_cvae {
        let x_hat = segmentation::make_cvae_input(&pair.post, &pair.direct);
        let topics = match config.ablation {
            Ablation::NoTgg => Vec::new(),
            _ => ctx.topics_for(&x_hat),
        };
        let (node, p) = cvae.elbo_step(
            &mut tape,
            store,
            pair,
            &x_hat,
            &topics,
            schedule,
            step,
            eps,
            config.ablation,
            config.weight_kl,
            config.weight_bow,
        )?;
        parts = p;
        loss_nodes.push(node);
    }
    let total = match loss_nodes.len() {
        1 => loss_nodes[0],
        _ => tape.add_n(&loss_nodes),
    };
    tape.backward(store, total);
    Ok(PairLoss { l_direct, parts })
}

/// Deterministic validation objective: posterior mean, full KL weight.
fn validation_loss(
    model: &SlarmModel,
    pairs: &[SegmentedPair],
    ctx: &TopicContext,
    config: &RunConfig,
) -> Result<f64> {
    let schedule = AnnealSchedule {
        warmup_steps: 0,
        floor: 1.0,
    };
    let eps = vec![0.0; config.latent_size];
    let mut total = 0.0;
    for pair in pairs {
        let mut tape = Tape::new();
        let l_direct = {
            let node = model.drsg.loss(&mut tape, &model.store, &pair.post, &pair.direct)?;
            tape.scalar_value(node)
        };
        let x_hat = segmentation::make_cvae_input(&pair.post, &pair.direct);
        let topics = match config.ablation {
            Ablation::NoTgg => Vec::new(),
            _ => ctx.topics_for(&x_hat),
        };
        let (_, parts) = model.cvae.elbo_step(
            &mut tape,
            &model.store,
            pair,
            &x_hat,
            &topics,
            &schedule,
            1,
            &eps,
            config.ablation,
            config.weight_kl,
            config.weight_bow,
        )?;
        total += config.weight_direct * l_direct + parts.total;
    }
    Ok(total / pairs.len() as f64)
}

/// Joint training of the summed objective: one optimizer step per batch on
/// the union of parameters, linear KL annealing, learning-rate decay on
/// stagnant validation loss, per-epoch checkpoints.
pub fn train(run_dir: &Path) -> Result<TrainSummary> {
    let artifacts = load_artifacts(run_dir)?;
    train_artifacts(&artifacts, run_dir)
}

pub fn train_artifacts(artifacts: &Artifacts, run_dir: &Path) -> Result<TrainSummary> {
    let config = &artifacts.config;
    config.validate()?;
    let mut model = SlarmModel::new(config, artifacts.vocab.size())?;
    let mut adam = Adam::new(&model.store, AdamConfig::default());
    let schedule = AnnealSchedule {
        warmup_steps: config.warmup_steps,
        floor: config.kl_floor,
    };
    let ctx = TopicContext {
        vocab: &artifacts.vocab,
        tfidf: &artifacts.tfidf,
        graph: &artifacts.graph,
        topic_words: config.topic_words,
        top_k: config.top_k,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut indices: Vec<usize> = (0..artifacts.pairs.len()).collect();
    indices.shuffle(&mut rng);
    let val_count = ((artifacts.pairs.len() as f64) * config.val_fraction).floor() as usize;
    let val_count = val_count.min(artifacts.pairs.len().saturating_sub(1));
    let val_idx: Vec<usize> = indices[..val_count].to_vec();
    let mut train_idx: Vec<usize> = indices[val_count..].to_vec();
    let val_pairs: Vec<SegmentedPair> =
        val_idx.iter().map(|&i| artifacts.pairs[i].clone()).collect();

    let ckpt_dir = run_dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(ckpt_dir.display().to_string(), e))?;

    let mut lr = config.learning_rate;
    let mut best_val = f64::INFINITY;
    let mut stagnant = 0usize;
    let mut step = 0usize;
    let mut history = Vec::with_capacity(config.epochs);
    let mut last_checkpoint = ckpt_dir.join("epoch-0.ckpt");
    let phase_split = if config.two_phase {
        config.epochs.div_ceil(2)
    } else {
        0
    };

    for epoch in 1..=config.epochs {
        let (train_drsg, train_cvae) = if config.two_phase {
            if epoch <= phase_split {
                (true, false)
            } else {
                (false, true)
            }
        } else {
            (true, true)
        };
        train_idx.shuffle(&mut rng);
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        let mut kl_weight = schedule.weight(step) * config.weight_kl;
        for batch in train_idx.chunks(config.batch_size) {
            model.store.zero_grads();
            for &i in batch {
                let pair = &artifacts.pairs[i];
                let eps: Vec<f64> = (0..config.latent_size)
                    .map(|_| rng.sample(StandardNormal))
                    .collect();
                let loss = pair_backward(
                    &model.drsg,
                    &model.cvae,
                    &mut model.store,
                    pair,
                    &ctx,
                    config,
                    &schedule,
                    step,
                    &eps,
                    train_drsg,
                    train_cvae,
                )?;
                if !loss.l_direct.is_finite() || !loss.parts.total.is_finite() {
                    return Err(Error::NonFiniteLoss(format!(
                        "epoch {epoch}, pair {i}"
                    )));
                }
                sums.0 += loss.l_direct;
                sums.1 += loss.parts.recon;
                sums.2 += loss.parts.kl;
                sums.3 += loss.parts.bow;
                kl_weight = loss.parts.kl_weight;
            }
            model.store.scale_grads(1.0 / batch.len() as f64);
            clip_gradients(&mut model.store, config.grad_clip);
            adam.step(&mut model.store, lr)?;
            step += 1;
        }
        let n = train_idx.len() as f64;
        history.push(EpochRecord {
            epoch,
            l_direct: sums.0 / n,
            recon: sums.1 / n,
            kl: sums.2 / n,
            bow: sums.3 / n,
            kl_weight,
            lr,
        });

        if !val_pairs.is_empty() {
            let val = validation_loss(&model, &val_pairs, &ctx, config)?;
            if val < best_val - 1e-12 {
                best_val = val;
                stagnant = 0;
            } else {
                stagnant += 1;
                if stagnant >= config.lr_patience {
                    lr *= config.lr_decay;
                    stagnant = 0;
                }
            }
        }

        if epoch % config.checkpoint_every == 0 || epoch == config.epochs {
            let path = ckpt_dir.join(format!("epoch-{epoch}.ckpt"));
            checkpoint::save(&path, &model.store, Some(&adam))?;
            last_checkpoint = path;
        }
    }
    write_history(&history_path(run_dir), &history)?;
    let last = history.last().cloned().unwrap_or(EpochRecord {
        epoch: 0,
        l_direct: 0.0,
        recon: 0.0,
        kl: 0.0,
        bow: 0.0,
        kl_weight: 0.0,
        lr,
    });
    Ok(TrainSummary {
        final_total: last.l_direct + last.recon + last.kl_weight * last.kl + last.bow,
        final_l_direct: last.l_direct,
        history,
        last_checkpoint,
    })
}

/// A trained run reloaded for generation.
pub struct LoadedRun {
    pub config: RunConfig,
    pub vocab: Vocabulary,
    pub tfidf: TfIdfModel,
    pub graph: TopicGraph,
    pub model: SlarmModel,
}

/// Newest checkpoint in the run directory by epoch number.
pub fn latest_checkpoint(run_dir: &Path) -> Result<PathBuf> {
    let dir = run_dir.join("checkpoints");
    let mut best: Option<(u64, PathBuf)> = None;
    let entries = fs::read_dir(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir.display().to_string(), e))?;
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(num) = name
            .strip_prefix("epoch-")
            .and_then(|s| s.strip_suffix(".ckpt"))
            .and_then(|s| s.parse::<u64>().ok())
        {
            if best.as_ref().is_none_or(|(b, _)| num > *b) {
                best = Some((num, entry.path()));
            }
        }
    }
    best.map(|(_, p)| p)
        .ok_or_else(|| Error::Checkpoint(format!("no checkpoints under {}", dir.display())))
}

pub fn load_run(run_dir: &Path, checkpoint_file: Option<&Path>) -> Result<LoadedRun> {
    let artifacts = load_artifacts(run_dir)?;
    let mut model = SlarmModel::new(&artifacts.config, artifacts.vocab.size())?;
    let path = match checkpoint_file {
        Some(p) => p.to_path_buf(),
        None => latest_checkpoint(run_dir)?,
    };
    checkpoint::load(&path, &mut model.store, None)?;
    Ok(LoadedRun {
        config: artifacts.config,
        vocab: artifacts.vocab,
        tfidf: artifacts.tfidf,
        graph: artifacts.graph,
        model,
    })
}

/// Generate a full response: the mediator first, then the supplementary
/// segment conditioned on post ++ SEP ++ direct.
pub fn respond(run: &LoadedRun, post: &[String], noise: &mut Noise) -> Result<GenerationResult> {
    if post.is_empty() {
        return Err(Error::Invalid("post must be non-empty".into()));
    }
    let post_ids = run.vocab.encode(post);
    let direct = run
        .model
        .drsg
        .generate(&run.model.store, &post_ids, run.config.max_gen)?;
    if direct.is_empty() {
        return Ok(GenerationResult::new(Vec::new(), Vec::new()));
    }
    let x_hat = segmentation::make_cvae_input(&post_ids, &direct);
    let ctx = TopicContext {
        vocab: &run.vocab,
        tfidf: &run.tfidf,
        graph: &run.graph,
        topic_words: run.config.topic_words,
        top_k: run.config.top_k,
    };
    let topics = match run.config.ablation {
        Ablation::NoTgg => Vec::new(),
        _ => ctx.topics_for(&x_hat),
    };
    let eps = noise.draw(run.config.latent_size);
    let supplementary = run.model.cvae.generate(
        &run.model.store,
        &x_hat,
        &topics,
        &eps,
        run.config.max_gen,
        run.config.ablation,
    )?;
    Ok(GenerationResult::new(direct, supplementary))
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

/// Template bank for the synthetic corpus: topic families with neighbor
/// words, post templates over the family word, direct phrases ending in a
/// non-final punctuation mark, and supplementary templates over a neighbor.
pub struct SyntheticBank {
    pub families: Vec<(&'static str, [&'static str; 4])>,
    pub post_templates: Vec<&'static str>,
    pub direct_phrases: Vec<&'static str>,
    pub sup_templates: Vec<&'static str>,
}

impl Default for SyntheticBank {
    fn default() -> Self {
        SyntheticBank {
            families: vec![
                ("dinner", ["restaurant", "noodles", "dessert", "chef"]),
                ("movie", ["cinema", "actor", "trailer", "popcorn"]),
                ("music", ["guitar", "concert", "melody", "drummer"]),
                ("travel", ["mountains", "tickets", "hostel", "luggage"]),
                ("garden", ["roses", "compost", "sunlight", "beetles"]),
                ("books", ["library", "novel", "chapter", "author"]),
                ("weather", ["thunder", "sunshine", "umbrella", "breeze"]),
                ("coffee", ["espresso", "beans", "barista", "mug"]),
            ],
            post_templates: vec![
                "do you like {w} ?",
                "have you tried the {w} yet ?",
                "is the {w} any good ?",
                "what do you think about {w} ?",
                "shall we talk about {w} ?",
                "did you enjoy the {w} today ?",
            ],
            direct_phrases: vec![
                "yes i really do ,",
                "sure thing ,",
                "not at all ,",
                "oh definitely !",
            ],
            sup_templates: vec![
                "the {s} was lovely last night .",
                "i keep thinking about the {s} .",
                "my friend recommends the {s} .",
                "we should visit the {s} soon .",
            ],
        }
    }
}

/// Built-in stop list: template filler words, common function words, and the
/// default punctuation marks.
pub fn default_stop_words() -> BTreeSet<String> {
    let words = [
        ".", ",", "!", "?", ";", ":", "a", "an", "the", "i", "you", "we", "he", "she", "they",
        "it", "me", "my", "your", "our", "his", "her", "their", "is", "are", "was", "were", "be",
        "been", "am", "do", "does", "did", "have", "has", "had", "will", "would", "shall",
        "should", "can", "could", "and", "or", "but", "not", "no", "yes", "nope", "of", "to",
        "in", "on", "at", "for", "with", "about", "from", "into", "over", "so", "too", "very",
        "just", "now", "then", "there", "here", "this", "that", "these", "those", "what", "when",
        "where", "which", "who", "how", "why", "like", "tried", "try", "yet", "any", "good",
        "think", "talk", "enjoy", "today", "really", "sure", "thing", "all", "oh", "definitely",
        "lovely", "last", "night", "keep", "thinking", "friend", "recommends", "visit", "soon",
    ];
    words.iter().map(|s| s.to_string()).collect()
}

/// Deterministically expand the bank into a corpus file of `n_pairs` lines.
/// Each distinct post maps to exactly one response, so memorization is
/// well-defined; every response contains a mid-sentence punctuation mark and
/// a topic-bearing supplementary phrase whose word co-occurs with the post's
/// family word.
pub fn make_synthetic_corpus(
    seed: u64,
    n_pairs: usize,
    bank: &SyntheticBank,
    out: &Path,
) -> Result<()> {
    if n_pairs == 0 {
        return Err(Error::Invalid("need at least one synthetic pair".into()));
    }
    let mut grid = Vec::new();
    for (fi, (family, neighbors)) in bank.families.iter().enumerate() {
        for (ti, template) in bank.post_templates.iter().enumerate() {
            let post = template.replace("{w}", family);
            let mut entry_rng =
                ChaCha8Rng::seed_from_u64(seed ^ ((fi * bank.post_templates.len() + ti) as u64).wrapping_mul(0x9E3779B97F4A7C15));
            let direct = bank.direct_phrases[entry_rng.gen_range(0..bank.direct_phrases.len())];
            let sup_template = bank.sup_templates[entry_rng.gen_range(0..bank.sup_templates.len())];
            // skew neighbor choice toward the front of the list so the edge
            // counts are deliberately non-uniform
            let a = entry_rng.gen_range(0..neighbors.len());
            let b = entry_rng.gen_range(0..neighbors.len());
            let neighbor = neighbors[a.min(b)];
            let sup = sup_template.replace("{s}", neighbor);
            grid.push(format!("{post}\t{direct} {sup}"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    grid.shuffle(&mut rng);
    let mut body = String::new();
    for i in 0..n_pairs {
        body.push_str(&grid[i % grid.len()]);
        body.push('\n');
    }
    fs::write(out, body).map_err(|e| Error::io(out.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokens, EOS_TOKEN};

    fn synth(dir: &Path, seed: u64, n: usize) -> PathBuf {
        let path = dir.join("corpus.tsv");
        make_synthetic_corpus(seed, n, &SyntheticBank::default(), &path).unwrap();
        path
    }

    fn tiny_config(epochs: usize) -> RunConfig {
        let mut c = RunConfig::desk();
        c.embedding_size = 8;
        c.hidden_size = 12;
        c.latent_size = 6;
        c.epochs = epochs;
        c.batch_size = 2;
        c.warmup_steps = 10;
        c.val_fraction = 0.0;
        c.max_gen = 16;
        c
    }

    #[test]
    fn synthetic_corpus_is_deterministic_and_punctuated() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.tsv");
        let b = dir.path().join("b.tsv");
        make_synthetic_corpus(1, 50, &SyntheticBank::default(), &a).unwrap();
        make_synthetic_corpus(1, 50, &SyntheticBank::default(), &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        let body = fs::read_to_string(&a).unwrap();
        let lines: Vec<&str> = body.lines().collect();
        assert_eq!(lines.len(), 50);
        let punct = segmentation::default_punctuation();
        for line in lines {
            let response = line.split('\t').nth(1).unwrap();
            assert!(response
                .split_whitespace()
                .any(|t| punct.contains(t)));
        }
    }

    #[test]
    fn synthetic_posts_are_distinct_within_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = synth(dir.path(), 3, 48);
        let body = fs::read_to_string(&path).unwrap();
        let posts: Vec<&str> = body.lines().map(|l| l.split('\t').next().unwrap()).collect();
        let distinct: std::collections::BTreeSet<&str> = posts.iter().copied().collect();
        assert_eq!(distinct.len(), posts.len());
    }

    #[test]
    fn preprocess_writes_all_artifacts_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let corpus_path = synth(dir.path(), 1, 12);
        let config = tiny_config(1);
        let stops = default_stop_words();
        let run_a = dir.path().join("run_a");
        let run_b = dir.path().join("run_b");
        let artifacts = preprocess(&corpus_path, &stops, &config, &run_a).unwrap();
        preprocess(&corpus_path, &stops, &config, &run_b).unwrap();
        assert_eq!(artifacts.pairs.len(), 12);
        for f in ["config.json", "vocab.txt", "segmented.tsv", "graph.txt", "stopwords.txt"] {
            let a = fs::read(run_a.join(f)).unwrap();
            let b = fs::read(run_b.join(f)).unwrap();
            assert_eq!(a, b, "{f} differs between identical runs");
        }
        // graph normalization on the synthetic corpus
        for source in artifacts.graph.sources() {
            let sum: f64 = artifacts.graph.neighbors(source).iter().map(|(_, _, p)| p).sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn preprocess_keeps_placeholder_rows_in_cache() {
        let dir = tempfile::tempdir().unwrap();
        let corpus_path = dir.path().join("corpus.tsv");
        fs::write(&corpus_path, "hello there\tno punctuation here\nhi\tyes , with more\n").unwrap();
        let config = tiny_config(1);
        let run = dir.path().join("run");
        let artifacts = preprocess(&corpus_path, &default_stop_words(), &config, &run).unwrap();
        let cache = segmentation::load_segmented(&run.join("segmented.tsv")).unwrap();
        assert_eq!(cache[0].2, vec![EOS_TOKEN.to_string()]);
        assert!(artifacts.pairs[0].has_placeholder_sup());
    }

    #[test]
    fn loaded_artifacts_match_fresh_preprocess() {
        let dir = tempfile::tempdir().unwrap();
        let corpus_path = synth(dir.path(), 1, 10);
        let config = tiny_config(1);
        let run = dir.path().join("run");
        let fresh = preprocess(&corpus_path, &default_stop_words(), &config, &run).unwrap();
        let loaded = load_artifacts(&run).unwrap();
        assert_eq!(loaded.pairs, fresh.pairs);
        assert_eq!(loaded.graph, fresh.graph);
        assert_eq!(loaded.config, fresh.config);
    }

    #[test]
    fn short_training_runs_and_logs_history() {
        let dir = tempfile::tempdir().unwrap();
        let corpus_path = synth(dir.path(), 1, 6);
        let config = tiny_config(3);
        let run = dir.path().join("run");
        let artifacts = preprocess(&corpus_path, &default_stop_words(), &config, &run).unwrap();
        let summary = train_artifacts(&artifacts, &run).unwrap();
        assert_eq!(summary.history.len(), 3);
        let body = fs::read_to_string(history_path(&run)).unwrap();
        assert!(body.starts_with("epoch,l_direct,recon,kl,bow,kl_weight,lr\n"));
        assert_eq!(body.lines().count(), 4);
        assert!(summary.last_checkpoint.exists());
        // order-of-magnitude check on the first epoch: each NLL term starts
        // near ln V
        let v = artifacts.vocab.size() as f64;
        let first = &summary.history[0];
        let total = first.l_direct + first.recon + first.kl_weight * first.kl + first.bow;
        assert!(total > 1.6 * v.ln() && total < 3.6 * v.ln(), "total {total}");
    }

    #[test]
    fn training_twice_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let corpus_path = synth(dir.path(), 1, 6);
        let config = tiny_config(2);
        let stops = default_stop_words();
        let run_a = dir.path().join("a");
        let run_b = dir.path().join("b");
        let art_a = preprocess(&corpus_path, &stops, &config, &run_a).unwrap();
        let art_b = preprocess(&corpus_path, &stops, &config, &run_b).unwrap();
        train_artifacts(&art_a, &run_a).unwrap();
        train_artifacts(&art_b, &run_b).unwrap();
        assert_eq!(
            fs::read(history_path(&run_a)).unwrap(),
            fs::read(history_path(&run_b)).unwrap()
        );
        assert_eq!(
            fs::read(run_a.join("checkpoints/epoch-2.ckpt")).unwrap(),
            fs::read(run_b.join("checkpoints/epoch-2.ckpt")).unwrap()
        );
    }

    #[test]
    fn ablations_train_with_finite_losses() {
        let dir = tempfile::tempdir().unwrap();
        let corpus_path = synth(dir.path(), 1, 6);
        for ablation in [Ablation::NoTgg, Ablation::NoCvae] {
            let mut config = tiny_config(2);
            config.ablation = ablation;
            let run = dir.path().join(format!("{ablation:?}"));
            let artifacts = preprocess(&corpus_path, &default_stop_words(), &config, &run).unwrap();
            let summary = train_artifacts(&artifacts, &run).unwrap();
            assert!(summary.final_total.is_finite());
            for r in &summary.history {
                assert!(r.l_direct.is_finite() && r.recon.is_finite());
            }
        }
    }

    #[test]
    fn stagnant_validation_loss_decays_the_learning_rate() {
        // with an effectively frozen model the validation loss cannot
        // improve, so the decay fires every lr_patience epochs
        let dir = tempfile::tempdir().unwrap();
        let corpus_path = synth(dir.path(), 1, 6);
        let mut config = tiny_config(8);
        config.val_fraction = 0.34;
        config.learning_rate = 1e-300;
        config.lr_patience = 2;
        let run = dir.path().join("run");
        let artifacts = preprocess(&corpus_path, &default_stop_words(), &config, &run).unwrap();
        let summary = train_artifacts(&artifacts, &run).unwrap();
        let first = summary.history.first().unwrap().lr;
        let last = summary.history.last().unwrap().lr;
        assert!(last < first, "lr never decayed: {first} -> {last}");
        let expected = first * config.lr_decay.powi(3);
        assert!(
            (last / expected - 1.0).abs() < 1e-12,
            "lr {last} vs expected {expected}"
        );
    }

    #[test]
    fn two_phase_training_covers_both_halves() {
        let dir = tempfile::tempdir().unwrap();
        let corpus_path = synth(dir.path(), 1, 4);
        let mut config = tiny_config(4);
        config.two_phase = true;
        let run = dir.path().join("run");
        let artifacts = preprocess(&corpus_path, &default_stop_words(), &config, &run).unwrap();
        let summary = train_artifacts(&artifacts, &run).unwrap();
        // phase 1 trains only the mediator, phase 2 only the CVAE
        assert!(summary.history[0].recon == 0.0 && summary.history[0].l_direct > 0.0);
        assert!(summary.history[3].recon > 0.0 && summary.history[3].l_direct == 0.0);
    }

    #[test]
    fn respond_round_trips_through_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let corpus_path = synth(dir.path(), 1, 6);
        let config = tiny_config(2);
        let run = dir.path().join("run");
        let artifacts = preprocess(&corpus_path, &default_stop_words(), &config, &run).unwrap();
        train_artifacts(&artifacts, &run).unwrap();
        let loaded = load_run(&run, None).unwrap();
        let post = artifacts.triples[0].0.clone();
        let a = respond(&loaded, &post, &mut Noise::Zero).unwrap();
        let b = respond(&loaded, &post, &mut Noise::Zero).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.full.len(), a.direct.len() + a.supplementary.len());
        let mut rejoined = a.direct.clone();
        rejoined.extend_from_slice(&a.supplementary);
        assert_eq!(a.full, rejoined);
        assert!(respond(&loaded, &[], &mut Noise::Zero).is_err());
    }

    #[test]
    fn generation_result_concatenates_exactly() {
        let r = GenerationResult::new(vec![5, 6], vec![7]);
        assert_eq!(r.full, vec![5, 6, 7]);
        let empty_sup = GenerationResult::new(vec![5, 6], vec![]);
        assert_eq!(empty_sup.full, empty_sup.direct);
        assert_eq!(tokens("a b").len(), 2);
    }
}
