//! slarm: preprocess / train / generate / evaluate workflows over the
//! dialogue-generation pipeline.
//!
//! Exit codes: 0 success, 1 validation error (bad flags or inputs),
//! 2 runtime failure. Diagnostics go to stderr, results to files or stdout.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use slarm_core::config::{Ablation, RunConfig};
use slarm_core::corpus::tokens;
use slarm_core::error::Error as CoreError;
use slarm_core::evaluation;
use slarm_core::pipeline::{self, Noise, SyntheticBank};
use slarm_core::topic_graph::TopicGraph;

#[derive(Parser)]
#[command(name = "slarm", version, about = "sentence-level auto-regressive dialogue generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dialogue corpus.
    Synth {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Number of post-response lines to emit.
        #[arg(long, default_value_t = 50)]
        pairs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment a corpus, build vocabulary, TF-IDF and the topic graph.
    Preprocess {
        /// TSV corpus: post<TAB>response, whitespace-tokenized.
        #[arg(long)]
        corpus: PathBuf,
        /// Run directory to create.
        #[arg(long)]
        run: PathBuf,
        /// Stop-word file, one token per line (built-in list when absent).
        #[arg(long)]
        stop_words: Option<PathBuf>,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Train on a preprocessed run directory.
    Train {
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Generate a response for a post with a trained run.
    Generate {
        #[arg(long)]
        run: PathBuf,
        /// Whitespace-tokenized post.
        #[arg(long)]
        post: String,
        /// Decode from the prior mean instead of sampling noise.
        #[arg(long, default_value_t = false)]
        eps_zero: bool,
        /// Sampling seed when noise is drawn.
        #[arg(long, default_value_t = 0)]
        sample_seed: u64,
        /// Checkpoint file (newest under run/checkpoints when absent).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score a hypotheses file against an aligned reference file.
    Evaluate {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the top-K topic-graph neighbors of a word.
    GraphQuery {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        word: String,
        #[arg(short, long, default_value_t = 5)]
        k: usize,
    },
}

/// Config file plus flag overrides; flags win. Names mirror the RunConfig
/// fields.
#[derive(Args)]
struct ConfigOverrides {
    /// Start from a config JSON file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from a named profile: "desk" or "paper".
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    embedding_size: Option<usize>,
    #[arg(long)]
    hidden_size: Option<usize>,
    #[arg(long)]
    latent_size: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    topic_words: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    max_gen: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    warmup_steps: Option<usize>,
    #[arg(long)]
    kl_floor: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    weight_direct: Option<f64>,
    #[arg(long)]
    weight_kl: Option<f64>,
    #[arg(long)]
    weight_bow: Option<f64>,
    /// One of: none, no_tgg, no_cvae.
    #[arg(long)]
    ablation: Option<String>,
    #[arg(long)]
    two_phase: Option<bool>,
}

enum AppError {
    Validation(String),
    Runtime(String),
}

impl AppError {
    fn code(&self) -> u8 {
        match self {
            AppError::Validation(_) => 1,
            AppError::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            AppError::Validation(m) | AppError::Runtime(m) => m,
        }
    }
}

/// Errors raised before any real work starts are validation failures;
/// everything after is a runtime failure.
fn validation(e: CoreError) -> AppError {
    AppError::Validation(e.to_string())
}

fn runtime(e: CoreError) -> AppError {
    AppError::Runtime(e.to_string())
}

impl ConfigOverrides {
    fn resolve(&self) -> Result<RunConfig, AppError> {
        let mut config = match (&self.config, &self.profile) {
            (Some(path), _) => RunConfig::load(path).map_err(validation)?,
            (None, Some(profile)) => RunConfig::from_profile(profile).map_err(validation)?,
            (None, None) => RunConfig::desk(),
        };
        if let Some(profile) = &self.profile {
            config.profile = profile.clone();
        }
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    config.$field = v;
                }
            };
        }
        set!(vocab_size);
        set!(embedding_size);
        set!(hidden_size);
        set!(latent_size);
        set!(layers);
        set!(top_k);
        set!(topic_words);
        set!(max_len);
        set!(max_gen);
        set!(learning_rate);
        set!(batch_size);
        set!(epochs);
        set!(checkpoint_every);
        set!(warmup_steps);
        set!(kl_floor);
        set!(seed);
        set!(val_fraction);
        set!(weight_direct);
        set!(weight_kl);
        set!(weight_bow);
        set!(two_phase);
        if let Some(ablation) = &self.ablation {
            config.ablation = match ablation.as_str() {
                "none" => Ablation::None,
                "no_tgg" => Ablation::NoTgg,
                "no_cvae" => Ablation::NoCvae,
                other => {
                    return Err(AppError::Validation(format!(
                        "unknown ablation {other:?}; expected none, no_tgg or no_cvae"
                    )))
                }
            };
        }
        config.validate().map_err(validation)?;
        Ok(config)
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), AppError> {
    if !path.exists() {
        return Err(AppError::Validation(format!(
            "{what} {} does not exist",
            path.display()
        )));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Synth { seed, pairs, out } => {
            if pairs == 0 {
                return Err(AppError::Validation("--pairs must be at least 1".into()));
            }
            pipeline::make_synthetic_corpus(seed, pairs, &SyntheticBank::default(), &out)
                .map_err(runtime)?;
            eprintln!("wrote {pairs} pairs to {}", out.display());
        }
        Command::Preprocess {
            corpus,
            run,
            stop_words,
            overrides,
        } => {
            require_file(&corpus, "corpus")?;
            let config = overrides.resolve()?;
            let stops = match stop_words {
                Some(path) => {
                    require_file(&path, "stop-word file")?;
                    pipeline::load_stop_words(&path).map_err(validation)?
                }
                None => pipeline::default_stop_words(),
            };
            let artifacts =
                pipeline::preprocess(&corpus, &stops, &config, &run).map_err(runtime)?;
            eprintln!(
                "preprocessed {} pairs ({} skipped) into {}; vocabulary {}, graph sources {}",
                artifacts.pairs.len(),
                artifacts.skipped,
                run.display(),
                artifacts.vocab.size(),
                artifacts.graph.num_sources(),
            );
        }
        Command::Train { run, overrides } => {
            require_file(&pipeline::config_path(&run), "run config")?;
            // flags override the stored run config; the merged config is
            // rewritten so the run directory stays self-describing
            let stored = RunConfig::load(&pipeline::config_path(&run)).map_err(validation)?;
            let merged = ConfigOverrides {
                config: Some(pipeline::config_path(&run)),
                ..overrides
            }
            .resolve()?;
            if merged != stored {
                merged.save(&pipeline::config_path(&run)).map_err(runtime)?;
            }
            let summary = pipeline::train(&run).map_err(runtime)?;
            let last = summary.history.last();
            eprintln!(
                "trained {} epochs; final l_direct {:.4}, joint total {:.4}; checkpoint {}",
                last.map_or(0, |r| r.epoch),
                summary.final_l_direct,
                summary.final_total,
                summary.last_checkpoint.display(),
            );
        }
        Command::Generate {
            run,
            post,
            eps_zero,
            sample_seed,
            checkpoint,
        } => {
            let post_tokens = tokens(&post);
            if post_tokens.is_empty() {
                return Err(AppError::Validation("--post must contain tokens".into()));
            }
            require_file(&pipeline::config_path(&run), "run config")?;
            let loaded = pipeline::load_run(&run, checkpoint.as_deref()).map_err(runtime)?;
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
            let mut noise = if eps_zero {
                Noise::Zero
            } else {
                Noise::Sample(&mut rng)
            };
            let result = pipeline::respond(&loaded, &post_tokens, &mut noise).map_err(runtime)?;
            println!("direct: {}", loaded.vocab.decode(&result.direct).join(" "));
            println!(
                "supplementary: {}",
                loaded.vocab.decode(&result.supplementary).join(" ")
            );
            println!("full: {}", loaded.vocab.decode(&result.full).join(" "));
        }
        Command::Evaluate {
            hyp,
            reference,
            out,
        } => {
            require_file(&hyp, "hypotheses file")?;
            require_file(&reference, "reference file")?;
            let report = evaluation::evaluate_run(&hyp, &reference).map_err(runtime)?;
            let body = serde_json::to_string_pretty(&report)
                .map_err(|e| AppError::Runtime(e.to_string()))?;
            match out {
                Some(path) => std::fs::write(&path, body + "\n")
                    .map_err(|e| AppError::Runtime(format!("{}: {e}", path.display())))?,
                None => println!("{body}"),
            }
        }
        Command::GraphQuery { run, word, k } => {
            let graph_path = run.join("graph.txt");
            require_file(&graph_path, "graph file")?;
            let graph = TopicGraph::load(&graph_path).map_err(runtime)?;
            for (neighbor, prob) in graph.top_k_neighbors(&[word], k) {
                println!("{neighbor}\t{prob:.6}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version print through clap and are not failures
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
