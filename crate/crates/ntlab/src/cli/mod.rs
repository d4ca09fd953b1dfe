//! Command-line surface: one subcommand per pipeline stage
//! (gen, stats, phrase, tokenize, split, train-markov, train-lm,
//! sample, eval, grid), a declarative TOML config with flag overrides
//! (precedence: flags > file > defaults), and a run manifest that
//! records every artifact by content hash.
//!
//! Failures print a single-line JSON object to standard error and
//! exit nonzero (1 for runtime errors, 2 for usage errors).

mod config;
mod manifest;

pub use config::FileConfig;
pub use manifest::{manifest_path_for, ManifestBuilder, RunManifest};

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::corpus::generate::{generate_corpus_file, manifest_path};
use crate::corpus::words::{
    classify_word, longest_squarefree_run, phrase_count, DyckWord, WordClass,
};
use crate::dataset::{make_split, split_regions, window, Sentence};
use crate::error::{Error, Result};
use crate::eval;
use crate::lm;
use crate::markov::TransitionMatrix;
use crate::tokenizer::{read_token_shard, train_bpe, write_token_shard, TokenId, Vocabulary};
use crate::util::{component_rng, sha256_file};
use config::{pick, pick_clone};

/// Environment variable naming the cache directory for derived
/// artifacts (currently: corpus statistics keyed by content hash).
pub const CACHE_ENV: &str = "NTLAB_CACHE";

#[derive(Parser)]
#[command(
    name = "ntlab",
    version,
    about = "Laboratory for the arithmetic text of prime factorization trees"
)]
pub struct Cli {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; every random stream derives from it per component.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections (0 = one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Force fully serial execution.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Run-manifest path (default: next to the primary output).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the corpus text for integers in [from, to].
    Gen {
        #[arg(long)]
        from: Option<u64>,
        #[arg(long)]
        to: Option<u64>,
        /// Sieve segment size in integers.
        #[arg(long)]
        segment: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a corpus: counts, dictionary, top frequencies.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        /// Report JSON path (default: <corpus>.stats.json).
        #[arg(long)]
        out: Option<PathBuf>,
        /// How many of the most frequent words to list.
        #[arg(long)]
        top: Option<usize>,
    },
    /// Count occurrences of consecutive-word phrases in a corpus.
    Phrase {
        #[arg(long)]
        corpus: PathBuf,
        /// A phrase of space-separated words; repeatable.
        #[arg(long = "phrase", required = true)]
        phrases: Vec<String>,
        /// Report JSON path (default: <corpus>.phrases.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a byte-pair vocabulary on a text file.
    Tokenize {
        #[arg(long)]
        text: PathBuf,
        /// Dictionary size D (specials not included).
        #[arg(long)]
        dict: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Additionally encode these text files to .tokens shards.
        #[arg(long = "encode")]
        encode: Vec<PathBuf>,
    },
    /// Split a corpus into train/validation/test region files.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Fit the first-order baseline on a token stream.
    TrainMarkov {
        #[arg(long)]
        vocab: PathBuf,
        /// Training text (or a .tokens shard).
        #[arg(long)]
        train: PathBuf,
        /// Additive smoothing.
        #[arg(long)]
        alpha: Option<f64>,
        /// Closed-form fit or the gradient-based variant.
        #[arg(long, value_enum, default_value_t = FitKind::Mle)]
        fit: FitKind,
        #[arg(long, default_value_t = 2000)]
        adam_steps: usize,
        #[arg(long, default_value_t = 0.05)]
        adam_lr: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a transformer on the next-word or masked objective.
    TrainLm {
        #[arg(long)]
        vocab: PathBuf,
        /// Training text (or a .tokens shard).
        #[arg(long)]
        train: PathBuf,
        /// Validation text (or a .tokens shard).
        #[arg(long)]
        val: PathBuf,
        #[arg(long, value_enum)]
        objective: ObjectiveArg,
        /// Architecture preset; individual flags override its fields.
        #[arg(long, value_enum)]
        preset: Option<PresetArg>,
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long)]
        heads: Option<usize>,
        #[arg(long)]
        head_dim: Option<usize>,
        #[arg(long)]
        qk_dim: Option<usize>,
        #[arg(long)]
        context: Option<usize>,
        #[arg(long)]
        mlp_ratio: Option<usize>,
        #[arg(long)]
        exclude_self: bool,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        warmup_steps: Option<usize>,
        #[arg(long)]
        min_lr_frac: Option<f64>,
        /// Masking probability (masked objective only).
        #[arg(long)]
        mask_prob: Option<f64>,
        /// Checkpoint path for the best-validation parameters.
        #[arg(long)]
        out: PathBuf,
        /// Loss-curve CSV path (default: <out>.loss.csv).
        #[arg(long)]
        curves: Option<PathBuf>,
    },
    /// Continue a prompt with a trained next-word model.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Prompt text over the corpus alphabet, e.g. "10 10 1100".
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Temperature sweep of word metrics for next-word models.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Held-out text (or a .tokens shard) to cut instances from.
        #[arg(long)]
        test: PathBuf,
        /// Optional first-order baseline to score on the same instances.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Comma-separated temperatures.
        #[arg(long, value_delimiter = ',')]
        temps: Option<Vec<f64>>,
        /// Instances per temperature.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        prompt_len: Option<usize>,
        #[arg(long)]
        target_len: Option<usize>,
        /// Confusion-matrix class count before the residual class.
        #[arg(long)]
        top_k: Option<usize>,
        /// Temperature whose report feeds the per-word tables.
        #[arg(long)]
        detail_temp: Option<f64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Masked-model accuracy over the (p_m, T) lattice.
    Grid {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Held-out text (or a .tokens shard) to cut sentences from.
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_delimiter = ',')]
        mask_probs: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        temps: Option<Vec<f64>>,
        /// Sentences per cell.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ObjectiveArg {
    Nwp,
    Mlm,
}

impl From<ObjectiveArg> for lm::Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Nwp => lm::Objective::Nwp,
            ObjectiveArg::Mlm => lm::Objective::Mlm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum PresetArg {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum FitKind {
    Mle,
    Adam,
}

/// Parse argv and run; returns the process exit code.
pub fn main_entry() -> u8 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(
                e.kind(),
                ErrorKind::DisplayHelp
                    | ErrorKind::DisplayVersion
                    | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
            ) {
                let _ = e.print();
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().find(|l| !l.is_empty()).unwrap_or("bad usage");
            eprintln!("{}", serde_json::json!({ "error": first }));
            return 2;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.to_string() }));
            1
        }
    }
}

/// Shared per-run context resolved from globals.
struct Ctx {
    file: FileConfig,
    seed: u64,
    workers: usize,
    deterministic: bool,
    manifest_override: Option<PathBuf>,
}

impl Ctx {
    fn builder(&self, command: &str) -> ManifestBuilder {
        ManifestBuilder::new(command, self.seed, self.deterministic, self.workers)
    }

    fn manifest_path(&self, primary: &Path) -> PathBuf {
        self.manifest_override
            .clone()
            .unwrap_or_else(|| manifest_path_for(primary))
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let deterministic = cli.deterministic || file.deterministic.unwrap_or(false);
    let workers = pick(cli.workers, file.workers, 0);
    let threads = if deterministic { 1 } else { workers };
    // The pool can only be installed once per process; a later failure
    // means a pool already exists, which is fine.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
    let ctx = Ctx {
        seed: pick(cli.seed, file.seed, 42),
        workers,
        deterministic,
        manifest_override: cli.manifest.clone(),
        file,
    };
    match cli.command {
        Command::Gen {
            from,
            to,
            segment,
            out,
        } => cmd_gen(&ctx, from, to, segment, &out),
        Command::Stats { corpus, out, top } => cmd_stats(&ctx, &corpus, out, top),
        Command::Phrase {
            corpus,
            phrases,
            out,
        } => cmd_phrase(&ctx, &corpus, &phrases, out),
        Command::Tokenize {
            text,
            dict,
            out,
            encode,
        } => cmd_tokenize(&ctx, &text, dict, &out, &encode),
        Command::Split { corpus, out_dir } => cmd_split(&ctx, &corpus, &out_dir),
        Command::TrainMarkov {
            vocab,
            train,
            alpha,
            fit,
            adam_steps,
            adam_lr,
            out,
        } => cmd_train_markov(&ctx, &vocab, &train, alpha, fit, adam_steps, adam_lr, &out),
        Command::TrainLm {
            vocab,
            train,
            val,
            objective,
            preset,
            layers,
            heads,
            head_dim,
            qk_dim,
            context,
            mlp_ratio,
            exclude_self,
            batch_size,
            max_epochs,
            patience,
            lr,
            warmup_steps,
            min_lr_frac,
            mask_prob,
            out,
            curves,
        } => {
            let arch = ArchFlags {
                preset,
                layers,
                heads,
                head_dim,
                qk_dim,
                context,
                mlp_ratio,
                exclude_self,
            };
            let hyper = HyperFlags {
                batch_size,
                max_epochs,
                patience,
                lr,
                warmup_steps,
                min_lr_frac,
                mask_prob,
            };
            cmd_train_lm(&ctx, &vocab, &train, &val, objective, arch, hyper, &out, curves)
        }
        Command::Sample {
            model,
            vocab,
            prompt,
            count,
            temperature,
            out,
        } => cmd_sample(&ctx, &model, &vocab, &prompt, count, temperature, &out),
        Command::Eval {
            model,
            vocab,
            test,
            baseline,
            temps,
            m,
            prompt_len,
            target_len,
            top_k,
            detail_temp,
            out_dir,
        } => {
            let flags = EvalFlags {
                temps,
                m,
                prompt_len,
                target_len,
                top_k,
                detail_temp,
            };
            cmd_eval(&ctx, &model, &vocab, &test, baseline.as_deref(), flags, &out_dir)
        }
        Command::Grid {
            model,
            vocab,
            test,
            mask_probs,
            temps,
            m,
            out_dir,
        } => cmd_grid(&ctx, &model, &vocab, &test, mask_probs, temps, m, &out_dir),
    }
}

// ---------------------------------------------------------------- gen

#[derive(Serialize)]
struct GenSettings {
    from: u64,
    to: u64,
    segment: u64,
    out: String,
}

fn cmd_gen(
    ctx: &Ctx,
    from: Option<u64>,
    to: Option<u64>,
    segment: Option<u64>,
    out: &Path,
) -> Result<()> {
    let mut b = ctx.builder("gen");
    let s = GenSettings {
        from: pick(from, ctx.file.gen.from, 2),
        to: pick(to, ctx.file.gen.to, 0),
        segment: pick(segment, ctx.file.gen.segment, 1 << 16),
        out: out.display().to_string(),
    };
    if s.to < s.from {
        return Err(Error::Domain(format!(
            "empty range: --to {} below --from {}",
            s.to, s.from
        )));
    }
    b.config(&s)?;
    let outcome = generate_corpus_file(s.from, s.to, s.segment, out)?;
    b.output(out)?;
    let sidecar = manifest_path(out);
    b.output(&sidecar)?;
    b.write(&ctx.manifest_path(out))?;
    println!(
        "wrote {} words for [{}, {}] ({} bytes, {} primes, {} distinct words){}",
        outcome.stats.word_count,
        s.from,
        s.to,
        outcome.manifest.bytes,
        outcome.stats.prime_count,
        outcome.stats.distinct_words(),
        if outcome.resumed { ", resumed" } else { "" },
    );
    Ok(())
}

// -------------------------------------------------------------- stats

#[derive(Serialize, serde::Deserialize)]
struct StatsReport {
    corpus_sha256: String,
    word_count: u64,
    distinct_words: u64,
    prime_count: u64,
    /// Words of squarefree form (10)^k, k >= 1.
    squarefree_count: u64,
    longest_squarefree_run: u64,
    /// Most frequent words, descending, ties lexicographic.
    top_words: Vec<(String, u64)>,
}

#[derive(Serialize)]
struct StatsSettings {
    corpus: String,
    out: String,
    top: usize,
}

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).map(PathBuf::from)
}

fn cmd_stats(ctx: &Ctx, corpus: &Path, out: Option<PathBuf>, top: Option<usize>) -> Result<()> {
    let out = out.unwrap_or_else(|| suffixed(corpus, ".stats.json"));
    let top = top.unwrap_or(10);
    let mut b = ctx.builder("stats");
    b.config(&StatsSettings {
        corpus: corpus.display().to_string(),
        out: out.display().to_string(),
        top,
    })?;
    b.input(corpus)?;

    let sha = sha256_file(corpus)?;
    let cached = cache_dir().map(|d| d.join(format!("stats-{sha}.json")));
    let (report, from_cache) = match cached.as_ref().filter(|p| p.exists()) {
        Some(hit) => {
            let report: StatsReport = serde_json::from_str(&std::fs::read_to_string(hit)?)?;
            (report, true)
        }
        None => {
            let report = compute_stats(corpus, &sha, top)?;
            if let Some(miss) = &cached {
                if let Some(dir) = miss.parent() {
                    std::fs::create_dir_all(dir)?;
                }
                std::fs::write(miss, serde_json::to_string_pretty(&report)?)?;
            }
            (report, false)
        }
    };
    eval::write_json(&out, &report)?;
    b.output(&out)?;
    b.write(&ctx.manifest_path(&out))?;
    println!(
        "{} words, {} distinct, {} primes, {} squarefree, longest squarefree run {}{}",
        report.word_count,
        report.distinct_words,
        report.prime_count,
        report.squarefree_count,
        report.longest_squarefree_run,
        if from_cache { " (cached)" } else { "" },
    );
    Ok(())
}

fn compute_stats(corpus: &Path, sha: &str, top: usize) -> Result<StatsReport> {
    let text = std::fs::read_to_string(corpus)?;
    let mut counts: HashMap<&str, u64> = HashMap::new();
    let mut word_count = 0u64;
    let mut prime_count = 0u64;
    let mut squarefree = 0u64;
    for w in text.split(' ') {
        let word = DyckWord::parse(w)?;
        match classify_word(&word) {
            WordClass::Prime => {
                prime_count += 1;
                squarefree += 1;
            }
            WordClass::Squarefree(_) => squarefree += 1,
            _ => {}
        }
        *counts.entry(w).or_insert(0) += 1;
        word_count += 1;
    }
    let run = longest_squarefree_run(text.split(' '));
    let mut by_freq: Vec<(&str, u64)> = counts.iter().map(|(w, c)| (*w, *c)).collect();
    by_freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    Ok(StatsReport {
        corpus_sha256: sha.to_string(),
        word_count,
        distinct_words: counts.len() as u64,
        prime_count,
        squarefree_count: squarefree,
        longest_squarefree_run: run,
        top_words: by_freq
            .into_iter()
            .take(top)
            .map(|(w, c)| (w.to_string(), c))
            .collect(),
    })
}

// ------------------------------------------------------------- phrase

#[derive(Serialize)]
struct PhraseSettings {
    corpus: String,
    phrases: Vec<String>,
    out: String,
}

#[derive(Serialize)]
struct PhraseReport {
    phrase: String,
    count: u64,
}

fn cmd_phrase(
    ctx: &Ctx,
    corpus: &Path,
    phrases: &[String],
    out: Option<PathBuf>,
) -> Result<()> {
    let out = out.unwrap_or_else(|| suffixed(corpus, ".phrases.json"));
    let mut b = ctx.builder("phrase");
    b.config(&PhraseSettings {
        corpus: corpus.display().to_string(),
        phrases: phrases.to_vec(),
        out: out.display().to_string(),
    })?;
    b.input(corpus)?;
    let text = std::fs::read_to_string(corpus)?;
    let mut reports = Vec::with_capacity(phrases.len());
    for raw in phrases {
        let phrase: Vec<DyckWord> = raw
            .split_whitespace()
            .map(DyckWord::parse)
            .collect::<Result<_>>()?;
        if phrase.is_empty() {
            return Err(Error::InvalidWord("empty phrase".into()));
        }
        let count = phrase_count(text.split(' '), &phrase);
        println!("{count}\t{raw}");
        reports.push(PhraseReport {
            phrase: raw.clone(),
            count,
        });
    }
    eval::write_json(&out, &reports)?;
    b.output(&out)?;
    b.write(&ctx.manifest_path(&out))?;
    Ok(())
}

// ----------------------------------------------------------- tokenize

#[derive(Serialize)]
struct TokenizeSettings {
    text: String,
    dict_size: usize,
    out: String,
    encode: Vec<String>,
}

fn cmd_tokenize(
    ctx: &Ctx,
    text_path: &Path,
    dict: Option<usize>,
    out: &Path,
    encode: &[PathBuf],
) -> Result<()> {
    let mut b = ctx.builder("tokenize");
    let dict_size = pick(dict, ctx.file.tokenize.dict_size, 64);
    b.config(&TokenizeSettings {
        text: text_path.display().to_string(),
        dict_size,
        out: out.display().to_string(),
        encode: encode.iter().map(|p| p.display().to_string()).collect(),
    })?;
    b.input(text_path)?;
    let text = std::fs::read_to_string(text_path)?;
    let vocab = train_bpe(&text, dict_size)?;
    vocab.save(out)?;
    b.output(out)?;
    let mut shards = 0usize;
    for enc in encode {
        b.input(enc)?;
        let enc_text = std::fs::read_to_string(enc)?;
        let ids = vocab.encode(&enc_text)?;
        let shard = suffixed(enc, ".tokens");
        write_token_shard(&shard, vocab.size() as u32, &ids)?;
        b.output(&shard)?;
        shards += 1;
    }
    b.write(&ctx.manifest_path(out))?;
    println!(
        "trained dictionary of {} tokens ({} merges), {shards} shard(s) encoded",
        vocab.size(),
        vocab.merges().len()
    );
    Ok(())
}

// -------------------------------------------------------------- split

#[derive(Serialize)]
struct SplitSettings {
    corpus: String,
    out_dir: String,
}

fn cmd_split(ctx: &Ctx, corpus: &Path, out_dir: &Path) -> Result<()> {
    let mut b = ctx.builder("split");
    b.config(&SplitSettings {
        corpus: corpus.display().to_string(),
        out_dir: out_dir.display().to_string(),
    })?;
    b.input(corpus)?;
    let text = std::fs::read_to_string(corpus)?;
    let word_count = text.split(' ').count();
    let plan = make_split(word_count)?;
    let regions = split_regions(text.split(' '), &plan)?;
    std::fs::create_dir_all(out_dir)?;
    let targets = [
        ("train.txt", &regions.train),
        ("validation.txt", &regions.validation),
        ("test.txt", &regions.test),
    ];
    for (name, content) in targets {
        let path = out_dir.join(name);
        std::fs::write(&path, content)?;
        b.output(&path)?;
    }
    let plan_path = out_dir.join("plan.json");
    eval::write_json(&plan_path, &plan)?;
    b.output(&plan_path)?;
    b.write(&ctx.manifest_path(&out_dir.join("split")))?;
    println!(
        "split {word_count} words: {} train, {} validation, {} test",
        plan.train_word_count(),
        count_words(&regions.validation),
        count_words(&regions.test),
    );
    Ok(())
}

fn count_words(text: &str) -> usize {
    if text.is_empty() {
        0
    } else {
        text.split(' ').count()
    }
}

// ------------------------------------------------------- train-markov

#[derive(Serialize)]
struct TrainMarkovSettings {
    vocab: String,
    train: String,
    alpha: f64,
    fit: FitKind,
    adam_steps: usize,
    adam_lr: f64,
    out: String,
}

#[allow(clippy::too_many_arguments)]
fn cmd_train_markov(
    ctx: &Ctx,
    vocab_path: &Path,
    train_path: &Path,
    alpha: Option<f64>,
    fit: FitKind,
    adam_steps: usize,
    adam_lr: f64,
    out: &Path,
) -> Result<()> {
    let mut b = ctx.builder("train-markov");
    let alpha = pick(alpha, ctx.file.markov.alpha, 1.0);
    b.config(&TrainMarkovSettings {
        vocab: vocab_path.display().to_string(),
        train: train_path.display().to_string(),
        alpha,
        fit,
        adam_steps,
        adam_lr,
        out: out.display().to_string(),
    })?;
    b.input(vocab_path)?;
    b.input(train_path)?;
    let vocab = Vocabulary::load(vocab_path)?;
    let stream = read_tokens(train_path, &vocab)?;
    let chain = match fit {
        FitKind::Mle => TransitionMatrix::fit(&stream, vocab.size(), alpha)?,
        FitKind::Adam => TransitionMatrix::fit_adam(&stream, vocab.size(), adam_steps, adam_lr)?,
    };
    chain.save(out, &train_path.display().to_string())?;
    b.output(out)?;
    b.write(&ctx.manifest_path(out))?;
    println!(
        "fitted {}x{} chain on {} tokens, train NLL {:.6}",
        vocab.size(),
        vocab.size(),
        stream.len(),
        chain.nll(&stream)?,
    );
    Ok(())
}

// ----------------------------------------------------------- train-lm

struct ArchFlags {
    preset: Option<PresetArg>,
    layers: Option<usize>,
    heads: Option<usize>,
    head_dim: Option<usize>,
    qk_dim: Option<usize>,
    context: Option<usize>,
    mlp_ratio: Option<usize>,
    exclude_self: bool,
}

struct HyperFlags {
    batch_size: Option<usize>,
    max_epochs: Option<usize>,
    patience: Option<usize>,
    lr: Option<f64>,
    warmup_steps: Option<usize>,
    min_lr_frac: Option<f64>,
    mask_prob: Option<f64>,
}

#[derive(Serialize)]
struct TrainLmSettings {
    vocab: String,
    train: String,
    val: String,
    model: lm::ModelConfig,
    train_config: TrainSnapshot,
    out: String,
    curves: String,
}

/// TrainConfig snapshot without internals the CLI does not expose.
#[derive(Serialize)]
struct TrainSnapshot {
    batch_size: usize,
    max_epochs: usize,
    patience: usize,
    lr: f64,
    warmup_steps: usize,
    min_lr_frac: f64,
    mask_prob: f64,
    seed: u64,
}

#[allow(clippy::too_many_arguments)]
fn cmd_train_lm(
    ctx: &Ctx,
    vocab_path: &Path,
    train_path: &Path,
    val_path: &Path,
    objective: ObjectiveArg,
    arch: ArchFlags,
    hyper: HyperFlags,
    out: &Path,
    curves: Option<PathBuf>,
) -> Result<()> {
    let vocab = Vocabulary::load(vocab_path)?;
    let fm = &ctx.file.model;
    let preset_name = arch
        .preset
        .map(|p| match p {
            PresetArg::Desk => "desk".to_string(),
            PresetArg::Paper => "paper".to_string(),
        })
        .or_else(|| fm.preset.clone())
        .unwrap_or_else(|| "desk".into());
    let mut cfg = match preset_name.as_str() {
        "desk" => lm::ModelConfig::desk(vocab.size(), objective.into()),
        "paper" => lm::ModelConfig::paper(vocab.size(), objective.into()),
        other => {
            return Err(Error::Format(format!(
                "unknown preset {other:?} (expected \"desk\" or \"paper\")"
            )))
        }
    };
    cfg.layers = pick(arch.layers, fm.layers, cfg.layers);
    cfg.heads = pick(arch.heads, fm.heads, cfg.heads);
    cfg.head_dim = pick(arch.head_dim, fm.head_dim, cfg.head_dim);
    cfg.qk_dim = pick(arch.qk_dim, fm.qk_dim, cfg.qk_dim);
    cfg.context = pick(arch.context, fm.context, cfg.context);
    cfg.mlp_ratio = pick(arch.mlp_ratio, fm.mlp_ratio, cfg.mlp_ratio);
    cfg.exclude_self = arch.exclude_self || fm.exclude_self.unwrap_or(false);
    cfg.validate()?;

    let ft = &ctx.file.train;
    let mut tc = lm::TrainConfig::new(ctx.seed);
    tc.batch_size = pick(hyper.batch_size, ft.batch_size, tc.batch_size);
    tc.max_epochs = pick(hyper.max_epochs, ft.max_epochs, tc.max_epochs);
    tc.patience = pick(hyper.patience, ft.patience, tc.patience);
    tc.lr = pick(hyper.lr, ft.lr, tc.lr);
    tc.warmup_steps = pick(hyper.warmup_steps, ft.warmup_steps, tc.warmup_steps);
    tc.min_lr_frac = pick(hyper.min_lr_frac, ft.min_lr_frac, tc.min_lr_frac);
    tc.mask_prob = pick(hyper.mask_prob, ft.mask_prob, tc.mask_prob);

    let curves = curves.unwrap_or_else(|| suffixed(out, ".loss.csv"));
    let mut b = ctx.builder("train-lm");
    b.config(&TrainLmSettings {
        vocab: vocab_path.display().to_string(),
        train: train_path.display().to_string(),
        val: val_path.display().to_string(),
        model: cfg,
        train_config: TrainSnapshot {
            batch_size: tc.batch_size,
            max_epochs: tc.max_epochs,
            patience: tc.patience,
            lr: tc.lr,
            warmup_steps: tc.warmup_steps,
            min_lr_frac: tc.min_lr_frac,
            mask_prob: tc.mask_prob,
            seed: tc.seed,
        },
        out: out.display().to_string(),
        curves: curves.display().to_string(),
    })?;
    b.input(vocab_path)?;
    b.input(train_path)?;
    b.input(val_path)?;

    let train_sentences = sentences_for(train_path, &vocab, cfg.context, "training")?;
    let val_sentences = sentences_for(val_path, &vocab, cfg.context, "validation")?;
    let mut init_rng = component_rng(ctx.seed, "lm/init");
    let init = lm::ModelParams::init(cfg, &mut init_rng)?;
    let outcome = lm::train(init, &train_sentences, &val_sentences, &tc)?;
    outcome.params.save(out)?;
    lm::write_loss_curves(&curves, &outcome.curves, cfg.dict_size)?;
    b.output(out)?;
    b.output(&curves)?;
    b.write(&ctx.manifest_path(out))?;
    println!(
        "trained {} epochs ({} steps): best validation loss {:.6} at epoch {}{}",
        outcome.curves.len(),
        outcome.steps,
        outcome.best_val_loss,
        outcome.best_epoch,
        if outcome.stopped_early {
            ", stopped early"
        } else {
            ""
        },
    );
    Ok(())
}

fn sentences_for(
    path: &Path,
    vocab: &Vocabulary,
    context: usize,
    role: &str,
) -> Result<Vec<Sentence>> {
    let tokens = read_tokens(path, vocab)?;
    let sentences = window(&tokens, context, context);
    if sentences.is_empty() {
        return Err(Error::Dataset(format!(
            "{role} stream of {} tokens is shorter than one context window of {context}",
            tokens.len()
        )));
    }
    Ok(sentences)
}

// ------------------------------------------------------------- sample

#[derive(Serialize)]
struct SampleSettings {
    model: String,
    vocab: String,
    prompt: String,
    count: usize,
    temperature: f64,
    out: String,
}

fn cmd_sample(
    ctx: &Ctx,
    model_path: &Path,
    vocab_path: &Path,
    prompt: &str,
    count: Option<usize>,
    temperature: Option<f64>,
    out: &Path,
) -> Result<()> {
    let mut b = ctx.builder("sample");
    let s = SampleSettings {
        model: model_path.display().to_string(),
        vocab: vocab_path.display().to_string(),
        prompt: prompt.to_string(),
        count: pick(count, ctx.file.sample.count, 64),
        temperature: pick(temperature, ctx.file.sample.temperature, 1.0),
        out: out.display().to_string(),
    };
    b.config(&s)?;
    b.input(model_path)?;
    b.input(vocab_path)?;
    let vocab = Vocabulary::load(vocab_path)?;
    let model = lm::ModelParams::load(model_path)?;
    if model.config.dict_size != vocab.size() {
        return Err(Error::Model(format!(
            "model dictionary {} does not match vocabulary {}",
            model.config.dict_size,
            vocab.size()
        )));
    }
    let prompt_ids = vocab.encode(prompt)?;
    let mut rng = component_rng(ctx.seed, "cli/sample");
    let continuation = lm::generate(&model, &prompt_ids, s.count, s.temperature, &mut rng)?;
    let text = format!("{prompt}{}", vocab.decode(&continuation)?);
    println!("{text}");
    std::fs::write(out, &text)?;
    b.output(out)?;
    b.write(&ctx.manifest_path(out))?;
    Ok(())
}

// --------------------------------------------------------------- eval

struct EvalFlags {
    temps: Option<Vec<f64>>,
    m: Option<usize>,
    prompt_len: Option<usize>,
    target_len: Option<usize>,
    top_k: Option<usize>,
    detail_temp: Option<f64>,
}

#[derive(Serialize)]
struct EvalSettings {
    model: String,
    vocab: String,
    test: String,
    baseline: Option<String>,
    temperatures: Vec<f64>,
    m: usize,
    prompt_len: usize,
    target_len: usize,
    top_k: usize,
    detail_temp: f64,
    out_dir: String,
}

fn cmd_eval(
    ctx: &Ctx,
    model_path: &Path,
    vocab_path: &Path,
    test_path: &Path,
    baseline: Option<&Path>,
    flags: EvalFlags,
    out_dir: &Path,
) -> Result<()> {
    let vocab = Vocabulary::load(vocab_path)?;
    let model = lm::ModelParams::load(model_path)?;
    if model.config.dict_size != vocab.size() {
        return Err(Error::Model(format!(
            "model dictionary {} does not match vocabulary {}",
            model.config.dict_size,
            vocab.size()
        )));
    }
    let fe = &ctx.file.eval;
    let temperatures = pick_clone(flags.temps, &fe.temperatures, vec![0.1, 0.3, 0.5, 0.7, 1.0]);
    if temperatures.is_empty() {
        return Err(Error::Model("no temperatures given".into()));
    }
    let s = EvalSettings {
        model: model_path.display().to_string(),
        vocab: vocab_path.display().to_string(),
        test: test_path.display().to_string(),
        baseline: baseline.map(|p| p.display().to_string()),
        m: pick(flags.m, fe.m, 32),
        prompt_len: pick(
            flags.prompt_len,
            fe.prompt_len,
            (model.config.context / 2).max(1),
        ),
        target_len: pick(
            flags.target_len,
            fe.target_len,
            (model.config.context / 2).max(1),
        ),
        top_k: pick(flags.top_k, fe.top_k, 8),
        detail_temp: pick(flags.detail_temp, fe.detail_temperature, temperatures[0]),
        temperatures,
        out_dir: out_dir.display().to_string(),
    };
    let mut b = ctx.builder("eval");
    b.config(&s)?;
    b.input(model_path)?;
    b.input(vocab_path)?;
    b.input(test_path)?;
    if let Some(base) = baseline {
        b.input(base)?;
    }

    let tokens = read_tokens(test_path, &vocab)?;
    let instances = eval::nwp_instances(&tokens, s.prompt_len, s.target_len, s.m)?;
    let mut reports = eval::evaluate_nwp_grid(
        &model,
        &vocab,
        &instances,
        &s.temperatures,
        s.top_k,
        ctx.seed,
    )?;
    let detail = reports
        .iter()
        .position(|r| r.temperature == s.detail_temp)
        .ok_or_else(|| {
            Error::Model(format!(
                "detail temperature {} is not in the sweep",
                s.detail_temp
            ))
        })?;
    if let Some(base) = baseline {
        let (chain, _) = TransitionMatrix::load(base)?;
        if chain.dict_size() != vocab.size() {
            return Err(Error::Model(format!(
                "baseline dictionary {} does not match vocabulary {}",
                chain.dict_size(),
                vocab.size()
            )));
        }
        reports.extend(eval::evaluate_nwp_grid(
            &chain,
            &vocab,
            &instances,
            &s.temperatures,
            s.top_k,
            ctx.seed,
        )?);
    }

    std::fs::create_dir_all(out_dir)?;
    let files = [
        "fig2_accuracy.csv",
        "fig2_kl.csv",
        "fig4_prf1.csv",
        "fig5_confusion.csv",
        "fig6_prime_profile.csv",
        "report.json",
    ];
    eval::write_fig2_accuracy(&out_dir.join(files[0]), &reports)?;
    eval::write_fig2_kl(&out_dir.join(files[1]), &reports)?;
    eval::write_fig4_prf1(&out_dir.join(files[2]), &reports[detail])?;
    eval::write_fig5_confusion(&out_dir.join(files[3]), &reports[detail])?;
    eval::write_fig6_prime_profile(&out_dir.join(files[4]), &reports[detail])?;
    eval::write_json(&out_dir.join(files[5]), &reports)?;
    for f in files {
        b.output(&out_dir.join(f))?;
    }
    b.write(&ctx.manifest_path(&out_dir.join("eval")))?;
    for r in &reports {
        println!(
            "{} T={}: word accuracy {:.4}, KL {:.4}",
            r.model, r.temperature, r.mean_accuracy, r.mean_kl
        );
    }
    Ok(())
}

// --------------------------------------------------------------- grid

#[derive(Serialize)]
struct GridSettings {
    model: String,
    vocab: String,
    test: String,
    mask_probs: Vec<f64>,
    temperatures: Vec<f64>,
    m: usize,
    out_dir: String,
}

#[allow(clippy::too_many_arguments)]
fn cmd_grid(
    ctx: &Ctx,
    model_path: &Path,
    vocab_path: &Path,
    test_path: &Path,
    mask_probs: Option<Vec<f64>>,
    temps: Option<Vec<f64>>,
    m: Option<usize>,
    out_dir: &Path,
) -> Result<()> {
    let vocab = Vocabulary::load(vocab_path)?;
    let model = lm::ModelParams::load(model_path)?;
    if model.config.dict_size != vocab.size() {
        return Err(Error::Model(format!(
            "model dictionary {} does not match vocabulary {}",
            model.config.dict_size,
            vocab.size()
        )));
    }
    let fg = &ctx.file.grid;
    let s = GridSettings {
        model: model_path.display().to_string(),
        vocab: vocab_path.display().to_string(),
        test: test_path.display().to_string(),
        mask_probs: pick_clone(mask_probs, &fg.mask_probs, vec![0.1, 0.2, 0.3, 0.4, 0.5]),
        temperatures: pick_clone(temps, &fg.temperatures, vec![0.1, 0.3, 0.5, 1.0, 2.0]),
        m: pick(m, fg.m, 16),
        out_dir: out_dir.display().to_string(),
    };
    let mut b = ctx.builder("grid");
    b.config(&s)?;
    b.input(model_path)?;
    b.input(vocab_path)?;
    b.input(test_path)?;
    let sentences = sentences_for(test_path, &vocab, model.config.context, "test")?;
    let cells = eval::evaluate_mlm_grid(
        &model,
        &sentences,
        &s.mask_probs,
        &s.temperatures,
        s.m,
        ctx.seed,
    )?;
    std::fs::create_dir_all(out_dir)?;
    let csv = out_dir.join("fig7_grid.csv");
    let json = out_dir.join("grid.json");
    eval::write_fig7_grid(&csv, &cells)?;
    eval::write_json(&json, &cells)?;
    b.output(&csv)?;
    b.output(&json)?;
    b.write(&ctx.manifest_path(&out_dir.join("grid")))?;
    for c in &cells {
        println!(
            "p_m={} T={}: masked accuracy {:.4}, full {:.4}",
            c.mask_prob, c.temperature, c.masked_accuracy, c.full_accuracy
        );
    }
    Ok(())
}

// ------------------------------------------------------------ helpers

/// Append a suffix to a file name ("corpus.txt" + ".stats.json").
fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(suffix);
    path.with_file_name(name)
}

/// Read a token stream: a `.tokens` shard directly, anything else as
/// text encoded through the vocabulary.
fn read_tokens(path: &Path, vocab: &Vocabulary) -> Result<Vec<TokenId>> {
    if path.extension().map(|e| e == "tokens").unwrap_or(false) {
        let (d, ids) = read_token_shard(path)?;
        if d as usize != vocab.size() {
            return Err(Error::Tokenizer(format!(
                "shard {} was encoded with dictionary {d}, vocabulary has {}",
                path.display(),
                vocab.size()
            )));
        }
        Ok(ids)
    } else {
        let text = std::fs::read_to_string(path)?;
        vocab.encode(&text)
    }
}
