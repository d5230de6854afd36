use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use persona_esc::config::Settings;
use persona_esc::corpus::{build_vocab, generate_synthetic, load_corpus, parse_ratio, split_corpus_ratio, Corpus};
use persona_esc::dataset::build_examples;
use persona_esc::decode::{generate, DecodeConfig};
use persona_esc::metrics::{correlation_analysis, evaluate_detailed, HashEmbedder};
use persona_esc::model::{load_checkpoint, save_checkpoint, Model};
use persona_esc::persona::{annotate_corpus, export_audit_sample, load_pesconv, save_pesconv, snapshot_after, PersonaSet, RuleExtractor};
use persona_esc::service::{serve, ChatService, JsonDirStore, MemoryStore, SessionOverrides, SessionStore};
use persona_esc::train::{train_with_hook, TrainConfig};
use persona_esc::Strategy;

#[derive(Parser)]
#[command(name = "pesc", version, about = "Persona-aware, strategy-controlled emotional-support dialogue")]
struct Cli {
    /// TOML settings file; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create or split corpora.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Add per-turn persona snapshots to a corpus.
    Annotate(AnnotateArgs),
    Train(TrainArgs),
    /// Generate one supporter reply.
    Generate(GenerateArgs),
    /// Score generations on a test corpus.
    Evaluate(EvaluateArgs),
    /// Correlate persona/response similarity with conversation ratings.
    Analyze(AnalyzeArgs),
    /// Run the HTTP chat service.
    Serve(ServeArgs),
    /// Chat in the terminal.
    Chat(ChatArgs),
}

#[derive(Subcommand)]
enum CorpusCommand {
    Synth(SynthArgs),
    Split(SplitArgs),
}

/// Defaults come from the `[synth]` section of `--config`.
#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n_conversations: Option<usize>,
    /// Utterances per conversation, both speakers.
    #[arg(long)]
    n_turns: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Extra nouns mixed into the generated seekers.
    #[arg(long, value_delimiter = ',')]
    words: Option<Vec<String>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// train:valid:test weights.
    #[arg(long, default_value = "7:2:1")]
    ratio: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Receives train.json, valid.json and test.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExtractorKind {
    /// Pattern rules over seeker utterances.
    Rule,
}

#[derive(Args)]
struct AnnotateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "rule")]
    extractor: ExtractorKind,
    #[arg(long)]
    out: PathBuf,
    /// Also write a sample of snapshots for manual labeling.
    #[arg(long)]
    audit: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    audit_n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Persona-annotated training corpus.
    #[arg(long)]
    corpus: PathBuf,
    /// Persona-annotated validation corpus; defaults to the training corpus.
    #[arg(long)]
    valid: Option<PathBuf>,
    /// desk or paper; overrides the config file's preset.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch losses as CSV.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeFlags {
    /// Same α for every strategy.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    top_p: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_new_tokens: Option<usize>,
}

impl DecodeFlags {
    fn apply(&self, mut cfg: DecodeConfig) -> DecodeConfig {
        if self.alpha.is_some() {
            cfg.alpha_override = self.alpha;
        }
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        cfg.top_k = self.top_k.unwrap_or(cfg.top_k);
        cfg.top_p = self.top_p.unwrap_or(cfg.top_p);
        cfg.temperature = self.temperature.unwrap_or(cfg.temperature);
        cfg.max_new_tokens = self.max_new_tokens.unwrap_or(cfg.max_new_tokens);
        cfg
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// One utterance per line, starting with the seeker and alternating.
    #[arg(long)]
    dialogue: PathBuf,
    /// One persona sentence per line; extracted from the dialogue if absent.
    #[arg(long)]
    persona: Option<PathBuf>,
    /// Force this strategy instead of predicting one.
    #[arg(long)]
    strategy: Option<Strategy>,
    #[command(flatten)]
    decode: DecodeFlags,
    /// Write the generation result with per-step entropies as JSON.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Include every step's sampling distribution in the trace.
    #[arg(long)]
    trace_distributions: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Persona-annotated test corpus.
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    decode: DecodeFlags,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write each generation with its reference as JSON lines.
    #[arg(long)]
    generations: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Persona-annotated corpus with ratings.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    host: Option<String>,
    #[arg(long)]
    port: Option<u16>,
    /// Directory holding one JSON file per session.
    #[arg(long)]
    store: Option<PathBuf>,
}

#[derive(Args)]
struct ChatArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Persist the session here instead of keeping it in memory.
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn load_model(path: &Path) -> Result<Model> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn run_corpus(cmd: CorpusCommand, settings: &Settings) -> Result<()> {
    match cmd {
        CorpusCommand::Synth(a) => {
            let mut cfg = settings.synth.clone();
            cfg.n_conversations = a.n_conversations.unwrap_or(cfg.n_conversations);
            cfg.n_turns = a.n_turns.unwrap_or(cfg.n_turns);
            cfg.seed = a.seed.unwrap_or(cfg.seed);
            cfg.vocab_seed_words = a.words.unwrap_or(cfg.vocab_seed_words);
            let corpus = generate_synthetic(&cfg);
            corpus.save(&a.out)?;
            println!("wrote {} conversations to {}", corpus.len(), a.out.display());
        }
        CorpusCommand::Split(a) => {
            let corpus = load_corpus(&a.corpus)?;
            let (train, valid, test) = split_corpus_ratio(&corpus, parse_ratio(&a.ratio)?, a.seed.unwrap_or(settings.corpus.split_seed))?;
            std::fs::create_dir_all(&a.out_dir)?;
            for (name, part) in [("train", &train), ("valid", &valid), ("test", &test)] {
                part.save(a.out_dir.join(format!("{name}.json")))?;
            }
            println!("train {} / valid {} / test {}", train.len(), valid.len(), test.len());
        }
    }
    Ok(())
}

fn run_annotate(a: AnnotateArgs) -> Result<()> {
    let corpus = load_corpus(&a.input)?;
    let extractor = match a.extractor {
        ExtractorKind::Rule => RuleExtractor,
    };
    let annotated = annotate_corpus(&corpus, &extractor);
    save_pesconv(&annotated, &a.out)?;
    let snapshots: usize = annotated.iter().map(|c| c.persona_at_turn.len()).sum();
    println!("annotated {} conversations ({snapshots} snapshots)", annotated.len());
    if let Some(path) = a.audit {
        let sample = export_audit_sample(&annotated, a.audit_n.min(snapshots), a.seed)?;
        write_json(&path, &sample)?;
    }
    Ok(())
}

fn run_train(a: TrainArgs, settings: &Settings) -> Result<()> {
    let mut cfg = match &a.preset {
        Some(p) => TrainConfig::preset(p)?,
        None => settings.train.clone(),
    };
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.lr_base = a.lr.unwrap_or(cfg.lr_base);
    cfg.seed = a.seed.unwrap_or(cfg.seed);

    let train_set = load_pesconv(&a.corpus)?;
    let vocab = build_vocab(&Corpus::new(train_set.iter().map(|c| c.base.clone()).collect()), settings.corpus.vocab_size)?;
    let max_len = settings.model.max_len;
    let train_examples = build_examples(&train_set, &vocab, max_len);
    let valid_examples = match &a.valid {
        Some(p) => build_examples(&load_pesconv(p)?, &vocab, max_len),
        None => {
            eprintln!("no --valid corpus given; selecting the epoch on training loss");
            train_examples.clone()
        }
    };
    println!("{} training examples, {} validation examples, vocabulary {}", train_examples.len(), valid_examples.len(), vocab.len());
    let model = Model::new(settings.model.clone(), vocab)?;
    let (model, report) = train_with_hook(model, &train_examples, &valid_examples, &cfg, &mut |r| {
        println!("epoch {:>4}  train {:.4}  valid {:.4}", r.epoch, r.train_loss, r.valid_loss);
    })?;
    save_checkpoint(&model, &a.out)?;
    if let Some(path) = a.report {
        report.write_csv(std::fs::File::create(&path)?)?;
    }
    println!("selected epoch {:?}; checkpoint written to {}", report.selected_epoch, a.out.display());
    Ok(())
}

fn run_generate(a: GenerateArgs, settings: &Settings) -> Result<()> {
    let model = load_model(&a.ckpt)?;
    let dialogue = read_lines(&a.dialogue)?;
    if dialogue.is_empty() {
        bail!("dialogue file is empty");
    }
    let persona = match &a.persona {
        Some(p) => {
            let mut set = PersonaSet::new();
            for line in read_lines(p)? {
                set.insert(line, 0);
            }
            set
        }
        None => {
            let seeker: Vec<(usize, &str)> = dialogue.iter().enumerate().step_by(2).map(|(i, t)| (i, t.as_str())).collect();
            snapshot_after(&seeker, &RuleExtractor).unwrap_or_default()
        }
    };
    let mut cfg = a.decode.apply(settings.decode.clone());
    cfg.trace = a.trace.is_some();
    cfg.trace_distributions = a.trace_distributions;
    let out = generate(&model, &dialogue, &persona, &cfg, a.strategy)?;
    println!("[{}] (alpha {}) {}", out.strategy, out.alpha_used, out.text);
    if let Some(path) = a.trace {
        write_json(&path, &out)?;
    }
    Ok(())
}

fn run_evaluate(a: EvaluateArgs, settings: &Settings) -> Result<()> {
    let model = load_model(&a.ckpt)?;
    let test = load_pesconv(&a.corpus)?;
    let cfg = a.decode.apply(settings.decode.clone());
    let (report, items) = evaluate_detailed(&model, &test, &cfg, &HashEmbedder::default())?;
    for (name, value) in report.table_row() {
        println!("{name:>8}  {value:.4}");
    }
    if let Some(path) = a.out {
        write_json(&path, &report)?;
    }
    if let Some(path) = a.generations {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
        for item in &items {
            writeln!(f, "{}", serde_json::to_string(item)?)?;
        }
    }
    Ok(())
}

fn run_analyze(a: AnalyzeArgs) -> Result<()> {
    let annotated = load_pesconv(&a.corpus)?;
    let report = correlation_analysis(&annotated, &HashEmbedder::default())?;
    report.write_csv(std::fs::File::create(&a.out)?)?;
    for axis in &report.axes {
        println!("{:<20} slope {:+.4}  R² {:.4}", axis.axis.name(), axis.fit.slope, axis.fit.r_squared);
    }
    if !report.skipped.is_empty() {
        println!("{} conversations without persona were skipped", report.skipped.len());
    }
    Ok(())
}

fn service(ckpt: &Path, store: Arc<dyn SessionStore>, settings: &Settings) -> Result<Arc<ChatService>> {
    let model = Arc::new(load_model(ckpt)?);
    let name = ckpt.file_name().map_or_else(|| ckpt.display().to_string(), |n| n.to_string_lossy().into_owned());
    Ok(Arc::new(ChatService::new(model, Arc::new(RuleExtractor), store, settings.decode.clone(), name)?))
}

fn run_serve(a: ServeArgs, settings: &Settings) -> Result<()> {
    let store = JsonDirStore::open(a.store.unwrap_or_else(|| settings.serve.store.clone()))?;
    let svc = service(&a.ckpt, Arc::new(store), settings)?;
    let host = a.host.unwrap_or_else(|| settings.serve.host.clone());
    let addr: SocketAddr = format!("{host}:{}", a.port.unwrap_or(settings.serve.port)).parse()?;
    println!("listening on http://{addr}");
    tokio::runtime::Runtime::new()?.block_on(serve(svc, addr))?;
    Ok(())
}

fn run_chat(a: ChatArgs, settings: &Settings) -> Result<()> {
    let store: Arc<dyn SessionStore> = match a.store {
        Some(dir) => Arc::new(JsonDirStore::open(dir)?),
        None => Arc::new(MemoryStore::default()),
    };
    let svc = service(&a.ckpt, store, settings)?;
    let session = svc.create_session(SessionOverrides {
        alpha_override: a.alpha,
        ..Default::default()
    })?;
    println!("session {} (commands: /strategy NAME, /persona, /quit)", session.id);
    let mut forced: Option<Strategy> = None;
    let stdin = std::io::stdin();
    loop {
        print!("you> ");
        std::io::stdout().flush()?;
        let mut line = String::new();
        if stdin.lock().read_line(&mut line)? == 0 {
            break;
        }
        let line = line.trim();
        match line {
            "" => continue,
            "/quit" => break,
            "/persona" => {
                for (s, src) in svc.get_session(&session.id)?.persona.iter() {
                    println!("  [{src}] {s}");
                }
                continue;
            }
            _ => {}
        }
        if let Some(name) = line.strip_prefix("/strategy ") {
            match name.parse() {
                Ok(s) => forced = Some(s),
                Err(e) => println!("{e}"),
            }
            continue;
        }
        let reply = svc.chat_turn(&session.id, line, None, forced.take())?;
        println!("bot [{} α={}]> {}", reply.strategy, reply.alpha_used, reply.response);
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let settings = Settings::load_or_default(cli.config.as_deref())?;
    match cli.command {
        Command::Corpus(c) => run_corpus(c, &settings),
        Command::Annotate(a) => run_annotate(a),
        Command::Train(a) => run_train(a, &settings),
        Command::Generate(a) => run_generate(a, &settings),
        Command::Evaluate(a) => run_evaluate(a, &settings),
        Command::Analyze(a) => run_analyze(a),
        Command::Serve(a) => run_serve(a, &settings),
        Command::Chat(a) => run_chat(a, &settings),
    }
}
