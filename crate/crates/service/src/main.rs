//! `muallm`: ingest bundles, search, run agent sessions, build netlists,
//! evaluate, and serve the HTTP API.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use muallm_core::agent::{AgentStep, StepKind, Termination, Tool};
use muallm_core::corpus::{load_bundle, ChunkConfig};
use muallm_core::cost::{cost_latency, largest_feasible_pages, preprocessing_cost, CostMode, CostModelConfig};
use muallm_core::eval::{
    load_dataset, run_eval, AgentEngine, AnswerJudge, EvalEngine, ExactMatchJudge, LlmJudge, RagEngine, RecordedEngine,
    TokenOverlapJudge,
};
use muallm_core::netlist::{generate, NetlistConfig};
use muallm_core::runtime::Runtime;
use muallm_core::tools::{PaperFetcherTool, SearchDbTool, SearchLog};
use muallm_service::config::{self, Layers, ServiceConfig};
use muallm_service::state::{
    build_providers, build_runtime, chat_source, limits, tool_context, AppState, SessionStore,
};

#[derive(Parser)]
#[command(name = "muallm", version, about = "Search, reason over and netlist circuit papers")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalOpts {
    /// TOML config file (also MUALLM_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Set any config key, e.g. --set chat.mode=remote. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Index file; an empty value keeps the index in memory.
    #[arg(long, global = true)]
    db: Option<String>,
    #[arg(long = "w-sem", global = true)]
    w_sem: Option<f64>,
    #[arg(long = "w-kw", global = true)]
    w_kw: Option<f64>,
    /// Directory served by the local fetcher (`<id>.pdf` plus optional `<id>/manifest.json`).
    #[arg(long = "fixture-dir", global = true)]
    fixture_dir: Option<PathBuf>,
    /// Converter run as `<cmd> <pdf> <out_dir>` on fetched PDFs.
    #[arg(long = "extractor-cmd", global = true)]
    extractor_cmd: Option<String>,
    /// Use the offline provider for every backend.
    #[arg(long = "fallback-all", global = true)]
    fallback_all: bool,
    /// Drive agent sessions from a JSONL script of model turns.
    #[arg(long, global = true)]
    scripted: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Add bundles to the index: manifest files, bundle directories, or a
    /// directory of bundle directories.
    Ingest {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Hybrid search; prints a table of hits.
    Search {
        #[arg(short, long)]
        q: String,
        #[arg(short, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        json: bool,
    },
    /// Run one agent session, printing steps as they happen.
    Ask {
        question: Vec<String>,
        #[arg(long)]
        max_steps: Option<usize>,
        /// Also write the transcript JSON here.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Schematic image plus detections to a SPICE netlist.
    Netlist {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score an engine on a QA dataset.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = EvalMode::Rag)]
        mode: EvalMode,
        /// Recorded predictions, for --mode recorded.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = JudgeKind::Overlap)]
        judge: JudgeKind,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Cost and latency model, plus one-time preprocessing cost of bundles.
    Cost {
        #[arg(long, value_delimiter = ',', default_values_t = [1, 10, 50, 99, 100, 1000])]
        pages: Vec<usize>,
        #[arg(long)]
        bundle: Vec<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
    /// The agent's search tool: a query, `--titles`, or `--load_data <path>`.
    #[command(name = "search_db")]
    SearchDb {
        #[arg(long = "load_data")]
        load_data: Option<String>,
        /// List the papers in the database.
        #[arg(long)]
        titles: bool,
        query: Vec<String>,
    },
    /// The agent's fetch tool, e.g. `paper_fetcher arxiv_id 2401.00001`.
    #[command(name = "paper_fetcher")]
    PaperFetcher {
        #[arg(required = true)]
        reference: Vec<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalMode {
    Rag,
    Agent,
    Recorded,
}

#[derive(Clone, Copy, ValueEnum)]
enum JudgeKind {
    Overlap,
    Exact,
    Llm,
}

fn flag_layer(g: &GlobalOpts, bind: Option<&str>) -> Result<BTreeMap<String, String>> {
    let mut flags = BTreeMap::new();
    if g.fallback_all {
        for p in ["chat", "embed", "rerank", "fetch", "detector"] {
            flags.insert(format!("{p}.mode"), "fallback".to_string());
        }
    }
    if let Some(db) = &g.db {
        flags.insert("db_path".into(), db.clone());
    }
    if let Some(w) = g.w_sem {
        flags.insert("fusion.w_sem".into(), w.to_string());
    }
    if let Some(w) = g.w_kw {
        flags.insert("fusion.w_kw".into(), w.to_string());
    }
    if let Some(d) = &g.fixture_dir {
        flags.insert("fixture_dir".into(), d.display().to_string());
    }
    if let Some(c) = &g.extractor_cmd {
        flags.insert("extractor_cmd".into(), c.clone());
    }
    if let Some(s) = &g.scripted {
        flags.insert("chat.mode".into(), "scripted".into());
        flags.insert("chat.script".into(), s.display().to_string());
    }
    if let Some(b) = bind {
        flags.insert("bind_addr".into(), b.to_string());
    }
    // --set last, so it overrides the dedicated flags
    for kv in &g.set {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
        flags.insert(k.trim().to_string(), v.to_string());
    }
    Ok(flags)
}

fn load_config(g: &GlobalOpts, bind: Option<&str>) -> Result<ServiceConfig> {
    let env = |k: &str| std::env::var(k).ok();
    let file_path = g.config.clone().or_else(|| env("MUALLM_CONFIG").map(PathBuf::from));
    let file = match file_path {
        Some(p) => config::read_file(&p)?,
        None => BTreeMap::new(),
    };
    let layers = Layers {
        file,
        env: config::from_env(&env),
        flags: flag_layer(g, bind)?,
    };
    let cfg = layers.resolve()?;
    cfg.validate(&env)?;
    Ok(cfg)
}

fn open_runtime(cfg: &ServiceConfig) -> Result<Runtime> {
    let providers = build_providers(cfg)?;
    Ok(build_runtime(cfg, providers)?)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let bind = match &cli.command {
        Command::Serve { bind } => bind.as_deref(),
        _ => None,
    };
    let cfg = load_config(&cli.global, bind)?;
    match cli.command {
        Command::Ingest { paths } => ingest(&cfg, &paths),
        Command::Search { q, k, json } => search(&cfg, &q, k, json),
        Command::Ask {
            question,
            max_steps,
            transcript,
        } => ask(&cfg, &question.join(" "), max_steps, transcript.as_deref()),
        Command::Netlist { image, detections, out } => {
            let nl = generate(&image, &detections, &NetlistConfig::default())?;
            let text = nl.to_spice();
            match out {
                Some(p) => std::fs::write(&p, &text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
            for f in &nl.flags {
                eprintln!("warning: {f}");
            }
            Ok(())
        }
        Command::Eval {
            dataset,
            mode,
            predictions,
            judge,
            report,
        } => eval(&cfg, &dataset, mode, predictions.as_deref(), judge, report.as_deref()),
        Command::Cost { pages, bundle } => cost(&pages, &bundle),
        Command::Serve { .. } => serve(cfg),
        Command::SearchDb {
            load_data,
            titles,
            query,
        } => {
            let rt = open_runtime(&cfg)?;
            let tool = SearchDbTool {
                engine: rt.engine.clone(),
                ingest: Some(rt.ingest.clone()),
                fetcher: rt.fetcher.clone(),
                max_hits: cfg.limits.max_hits,
                log: Arc::new(SearchLog::default()),
            };
            let input = match (load_data, titles) {
                (Some(p), _) => format!("--load_data {p}"),
                (None, true) => "--titles".to_string(),
                (None, false) => query.join(" "),
            };
            println!("{}", tool.call(&input).map_err(|e| anyhow::anyhow!(e.0))?);
            Ok(())
        }
        Command::PaperFetcher { reference } => {
            let rt = open_runtime(&cfg)?;
            let fetcher = rt
                .fetcher
                .clone()
                .context("no fetcher configured: pass --fixture-dir or set fetch.mode=remote")?;
            let tool = PaperFetcherTool { fetcher };
            println!("{}", tool.call(&reference.join(" ")).map_err(|e| anyhow::anyhow!(e.0))?);
            Ok(())
        }
    }
}

/// Manifest files, bundle directories, and directories of bundles.
fn manifests(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_file() {
            out.push(p.clone());
        } else if p.join("manifest.json").is_file() {
            out.push(p.join("manifest.json"));
        } else if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok())
                .map(|e| e.path().join("manifest.json"))
                .filter(|m| m.is_file())
                .collect();
            if found.is_empty() {
                bail!("no manifest.json under {}", p.display());
            }
            found.sort();
            out.extend(found);
        } else {
            bail!("{} does not exist", p.display());
        }
    }
    Ok(out)
}

fn ingest(cfg: &ServiceConfig, paths: &[PathBuf]) -> Result<()> {
    let rt = open_runtime(cfg)?;
    for m in manifests(paths)? {
        let report = rt
            .ingest_manifest(&m)
            .with_context(|| format!("ingesting {}", m.display()))?;
        println!("{}", report.summary());
    }
    Ok(())
}

fn clip(s: &str, n: usize) -> String {
    let flat = s.split_whitespace().collect::<Vec<_>>().join(" ");
    if flat.chars().count() <= n {
        flat
    } else {
        format!("{}…", flat.chars().take(n.saturating_sub(1)).collect::<String>())
    }
}

fn search(cfg: &ServiceConfig, q: &str, k: usize, json: bool) -> Result<()> {
    if k == 0 {
        bail!("-k must be at least 1");
    }
    let rt = open_runtime(cfg)?;
    let outcome = rt.engine.search(q)?;
    let hits: Vec<_> = outcome.hits.into_iter().take(k).collect();
    if json {
        println!("{}", serde_json::to_string_pretty(&hits)?);
    } else {
        println!(
            "{:>4}  {:>8}  {:<5}  {:<28}  snippet",
            "rank", "score", "kind", "record"
        );
        for h in &hits {
            println!(
                "{:>4}  {:>8.5}  {:<5}  {:<28}  {}",
                h.rank,
                h.score,
                h.modality.as_str(),
                clip(&h.record_id, 28),
                clip(&h.snippet, 70)
            );
        }
        if hits.is_empty() {
            println!("(no hits)");
        }
    }
    for w in outcome.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn print_step(step: &AgentStep) {
    println!("--- step {} ---", step.step_no);
    if !step.thought.is_empty() {
        println!("Thought: {}", step.thought);
    }
    match step.kind {
        StepKind::Answer => println!("(final answer)"),
        _ => {
            if let Some(a) = &step.action {
                println!("Action: {}", a.tool_name);
                println!("Action Input: {}", a.tool_input);
            }
            if let Some(o) = &step.observation {
                println!("Observation: {o}");
            }
        }
    }
    let _ = std::io::stdout().flush();
}

fn ask(cfg: &ServiceConfig, question: &str, max_steps: Option<usize>, out: Option<&Path>) -> Result<()> {
    if question.trim().is_empty() {
        bail!("empty question");
    }
    let providers = build_providers(cfg)?;
    let chat = chat_source(cfg, &providers).session_chat()?;
    let rt = build_runtime(cfg, providers)?;
    let mut lim = limits(cfg);
    if let Some(n) = max_steps {
        lim.max_steps = n;
    }
    let t = tool_context(&rt, cfg).run_agent(question, chat.as_ref(), &lim, &mut print_step);
    println!("=== answer ({:?}) ===", t.terminated_by);
    println!("{}", t.final_answer);
    if !t.citations.is_empty() {
        println!("=== citations ===");
        for (i, c) in t.citations.iter().enumerate() {
            let extra = c.image_path.as_deref().map(|p| format!(" [{p}]")).unwrap_or_default();
            println!("[{}] {} ({}, {}){extra}", i + 1, c.title, c.doc_id, c.record_id);
        }
    }
    let saved = SessionStore {
        dir: cfg.sessions_dir.clone(),
    }
    .save(&t);
    match saved {
        Ok(p) => eprintln!("transcript: {}", p.display()),
        Err(e) => eprintln!("warning: transcript not saved: {e}"),
    }
    if let Some(p) = out {
        std::fs::write(p, serde_json::to_vec_pretty(&t)?)?;
    }
    if t.terminated_by == Termination::Error {
        bail!("session failed: {}", t.error.unwrap_or_default());
    }
    Ok(())
}

fn eval(
    cfg: &ServiceConfig,
    dataset: &Path,
    mode: EvalMode,
    predictions: Option<&Path>,
    judge: JudgeKind,
    report: Option<&Path>,
) -> Result<()> {
    let ds = load_dataset(dataset)?;
    let providers = build_providers(cfg)?;
    let chat = chat_source(cfg, &providers).session_chat()?;
    let rt = build_runtime(cfg, providers.clone())?;
    let engine: Box<dyn EvalEngine> = match mode {
        EvalMode::Rag => Box::new(RagEngine {
            engine: rt.engine.clone(),
            llm: chat,
            context_tokens: cfg.limits.context_tokens,
        }),
        EvalMode::Agent => Box::new(AgentEngine {
            tools: tool_context(&rt, cfg),
            llm: chat,
            limits: limits(cfg),
        }),
        EvalMode::Recorded => {
            let p = predictions.context("--mode recorded needs --predictions <file>")?;
            Box::new(RecordedEngine::load(p)?)
        }
    };
    let judge: Box<dyn AnswerJudge> = match judge {
        JudgeKind::Overlap => Box::new(TokenOverlapJudge::default()),
        JudgeKind::Exact => Box::new(ExactMatchJudge),
        JudgeKind::Llm => Box::new(LlmJudge {
            llm: providers.chat.clone(),
            threshold: TokenOverlapJudge::default().threshold,
        }),
    };
    let r = run_eval(&ds, engine.as_ref(), judge.as_ref());
    println!(
        "dataset {} | engine {} | judge {} | {} scored, {} skipped, {} failed",
        r.dataset,
        r.engine,
        r.judge,
        r.items_scored,
        r.skipped.len(),
        r.failures
    );
    println!(
        "{:<9} {:>5} {:>9} {:>9} {:>9} {:>9}   headline",
        "class", "n", "precision", "recall", "f1", "answer"
    );
    for (class, m) in &r.per_class {
        let head = r
            .headline
            .get(class)
            .map(|h| format!("{} {:.3}", h.metric, h.value))
            .unwrap_or_default();
        println!(
            "{:<9} {:>5} {:>9.3} {:>9.3} {:>9.3} {:>9.3}   {head}",
            class.as_str(),
            m.count,
            m.precision,
            m.recall,
            m.f1,
            m.answer_recall
        );
    }
    println!("overall recall {:.3}", r.overall_recall);
    for s in &r.skipped {
        eprintln!("skipped item {}: {}", s.index, s.reason);
    }
    if let Some(p) = report {
        std::fs::write(p, serde_json::to_vec_pretty(&r)?).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn cost(pages: &[usize], bundles: &[PathBuf]) -> Result<()> {
    let cfg = CostModelConfig::default();
    cfg.validate()?;
    let largest = largest_feasible_pages(&cfg);
    match largest {
        Some(n) => println!("largest feasible full-context size: {n} pages"),
        None => println!("no page count fits the context window"),
    }
    println!(
        "{:>6}  {:>10} {:>9} {:>8}  {:>10} {:>9}  {:>7} {:>7}",
        "pages", "full $", "full s", "fits", "rag $", "rag s", "cost x", "time x"
    );
    for &p in pages.iter().chain(largest.iter()) {
        if p == 0 {
            continue;
        }
        let full = cost_latency(p, CostMode::FullContext, &cfg);
        let rag = cost_latency(p, CostMode::Retrieval, &cfg);
        println!(
            "{:>6}  {:>10.4} {:>9.2} {:>8}  {:>10.4} {:>9.2}  {:>7.2} {:>7.2}",
            p,
            full.cost,
            full.latency_s,
            if full.feasible { "yes" } else { "no" },
            rag.cost,
            rag.latency_s,
            full.cost / rag.cost,
            full.latency_s / rag.latency_s
        );
    }
    for b in bundles {
        let bundle = load_bundle(b)?;
        let c = preprocessing_cost(&bundle, &ChunkConfig::default(), &cfg)?;
        println!(
            "{}: {} chunks, {} images; contextualization {:.4}, captioning {:.4}, embedding {:.6}, total {:.4}",
            c.doc_id, c.chunks, c.images, c.contextualization, c.captioning, c.embedding, c.total
        );
    }
    Ok(())
}

fn serve(cfg: ServiceConfig) -> Result<()> {
    let bind = cfg.bind_addr.clone();
    let state = AppState::from_config(cfg)?;
    if let Err(e) = &state.runtime {
        eprintln!("warning: index unavailable, data routes will answer 503: {e}");
    }
    let app = muallm_service::router(state);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&bind)
            .await
            .with_context(|| format!("binding {bind}"))?;
        println!("listening on http://{}", listener.local_addr()?);
        let _ = std::io::stdout().flush();
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
