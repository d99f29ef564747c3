use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use opinion_core::backends::BackendSpec;
use opinion_core::classifier::{Classification, ClassifiedOpinion, Classifier, NoKind};
use opinion_core::config::{load_config, parse_config, GridSpec, RunConfig};
use opinion_core::engine::RunResults;
use opinion_core::protocol::UpdateMode;
use opinion_core::report::{self, GridOutcome};
use opinion_core::store::{self, Manifest};
use opinion_core::subjects::{Stance, TextOverrides};

const DEFAULT_CONFIG: &str = "mode = \"freeform\"\n[backend]\nkind = \"stubborn\"\n";

#[derive(Parser)]
#[command(name = "opinion-sim", version, about = "Opinion dynamics among chat-model agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one batch of simulations.
    Run(RunArgs),
    /// Run every (distribution, subject) combination and summarize consensus.
    Grid(RunArgs),
    /// Classify opinions from a text file, a transcript or a labelled corpus.
    Classify(ClassifyArgs),
    /// Rewrite the summary CSVs of a run directory from its transcripts.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Continue an interrupted run in place.
    Resume {
        #[arg(long)]
        out: PathBuf,
        /// Config for settings not kept in the manifest (lexicon, cache).
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// stubborn, midpoint or http
    #[arg(long)]
    backend: Option<String>,
    /// freeform or closedform
    #[arg(long)]
    mode: Option<UpdateMode>,
    /// Show agents their two previous opinions.
    #[arg(long)]
    memory: bool,
    /// Fail a simulation on any unclassifiable opinion.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Text file with one opinion per line, or a transcript (.jsonl).
    input: Option<PathBuf>,
    /// Classify this text instead of a file.
    #[arg(long, conflicts_with = "input")]
    text: Option<String>,
    /// Labelled corpus (JSONL); prints an accuracy report.
    #[arg(long, conflicts_with_all = ["input", "text"])]
    corpus: Option<PathBuf>,
    #[arg(long, default_value = "freeform")]
    mode: UpdateMode,
    #[arg(long, default_value = "Thing A")]
    item_a: String,
    #[arg(long, default_value = "Thing B")]
    item_b: String,
    /// Alternative lexicon file.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Exit non-zero when any opinion is unclassified or mislabelled.
    #[arg(long)]
    strict: bool,
}

fn run_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => load_config(p).with_context(|| format!("loading {}", p.display()))?,
        None => parse_config(DEFAULT_CONFIG, None)?,
    };
    let sim = &mut cfg.simulation;
    if let Some(s) = args.seed {
        sim.master_seed = s;
    }
    if let Some(b) = &args.backend {
        let spec: BackendSpec = b.parse().map_err(anyhow::Error::msg)?;
        let same_kind = std::mem::discriminant(&spec) == std::mem::discriminant(&sim.backend);
        if !same_kind {
            sim.backend = spec;
        }
    }
    if let Some(m) = args.mode {
        sim.mode = m;
    }
    sim.with_memory |= args.memory;
    sim.strict_classification |= args.strict;
    if let Some(p) = args.parallelism {
        if p == 0 {
            bail!("--parallelism must be at least 1");
        }
        sim.parallelism = p;
    }
    sim.validate()?;
    Ok(cfg)
}

fn print_table(results: &RunResults) {
    let a = &results.metrics.aggregate;
    println!(
        "{} | {} | {} simulation(s)",
        results.config.distribution.label(),
        results.config.subject.setting().label(),
        a.n_simulations
    );
    for s in Stance::ALL {
        let ms = a.get(s);
        println!("  {}  {:6.2} ± {:.2}", s.letter(), ms.mean, ms.std);
    }
}

fn cmd_run(args: &RunArgs) -> Result<ExitCode> {
    let cfg = run_config(args)?;
    let backend = report::backend_for(&cfg)?;
    let results = report::run_and_report(&cfg, backend, &cfg.classifier()?, &args.out, args.resume)?;
    print_table(&results);
    Ok(finish(&results))
}

fn finish(results: &RunResults) -> ExitCode {
    if results.complete() {
        return ExitCode::SUCCESS;
    }
    for f in &results.failures {
        eprintln!("simulation {} failed: {}", f.simulation_index, f.error);
    }
    eprintln!("rerun with --resume to continue from the last checkpoint");
    ExitCode::FAILURE
}

fn cmd_grid(args: &RunArgs) -> Result<ExitCode> {
    let cfg = run_config(args)?;
    let backend = report::backend_for(&cfg)?;
    let GridOutcome {
        summary,
        failed_combinations,
    } = report::run_grid(&cfg, backend, &cfg.classifier()?, &args.out, args.resume)?;
    println!(
        "non-consensus starts ending all-partial: {}/{} ({:.2}%)",
        summary.noncons_counted, summary.noncons_combos_total, summary.pct_noncons_all_partial
    );
    println!(
        "consensus starts kept: {}/{} ({:.2}%)",
        summary.cons_counted, summary.cons_combos_total, summary.pct_cons_kept
    );
    if failed_combinations.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    for c in &failed_combinations {
        eprintln!("incomplete: {c}");
    }
    Ok(ExitCode::FAILURE)
}

fn cmd_resume(out: &Path, config: Option<&Path>) -> Result<ExitCode> {
    let manifest = Manifest::load(out)?.with_context(|| format!("{}: no run manifest", out.display()))?;
    let mut cfg = match config {
        Some(p) => load_config(p)?,
        None => RunConfig {
            simulation: manifest.config.clone(),
            text_overrides: TextOverrides::default(),
            lexicon: None,
            cache_dir: None,
            grid: GridSpec::default(),
        },
    };
    cfg.simulation = manifest.config;
    let backend = report::backend_for(&cfg)?;
    let results = report::run_and_report(&cfg, backend, &cfg.classifier()?, out, true)?;
    print_table(&results);
    Ok(finish(&results))
}

fn describe(c: &Classification) -> String {
    match c {
        Classification::Explicit(o) => describe_opinion(o),
        Classification::Implicit => "implicit".into(),
        Classification::Unclassified => "unclassified".into(),
    }
}

fn describe_opinion(o: &ClassifiedOpinion) -> String {
    let mut s = format!("{:?}", o.stance);
    if let Some(k) = o.no_kind {
        s.push_str(match k {
            NoKind::ExplicitZero => "/ExplicitZero",
            NoKind::Unspecified => "/Unspecified",
        });
    }
    if let Some(a) = o.allocation {
        s.push_str(&format!(" {a}%"));
    }
    s
}

#[derive(serde::Deserialize)]
struct CorpusRecord {
    text: String,
    mode: UpdateMode,
    item_a: String,
    item_b: String,
    stance: Stance,
    #[serde(default)]
    no_kind: Option<NoKind>,
    #[serde(default)]
    allocation: Option<f64>,
}

fn cmd_classify(args: &ClassifyArgs) -> Result<ExitCode> {
    let base = match &args.lexicon {
        Some(p) => Classifier::new(&opinion_core::classifier::LexiconConfig::load(p)?)?,
        None => Classifier::default(),
    };
    let mut bad: Vec<String> = Vec::new();
    if let Some(path) = &args.corpus {
        let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
        let mut total = 0;
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let r: CorpusRecord = serde_json::from_str(line).with_context(|| format!("line {}", n + 1))?;
            total += 1;
            let got = base.clone().with_items(&r.item_a, &r.item_b).classify(&r.text, r.mode);
            let right = matches!(&got, Classification::Explicit(o)
                if o.stance == r.stance && o.no_kind == r.no_kind && o.allocation == r.allocation);
            if !right {
                bad.push(format!("line {}: got {}: {}", n + 1, describe(&got), r.text));
            }
        }
        let correct = total - bad.len();
        let pct = if total == 0 {
            0.0
        } else {
            100.0 * correct as f64 / total as f64
        };
        println!("accuracy: {correct}/{total} ({pct:.2}%)");
        for b in &bad {
            println!("  {b}");
        }
    } else if let Some(path) = args.input.as_deref().filter(|p| is_transcript(p)) {
        let (header, events) = store::read_transcript(path)?;
        let mode: UpdateMode = header.mode.parse().map_err(anyhow::Error::msg)?;
        let c = base.clone().with_items(&header.item_a, &header.item_b);
        for e in &events {
            let got = c.classify(&e.raw_response, mode);
            let stored = describe_opinion(&e.classified);
            let line = format!("t={} agent={} stored={stored} now={}", e.t, e.agent_id, describe(&got));
            let agrees = match &got {
                Classification::Explicit(o) => o.stance == e.classified.stance && o.no_kind == e.classified.no_kind,
                Classification::Implicit => e.classified.implicit,
                Classification::Unclassified => false,
            };
            println!("{line}");
            if !agrees && e.reask_responses.is_empty() {
                bad.push(line);
            }
        }
    } else {
        let c = base.with_items(&args.item_a, &args.item_b);
        let texts: Vec<String> = match (&args.text, &args.input) {
            (Some(t), _) => vec![t.clone()],
            (None, Some(p)) => std::fs::read_to_string(p)
                .with_context(|| p.display().to_string())?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(str::to_string)
                .collect(),
            (None, None) => bail!("give an input file, --text or --corpus"),
        };
        for (n, t) in texts.iter().enumerate() {
            let got = c.classify(t, args.mode);
            println!("{}\t{}", n + 1, describe(&got));
            if matches!(got, Classification::Unclassified) {
                bad.push(format!("line {}: {t}", n + 1));
            }
        }
    }
    if args.strict && !bad.is_empty() {
        eprintln!("{} opinion(s) failed:", bad.len());
        for b in &bad {
            eprintln!("  {b}");
        }
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn is_transcript(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "jsonl")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Report { out } => report::report_run(out)
            .map(|written| {
                for p in written {
                    println!("{}", p.display());
                }
                ExitCode::SUCCESS
            })
            .map_err(Into::into),
        Command::Resume { out, config } => cmd_resume(out, config.as_deref()),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
