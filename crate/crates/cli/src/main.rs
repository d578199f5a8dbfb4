use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use openbook::pipeline::{
    read_predictions, BackendKind, Mode, Pipeline, RunConfig, SearchKind, StageReport, COST_HEADER,
};
use openbook::rerank::{Factorization, Weights};
use openbook::Error;

/// Retrieve web evidence, prompt a language model with it, and rerank the
/// sampled answers.
#[derive(Parser)]
#[command(name = "openbook", version)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,

    /// Repeat for more detail (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search, fetch, chunk and rank paragraphs for every question.
    Retrieve,
    /// Sample candidate answers and score them.
    Answer,
    /// Pick one answer per question from the cached candidates.
    Rerank,
    /// Score a predictions file.
    Eval {
        /// Defaults to the rerank output for the configured mode.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Grid-search PoE weights on the held-out split.
    TuneWeights,
    /// Metric and FLOPs as a function of paragraph count.
    Cost,
    /// Every stage, the closed-book baseline, and the cost table.
    Run,
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Args)]
struct Overrides {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Prompt banks to use (nq, hotpotqa, strategyqa, fever, or a custom id).
    #[arg(long, global = true)]
    dataset_id: Option<String>,
    /// Directory of bank files overriding the shipped ones.
    #[arg(long, global = true)]
    banks: Option<PathBuf>,
    /// open_book_search, open_book_gold or closed_book.
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// mock or http.
    #[arg(long, global = true, value_parser = parse_backend)]
    backend: Option<BackendKind>,
    #[arg(long, global = true)]
    backend_url: Option<String>,
    #[arg(long, global = true)]
    param_count: Option<u64>,
    #[arg(long, global = true)]
    context_tokens: Option<usize>,
    /// google or fixture.
    #[arg(long, global = true, value_parser = parse_search)]
    search: Option<SearchKind>,
    #[arg(long, global = true)]
    fixture_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    top_urls: Option<usize>,
    #[arg(long, global = true)]
    chunk_sentences: Option<usize>,
    /// Number of top-ranked paragraphs to condition on.
    #[arg(long, global = true)]
    paragraphs: Option<usize>,
    #[arg(long, global = true)]
    shots: Option<usize>,
    #[arg(long, global = true)]
    nucleus_p: Option<f64>,
    #[arg(long, global = true)]
    temperature: Option<f64>,
    #[arg(long, global = true)]
    max_new_tokens: Option<usize>,
    #[arg(long, global = true)]
    samples_per_paragraph: Option<usize>,
    #[arg(long, global = true)]
    closed_book_samples: Option<usize>,
    #[arg(long, global = true)]
    heldout_fraction: Option<f64>,
    /// answer-prob, rag, noisy-channel or poe.
    #[arg(long, global = true)]
    scorer: Option<Factorization>,
    /// Five comma-separated PoE weights.
    #[arg(long, global = true)]
    weights: Option<Weights>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// Never touch the network; cache misses fail with exit code 3.
    #[arg(long, global = true)]
    offline: bool,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Comma-separated paragraph counts for the cost table.
    #[arg(long, global = true, value_delimiter = ',')]
    cost_sweep: Option<Vec<usize>>,
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    match s {
        "mock" => Ok(BackendKind::Mock),
        "http" => Ok(BackendKind::Http),
        _ => Err(format!("unknown backend {s:?} (expected mock or http)")),
    }
}

fn parse_search(s: &str) -> Result<SearchKind, String> {
    match s {
        "google" => Ok(SearchKind::Google),
        "fixture" => Ok(SearchKind::Fixture),
        _ => Err(format!(
            "unknown search engine {s:?} (expected google or fixture)"
        )),
    }
}

impl Overrides {
    fn apply(self) -> openbook::Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_toml_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag { c.$($field).+ = v; })*
            };
        }
        set! {
            dataset => dataset,
            dataset_id => dataset_id,
            mode => mode,
            backend => backend.kind,
            param_count => backend.param_count,
            context_tokens => backend.context_tokens,
            search => search.kind,
            top_urls => top_urls,
            chunk_sentences => chunk_sentences,
            paragraphs => top_paragraphs,
            shots => shots,
            nucleus_p => nucleus_p,
            temperature => temperature,
            max_new_tokens => max_new_tokens,
            samples_per_paragraph => samples_per_paragraph,
            closed_book_samples => closed_book_samples,
            heldout_fraction => heldout_fraction,
            scorer => scorer,
            seed => seed,
            cache => cache,
            workers => workers,
            cost_sweep => cost_sweep,
        }
        if self.banks.is_some() {
            c.banks = self.banks;
        }
        if self.backend_url.is_some() {
            c.backend.url = self.backend_url;
        }
        if self.fixture_dir.is_some() {
            c.search.fixture_dir = self.fixture_dir;
        }
        if self.weights.is_some() {
            c.weights = self.weights;
        }
        c.offline |= self.offline;
        c.validate()?;
        Ok(c)
    }
}

fn print_stage(r: &StageReport) {
    println!(
        "{}: {} questions, {} computed, {} reused, {} failed",
        r.stage,
        r.total,
        r.computed,
        r.reused,
        r.failed.len()
    );
    for (id, cause) in &r.failed {
        println!("  {id}: {cause}");
    }
}

fn execute(command: Command, config: RunConfig) -> openbook::Result<()> {
    if let Command::Config = command {
        print!("{}", config.to_toml());
        return Ok(());
    }
    let mode = config.mode;
    let pipeline = Pipeline::new(config)?;
    match command {
        Command::Retrieve => print_stage(&pipeline.retrieve()?),
        Command::Answer => print_stage(&pipeline.answer()?),
        Command::Rerank => {
            let predictions = pipeline.rerank()?;
            println!(
                "{} predictions written to {}",
                predictions.len(),
                pipeline.results_dir(mode).join("predictions.jsonl").display()
            );
        }
        Command::Eval { predictions } => {
            let report = match predictions {
                Some(path) => pipeline.eval_predictions(mode, &read_predictions(&path)?)?,
                None => pipeline.eval()?,
            };
            print!("{}", report.summary());
        }
        Command::TuneWeights => {
            let tuned = pipeline.tune()?;
            println!("weights {} (held-out metric {:.4})", tuned.weights, tuned.metric);
        }
        Command::Cost => {
            println!("{COST_HEADER}");
            for row in pipeline.cost()? {
                println!("{}", row.tsv());
            }
        }
        Command::Run => {
            let outcome = pipeline.run()?;
            for stage in &outcome.stages {
                print_stage(stage);
            }
            for report in &outcome.reports {
                println!();
                print!("{}", report.summary());
            }
            println!();
            println!("{COST_HEADER}");
            for row in &outcome.cost {
                println!("{}", row.tsv());
            }
        }
        Command::Config => unreachable!("handled above"),
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::OfflineMiss { .. } => 3,
        Error::PartialFailure { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    // usage errors share exit code 1 with config errors; 2 means partial failure
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| level.into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let result = cli
        .overrides
        .apply()
        .and_then(|config| execute(cli.command, config));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
