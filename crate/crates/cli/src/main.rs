use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use xmrec::market_data::MarketId;
use xmrec::pipeline::{self, EvalInput, PipelineConfig};
use xmrec::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "xmrec", version, about = "Cross-market recommendation pipeline")]
struct Cli {
    /// Pipeline config (TOML).
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workspace: Option<PathBuf>,
    /// Run a per-target stage for this target only.
    #[arg(long, global = true)]
    target: Option<String>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Comma-separated market list, used when no config is given.
    #[arg(long, global = true, value_delimiter = ',')]
    markets: Vec<String>,
    /// Comma-separated targets; defaults to every market without a config.
    #[arg(long, global = true, value_delimiter = ',')]
    targets: Vec<String>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load market files into the workspace snapshot.
    Ingest,
    /// Write the synthetic fixture into the data directory.
    Synth,
    /// Compute pre-rank feature tables.
    Prerank,
    /// Run feature selection.
    Select,
    /// Train the bagged ranker and write ranked runs.
    Train,
    /// Score run files against qrels; repeat the three flags per market.
    Evaluate {
        #[arg(long = "market", required = true)]
        market: Vec<String>,
        #[arg(long = "run", required = true)]
        run: Vec<PathBuf>,
        #[arg(long = "qrels", required = true)]
        qrels: Vec<PathBuf>,
    },
    /// Collect per-target metrics and test scores into report.json.
    Report,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => {
            if cli.markets.is_empty() {
                return Err(Error::Config("pass --config or --markets".into()));
            }
            let targets = if cli.targets.is_empty() { cli.markets.clone() } else { cli.targets.clone() };
            PipelineConfig {
                markets: cli.markets.clone(),
                targets,
                ..PipelineConfig::from_toml("markets = [\"x\"]\ntargets = [\"x\"]\n")?
            }
        }
    };
    if cli.config.is_some() {
        if !cli.markets.is_empty() {
            cfg.markets = cli.markets.clone();
        }
        if !cli.targets.is_empty() {
            cfg.targets = cli.targets.clone();
        }
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = &cli.workspace {
        cfg.workspace = w.clone();
    }
    if let Some(d) = &cli.data_dir {
        cfg.data_dir = d.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    // a closed pipe (e.g. `| head`) is not an error
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    Ok(())
}

fn per_target<T: Serialize>(cfg: &PipelineConfig, only: Option<&str>, f: impl Fn(&PipelineConfig, &str) -> Result<T>) -> Result<()> {
    let targets: Vec<&str> = match only {
        Some(t) => vec![t],
        None => cfg.targets.iter().map(String::as_str).collect(),
    };
    for t in targets {
        print(&f(cfg, t)?)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let only = cli.target.as_deref();
    match &cli.command {
        Command::Ingest => print(&pipeline::cmd_ingest(&cfg)?),
        Command::Synth => print(&pipeline::cmd_synth(&cfg)?),
        Command::Prerank => per_target(&cfg, only, pipeline::cmd_prerank),
        Command::Select => per_target(&cfg, only, |c, t| {
            pipeline::cmd_select(c, t).map(|r| r.kept().iter().map(|s| s.to_string()).collect::<Vec<_>>())
        }),
        Command::Train => per_target(&cfg, only, pipeline::cmd_train),
        Command::Evaluate { market, run, qrels } => {
            if market.len() != run.len() || market.len() != qrels.len() {
                return Err(Error::Config("--market, --run and --qrels must be given the same number of times".into()));
            }
            let inputs = market
                .iter()
                .zip(run)
                .zip(qrels)
                .map(|((m, r), q)| {
                    let market = MarketId::new(m).map_err(|e| Error::Config(e.to_string()))?;
                    Ok(EvalInput { market, run: r.clone(), qrels: q.clone() })
                })
                .collect::<Result<Vec<_>>>()?;
            print(&pipeline::cmd_evaluate(&cfg, &inputs)?)
        }
        Command::Report => print(&pipeline::cmd_report(&cfg)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
