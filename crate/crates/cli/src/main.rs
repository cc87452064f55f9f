//! `dynctl`: simulate, match, and score message campaigns against synthetic
//! controls.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dynctl_core::ingest::load_dataset;
use dynctl_core::metrics::{bin_by_stratum, match_quality};
use dynctl_core::report::{analyze, attribution_cells_tsv, attribution_detail_jsonl, attribution_tsv, curves_tsv, quality_tsv};
use dynctl_core::{attribution_table, match_all, run_simulation, Dataset, Error, EventType, MatchLedger, RunConfig, SimConfig};

#[derive(Parser)]
#[command(name = "dynctl", version, about = "Synthetic-control attribution for personalized messaging")]
struct Cli {
    /// Worker threads (default: all cores). Never changes results.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic logs with a known ground truth.
    Simulate(SimulateArgs),
    /// Assign a synthetic control contact to every test message.
    Match(MatchArgs),
    /// Match-quality table over the trailing period of a ledger.
    Quality(QualityArgs),
    /// Score-binned test and control metrics.
    Bins(AnalysisArgs),
    /// Attributable fraction per stratum and event type.
    Attribute(AnalysisArgs),
    /// Quality, bins, attribution and control trends in one directory.
    Report(AnalysisArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation config (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the number of contacts.
    #[arg(long = "n-contacts")]
    n_contacts: Option<usize>,
    /// Directory for messages.jsonl, events.jsonl, contacts.jsonl and ground_truth.json.
    #[arg(long, required_unless_present = "print_config")]
    out: Option<PathBuf>,
    /// Print the effective config (every default included) and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct Inputs {
    /// Message log (JSON lines).
    #[arg(long)]
    messages: PathBuf,
    /// Event log (JSON lines, or CSV with a .csv extension).
    #[arg(long)]
    events: PathBuf,
    /// Contact profiles (JSON lines); inferred from activity when omitted.
    #[arg(long)]
    contacts: Option<PathBuf>,
}

#[derive(Args)]
struct MatchArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Run config (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output ledger (JSON lines).
    #[arg(long)]
    ledger: PathBuf,
}

#[derive(Args)]
struct Overrides {
    /// Run config (TOML); defaults to the config stored in the ledger.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Messages per score bin.
    #[arg(long)]
    bin_size: Option<usize>,
    /// Trailing period for the quality table, in days.
    #[arg(long)]
    period_days: Option<u32>,
    /// Event types to score; repeat for several. Replaces the configured list.
    #[arg(long = "event-type")]
    event_types: Vec<String>,
}

#[derive(Args)]
struct QualityArgs {
    #[arg(long)]
    ledger: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalysisArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    ledger: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    /// Output file for `bins`, output directory for `attribute` and `report`;
    /// `bins` prints to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure with the exit status it maps to.
struct Failure {
    code: u8,
    message: String,
}

const CONFIG: u8 = 2;
const INPUT: u8 = 3;
const EMPTY: u8 = 4;

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::ClickThroughUnsupported(_) => CONFIG,
        Error::EmptyLedger => EMPTY,
        _ => INPUT,
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Failure {
            code: exit_code(&err),
            message: err.to_string(),
        }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

/// Anything that goes wrong while reading a config file is a config error.
fn as_config<T>(r: dynctl_core::Result<T>) -> Outcome<T> {
    r.map_err(|e| Failure {
        code: CONFIG,
        message: e.to_string(),
    })
}

fn load_run_config(path: Option<&Path>) -> Outcome<RunConfig> {
    match path {
        Some(p) => as_config(RunConfig::load(p)),
        None => Ok(RunConfig::default()),
    }
}

/// Applies flag overrides on top of `base` and validates the result.
fn resolve(base: RunConfig, o: &Overrides) -> Outcome<RunConfig> {
    let mut cfg = match &o.config {
        Some(p) => as_config(RunConfig::load(p))?,
        None => base,
    };
    if let Some(b) = o.bin_size {
        cfg.bin_size = b;
    }
    if let Some(p) = o.period_days {
        cfg.quality_period_days = p;
    }
    if !o.event_types.is_empty() {
        cfg.event_types = o
            .event_types
            .iter()
            .map(|s| s.parse::<EventType>())
            .collect::<dynctl_core::Result<_>>()
            .map_err(|e| Failure {
                code: CONFIG,
                message: e.to_string(),
            })?;
    }
    as_config(cfg.validate())?;
    Ok(cfg)
}

fn load_inputs(inputs: &Inputs) -> Outcome<Dataset> {
    let (ds, report) = load_dataset(&inputs.messages, &inputs.events, inputs.contacts.as_deref())?;
    const SHOWN: usize = 5;
    for w in report.warnings.iter().take(SHOWN) {
        eprintln!("warning: {w}");
    }
    if report.warnings.len() > SHOWN {
        eprintln!("warning: ... and {} more", report.warnings.len() - SHOWN);
    }
    let c = &report.counts;
    eprintln!(
        "loaded {} messages, {} events, {} contacts ({} profiles inferred)",
        c.messages, c.events, c.contacts_referenced, c.profiles_inferred
    );
    Ok(ds)
}

fn write_text(path: &Path, text: &str) -> Outcome {
    std::fs::write(path, text).map_err(|e| Failure {
        code: INPUT,
        message: format!("writing {}: {e}", path.display()),
    })
}

fn create_dir(dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir).map_err(|e| Failure {
        code: INPUT,
        message: format!("creating {}: {e}", dir.display()),
    })
}

fn emit(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(p) => write_text(p, text),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| Failure {
            code: INPUT,
            message: format!("writing to stdout: {e}"),
        }),
    }
}

fn simulate(args: &SimulateArgs) -> Outcome {
    let mut cfg = match &args.config {
        Some(p) => as_config(SimConfig::load(p))?,
        None => SimConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.n_contacts {
        cfg.n_contacts = n;
    }
    as_config(cfg.validate())?;
    if args.print_config {
        return emit(None, &cfg.to_toml());
    }
    let out = args.out.as_deref().expect("clap requires --out");
    let sim = as_config(run_simulation(&cfg, cfg.seed))?;
    sim.write_to(out)?;
    eprintln!(
        "simulated {} contacts: {} messages, {} events -> {}",
        cfg.n_contacts,
        sim.messages.len(),
        sim.events.len(),
        out.display()
    );
    Ok(())
}

fn run_match(args: &MatchArgs) -> Outcome {
    let mut cfg = load_run_config(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    as_config(cfg.validate())?;
    let ds = load_inputs(&args.inputs)?;
    let ledger = match_all(&ds, &cfg, cfg.seed)?;
    ledger.save(&args.ledger)?;
    eprintln!(
        "matched {} of {} messages -> {}",
        ledger.matched_count(),
        ledger.entries.len(),
        args.ledger.display()
    );
    Ok(())
}

fn quality(args: &QualityArgs) -> Outcome {
    // the config is checked before the ledger's own copy is consulted
    if let Some(p) = &args.overrides.config {
        as_config(RunConfig::load(p).and_then(|c| c.validate()))?;
    }
    let ledger = MatchLedger::load(&args.ledger)?;
    let cfg = resolve(ledger.config.clone(), &args.overrides)?;
    let table = match_quality(&ledger, cfg.quality_period_days)?;
    emit(args.out.as_deref(), &quality_tsv(&table))
}

/// Loads the ledger and dataset for an analysis command.
fn prepare(args: &AnalysisArgs) -> Outcome<(RunConfig, MatchLedger, Dataset)> {
    // validate what can be validated before any data is read
    let preliminary = resolve(RunConfig::default(), &args.overrides)?;
    let ledger = MatchLedger::load(&args.ledger)?;
    let cfg = if args.overrides.config.is_some() {
        preliminary
    } else {
        resolve(ledger.config.clone(), &args.overrides)?
    };
    let ds = load_inputs(&args.inputs)?;
    Ok((cfg, ledger, ds))
}

fn bins(args: &AnalysisArgs) -> Outcome {
    let (cfg, ledger, ds) = prepare(args)?;
    let bins = bin_by_stratum(&ledger, &ds, &cfg)?;
    emit(args.out.as_deref(), &curves_tsv(&bins, &cfg.event_types, cfg.smoothing_window)?)
}

fn attribute(args: &AnalysisArgs) -> Outcome {
    let (cfg, ledger, ds) = prepare(args)?;
    let bins = bin_by_stratum(&ledger, &ds, &cfg)?;
    let cells = attribution_table(&bins, &cfg.event_types)?;
    let table = attribution_tsv(&cells, &cfg.event_types);
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        write_text(&dir.join("attribution.tsv"), &table)?;
        write_text(&dir.join("attribution_cells.tsv"), &attribution_cells_tsv(&cells))?;
        write_text(&dir.join("attribution_bins.jsonl"), &attribution_detail_jsonl(&bins, &cfg.event_types)?)?;
    }
    emit(None, &table)
}

fn report(args: &AnalysisArgs) -> Outcome {
    let Some(dir) = &args.out else {
        return Err(Failure {
            code: CONFIG,
            message: "report needs --out <DIR>".into(),
        });
    };
    let (cfg, ledger, ds) = prepare(args)?;
    let analysis = analyze(&ledger, &ds, &cfg)?;
    analysis.write_to(dir)?;
    write_text(&dir.join("config.toml"), &cfg.to_toml())?;
    eprintln!("report written to {}", dir.display());
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure {
                code: CONFIG,
                message: format!("--threads: {e}"),
            })?;
    }
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Match(a) => run_match(a),
        Command::Quality(a) => quality(a),
        Command::Bins(a) => bins(a),
        Command::Attribute(a) => attribute(a),
        Command::Report(a) => report(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
