//! `rabs` — generate synthetic traces, featurize them, run the detectors
//! over replicated seeds, and save or resume engine state mid-trace.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 runtime error.

mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rabs_core::features::{featurize, load_spec, load_trace, save_trace, FeatureSpec};
use rabs_core::harness::{
    build_report, results_csv, run_suite, GroupReport, ModelKind, MODEL_SEED_SALT,
};
use rabs_core::rabs::RabsEngine;
use rabs_core::synth::assemble;

use config::Experiment;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<config::ConfigError> for CliError {
    fn from(e: config::ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Parser)]
#[command(
    name = "rabs",
    version,
    about = "Immune-inspired anomaly detectors over synthetic packet traces"
)]
struct Cli {
    /// Cap the worker threads used for replica parallelism (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the configured script as a labelled trace file.
    Synth(SynthArgs),
    /// Rewrite a trace as one feature bitstring per packet.
    Featurize(FeaturizeArgs),
    /// Run the configured models over replicated seeds and write results.
    Run(RunArgs),
    /// Save or resume reactive-engine state mid-trace.
    #[command(subcommand)]
    Snapshot(SnapshotCmd),
}

#[derive(Args)]
struct SynthArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Trace seed; defaults to the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (default: <out_dir>/trace.tsv).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FeaturizeArgs {
    /// Input trace file.
    #[arg(long)]
    trace: PathBuf,
    /// Feature schema file (default: the built-in schema).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Base seed override; replica i runs on seed base+i.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the config's out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also print the written results in this format.
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum SnapshotCmd {
    /// Run the reactive engine over the first N packets and save its state.
    Dump(DumpArgs),
    /// Load saved engine state and finish the configured trace.
    Resume(ResumeArgs),
}

#[derive(Args)]
struct DumpArgs {
    /// Experiment config (TOML); must select the reactive model.
    #[arg(long)]
    config: PathBuf,
    /// Run seed; defaults to the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Packets to process before saving.
    #[arg(long)]
    packets: u64,
    /// Snapshot file (default: <out_dir>/engine.snapshot.json).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ResumeArgs {
    /// The config the snapshot was dumped under.
    #[arg(long)]
    config: PathBuf,
    /// The seed the snapshot was dumped under; defaults to the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Snapshot produced by `snapshot dump`.
    #[arg(long)]
    snapshot: PathBuf,
    /// Verdict log file, one `seq_no TAB verdict` line per packet
    /// (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".to_string()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(runtime)?;
    }
    match cli.cmd {
        Cmd::Synth(args) => cmd_synth(args),
        Cmd::Featurize(args) => cmd_featurize(args),
        Cmd::Run(args) => cmd_run(args),
        Cmd::Snapshot(SnapshotCmd::Dump(args)) => cmd_snapshot_dump(args),
        Cmd::Snapshot(SnapshotCmd::Resume(args)) => cmd_snapshot_resume(args),
    }
}

/// The packet stream for (experiment, seed), shared by every command that
/// replays traffic: trace randomness never depends on the model.
fn assemble_trace(
    exp: &Experiment,
    seed: u64,
) -> Result<Vec<rabs_core::features::PacketRecord>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    assemble(&exp.script.script, &exp.setup.profiles, &mut rng).map_err(runtime)
}

fn out_path(
    explicit: &Option<PathBuf>,
    exp: &Experiment,
    default_name: &str,
) -> Result<PathBuf, CliError> {
    match explicit {
        Some(p) => Ok(p.clone()),
        None => {
            std::fs::create_dir_all(&exp.out_dir).map_err(runtime)?;
            Ok(exp.out_dir.join(default_name))
        }
    }
}

fn write_output(out: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(runtime),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(runtime),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let exp = config::load(&args.config)?;
    let seed = args.seed.unwrap_or(exp.base_seed);
    let packets = assemble_trace(&exp, seed)?;
    let out = out_path(&args.out, &exp, "trace.tsv")?;
    save_trace(&packets, &out).map_err(runtime)?;
    eprintln!(
        "wrote {} packets ({} segments, seed {seed}) to {}",
        packets.len(),
        exp.script.script.segments.len(),
        out.display()
    );
    Ok(())
}

fn cmd_featurize(args: FeaturizeArgs) -> Result<(), CliError> {
    let packets = load_trace(&args.trace).map_err(|e| CliError::Usage(format!("trace: {e}")))?;
    let spec = match &args.spec {
        Some(p) => load_spec(p).map_err(|e| CliError::Usage(format!("spec: {e}")))?,
        None => FeatureSpec::default_spec(),
    };
    let mut text = String::new();
    for p in &packets {
        let v = featurize(p, &spec);
        text.push_str(&format!("{}\t{}\n", p.seq_no, v.bits));
    }
    write_output(&args.out, &text)
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let mut exp = config::load(&args.config)?;
    let base_seed = args.seed.unwrap_or(exp.base_seed);
    if let Some(dir) = args.out {
        exp.out_dir = dir;
    }
    std::fs::create_dir_all(&exp.out_dir).map_err(runtime)?;

    let scripts = vec![exp.script.clone()];
    let results =
        run_suite(&exp.setup, &scripts, &exp.models, base_seed, exp.replicates).map_err(runtime)?;

    let report = build_report(&results);
    for group in &report.groups {
        print_group(group);
    }

    let csv = results_csv(&results);
    let json = serde_json::to_string_pretty(&report).map_err(runtime)?;
    let csv_path = exp.out_dir.join("results.csv");
    let json_path = exp.out_dir.join("report.json");
    std::fs::write(&csv_path, &csv).map_err(runtime)?;
    std::fs::write(&json_path, &json).map_err(runtime)?;

    match args.format {
        Some(OutputFormat::Csv) => print!("{csv}"),
        Some(OutputFormat::Json) => println!("{json}"),
        None => {}
    }
    eprintln!(
        "wrote {} runs to {} and {}",
        results.len(),
        csv_path.display(),
        json_path.display()
    );
    Ok(())
}

fn print_group(group: &GroupReport) {
    let agg = &group.aggregate;
    let m = agg.mean_matrix;
    let fmt_rate = |r: Option<f64>| match r {
        Some(v) => format!("{v:.4}"),
        None => "-".to_string(),
    };
    println!(
        "== {} / {} ({} phases, {} runs) ==",
        group.model, group.script, group.phases, agg.runs
    );
    println!("                 pred:attack  pred:normal");
    println!(
        "  actual attack  {:>11.1}  {:>11.1}",
        m.true_pos, m.false_neg
    );
    println!(
        "  actual normal  {:>11.1}  {:>11.1}",
        m.false_pos, m.true_neg
    );
    println!(
        "  sens {:>6}   spec {:>6}",
        fmt_rate(agg.sens),
        fmt_rate(agg.spec)
    );
    for r in &agg.reactions {
        let median = r
            .median_reaction
            .map(|v| format!("{v}"))
            .unwrap_or_else(|| "-".to_string());
        println!(
            "  reaction {} exposure {}: median {} packets ({}/{} detected)",
            r.attack, r.exposure, median, r.detected, r.runs
        );
    }
    println!();
}

fn reactive_engine_config(exp: &Experiment) -> Result<(), CliError> {
    if exp.models.contains(&ModelKind::Rabs) {
        Ok(())
    } else {
        Err(CliError::Usage(
            "snapshots capture the reactive engine; set model = \"rabs\" or \"both\"".to_string(),
        ))
    }
}

fn cmd_snapshot_dump(args: DumpArgs) -> Result<(), CliError> {
    let exp = config::load(&args.config)?;
    reactive_engine_config(&exp)?;
    let seed = args.seed.unwrap_or(exp.base_seed);
    let packets = assemble_trace(&exp, seed)?;
    if args.packets as usize > packets.len() {
        return Err(CliError::Usage(format!(
            "--packets {} exceeds the configured trace ({} packets)",
            args.packets,
            packets.len()
        )));
    }

    let mut engine = RabsEngine::new(
        exp.setup.rabs.clone(),
        exp.setup.spec.clone(),
        seed ^ MODEL_SEED_SALT,
    )
    .map_err(runtime)?;
    engine
        .process_trace(&packets[..args.packets as usize])
        .map_err(runtime)?;

    let out = out_path(&args.out, &exp, "engine.snapshot.json")?;
    engine.save_snapshot(&out).map_err(runtime)?;
    eprintln!(
        "engine state after {} of {} packets (seed {seed}) -> {}",
        args.packets,
        packets.len(),
        out.display()
    );
    Ok(())
}

fn cmd_snapshot_resume(args: ResumeArgs) -> Result<(), CliError> {
    let exp = config::load(&args.config)?;
    let seed = args.seed.unwrap_or(exp.base_seed);
    let packets = assemble_trace(&exp, seed)?;

    let mut engine = RabsEngine::load_snapshot(&args.snapshot)
        .map_err(|e| CliError::Usage(format!("snapshot: {e}")))?;
    let done = engine.packets_seen() as usize;
    if done > packets.len() {
        return Err(CliError::Usage(format!(
            "snapshot has processed {done} packets but the configured trace has only {}",
            packets.len()
        )));
    }

    let outcomes = engine.process_trace(&packets[done..]).map_err(runtime)?;
    let mut text = String::new();
    let mut flagged = 0usize;
    for o in &outcomes {
        if o.verdict.is_attack() {
            flagged += 1;
        }
        text.push_str(&format!("{}\t{}\n", o.seq_no, o.verdict));
    }
    write_output(&args.out, &text)?;
    eprintln!(
        "resumed at packet {done}, processed {} more, {flagged} flagged as attacks",
        outcomes.len()
    );
    Ok(())
}
