//! Command-line driver: kernel suites, initialization benchmarks,
//! checkpoint comparison and profile reports.

#[macro_use]
mod error;
mod run;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use o2proxy::initcomm::{run_benchmark, BenchScenario};
use o2proxy::kernels::{ExecMode, SizePreset};
use o2proxy::profile::Breakdown;
use o2proxy::verify::{compare, Checkpoint, CompareMode};

use error::CliError;
use run::RunConfig;

const WORKERS_ENV: &str = "O2PROXY_WORKERS";

#[derive(Parser)]
#[command(name = "o2proxy", version, about = "Proxy of a many-core climate model port")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run kernel suites, checkpoint outputs and check them against serial runs.
    Run(RunArgs),
    /// Benchmark the initialization communication schemes on simulated ranks.
    InitBench(BenchArgs),
    /// Compare two checkpoint files.
    Verify(VerifyArgs),
    /// Summarize a profile written by `run`.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    CamDyn,
    CamPhys,
    PopVmix,
    PopHmix,
    CiceEvp,
    PrefixSum,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Mpe,
    #[value(name = "mpe+cpe")]
    MpeCpe,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum)]
    suite: Option<Suite>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// CPEs per core group, 1 to 64.
    #[arg(long)]
    n_cpes: Option<usize>,
    #[arg(long)]
    n_core_groups: Option<usize>,
    /// ne30, ne120, ne240, ne480, ts015, ts010, ts005 or ts003.
    #[arg(long, value_parser = |s: &str| s.parse::<SizePreset>())]
    preset: Option<SizePreset>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for checkpoints and reports.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON run configuration; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    fanout: Option<usize>,
    #[arg(long)]
    min_bytes: Option<usize>,
    #[arg(long)]
    max_bytes: Option<usize>,
    #[arg(long)]
    zero_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON scenario; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write the report JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-operation counters as CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    a: PathBuf,
    b: PathBuf,
    /// bit, ulp:<k> or rel:<eps>.
    #[arg(long, default_value = "bit", value_parser = |s: &str| s.parse::<CompareMode>())]
    mode: CompareMode,
    /// Also write the report JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Args)]
struct ReportArgs {
    /// A `profile-<mode>.json` file.
    profile: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn host_threads() -> Result<Option<usize>, CliError> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::new("config", format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

fn run_cmd(args: RunArgs) -> Result<bool, CliError> {
    let mut cfg = match &args.config {
        Some(path) => serde_json::from_str::<RunConfig>(&read(path)?)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.suite {
        cfg.suite = s.to_possible_value().expect("no skipped variants").get_name().to_string();
    }
    if let Some(m) = args.mode {
        cfg.mode = match m {
            Mode::Mpe => ExecMode::Mpe,
            Mode::MpeCpe => ExecMode::MpeCpe,
        };
    }
    if let Some(n) = args.n_cpes {
        cfg.n_cpes = n;
    }
    if let Some(n) = args.n_core_groups {
        cfg.n_core_groups = n;
    }
    if let Some(p) = args.preset {
        cfg.preset = p;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = args.out {
        cfg.out = o;
    }
    run::run(&cfg, host_threads()?)
}

fn bench_cmd(args: BenchArgs) -> Result<bool, CliError> {
    let mut sc = match &args.config {
        Some(path) => BenchScenario::from_json(&read(path)?)?,
        None => BenchScenario::default(),
    };
    macro_rules! apply {
        ($($field:ident),*) => { $(if let Some(v) = args.$field { sc.$field = v; })* };
    }
    apply!(n, group_size, fanout, min_bytes, max_bytes, zero_fraction, seed);
    let report = run_benchmark(&sc)?;
    let json = report.to_json();
    if let Some(path) = &args.out {
        write(path, &json)?;
    }
    if let Some(path) = &args.csv {
        write(path, &report.to_csv())?;
    }
    emit!("{json}");
    let ok = report.alltoallw_identical
        && report.gatherv_identical
        && report.mapping_identical.unwrap_or(true)
        && report.clumps_identical.unwrap_or(true);
    Ok(ok)
}

fn verify_cmd(args: VerifyArgs) -> Result<bool, CliError> {
    let a = Checkpoint::load(&args.a)?;
    let b = Checkpoint::load(&args.b)?;
    let report = compare(&a, &b, args.mode)?;
    let json = report.to_json();
    if let Some(path) = &args.out {
        write(path, &json)?;
    }
    emit!("{json}");
    Ok(report.matched())
}

fn report_cmd(args: ReportArgs) -> Result<bool, CliError> {
    let doc: serde_json::Value = serde_json::from_str(&read(&args.profile)?)?;
    let breakdown: Breakdown = serde_json::from_value(
        doc.pointer("/timing/breakdown")
            .cloned()
            .ok_or_else(|| CliError::new("report", "no timing.breakdown in profile"))?,
    )?;
    match args.format {
        Format::Json => emit!("{}", serde_json::to_string_pretty(&breakdown)?),
        Format::Csv => {
            emit!("kind,name,percent");
            for (k, v) in &breakdown.by_category {
                emit!("category,{k},{v:.4}");
            }
            for (k, v) in &breakdown.by_component {
                emit!("component,{k},{v:.4}");
            }
        }
        Format::Text => {
            emit!("total {:.6} s", breakdown.total_seconds);
            emit!("by category:");
            for (k, v) in &breakdown.by_category {
                emit!("  {k:<12} {v:>8.2}%");
            }
            emit!("by component:");
            for (k, v) in &breakdown.by_component {
                emit!("  {k:<12} {v:>8.2}%");
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run(a) => run_cmd(a),
        Cmd::InitBench(a) => bench_cmd(a),
        Cmd::Verify(a) => verify_cmd(a),
        Cmd::Report(a) => report_cmd(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(1)
        }
    }
}
