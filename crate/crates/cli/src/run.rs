use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use o2proxy::archsim::{spawn_core_group, CoreGroupSpec, CostSnapshot};
use o2proxy::kernels::{run_case, ExecMode, KernelKind, SizePreset, VerifyClass};
use o2proxy::profile::{Category, ProfileReport, Profiler, TimingSection};
use o2proxy::verify::{compare, record, Checkpoint, CompareMode, Status};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Relative bound for kernels whose parallel form reorders additions.
pub const TOLERANCE_EPS: f64 = 1e-12;

/// Everything `run` needs. Loaded from `--config` JSON, then overridden by
/// any explicit flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// A kernel name or `all`.
    pub suite: String,
    pub mode: ExecMode,
    pub n_cpes: usize,
    pub n_core_groups: usize,
    pub preset: SizePreset,
    pub seed: u64,
    pub out: PathBuf,
    /// Overrides of the simulated hardware; `n_cpes` above wins over the
    /// value in here.
    pub arch: Option<CoreGroupSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            suite: "all".into(),
            mode: ExecMode::MpeCpe,
            n_cpes: 64,
            n_core_groups: 1,
            preset: SizePreset::Ne30,
            seed: 0,
            out: PathBuf::from("o2proxy-out"),
            arch: None,
        }
    }
}

impl RunConfig {
    pub fn kernels(&self) -> Result<Vec<KernelKind>, CliError> {
        if self.suite == "all" {
            return Ok(KernelKind::ALL.to_vec());
        }
        self.suite.parse::<KernelKind>().map(|k| vec![k]).map_err(|e| CliError::new("config", e))
    }

    fn spec(&self) -> Result<CoreGroupSpec, CliError> {
        if !(1..=64).contains(&self.n_cpes) {
            return Err(CliError::new("config", format!("n_cpes must be in 1..=64, got {}", self.n_cpes)));
        }
        if self.n_core_groups == 0 {
            return Err(CliError::new("config", "n_core_groups must be at least 1"));
        }
        let spec = CoreGroupSpec { n_cpes: self.n_cpes, ..self.arch.clone().unwrap_or_default() };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Serialize)]
struct CaseRecord {
    kernel: KernelKind,
    component: &'static str,
    core_group: usize,
    label: String,
    dims: Vec<u64>,
    hash: String,
    verify_mode: CompareMode,
    status: Status,
    mismatch_count: u64,
    items_per_worker: Vec<Vec<usize>>,
    cost: CostSnapshot,
}

#[derive(Debug, Serialize)]
struct CaseTiming {
    label: String,
    wall_seconds: f64,
    barrier_wait_seconds: f64,
}

#[derive(Debug, Serialize)]
struct Deterministic {
    cases: Vec<CaseRecord>,
    regions: Vec<o2proxy::profile::RegionShape>,
}

#[derive(Debug, Serialize)]
struct Timing {
    host_threads: Option<usize>,
    cases: Vec<CaseTiming>,
    #[serde(flatten)]
    profile: TimingSection,
}

/// Written to `profile-<mode>.json`. Everything under `deterministic` is a
/// function of the config alone; wall-clock data lives under `timing`.
#[derive(Debug, Serialize)]
struct RunReport {
    config: RunConfig,
    all_match: bool,
    deterministic: Deterministic,
    timing: Timing,
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Runs the suite, writes checkpoints and reports, and returns whether every
/// case matched its serial baseline.
pub fn run(cfg: &RunConfig, host_threads: Option<usize>) -> Result<bool, CliError> {
    let kernels = cfg.kernels()?;
    let spec = cfg.spec()?;
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    let mode_name = cfg.mode.as_str();
    let cpe_category = match cfg.mode {
        ExecMode::Mpe => Category::MpeCompute,
        ExecMode::MpeCpe => Category::CpeCompute,
    };

    let mut profiler = Profiler::new();
    let mut cases = Vec::new();
    let mut timings = Vec::new();
    let mut compare_reports = Vec::new();
    for kind in kernels {
        for cg in 0..cfg.n_core_groups {
            let mut group = spawn_core_group(spec.clone())?;
            group.set_host_threads(host_threads);
            let seed = cfg.seed.wrapping_add(cg as u64);
            let mut label = format!("{}-{mode_name}", kind.name());
            if cfg.n_core_groups > 1 {
                label.push_str(&format!("-cg{cg}"));
            }

            profiler.enter(kind.component(), Category::MpeCompute);
            profiler.enter(kind.name(), cpe_category);
            let start = Instant::now();
            let result = run_case(kind, &group, cfg.mode, cfg.preset, seed);
            let wall = start.elapsed().as_secs_f64();
            let out = match result {
                Ok(out) => out,
                Err(e) => {
                    // Leave the tree closed even on failure.
                    let _ = profiler.exit(kind.name());
                    let _ = profiler.exit(kind.component());
                    return Err(e.into());
                }
            };
            let cost = group.ledger().snapshot(group.spec());
            let wait: f64 = out
                .stats
                .iter()
                .map(|s| s.workers.iter().map(|w| w.wait_seconds).sum::<f64>() / s.workers.len().max(1) as f64)
                .sum();
            profiler.add_elapsed("transfer", Category::Comm, Duration::from_secs_f64(cost.modeled_seconds.min(wall)));
            profiler.add_elapsed("barrier-wait", Category::Idle, Duration::from_secs_f64(wait.min(wall)));
            profiler.exit(kind.name())?;

            profiler.enter("checkpoint", Category::Io);
            let saved = record(&cfg.out, &label, &out.dims, &out.data);
            profiler.exit("checkpoint")?;
            profiler.exit(kind.component())?;
            let saved = saved?;

            // The serial MPE run of the same input is the reference.
            let baseline = if cfg.mode == ExecMode::Mpe {
                saved.clone()
            } else {
                let serial = run_case(kind, &group, ExecMode::Mpe, cfg.preset, seed)?;
                Checkpoint::new(&format!("{}-baseline", kind.name()), serial.dims, serial.data)?
            };
            let verify_mode = match kind.class() {
                VerifyClass::BitExact => CompareMode::Bit,
                VerifyClass::Tolerance => CompareMode::Rel(TOLERANCE_EPS),
            };
            let report = compare(&baseline, &saved, verify_mode)?;

            cases.push(CaseRecord {
                kernel: kind,
                component: kind.component(),
                core_group: cg,
                label: label.clone(),
                dims: saved.dims.clone(),
                hash: saved.hash.clone(),
                verify_mode,
                status: report.status,
                mismatch_count: report.mismatch_count,
                items_per_worker: out.stats.iter().map(|s| s.items_per_worker()).collect(),
                cost,
            });
            timings.push(CaseTiming { label, wall_seconds: wall, barrier_wait_seconds: wait });
            compare_reports.push(report);
        }
    }

    let all_match = compare_reports.iter().all(|r| r.matched());
    let profile = ProfileReport::build(&profiler)?;
    let report = RunReport {
        config: cfg.clone(),
        all_match,
        deterministic: Deterministic { cases, regions: profile.structure.clone() },
        timing: Timing { host_threads, cases: timings, profile: profile.timing.clone() },
    };
    let out = &cfg.out;
    write(&out.join(format!("profile-{mode_name}.json")), &serde_json::to_string_pretty(&report)?)?;
    write(&out.join(format!("regions-{mode_name}.csv")), &profile.regions_csv())?;
    write(&out.join(format!("breakdown-{mode_name}.csv")), &profile.breakdown_csv())?;
    write(&out.join(format!("compare-{mode_name}.json")), &serde_json::to_string_pretty(&compare_reports)?)?;

    let summary = serde_json::json!({
        "status": if all_match { "match" } else { "mismatch" },
        "mode": mode_name,
        "out": out,
        "cases": report.deterministic.cases.iter().map(|c| serde_json::json!({
            "label": c.label,
            "status": c.status,
            "hash": c.hash,
        })).collect::<Vec<_>>(),
    });
    emit!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(all_match)
}
