use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::*;

/// Above this many ranks the quadratic oracles are skipped.
const ORACLE_LIMIT: usize = 8192;

/// One benchmark configuration, loadable from JSON. Missing fields take the
/// defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchScenario {
    pub n: usize,
    pub group_size: usize,
    pub fanout: usize,
    pub min_bytes: usize,
    pub max_bytes: usize,
    pub zero_fraction: f64,
    pub ranks_per_node: usize,
    pub clumps_per_proc: usize,
    pub seed: u64,
}

impl Default for BenchScenario {
    fn default() -> Self {
        BenchScenario {
            n: 64,
            group_size: 8,
            fanout: 4,
            min_bytes: 8,
            max_bytes: 8,
            zero_fraction: 0.0,
            ranks_per_node: 6,
            clumps_per_proc: 4,
            seed: 0,
        }
    }
}

impl BenchScenario {
    pub fn from_json(text: &str) -> Result<Self, InitError> {
        serde_json::from_str(text).map_err(|e| InitError::Scenario(e.to_string()))
    }

    fn validate(&self) -> Result<(), InitError> {
        if self.min_bytes > self.max_bytes {
            return Err(InitError::Scenario(format!(
                "min_bytes {} exceeds max_bytes {}",
                self.min_bytes, self.max_bytes
            )));
        }
        if !(0.0..=1.0).contains(&self.zero_fraction) {
            return Err(InitError::Scenario(format!("zero_fraction {} outside [0, 1]", self.zero_fraction)));
        }
        if self.ranks_per_node == 0 {
            return Err(InitError::Scenario("ranks_per_node must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SchemeReport {
    pub stats: CommStats,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub scenario: BenchScenario,
    pub alltoallw_flat: SchemeReport,
    pub alltoallw_hierarchical: SchemeReport,
    pub alltoallw_dense_formula: u64,
    pub alltoallw_identical: bool,
    pub gatherv_staged: SchemeReport,
    pub gatherv_stages: u32,
    pub gatherv_identical: bool,
    pub mapping: SchemeReport,
    pub mapping_naive: Option<SchemeReport>,
    pub mapping_identical: Option<bool>,
    pub clumps: SchemeReport,
    pub clumps_naive: Option<SchemeReport>,
    pub clumps_identical: Option<bool>,
    pub io_processes: usize,
}

fn timed<T>(f: impl FnOnce() -> Result<(T, CommStats), InitError>) -> Result<(T, SchemeReport), InitError> {
    let start = Instant::now();
    let (out, stats) = f()?;
    Ok((out, SchemeReport { stats, seconds: start.elapsed().as_secs_f64() }))
}

pub fn run_benchmark(sc: &BenchScenario) -> Result<BenchReport, InitError> {
    sc.validate()?;
    let topo = RankTopology::new(sc.n, sc.group_size)?;
    let plan = AlltoallwPlan::random(sc.n, sc.min_bytes, sc.max_bytes, sc.zero_fraction, sc.seed);
    let (flat, flat_r) = timed(|| flat_alltoallw(&topo, &plan))?;
    let (hier, hier_r) = timed(|| hierarchical_alltoallw(&topo, &plan))?;

    let payloads: Vec<Vec<u8>> = (0..sc.n).map(|r| plan.payload(r, 0).to_vec()).collect();
    let (gather, gather_r) = timed(|| {
        let g = staged_gatherv(&topo, 0, sc.fanout, &payloads)?;
        let stats = g.stats.clone();
        Ok((g, stats))
    })?;

    let ids = random_node_ids(sc.n, sc.ranks_per_node, 16, sc.seed);
    let (mapping, mapping_r) = timed(|| map_node_to_rank(&ids))?;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed ^ 0x5eed);
    let weights: Vec<u64> = (0..sc.n * sc.clumps_per_proc).map(|_| rng.gen_range(0..1000)).collect();
    let (clumps, clumps_r) = timed(|| distribute_clumps(&weights, sc.n))?;

    let small = sc.n <= ORACLE_LIMIT;
    let (mapping_naive, mapping_identical) = if small {
        let (m, r) = timed(|| map_node_to_rank_naive(&ids))?;
        (Some(r), Some(m == mapping))
    } else {
        (None, None)
    };
    let (clumps_naive, clumps_identical) = if small {
        let (c, r) = timed(|| distribute_clumps_naive(&weights, sc.n))?;
        (Some(r), Some(c == clumps))
    } else {
        (None, None)
    };

    Ok(BenchReport {
        scenario: sc.clone(),
        alltoallw_flat: flat_r,
        alltoallw_hierarchical: hier_r,
        alltoallw_dense_formula: hierarchical_dense_messages(&topo),
        alltoallw_identical: flat == hier,
        gatherv_stages: gather.stages,
        gatherv_identical: gather.buffer == flat_gatherv(&payloads),
        gatherv_staged: gather_r,
        mapping: mapping_r,
        mapping_naive,
        mapping_identical,
        clumps: clumps_r,
        clumps_naive,
        clumps_identical,
        io_processes: choose_io_processes(sc.n).len(),
    })
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per measured operation.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("operation,messages,bytes,peak_resident_bytes,comparator_ops,pass_count,seconds\n");
        let rows = [
            ("alltoallw_flat", Some(&self.alltoallw_flat)),
            ("alltoallw_hierarchical", Some(&self.alltoallw_hierarchical)),
            ("gatherv_staged", Some(&self.gatherv_staged)),
            ("mapping_quicksort", Some(&self.mapping)),
            ("mapping_naive", self.mapping_naive.as_ref()),
            ("clumps_prefix", Some(&self.clumps)),
            ("clumps_naive", self.clumps_naive.as_ref()),
        ];
        for (name, r) in rows {
            if let Some(r) = r {
                let s = &r.stats;
                let _ = writeln!(
                    out,
                    "{name},{},{},{},{},{},{:.6}",
                    s.messages,
                    s.bytes,
                    s.peak_resident(),
                    s.comparator_ops,
                    s.pass_count,
                    r.seconds
                );
            }
        }
        out
    }
}
