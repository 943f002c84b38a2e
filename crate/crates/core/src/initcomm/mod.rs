//! Initialization-time communication on simulated ranks.
//!
//! Every redesigned algorithm ships with the straightforward version it
//! replaces. Both run over the same in-memory network or counters so their
//! results can be compared byte for byte and their costs side by side.

mod alltoallw;
mod bench;
mod clumps;
mod gatherv;
mod io;
mod mapping;
pub mod network;
mod pack;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use alltoallw::{flat_alltoallw, hierarchical_alltoallw, hierarchical_dense_messages, Delivery};
pub use bench::{run_benchmark, BenchReport, BenchScenario};
pub use clumps::{distribute_clumps, distribute_clumps_naive, ClumpAssignment};
pub use gatherv::{flat_gatherv, staged_gatherv, GatherResult};
pub use io::{choose_io_processes, emit_io_config, IoConfig, IO_RATIO};
pub use mapping::{map_node_to_rank, map_node_to_rank_naive, random_node_ids, RankMapping};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InitError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("plan covers {plan} ranks but topology has {topo}")]
    PlanMismatch { plan: usize, topo: usize },
    #[error("malformed pack at rank {rank}: {reason}")]
    MalformedPack { rank: usize, reason: String },
    #[error("rank {rank} timed out waiting for rank {from}")]
    Timeout { rank: usize, from: usize },
    #[error("rank {0} is no longer reachable")]
    Disconnected(usize),
    #[error("fanout must be at least 2, got {0}")]
    Fanout(usize),
    #[error("root {root} out of range for {n} ranks")]
    Root { root: usize, n: usize },
    #[error("node id of rank {rank} has length {len}, expected {expected}")]
    NodeIdLength { rank: usize, len: usize, expected: usize },
    #[error("need at least one process")]
    NoProcesses,
    #[error("unknown component {0:?}")]
    UnknownComponent(String),
    #[error("bad scenario: {0}")]
    Scenario(String),
}

/// Ranks split into contiguous groups of `group_size`; the last group may be
/// short. The lowest rank of each group leads it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankTopology {
    pub n_ranks: usize,
    pub group_size: usize,
}

impl RankTopology {
    pub fn new(n_ranks: usize, group_size: usize) -> Result<Self, InitError> {
        if n_ranks == 0 || group_size == 0 {
            return Err(InitError::InvalidTopology(format!(
                "n_ranks={n_ranks}, group_size={group_size}; both must be positive"
            )));
        }
        Ok(RankTopology { n_ranks, group_size })
    }

    pub fn n_groups(&self) -> usize {
        self.n_ranks.div_ceil(self.group_size)
    }

    pub fn group_of(&self, rank: usize) -> usize {
        rank / self.group_size
    }

    pub fn leader(&self, group: usize) -> usize {
        group * self.group_size
    }

    pub fn members(&self, group: usize) -> std::ops::Range<usize> {
        self.leader(group)..((group + 1) * self.group_size).min(self.n_ranks)
    }

    pub fn is_leader(&self, rank: usize) -> bool {
        rank.is_multiple_of(self.group_size)
    }
}

/// Bytes every rank addresses to every rank, `payloads[src][dst]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlltoallwPlan {
    payloads: Vec<Vec<Vec<u8>>>,
}

impl AlltoallwPlan {
    pub fn from_payloads(payloads: Vec<Vec<Vec<u8>>>) -> Result<Self, InitError> {
        let n = payloads.len();
        if let Some(row) = payloads.iter().position(|r| r.len() != n) {
            return Err(InitError::InvalidTopology(format!("row {row} of the plan is not {n} wide")));
        }
        Ok(AlltoallwPlan { payloads })
    }

    /// Every pair gets `len` bytes whose content encodes the pair.
    pub fn uniform(n: usize, len: usize) -> Self {
        let payloads = (0..n).map(|i| (0..n).map(|j| pattern(i, j, len)).collect()).collect();
        AlltoallwPlan { payloads }
    }

    /// Lengths drawn from `[min_len, max_len]`, with each pair forced empty
    /// with probability `zero_fraction`. Contents are random.
    pub fn random(n: usize, min_len: usize, max_len: usize, zero_fraction: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hi = max_len.max(min_len);
        let payloads = (0..n)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        if rng.gen_bool(zero_fraction.clamp(0.0, 1.0)) {
                            return Vec::new();
                        }
                        let len = rng.gen_range(min_len..=hi);
                        (0..len).map(|_| rng.gen()).collect()
                    })
                    .collect()
            })
            .collect();
        AlltoallwPlan { payloads }
    }

    pub fn n_ranks(&self) -> usize {
        self.payloads.len()
    }

    pub fn payload(&self, src: usize, dst: usize) -> &[u8] {
        &self.payloads[src][dst]
    }

    pub fn size(&self, src: usize, dst: usize) -> usize {
        self.payloads[src][dst].len()
    }

    pub fn send_volume(&self, rank: usize) -> usize {
        self.payloads[rank].iter().map(Vec::len).sum()
    }

    pub fn recv_volume(&self, rank: usize) -> usize {
        self.payloads.iter().map(|row| row[rank].len()).sum()
    }

    pub(crate) fn sends_off_rank(&self, rank: usize) -> bool {
        self.payloads[rank].iter().enumerate().any(|(j, p)| j != rank && !p.is_empty())
    }

    pub(crate) fn receives_off_rank(&self, rank: usize) -> bool {
        (0..self.n_ranks()).any(|i| i != rank && !self.payloads[i][rank].is_empty())
    }

    fn check(&self, topo: &RankTopology) -> Result<(), InitError> {
        if self.n_ranks() != topo.n_ranks {
            return Err(InitError::PlanMismatch { plan: self.n_ranks(), topo: topo.n_ranks });
        }
        Ok(())
    }
}

fn pattern(i: usize, j: usize, len: usize) -> Vec<u8> {
    (0..len).map(|k| (i.wrapping_mul(31) ^ j.wrapping_mul(17) ^ k) as u8).collect()
}

/// Counters for one benchmarked operation. Fields an operation does not
/// exercise stay zero.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommStats {
    pub messages: u64,
    pub bytes: u64,
    pub max_resident_bytes: Vec<u64>,
    pub comparator_ops: u64,
    pub pass_count: u64,
}

impl CommStats {
    fn from_counters(c: network::NetCounters) -> Self {
        CommStats { messages: c.messages, bytes: c.bytes, max_resident_bytes: c.max_resident, ..Default::default() }
    }

    pub fn peak_resident(&self) -> u64 {
        self.max_resident_bytes.iter().copied().max().unwrap_or(0)
    }
}

/// Surfaces the first rank failure, if any.
fn collect<R>(results: Vec<Result<R, InitError>>) -> Result<Vec<R>, InitError> {
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topology_groups_are_contiguous() {
        let t = RankTopology::new(10, 4).unwrap();
        assert_eq!(t.n_groups(), 3);
        assert_eq!(t.members(2), 8..10);
        assert_eq!(t.leader(1), 4);
        assert!(t.is_leader(8) && !t.is_leader(9));
        assert!(RankTopology::new(0, 4).is_err());
        assert!(RankTopology::new(4, 0).is_err());
    }

    #[test]
    fn plan_shape_is_checked() {
        assert!(AlltoallwPlan::from_payloads(vec![vec![vec![]; 2], vec![vec![]]]).is_err());
        let p = AlltoallwPlan::uniform(3, 4);
        assert_eq!(p.send_volume(1), 12);
        assert_eq!(p.recv_volume(2), 12);
    }
}
