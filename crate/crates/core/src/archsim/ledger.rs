use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::CoreGroupSpec;

/// Byte counters for every transfer a core group performs.
#[derive(Debug, Default)]
pub struct CostLedger {
    dma_bytes: AtomicU64,
    rma_bytes: AtomicU64,
    gmem_bytes: AtomicU64,
    conflicts: AtomicU64,
}

/// Point-in-time copy of a [`CostLedger`], with the modeled transfer time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSnapshot {
    pub dma_bytes: u64,
    pub rma_bytes: u64,
    pub gmem_bytes: u64,
    pub modeled_seconds: f64,
}

/// `dma/dma_bw + rma/rma_bw + gmem/mem_bw`, summed left to right.
pub fn modeled_seconds(spec: &CoreGroupSpec, dma_bytes: u64, rma_bytes: u64, gmem_bytes: u64) -> f64 {
    dma_bytes as f64 / spec.dma_bw + rma_bytes as f64 / spec.rma_bw + gmem_bytes as f64 / spec.mem_bw
}

impl CostLedger {
    pub fn record_dma(&self, nbytes: usize) {
        self.dma_bytes.fetch_add(nbytes as u64, Ordering::Relaxed);
    }

    pub fn record_rma(&self, nbytes: usize) {
        self.rma_bytes.fetch_add(nbytes as u64, Ordering::Relaxed);
    }

    pub fn record_gmem(&self, nbytes: usize) {
        self.gmem_bytes.fetch_add(nbytes as u64, Ordering::Relaxed);
    }

    pub(crate) fn record_conflict(&self) {
        self.conflicts.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn conflicts(&self) -> u64 {
        self.conflicts.load(Ordering::Relaxed)
    }

    pub fn dma_bytes(&self) -> u64 {
        self.dma_bytes.load(Ordering::Relaxed)
    }

    pub fn rma_bytes(&self) -> u64 {
        self.rma_bytes.load(Ordering::Relaxed)
    }

    pub fn gmem_bytes(&self) -> u64 {
        self.gmem_bytes.load(Ordering::Relaxed)
    }

    pub fn snapshot(&self, spec: &CoreGroupSpec) -> CostSnapshot {
        let (dma, rma, gmem) = (self.dma_bytes(), self.rma_bytes(), self.gmem_bytes());
        CostSnapshot {
            dma_bytes: dma,
            rma_bytes: rma,
            gmem_bytes: gmem,
            modeled_seconds: modeled_seconds(spec, dma, rma, gmem),
        }
    }

    pub fn to_json(&self, spec: &CoreGroupSpec) -> String {
        serde_json::to_string_pretty(&self.snapshot(spec)).expect("snapshot serializes")
    }
}
