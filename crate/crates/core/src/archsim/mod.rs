//! Simulated core groups.
//!
//! A core group is one management element (MPE) plus `n_cpes` compute
//! elements (CPEs). Every element owns a [`ScratchView`]: its local data
//! memory (LDM), an optional non-coherent cached window onto shared arrays,
//! and the endpoints of the DMA and RMA channels. Transfers are real byte
//! copies; their cost is accumulated in a [`CostLedger`] and converted to a
//! modeled time with the group's bandwidth constants.

mod ledger;
mod rma;
mod scratch;
mod shared;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ledger::{modeled_seconds, CostLedger, CostSnapshot};
pub use rma::RmaToken;
pub use scratch::{LdmBlock, ScratchView, CACHE_SEGMENT_BYTES};
pub use shared::SharedArray;

pub(crate) use rma::RmaHub;

/// Errors raised by the simulated hardware.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArchError {
    #[error("invalid core group spec: {0}")]
    InvalidSpec(String),
    #[error("LDM capacity exceeded: requested {requested} B, {available} B available")]
    CapacityExceeded { requested: usize, available: usize },
    #[error("LDM range [{offset}, {offset}+{len}) is not inside one allocation")]
    NotAllocated { offset: usize, len: usize },
    #[error("shared range [{offset}, {offset}+{len}) out of bounds for array of {size} B")]
    OutOfRange { offset: usize, len: usize, size: usize },
    #[error("f64 access at LDM offset {0} is not 8-byte aligned")]
    Misaligned(usize),
    #[error("RMA from group {from} to group {to}: RMA never crosses core groups")]
    CrossGroupRma { from: usize, to: usize },
    #[error("no compute element {index} in group {group}")]
    UnknownPeer { group: usize, index: usize },
    #[error("the management element has no RMA channel")]
    MpeRma,
    #[error("RMA token {token:?} cannot be completed by {by:?}")]
    RmaTokenMismatch { token: RmaToken, by: CpeId },
    #[error("RMA token {0:?} was already completed")]
    StaleRmaToken(RmaToken),
    #[error("timed out waiting for an RMA token from {0:?}")]
    RmaTimeout(CpeId),
    #[error("config: {0}")]
    Config(String),
}

/// Location of a processing element: which core group, and which element in
/// it. The MPE is addressed by [`CpeId::MPE_INDEX`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CpeId {
    pub group: usize,
    pub index: usize,
}

impl CpeId {
    pub const MPE_INDEX: usize = usize::MAX;

    pub fn new(group: usize, index: usize) -> Self {
        CpeId { group, index }
    }

    pub fn mpe(group: usize) -> Self {
        CpeId { group, index: Self::MPE_INDEX }
    }

    pub fn is_mpe(&self) -> bool {
        self.index == Self::MPE_INDEX
    }
}

/// Description of one simulated core group.
///
/// Defaults follow the SW26010P core group: 64 CPEs, 256 KB LDM each,
/// 307 GB/s DMA, 460 GB/s RMA and 51.2 GB/s main memory bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoreGroupSpec {
    pub n_cpes: usize,
    pub ldm_bytes: usize,
    pub dma_bw: f64,
    pub rma_bw: f64,
    pub mem_bw: f64,
    /// Portion of the LDM configured as a cache for shared arrays.
    pub ldm_cache_fraction: f64,
}

impl Default for CoreGroupSpec {
    fn default() -> Self {
        CoreGroupSpec {
            n_cpes: 64,
            ldm_bytes: 262_144,
            dma_bw: 307e9,
            rma_bw: 460e9,
            mem_bw: 51.2e9,
            ldm_cache_fraction: 0.0,
        }
    }
}

impl CoreGroupSpec {
    pub fn with_cpes(n_cpes: usize) -> Self {
        CoreGroupSpec { n_cpes, ..Default::default() }
    }

    pub fn from_json(text: &str) -> Result<Self, ArchError> {
        let spec: CoreGroupSpec = serde_json::from_str(text).map_err(|e| ArchError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        if self.n_cpes == 0 {
            return Err(ArchError::InvalidSpec("n_cpes must be at least 1".into()));
        }
        if self.ldm_bytes == 0 {
            return Err(ArchError::InvalidSpec("ldm_bytes must be positive".into()));
        }
        for (name, bw) in [("dma_bw", self.dma_bw), ("rma_bw", self.rma_bw), ("mem_bw", self.mem_bw)] {
            if !(bw.is_finite() && bw > 0.0) {
                return Err(ArchError::InvalidSpec(format!("{name} must be positive and finite")));
            }
        }
        if !(0.0..=1.0).contains(&self.ldm_cache_fraction) {
            return Err(ArchError::InvalidSpec("ldm_cache_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Bytes of LDM given to the cache, rounded down to whole segments.
    pub fn cache_bytes(&self) -> usize {
        let raw = (self.ldm_cache_fraction * self.ldm_bytes as f64).floor() as usize;
        raw - raw % CACHE_SEGMENT_BYTES
    }
}

/// State shared by every element of one core group.
pub(crate) struct GroupShared {
    pub(crate) id: usize,
    pub(crate) spec: CoreGroupSpec,
    pub(crate) ledger: CostLedger,
    pub(crate) rma: RmaHub,
}

static NEXT_GROUP_ID: AtomicUsize = AtomicUsize::new(0);

/// A spawned core group: one scratch view per CPE plus one for the MPE.
///
/// Views sit behind mutexes so the runtime can hand each one to exactly one
/// worker thread per region.
pub struct CoreGroup {
    shared: Arc<GroupShared>,
    cpes: Vec<Mutex<ScratchView>>,
    mpe: Mutex<ScratchView>,
    host_threads: Option<usize>,
}

/// Spawns a core group with a fresh, process-unique group id.
pub fn spawn_core_group(spec: CoreGroupSpec) -> Result<CoreGroup, ArchError> {
    spec.validate()?;
    let id = NEXT_GROUP_ID.fetch_add(1, Ordering::Relaxed);
    let shared = Arc::new(GroupShared { id, rma: RmaHub::new(spec.n_cpes), ledger: CostLedger::default(), spec });
    let mut cpes = Vec::new();
    cpes.try_reserve_exact(shared.spec.n_cpes)
        .map_err(|e| ArchError::InvalidSpec(format!("cannot allocate workers: {e}")))?;
    for index in 0..shared.spec.n_cpes {
        cpes.push(Mutex::new(ScratchView::new(CpeId::new(id, index), shared.clone())?));
    }
    let mpe = Mutex::new(ScratchView::new(CpeId::mpe(id), shared.clone())?);
    Ok(CoreGroup { shared, cpes, mpe, host_threads: None })
}

impl CoreGroup {
    pub fn id(&self) -> usize {
        self.shared.id
    }

    pub fn spec(&self) -> &CoreGroupSpec {
        &self.shared.spec
    }

    pub fn n_cpes(&self) -> usize {
        self.cpes.len()
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.shared.ledger
    }

    /// Caps how many simulated workers run on host threads at the same time.
    /// Workers blocked in a synchronization construct do not count.
    pub fn set_host_threads(&mut self, limit: Option<usize>) {
        self.host_threads = limit.map(|n| n.max(1));
    }

    pub fn host_threads(&self) -> Option<usize> {
        self.host_threads
    }

    pub fn cpe_view(&self, index: usize) -> MutexGuard<'_, ScratchView> {
        lock(&self.cpes[index])
    }

    pub fn mpe_view(&self) -> MutexGuard<'_, ScratchView> {
        lock(&self.mpe)
    }

    /// Number of lost-update conflicts detected when flushing cached writes.
    pub fn coherence_conflicts(&self) -> u64 {
        self.shared.ledger.conflicts()
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_group_has_64_workers_with_256k_ldm() {
        let group = spawn_core_group(CoreGroupSpec::default()).unwrap();
        assert_eq!(group.n_cpes(), 64);
        for i in 0..64 {
            let view = group.cpe_view(i);
            assert_eq!(view.capacity(), 262_144);
            assert_eq!(view.used_bytes(), 0);
        }
    }

    #[test]
    fn single_worker_group() {
        let group = spawn_core_group(CoreGroupSpec::with_cpes(1)).unwrap();
        assert_eq!(group.n_cpes(), 1);
    }

    #[test]
    fn zero_ldm_is_rejected() {
        let spec = CoreGroupSpec { ldm_bytes: 0, ..Default::default() };
        assert!(matches!(spawn_core_group(spec), Err(ArchError::InvalidSpec(_))));
    }

    #[test]
    fn bad_specs_are_rejected() {
        assert!(CoreGroupSpec::with_cpes(0).validate().is_err());
        assert!(CoreGroupSpec { dma_bw: 0.0, ..Default::default() }.validate().is_err());
        assert!(CoreGroupSpec { rma_bw: f64::NAN, ..Default::default() }.validate().is_err());
        assert!(CoreGroupSpec { ldm_cache_fraction: 1.5, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn spec_from_json_fills_defaults() {
        let spec = CoreGroupSpec::from_json(r#"{"n_cpes": 8, "ldm_cache_fraction": 0.25}"#).unwrap();
        assert_eq!(spec.n_cpes, 8);
        assert_eq!(spec.ldm_bytes, 262_144);
        assert_eq!(spec.cache_bytes(), 65_536);
        assert!(CoreGroupSpec::from_json(r#"{"n_cpes": 0}"#).is_err());
        assert!(CoreGroupSpec::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn group_ids_are_distinct() {
        let a = spawn_core_group(CoreGroupSpec::with_cpes(1)).unwrap();
        let b = spawn_core_group(CoreGroupSpec::with_cpes(1)).unwrap();
        assert_ne!(a.id(), b.id());
    }
}
