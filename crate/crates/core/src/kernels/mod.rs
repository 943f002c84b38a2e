//! Climate proxy kernels.
//!
//! Each kernel exists twice: a plain `*_reference` function written as
//! straight loops, and an offloaded form that submits its loop nest to the
//! [`offload`](crate::offload) runtime either on the MPE alone
//! ([`ExecMode::Mpe`]) or across the CPEs ([`ExecMode::MpeCpe`]). Bodies move
//! data with DMA between shared arrays and LDM and never reduce across
//! workers, so every kernel except the prefix sum is bit-exact against its
//! serial forms.

mod cice;
mod dycore;
pub mod flatio;
mod physics;
mod pop;
mod prefix;
mod presets;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archsim::CoreGroup;
use crate::offload::{self, LoopNest, OffloadError, RegionStats, Worker};

pub use cice::{cice_evp_reference, cice_evp_step, EvpParams};
pub use dycore::{dycore_step, dycore_step_reference, DycoreParams, ElementField, EAST, NORTH, SOUTH, WEST};
pub use physics::{equilibrium_temperature, physics_step, physics_step_reference, ChunkedColumns, PhysicsParams};
pub use pop::{
    pop_hmix_reference, pop_hmix_step, pop_vmix_reference, pop_vmix_step, BlockField, HmixParams, VmixParams,
};
pub use prefix::{prefix_sum_reference, vertical_prefix_sum};
pub use presets::{run_case, CaseOutput, KernelKind, SizePreset, VerifyClass};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error(transparent)]
    Offload(#[from] OffloadError),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("bad dimensions: {0}")]
    Dims(String),
    #[error("inconsistent adjacency: {0}")]
    Adjacency(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("singular tridiagonal system: zero pivot at row {0}")]
    SingularTridiagonal(usize),
}

impl From<crate::archsim::ArchError> for KernelError {
    fn from(e: crate::archsim::ArchError) -> Self {
        KernelError::Offload(e.into())
    }
}

/// Where a kernel runs: the MPE alone, or offloaded to the CPEs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExecMode {
    #[serde(rename = "mpe")]
    Mpe,
    #[serde(rename = "mpe+cpe")]
    MpeCpe,
}

impl ExecMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExecMode::Mpe => "mpe",
            ExecMode::MpeCpe => "mpe+cpe",
        }
    }
}

/// Kernel output plus the runtime statistics of the region that made it.
#[derive(Debug, Clone)]
pub struct Outcome<T> {
    pub output: T,
    pub stats: RegionStats,
}

fn run_nest<F>(group: &CoreGroup, mode: ExecMode, nest: &LoopNest, body: F) -> Result<RegionStats, OffloadError>
where
    F: Fn(&[usize], &mut Worker<'_>) -> Result<(), OffloadError> + Sync,
{
    match mode {
        ExecMode::Mpe => offload::dispatch_serial(group, nest, body),
        ExecMode::MpeCpe => offload::parallel_for(group, nest, body),
    }
}

fn run_region<F>(group: &CoreGroup, mode: ExecMode, f: F) -> Result<RegionStats, OffloadError>
where
    F: Fn(&mut Worker<'_>) -> Result<(), OffloadError> + Sync,
{
    match mode {
        ExecMode::Mpe => offload::serial_region(group, f),
        ExecMode::MpeCpe => offload::parallel_region(group, f),
    }
}

fn check_finite(values: &[f64], what: &'static str) -> Result<(), KernelError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(KernelError::NonFinite(what))
    }
}
