//! Desk-scale offload platform for a simulated manycore core group.
//!
//! The crate is organised bottom-up:
//!
//! * [`archsim`] models one or more core groups: a management element, an
//!   array of compute elements with scratchpad memory, DMA/RMA channels and a
//!   bandwidth cost model.
//! * [`offload`] is the fork-join runtime on top of it: static loop
//!   scheduling, barrier / single / critical built on explicit cache flushes,
//!   and stack placement.
//! * [`kernels`] holds climate proxy kernels, each with a plain reference
//!   implementation and an offloaded one.
//! * [`initcomm`] simulates ranks exchanging messages and implements the
//!   hierarchical initialization collectives next to their flat oracles.
//! * [`verify`] and [`profile`] are the bitwise checker and the region-timer
//!   profiler.

pub mod archsim;
pub mod initcomm;
pub mod kernels;
pub mod offload;
pub mod profile;
pub mod verify;

pub use archsim::{spawn_core_group, CoreGroup, CoreGroupSpec, CostLedger, ScratchView, SharedArray};
pub use offload::{dispatch_serial, parallel_for, parallel_region, LoopNest, Worker};
