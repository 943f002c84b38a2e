//! Fork-join offload runtime.
//!
//! A parallel region runs one worker per CPE of a [`CoreGroup`]. Workers
//! share nothing but the region's synchronization state; every construct
//! that establishes ordering (barrier, single, critical) flushes and
//! invalidates the worker's cached window explicitly, because the simulated
//! CPE caches are not coherent.
//!
//! Loop nests are scheduled statically: the product of the parallel axes is
//! flattened row-major and split into contiguous blocks in ascending order,
//! the first `items % workers` workers receiving one extra item.

use std::collections::HashMap;
use std::ops::Range;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archsim::{ArchError, CoreGroup, CpeId, RmaToken, ScratchView};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OffloadError {
    #[error("loop nest has no axis named {0:?}")]
    UnknownAxis(String),
    #[error("parallel region needs at least one parallel axis")]
    NoParallelAxes,
    #[error("body panicked on worker {worker} at index {index:?}: {message}")]
    BodyPanicked { worker: usize, index: Vec<usize>, message: String },
    #[error("worker {worker} timed out in barrier epoch {epoch}; a worker skipped the barrier")]
    BarrierTimeout { worker: usize, epoch: u64 },
    #[error("region aborted by a failure on another worker")]
    RegionAborted,
    #[error("critical section {0:?} re-entered by its holder")]
    SelfDeadlock(String),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error("{0}")]
    Kernel(String),
}

/// A named iteration space and the axes distributed over workers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopNest {
    axes: Vec<(String, usize)>,
    parallel: Vec<usize>,
}

impl LoopNest {
    pub fn new<S: Into<String>>(axes: impl IntoIterator<Item = (S, usize)>) -> Self {
        LoopNest { axes: axes.into_iter().map(|(n, e)| (n.into(), e)).collect(), parallel: Vec::new() }
    }

    /// Selects the axes whose product is distributed. Axes keep their
    /// declaration order regardless of the order given here.
    pub fn parallel_on(mut self, names: &[&str]) -> Result<Self, OffloadError> {
        let mut picked = Vec::with_capacity(names.len());
        for name in names {
            let pos = self
                .axes
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| OffloadError::UnknownAxis(name.to_string()))?;
            if !picked.contains(&pos) {
                picked.push(pos);
            }
        }
        picked.sort_unstable();
        self.parallel = picked;
        Ok(self)
    }

    pub fn axes(&self) -> &[(String, usize)] {
        &self.axes
    }

    pub fn extent(&self, name: &str) -> Option<usize> {
        self.axes.iter().find(|(n, _)| n == name).map(|(_, e)| *e)
    }

    pub fn parallel_axes(&self) -> Vec<&str> {
        self.parallel.iter().map(|&i| self.axes[i].0.as_str()).collect()
    }

    pub fn parallel_extents(&self) -> Vec<usize> {
        self.parallel.iter().map(|&i| self.axes[i].1).collect()
    }

    /// Number of work items: the product of the parallel extents.
    pub fn work_items(&self) -> usize {
        if self.parallel.is_empty() {
            return 0;
        }
        self.parallel.iter().map(|&i| self.axes[i].1).product()
    }

    /// Row-major decode of a flat work-item number into parallel indices.
    pub fn decode(&self, mut flat: usize, out: &mut Vec<usize>) {
        out.clear();
        out.resize(self.parallel.len(), 0);
        for (slot, &axis) in out.iter_mut().zip(&self.parallel).rev() {
            let extent = self.axes[axis].1;
            *slot = flat % extent;
            flat /= extent;
        }
    }

    pub fn chunk_for(&self, worker: usize, n_workers: usize) -> Range<usize> {
        static_chunk(self.work_items(), worker, n_workers)
    }
}

/// Contiguous block of `total` items owned by `worker` out of `n_workers`.
pub fn static_chunk(total: usize, worker: usize, n_workers: usize) -> Range<usize> {
    let base = total / n_workers;
    let extra = total % n_workers;
    let start = worker * base + worker.min(extra);
    let len = base + usize::from(worker < extra);
    start..start + len
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackPolicy {
    pub ldm_stack_threshold: usize,
}

impl Default for StackPolicy {
    fn default() -> Self {
        StackPolicy { ldm_stack_threshold: 65_536 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum StackPlacement {
    Ldm,
    Private,
}

/// The stack goes to LDM when it is under the threshold and fits in the
/// remaining LDM; otherwise it lives in the CPE's private memory.
pub fn place_stack(policy: &StackPolicy, requested: usize, view: &mut ScratchView) -> StackPlacement {
    if requested <= policy.ldm_stack_threshold && view.reserve_stack(requested).is_ok() {
        StackPlacement::Ldm
    } else {
        StackPlacement::Private
    }
}

#[derive(Debug, Clone)]
pub struct RegionOptions {
    pub stack_request: usize,
    pub stack_policy: StackPolicy,
    /// How long a worker may wait in a barrier or for an RMA token before
    /// the region is declared deadlocked.
    pub timeout: Duration,
}

impl Default for RegionOptions {
    fn default() -> Self {
        RegionOptions { stack_request: 8192, stack_policy: StackPolicy::default(), timeout: Duration::from_secs(60) }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkerStats {
    pub items: usize,
    pub busy_seconds: f64,
    pub wait_seconds: f64,
    pub stack: StackPlacement,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionStats {
    pub wall_seconds: f64,
    pub workers: Vec<WorkerStats>,
}

impl RegionStats {
    pub fn total_items(&self) -> usize {
        self.workers.iter().map(|w| w.items).sum()
    }

    pub fn active_workers(&self) -> usize {
        self.workers.iter().filter(|w| w.items > 0).count()
    }

    pub fn items_per_worker(&self) -> Vec<usize> {
        self.workers.iter().map(|w| w.items).collect()
    }

    /// Fraction of worker time spent waiting in synchronization.
    pub fn idle_fraction(&self) -> f64 {
        let busy: f64 = self.workers.iter().map(|w| w.busy_seconds).sum();
        let wait: f64 = self.workers.iter().map(|w| w.wait_seconds).sum();
        if busy + wait > 0.0 {
            wait / (busy + wait)
        } else {
            0.0
        }
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

/// Counting semaphore bounding how many workers occupy a host thread.
struct HostGate {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl HostGate {
    fn acquire(&self) {
        let mut p = lock(&self.permits);
        while *p == 0 {
            p = self.cv.wait(p).unwrap_or_else(|e| e.into_inner());
        }
        *p -= 1;
    }

    fn release(&self) {
        *lock(&self.permits) += 1;
        self.cv.notify_one();
    }
}

struct BarrierState {
    arrived: usize,
    epoch: u64,
}

struct RegionShared {
    n_workers: usize,
    barrier: Mutex<BarrierState>,
    barrier_cv: Condvar,
    single_claims: AtomicUsize,
    criticals: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    poisoned: AtomicBool,
    timeout: Duration,
    gate: Option<HostGate>,
}

impl RegionShared {
    fn new(n_workers: usize, timeout: Duration, host_threads: Option<usize>) -> Self {
        RegionShared {
            n_workers,
            barrier: Mutex::new(BarrierState { arrived: 0, epoch: 0 }),
            barrier_cv: Condvar::new(),
            single_claims: AtomicUsize::new(0),
            criticals: Mutex::new(HashMap::new()),
            poisoned: AtomicBool::new(false),
            timeout,
            gate: host_threads
                .filter(|&n| n < n_workers)
                .map(|n| HostGate { permits: Mutex::new(n), cv: Condvar::new() }),
        }
    }

    fn poison(&self) {
        self.poisoned.store(true, Ordering::SeqCst);
        let _guard = lock(&self.barrier);
        self.barrier_cv.notify_all();
    }

    fn critical_lock(&self, name: &str) -> Arc<Mutex<()>> {
        lock(&self.criticals).entry(name.to_string()).or_default().clone()
    }

    /// Generation barrier. Returns the epoch reached after the barrier.
    fn arrive(&self, worker: usize) -> Result<u64, OffloadError> {
        let deadline = Instant::now() + self.timeout;
        let mut state = lock(&self.barrier);
        let epoch = state.epoch;
        state.arrived += 1;
        if state.arrived == self.n_workers {
            state.arrived = 0;
            state.epoch += 1;
            self.barrier_cv.notify_all();
            return Ok(state.epoch);
        }
        loop {
            if self.poisoned.load(Ordering::SeqCst) {
                return Err(OffloadError::RegionAborted);
            }
            let now = Instant::now();
            if now >= deadline {
                drop(state);
                self.poison();
                return Err(OffloadError::BarrierTimeout { worker, epoch });
            }
            state = self.barrier_cv.wait_timeout(state, deadline - now).unwrap_or_else(|e| e.into_inner()).0;
            if state.epoch != epoch {
                return Ok(state.epoch);
            }
        }
    }
}

/// A worker's handle inside a parallel region.
pub struct Worker<'r> {
    id: usize,
    n_workers: usize,
    view: &'r mut ScratchView,
    region: &'r RegionShared,
    epoch: u64,
    singles: usize,
    held: Vec<String>,
    current: Option<Vec<usize>>,
    items: usize,
    wait: Duration,
}

impl<'r> Worker<'r> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn n_workers(&self) -> usize {
        self.n_workers
    }

    pub fn is_mpe(&self) -> bool {
        self.view.owner().is_mpe()
    }

    /// Barrier epochs this worker has completed in the current region.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn view(&mut self) -> &mut ScratchView {
        self.view
    }

    /// Runs `f` with this worker's host-thread permit released.
    fn blocking<T>(&mut self, f: impl FnOnce(&RegionShared) -> T) -> T {
        let start = Instant::now();
        if let Some(gate) = &self.region.gate {
            gate.release();
        }
        let out = f(self.region);
        if let Some(gate) = &self.region.gate {
            gate.acquire();
        }
        self.wait += start.elapsed();
        out
    }

    /// Flushes this worker's dirty cached data, waits for every worker,
    /// then invalidates the cached window.
    pub fn barrier(&mut self) -> Result<(), OffloadError> {
        self.view.flush();
        if self.n_workers == 1 {
            self.epoch += 1;
            self.view.invalidate();
            return Ok(());
        }
        let id = self.id;
        self.epoch = self.blocking(|r| r.arrive(id))?;
        self.view.invalidate();
        Ok(())
    }

    /// Exactly one worker runs `f`; everyone then meets at a flushing
    /// barrier. The winner gets `Some(result)`.
    pub fn single<R>(
        &mut self,
        f: impl FnOnce(&mut Worker<'r>) -> Result<R, OffloadError>,
    ) -> Result<Option<R>, OffloadError> {
        let k = self.singles;
        self.singles += 1;
        let won = self.region.single_claims.compare_exchange(k, k + 1, Ordering::AcqRel, Ordering::Acquire).is_ok();
        let out = if won { Some(f(self)?) } else { None };
        self.barrier()?;
        Ok(out)
    }

    /// Mutual exclusion per `name`. The cached window is invalidated on entry
    /// and flushed on exit.
    pub fn critical<R>(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Worker<'r>) -> Result<R, OffloadError>,
    ) -> Result<R, OffloadError> {
        if self.held.iter().any(|h| h == name) {
            return Err(OffloadError::SelfDeadlock(name.to_string()));
        }
        let mutex = self.region.critical_lock(name);
        let guard = self.blocking(|_| lock(&mutex));
        self.held.push(name.to_string());
        self.view.invalidate();
        let out = f(self);
        self.view.flush();
        self.held.pop();
        drop(guard);
        out
    }

    /// Runs `body` over this worker's static chunk of the nest.
    pub fn for_static<F>(&mut self, nest: &LoopNest, mut body: F) -> Result<(), OffloadError>
    where
        F: FnMut(&[usize], &mut Worker<'r>) -> Result<(), OffloadError>,
    {
        let range = nest.chunk_for(self.id, self.n_workers);
        let mut index = Vec::new();
        for flat in range {
            nest.decode(flat, &mut index);
            self.current = Some(index.clone());
            body(&index, self)?;
            self.items += 1;
        }
        self.current = None;
        Ok(())
    }

    pub fn rma_put(
        &mut self,
        peer: usize,
        ldm_offset: usize,
        peer_offset: usize,
        nbytes: usize,
    ) -> Result<RmaToken, OffloadError> {
        let group = self.view.owner().group;
        Ok(self.view.rma_put(CpeId::new(group, peer), ldm_offset, peer_offset, nbytes)?)
    }

    /// Hands the token to its destination worker.
    pub fn rma_signal(&mut self, token: RmaToken) {
        self.view.rma_signal(token);
    }

    /// Waits for worker `src` to signal, then applies its puts.
    pub fn rma_wait(&mut self, src: usize) -> Result<RmaToken, OffloadError> {
        let group = self.view.owner().group;
        let timeout = self.region.timeout;
        let start = Instant::now();
        if let Some(gate) = &self.region.gate {
            gate.release();
        }
        let out = self.view.rma_wait(CpeId::new(group, src), timeout);
        if let Some(gate) = &self.region.gate {
            gate.acquire();
        }
        self.wait += start.elapsed();
        Ok(out?)
    }
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "non-string panic payload".to_string()
    }
}

/// Runs one worker to completion and tears down its per-region LDM state.
fn run_worker<F>(
    id: usize,
    n_workers: usize,
    view: &mut ScratchView,
    region: &RegionShared,
    opts: &RegionOptions,
    f: &F,
) -> (WorkerStats, Result<(), OffloadError>)
where
    F: Fn(&mut Worker<'_>) -> Result<(), OffloadError>,
{
    let stack = place_stack(&opts.stack_policy, opts.stack_request, view);
    let start = Instant::now();
    let mut worker = Worker {
        id,
        n_workers,
        view,
        region,
        epoch: 0,
        singles: 0,
        held: Vec::new(),
        current: None,
        items: 0,
        wait: Duration::ZERO,
    };
    let outcome = catch_unwind(AssertUnwindSafe(|| f(&mut worker)));
    let result = match outcome {
        Ok(r) => r,
        Err(payload) => Err(OffloadError::BodyPanicked {
            worker: id,
            index: worker.current.clone().unwrap_or_default(),
            message: panic_message(payload.as_ref()),
        }),
    };
    if result.is_err() {
        region.poison();
    }
    worker.view.invalidate();
    let elapsed = start.elapsed();
    let stats = WorkerStats {
        items: worker.items,
        busy_seconds: elapsed.saturating_sub(worker.wait).as_secs_f64(),
        wait_seconds: worker.wait.as_secs_f64(),
        stack,
    };
    view.release_stack();
    view.ldm_reset();
    (stats, result)
}

/// Picks the root cause among worker failures: a failure other than a
/// knock-on abort, lowest worker id first.
fn first_error(results: Vec<Result<(), OffloadError>>) -> Result<(), OffloadError> {
    let mut aborted = None;
    for r in results {
        match r {
            Ok(()) => {}
            Err(OffloadError::RegionAborted) => aborted = Some(OffloadError::RegionAborted),
            Err(e) => return Err(e),
        }
    }
    aborted.map_or(Ok(()), Err)
}

/// Runs `f` on every CPE of the group concurrently (SPMD) and joins.
pub fn parallel_region<F>(group: &CoreGroup, f: F) -> Result<RegionStats, OffloadError>
where
    F: Fn(&mut Worker<'_>) -> Result<(), OffloadError> + Sync,
{
    parallel_region_with(group, &RegionOptions::default(), f)
}

pub fn parallel_region_with<F>(group: &CoreGroup, opts: &RegionOptions, f: F) -> Result<RegionStats, OffloadError>
where
    F: Fn(&mut Worker<'_>) -> Result<(), OffloadError> + Sync,
{
    let n = group.n_cpes();
    let region = RegionShared::new(n, opts.timeout, group.host_threads());
    let start = Instant::now();
    let outcomes: Vec<(WorkerStats, Result<(), OffloadError>)> = thread::scope(|scope| {
        let handles: Vec<_> = (0..n)
            .map(|id| {
                let region = &region;
                let f = &f;
                thread::Builder::new()
                    .name(format!("cpe-{id}"))
                    .spawn_scoped(scope, move || {
                        if let Some(gate) = &region.gate {
                            gate.acquire();
                        }
                        let mut view = group.cpe_view(id);
                        let out = run_worker(id, n, &mut view, region, opts, f);
                        if let Some(gate) = &region.gate {
                            gate.release();
                        }
                        out
                    })
                    .expect("spawn worker thread")
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker thread")).collect()
    });
    let wall_seconds = start.elapsed().as_secs_f64();
    let (workers, results): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
    first_error(results)?;
    Ok(RegionStats { wall_seconds, workers })
}

/// Runs `f` once on the MPE, as a single-worker region.
pub fn serial_region<F>(group: &CoreGroup, f: F) -> Result<RegionStats, OffloadError>
where
    F: Fn(&mut Worker<'_>) -> Result<(), OffloadError>,
{
    let opts = RegionOptions::default();
    let region = RegionShared::new(1, opts.timeout, None);
    let start = Instant::now();
    let mut view = group.mpe_view();
    let (stats, result) = run_worker(0, 1, &mut view, &region, &opts, &f);
    result?;
    Ok(RegionStats { wall_seconds: start.elapsed().as_secs_f64(), workers: vec![stats] })
}

/// Executes `body` once per work item of `nest` across the CPEs, with an
/// implicit flushing barrier at the end of the region.
pub fn parallel_for<F>(group: &CoreGroup, nest: &LoopNest, body: F) -> Result<RegionStats, OffloadError>
where
    F: Fn(&[usize], &mut Worker<'_>) -> Result<(), OffloadError> + Sync,
{
    if nest.parallel.is_empty() {
        return Err(OffloadError::NoParallelAxes);
    }
    parallel_region(group, |w| w.for_static(nest, &body))
}

/// The MPE baseline: the same body over the whole nest, in ascending order,
/// on the management element.
pub fn dispatch_serial<F>(group: &CoreGroup, nest: &LoopNest, body: F) -> Result<RegionStats, OffloadError>
where
    F: Fn(&[usize], &mut Worker<'_>) -> Result<(), OffloadError>,
{
    if nest.parallel.is_empty() {
        return Err(OffloadError::NoParallelAxes);
    }
    serial_region(group, |w| w.for_static(nest, &body))
}
