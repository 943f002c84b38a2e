//! In-memory point-to-point network between simulated ranks.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::Duration;

use super::InitError;

const RECV_TIMEOUT: Duration = Duration::from_secs(120);

/// One rank's view of the network. Messages between a pair of ranks arrive
/// in the order they were sent.
pub struct RankEndpoint<'n> {
    rank: usize,
    senders: &'n [Sender<(usize, Vec<u8>)>],
    rx: Receiver<(usize, Vec<u8>)>,
    stash: HashMap<usize, VecDeque<Vec<u8>>>,
    messages: &'n AtomicU64,
    bytes: &'n AtomicU64,
    resident: u64,
    max_resident: u64,
}

impl RankEndpoint<'_> {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn n_ranks(&self) -> usize {
        self.senders.len()
    }

    pub fn send(&mut self, to: usize, data: Vec<u8>) -> Result<(), InitError> {
        self.messages.fetch_add(1, Ordering::Relaxed);
        self.bytes.fetch_add(data.len() as u64, Ordering::Relaxed);
        self.senders[to].send((self.rank, data)).map_err(|_| InitError::Disconnected(to))
    }

    /// Blocks for the next message from `from`, buffering messages from
    /// other ranks that arrive meanwhile.
    pub fn recv(&mut self, from: usize) -> Result<Vec<u8>, InitError> {
        if let Some(msg) = self.stash.get_mut(&from).and_then(VecDeque::pop_front) {
            return Ok(msg);
        }
        loop {
            match self.rx.recv_timeout(RECV_TIMEOUT) {
                Ok((src, data)) if src == from => return Ok(data),
                Ok((src, data)) => self.stash.entry(src).or_default().push_back(data),
                Err(RecvTimeoutError::Timeout) => return Err(InitError::Timeout { rank: self.rank, from }),
                Err(RecvTimeoutError::Disconnected) => return Err(InitError::Disconnected(from)),
            }
        }
    }

    /// Payload bytes this rank now holds in addition to what it held before.
    pub fn hold(&mut self, nbytes: usize) {
        self.resident += nbytes as u64;
        self.max_resident = self.max_resident.max(self.resident);
    }

    pub fn release(&mut self, nbytes: usize) {
        self.resident = self.resident.saturating_sub(nbytes as u64);
    }
}

/// Totals gathered over one simulated run.
#[derive(Debug, Clone, Default)]
pub struct NetCounters {
    pub messages: u64,
    pub bytes: u64,
    pub max_resident: Vec<u64>,
}

/// Runs `f` as `n` concurrent ranks and collects their results in rank order.
pub fn run_ranks<R, F>(n: usize, f: F) -> (Vec<Result<R, InitError>>, NetCounters)
where
    R: Send,
    F: Fn(&mut RankEndpoint<'_>) -> Result<R, InitError> + Sync,
{
    let (senders, receivers): (Vec<_>, Vec<_>) = (0..n).map(|_| channel()).unzip();
    let messages = AtomicU64::new(0);
    let bytes = AtomicU64::new(0);
    let outcomes: Vec<(Result<R, InitError>, u64)> = thread::scope(|scope| {
        let handles: Vec<_> = receivers
            .into_iter()
            .enumerate()
            .map(|(rank, rx)| {
                let (senders, messages, bytes, f) = (&senders, &messages, &bytes, &f);
                thread::Builder::new()
                    .name(format!("rank-{rank}"))
                    .stack_size(256 * 1024)
                    .spawn_scoped(scope, move || {
                        let mut ep = RankEndpoint {
                            rank,
                            senders,
                            rx,
                            stash: HashMap::new(),
                            messages,
                            bytes,
                            resident: 0,
                            max_resident: 0,
                        };
                        let out = f(&mut ep);
                        (out, ep.max_resident)
                    })
                    .expect("spawn rank thread")
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("rank thread")).collect()
    });
    let (results, max_resident): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
    let counters = NetCounters { messages: messages.into_inner(), bytes: bytes.into_inner(), max_resident };
    (results, counters)
}
