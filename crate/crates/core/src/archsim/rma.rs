use std::collections::{HashMap, VecDeque};
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::CpeId;

/// Proof that an RMA put was issued. The receiving element must complete
/// the token before the written bytes appear in its LDM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RmaToken {
    pub src: CpeId,
    pub dst: CpeId,
    pub seq: u64,
}

#[derive(Debug)]
pub(crate) struct PendingPut {
    pub(crate) src: usize,
    pub(crate) seq: u64,
    pub(crate) peer_offset: usize,
    pub(crate) data: Vec<u8>,
}

#[derive(Default)]
struct Inbox {
    pending: Vec<PendingPut>,
    next_seq: HashMap<usize, u64>,
    completed: HashMap<usize, u64>,
    tokens: VecDeque<RmaToken>,
}

/// Per-destination queues of puts that are in flight and of sync tokens.
pub(crate) struct RmaHub {
    inboxes: Vec<(Mutex<Inbox>, Condvar)>,
}

impl RmaHub {
    pub(crate) fn new(n_cpes: usize) -> Self {
        RmaHub { inboxes: (0..n_cpes).map(|_| Default::default()).collect() }
    }

    fn inbox(&self, dst: usize) -> MutexGuard<'_, Inbox> {
        self.inboxes[dst].0.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub(crate) fn post(&self, src: usize, dst: usize, peer_offset: usize, data: Vec<u8>) -> u64 {
        let mut inbox = self.inbox(dst);
        let seq = inbox.next_seq.entry(src).or_insert(0);
        *seq += 1;
        let seq = *seq;
        inbox.pending.push(PendingPut { src, seq, peer_offset, data });
        seq
    }

    /// Removes every put from `src` up to and including `seq`, in issue
    /// order. `None` when `seq` was already completed.
    pub(crate) fn take_upto(&self, dst: usize, src: usize, seq: u64) -> Option<Vec<PendingPut>> {
        let mut inbox = self.inbox(dst);
        let done = inbox.completed.get(&src).copied().unwrap_or(0);
        if seq <= done {
            return None;
        }
        inbox.completed.insert(src, seq);
        let (mut taken, kept): (Vec<_>, Vec<_>) = inbox.pending.drain(..).partition(|p| p.src == src && p.seq <= seq);
        inbox.pending = kept;
        taken.sort_by_key(|p| p.seq);
        Some(taken)
    }

    pub(crate) fn signal(&self, token: RmaToken) {
        let (_, cv) = &self.inboxes[token.dst.index];
        self.inbox(token.dst.index).tokens.push_back(token);
        cv.notify_all();
    }

    pub(crate) fn wait_token(&self, dst: usize, src: usize, timeout: Duration) -> Option<RmaToken> {
        let deadline = Instant::now() + timeout;
        let (_, cv) = &self.inboxes[dst];
        let mut inbox = self.inbox(dst);
        loop {
            if let Some(pos) = inbox.tokens.iter().position(|t| t.src.index == src) {
                return inbox.tokens.remove(pos);
            }
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            inbox = cv.wait_timeout(inbox, deadline - now).unwrap_or_else(|p| p.into_inner()).0;
        }
    }
}
