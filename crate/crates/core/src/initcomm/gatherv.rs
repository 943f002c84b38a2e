use super::network::run_ranks;
use super::pack::{pack, unpack, Record};
use super::{collect, CommStats, InitError, RankTopology};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatherResult {
    /// Payloads of all ranks concatenated in rank order.
    pub buffer: Vec<u8>,
    pub stages: u32,
    pub stats: CommStats,
}

pub fn flat_gatherv(payloads: &[Vec<u8>]) -> Vec<u8> {
    payloads.concat()
}

/// Number of tree levels needed to cover `n` ranks with fan-out `f`.
fn tree_stages(n: usize, fanout: usize) -> u32 {
    let (mut stride, mut stages) = (1usize, 0);
    while stride < n {
        stride = stride.saturating_mul(fanout);
        stages += 1;
    }
    stages
}

/// Gather along an `fanout`-ary tree over ranks renumbered relative to
/// `root`. At stage `s` (stride `fanout^s`) every rank whose relative number
/// is not a multiple of `fanout^(s+1)` sends everything it has collected to
/// its parent in one packed message and drops out.
pub fn staged_gatherv(
    topo: &RankTopology,
    root: usize,
    fanout: usize,
    payloads: &[Vec<u8>],
) -> Result<GatherResult, InitError> {
    let n = topo.n_ranks;
    if payloads.len() != n {
        return Err(InitError::PlanMismatch { plan: payloads.len(), topo: n });
    }
    if fanout < 2 {
        return Err(InitError::Fanout(fanout));
    }
    if root >= n {
        return Err(InitError::Root { root, n });
    }
    let (results, counters) = run_ranks(n, |ep| {
        let r = ep.rank();
        let v = (r + n - root) % n;
        let abs = |rel: usize| (rel + root) % n;
        let mut held = vec![Record { src: r, dst: root, data: payloads[r].clone() }];
        ep.hold(payloads[r].len());
        let mut stride = 1usize;
        while stride < n {
            let span = stride.saturating_mul(fanout);
            if !v.is_multiple_of(span) {
                let parent = abs(v - v % span);
                ep.send(parent, pack(&held))?;
                return Ok(None);
            }
            for t in 1..fanout {
                let child = match t.checked_mul(stride).and_then(|o| v.checked_add(o)) {
                    Some(c) if c < n => c,
                    _ => break,
                };
                // The child's subtree covers relative ranks [child, child + stride).
                let hi = (child + stride).min(n);
                let recs = unpack(&ep.recv(abs(child))?, r, |src, dst| {
                    let rel = (src + n - root) % n;
                    dst == root && src < n && (child..hi).contains(&rel)
                })?;
                for rec in &recs {
                    ep.hold(rec.data.len());
                }
                held.extend(recs);
            }
            stride = span;
        }
        Ok(Some(held))
    });
    let mut records = collect(results)?
        .into_iter()
        .flatten()
        .next()
        .ok_or(InitError::MalformedPack { rank: root, reason: "root finished without a buffer".into() })?;
    records.sort_by_key(|rec| rec.src);
    let complete = records.len() == n && records.iter().enumerate().all(|(i, rec)| rec.src == i);
    if !complete {
        return Err(InitError::MalformedPack { rank: root, reason: "missing or duplicate sources".into() });
    }
    let buffer = records.into_iter().flat_map(|rec| rec.data).collect();
    Ok(GatherResult { buffer, stages: tree_stages(n, fanout), stats: CommStats::from_counters(counters) })
}
