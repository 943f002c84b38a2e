use super::network::run_ranks;
use super::pack::{pack, packed_len, unpack, Record};
use super::{collect, AlltoallwPlan, CommStats, InitError, RankTopology};

/// What each rank ended up with: `delivery[dst][src]`.
pub type Delivery = Vec<Vec<Vec<u8>>>;

/// One direct message per nonempty off-rank pair.
pub fn flat_alltoallw(topo: &RankTopology, plan: &AlltoallwPlan) -> Result<(Delivery, CommStats), InitError> {
    plan.check(topo)?;
    let n = topo.n_ranks;
    let (results, counters) = run_ranks(n, |ep| {
        let r = ep.rank();
        ep.hold(plan.send_volume(r));
        for j in (0..n).filter(|&j| j != r && plan.size(r, j) > 0) {
            ep.send(j, plan.payload(r, j).to_vec())?;
            ep.release(plan.size(r, j));
        }
        let mut row = vec![Vec::new(); n];
        row[r] = plan.payload(r, r).to_vec();
        for i in (0..n).filter(|&i| i != r && plan.size(i, r) > 0) {
            let data = ep.recv(i)?;
            ep.hold(data.len());
            row[i] = data;
        }
        Ok(row)
    });
    Ok((collect(results)?, CommStats::from_counters(counters)))
}

/// Message count of the three-phase scheme when every pair carries data.
pub fn hierarchical_dense_messages(topo: &RankTopology) -> u64 {
    let g = topo.n_groups() as u64;
    let members: u64 = (0..topo.n_groups()).map(|k| topo.members(k).len() as u64 - 1).sum();
    2 * members + g * (g - 1)
}

fn group_traffic(topo: &RankTopology, plan: &AlltoallwPlan, from: usize, to: usize) -> bool {
    topo.members(from).any(|i| topo.members(to).any(|j| plan.size(i, j) > 0))
}

/// Three phases: members hand their off-rank payloads to the group leader,
/// leaders swap one aggregated buffer per destination group, and leaders
/// scatter what arrived to their members. Messages that would be empty are
/// not sent; every rank can tell from the plan sizes which ones to expect.
pub fn hierarchical_alltoallw(topo: &RankTopology, plan: &AlltoallwPlan) -> Result<(Delivery, CommStats), InitError> {
    plan.check(topo)?;
    let n = topo.n_ranks;
    let (results, counters) = run_ranks(n, |ep| {
        let r = ep.rank();
        let g = topo.group_of(r);
        let leader = topo.leader(g);
        let mut row = vec![Vec::new(); n];
        row[r] = plan.payload(r, r).to_vec();
        ep.hold(plan.send_volume(r));

        let outgoing: Vec<Record> = (0..n)
            .filter(|&j| j != r && plan.size(r, j) > 0)
            .map(|j| Record { src: r, dst: j, data: plan.payload(r, j).to_vec() })
            .collect();

        if r != leader {
            if !outgoing.is_empty() {
                let moved: usize = outgoing.iter().map(|x| x.data.len()).sum();
                ep.send(leader, pack(&outgoing))?;
                ep.release(moved);
            }
            if plan.receives_off_rank(r) {
                let recs = unpack(&ep.recv(leader)?, r, |src, dst| dst == r && src != r)?;
                for rec in recs {
                    ep.hold(rec.data.len());
                    row[rec.src] = rec.data;
                }
            }
            return Ok(row);
        }

        // Leader. Phase 1: bucket own and members' records by destination group.
        let mut by_group: Vec<Vec<Record>> = vec![Vec::new(); topo.n_groups()];
        for rec in outgoing {
            by_group[topo.group_of(rec.dst)].push(rec);
        }
        for m in topo.members(g).skip(1) {
            if !plan.sends_off_rank(m) {
                continue;
            }
            let recs = unpack(&ep.recv(m)?, r, |src, dst| src == m && dst != m && dst < n)?;
            for rec in recs {
                ep.hold(rec.data.len());
                by_group[topo.group_of(rec.dst)].push(rec);
            }
        }

        // Phase 2: one buffer to every other leader that has traffic from us.
        let mut inbound = std::mem::take(&mut by_group[g]);
        for (h, recs) in by_group.iter().enumerate() {
            if h != g && !recs.is_empty() {
                ep.send(topo.leader(h), pack(recs))?;
                ep.release(recs.iter().map(|x| x.data.len()).sum());
            }
        }
        drop(by_group);
        for h in 0..topo.n_groups() {
            if h == g || !group_traffic(topo, plan, h, g) {
                continue;
            }
            let from = topo.members(h);
            let own = topo.members(g);
            let recs = unpack(&ep.recv(topo.leader(h))?, r, |src, dst| from.contains(&src) && own.contains(&dst))?;
            for rec in &recs {
                ep.hold(rec.data.len());
            }
            inbound.extend(recs);
        }

        // Phase 3: scatter, each member's records in source order.
        inbound.sort_by_key(|rec| (rec.dst, rec.src));
        let mut start = 0;
        while start < inbound.len() {
            let dst = inbound[start].dst;
            let end = start + inbound[start..].iter().take_while(|x| x.dst == dst).count();
            let batch = &inbound[start..end];
            if dst == r {
                for rec in batch {
                    row[rec.src] = rec.data.clone();
                }
            } else {
                ep.send(dst, pack(batch))?;
                ep.release(packed_len(batch).saturating_sub(24 * batch.len()));
            }
            start = end;
        }
        Ok(row)
    });
    Ok((collect(results)?, CommStats::from_counters(counters)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_plan_sends_nothing() {
        let topo = RankTopology::new(6, 2).unwrap();
        let plan = AlltoallwPlan::uniform(6, 0);
        let (flat, fs) = flat_alltoallw(&topo, &plan).unwrap();
        let (hier, hs) = hierarchical_alltoallw(&topo, &plan).unwrap();
        assert_eq!(fs.messages, 0);
        assert_eq!(hs.messages, 0);
        assert_eq!(flat, hier);
        assert!(flat.iter().flatten().all(Vec::is_empty));
    }

    #[test]
    fn four_ranks_two_groups() {
        let topo = RankTopology::new(4, 2).unwrap();
        let plan = AlltoallwPlan::uniform(4, 8);
        let (flat, fs) = flat_alltoallw(&topo, &plan).unwrap();
        let (hier, hs) = hierarchical_alltoallw(&topo, &plan).unwrap();
        assert_eq!(fs.messages, 12);
        assert_eq!(hs.messages, 6);
        assert_eq!(hierarchical_dense_messages(&topo), 6);
        assert_eq!(flat, hier);
        assert_eq!(flat[3][1], plan.payload(1, 3));
    }

    #[test]
    fn sixty_four_ranks_in_groups_of_eight() {
        let topo = RankTopology::new(64, 8).unwrap();
        let plan = AlltoallwPlan::uniform(64, 8);
        let (flat, fs) = flat_alltoallw(&topo, &plan).unwrap();
        let (hier, hs) = hierarchical_alltoallw(&topo, &plan).unwrap();
        assert_eq!((hs.messages, fs.messages), (168, 4032));
        assert_eq!(hierarchical_dense_messages(&topo), 168);
        assert_eq!(flat, hier);
    }

    #[test]
    fn ragged_last_group() {
        let topo = RankTopology::new(11, 4).unwrap();
        let plan = AlltoallwPlan::random(11, 0, 40, 0.3, 9);
        let (flat, _) = flat_alltoallw(&topo, &plan).unwrap();
        let (hier, _) = hierarchical_alltoallw(&topo, &plan).unwrap();
        assert_eq!(flat, hier);
    }

    #[test]
    fn non_leaders_hold_only_their_own_traffic() {
        let topo = RankTopology::new(24, 6).unwrap();
        let plan = AlltoallwPlan::random(24, 1, 64, 0.2, 4);
        let (_, hs) = hierarchical_alltoallw(&topo, &plan).unwrap();
        for r in (0..24).filter(|&r| !topo.is_leader(r)) {
            let bound = (plan.send_volume(r) + plan.recv_volume(r)) as u64;
            assert!(hs.max_resident_bytes[r] <= bound, "rank {r}");
        }
    }

    #[test]
    fn plan_must_match_topology() {
        let topo = RankTopology::new(4, 2).unwrap();
        let plan = AlltoallwPlan::uniform(3, 1);
        assert_eq!(hierarchical_alltoallw(&topo, &plan).unwrap_err(), InitError::PlanMismatch { plan: 3, topo: 4 });
    }
}
