use std::sync::atomic::{AtomicUsize, Ordering};

use o2proxy::archsim::{
    modeled_seconds, spawn_core_group, ArchError, CoreGroupSpec, CostLedger, LdmBlock, SharedArray,
};
use o2proxy::initcomm::{
    distribute_clumps, distribute_clumps_naive, flat_alltoallw, flat_gatherv, hierarchical_alltoallw, map_node_to_rank,
    map_node_to_rank_naive, staged_gatherv, AlltoallwPlan, RankTopology,
};
use o2proxy::offload::{parallel_for, static_chunk, LoopNest};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum LdmOp {
    Alloc(usize),
    Free(usize),
}

fn ldm_ops() -> impl Strategy<Value = Vec<LdmOp>> {
    prop::collection::vec(
        prop_oneof![(0usize..40_000).prop_map(LdmOp::Alloc), any::<usize>().prop_map(LdmOp::Free)],
        1..60,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ldm_blocks_never_overlap(ops in ldm_ops()) {
        let g = spawn_core_group(CoreGroupSpec::with_cpes(1)).unwrap();
        let mut v = g.cpe_view(0);
        let mut live: Vec<LdmBlock> = Vec::new();
        for op in ops {
            match op {
                LdmOp::Alloc(n) => match v.ldm_alloc(n) {
                    Ok(b) => {
                        prop_assert_eq!(b.len(), n);
                        prop_assert_eq!(b.offset() % 8, 0);
                        prop_assert!(b.offset() + b.len() <= v.capacity());
                        if n > 0 {
                            live.push(b);
                        }
                    }
                    Err(ArchError::CapacityExceeded { requested, .. }) => prop_assert_eq!(requested, n),
                    Err(e) => prop_assert!(false, "unexpected {e}"),
                },
                LdmOp::Free(k) if !live.is_empty() => {
                    let b = live.swap_remove(k % live.len());
                    v.ldm_free(b).unwrap();
                    prop_assert!(v.ldm_free(b).is_err(), "double free accepted");
                }
                LdmOp::Free(_) => {}
            }
            let mut sorted = live.clone();
            sorted.sort_by_key(|b| b.offset());
            for w in sorted.windows(2) {
                prop_assert!(w[0].offset() + w[0].len() <= w[1].offset());
            }
            prop_assert_eq!(v.used_bytes(), live.iter().map(|b| b.len()).sum::<usize>());
            prop_assert!(v.used_bytes() <= v.capacity());
        }
    }

    #[test]
    fn every_index_runs_exactly_once(
        extents in prop::collection::vec(1usize..7, 1..4),
        mask in 1u8..8,
        workers in 1usize..17,
    ) {
        let names: Vec<String> = (0..extents.len()).map(|i| format!("a{i}")).collect();
        let parallel: Vec<&str> = names.iter().enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, n)| n.as_str())
            .collect();
        prop_assume!(!parallel.is_empty());
        let nest = LoopNest::new(names.iter().cloned().zip(extents.iter().copied()))
            .parallel_on(&parallel)
            .unwrap();
        let total = nest.work_items();
        let dims = nest.parallel_extents();
        let hits: Vec<AtomicUsize> = (0..total).map(|_| AtomicUsize::new(0)).collect();
        let g = spawn_core_group(CoreGroupSpec::with_cpes(workers)).unwrap();
        let stats = parallel_for(&g, &nest, |idx, _| {
            let flat = idx.iter().zip(&dims).fold(0, |acc, (&i, &d)| acc * d + i);
            hits[flat].fetch_add(1, Ordering::Relaxed);
            Ok(())
        }).unwrap();
        prop_assert!(hits.iter().all(|h| h.load(Ordering::Relaxed) == 1));
        prop_assert_eq!(stats.total_items(), total);
        let counts = stats.items_per_worker();
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        prop_assert!(hi - lo <= 1);
    }

    #[test]
    fn static_chunks_tile_the_range(total in 0usize..10_000, n in 1usize..100) {
        let mut next = 0;
        for w in 0..n {
            let r = static_chunk(total, w, n);
            prop_assert_eq!(r.start, next);
            prop_assert!(r.len() == total / n || r.len() == total / n + 1);
            next = r.end;
        }
        prop_assert_eq!(next, total);
    }

    #[test]
    fn dma_round_trip(
        data in prop::collection::vec(any::<u64>(), 1..512),
        start in 0usize..512,
        len in 0usize..512,
        pad in 0usize..4096,
    ) {
        let start = start % data.len();
        let len = len.min(data.len() - start);
        let values: Vec<f64> = data.iter().map(|&b| f64::from_bits(b)).collect();
        let src = SharedArray::from_f64(&values);
        let dst = SharedArray::zeros(values.len());
        let g = spawn_core_group(CoreGroupSpec::with_cpes(1)).unwrap();
        let mut v = g.cpe_view(0);
        let block = v.ldm_alloc(pad + len * 8).unwrap();
        let at = block.offset() + pad;
        v.dma_get(&src, start * 8, at, len * 8).unwrap();
        v.dma_put(at, &dst, start * 8, len * 8).unwrap();
        let out = dst.to_vec();
        for i in 0..values.len() {
            let expected = if (start..start + len).contains(&i) { values[i].to_bits() } else { 0 };
            prop_assert_eq!(out[i].to_bits(), expected);
        }
        prop_assert_eq!(g.ledger().dma_bytes(), 2 * 8 * len as u64);
    }

    #[test]
    fn cost_is_the_closed_form(d in 0u64..1 << 45, r in 0u64..1 << 45, m in 0u64..1 << 45) {
        let spec = CoreGroupSpec::default();
        let ledger = CostLedger::default();
        ledger.record_dma(d as usize);
        ledger.record_rma(r as usize);
        ledger.record_gmem(m as usize);
        let snap = ledger.snapshot(&spec);
        prop_assert_eq!((snap.dma_bytes, snap.rma_bytes, snap.gmem_bytes), (d, r, m));
        prop_assert_eq!(snap.modeled_seconds, d as f64 / 307e9 + r as f64 / 460e9 + m as f64 / 51.2e9);
        prop_assert_eq!(snap.modeled_seconds, modeled_seconds(&spec, d, r, m));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn hierarchical_delivery_equals_flat(
        n in 1usize..48,
        s in 1usize..12,
        max_len in 0usize..40,
        zero in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let topo = RankTopology::new(n, s).unwrap();
        let plan = AlltoallwPlan::random(n, 0, max_len, zero, seed);
        let (flat, _) = flat_alltoallw(&topo, &plan).unwrap();
        let (hier, hs) = hierarchical_alltoallw(&topo, &plan).unwrap();
        prop_assert_eq!(&flat, &hier);
        for (dst, row) in flat.iter().enumerate() {
            for (src, got) in row.iter().enumerate() {
                prop_assert_eq!(&got[..], plan.payload(src, dst));
            }
        }
        for r in (0..n).filter(|&r| !topo.is_leader(r)) {
            prop_assert!(hs.max_resident_bytes[r] <= (plan.send_volume(r) + plan.recv_volume(r)) as u64);
        }
    }

    #[test]
    fn gather_equals_concatenation(
        payloads in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..30), 1..80),
        fanout in 2usize..9,
        root in any::<prop::sample::Index>(),
    ) {
        let topo = RankTopology::new(payloads.len(), 1).unwrap();
        let root = root.index(payloads.len());
        let res = staged_gatherv(&topo, root, fanout, &payloads).unwrap();
        prop_assert_eq!(res.buffer, flat_gatherv(&payloads));
        prop_assert_eq!(res.stats.messages, payloads.len() as u64 - 1);
    }

    #[test]
    fn mapping_equals_oracle(ids in prop::collection::vec(prop::collection::vec(0u8..4, 3), 0..300)) {
        let fast = map_node_to_rank(&ids).unwrap();
        let naive = map_node_to_rank_naive(&ids).unwrap();
        prop_assert_eq!(fast.0, naive.0);
    }

    #[test]
    fn clumps_equal_oracle(weights in prop::collection::vec(0u64..50, 0..400), procs in 1usize..64) {
        let (fast, stats) = distribute_clumps(&weights, procs).unwrap();
        let (naive, _) = distribute_clumps_naive(&weights, procs).unwrap();
        prop_assert_eq!(&fast, &naive);
        prop_assert!(stats.pass_count <= 2 * weights.len() as u64);
        prop_assert!(fast.owner.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(fast.owner.iter().all(|&p| p < procs));
    }
}
