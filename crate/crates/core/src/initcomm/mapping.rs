use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CommStats, InitError};

/// Per rank: which node it lives on (ordinal of its id among the distinct
/// ids, sorted) and its position among the ranks of that node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankMapping {
    pub node_ordinal: Vec<usize>,
    pub within_node: Vec<usize>,
}

impl RankMapping {
    pub fn n_nodes(&self) -> usize {
        self.node_ordinal.iter().max().map_or(0, |m| m + 1)
    }
}

fn check_lengths<T: AsRef<[u8]>>(ids: &[T]) -> Result<(), InitError> {
    let Some(first) = ids.first() else { return Ok(()) };
    let expected = first.as_ref().len();
    match ids.iter().position(|id| id.as_ref().len() != expected) {
        Some(rank) => Err(InitError::NodeIdLength { rank, len: ids[rank].as_ref().len(), expected }),
        None => Ok(()),
    }
}

struct Sorter<'a, T> {
    ids: &'a [T],
    ops: u64,
}

impl<T: AsRef<[u8]>> Sorter<'_, T> {
    /// Orders ranks by id, ties by rank, so every key is distinct.
    fn cmp(&mut self, a: usize, b: usize) -> Ordering {
        self.ops += 1;
        self.ids[a].as_ref().cmp(self.ids[b].as_ref()).then(a.cmp(&b))
    }

    fn less(&mut self, a: usize, b: usize) -> bool {
        self.cmp(a, b) == Ordering::Less
    }

    fn insertion(&mut self, v: &mut [usize]) {
        for i in 1..v.len() {
            let mut j = i;
            while j > 0 && self.less(v[j], v[j - 1]) {
                v.swap(j, j - 1);
                j -= 1;
            }
        }
    }

    fn median_of_three(&mut self, v: &mut [usize]) {
        let (lo, mid, hi) = (0, v.len() / 2, v.len() - 1);
        if self.less(v[mid], v[lo]) {
            v.swap(mid, lo);
        }
        if self.less(v[hi], v[mid]) {
            v.swap(hi, mid);
            if self.less(v[mid], v[lo]) {
                v.swap(mid, lo);
            }
        }
        // Pivot parked at the front.
        v.swap(lo, mid);
    }

    fn quicksort(&mut self, mut v: &mut [usize]) {
        loop {
            if v.len() <= 12 {
                self.insertion(v);
                return;
            }
            self.median_of_three(v);
            let pivot = v[0];
            let mut store = 1;
            for i in 1..v.len() {
                if self.less(v[i], pivot) {
                    v.swap(i, store);
                    store += 1;
                }
            }
            v.swap(0, store - 1);
            let (left, right) = v.split_at_mut(store - 1);
            let right = &mut right[1..];
            // Recurse into the smaller side to bound the stack depth.
            if left.len() < right.len() {
                self.quicksort(left);
                v = right;
            } else {
                self.quicksort(right);
                v = left;
            }
        }
    }
}

/// Sorts the ranks by node id and reads ordinals and local indices off the
/// sorted order in one sweep.
pub fn map_node_to_rank<T: AsRef<[u8]>>(ids: &[T]) -> Result<(RankMapping, CommStats), InitError> {
    check_lengths(ids)?;
    let n = ids.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut sorter = Sorter { ids, ops: 0 };
    sorter.quicksort(&mut order);

    let mut mapping = RankMapping { node_ordinal: vec![0; n], within_node: vec![0; n] };
    let (mut ordinal, mut local) = (0, 0);
    for (k, &rank) in order.iter().enumerate() {
        if k > 0 {
            if ids[order[k - 1]].as_ref() == ids[rank].as_ref() {
                local += 1;
            } else {
                ordinal += 1;
                local = 0;
            }
        }
        mapping.node_ordinal[rank] = ordinal;
        mapping.within_node[rank] = local;
    }
    Ok((mapping, CommStats { comparator_ops: sorter.ops, ..Default::default() }))
}

/// Quadratic oracle: every rank scans all ranks before it for its local
/// index, then all ranks for smaller ids that are first on their node.
pub fn map_node_to_rank_naive<T: AsRef<[u8]>>(ids: &[T]) -> Result<(RankMapping, CommStats), InitError> {
    check_lengths(ids)?;
    let n = ids.len();
    let mut ops = 0u64;
    let mut within = vec![0; n];
    for i in 0..n {
        let me = ids[i].as_ref();
        within[i] = ids[..i].iter().filter(|id| id.as_ref() == me).count();
        ops += i as u64;
    }
    let mut ordinal = vec![0; n];
    for i in 0..n {
        let me = ids[i].as_ref();
        ordinal[i] = (0..n).filter(|&j| within[j] == 0 && ids[j].as_ref() < me).count();
        ops += n as u64;
    }
    let mapping = RankMapping { node_ordinal: ordinal, within_node: within };
    Ok((mapping, CommStats { comparator_ops: ops, ..Default::default() }))
}

/// `n` ranks spread over `⌈n/ranks_per_node⌉` nodes with random
/// alphanumeric ids of `id_len` bytes, ranks shuffled across nodes.
pub fn random_node_ids(n: usize, ranks_per_node: usize, id_len: usize, seed: u64) -> Vec<Vec<u8>> {
    const ALPHABET: &[u8] = b"0123456789abcdefghijklmnopqrstuvwxyz";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = n.div_ceil(ranks_per_node.max(1));
    let names: Vec<Vec<u8>> =
        (0..nodes).map(|_| (0..id_len).map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())]).collect()).collect();
    let mut slots: Vec<usize> = (0..n).map(|r| r / ranks_per_node.max(1)).collect();
    slots.shuffle(&mut rng);
    slots.into_iter().map(|node| names[node].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_on_one_node() {
        let ids = vec![b"n0".to_vec(); 5];
        let (m, _) = map_node_to_rank(&ids).unwrap();
        assert_eq!(m.node_ordinal, vec![0; 5]);
        assert_eq!(m.within_node, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn small_example() {
        let ids = [b"b", b"a", b"a", b"c"];
        let (fast, _) = map_node_to_rank(&ids).unwrap();
        let (naive, _) = map_node_to_rank_naive(&ids).unwrap();
        assert_eq!(fast.node_ordinal, vec![1, 0, 0, 2]);
        assert_eq!(fast.within_node, vec![0, 0, 1, 0]);
        assert_eq!(fast, naive);
    }

    #[test]
    fn unequal_lengths_rejected() {
        let ids: Vec<&[u8]> = vec![b"ab", b"abc"];
        assert_eq!(map_node_to_rank(&ids).unwrap_err(), InitError::NodeIdLength { rank: 1, len: 3, expected: 2 });
        assert!(map_node_to_rank_naive(&ids).is_err());
    }

    #[test]
    fn empty_input() {
        let ids: Vec<Vec<u8>> = Vec::new();
        assert_eq!(map_node_to_rank(&ids).unwrap().0.n_nodes(), 0);
    }

    #[test]
    fn random_ids_match_oracle() {
        for (n, rpn) in [(100, 1), (4096, 6), (777, 64)] {
            let ids = random_node_ids(n, rpn, 12, n as u64);
            let (fast, _) = map_node_to_rank(&ids).unwrap();
            let (naive, _) = map_node_to_rank_naive(&ids).unwrap();
            assert_eq!(fast, naive, "n={n}");
            assert_eq!(fast.n_nodes(), n.div_ceil(rpn));
        }
    }

    #[test]
    fn sorted_and_reversed_inputs_stay_fast() {
        let n = 1 << 12;
        let asc: Vec<Vec<u8>> = (0..n as u32).map(|i| i.to_be_bytes().to_vec()).collect();
        let desc: Vec<Vec<u8>> = asc.iter().rev().cloned().collect();
        for ids in [asc, desc] {
            let (_, s) = map_node_to_rank(&ids).unwrap();
            assert!(s.comparator_ops < 3 * (n as u64) * 12, "{}", s.comparator_ops);
        }
    }
}
