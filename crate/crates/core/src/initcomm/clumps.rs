use super::{CommStats, InitError};

/// Owning process of each clump. Owners are non-decreasing in clump order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClumpAssignment {
    pub owner: Vec<usize>,
}

impl ClumpAssignment {
    pub fn counts(&self, n_procs: usize) -> Vec<usize> {
        let mut c = vec![0; n_procs];
        for &p in &self.owner {
            c[p] += 1;
        }
        c
    }
}

/// All-zero weights split by count instead.
fn effective(weights: &[u64]) -> impl Fn(usize) -> u128 + '_ {
    let all_zero = weights.iter().all(|&w| w == 0);
    move |c| if all_zero { 1 } else { weights[c] as u128 }
}

/// Contiguous weighted split. Process `p` owns the weight range starting at
/// `⌊T·p/P⌋`; a clump goes to the last process whose range starts at or
/// before the clump's own starting offset, i.e.
/// `min(P−1, ⌈(S+1)·P/T⌉ − 1)` for exclusive prefix `S`.
///
/// One pass totals the weights and a second assigns, so `pass_count` is
/// exactly twice the clump count.
pub fn distribute_clumps(weights: &[u64], n_procs: usize) -> Result<(ClumpAssignment, CommStats), InitError> {
    if n_procs == 0 {
        return Err(InitError::NoProcesses);
    }
    let w = effective(weights);
    let p = n_procs as u128;
    let mut passes = 0u64;
    let mut total = 0u128;
    for c in 0..weights.len() {
        total += w(c);
        passes += 1;
    }
    let mut owner = Vec::with_capacity(weights.len());
    let mut prefix = 0u128;
    for c in 0..weights.len() {
        let last_start = ((prefix + 1) * p).div_ceil(total.max(1)) - 1;
        owner.push(last_start.min(p - 1) as usize);
        prefix += w(c);
        passes += 1;
    }
    Ok((ClumpAssignment { owner }, CommStats { pass_count: passes, ..Default::default() }))
}

/// Oracle: every clump rescans the clumps before it for its offset, then
/// walks the process boundaries from the start.
pub fn distribute_clumps_naive(weights: &[u64], n_procs: usize) -> Result<(ClumpAssignment, CommStats), InitError> {
    if n_procs == 0 {
        return Err(InitError::NoProcesses);
    }
    let w = effective(weights);
    let p = n_procs as u128;
    let total: u128 = (0..weights.len()).map(&w).sum();
    let boundary = |q: u128| total * q / p;
    let mut passes = weights.len() as u64;
    let mut owner = Vec::with_capacity(weights.len());
    for c in 0..weights.len() {
        let start: u128 = (0..c).map(&w).sum();
        passes += c as u64;
        let mut q = 0u128;
        while q + 1 < p && boundary(q + 1) <= start {
            q += 1;
            passes += 1;
        }
        owner.push(q as usize);
    }
    Ok((ClumpAssignment { owner }, CommStats { pass_count: passes, ..Default::default() }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_clump_each() {
        let (a, _) = distribute_clumps(&[5; 7], 7).unwrap();
        assert_eq!(a.owner, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn heavy_first_clump() {
        let (fast, _) = distribute_clumps(&[3, 1, 1, 1], 2).unwrap();
        let (naive, _) = distribute_clumps_naive(&[3, 1, 1, 1], 2).unwrap();
        assert_eq!(fast, naive);
        assert_eq!(fast.owner, vec![0, 1, 1, 1]);
    }

    #[test]
    fn zero_weights_split_by_count() {
        let (a, _) = distribute_clumps(&[0; 6], 3).unwrap();
        assert_eq!(a.owner, vec![0, 0, 1, 1, 2, 2]);
        assert_eq!(a, distribute_clumps_naive(&[0; 6], 3).unwrap().0);
    }

    #[test]
    fn more_procs_than_clumps() {
        let (fast, _) = distribute_clumps(&[1, 1], 5).unwrap();
        assert_eq!(fast, distribute_clumps_naive(&[1, 1], 5).unwrap().0);
    }

    #[test]
    fn no_processes() {
        assert_eq!(distribute_clumps(&[1], 0).unwrap_err(), InitError::NoProcesses);
    }

    #[test]
    fn pass_count_is_linear() {
        let w: Vec<u64> = (0..1000).map(|i| i % 13).collect();
        let (fast, fs) = distribute_clumps(&w, 37).unwrap();
        let (naive, ns) = distribute_clumps_naive(&w, 37).unwrap();
        assert_eq!(fast, naive);
        assert_eq!(fs.pass_count, 2000);
        assert!(ns.pass_count > 400_000);
    }

    #[test]
    fn huge_weights_do_not_overflow() {
        let w = vec![u64::MAX; 8];
        let (fast, _) = distribute_clumps(&w, 4).unwrap();
        assert_eq!(fast.owner, vec![0, 0, 1, 1, 2, 2, 3, 3]);
    }
}
