//! Partition allocation: how many partitions each worker gets and which ones.
//!
//! With straggler budget `s`, every partition must live on exactly `s + 1`
//! workers, so `k(s+1)` copies are placed in total. Counts are proportional
//! to throughput (`n_i = k(s+1) c_i / sum(c)`), which makes every worker's
//! compute time `n_i / c_i` equal when the proportions land on integers.
//! Placement is cyclic: worker `i` takes the next `n_i` partitions after the
//! ones handed to workers `1..i-1`, wrapping modulo `k`.

use crate::profiles::ClusterConfig;
use thiserror::Error;

/// Partition counts plus the concrete cyclic assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    /// Partitions per worker, in worker order.
    pub counts: Vec<usize>,
    /// 1-based partition ids per worker, in cyclic placement order.
    pub assignments: Vec<Vec<usize>>,
}

/// Boolean m-by-k mask: `true` where a worker holds a partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportStructure {
    pub num_workers: usize,
    pub num_partitions: usize,
    mask: Vec<bool>,
}

#[derive(Debug, Error)]
pub enum AllocationError {
    #[error("need {required} partition copies but {m} workers hold at most {capacity}")]
    Infeasible {
        required: usize,
        capacity: usize,
        m: usize,
    },
    #[error("worker {worker} count {count} exceeds partition count {k}")]
    CountExceedsPartitions {
        worker: usize,
        count: usize,
        k: usize,
    },
    #[error("total copies {total} is not a positive multiple of partition count {k}")]
    BadTotal { total: usize, k: usize },
}

/// Throughput-proportional partition counts.
///
/// Exact shares `k(s+1) c_i / sum(c)` are rounded by largest remainder:
/// floors first, then one extra partition at a time in decreasing remainder
/// order (ties to the lower worker index), skipping workers already at the
/// per-worker cap `k`. Integer shares are returned untouched.
pub fn compute_partition_counts(config: &ClusterConfig) -> Result<Vec<usize>, AllocationError> {
    let m = config.num_workers();
    let k = config.num_partitions;
    let total = k * (config.num_stragglers + 1);
    if total > m * k {
        return Err(AllocationError::Infeasible {
            required: total,
            capacity: m * k,
            m,
        });
    }
    let sum_c = config.total_throughput();
    let exact: Vec<f64> = config
        .workers
        .iter()
        .map(|w| total as f64 * w.throughput / sum_c)
        .collect();
    let mut counts: Vec<usize> = exact.iter().map(|&e| (e.floor() as usize).min(k)).collect();

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).expect("finite remainders").then(a.cmp(&b))
    });

    let mut deficit = total - counts.iter().sum::<usize>();
    while deficit > 0 {
        let before = deficit;
        for &i in &order {
            if deficit == 0 {
                break;
            }
            if counts[i] < k {
                counts[i] += 1;
                deficit -= 1;
            }
        }
        // total <= m*k guarantees some worker below the cap each pass.
        debug_assert!(deficit < before);
    }
    Ok(counts)
}

/// Cyclic placement: worker `i` takes partitions
/// `(n'_i + 1) ..= (n'_i + n_i)` wrapped modulo `k` (1-based), where `n'_i`
/// is the sum of earlier workers' counts. Consecutive blocks tile the
/// partition ring, so each partition lands on exactly `total/k` workers.
pub fn cyclic_allocate(counts: &[usize], k: usize) -> Result<Allocation, AllocationError> {
    let total: usize = counts.iter().sum();
    if k == 0 || total == 0 || total % k != 0 {
        return Err(AllocationError::BadTotal { total, k });
    }
    for (i, &count) in counts.iter().enumerate() {
        if count > k {
            return Err(AllocationError::CountExceedsPartitions {
                worker: i + 1,
                count,
                k,
            });
        }
    }
    let mut assignments = Vec::with_capacity(counts.len());
    let mut offset = 0usize;
    for &count in counts {
        let block: Vec<usize> = (offset..offset + count).map(|pos| pos % k + 1).collect();
        assignments.push(block);
        offset += count;
    }
    Ok(Allocation {
        counts: counts.to_vec(),
        assignments,
    })
}

/// Collapses an allocation into its boolean support mask.
pub fn support_structure(allocation: &Allocation, k: usize) -> SupportStructure {
    let m = allocation.assignments.len();
    let mut mask = vec![false; m * k];
    for (i, assignment) in allocation.assignments.iter().enumerate() {
        for &p in assignment {
            debug_assert!((1..=k).contains(&p));
            mask[i * k + (p - 1)] = true;
        }
    }
    SupportStructure {
        num_workers: m,
        num_partitions: k,
        mask,
    }
}

impl SupportStructure {
    /// Builds a mask directly from row-major booleans.
    pub fn from_mask(num_workers: usize, num_partitions: usize, mask: Vec<bool>) -> Self {
        assert_eq!(mask.len(), num_workers * num_partitions, "mask shape");
        SupportStructure {
            num_workers,
            num_partitions,
            mask,
        }
    }

    /// Whether worker `i` holds partition `j` (both 0-based).
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.num_partitions + j]
    }

    /// Number of workers holding partition `j` (0-based).
    pub fn column_count(&self, j: usize) -> usize {
        (0..self.num_workers).filter(|&i| self.get(i, j)).count()
    }

    /// Row support size for worker `i` (0-based).
    pub fn row_count(&self, i: usize) -> usize {
        (0..self.num_partitions).filter(|&j| self.get(i, j)).count()
    }

    /// 0-based worker rows holding partition `j`, ascending.
    pub fn column_rows(&self, j: usize) -> Vec<usize> {
        (0..self.num_workers).filter(|&i| self.get(i, j)).collect()
    }

    /// Row-major copy of the mask.
    pub fn to_mask(&self) -> Vec<bool> {
        self.mask.clone()
    }

    /// Text form with one row per worker: `*` where a partition is held,
    /// `0` elsewhere, space-separated.
    pub fn to_star_text(&self) -> String {
        let mut out = String::new();
        for i in 0..self.num_workers {
            let row: Vec<&str> = (0..self.num_partitions)
                .map(|j| if self.get(i, j) { "*" } else { "0" })
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::ClusterConfig;
    use proptest::prelude::*;

    fn config(c: &[f64], k: usize, s: usize) -> ClusterConfig {
        ClusterConfig::from_throughputs(c, k, s, None).unwrap()
    }

    // --- partition counts ---

    #[test]
    fn proportional_integer_shares_are_exact() {
        // 14 copies over total throughput 14: each worker's share is its
        // throughput, no rounding involved.
        let counts = compute_partition_counts(&config(&[1.0, 2.0, 3.0, 4.0, 4.0], 7, 1)).unwrap();
        assert_eq!(counts, vec![1, 2, 3, 4, 4]);
    }

    #[test]
    fn largest_remainder_breaks_ties_toward_lower_index() {
        // 8 copies over 3 equal workers: shares 8/3 = 2.67 each; the two
        // extra copies go to workers 1 and 2.
        let counts = compute_partition_counts(&config(&[1.0, 1.0, 1.0], 4, 1)).unwrap();
        assert_eq!(counts, vec![3, 3, 2]);
    }

    #[test]
    fn shares_above_k_are_capped_and_redistributed() {
        // Worker 1's exact share is 7.84 but a worker can hold at most k=4
        // distinct partitions; the surplus spills to the others.
        let counts = compute_partition_counts(&config(&[100.0, 1.0, 1.0], 4, 1)).unwrap();
        assert_eq!(counts, vec![4, 2, 2]);
        assert_eq!(counts.iter().sum::<usize>(), 8);
    }

    #[test]
    fn infeasible_copy_total_is_rejected() {
        // Bypass config validation to hit the guard directly.
        let mut cfg = config(&[1.0, 1.0], 4, 1);
        cfg.num_stragglers = 2;
        assert!(matches!(
            compute_partition_counts(&cfg),
            Err(AllocationError::Infeasible { .. })
        ));
    }

    // --- cyclic placement ---

    #[test]
    fn cyclic_blocks_wrap_modulo_k() {
        let allocation = cyclic_allocate(&[3, 3, 2], 4).unwrap();
        assert_eq!(
            allocation.assignments,
            vec![vec![1, 2, 3], vec![4, 1, 2], vec![3, 4]]
        );
    }

    #[test]
    fn five_worker_heterogeneous_placement() {
        let allocation = cyclic_allocate(&[1, 2, 3, 4, 4], 7).unwrap();
        assert_eq!(
            allocation.assignments,
            vec![
                vec![1],
                vec![2, 3],
                vec![4, 5, 6],
                vec![7, 1, 2, 3],
                vec![4, 5, 6, 7],
            ]
        );
        let support = support_structure(&allocation, 7);
        for j in 0..7 {
            assert_eq!(support.column_count(j), 2, "partition {} copies", j + 1);
        }
    }

    #[test]
    fn rejects_count_above_k_and_bad_totals() {
        assert!(matches!(
            cyclic_allocate(&[5, 3], 4),
            Err(AllocationError::CountExceedsPartitions { worker: 1, .. })
        ));
        assert!(cyclic_allocate(&[2, 1], 4).is_err());
        assert!(cyclic_allocate(&[0, 0], 4).is_err());
    }

    #[test]
    fn equal_throughputs_with_k_equal_m_give_consecutive_blocks() {
        // The homogeneous special case: every worker holds s+1 cyclically
        // consecutive partitions and each partition is replicated s+1 times.
        for s in 1..=2usize {
            let m = 5;
            let cfg = config(&vec![1.0; m], m, s);
            let counts = compute_partition_counts(&cfg).unwrap();
            assert_eq!(counts, vec![s + 1; m]);
            let allocation = cyclic_allocate(&counts, m).unwrap();
            let support = support_structure(&allocation, m);
            for j in 0..m {
                assert_eq!(support.column_count(j), s + 1);
            }
            for assignment in &allocation.assignments {
                assert_eq!(assignment.len(), s + 1);
                for w in assignment.windows(2) {
                    assert_eq!(w[1], w[0] % m + 1, "block must stay consecutive");
                }
            }
        }
    }

    #[test]
    fn star_text_matches_mask() {
        let allocation = cyclic_allocate(&[2, 1], 3).unwrap();
        let support = support_structure(&allocation, 3);
        assert_eq!(support.to_star_text(), "* * 0\n0 0 *\n");
    }

    // --- randomized invariants ---

    proptest! {
        #[test]
        fn counts_sum_and_cap_hold(
            c in prop::collection::vec(0.05f64..50.0, 2..10),
            k in 1usize..20,
            s in 0usize..4,
        ) {
            let m = c.len();
            prop_assume!(s < m);
            let cfg = config(&c, k, s);
            let counts = compute_partition_counts(&cfg).unwrap();
            prop_assert_eq!(counts.iter().sum::<usize>(), k * (s + 1));
            prop_assert!(counts.iter().all(|&n| n <= k));

            let allocation = cyclic_allocate(&counts, k).unwrap();
            let support = support_structure(&allocation, k);
            for j in 0..k {
                prop_assert_eq!(support.column_count(j), s + 1);
            }
        }

        // Relabeling workers relabels the counts the same way, provided no
        // two fractional remainders tie (ties are broken by index, which a
        // relabeling permutes).
        #[test]
        fn counts_are_permutation_equivariant(
            c in prop::collection::vec(0.05f64..50.0, 2..8),
            k in 1usize..16,
            s in 0usize..3,
            perm_seed in any::<u64>(),
        ) {
            let m = c.len();
            prop_assume!(s < m);
            let cfg = config(&c, k, s);
            let total = (k * (s + 1)) as f64;
            let sum: f64 = c.iter().sum();
            let rem: Vec<f64> = c
                .iter()
                .map(|ci| {
                    let e = total * ci / sum;
                    e - e.floor()
                })
                .collect();
            for i in 0..m {
                for j in i + 1..m {
                    prop_assume!((rem[i] - rem[j]).abs() > 1e-9);
                }
            }

            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed);
            let mut perm: Vec<usize> = (0..m).collect();
            perm.shuffle(&mut rng);

            let permuted_c: Vec<f64> = perm.iter().map(|&i| c[i]).collect();
            let base = compute_partition_counts(&cfg).unwrap();
            let permuted =
                compute_partition_counts(&config(&permuted_c, k, s)).unwrap();
            let expected: Vec<usize> = perm.iter().map(|&i| base[i]).collect();
            prop_assert_eq!(permuted, expected);
        }
    }
}
