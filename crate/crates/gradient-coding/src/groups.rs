//! Exact-cover groups: sets of workers whose assignments tile the
//! partitions without overlap.
//!
//! When such a group finishes, its members' partial sums add up to the
//! full-dataset gradient directly — the decoding vector is the group's 0/1
//! indicator, with no floating-point solve at all. The group-based scheme
//! gives every member of a chosen group an all-ones row and covers the
//! remaining workers with a smaller randomized construction, which keeps
//! robustness while making the common fast path numerically exact.
//!
//! Workers are 0-based in every function here; only the serialized
//! `groups` field of a strategy file stores 1-based ids.

use crate::allocation::{self, SupportStructure};
use crate::coding::{construct_with_retries, CodingError, CodingStrategy, SchemeKind};
use crate::profiles::ClusterConfig;
use thiserror::Error;

/// Group discovery enumerates subsets; refuse clusters where that could
/// blow up.
pub const GROUP_SEARCH_GUARD_WORKERS: usize = 24;

#[derive(Debug, Error)]
pub enum GroupError {
    #[error("group search over {m} workers exceeds the {limit}-worker guard")]
    SearchTooLarge { m: usize, limit: usize },
}

// ---------------------------------------------------------------------------
// Set helpers over partition masks
// ---------------------------------------------------------------------------

fn row_mask(support: &SupportStructure, i: usize) -> Vec<bool> {
    (0..support.num_partitions).map(|j| support.get(i, j)).collect()
}

fn is_subset(a: &[bool], b: &[bool]) -> bool {
    a.iter().zip(b).all(|(&x, &y)| !x || y)
}

fn subtract(a: &[bool], b: &[bool]) -> Vec<bool> {
    a.iter().zip(b).map(|(&x, &y)| x && !y).collect()
}

/// True when `members` have pairwise-disjoint assignments that together
/// cover every partition exactly once.
pub fn is_exact_cover(support: &SupportStructure, members: &[usize]) -> bool {
    let k = support.num_partitions;
    let mut copies = vec![0usize; k];
    for &w in members {
        if w >= support.num_workers {
            return false;
        }
        for (j, c) in copies.iter_mut().enumerate() {
            if support.get(w, j) {
                *c += 1;
            }
        }
    }
    copies.iter().all(|&c| c == 1)
}

// ---------------------------------------------------------------------------
// Discovery and pruning
// ---------------------------------------------------------------------------

/// Enumerates every exact-cover group, members ascending within a group
/// and groups in lexicographic order. Workers with empty assignments never
/// join a group.
pub fn find_all_groups(support: &SupportStructure) -> Result<Vec<Vec<usize>>, GroupError> {
    let m = support.num_workers;
    if m > GROUP_SEARCH_GUARD_WORKERS {
        return Err(GroupError::SearchTooLarge {
            m,
            limit: GROUP_SEARCH_GUARD_WORKERS,
        });
    }
    let rows: Vec<Vec<bool>> = (0..m).map(|i| row_mask(support, i)).collect();
    let full = vec![true; support.num_partitions];
    let mut found = Vec::new();
    let mut chosen = Vec::new();
    search(&rows, 0, &full, &mut chosen, &mut found);
    Ok(found)
}

fn search(
    rows: &[Vec<bool>],
    start: usize,
    remaining: &[bool],
    chosen: &mut Vec<usize>,
    found: &mut Vec<Vec<usize>>,
) {
    for i in start..rows.len() {
        let row = &rows[i];
        if !row.iter().any(|&b| b) || !is_subset(row, remaining) {
            continue;
        }
        chosen.push(i);
        if row == remaining {
            found.push(chosen.clone());
        } else {
            let rest = subtract(remaining, row);
            search(rows, i + 1, &rest, chosen, found);
        }
        chosen.pop();
    }
}

fn shared_members(a: &[usize], b: &[usize]) -> bool {
    // Both sides are sorted ascending.
    let (mut x, mut y) = (0, 0);
    while x < a.len() && y < b.len() {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Equal => return true,
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
        }
    }
    false
}

/// Thins `groups` to a pairwise member-disjoint selection by repeatedly
/// dropping the group that shares members with the most others (ties: more
/// members first, then the lexicographically larger). Input order is kept
/// for the survivors.
pub fn prune_groups(groups: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut kept: Vec<Vec<usize>> = groups.to_vec();
    loop {
        let n = kept.len();
        let mut worst: Option<(usize, (usize, usize, &Vec<usize>))> = None;
        for i in 0..n {
            let overlaps = (0..n)
                .filter(|&j| j != i && shared_members(&kept[i], &kept[j]))
                .count();
            if overlaps == 0 {
                continue;
            }
            let key = (overlaps, kept[i].len(), &kept[i]);
            if worst.as_ref().map(|(_, best)| key > *best).unwrap_or(true) {
                worst = Some((i, key));
            }
        }
        match worst {
            Some((i, _)) => {
                kept.remove(i);
            }
            None => return kept,
        }
    }
}

// ---------------------------------------------------------------------------
// Strategy construction
// ---------------------------------------------------------------------------

/// Builds the group-based strategy: heterogeneity-aware allocation, then
/// all-ones rows for the members of the pruned groups and a randomized
/// construction over the residual workers sized for the stragglers the
/// groups cannot absorb. Falls back to the plain randomized construction
/// (with an empty `groups` list) when no groups exist or the residual
/// copies are inconsistent.
pub fn build_group_based(
    config: &ClusterConfig,
    seed: u64,
) -> Result<CodingStrategy, CodingError> {
    let m = config.num_workers();
    let k = config.num_partitions;
    let s = config.num_stragglers;
    let counts = allocation::compute_partition_counts(config)?;
    let alloc = allocation::cyclic_allocate(&counts, k)?;
    let support = allocation::support_structure(&alloc, k);

    let finish = |matrix: Vec<f64>, used_seed: u64, groups: Vec<Vec<usize>>| CodingStrategy {
        scheme: SchemeKind::GroupBased,
        num_workers: m,
        num_partitions: k,
        num_stragglers: s,
        counts: counts.clone(),
        support: support.clone(),
        matrix,
        seed: used_seed,
        partition_weight: 1.0,
        throughputs: config.throughputs(),
        groups: Some(groups),
    };

    let pruned = prune_groups(&find_all_groups(&support)?);
    if pruned.is_empty() {
        log::warn!("no exact-cover groups; falling back to the plain randomized construction");
        let (matrix, used_seed) = construct_with_retries(&support, s, seed)?;
        return Ok(finish(matrix, used_seed, Vec::new()));
    }

    let p = pruned.len();
    let mut member = vec![false; m];
    for group in &pruned {
        for &w in group {
            member[w] = true;
        }
    }
    let residual_rows: Vec<usize> = (0..m).filter(|&i| !member[i]).collect();

    let mut matrix = vec![0.0; m * k];
    for i in (0..m).filter(|&i| member[i]) {
        for j in 0..k {
            if support.get(i, j) {
                matrix[i * k + j] = 1.0;
            }
        }
    }

    if p > s {
        // The groups alone absorb every straggler pattern; all partition
        // copies must then live inside them.
        if residual_rows.iter().all(|&i| support.row_count(i) == 0) {
            let groups_1based = pruned.iter().map(|g| g.iter().map(|&w| w + 1).collect()).collect();
            return Ok(finish(matrix, seed, groups_1based));
        }
        log::warn!("residual workers hold copies despite {p} groups; falling back");
        let (matrix, used_seed) = construct_with_retries(&support, s, seed)?;
        return Ok(finish(matrix, used_seed, Vec::new()));
    }

    // Residual construction must see exactly s + 1 - p copies per partition.
    let mut residual_mask = Vec::with_capacity(residual_rows.len() * k);
    for &i in &residual_rows {
        for j in 0..k {
            residual_mask.push(support.get(i, j));
        }
    }
    let residual_support = SupportStructure::from_mask(residual_rows.len(), k, residual_mask);
    let want = s + 1 - p;
    if residual_rows.is_empty() || (0..k).any(|j| residual_support.column_count(j) != want) {
        log::warn!("residual copies are not uniformly {want}; falling back");
        let (matrix, used_seed) = construct_with_retries(&support, s, seed)?;
        return Ok(finish(matrix, used_seed, Vec::new()));
    }
    let (residual_matrix, used_seed) = construct_with_retries(&residual_support, s - p, seed)?;
    for (r, &i) in residual_rows.iter().enumerate() {
        matrix[i * k..(i + 1) * k].copy_from_slice(&residual_matrix[r * k..(r + 1) * k]);
    }
    let groups_1based = pruned.iter().map(|g| g.iter().map(|&w| w + 1).collect()).collect();
    Ok(finish(matrix, used_seed, groups_1based))
}

/// The exact decoding vector for each of the strategy's groups: the 0/1
/// indicator of its members.
pub fn group_decoding_vectors(strategy: &CodingStrategy) -> Vec<crate::decode::DecodingVector> {
    let m = strategy.num_workers;
    strategy
        .groups
        .iter()
        .flatten()
        .map(|group| {
            let mut coefficients = vec![0.0; m];
            for &w in group {
                coefficients[w - 1] = 1.0;
            }
            crate::decode::DecodingVector { coefficients }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::{construction_residual, verify_condition1};

    fn example2_config() -> ClusterConfig {
        ClusterConfig::from_throughputs(&[2.0, 1.0, 1.0, 3.0, 3.0, 3.0, 3.0], 4, 3, Some(7))
            .unwrap()
    }

    fn example2_support() -> SupportStructure {
        let counts = allocation::compute_partition_counts(&example2_config()).unwrap();
        assert_eq!(counts, vec![2, 1, 1, 3, 3, 3, 3]);
        let alloc = allocation::cyclic_allocate(&counts, 4).unwrap();
        allocation::support_structure(&alloc, 4)
    }

    // --- discovery ---

    #[test]
    fn seven_worker_example_has_exactly_three_groups() {
        let groups = find_all_groups(&example2_support()).unwrap();
        assert_eq!(groups, vec![vec![0, 1, 2], vec![1, 4], vec![2, 3]]);
        for g in &groups {
            assert!(is_exact_cover(&example2_support(), g));
        }
    }

    #[test]
    fn overlapping_and_incomplete_sets_are_not_groups() {
        let support = example2_support();
        assert!(!is_exact_cover(&support, &[0, 1])); // partition 4 uncovered
        assert!(!is_exact_cover(&support, &[0, 1, 2, 3])); // overlaps
    }

    #[test]
    fn workers_with_no_partitions_never_join_groups() {
        // Rows: {1,2}, {}, {3}.
        let mask = vec![true, true, false, false, false, false, false, false, true];
        let support = SupportStructure::from_mask(3, 3, mask);
        let groups = find_all_groups(&support).unwrap();
        assert_eq!(groups, vec![vec![0, 2]]);
    }

    #[test]
    fn discovery_guard_rejects_huge_clusters() {
        let m = GROUP_SEARCH_GUARD_WORKERS + 1;
        let support = SupportStructure::from_mask(m, 1, vec![true; m]);
        assert!(matches!(
            find_all_groups(&support),
            Err(GroupError::SearchTooLarge { .. })
        ));
    }

    // --- pruning ---

    #[test]
    fn pruning_drops_the_group_that_conflicts_most() {
        let groups = vec![vec![0, 1, 2], vec![1, 4], vec![2, 3]];
        assert_eq!(prune_groups(&groups), vec![vec![1, 4], vec![2, 3]]);
    }

    #[test]
    fn pruning_ties_fall_to_size_then_lexicographic_order() {
        // A triangle of equally-conflicted pairs: the lexicographically
        // largest goes first, repeatedly.
        let groups = vec![vec![0, 1], vec![0, 2], vec![1, 2]];
        assert_eq!(prune_groups(&groups), vec![vec![0, 1]]);
        // Size outranks order: the 3-member group loses despite being
        // lexicographically smaller.
        let groups = vec![vec![0, 1, 2], vec![2, 3]];
        assert_eq!(prune_groups(&groups), vec![vec![2, 3]]);
    }

    #[test]
    fn disjoint_groups_survive_pruning_untouched() {
        let groups = vec![vec![0], vec![1], vec![2]];
        assert_eq!(prune_groups(&groups), groups);
    }

    // --- strategy construction ---

    #[test]
    fn group_strategy_pins_member_rows_to_ones() {
        let strategy = build_group_based(&example2_config(), 7).unwrap();
        assert_eq!(strategy.groups, Some(vec![vec![2, 5], vec![3, 4]]));
        let k = strategy.num_partitions;
        for i in [1usize, 2, 3, 4] {
            for j in 0..k {
                let want = if strategy.support.get(i, j) { 1.0 } else { 0.0 };
                assert_eq!(strategy.matrix[i * k + j], want, "row {i} col {j}");
            }
        }
        // Residual workers carry a real randomized row.
        for i in [0usize, 5, 6] {
            assert!(strategy.support.row_count(i) > 0);
            assert!((0..k).any(|j| strategy.matrix[i * k + j] != 0.0));
        }
        assert!(verify_condition1(&strategy).unwrap());
        assert!(construction_residual(&strategy).unwrap() < 1e-9);
    }

    #[test]
    fn group_vectors_decode_exactly() {
        let strategy = build_group_based(&example2_config(), 7).unwrap();
        let vectors = group_decoding_vectors(&strategy);
        assert_eq!(vectors.len(), 2);
        let k = strategy.num_partitions;
        for a in &vectors {
            for j in 0..k {
                let acc: f64 = (0..strategy.num_workers)
                    .map(|i| a.coefficients[i] * strategy.matrix[i * k + j])
                    .sum();
                assert_eq!(acc, 1.0, "group decode must be exact");
            }
        }
    }

    #[test]
    fn groupless_cluster_falls_back_to_randomized_rows() {
        // Counts [3,3,2] over 4 partitions admit no exact cover.
        let cfg = ClusterConfig::from_throughputs(&[1.0, 1.0, 1.0], 4, 1, Some(3)).unwrap();
        let strategy = build_group_based(&cfg, 3).unwrap();
        assert_eq!(strategy.groups, Some(vec![]));
        assert!(verify_condition1(&strategy).unwrap());
        assert!(construction_residual(&strategy).unwrap() < 1e-9);
    }

    #[test]
    fn full_replication_yields_all_singleton_groups_and_ones() {
        // m = s + 1 forces every worker to hold everything.
        let cfg = ClusterConfig::from_throughputs(&[1.0, 1.0, 1.0], 3, 2, Some(5)).unwrap();
        let strategy = build_group_based(&cfg, 5).unwrap();
        assert_eq!(strategy.groups, Some(vec![vec![1], vec![2], vec![3]]));
        assert!(strategy.matrix.iter().all(|&v| v == 1.0));
        assert!(verify_condition1(&strategy).unwrap());
    }
}
