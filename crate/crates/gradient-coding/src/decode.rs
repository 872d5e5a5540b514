//! Runtime encoding and decoding of coded gradients.
//!
//! Workers fold their partial gradients into one coded vector using their
//! row of `B`. The master watches workers arrive, and as soon as the
//! arrived set can express the all-ones row it solves for a decoding
//! vector `a` (with `a * B = 1`, zero entries off the arrived set) and
//! recovers the full-dataset gradient as `sum_i a_i * coded_i`.
//!
//! Worker and partition indices are 0-based everywhere in this module;
//! files, wire frames and printed output shift to 1-based at those
//! boundaries.

use crate::coding::{span_residual_tolerance, CodingStrategy, NONZERO_TOLERANCE};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use thiserror::Error;

/// Gradient over a single partition.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialGradient {
    /// 0-based partition index.
    pub partition: usize,
    pub values: Vec<f64>,
}

/// One worker's encoded contribution for a round. Empty `values` is a
/// participation notice from a worker that holds no partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct CodedGradient {
    /// 0-based worker row.
    pub worker: usize,
    pub values: Vec<f64>,
}

/// Coefficients `a` with `a * B = all-ones`; exact zeros outside the
/// active set it was solved for.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodingVector {
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("missing partial gradient for partition {partition} with nonzero coefficient")]
    MissingPartial { partition: usize },
    #[error("missing coded gradient from worker {worker} with nonzero coefficient")]
    MissingCoded { worker: usize },
    #[error("gradient dimension {got} does not match {expected}")]
    WrongDimension { expected: usize, got: usize },
}

// ---------------------------------------------------------------------------
// Synthetic gradients
// ---------------------------------------------------------------------------

/// Deterministic pseudorandom partial gradient for (seed, round,
/// partition). Simulation and the live network path both use this, so a
/// recovered gradient can be checked against plain summation.
pub fn synthetic_partial(seed: u64, round: u32, partition: usize, dim: usize) -> PartialGradient {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(round as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(partition as u64).to_le_bytes());
    key[24..32].copy_from_slice(&0x6461_7267u64.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    let values = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    PartialGradient { partition, values }
}

// ---------------------------------------------------------------------------
// Worker side
// ---------------------------------------------------------------------------

/// Folds partials into the single coded vector for `row`, summing in
/// ascending partition order. A worker with an all-zero row returns an
/// empty participation notice.
pub fn encode_local(
    worker: usize,
    row: &[f64],
    partials: &[PartialGradient],
) -> Result<CodedGradient, DecodeError> {
    let by_partition: BTreeMap<usize, &PartialGradient> =
        partials.iter().map(|p| (p.partition, p)).collect();
    let mut values: Vec<f64> = Vec::new();
    let mut dim: Option<usize> = None;
    for (j, &coeff) in row.iter().enumerate() {
        if coeff == 0.0 {
            continue;
        }
        let partial = match by_partition.get(&j) {
            Some(p) => p,
            None if coeff.abs() > NONZERO_TOLERANCE => {
                return Err(DecodeError::MissingPartial { partition: j })
            }
            None => continue,
        };
        match dim {
            None => {
                dim = Some(partial.values.len());
                values = vec![0.0; partial.values.len()];
            }
            Some(d) if d != partial.values.len() => {
                return Err(DecodeError::WrongDimension {
                    expected: d,
                    got: partial.values.len(),
                })
            }
            Some(_) => {}
        }
        for (acc, &v) in values.iter_mut().zip(&partial.values) {
            *acc += coeff * v;
        }
    }
    Ok(CodedGradient { worker, values })
}

// ---------------------------------------------------------------------------
// Master side
// ---------------------------------------------------------------------------

/// Least-squares decoding vector over the active workers, or `None` when
/// the all-ones row is outside their span (residual above
/// [`span_residual_tolerance`]). Workers holding no partitions are
/// ignored; their coefficients stay exactly zero.
pub fn solve_decoding_vector(
    strategy: &CodingStrategy,
    active: &[usize],
) -> Option<DecodingVector> {
    let m = strategy.num_workers;
    let k = strategy.num_partitions;
    let mut act: Vec<usize> = active
        .iter()
        .copied()
        .filter(|&i| i < m && strategy.counts[i] > 0)
        .collect();
    act.sort_unstable();
    act.dedup();
    if act.is_empty() {
        return None;
    }
    // Solve B_active^T x = 1 in the least-squares sense.
    let a = DMatrix::from_fn(k, act.len(), |r, c| strategy.matrix[act[c] * k + r]);
    let b = DVector::from_element(k, 1.0);
    let (x, residual) = crate::linalg::least_squares(&a, &b);
    if residual > span_residual_tolerance(k) {
        return None;
    }
    let mut coefficients = vec![0.0; m];
    for (c, &i) in act.iter().enumerate() {
        coefficients[i] = x[c];
    }
    Some(DecodingVector { coefficients })
}

/// Per-worker completion times `load_i / c_i`, in config-partition units.
pub fn completion_times(strategy: &CodingStrategy, throughputs: &[f64]) -> Vec<f64> {
    assert_eq!(throughputs.len(), strategy.num_workers, "throughput count");
    (0..strategy.num_workers)
        .map(|i| strategy.load_units(i) / throughputs[i])
        .collect()
}

/// Where decoding first becomes possible when workers finish in completion
/// order and `stragglers` never arrive.
#[derive(Debug, Clone)]
pub struct EarliestDecode {
    /// 1-based position in the completion order at which decoding succeeds
    /// (straggler positions count, they just contribute nothing).
    pub j_star: usize,
    /// 0-based worker whose arrival completes the decode.
    pub worker: usize,
    /// That worker's completion time: the round makespan.
    pub time: f64,
    pub vector: DecodingVector,
    /// Arrived workers used for the decode, ascending.
    pub active: Vec<usize>,
}

/// Walks workers in completion order (ties to the lower index), skipping
/// stragglers, and returns the first prefix whose arrived workers can
/// decode. `None` when even all non-stragglers cannot.
pub fn earliest_decodable(
    strategy: &CodingStrategy,
    throughputs: &[f64],
    stragglers: &[usize],
) -> Option<EarliestDecode> {
    let m = strategy.num_workers;
    let times = completion_times(strategy, throughputs);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| times[a].partial_cmp(&times[b]).expect("finite times").then(a.cmp(&b)));
    let mut is_straggler = vec![false; m];
    for &w in stragglers {
        if w < m {
            is_straggler[w] = true;
        }
    }
    let mut arrived: Vec<usize> = Vec::new();
    for (pos, &w) in order.iter().enumerate() {
        if is_straggler[w] {
            continue;
        }
        arrived.push(w);
        if let Some(vector) = solve_decoding_vector(strategy, &arrived) {
            let mut active = arrived.clone();
            active.sort_unstable();
            return Some(EarliestDecode {
                j_star: pos + 1,
                worker: w,
                time: times[w],
                vector,
                active,
            });
        }
    }
    None
}

/// Recovers the full-dataset gradient `sum_i a_i * coded_i`, summing in
/// ascending worker order. Workers with exactly zero coefficient are
/// skipped; a missing coded gradient only matters when its coefficient is
/// above the zero tolerance.
pub fn recover_gradient(
    vector: &DecodingVector,
    coded: &BTreeMap<usize, CodedGradient>,
) -> Result<Vec<f64>, DecodeError> {
    let mut result: Option<Vec<f64>> = None;
    for (i, &a) in vector.coefficients.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let contribution = match coded.get(&i) {
            Some(c) if !c.values.is_empty() => c,
            _ if a.abs() > NONZERO_TOLERANCE => return Err(DecodeError::MissingCoded { worker: i }),
            _ => continue,
        };
        match &mut result {
            None => {
                let mut acc = vec![0.0; contribution.values.len()];
                for (r, &v) in acc.iter_mut().zip(&contribution.values) {
                    *r = a * v;
                }
                result = Some(acc);
            }
            Some(acc) => {
                if acc.len() != contribution.values.len() {
                    return Err(DecodeError::WrongDimension {
                        expected: acc.len(),
                        got: contribution.values.len(),
                    });
                }
                for (r, &v) in acc.iter_mut().zip(&contribution.values) {
                    *r += a * v;
                }
            }
        }
    }
    Ok(result.unwrap_or_default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::{build_strategy, SchemeKind};
    use crate::profiles::ClusterConfig;

    fn example1_heter() -> CodingStrategy {
        let cfg =
            ClusterConfig::from_throughputs(&[1.0, 2.0, 3.0, 4.0, 4.0], 7, 1, Some(42)).unwrap();
        build_strategy(&cfg, SchemeKind::HeterAware, None).unwrap()
    }

    // --- synthetic partials ---

    #[test]
    fn synthetic_partials_are_deterministic_and_keyed() {
        let a = synthetic_partial(9, 3, 2, 5);
        assert_eq!(a, synthetic_partial(9, 3, 2, 5));
        assert_eq!(a.values.len(), 5);
        assert!(a.values.iter().all(|v| (-1.0..1.0).contains(v)));
        assert_ne!(a.values, synthetic_partial(9, 4, 2, 5).values);
        assert_ne!(a.values, synthetic_partial(9, 3, 1, 5).values);
        assert_ne!(a.values, synthetic_partial(8, 3, 2, 5).values);
    }

    // --- encoding ---

    #[test]
    fn encode_folds_partials_with_coefficients() {
        let row = [0.0, 2.0, -0.5];
        let partials = vec![
            PartialGradient { partition: 1, values: vec![1.0, 10.0] },
            PartialGradient { partition: 2, values: vec![4.0, 2.0] },
        ];
        let coded = encode_local(0, &row, &partials).unwrap();
        assert_eq!(coded.values, vec![2.0 * 1.0 - 0.5 * 4.0, 2.0 * 10.0 - 0.5 * 2.0]);
    }

    #[test]
    fn encode_flags_missing_partials_and_dimension_drift() {
        let row = [1.0, 1.0];
        let partials = vec![PartialGradient { partition: 0, values: vec![1.0] }];
        assert!(matches!(
            encode_local(0, &row, &partials),
            Err(DecodeError::MissingPartial { partition: 1 })
        ));
        let bad = vec![
            PartialGradient { partition: 0, values: vec![1.0] },
            PartialGradient { partition: 1, values: vec![1.0, 2.0] },
        ];
        assert!(matches!(
            encode_local(0, &row, &bad),
            Err(DecodeError::WrongDimension { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn zero_row_encodes_to_participation_notice() {
        let coded = encode_local(3, &[0.0, 0.0], &[]).unwrap();
        assert!(coded.values.is_empty());
    }

    // --- decoding vectors ---

    #[test]
    fn decoding_vector_cancels_a_straggler() {
        let strategy = example1_heter();
        let active = [1usize, 2, 3, 4]; // worker 0 straggles
        let a = solve_decoding_vector(&strategy, &active).unwrap();
        assert_eq!(a.coefficients[0], 0.0);
        for j in 0..7 {
            let acc: f64 = (0..5).map(|i| a.coefficients[i] * strategy.matrix[i * 7 + j]).sum();
            assert!((acc - 1.0).abs() < 1e-8, "column {j}: {acc}");
        }
    }

    #[test]
    fn insufficient_active_set_is_infeasible_not_an_error() {
        let strategy = example1_heter();
        // Workers 1 and 2 cover partitions 2..6 only.
        assert!(solve_decoding_vector(&strategy, &[1, 2]).is_none());
        assert!(solve_decoding_vector(&strategy, &[]).is_none());
    }

    // --- earliest decodable prefix ---

    #[test]
    fn proportional_allocation_decodes_at_the_common_finish_time() {
        let strategy = example1_heter();
        let c = [1.0, 2.0, 3.0, 4.0, 4.0];
        let hit = earliest_decodable(&strategy, &c, &[]).unwrap();
        // Every worker finishes at exactly load/throughput = 1.
        assert_eq!(hit.time, 1.0);
        assert!(hit.j_star <= 5);
        let with_straggler = earliest_decodable(&strategy, &c, &[3]).unwrap();
        assert_eq!(with_straggler.time, 1.0);
        assert!(!with_straggler.active.contains(&3));
    }

    #[test]
    fn naive_strategy_cannot_decode_without_every_worker() {
        let cfg = ClusterConfig::from_throughputs(&[1.0, 1.0, 1.0], 3, 0, Some(1)).unwrap();
        let naive = build_strategy(&cfg, SchemeKind::Naive, None).unwrap();
        assert!(earliest_decodable(&naive, &[1.0, 1.0, 1.0], &[2]).is_none());
        let all = earliest_decodable(&naive, &[1.0, 1.0, 1.0], &[]).unwrap();
        assert_eq!(all.j_star, 3);
        // For the 0/1 single-copy matrix the decoding vector is all-ones.
        assert_eq!(all.vector.coefficients, vec![1.0, 1.0, 1.0]);
    }

    // --- end-to-end recovery ---

    #[test]
    fn recovery_matches_direct_summation() {
        let strategy = example1_heter();
        let seed = 42u64;
        let dim = 6usize;
        let round = 3u32;

        // Oracle: plain sum of the synthetic partials over all partitions.
        let mut expected = vec![0.0; dim];
        for j in 0..7 {
            for (e, v) in expected.iter_mut().zip(&synthetic_partial(seed, round, j, dim).values) {
                *e += v;
            }
        }

        for straggler in 0..5usize {
            let active: Vec<usize> = (0..5).filter(|&i| i != straggler).collect();
            let vector = solve_decoding_vector(&strategy, &active).unwrap();
            let mut coded = BTreeMap::new();
            for &i in &active {
                let partials: Vec<PartialGradient> = (0..7)
                    .filter(|&j| strategy.support.get(i, j))
                    .map(|j| synthetic_partial(seed, round, j, dim))
                    .collect();
                coded.insert(i, encode_local(i, strategy.row(i), &partials).unwrap());
            }
            let got = recover_gradient(&vector, &coded).unwrap();
            for (g, e) in got.iter().zip(&expected) {
                assert!(
                    (g - e).abs() <= 1e-6 * e.abs().max(1.0),
                    "straggler {straggler}: {g} vs {e}"
                );
            }
        }
    }

    #[test]
    fn recovery_requires_gradients_for_used_workers() {
        let strategy = example1_heter();
        let vector = solve_decoding_vector(&strategy, &[1, 2, 3, 4]).unwrap();
        let coded = BTreeMap::new();
        assert!(matches!(
            recover_gradient(&vector, &coded),
            Err(DecodeError::MissingCoded { .. })
        ));
    }
}
