//! Coding matrix construction and robustness verification.
//!
//! The coding matrix `B` has one row per worker and one column per
//! partition. Worker `i` sends the single vector `sum_j B[i][j] * g_j` over
//! its partitions, and `B` tolerates `s` stragglers exactly when the
//! all-ones row lies in the span of every `m - s` of its rows; the master
//! recovers `sum_j g_j` from any such subset.
//!
//! Construction draws an auxiliary matrix `C` ((s+1) rows, one column per
//! worker, uniform entries in (0,1)) and, for each partition, solves the
//! square system that makes `C * B` all-ones. Decoding vectors then come
//! from left null vectors of the straggler columns of `C`, which exist and
//! have usable coefficient sums precisely when `C` satisfies:
//!
//! * P1: every (s+1)-column submatrix is nonsingular;
//! * P2: for every s-column submatrix, the null vector's coefficients do
//!   not sum to zero.
//!
//! Random uniform matrices satisfy both with probability 1; the checks and
//! the conditioning guard below catch the numerically unlucky draws.

use crate::allocation::{self, SupportStructure};
use crate::decode;
use crate::groups;
use crate::linalg;
use crate::profiles::{ClusterConfig, ProfileError};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use thiserror::Error;

/// Entries with absolute value at or below this are treated as zero.
pub const NONZERO_TOLERANCE: f64 = 1e-12;
/// A partition's square system is rejected above this condition estimate.
pub const CONDITION_LIMIT: f64 = 1e8;
/// Extra auxiliary draws (seed+1, seed+2, ...) before giving up on a
/// conditioning failure.
pub const MAX_CONDITION_RETRIES: u64 = 16;
/// Exhaustive subset checks refuse to run past this many workers.
pub const ENUMERATION_GUARD_WORKERS: usize = 20;
/// ... or past this many subsets.
pub const ENUMERATION_GUARD_SUBSETS: u64 = 2_000_000;

/// Residual threshold for "the all-ones row is in the span": scales with
/// sqrt(k) because the target vector does.
pub fn span_residual_tolerance(num_partitions: usize) -> f64 {
    1e-8 * (num_partitions as f64).sqrt()
}

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

/// Which construction produced a strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    /// Single copy of each partition, no straggler tolerance, `B` is 0/1.
    Naive,
    /// Equal loads regardless of throughput, `s + 1` copies.
    Cyclic,
    /// Throughput-proportional loads, `s + 1` copies.
    HeterAware,
    /// Heterogeneity-aware with all-ones rows for exact-cover groups.
    GroupBased,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Naive => "naive",
            SchemeKind::Cyclic => "cyclic",
            SchemeKind::HeterAware => "heter_aware",
            SchemeKind::GroupBased => "group_based",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "naive" => Some(SchemeKind::Naive),
            "cyclic" => Some(SchemeKind::Cyclic),
            "heter_aware" => Some(SchemeKind::HeterAware),
            "group_based" => Some(SchemeKind::GroupBased),
            _ => None,
        }
    }

    pub fn all() -> [SchemeKind; 4] {
        [
            SchemeKind::Naive,
            SchemeKind::Cyclic,
            SchemeKind::HeterAware,
            SchemeKind::GroupBased,
        ]
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The random matrix `C` driving construction: `s + 1` rows, one column per
/// worker, entries drawn uniformly from the open interval (0,1).
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryMatrix {
    num_rows: usize,
    num_cols: usize,
    entries: Vec<f64>,
    /// Seed that produced the entries.
    pub seed: u64,
}

impl AuxiliaryMatrix {
    /// Wraps explicit entries (row-major); used by tests and verification.
    pub fn from_entries(num_rows: usize, num_cols: usize, entries: Vec<f64>, seed: u64) -> Self {
        assert_eq!(entries.len(), num_rows * num_cols, "entry count");
        AuxiliaryMatrix {
            num_rows,
            num_cols,
            entries,
            seed,
        }
    }

    pub fn rows(&self) -> usize {
        self.num_rows
    }

    pub fn cols(&self) -> usize {
        self.num_cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.num_cols + col]
    }

    /// Dense submatrix made of the given columns, in the order given.
    pub(crate) fn columns_submatrix(&self, cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.num_rows, cols.len(), |r, i| self.get(r, cols[i]))
    }
}

/// A complete, serializable coding strategy.
///
/// `num_partitions` is the strategy's own column count: the uniform
/// baselines re-partition the dataset into one slice per worker, so their
/// matrices are m-by-m while `partition_weight` (original partitions per
/// column) keeps compute loads comparable across schemes.
#[derive(Debug, Clone, PartialEq)]
pub struct CodingStrategy {
    pub scheme: SchemeKind,
    pub num_workers: usize,
    pub num_partitions: usize,
    pub num_stragglers: usize,
    /// Partitions per worker (row support sizes).
    pub counts: Vec<usize>,
    pub support: SupportStructure,
    /// Row-major m-by-k coding matrix.
    pub matrix: Vec<f64>,
    /// Auxiliary seed that actually produced `matrix` (after retries).
    pub seed: u64,
    /// Dataset weight of one column, in units of the config's partitions.
    pub partition_weight: f64,
    /// Throughputs the strategy was built for, in worker order.
    pub throughputs: Vec<f64>,
    /// Exact-cover groups (1-based member ids); `Some` only for
    /// `group_based`, empty when discovery found none and construction fell
    /// back to the plain heterogeneity-aware form.
    pub groups: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Error)]
pub enum CodingError {
    #[error("auxiliary matrix has {cols} columns but support has {m} workers")]
    ShapeMismatch { cols: usize, m: usize },
    #[error("partition {partition} is held by {have} workers, expected {need}")]
    SupportColumnMismatch {
        partition: usize,
        have: usize,
        need: usize,
    },
    #[error("partition {partition}: system condition {cond:.2e} exceeds {limit:.0e}")]
    IllConditioned {
        partition: usize,
        cond: f64,
        limit: f64,
    },
    #[error("no acceptably conditioned auxiliary matrix after {attempts} draws")]
    RetriesExhausted { attempts: u64 },
    #[error("exhaustive check over {subsets} subsets of {m} workers exceeds the guard")]
    EnumerationGuard { m: usize, subsets: u64 },
    #[error("naive scheme cannot tolerate stragglers (s = {s})")]
    NaiveWithStragglers { s: usize },
    #[error("strategy is not robust: no decoding vector for straggler set {pattern:?}")]
    NotRobust { pattern: Vec<usize> },
    #[error(transparent)]
    Allocation(#[from] allocation::AllocationError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Group(#[from] groups::GroupError),
    #[error("cannot read strategy {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("strategy file is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid strategy file: {0}")]
    InvalidStrategy(String),
}

// ---------------------------------------------------------------------------
// Auxiliary matrix generation and its two properties
// ---------------------------------------------------------------------------

/// Draws the (s+1)-by-m auxiliary matrix for `seed`, entries row by row
/// from a seeded ChaCha stream, uniform in the open interval (0,1).
pub fn generate_auxiliary(num_stragglers: usize, num_workers: usize, seed: u64) -> AuxiliaryMatrix {
    let num_rows = num_stragglers + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(num_rows * num_workers);
    for _ in 0..num_rows * num_workers {
        // gen::<f64>() samples [0,1); redraw the (measure-zero) exact 0.
        let v = loop {
            let v: f64 = rng.gen();
            if v > 0.0 {
                break v;
            }
        };
        entries.push(v);
    }
    AuxiliaryMatrix {
        num_rows,
        num_cols: num_workers,
        entries,
        seed,
    }
}

pub(crate) fn enumeration_guard(m: usize, subset_size: usize) -> Result<(), CodingError> {
    let subsets = linalg::count_combinations(m, subset_size);
    if m > ENUMERATION_GUARD_WORKERS || subsets > ENUMERATION_GUARD_SUBSETS {
        return Err(CodingError::EnumerationGuard { m, subsets });
    }
    Ok(())
}

/// P1: every (s+1)-column submatrix of `C` is nonsingular.
///
/// Checked exhaustively (guarded), a submatrix counting as singular when
/// its smallest singular value falls below `1e-10` of its largest.
pub fn verify_p1(aux: &AuxiliaryMatrix) -> Result<bool, CodingError> {
    if aux.rows() > aux.cols() {
        return Err(CodingError::ShapeMismatch {
            cols: aux.cols(),
            m: aux.rows(),
        });
    }
    enumeration_guard(aux.cols(), aux.rows())?;
    let mut ok = true;
    linalg::for_each_combination(aux.cols(), aux.rows(), |cols| {
        if !ok {
            return;
        }
        let sub = aux.columns_submatrix(cols);
        let (sigma_min, sigma_max) = linalg::singular_extremes(&sub);
        if !(sigma_max > 0.0) || sigma_min <= sigma_max * 1e-10 {
            ok = false;
        }
    });
    Ok(ok)
}

/// P2: for every s-column submatrix `C'`, the (up to scale unique) nonzero
/// row vector annihilating it has coefficients that do not sum to zero.
///
/// The null vector is the cofactor vector `lambda_i = (-1)^i det(C'
/// without row i)`; a vanishing cofactor vector means `C'` lost rank, which
/// also fails the property.
pub fn verify_p2(aux: &AuxiliaryMatrix) -> Result<bool, CodingError> {
    let s = aux.rows() - 1;
    if s == 0 {
        // No straggler columns to annihilate; any nonzero scalar qualifies.
        return Ok(true);
    }
    if s > aux.cols() {
        return Err(CodingError::ShapeMismatch {
            cols: aux.cols(),
            m: s,
        });
    }
    enumeration_guard(aux.cols(), s)?;
    let mut ok = true;
    linalg::for_each_combination(aux.cols(), s, |cols| {
        if !ok {
            return;
        }
        let sub = aux.columns_submatrix(cols); // (s+1) x s
        let mut lambda = Vec::with_capacity(s + 1);
        for drop_row in 0..s + 1 {
            let minor = DMatrix::from_fn(s, s, |r, c| {
                let row = if r < drop_row { r } else { r + 1 };
                sub[(row, c)]
            });
            let sign = if drop_row % 2 == 0 { 1.0 } else { -1.0 };
            lambda.push(sign * minor.determinant());
        }
        let norm = lambda.iter().map(|v| v * v).sum::<f64>().sqrt();
        let sum: f64 = lambda.iter().sum();
        if norm <= 1e-12 || sum.abs() <= 1e-9 * norm {
            ok = false;
        }
    });
    Ok(ok)
}

// ---------------------------------------------------------------------------
// Matrix construction
// ---------------------------------------------------------------------------

/// Builds the coding matrix for `support` from `aux`.
///
/// For each partition the workers holding it form a square system
/// `C_j d = 1`; the solution becomes that partition's column of `B`, so
/// `C * B` is the all-ones matrix. Systems with condition estimate above
/// [`CONDITION_LIMIT`] are rejected so the caller can redraw `aux`.
pub fn construct_b(
    support: &SupportStructure,
    aux: &AuxiliaryMatrix,
) -> Result<Vec<f64>, CodingError> {
    let m = support.num_workers;
    let k = support.num_partitions;
    if aux.cols() != m {
        return Err(CodingError::ShapeMismatch { cols: aux.cols(), m });
    }
    let copies = aux.rows();
    let mut b = vec![0.0; m * k];
    for j in 0..k {
        let holders = support.column_rows(j);
        if holders.len() != copies {
            return Err(CodingError::SupportColumnMismatch {
                partition: j + 1,
                have: holders.len(),
                need: copies,
            });
        }
        let c_j = aux.columns_submatrix(&holders);
        let cond = linalg::condition_estimate(&c_j);
        if !(cond <= CONDITION_LIMIT) {
            return Err(CodingError::IllConditioned {
                partition: j + 1,
                cond,
                limit: CONDITION_LIMIT,
            });
        }
        let ones = DVector::from_element(copies, 1.0);
        let d = linalg::solve_square(&c_j, &ones).ok_or(CodingError::IllConditioned {
            partition: j + 1,
            cond: f64::INFINITY,
            limit: CONDITION_LIMIT,
        })?;
        for (r, &w) in holders.iter().enumerate() {
            b[w * k + j] = d[r];
        }
    }
    Ok(b)
}

/// Repeatedly draws auxiliary matrices (seed, seed+1, ...) until
/// construction accepts one. Returns the matrix and the seed that worked.
pub(crate) fn construct_with_retries(
    support: &SupportStructure,
    num_stragglers: usize,
    seed: u64,
) -> Result<(Vec<f64>, u64), CodingError> {
    let m = support.num_workers;
    for attempt in 0..=MAX_CONDITION_RETRIES {
        let aux = generate_auxiliary(num_stragglers, m, seed.wrapping_add(attempt));
        match construct_b(support, &aux) {
            Ok(b) => return Ok((b, aux.seed)),
            Err(CodingError::IllConditioned { partition, cond, .. }) => {
                log::warn!(
                    "auxiliary seed {} rejected (partition {partition}, condition {cond:.2e}); redrawing",
                    aux.seed
                );
            }
            Err(other) => return Err(other),
        }
    }
    Err(CodingError::RetriesExhausted {
        attempts: MAX_CONDITION_RETRIES + 1,
    })
}

/// Builds a strategy of the requested kind for `config`.
///
/// `seed_override` replaces the config's seed when given. The uniform
/// baselines (`naive`, `cyclic`) slice the dataset into one partition per
/// worker and carry the original-partition weight `k/m`; the
/// heterogeneity-aware schemes keep the config's `k`.
pub fn build_strategy(
    config: &ClusterConfig,
    scheme: SchemeKind,
    seed_override: Option<u64>,
) -> Result<CodingStrategy, CodingError> {
    let seed = seed_override.unwrap_or_else(|| config.effective_seed());
    let m = config.num_workers();
    let k = config.num_partitions;
    let s = config.num_stragglers;
    match scheme {
        SchemeKind::Naive => {
            if s > 0 {
                return Err(CodingError::NaiveWithStragglers { s });
            }
            let counts = vec![1usize; m];
            let alloc = allocation::cyclic_allocate(&counts, m)?;
            let support = allocation::support_structure(&alloc, m);
            let matrix = support
                .to_mask()
                .iter()
                .map(|&held| if held { 1.0 } else { 0.0 })
                .collect();
            Ok(CodingStrategy {
                scheme,
                num_workers: m,
                num_partitions: m,
                num_stragglers: 0,
                counts,
                support,
                matrix,
                seed,
                partition_weight: k as f64 / m as f64,
                throughputs: config.throughputs(),
                groups: None,
            })
        }
        SchemeKind::Cyclic => {
            // Uniform division: one slice per worker, s+1 copies of each.
            let uniform = ClusterConfig::from_throughputs(&vec![1.0; m], m, s, Some(seed))?;
            let counts = allocation::compute_partition_counts(&uniform)?;
            let alloc = allocation::cyclic_allocate(&counts, m)?;
            let support = allocation::support_structure(&alloc, m);
            let (matrix, used_seed) = construct_with_retries(&support, s, seed)?;
            Ok(CodingStrategy {
                scheme,
                num_workers: m,
                num_partitions: m,
                num_stragglers: s,
                counts,
                support,
                matrix,
                seed: used_seed,
                partition_weight: k as f64 / m as f64,
                throughputs: config.throughputs(),
                groups: None,
            })
        }
        SchemeKind::HeterAware => {
            let counts = allocation::compute_partition_counts(config)?;
            let alloc = allocation::cyclic_allocate(&counts, k)?;
            let support = allocation::support_structure(&alloc, k);
            let (matrix, used_seed) = construct_with_retries(&support, s, seed)?;
            Ok(CodingStrategy {
                scheme,
                num_workers: m,
                num_partitions: k,
                num_stragglers: s,
                counts,
                support,
                matrix,
                seed: used_seed,
                partition_weight: 1.0,
                throughputs: config.throughputs(),
                groups: None,
            })
        }
        SchemeKind::GroupBased => groups::build_group_based(config, seed),
    }
}

// ---------------------------------------------------------------------------
// Verification
// ---------------------------------------------------------------------------

/// Exhaustively checks robustness: every straggler set of size `s` must
/// leave the all-ones row inside the span of the surviving rows.
pub fn verify_condition1(strategy: &CodingStrategy) -> Result<bool, CodingError> {
    let m = strategy.num_workers;
    let s = strategy.num_stragglers;
    enumeration_guard(m, s)?;
    let mut ok = true;
    linalg::for_each_combination(m, s, |pattern| {
        if !ok {
            return;
        }
        let active: Vec<usize> = (0..m).filter(|i| !pattern.contains(i)).collect();
        if decode::solve_decoding_vector(strategy, &active).is_none() {
            ok = false;
        }
    });
    Ok(ok)
}

/// Maximum deviation of the construction identity from exact:
/// `C * B = all-ones` for the randomized schemes, `B = support` for naive,
/// all-ones rows plus the residual identity for group strategies.
pub fn construction_residual(strategy: &CodingStrategy) -> Result<f64, CodingError> {
    let m = strategy.num_workers;
    let k = strategy.num_partitions;
    let s = strategy.num_stragglers;
    let product_residual = |aux: &AuxiliaryMatrix, rows: &[usize]| -> f64 {
        let mut worst = 0.0f64;
        for r in 0..aux.rows() {
            for j in 0..k {
                let mut acc = 0.0;
                for (c, &w) in rows.iter().enumerate() {
                    acc += aux.get(r, c) * strategy.matrix[w * k + j];
                }
                worst = worst.max((acc - 1.0).abs());
            }
        }
        worst
    };
    match strategy.scheme {
        SchemeKind::Naive => {
            let mut worst = 0.0f64;
            for i in 0..m {
                for j in 0..k {
                    let want = if strategy.support.get(i, j) { 1.0 } else { 0.0 };
                    worst = worst.max((strategy.matrix[i * k + j] - want).abs());
                }
            }
            Ok(worst)
        }
        SchemeKind::Cyclic | SchemeKind::HeterAware => {
            let aux = generate_auxiliary(s, m, strategy.seed);
            let all: Vec<usize> = (0..m).collect();
            Ok(product_residual(&aux, &all))
        }
        SchemeKind::GroupBased => {
            let groups = strategy.groups.clone().unwrap_or_default();
            if groups.is_empty() {
                let aux = generate_auxiliary(s, m, strategy.seed);
                let all: Vec<usize> = (0..m).collect();
                return Ok(product_residual(&aux, &all));
            }
            let mut member = vec![false; m];
            for group in &groups {
                for &w in group {
                    member[w - 1] = true;
                }
            }
            let mut worst = 0.0f64;
            for i in 0..m {
                if !member[i] {
                    continue;
                }
                for j in 0..k {
                    let want = if strategy.support.get(i, j) { 1.0 } else { 0.0 };
                    worst = worst.max((strategy.matrix[i * k + j] - want).abs());
                }
            }
            let residual_rows: Vec<usize> = (0..m).filter(|&i| !member[i]).collect();
            let p = groups.len();
            if p <= s && !residual_rows.is_empty() {
                let aux = generate_auxiliary(s - p, residual_rows.len(), strategy.seed);
                // aux columns are indexed by residual position, matching the
                // order used at construction time.
                let mut acc_worst = 0.0f64;
                for r in 0..aux.rows() {
                    for j in 0..k {
                        let mut acc = 0.0;
                        for (c, &w) in residual_rows.iter().enumerate() {
                            acc += aux.get(r, c) * strategy.matrix[w * k + j];
                        }
                        acc_worst = acc_worst.max((acc - 1.0).abs());
                    }
                }
                worst = worst.max(acc_worst);
            } else {
                // All copies live inside groups; residual rows must be zero.
                for &i in &residual_rows {
                    for j in 0..k {
                        worst = worst.max(strategy.matrix[i * k + j].abs());
                    }
                }
            }
            Ok(worst)
        }
    }
}

/// One precomputed decoding vector per straggler pattern of size exactly
/// `s`, patterns in lexicographic order of 1-based worker ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TableEntry {
    pub stragglers: Vec<usize>,
    pub vector: decode::DecodingVector,
}

/// Precomputes decoding vectors for all `C(m, s)` straggler patterns.
pub fn build_decoding_table(strategy: &CodingStrategy) -> Result<Vec<TableEntry>, CodingError> {
    let m = strategy.num_workers;
    let s = strategy.num_stragglers;
    enumeration_guard(m, s)?;
    let mut table = Vec::new();
    let mut failed: Option<Vec<usize>> = None;
    linalg::for_each_combination(m, s, |pattern| {
        if failed.is_some() {
            return;
        }
        let active: Vec<usize> = (0..m).filter(|i| !pattern.contains(i)).collect();
        match decode::solve_decoding_vector(strategy, &active) {
            Some(vector) => table.push(TableEntry {
                stragglers: pattern.iter().map(|&i| i + 1).collect(),
                vector,
            }),
            None => failed = Some(pattern.iter().map(|&i| i + 1).collect()),
        }
    });
    if let Some(pattern) = failed {
        return Err(CodingError::NotRobust { pattern });
    }
    Ok(table)
}

// ---------------------------------------------------------------------------
// Strategy accessors and serialization
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct StrategyFile {
    scheme: String,
    workers: usize,
    partitions: usize,
    stragglers: usize,
    counts: Vec<usize>,
    support: Vec<bool>,
    matrix: Vec<f64>,
    seed: u64,
    partition_weight: f64,
    throughputs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    groups: Option<Vec<Vec<usize>>>,
}

impl CodingStrategy {
    /// Row `i` (0-based) of the coding matrix.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.num_partitions..(i + 1) * self.num_partitions]
    }

    /// Whether entry (i, j) counts as nonzero under [`NONZERO_TOLERANCE`].
    pub fn is_nonzero(&self, i: usize, j: usize) -> bool {
        self.matrix[i * self.num_partitions + j].abs() > NONZERO_TOLERANCE
    }

    /// Compute load of worker `i` in config-partition units.
    pub fn load_units(&self, i: usize) -> f64 {
        self.counts[i] as f64 * self.partition_weight
    }

    /// 0-based ids of workers whose rows are exactly all-ones on their
    /// support (group members).
    pub fn group_member_rows(&self) -> Vec<usize> {
        let mut member = vec![false; self.num_workers];
        if let Some(groups) = &self.groups {
            for group in groups {
                for &w in group {
                    member[w - 1] = true;
                }
            }
        }
        (0..self.num_workers).filter(|&i| member[i]).collect()
    }

    /// Text sketch of the matrix: `1` for group rows on support, `*` for
    /// other nonzero entries, `0` elsewhere.
    pub fn to_skeleton_text(&self) -> String {
        let member_rows = self.group_member_rows();
        let mut member = vec![false; self.num_workers];
        for &i in &member_rows {
            member[i] = true;
        }
        let mut out = String::new();
        for i in 0..self.num_workers {
            let cells: Vec<&str> = (0..self.num_partitions)
                .map(|j| {
                    if !self.is_nonzero(i, j) {
                        "0"
                    } else if member[i] {
                        "1"
                    } else {
                        "*"
                    }
                })
                .collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        out
    }

    /// Serializes to JSON; matrix entries round-trip bit-exactly.
    pub fn to_json(&self) -> String {
        let file = StrategyFile {
            scheme: self.scheme.name().to_string(),
            workers: self.num_workers,
            partitions: self.num_partitions,
            stragglers: self.num_stragglers,
            counts: self.counts.clone(),
            support: self.support.to_mask(),
            matrix: self.matrix.clone(),
            seed: self.seed,
            partition_weight: self.partition_weight,
            throughputs: self.throughputs.clone(),
            groups: self.groups.clone(),
        };
        let mut text = serde_json::to_string_pretty(&file).expect("strategy serializes");
        text.push('\n');
        text
    }

    /// Parses and structurally validates a strategy.
    pub fn from_json(text: &str) -> Result<Self, CodingError> {
        let file: StrategyFile = serde_json::from_str(text)?;
        let scheme = SchemeKind::parse(&file.scheme)
            .ok_or_else(|| CodingError::InvalidStrategy(format!("unknown scheme {:?}", file.scheme)))?;
        let m = file.workers;
        let k = file.partitions;
        let invalid = |msg: String| Err(CodingError::InvalidStrategy(msg));
        if m == 0 || k == 0 {
            return invalid("zero workers or partitions".into());
        }
        if file.support.len() != m * k || file.matrix.len() != m * k {
            return invalid(format!(
                "support/matrix length must be {} for {m} workers x {k} partitions",
                m * k
            ));
        }
        if file.counts.len() != m || file.throughputs.len() != m {
            return invalid("counts and throughputs must have one entry per worker".into());
        }
        if !(file.partition_weight > 0.0) || !file.partition_weight.is_finite() {
            return invalid(format!("bad partition weight {}", file.partition_weight));
        }
        if file.stragglers >= m {
            return invalid(format!("straggler budget {} with {m} workers", file.stragglers));
        }
        let support = SupportStructure::from_mask(m, k, file.support);
        for i in 0..m {
            if support.row_count(i) != file.counts[i] {
                return invalid(format!(
                    "worker {} count {} disagrees with its support row",
                    i + 1,
                    file.counts[i]
                ));
            }
            for j in 0..k {
                if !support.get(i, j) && file.matrix[i * k + j].abs() > NONZERO_TOLERANCE {
                    return invalid(format!(
                        "matrix entry ({},{}) is nonzero outside the support",
                        i + 1,
                        j + 1
                    ));
                }
            }
        }
        if let Some(groups) = &file.groups {
            if scheme != SchemeKind::GroupBased {
                return invalid("groups present on a non-group scheme".into());
            }
            for group in groups {
                for &w in group {
                    if w == 0 || w > m {
                        return invalid(format!("group member {w} out of range"));
                    }
                }
            }
        }
        Ok(CodingStrategy {
            scheme,
            num_workers: m,
            num_partitions: k,
            num_stragglers: file.stragglers,
            counts: file.counts,
            support,
            matrix: file.matrix,
            seed: file.seed,
            partition_weight: file.partition_weight,
            throughputs: file.throughputs,
            groups: file.groups,
        })
    }

    /// Writes the strategy to a file.
    pub fn save(&self, path: &Path) -> Result<(), CodingError> {
        std::fs::write(path, self.to_json()).map_err(|source| CodingError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Reads and validates a strategy from a file.
    pub fn load(path: &Path) -> Result<Self, CodingError> {
        let text = std::fs::read_to_string(path).map_err(|source| CodingError::Io {
            path: path.display().to_string(),
            source,
        })?;
        CodingStrategy::from_json(&text)
    }
}
