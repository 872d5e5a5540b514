//! Crate-internal dense solves and subset enumeration.
//!
//! Everything here operates on matrices no larger than a few dozen rows, so
//! clarity wins over asymptotics: LU for square systems, SVD for
//! least-squares, conditioning and null-space questions.

use nalgebra::{DMatrix, DVector};

/// Solves `a * x = b` for square `a` via partial-pivot LU.
/// Returns `None` when the factorization finds `a` singular.
pub(crate) fn solve_square(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().lu().solve(b)
}

/// Least-squares solution of `a * x ≈ b` with the residual 2-norm, via
/// Householder QR with column pivoting. Rank-deficient systems (decoding
/// matrices are often exactly rank-deficient: duplicated rows, group
/// structure) get a basic solution — dependent columns' coefficients stay
/// exactly zero. Columns whose remaining mass is below `1e-13` of the
/// largest column norm count as dependent; pivot ties go to the lower
/// index, so the result is deterministic.
pub(crate) fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, f64) {
    let rows = a.nrows();
    let cols = a.ncols();
    let mut r = a.clone();
    let mut qtb = b.clone();
    let mut perm: Vec<usize> = (0..cols).collect();

    let col_mass = |r: &DMatrix<f64>, from: usize, j: usize| -> f64 {
        (from..rows).map(|i| r[(i, j)] * r[(i, j)]).sum::<f64>().sqrt()
    };
    let cutoff = 1e-13 * (0..cols).map(|j| col_mass(&r, 0, j)).fold(0.0, f64::max);

    let mut rank = 0;
    for t in 0..rows.min(cols) {
        let (pivot, mass) = (t..cols)
            .map(|j| (j, col_mass(&r, t, j)))
            .fold((t, 0.0), |best, cand| if cand.1 > best.1 { cand } else { best });
        if mass <= cutoff {
            break;
        }
        r.swap_columns(t, pivot);
        perm.swap(t, pivot);

        // Householder reflector sending column t's tail onto +/- e1.
        let alpha = if r[(t, t)] >= 0.0 { -mass } else { mass };
        let mut v: Vec<f64> = (t..rows).map(|i| r[(i, t)]).collect();
        v[0] -= alpha;
        let vtv: f64 = v.iter().map(|z| z * z).sum();
        if vtv > 0.0 {
            let beta = 2.0 / vtv;
            for j in t..cols {
                let dot: f64 = v.iter().enumerate().map(|(i, &z)| z * r[(t + i, j)]).sum();
                let f = beta * dot;
                for (i, &z) in v.iter().enumerate() {
                    r[(t + i, j)] -= f * z;
                }
            }
            let dot: f64 = v.iter().enumerate().map(|(i, &z)| z * qtb[t + i]).sum();
            let f = beta * dot;
            for (i, &z) in v.iter().enumerate() {
                qtb[t + i] -= f * z;
            }
        }
        r[(t, t)] = alpha;
        for i in t + 1..rows {
            r[(i, t)] = 0.0;
        }
        rank += 1;
    }

    // Back substitution over the leading rank-by-rank triangle.
    let mut x = DVector::zeros(cols);
    for i in (0..rank).rev() {
        let mut acc = qtb[i];
        for j in i + 1..rank {
            acc -= r[(i, j)] * x[perm[j]];
        }
        x[perm[i]] = acc / r[(i, i)];
    }
    let residual = (a * &x - b).norm();
    (x, residual)
}

/// Ratio of largest to smallest singular value; `f64::INFINITY` when the
/// smallest vanishes.
pub(crate) fn condition_estimate(a: &DMatrix<f64>) -> f64 {
    let svd = a.clone().svd(false, false);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let sigma_min = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if sigma_min <= 0.0 || sigma_max <= 0.0 {
        return f64::INFINITY;
    }
    sigma_max / sigma_min
}

/// Smallest and largest singular values of `a`.
pub(crate) fn singular_extremes(a: &DMatrix<f64>) -> (f64, f64) {
    let svd = a.clone().svd(false, false);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let sigma_min = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    (sigma_min.min(sigma_max), sigma_max)
}

/// Calls `f` with every r-element subset of `0..n`, in lexicographic order.
pub(crate) fn for_each_combination(n: usize, r: usize, mut f: impl FnMut(&[usize])) {
    if r > n {
        return;
    }
    if r == 0 {
        f(&[]);
        return;
    }
    let mut idx: Vec<usize> = (0..r).collect();
    loop {
        f(&idx);
        let mut i = r - 1;
        while idx[i] == i + n - r {
            if i == 0 {
                return;
            }
            i -= 1;
        }
        idx[i] += 1;
        for j in i + 1..r {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Number of r-element subsets of an n-element set, saturating at u64::MAX.
pub(crate) fn count_combinations(n: usize, r: usize) -> u64 {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for i in 0..r {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}
