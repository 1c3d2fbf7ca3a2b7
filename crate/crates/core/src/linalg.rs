//! Least squares by Householder QR with column pivoting.

/// Relative threshold on `|R_kk| / |R_00|` below which a column is treated as
/// linearly dependent on the ones already chosen.
pub const RANK_TOL: f64 = 1e-11;

/// Minimises `‖Σ_k w_k c_k − y‖₂` over `w`.
///
/// Columns are pivoted greedily by remaining norm (lowest index wins ties).
/// Columns found dependent under [`RANK_TOL`] get weight zero, so the result
/// is the basic solution rather than the minimum-norm one.
pub fn least_squares(columns: &[&[f64]], y: &[f64]) -> Vec<f64> {
    let ncols = columns.len();
    let nrows = y.len();
    if ncols == 0 {
        return Vec::new();
    }
    for c in columns {
        assert_eq!(c.len(), nrows, "column length must match targets");
    }
    // column-major working copy
    let mut a: Vec<Vec<f64>> = columns.iter().map(|c| c.to_vec()).collect();
    let mut rhs = y.to_vec();
    let mut perm: Vec<usize> = (0..ncols).collect();
    let mut norms: Vec<f64> = a.iter().map(|c| dot(c, c)).collect();
    let steps = ncols.min(nrows);
    let mut rank = 0;
    let mut r00 = 0.0;

    for k in 0..steps {
        // pivot: largest remaining norm, lowest index on ties
        let mut best = k;
        for j in k + 1..ncols {
            if norms[j] > norms[best] {
                best = j;
            }
        }
        if best != k {
            a.swap(k, best);
            norms.swap(k, best);
            perm.swap(k, best);
        }
        // recompute to avoid drift in the downdated norms
        let col_norm = a[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if k == 0 {
            r00 = col_norm;
        }
        if col_norm == 0.0 || col_norm <= RANK_TOL * r00 {
            break;
        }
        rank += 1;

        let alpha = if a[k][k] > 0.0 { -col_norm } else { col_norm };
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2 = dot(&v, &v);
        if vnorm2 > 0.0 {
            for j in k + 1..ncols {
                let s = 2.0 * dot(&v, &a[j][k..]) / vnorm2;
                for (x, vi) in a[j][k..].iter_mut().zip(&v) {
                    *x -= s * vi;
                }
                let head = a[j][k];
                norms[j] = (norms[j] - head * head).max(0.0);
            }
            let s = 2.0 * dot(&v, &rhs[k..]) / vnorm2;
            for (x, vi) in rhs[k..].iter_mut().zip(&v) {
                *x -= s * vi;
            }
        }
        a[k][k] = alpha;
        for x in &mut a[k][k + 1..] {
            *x = 0.0;
        }
    }

    // back substitution on the leading rank × rank triangle
    let mut w_perm = vec![0.0; ncols];
    for i in (0..rank).rev() {
        let mut s = rhs[i];
        for j in i + 1..rank {
            s -= a[j][i] * w_perm[j];
        }
        w_perm[i] = s / a[i][i];
    }
    let mut w = vec![0.0; ncols];
    for (k, &p) in perm.iter().enumerate() {
        w[p] = w_perm[k];
    }
    w
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}
