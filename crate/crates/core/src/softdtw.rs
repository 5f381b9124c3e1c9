//! Soft dynamic time warping: smoothed-min alignment cost over a pairwise
//! cost matrix, with an exact analytic backward pass.
//!
//! The forward table uses the standard recursion
//! `R[i,j] = D[i,j] + softmin_gamma(R[i-1,j-1], R[i-1,j], R[i,j-1])`
//! where `softmin_gamma(a..) = -gamma * ln(sum exp(-a/gamma))`. As gamma
//! approaches 0 this converges to the classic hard alignment cost. The
//! backward pass computes alignment expectations E without re-running
//! forward, so the whole thing stays O(n*m).

use crate::real::{rr, Real};
use ndarray::Array2;

/// Softmin with max-shift; exponents are always <= 0 so this never overflows.
fn softmin3<R: Real>(a: R, b: R, c: R, gamma: R) -> R {
    let m = a.min(b).min(c);
    if m == R::infinity() {
        return m;
    }
    let sum = ((m - a) / gamma).exp() + ((m - b) / gamma).exp() + ((m - c) / gamma).exp();
    m - gamma * sum.ln()
}

/// Forward DP table, padded to (n+2) x (m+2) so the backward sweep can read
/// one past the edge. `R[n][m]` (1-indexed) holds the soft alignment cost.
pub fn forward_table<R: Real>(cost: &Array2<R>, gamma: R) -> Array2<R> {
    let (n, m) = cost.dim();
    assert!(n > 0 && m > 0, "soft-dtw needs non-empty sequences");
    let mut r = Array2::from_elem((n + 2, m + 2), R::infinity());
    r[(0, 0)] = R::zero();
    for i in 1..=n {
        for j in 1..=m {
            let smin = softmin3(r[(i - 1, j - 1)], r[(i - 1, j)], r[(i, j - 1)], gamma);
            r[(i, j)] = cost[(i - 1, j - 1)] + smin;
        }
    }
    r
}

/// Scalar soft-DTW value for a cost matrix (convenience for non-graph use).
pub fn value<R: Real>(cost: &Array2<R>, gamma: R) -> R {
    let (n, m) = cost.dim();
    forward_table(cost, gamma)[(n, m)]
}

/// Gradient of the soft alignment cost with respect to each cost entry:
/// the expected alignment matrix E, computed by the reverse recursion.
pub fn backward_table<R: Real>(cost: &Array2<R>, r: &Array2<R>, gamma: R) -> Array2<R> {
    let (n, m) = cost.dim();
    let pad = |i: usize, j: usize| -> R {
        if i >= 1 && i <= n && j >= 1 && j <= m {
            cost[(i - 1, j - 1)]
        } else {
            R::zero()
        }
    };
    // re-pad the forward table edges for the reverse sweep
    let mut rr_tab = r.clone();
    for i in 1..=n {
        rr_tab[(i, m + 1)] = R::neg_infinity();
    }
    for j in 1..=m {
        rr_tab[(n + 1, j)] = R::neg_infinity();
    }
    rr_tab[(n + 1, m + 1)] = r[(n, m)];

    let mut e = Array2::zeros((n + 2, m + 2));
    e[(n + 1, m + 1)] = R::one();
    for i in (1..=n).rev() {
        for j in (1..=m).rev() {
            let exp_or_zero = |num: R| -> R {
                if num == R::neg_infinity() {
                    R::zero()
                } else {
                    (num / gamma).exp()
                }
            };
            let a = exp_or_zero(rr_tab[(i + 1, j)] - rr_tab[(i, j)] - pad(i + 1, j));
            let b = exp_or_zero(rr_tab[(i, j + 1)] - rr_tab[(i, j)] - pad(i, j + 1));
            let c = exp_or_zero(rr_tab[(i + 1, j + 1)] - rr_tab[(i, j)] - pad(i + 1, j + 1));
            e[(i, j)] = a * e[(i + 1, j)] + b * e[(i, j + 1)] + c * e[(i + 1, j + 1)];
        }
    }
    Array2::from_shape_fn((n, m), |(i, j)| e[(i + 1, j + 1)])
}

/// Pairwise squared Euclidean cost matrix between row sequences.
pub fn squared_cost<R: Real>(a: &Array2<R>, b: &Array2<R>) -> Array2<R> {
    assert_eq!(a.ncols(), b.ncols(), "cost matrix needs matching feature dims");
    Array2::from_shape_fn((a.nrows(), b.nrows()), |(i, j)| {
        a.row(i)
            .iter()
            .zip(b.row(j).iter())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum()
    })
}

/// Classic (hard) DTW over a cost matrix. Reference implementation used by
/// tests to pin down the small-gamma limit; not part of the training path.
pub fn hard_dtw<R: Real>(cost: &Array2<R>) -> R {
    let (n, m) = cost.dim();
    let mut r = Array2::from_elem((n + 1, m + 1), R::infinity());
    r[(0, 0)] = R::zero();
    for i in 1..=n {
        for j in 1..=m {
            let best = r[(i - 1, j - 1)].min(r[(i - 1, j)]).min(r[(i, j - 1)]);
            r[(i, j)] = cost[(i - 1, j - 1)] + best;
        }
    }
    r[(n, m)]
}

/// Soft-DTW between two sequences built on the graph so gradients flow into
/// both; returns the scalar node.
pub fn soft_dtw_node<R: Real>(
    g: &mut crate::graph::Graph<R>,
    a: crate::graph::NodeId,
    b: crate::graph::NodeId,
    gamma: R,
) -> crate::graph::NodeId {
    let (n, da) = g.shape(a);
    let (m, db) = g.shape(b);
    assert_eq!(da, db, "soft-dtw feature dims must match");
    // ||a_i - b_j||^2 = ||a_i||^2 + ||b_j||^2 - 2 a_i . b_j
    let a_sq = g.mul(a, a);
    let a_norm = {
        let ones = g.input(Array2::from_elem((da, 1), R::one()));
        g.matmul(a_sq, ones) // n x 1
    };
    let b_sq = g.mul(b, b);
    let b_norm = {
        let ones = g.input(Array2::from_elem((db, 1), R::one()));
        g.matmul(b_sq, ones) // m x 1
    };
    let bt = g.transpose(b);
    let ab = g.matmul(a, bt); // n x m
    let minus2ab = g.scale(ab, -rr::<R>(2.0));
    let ones_row_m = g.input(Array2::from_elem((1, m), R::one()));
    let a_norm_mat = g.matmul(a_norm, ones_row_m); // n x m
    let ones_col_n = g.input(Array2::from_elem((n, 1), R::one()));
    let b_norm_t = g.transpose(b_norm); // 1 x m
    let b_norm_mat = g.matmul(ones_col_n, b_norm_t); // n x m
    let partial = g.add(a_norm_mat, b_norm_mat);
    let cost = g.add(partial, minus2ab);
    g.soft_dtw(cost, gamma)
}
