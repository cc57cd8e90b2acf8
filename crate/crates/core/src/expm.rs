//! Transition matrices `exp(Q dt)` of conservative rate matrices.
//!
//! The exponential is taken of the shifted, entrywise nonnegative matrix
//! `P = (Q + lambda I) dt` with `lambda = max_i -Q[i,i]`, so every Taylor
//! term and every squaring is a sum of nonnegative numbers and the result is
//! nonnegative without any clamping: `exp(Q dt) = e^{-lambda dt} exp(P)`.

use crate::Matrix;

/// Scaled argument norm bound for the Taylor phase.
const SCALED_NORM: f64 = 0.5;
/// Remainder target of the truncated series after scaling.
const SERIES_REMAINDER: f64 = 1e-16;
const MAX_TERMS: usize = 40;

/// Diagnostics of one exponential evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpmInfo {
    pub squarings: u32,
    pub terms: usize,
    /// Bound on the truncated series tail of the scaled exponential.
    pub remainder_bound: f64,
}

/// `exp(q * dt)` for a conservative rate matrix `q` and `dt >= 0`.
pub fn expm_rate(q: &Matrix, dt: f64) -> Matrix {
    expm_rate_with_info(q, dt).0
}

pub fn expm_rate_with_info(q: &Matrix, dt: f64) -> (Matrix, ExpmInfo) {
    let n = q.nrows();
    if dt == 0.0 || n == 0 {
        return (
            Matrix::identity(n, n),
            ExpmInfo { squarings: 0, terms: 0, remainder_bound: 0.0 },
        );
    }
    let lambda = (0..n).map(|i| -q[(i, i)]).fold(0.0f64, f64::max);
    let mut p = q * dt;
    for i in 0..n {
        p[(i, i)] += lambda * dt;
    }
    // Off-diagonals may carry rounding-level negatives admitted by validation.
    p.iter_mut().for_each(|v| *v = v.max(0.0));

    let norm = row_sum_norm(&p);
    let squarings = if norm > SCALED_NORM {
        (norm / SCALED_NORM).log2().ceil().max(0.0) as u32
    } else {
        0
    };
    let scale = 0.5f64.powi(squarings as i32);
    p *= scale;
    let scaled_norm = norm * scale;

    // exp(P) by Taylor, stopping once the geometric tail bound of the
    // remaining terms falls below SERIES_REMAINDER.
    let mut result = Matrix::identity(n, n);
    let mut term = Matrix::identity(n, n);
    let mut terms = 0;
    let mut term_norm = 1.0;
    let mut remainder_bound = f64::INFINITY;
    for k in 1..=MAX_TERMS {
        term = &term * &p / k as f64;
        result += &term;
        terms = k;
        term_norm *= scaled_norm / k as f64;
        // Tail after term k is at most term_norm * r / (1 - r), r = norm/(k+1).
        let r = scaled_norm / (k + 1) as f64;
        remainder_bound = term_norm * r / (1.0 - r);
        if remainder_bound <= SERIES_REMAINDER {
            break;
        }
    }
    result *= (-lambda * dt * scale).exp();
    for _ in 0..squarings {
        result = &result * &result;
    }
    (result, ExpmInfo { squarings, terms, remainder_bound })
}

fn row_sum_norm(m: &Matrix) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
