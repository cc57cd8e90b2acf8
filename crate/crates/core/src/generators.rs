//! One-sided generators recovered from an evolution system, and exact
//! (space-time) generator application.

use serde::Serialize;

use crate::evolution::{solve_block, EvolutionSystem};
use crate::rates::{ProcessSpec, Side};
use crate::state::TestFunction;
use crate::{max_entry, Error, Matrix, Result, Vector};

/// Cauchy gap below which an extrapolated estimate is declared converged.
pub const CONVERGENCE_GAP: f64 = 1e-6;
/// Step sizes tried, as divisors of the adjacent knot spacing.
const STEP_DIVISORS: [f64; 4] = [1.0, 2.0, 4.0, 8.0];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub h: f64,
    /// Max-entry distance to the previous quotient (`None` for the first).
    pub gap: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GeneratorEstimate {
    pub s: f64,
    pub side: Side,
    pub estimate: Matrix,
    pub quotients: Vec<Matrix>,
    pub table: Vec<ConvergenceRow>,
    /// Distance between the top Richardson entry and the level below.
    pub richardson_gap: f64,
    pub converged: bool,
    /// Quotient gaps failed to shrink along the step sequence.
    pub diverged: bool,
}

/// `(T_{s,s+h} - I)/h` (right) or `(T_{s-h,s} - I)/h` (left) for
/// `h = D, D/2, D/4, D/8` with `D` the adjacent knot spacing, every quotient
/// from a freshly solved sub-block. The quotients are Richardson-extrapolated
/// through the full tableau; the reported gap is the distance between the
/// top entry and the best entry one level below.
pub fn estimate_generator(ev: &EvolutionSystem, s: f64, side: Side) -> Result<GeneratorEstimate> {
    let grid = ev.grid();
    let k = grid.index_of(s)?;
    let spacing = match side {
        Side::Right if k + 1 < grid.len() => grid.knot(k + 1) - grid.knot(k),
        Side::Left if k > 0 => grid.knot(k) - grid.knot(k - 1),
        _ => {
            return Err(Error::Config(format!("no knot on the {side:?} side of s = {s}")));
        }
    };
    let spec = ev.spec();
    let n = spec.n();
    let id = Matrix::identity(n, n);
    let mut quotients = Vec::with_capacity(STEP_DIVISORS.len());
    let mut table = Vec::with_capacity(STEP_DIVISORS.len());
    for div in STEP_DIVISORS {
        let h = spacing / div;
        let (a, b) = match side {
            Side::Right => (s, s + h),
            Side::Left => (s - h, s),
        };
        let mut t = solve_block(&spec.rates, a, b, ev.tol())?.0;
        // An epoch at b lies in (a, b]; one at a does not.
        if let Some(kern) = spec.kernel_at(b) {
            t = &t * kern;
        }
        let q = (t - &id) / h;
        let gap = quotients.last().map(|prev: &Matrix| max_entry(&(&q - prev)));
        table.push(ConvergenceRow { h, gap });
        quotients.push(q);
    }

    // Full Richardson tableau: level j removes the O(h^j) term, so the
    // level-j combination of neighbours (h, h/2) is (2^j R(h/2) - R(h)) / (2^j - 1).
    let combine = |fine: &Matrix, coarse: &Matrix, j: usize| {
        let w = f64::powi(2.0, j as i32);
        (fine * w - coarse) / (w - 1.0)
    };
    let mut level = quotients.clone();
    for j in 1..quotients.len() - 1 {
        level = level.windows(2).map(|p| combine(&p[1], &p[0], j)).collect();
    }
    let estimate = combine(&level[1], &level[0], quotients.len() - 1);
    let richardson_gap = max_entry(&(&estimate - &level[1]));

    let gaps: Vec<f64> = table.iter().filter_map(|r| r.gap).collect();
    let diverged = gaps.windows(2).any(|w| w[1] >= w[0] && w[1] > CONVERGENCE_GAP);
    Ok(GeneratorEstimate {
        s,
        side,
        estimate,
        quotients,
        table,
        richardson_gap,
        converged: !diverged && richardson_gap <= CONVERGENCE_GAP,
        diverged,
    })
}

/// `Q_s f` (right) or `Q_{s-} f` (left), exactly.
pub fn apply_generator(spec: &ProcessSpec, s: f64, side: Side, f: &TestFunction) -> Result<Vector> {
    if f.len() != spec.n() {
        return Err(Error::Dimension { expected: spec.n(), got: f.len() });
    }
    Ok(spec.rates.rate_at(s, side)? * &f.values)
}

/// The atom `(K - I) f` of the random generator at a jump epoch `s`, or
/// `None` when `s` is not an epoch.
pub fn apply_jump(spec: &ProcessSpec, s: f64, f: &TestFunction) -> Result<Option<Vector>> {
    if f.len() != spec.n() {
        return Err(Error::Dimension { expected: spec.n(), got: f.len() });
    }
    Ok(spec.kernel_at(s).map(|k| k * &f.values - &f.values))
}

/// `(d/ds + A_s) F(s, .)` at knot `s`: a one-sided knot difference of the
/// knot-indexed family `big_f` plus the exact generator on the same side.
pub fn spacetime_apply(
    ev: &EvolutionSystem,
    s: f64,
    side: Side,
    big_f: &[Vector],
) -> Result<Vector> {
    let grid = ev.grid();
    let k = grid.index_of(s)?;
    let spec = ev.spec();
    let q = spec.rates.rate_at(s, side)?;
    match side {
        Side::Right => {
            let next = big_f
                .get(k + 1)
                .filter(|_| k + 1 < grid.len())
                .ok_or_else(|| Error::Config(format!("no right neighbour of knot s = {s}")))?;
            let h = grid.knot(k + 1) - grid.knot(k);
            Ok((next - &big_f[k]) / h + q * &big_f[k])
        }
        Side::Left => {
            if k == 0 || big_f.len() <= k {
                return Err(Error::Config(format!("no left neighbour of knot s = {s}")));
            }
            let h = grid.knot(k) - grid.knot(k - 1);
            Ok((&big_f[k] - &big_f[k - 1]) / h + q * &big_f[k])
        }
    }
}

/// CSV with header `h,gap`.
pub fn convergence_csv(est: &GeneratorEstimate) -> String {
    let mut out = String::from("h,gap\n");
    for row in &est.table {
        out.push_str(&format!("{:e},{}\n", row.h, row.gap.map(|g| format!("{g:e}")).unwrap_or_default()));
    }
    out
}
