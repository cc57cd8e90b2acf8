//! The evolution system `T_{s,t}` of a process on a time grid, and residual
//! checks of its backward equation and integral representations.
//!
//! The system is stored as one transition block per pair of adjacent knots
//! plus the jump kernels sitting on knots. Any `T_{s,t}` between knots is
//! the ordered product of blocks (and kernels at epochs in `(s, t]`), so
//! `T_{s,s} = I` and `T_{s,u} = T_{s,t} T_{t,u}` hold by construction.
//! Off-knot times are rejected, not interpolated.

use rayon::prelude::*;
use serde::Serialize;

use crate::expm::expm_rate_with_info;
use crate::rates::{ProcessSpec, RateModel, Side};
use crate::state::TestFunction;
use crate::{max_norm, Error, Matrix, Result, Vector};

/// Default Richardson tolerance for time-varying blocks.
pub const BLOCK_TOL: f64 = 1e-12;
/// Most substeps tried before a block is declared non-convergent.
pub const MAX_SUBSTEPS: usize = 1 << 14;

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    knots: Vec<f64>,
}

impl TimeGrid {
    /// `steps` uniform intervals on `[0, horizon]`, with every time in
    /// `extra` inserted as a knot. A uniform knot within `1e-12 T` of an
    /// extra time is replaced by it.
    pub fn new(horizon: f64, steps: usize, extra: &[f64]) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Config(format!("grid horizon {horizon} must be positive")));
        }
        if steps == 0 {
            return Err(Error::Config("grid needs at least one step".into()));
        }
        let slack = 1e-12 * horizon.max(1.0);
        let mut knots: Vec<f64> = extra
            .iter()
            .copied()
            .filter(|&t| t > slack && t < horizon - slack)
            .collect();
        for k in 0..=steps {
            let t = if k == steps { horizon } else { horizon * k as f64 / steps as f64 };
            if !knots.iter().any(|&e| (e - t).abs() <= slack) {
                knots.push(t);
            }
        }
        knots.sort_by(f64::total_cmp);
        knots.dedup_by(|a, b| (*a - *b).abs() <= slack);
        Ok(Self { horizon, steps, knots })
    }

    /// Grid on the common horizon of `specs`, containing all their rate
    /// breakpoints and jump epochs.
    pub fn for_specs(steps: usize, specs: &[&ProcessSpec]) -> Result<Self> {
        let horizon = specs
            .first()
            .map(|s| s.horizon())
            .ok_or_else(|| Error::Config("no process given".into()))?;
        if specs.iter().any(|s| (s.horizon() - horizon).abs() > 1e-12 * horizon.max(1.0)) {
            return Err(Error::Config("processes have different horizons".into()));
        }
        let mut extra = Vec::new();
        for s in specs {
            extra.extend(s.rates.breakpoints());
            extra.extend_from_slice(s.epochs());
        }
        Self::new(horizon, steps, &extra)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    pub fn knot(&self, k: usize) -> f64 {
        self.knots[k]
    }

    /// Index of the knot at time `t`; off-knot times are an error.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let slack = 1e-9 * self.horizon.max(1.0) / self.steps as f64;
        let k = self.knots.partition_point(|&x| x < t - slack);
        match self.knots.get(k) {
            Some(&x) if (x - t).abs() <= slack => Ok(k),
            _ => Err(Error::NotAKnot(t)),
        }
    }

    /// Index of the knot closest to `t`.
    pub fn nearest(&self, t: f64) -> usize {
        let k = self.knots.partition_point(|&x| x < t);
        if k == 0 {
            0
        } else if k == self.knots.len() {
            k - 1
        } else if (self.knots[k] - t) < (t - self.knots[k - 1]) {
            k
        } else {
            k - 1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockMethod {
    Exponential,
    RungeKutta4,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockReport {
    pub start: f64,
    pub end: f64,
    pub method: BlockMethod,
    pub substeps: usize,
    pub error_estimate: f64,
}

/// Certified properties of an assembled system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StochasticityReport {
    pub max_row_sum_error: f64,
    pub min_entry: f64,
    pub max_block_error: f64,
}

/// Right-continuous values on knots together with their left limits; the
/// two differ only at jump epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotValues {
    pub right: Vec<Vector>,
    pub left: Vec<Vector>,
}

impl KnotValues {
    pub fn len(&self) -> usize {
        self.right.len()
    }

    pub fn is_empty(&self) -> bool {
        self.right.is_empty()
    }

    pub fn at(&self, k: usize, side: Side) -> &Vector {
        match side {
            Side::Right => &self.right[k],
            Side::Left => &self.left[k],
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvolutionSystem {
    spec: ProcessSpec,
    grid: TimeGrid,
    blocks: Vec<Matrix>,
    jumps: Vec<Option<Matrix>>,
    reports: Vec<BlockReport>,
    tol: f64,
}

/// Transition matrix of the continuous motion on `[a, b]`: an exact
/// exponential where the rates are constant, otherwise shifted RK4 with
/// step halving until the Richardson estimate is below `tol`.
pub fn solve_block(rates: &RateModel, a: f64, b: f64, tol: f64) -> Result<(Matrix, BlockReport)> {
    let n = rates.n();
    if b <= a {
        let report = BlockReport { start: a, end: b, method: BlockMethod::Exponential, substeps: 0, error_estimate: 0.0 };
        return Ok((Matrix::identity(n, n), report));
    }
    if let Some(q) = rates.constant_on(a, b) {
        let (m, info) = expm_rate_with_info(q, b - a);
        let report = BlockReport {
            start: a,
            end: b,
            method: BlockMethod::Exponential,
            substeps: 1 << info.squarings,
            error_estimate: info.remainder_bound,
        };
        return Ok((m, report));
    }

    let shift = rates.uniformization_bound();
    let mut coarse = rk4_shifted(rates, a, b, 1, shift);
    let mut substeps = 2;
    loop {
        let fine = rk4_shifted(rates, a, b, substeps, shift);
        let estimate = crate::max_entry(&(&fine - &coarse)) / 15.0;
        if estimate <= tol {
            let report = BlockReport {
                start: a,
                end: b,
                method: BlockMethod::RungeKutta4,
                substeps,
                error_estimate: estimate,
            };
            return Ok((fine, report));
        }
        if substeps >= MAX_SUBSTEPS {
            return Err(Error::NonConvergent { a, b, tol, estimate, substeps });
        }
        coarse = fine;
        substeps *= 2;
    }
}

/// `dT/dt = T Q_t` on `[a, b]` with `T(a) = I`, integrated as
/// `T = e^{-shift (b-a)} S` where `dS/dt = S (Q_t + shift I)`. With the
/// shift dominating every exit rate all RK4 stages are nonnegative.
fn rk4_shifted(rates: &RateModel, a: f64, b: f64, substeps: usize, shift: f64) -> Matrix {
    let n = rates.n();
    let h = (b - a) / substeps as f64;
    let shifted = |t: f64, side: Side| -> Matrix {
        let mut p = rates.rate_at(t.clamp(0.0, rates.horizon), side).expect("time inside horizon");
        for i in 0..n {
            p[(i, i)] += shift;
        }
        p.iter_mut().for_each(|v| *v = v.max(0.0));
        p
    };
    let decay = (-shift * h).exp();
    let id = Matrix::identity(n, n);
    let mut t_mat = Matrix::identity(n, n);
    for k in 0..substeps {
        let t0 = a + h * k as f64;
        let p0 = shifted(t0, Side::Right);
        let pm = shifted(t0 + 0.5 * h, Side::Right);
        let p1 = shifted(t0 + h, Side::Left);
        let k1 = p0;
        let k2 = (&id + &k1 * (0.5 * h)) * &pm;
        let k3 = (&id + &k2 * (0.5 * h)) * &pm;
        let k4 = (&id + &k3 * h) * &p1;
        let step = (&id + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)) * decay;
        t_mat = &t_mat * step;
    }
    t_mat
}

/// Builds the evolution system of `spec` on `grid`, blocks in parallel.
pub fn build_evolution(spec: &ProcessSpec, grid: &TimeGrid, tol: f64) -> Result<EvolutionSystem> {
    if (grid.horizon() - spec.horizon()).abs() > 1e-12 * spec.horizon().max(1.0) {
        return Err(Error::Config(format!(
            "grid horizon {} differs from process horizon {}",
            grid.horizon(),
            spec.horizon()
        )));
    }
    let knots = grid.knots();
    let solved: Vec<(Matrix, BlockReport)> = (0..knots.len() - 1)
        .into_par_iter()
        .map(|k| solve_block(&spec.rates, knots[k], knots[k + 1], tol))
        .collect::<Result<_>>()?;
    let (blocks, reports) = solved.into_iter().unzip();

    let mut jumps = vec![None; knots.len()];
    for &epoch in spec.epochs() {
        let k = grid.index_of(epoch)?;
        jumps[k] = spec.kernel_at(epoch).cloned();
    }
    Ok(EvolutionSystem { spec: spec.clone(), grid: grid.clone(), blocks, jumps, reports, tol })
}

impl EvolutionSystem {
    pub fn spec(&self) -> &ProcessSpec {
        &self.spec
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.spec.n()
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn block(&self, k: usize) -> &Matrix {
        &self.blocks[k]
    }

    pub fn block_reports(&self) -> &[BlockReport] {
        &self.reports
    }

    /// Jump kernel sitting on knot `k`, if any.
    pub fn jump_at(&self, k: usize) -> Option<&Matrix> {
        self.jumps[k].as_ref()
    }

    /// `T_{s_i, s_j}` for knot indices `i <= j`.
    pub fn transition(&self, i: usize, j: usize) -> Result<Matrix> {
        if i > j || j >= self.grid.len() {
            return Err(Error::Config(format!("invalid knot pair ({i}, {j})")));
        }
        let n = self.n();
        let mut m = Matrix::identity(n, n);
        for k in i..j {
            m = &m * &self.blocks[k];
            if let Some(kern) = &self.jumps[k + 1] {
                m = &m * kern;
            }
        }
        Ok(m)
    }

    /// `T_{s,t}` for knot times.
    pub fn transition_at(&self, s: f64, t: f64) -> Result<Matrix> {
        self.transition(self.grid.index_of(s)?, self.grid.index_of(t)?)
    }

    /// `u(s_k) = T_{s_k, t} f` for every knot `s_k <= t` (index `t_idx`),
    /// with left limits `u(s_k-) = K u(s_k)` at epochs.
    pub fn backward(&self, f: &Vector, t_idx: usize) -> KnotValues {
        let mut right = vec![Vector::zeros(0); t_idx + 1];
        let mut left = vec![Vector::zeros(0); t_idx + 1];
        right[t_idx] = f.clone();
        left[t_idx] = self.left_of(t_idx, f);
        for k in (0..t_idx).rev() {
            right[k] = &self.blocks[k] * &left[k + 1];
            left[k] = self.left_of(k, &right[k]);
        }
        KnotValues { right, left }
    }

    fn left_of(&self, k: usize, v: &Vector) -> Vector {
        match (&self.jumps[k], k) {
            (Some(kern), k) if k > 0 => kern * v,
            _ => v.clone(),
        }
    }

    /// Marginal laws `mu T_{0,s_k}` on every knot (as column vectors), with
    /// the pre-jump laws `mu T_{0,s_k-}` as left values.
    pub fn marginals(&self, mu: &Vector) -> KnotValues {
        let len = self.grid.len();
        let mut right = Vec::with_capacity(len);
        let mut left = Vec::with_capacity(len);
        right.push(mu.clone());
        left.push(mu.clone());
        for k in 0..len - 1 {
            let before = self.blocks[k].tr_mul(&right[k]);
            let after = match &self.jumps[k + 1] {
                Some(kern) => kern.tr_mul(&before),
                None => before.clone(),
            };
            left.push(before);
            right.push(after);
        }
        KnotValues { right, left }
    }

    /// `T_{s_i, s_k}` for `k = i..=j`, right-continuous and left-limit.
    fn forward_matrices(&self, i: usize, j: usize) -> (Vec<Matrix>, Vec<Matrix>) {
        let n = self.n();
        let mut right = vec![Matrix::identity(n, n)];
        let mut left = vec![Matrix::identity(n, n)];
        for k in i..j {
            let before = &right[k - i] * &self.blocks[k];
            let after = match &self.jumps[k + 1] {
                Some(kern) => &before * kern,
                None => before.clone(),
            };
            left.push(before);
            right.push(after);
        }
        (right, left)
    }

    /// Row-sum and positivity certificate over all blocks.
    pub fn certify(&self) -> StochasticityReport {
        let mut max_row_sum_error = 0.0f64;
        let mut min_entry = f64::INFINITY;
        for b in &self.blocks {
            for i in 0..b.nrows() {
                let s: f64 = b.row(i).iter().sum();
                max_row_sum_error = max_row_sum_error.max((s - 1.0).abs());
            }
            min_entry = min_entry.min(b.min());
        }
        let max_block_error = self.reports.iter().map(|r| r.error_estimate).fold(0.0, f64::max);
        StochasticityReport { max_row_sum_error, min_entry, max_block_error }
    }
}

/// Per-knot residuals of the backward equation, one-sided from the right
/// and from the left. Entries are `None` where a knot lacks that neighbour.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualCurve {
    pub s: Vec<f64>,
    pub right: Vec<Option<f64>>,
    pub left: Vec<Option<f64>>,
}

impl ResidualCurve {
    pub fn max_right(&self) -> f64 {
        self.right.iter().flatten().fold(0.0, |m, &v| m.max(v))
    }

    pub fn max_left(&self) -> f64 {
        self.left.iter().flatten().fold(0.0, |m, &v| m.max(v))
    }
}

/// Residuals of `d+u/ds + Q_s u(s) = 0` and `d-u/ds + Q_{s-} u(s-) = 0` for
/// `u(s) = T_{s,t} f`, with first-order one-sided difference quotients on
/// the knots of `[0, t]`.
pub fn check_backward_equation(ev: &EvolutionSystem, f: &TestFunction, t: f64) -> Result<ResidualCurve> {
    let t_idx = ev.grid.index_of(t)?;
    check_dims(ev, f)?;
    let u = ev.backward(&f.values, t_idx);
    let rates = &ev.spec.rates;
    let knots = ev.grid.knots();
    let mut curve = ResidualCurve { s: Vec::new(), right: Vec::new(), left: Vec::new() };
    for k in 0..=t_idx {
        curve.s.push(knots[k]);
        curve.right.push(if k < t_idx {
            let h = knots[k + 1] - knots[k];
            let q = rates.rate_at(knots[k], Side::Right)?;
            Some(max_norm(&((&u.left[k + 1] - &u.right[k]) / h + q * &u.right[k])))
        } else {
            None
        });
        curve.left.push(if k > 0 {
            let h = knots[k] - knots[k - 1];
            let q = rates.rate_at(knots[k], Side::Left)?;
            Some(max_norm(&((&u.left[k] - &u.right[k - 1]) / h + q * &u.left[k])))
        } else {
            None
        });
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegralResidual {
    /// `|T_{s,t} f - f - int T_{s,u} A_u f du|`.
    pub primal: f64,
    /// `|T_{s,t} f - f - int A_u T_{u,t} f du|`.
    pub dual: f64,
}

/// Both integral representations of `T_{s,t} f - f`, integrated by the
/// composite trapezoid rule on knots using one-sided rates at the ends of
/// each interval. Jump epochs in `(s, t]` contribute their atoms
/// `T_{s,tau-} (K - I) f` and `(K - I) T_{tau,t} f`.
pub fn check_integral_representation(
    ev: &EvolutionSystem,
    f: &TestFunction,
    s: f64,
    t: f64,
) -> Result<IntegralResidual> {
    check_dims(ev, f)?;
    let (si, ti) = (ev.grid.index_of(s)?, ev.grid.index_of(t)?);
    if si > ti {
        return Err(Error::Config(format!("s = {s} after t = {t}")));
    }
    let knots = ev.grid.knots();
    let rates = &ev.spec.rates;
    let fv = &f.values;
    let lhs = ev.transition(si, ti)? * fv - fv;

    let (w_right, w_left) = ev.forward_matrices(si, ti);
    let u = ev.backward(fv, ti);
    let n = ev.n();
    let mut primal = Vector::zeros(n);
    let mut dual = Vector::zeros(n);
    for k in si..ti {
        let h = knots[k + 1] - knots[k];
        let q_lo = rates.rate_at(knots[k], Side::Right)?;
        let q_hi = rates.rate_at(knots[k + 1], Side::Left)?;
        let a = k - si;
        primal += (&w_right[a] * (&q_lo * fv) + &w_left[a + 1] * (&q_hi * fv)) * (0.5 * h);
        dual += (&q_lo * &u.right[k] + &q_hi * &u.left[k + 1]) * (0.5 * h);
        if let Some(kern) = ev.jump_at(k + 1) {
            let id = Matrix::identity(n, n);
            primal += &w_left[a + 1] * ((kern - &id) * fv);
            dual += (kern - &id) * &u.right[k + 1];
        }
    }
    Ok(IntegralResidual { primal: max_norm(&(&lhs - primal)), dual: max_norm(&(&lhs - dual)) })
}

/// Residual of `F(s) = T_{s,t} F(t) - int_s^t T_{s,r} G(r) dr` with the
/// trapezoid rule on knots. `big_f` and `g` are indexed by global knot.
pub fn check_inhomogeneous_representation(
    ev: &EvolutionSystem,
    big_f: &[Vector],
    g: &[Vector],
    s: f64,
    t: f64,
) -> Result<f64> {
    let (si, ti) = (ev.grid.index_of(s)?, ev.grid.index_of(t)?);
    if si > ti {
        return Err(Error::Config(format!("s = {s} after t = {t}")));
    }
    if big_f.len() <= ti || g.len() <= ti {
        return Err(Error::Config(format!(
            "F and G must be given on knots 0..={ti}, got {} and {}",
            big_f.len(),
            g.len()
        )));
    }
    let knots = ev.grid.knots();
    let (w_right, w_left) = ev.forward_matrices(si, ti);
    let mut integral = Vector::zeros(ev.n());
    for k in si..ti {
        let h = knots[k + 1] - knots[k];
        let a = k - si;
        integral += (&w_right[a] * &g[k] + &w_left[a + 1] * &g[k + 1]) * (0.5 * h);
    }
    let rhs = &w_right[ti - si] * &big_f[ti] - integral;
    Ok(max_norm(&(&big_f[si] - rhs)))
}

fn check_dims(ev: &EvolutionSystem, f: &TestFunction) -> Result<()> {
    if f.len() != ev.n() {
        return Err(Error::Dimension { expected: ev.n(), got: f.len() });
    }
    Ok(())
}

/// CSV with header `s,residual_right,residual_left`; missing one-sided
/// values are empty cells.
pub fn residual_csv(curve: &ResidualCurve) -> String {
    let mut out = String::from("s,residual_right,residual_left\n");
    let cell = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for k in 0..curve.s.len() {
        out.push_str(&format!("{},{},{}\n", curve.s[k], cell(curve.right[k]), cell(curve.left[k])));
    }
    out
}
