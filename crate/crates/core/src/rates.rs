//! Time-dependent conservative rate matrices, fixed-epoch jump schedules and
//! the process specification tying them to an initial law.

use serde::Serialize;

use crate::{Error, Matrix, Result, Vector};

/// Slack for the Q-matrix and stochastic-kernel invariants.
pub const MATRIX_TOL: f64 = 1e-12;

/// Safety factor applied to grid-sampled uniformization bounds.
const BOUND_SAFETY: f64 = 1.01;
const BOUND_SAMPLES: usize = 2000;

/// Which one-sided value of a time-dependent quantity is meant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// Limit from the right; the value at `t` for right-continuous data.
    Right,
    /// Limit from the left.
    Left,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RateKind {
    Constant(Matrix),
    /// `breakpoints = [0 = b_0 < b_1 < .. < b_m = T]`, `pieces[k]` holds on
    /// `[b_k, b_{k+1})`; the last piece also holds at `T`.
    Piecewise { breakpoints: Vec<f64>, pieces: Vec<Matrix> },
    /// `Q_t = base + t * slope`.
    Affine { base: Matrix, slope: Matrix },
    /// Linear interpolation between sampled matrices at `times` (first 0,
    /// last `T`).
    Sampled { times: Vec<f64>, matrices: Vec<Matrix> },
}

/// `t -> Q_t` on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateModel {
    pub horizon: f64,
    pub kind: RateKind,
}

impl RateModel {
    pub fn constant(q: Matrix, horizon: f64) -> Self {
        Self { horizon, kind: RateKind::Constant(q) }
    }

    pub fn piecewise(breakpoints: Vec<f64>, pieces: Vec<Matrix>) -> Self {
        let horizon = breakpoints.last().copied().unwrap_or(0.0);
        Self { horizon, kind: RateKind::Piecewise { breakpoints, pieces } }
    }

    pub fn affine(base: Matrix, slope: Matrix, horizon: f64) -> Self {
        Self { horizon, kind: RateKind::Affine { base, slope } }
    }

    pub fn sampled(times: Vec<f64>, matrices: Vec<Matrix>) -> Self {
        let horizon = times.last().copied().unwrap_or(0.0);
        Self { horizon, kind: RateKind::Sampled { times, matrices } }
    }

    /// Number of states.
    pub fn n(&self) -> usize {
        match &self.kind {
            RateKind::Constant(q) => q.nrows(),
            RateKind::Piecewise { pieces, .. } => pieces.first().map_or(0, Matrix::nrows),
            RateKind::Affine { base, .. } => base.nrows(),
            RateKind::Sampled { matrices, .. } => matrices.first().map_or(0, Matrix::nrows),
        }
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let slack = 1e-12 * self.horizon.max(1.0);
        if !(t >= -slack && t <= self.horizon + slack) {
            return Err(Error::OutOfRange { t, horizon: self.horizon });
        }
        Ok(())
    }

    /// `Q_t` (right value) or `Q_{t-}` (left limit; `Q_0` at `t = 0`).
    pub fn rate_at(&self, t: f64, side: Side) -> Result<Matrix> {
        self.check_time(t)?;
        Ok(match &self.kind {
            RateKind::Constant(q) => q.clone(),
            RateKind::Piecewise { breakpoints, pieces } => {
                pieces[piece_index(breakpoints, t, side)].clone()
            }
            RateKind::Affine { base, slope } => base + slope * t,
            RateKind::Sampled { times, matrices } => {
                let (k, w) = sample_weight(times, t);
                let mut q = &matrices[k] * (1.0 - w);
                if w > 0.0 {
                    q += &matrices[k + 1] * w;
                }
                rebalance(&mut q);
                q
            }
        })
    }

    /// `(Q_t f)(i)` without allocating the full matrix; used on simulation
    /// hot paths. `t` is assumed to lie in `[0, T]`.
    pub fn apply_row(&self, t: f64, side: Side, i: usize, f: &[f64]) -> f64 {
        match &self.kind {
            RateKind::Constant(q) => row_dot(q, i, f),
            RateKind::Piecewise { breakpoints, pieces } => {
                row_dot(&pieces[piece_index(breakpoints, t, side)], i, f)
            }
            _ => {
                let mut row = vec![0.0; self.n()];
                self.row_into(t, side, i, &mut row);
                row.iter().zip(f).map(|(a, b)| a * b).sum()
            }
        }
    }

    /// Row `i` of `Q_t` written into `out`.
    pub fn row_into(&self, t: f64, side: Side, i: usize, out: &mut [f64]) {
        match &self.kind {
            RateKind::Constant(q) => copy_row(q, i, out),
            RateKind::Piecewise { breakpoints, pieces } => {
                copy_row(&pieces[piece_index(breakpoints, t, side)], i, out)
            }
            RateKind::Affine { base, slope } => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = base[(i, j)] + t * slope[(i, j)];
                }
            }
            RateKind::Sampled { times, matrices } => {
                let (k, w) = sample_weight(times, t);
                for (j, o) in out.iter_mut().enumerate() {
                    let next = if w > 0.0 { matrices[k + 1][(i, j)] } else { 0.0 };
                    *o = (1.0 - w) * matrices[k][(i, j)] + w * next;
                }
                let mut off = 0.0;
                for (j, o) in out.iter_mut().enumerate() {
                    if j != i {
                        *o = o.max(0.0);
                        off += *o;
                    }
                }
                out[i] = -off;
            }
        }
    }

    /// `Lambda >= sup_t max_i (-Q_t[i,i])`: exact for piecewise-constant
    /// models, a 1% inflated dense-grid maximum otherwise.
    pub fn uniformization_bound(&self) -> f64 {
        let max_exit = |q: &Matrix| (0..q.nrows()).map(|i| -q[(i, i)]).fold(0.0f64, f64::max);
        match &self.kind {
            RateKind::Constant(q) => max_exit(q),
            RateKind::Piecewise { pieces, .. } => pieces.iter().map(max_exit).fold(0.0, f64::max),
            RateKind::Affine { .. } | RateKind::Sampled { .. } => {
                let mut times: Vec<f64> = (0..=BOUND_SAMPLES)
                    .map(|k| self.horizon * k as f64 / BOUND_SAMPLES as f64)
                    .collect();
                if let RateKind::Sampled { times: st, .. } = &self.kind {
                    times.extend(st.iter().copied());
                }
                let n = self.n();
                let mut row = vec![0.0; n];
                let mut best = 0.0f64;
                for t in times {
                    for i in 0..n {
                        self.row_into(t, Side::Right, i, &mut row);
                        best = best.max(-row[i]);
                    }
                }
                best * BOUND_SAFETY
            }
        }
    }

    /// Interior times in `(0, T)` where `t -> Q_t` is not smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        let interior = |v: &[f64]| -> Vec<f64> {
            v.iter().copied().filter(|&b| b > 0.0 && b < self.horizon).collect()
        };
        match &self.kind {
            RateKind::Piecewise { breakpoints, .. } => interior(breakpoints),
            RateKind::Sampled { times, .. } => interior(times),
            _ => Vec::new(),
        }
    }

    /// Whether `Q` has a jump discontinuity at `t` (only piecewise models).
    pub fn jumps_at(&self, t: f64) -> bool {
        match &self.kind {
            RateKind::Piecewise { breakpoints, pieces } => {
                piece_index(breakpoints, t, Side::Right) != piece_index(breakpoints, t, Side::Left)
                    && pieces[piece_index(breakpoints, t, Side::Right)]
                        != pieces[piece_index(breakpoints, t, Side::Left)]
            }
            _ => false,
        }
    }

    /// The matrix if `Q` is constant on `[a, b]`.
    pub fn constant_on(&self, a: f64, b: f64) -> Option<&Matrix> {
        match &self.kind {
            RateKind::Constant(q) => Some(q),
            RateKind::Piecewise { breakpoints, pieces } => {
                let k = piece_index(breakpoints, 0.5 * (a + b), Side::Right);
                let lo = breakpoints[k];
                let hi = breakpoints[k + 1];
                let slack = 1e-12 * self.horizon.max(1.0);
                (a >= lo - slack && b <= hi + slack).then(|| &pieces[k])
            }
            RateKind::Affine { base, slope } => slope.iter().all(|&v| v == 0.0).then_some(base),
            RateKind::Sampled { .. } => None,
        }
    }

    /// `int_a^b (Q_s g)(i) ds` along a constant state `i`, exact for every
    /// model kind (the integrand is piecewise polynomial of degree <= 1).
    pub fn integrate_row(&self, i: usize, g: &[f64], a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        match &self.kind {
            RateKind::Constant(q) => row_dot(q, i, g) * (b - a),
            _ => {
                let mut cuts = vec![a];
                cuts.extend(self.breakpoints().into_iter().filter(|&c| c > a && c < b));
                cuts.push(b);
                cuts.windows(2)
                    .map(|w| {
                        let (lo, hi) = (w[0], w[1]);
                        let mid = 0.5 * (lo + hi);
                        let fl = self.apply_row(lo, Side::Right, i, g);
                        let fm = self.apply_row(mid, Side::Right, i, g);
                        let fh = self.apply_row(hi, Side::Left, i, g);
                        (hi - lo) * (fl + 4.0 * fm + fh) / 6.0
                    })
                    .sum()
            }
        }
    }
}

fn row_dot(q: &Matrix, i: usize, f: &[f64]) -> f64 {
    (0..q.ncols()).map(|j| q[(i, j)] * f[j]).sum()
}

fn copy_row(q: &Matrix, i: usize, out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        *o = q[(i, j)];
    }
}

/// Index of the piece holding at `t` from the requested side.
fn piece_index(breakpoints: &[f64], t: f64, side: Side) -> usize {
    let pieces = breakpoints.len() - 1;
    let count = match side {
        Side::Right => breakpoints.iter().filter(|&&b| b <= t).count(),
        Side::Left => breakpoints.iter().filter(|&&b| b < t).count(),
    };
    count.clamp(1, pieces) - 1
}

/// Interval index and interpolation weight of `t` among sample times.
fn sample_weight(times: &[f64], t: f64) -> (usize, f64) {
    let last = times.len() - 1;
    if last == 0 || t <= times[0] {
        return (0, 0.0);
    }
    if t >= times[last] {
        return (last, 0.0);
    }
    let k = times.iter().rposition(|&s| s <= t).unwrap_or(0).min(last - 1);
    let w = (t - times[k]) / (times[k + 1] - times[k]);
    (k, w)
}

/// Clamps negative off-diagonals at zero and restores zero row sums.
/// Returns the number of entries clamped.
pub fn rebalance(q: &mut Matrix) -> usize {
    let n = q.nrows();
    let mut clamped = 0;
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            if i != j {
                if q[(i, j)] < 0.0 {
                    q[(i, j)] = 0.0;
                    clamped += 1;
                }
                off += q[(i, j)];
            }
        }
        q[(i, i)] = -off;
    }
    clamped
}

/// Fixed jump epochs with one stochastic kernel per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpSchedule {
    pub times: Vec<f64>,
    pub kernels: Vec<Matrix>,
}

impl JumpSchedule {
    pub fn new(times: Vec<f64>, kernels: Vec<Matrix>) -> Self {
        Self { times, kernels }
    }

    /// The kernel at epoch `t`, if `t` is an epoch (to within `1e-12 T`).
    pub fn kernel_at(&self, t: f64, horizon: f64) -> Option<&Matrix> {
        let slack = 1e-12 * horizon.max(1.0);
        self.times.iter().position(|&e| (e - t).abs() <= slack).map(|k| &self.kernels[k])
    }
}

/// Rates, optional fixed jumps and initial law of one process.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessSpec {
    pub rates: RateModel,
    pub jumps: Option<JumpSchedule>,
    pub initial: Vector,
}

impl ProcessSpec {
    pub fn new(rates: RateModel, jumps: Option<JumpSchedule>, initial: Vector) -> Self {
        Self { rates, jumps, initial }
    }

    /// Continuous chain started from a point mass.
    pub fn from_state(rates: RateModel, start: usize) -> Self {
        let mut initial = Vector::zeros(rates.n());
        initial[start] = 1.0;
        Self { rates, jumps: None, initial }
    }

    pub fn n(&self) -> usize {
        self.initial.len()
    }

    pub fn horizon(&self) -> f64 {
        self.rates.horizon
    }

    pub fn epochs(&self) -> &[f64] {
        self.jumps.as_ref().map_or(&[], |j| j.times.as_slice())
    }

    pub fn kernel_at(&self, t: f64) -> Option<&Matrix> {
        self.jumps.as_ref().and_then(|j| j.kernel_at(t, self.horizon()))
    }

    /// Validates and returns `self`, or the diagnostics as an error.
    pub fn validated(self) -> Result<Self> {
        let errors: Vec<String> = validate(&self)
            .into_iter()
            .filter(|d| d.severity == Severity::Error)
            .map(|d| format!("{}: {}", d.pointer, d.message))
            .collect();
        if errors.is_empty() {
            Ok(self)
        } else {
            Err(Error::Invalid(errors.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

/// One invariant violation, located by a JSON pointer relative to the
/// process specification (`/rates/...`, `/jumps/...`, `/initial`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub pointer: String,
    pub message: String,
}

impl Diagnostic {
    fn error(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        Self { severity: Severity::Error, pointer: pointer.into(), message: message.into() }
    }

    fn warning(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        Self { severity: Severity::Warning, pointer: pointer.into(), message: message.into() }
    }
}

/// Every invariant violation of `spec`; an empty list means valid. Nothing
/// is repaired.
pub fn validate(spec: &ProcessSpec) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let n = spec.initial.len();
    let horizon = spec.rates.horizon;

    if n == 0 {
        out.push(Diagnostic::error("/initial", "initial law is empty"));
        return out;
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        out.push(Diagnostic::error("/rates/horizon", format!("horizon {horizon} must be positive")));
    }

    match &spec.rates.kind {
        RateKind::Constant(q) => check_q_matrix(q, n, "/rates/q", &mut out),
        RateKind::Piecewise { breakpoints, pieces } => {
            check_times(breakpoints, "/rates/breakpoints", &mut out);
            if breakpoints.len() != pieces.len() + 1 {
                out.push(Diagnostic::error(
                    "/rates/breakpoints",
                    format!(
                        "{} breakpoints for {} pieces (need pieces + 1)",
                        breakpoints.len(),
                        pieces.len()
                    ),
                ));
            }
            if breakpoints.first() != Some(&0.0) {
                out.push(Diagnostic::error("/rates/breakpoints/0", "first breakpoint must be 0"));
            }
            if pieces.is_empty() {
                out.push(Diagnostic::error("/rates/pieces", "no pieces"));
            }
            for (k, q) in pieces.iter().enumerate() {
                check_q_matrix(q, n, &format!("/rates/pieces/{k}"), &mut out);
            }
        }
        RateKind::Affine { base, slope } => {
            check_shape(slope, n, "/rates/slope", &mut out);
            check_shape(base, n, "/rates/base", &mut out);
            // Entries are affine in t: validity at both ends implies validity throughout.
            if slope.shape() == (n, n) && base.shape() == (n, n) && horizon.is_finite() {
                check_q_matrix(base, n, "/rates/base", &mut out);
                let end = base + slope * horizon;
                let mut at_end = Vec::new();
                check_q_matrix(&end, n, "/rates", &mut at_end);
                out.extend(at_end.into_iter().map(|mut d| {
                    d.message = format!("at t = T: {}", d.message);
                    d
                }));
            }
        }
        RateKind::Sampled { times, matrices } => {
            check_times(times, "/rates/times", &mut out);
            if times.len() != matrices.len() {
                out.push(Diagnostic::error(
                    "/rates/times",
                    format!("{} sample times for {} matrices", times.len(), matrices.len()),
                ));
            }
            if times.first() != Some(&0.0) {
                out.push(Diagnostic::error("/rates/times/0", "first sample time must be 0"));
            }
            for (k, q) in matrices.iter().enumerate() {
                let ptr = format!("/rates/matrices/{k}");
                check_q_matrix(q, n, &ptr, &mut out);
                if q.shape() == (n, n) {
                    let negatives = (0..n)
                        .flat_map(|i| (0..n).map(move |j| (i, j)))
                        .filter(|&(i, j)| i != j && q[(i, j)] < 0.0)
                        .count();
                    if negatives > 0 {
                        out.push(Diagnostic::warning(
                            ptr,
                            format!("{negatives} slightly negative off-diagonal(s) will be clamped and rebalanced"),
                        ));
                    }
                }
            }
        }
    }
    if let Some(last) = match &spec.rates.kind {
        RateKind::Piecewise { breakpoints, .. } => breakpoints.last(),
        RateKind::Sampled { times, .. } => times.last(),
        _ => None,
    } {
        if (*last - horizon).abs() > 1e-12 * horizon.max(1.0) {
            out.push(Diagnostic::error("/rates", format!("time grid ends at {last}, horizon is {horizon}")));
        }
    }

    if let Some(jumps) = &spec.jumps {
        check_times(&jumps.times, "/jumps/times", &mut out);
        if jumps.times.len() != jumps.kernels.len() {
            out.push(Diagnostic::error(
                "/jumps/kernels",
                format!("{} epochs for {} kernels", jumps.times.len(), jumps.kernels.len()),
            ));
        }
        for (k, &t) in jumps.times.iter().enumerate() {
            if !(t > 0.0 && t <= horizon) {
                out.push(Diagnostic::error(
                    format!("/jumps/times/{k}"),
                    format!("epoch {t} outside (0, {horizon}]"),
                ));
            }
        }
        for (k, kern) in jumps.kernels.iter().enumerate() {
            check_kernel(kern, n, &format!("/jumps/kernels/{k}"), &mut out);
        }
    }

    let init = &spec.initial;
    if let Some(i) = init.iter().position(|v| !v.is_finite() || *v < 0.0) {
        out.push(Diagnostic::error(format!("/initial/{i}"), format!("entry {} is not a probability", init[i])));
    }
    let total: f64 = init.iter().sum();
    if (total - 1.0).abs() > MATRIX_TOL {
        out.push(Diagnostic::error("/initial", format!("initial law sums to {total}, not 1")));
    }
    out
}

fn check_times(times: &[f64], pointer: &str, out: &mut Vec<Diagnostic>) {
    for (k, w) in times.windows(2).enumerate() {
        if w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater) {
            out.push(Diagnostic::error(
                format!("{pointer}/{}", k + 1),
                format!("times not strictly increasing ({} then {})", w[0], w[1]),
            ));
        }
    }
    if let Some(k) = times.iter().position(|t| !t.is_finite()) {
        out.push(Diagnostic::error(format!("{pointer}/{k}"), "time is not finite"));
    }
}

fn check_shape(q: &Matrix, n: usize, pointer: &str, out: &mut Vec<Diagnostic>) -> bool {
    if q.shape() != (n, n) {
        out.push(Diagnostic::error(
            pointer,
            format!("matrix is {}x{}, expected {n}x{n}", q.nrows(), q.ncols()),
        ));
        return false;
    }
    true
}

fn check_q_matrix(q: &Matrix, n: usize, pointer: &str, out: &mut Vec<Diagnostic>) {
    if !check_shape(q, n, pointer, out) {
        return;
    }
    for i in 0..n {
        let row: Vec<f64> = (0..n).map(|j| q[(i, j)]).collect();
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            out.push(Diagnostic::error(format!("{pointer}/{i}/{j}"), "entry is not finite"));
            continue;
        }
        for (j, &v) in row.iter().enumerate() {
            if j != i && v < -MATRIX_TOL {
                out.push(Diagnostic::error(
                    format!("{pointer}/{i}/{j}"),
                    format!("negative off-diagonal rate {v} at ({i}, {j})"),
                ));
            }
        }
        let scale = row.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let sum: f64 = row.iter().sum();
        if sum.abs() > MATRIX_TOL * scale {
            out.push(Diagnostic::error(
                format!("{pointer}/{i}"),
                format!("row {i} sums to {sum}, not 0"),
            ));
        }
    }
}

fn check_kernel(k: &Matrix, n: usize, pointer: &str, out: &mut Vec<Diagnostic>) {
    if !check_shape(k, n, pointer, out) {
        return;
    }
    for i in 0..n {
        let row: Vec<f64> = (0..n).map(|j| k[(i, j)]).collect();
        if let Some(j) = row.iter().position(|v| !v.is_finite() || *v < 0.0) {
            out.push(Diagnostic::error(
                format!("{pointer}/{i}/{j}"),
                format!("kernel entry {} is not a probability", row[j]),
            ));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > MATRIX_TOL {
            out.push(Diagnostic::error(
                format!("{pointer}/{i}"),
                format!("kernel row {i} sums to {sum}, not 1"),
            ));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        let n = rows.len();
        Matrix::from_fn(n, rows[0].len(), |i, j| rows[i][j])
    }

    fn two_state(a: f64, b: f64) -> Matrix {
        m(&[&[-a, a], &[b, -b]])
    }

    #[test]
    fn constant_rate_is_time_invariant() {
        let model = RateModel::constant(two_state(2.0, 1.0), 2.0);
        assert_eq!(model.rate_at(0.7, Side::Right).unwrap(), two_state(2.0, 1.0));
        assert_eq!(model.rate_at(0.7, Side::Left).unwrap(), two_state(2.0, 1.0));
    }

    #[test]
    fn piecewise_one_sided_values() {
        let q1 = two_state(2.0, 1.0);
        let q2 = two_state(5.0, 1.0);
        let model = RateModel::piecewise(vec![0.0, 1.0, 2.0], vec![q1.clone(), q2.clone()]);
        assert_eq!(model.rate_at(1.0, Side::Right).unwrap(), q2);
        assert_eq!(model.rate_at(1.0, Side::Left).unwrap(), q1);
        assert_eq!(model.rate_at(0.0, Side::Left).unwrap(), q1);
        assert_eq!(model.rate_at(2.0, Side::Right).unwrap(), q2);
        assert!(model.jumps_at(1.0));
        assert!(!model.jumps_at(0.5));
    }

    #[test]
    fn affine_at_zero_is_base() {
        let base = two_state(1.0, 1.0);
        let slope = two_state(1.0, 0.0);
        let model = RateModel::affine(base.clone(), slope, 2.0);
        assert_eq!(model.rate_at(0.0, Side::Right).unwrap(), base);
    }

    #[test]
    fn out_of_range_time() {
        let model = RateModel::constant(two_state(1.0, 1.0), 1.0);
        assert!(matches!(model.rate_at(1.5, Side::Right), Err(Error::OutOfRange { .. })));
        assert!(matches!(model.rate_at(-0.1, Side::Right), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn uniformization_bounds() {
        assert_eq!(RateModel::constant(two_state(2.0, 1.0), 1.0).uniformization_bound(), 2.0);
        let pw = RateModel::piecewise(vec![0.0, 1.0, 2.0], vec![two_state(2.0, 1.0), two_state(5.0, 1.0)]);
        assert_eq!(pw.uniformization_bound(), 5.0);
        // Diagonals -1 - t on [0, 2]: dense-grid maximum is 3.
        let aff = RateModel::affine(two_state(1.0, 1.0), two_state(1.0, 1.0), 2.0);
        let bound = aff.uniformization_bound();
        assert!((3.0..=3.0 * 1.01 + 1e-12).contains(&bound), "{bound}");
    }

    #[test]
    fn valid_two_state_spec_has_no_diagnostics() {
        let spec = ProcessSpec::from_state(RateModel::constant(two_state(2.0, 1.0), 1.0), 0);
        assert!(validate(&spec).is_empty());
    }

    #[test]
    fn bad_row_sum_is_reported_with_row() {
        let q = m(&[&[-2.0, 2.01], &[1.0, -1.0]]);
        let spec = ProcessSpec::from_state(RateModel::constant(q, 1.0), 0);
        let d = validate(&spec);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].pointer, "/rates/q/0");
        assert!(d[0].message.contains("row 0"));
    }

    #[test]
    fn negative_off_diagonal_is_reported_with_entry() {
        let q = m(&[&[0.5, -0.5], &[1.0, -1.0]]);
        let spec = ProcessSpec::from_state(RateModel::constant(q, 1.0), 0);
        let d = validate(&spec);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].pointer, "/rates/q/0/1");
    }

    #[test]
    fn jump_schedule_checks() {
        let k_bad = m(&[&[0.5, 0.6], &[0.0, 1.0]]);
        let spec = ProcessSpec::new(
            RateModel::constant(Matrix::zeros(2, 2), 2.0),
            Some(JumpSchedule::new(vec![1.0, 1.0, 3.0], vec![k_bad.clone(), k_bad.clone(), k_bad])),
            Vector::from_vec(vec![1.0, 0.0]),
        );
        let d = validate(&spec);
        assert!(d.iter().any(|d| d.pointer == "/jumps/times/1"));
        assert!(d.iter().any(|d| d.pointer == "/jumps/times/2"));
        assert!(d.iter().any(|d| d.pointer == "/jumps/kernels/0/0"));
    }

    #[test]
    fn affine_invalid_at_horizon() {
        // Off-diagonal 1 - t turns negative after t = 1.
        let base = two_state(1.0, 1.0);
        let slope = two_state(-1.0, 0.0);
        let spec = ProcessSpec::from_state(RateModel::affine(base, slope, 2.0), 0);
        let d = validate(&spec);
        assert!(d.iter().any(|d| d.message.contains("t = T")));
    }

    #[test]
    fn initial_law_checks() {
        let mut spec = ProcessSpec::from_state(RateModel::constant(two_state(1.0, 1.0), 1.0), 0);
        spec.initial = Vector::from_vec(vec![0.7, 0.7]);
        assert_eq!(validate(&spec).len(), 1);
    }

    #[test]
    fn exact_integration_along_state() {
        // Affine diagonal -1 - t, f = (0, 1): (Q_s f)(0) = 1 + s, integral over [0, 2] is 4.
        let model = RateModel::affine(two_state(1.0, 1.0), two_state(1.0, 1.0), 2.0);
        let v = model.integrate_row(0, &[0.0, 1.0], 0.0, 2.0);
        assert!((v - 4.0).abs() < 1e-12);
        let pw = RateModel::piecewise(vec![0.0, 1.0, 2.0], vec![two_state(2.0, 1.0), two_state(5.0, 1.0)]);
        assert!((pw.integrate_row(0, &[0.0, 1.0], 0.5, 1.5) - (0.5 * 2.0 + 0.5 * 5.0)).abs() < 1e-12);
    }

    fn arb_q(n: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(0.0f64..3.0, n * n).prop_map(move |v| {
            let mut q = Matrix::from_vec(n, n, v);
            rebalance(&mut q);
            q
        })
    }

    proptest! {
        #[test]
        fn sampled_interpolants_are_q_matrices(
            a in arb_q(3), b in arb_q(3), t in 0.0f64..1.0
        ) {
            let model = RateModel::sampled(vec![0.0, 1.0], vec![a, b]);
            let q = model.rate_at(t, Side::Right).unwrap();
            for i in 0..3 {
                let s: f64 = q.row(i).iter().sum();
                prop_assert!(s.abs() <= 1e-12);
                for j in 0..3 {
                    if i != j { prop_assert!(q[(i, j)] >= 0.0); }
                }
            }
        }

        #[test]
        fn bound_dominates_exit_rates(
            a in arb_q(3), b in arb_q(3), c in arb_q(3),
            ts in proptest::collection::vec(0.0f64..2.0, 200)
        ) {
            let models = vec![
                RateModel::sampled(vec![0.0, 0.5, 2.0], vec![a.clone(), b.clone(), c.clone()]),
                RateModel::affine(a.clone(), b.clone(), 2.0),
                RateModel::piecewise(vec![0.0, 1.0, 2.0], vec![a, c]),
            ];
            for model in &models {
                let bound = model.uniformization_bound();
                for &t in &ts {
                    let q = model.rate_at(t, Side::Right).unwrap();
                    for i in 0..3 {
                        prop_assert!(-q[(i, i)] <= bound + 1e-12);
                    }
                }
            }
        }
    }
}
