//! Path simulation by thinning and stratified z-tests of martingale
//! properties along simulated paths.
//!
//! Conditioning on the state at the earlier checkpoint (rather than on the
//! full past) is valid by the Markov property. On a finite state space all
//! integrands are bounded, so local martingales here are true martingales
//! and no localisation is needed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::evolution::{EvolutionSystem, KnotValues};
use crate::rates::{ProcessSpec, Side};
use crate::state::TestFunction;
use crate::{Error, Result, Vector};

pub const DEFAULT_PATHS: usize = 100_000;
pub const DEFAULT_Z_MAX: f64 = 4.0;
/// Cells with fewer paths than this are skipped.
const MIN_CELL: usize = 2;
/// Mean treated as exactly zero when its standard error vanishes.
const ZERO_MEAN: f64 = 1e-12;

/// One simulated path: the initial state and every recorded transition.
/// Fixed epochs are always recorded, possibly as self-transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub initial: usize,
    pub times: Vec<f64>,
    pub states: Vec<usize>,
}

impl PathSample {
    /// `X_t` (right-continuous).
    pub fn state_at(&self, t: f64) -> usize {
        match self.times.partition_point(|&s| s <= t) {
            0 => self.initial,
            k => self.states[k - 1],
        }
    }

    /// `X_{t-}`.
    pub fn state_before(&self, t: f64) -> usize {
        match self.times.partition_point(|&s| s < t) {
            0 => self.initial,
            k => self.states[k - 1],
        }
    }
}

/// `n_paths` independent paths of `spec` on `[0, T]`.
///
/// Candidate events arrive at rate `Lambda = uniformization_bound()`; a
/// candidate at `t` in state `i` is accepted with probability
/// `-Q_t[i,i] / Lambda` and moves to `j` with probability
/// `Q_t[i,j] / -Q_t[i,i]`. At each epoch the state is redrawn from the
/// kernel row. Path `p` uses stream `p` of a ChaCha generator keyed by
/// `seed`, so results do not depend on thread scheduling.
pub fn simulate(spec: &ProcessSpec, n_paths: usize, seed: u64) -> Vec<PathSample> {
    let lambda = spec.rates.uniformization_bound();
    (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            simulate_one(spec, lambda, &mut rng)
        })
        .collect()
}

fn simulate_one(spec: &ProcessSpec, lambda: f64, rng: &mut ChaCha8Rng) -> PathSample {
    let n = spec.n();
    let horizon = spec.horizon();
    let epochs = spec.epochs();
    let kernels = spec.jumps.as_ref().map(|j| j.kernels.as_slice()).unwrap_or(&[]);
    let mut row = vec![0.0; n];
    let mut state = categorical(rng, spec.initial.iter().copied());
    let mut path = PathSample { initial: state, times: Vec::new(), states: Vec::new() };
    let mut t = 0.0;
    let mut next_epoch = 0;
    loop {
        let candidate = if lambda > 0.0 {
            t - (1.0 - rng.random::<f64>()).ln() / lambda
        } else {
            f64::INFINITY
        };
        while next_epoch < epochs.len() && epochs[next_epoch] <= candidate.min(horizon) {
            let k = &kernels[next_epoch];
            state = categorical(rng, (0..n).map(|j| k[(state, j)]));
            path.times.push(epochs[next_epoch]);
            path.states.push(state);
            next_epoch += 1;
        }
        if candidate > horizon {
            break;
        }
        t = candidate;
        spec.rates.row_into(t, Side::Right, state, &mut row);
        let exit = -row[state];
        if rng.random::<f64>() * lambda < exit {
            let from = state;
            state = categorical(rng, (0..n).map(|j| if j == from { 0.0 } else { row[j].max(0.0) }));
            path.times.push(t);
            path.states.push(state);
        }
    }
    path
}

/// Index drawn with probability proportional to `weights`.
fn categorical(rng: &mut ChaCha8Rng, weights: impl Iterator<Item = f64> + Clone) -> usize {
    let total: f64 = weights.clone().sum();
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (j, w) in weights.enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = j;
        if target < acc {
            return j;
        }
    }
    last
}

/// Empirical law of `X_c` with per-state standard errors.
pub fn empirical_marginal(paths: &[PathSample], n: usize, c: f64) -> (Vector, Vector) {
    let mut counts = vec![0usize; n];
    for p in paths {
        counts[p.state_at(c)] += 1;
    }
    let total = paths.len().max(1) as f64;
    let probs = Vector::from_iterator(n, counts.iter().map(|&k| k as f64 / total));
    let se = probs.map(|p| (p * (1.0 - p) / total).sqrt());
    (probs, se)
}

/// Path mean of `f(X_c)` and its standard error.
pub fn empirical_mean(paths: &[PathSample], f: &TestFunction, c: f64) -> (f64, f64) {
    let values: Vec<f64> = paths.iter().map(|p| f.values[p.state_at(c)]).collect();
    mean_se(&values)
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    /// `H0: E[M_t - M_s | X_s] = 0`.
    TwoSided,
    /// `H0: E[M_t - M_s | X_s] <= 0`; rejects on large positive z.
    Super,
    /// `H0: E[M_t - M_s | X_s] >= 0`; rejects on large negative z.
    Sub,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub s: f64,
    pub t: f64,
    pub state: usize,
    pub count: usize,
    pub mean: f64,
    pub se: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedCell {
    pub s: f64,
    pub t: f64,
    pub state: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleTestResult {
    pub kind: TestKind,
    pub checkpoints: Vec<f64>,
    pub z_max: f64,
    pub cells: Vec<Cell>,
    pub skipped: Vec<SkippedCell>,
    /// Largest `|z|` over tested cells.
    pub max_abs_z: f64,
    /// Cell with the largest rejection statistic for `kind`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst: Option<Cell>,
    pub pass: bool,
    /// Mean of the cumulative compensator at each checkpoint (space-time
    /// tests only).
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub compensator_means: Vec<f64>,
    pub notes: Vec<String>,
}

impl MartingaleTestResult {
    pub fn to_csv_rows(&self, test: &str, out: &mut String) {
        for c in &self.cells {
            out.push_str(&format!(
                "{test},{},{},{},{},{:.17e},{:.17e},{:.6}\n",
                c.s, c.t, c.state, c.count, c.mean, c.se, c.z
            ));
        }
    }
}

pub const CSV_HEADER: &str = "test,s,t,state,count,mean,se,z\n";

fn rejection(kind: TestKind, z: f64) -> f64 {
    match kind {
        TestKind::TwoSided => z.abs(),
        TestKind::Super => z,
        TestKind::Sub => -z,
    }
}

/// Sorted checkpoints with `0` prepended, validated against `[0, horizon]`.
fn prepare_checkpoints(checkpoints: &[f64], horizon: f64) -> Result<Vec<f64>> {
    let mut c = vec![0.0];
    for &t in checkpoints {
        if !(0.0..=horizon).contains(&t) {
            return Err(Error::OutOfRange { t, horizon });
        }
        c.push(t);
    }
    c.sort_by(f64::total_cmp);
    c.dedup();
    Ok(c)
}

/// Stratified z-test on per-path process values at checkpoints. `values[p]`
/// and `states[p]` hold the process and the chain state at each checkpoint.
fn stratified_test(
    checkpoints: &[f64],
    values: &[Vec<f64>],
    states: &[Vec<usize>],
    n: usize,
    kind: TestKind,
    z_max: f64,
) -> MartingaleTestResult {
    let mut cells = Vec::new();
    let mut skipped = Vec::new();
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); n];
    for j in 0..checkpoints.len() {
        for k in j + 1..checkpoints.len() {
            buckets.iter_mut().for_each(Vec::clear);
            for (v, s) in values.iter().zip(states) {
                buckets[s[j]].push(v[k] - v[j]);
            }
            for (state, b) in buckets.iter().enumerate() {
                let (s, t) = (checkpoints[j], checkpoints[k]);
                if b.len() < MIN_CELL {
                    if !b.is_empty() || j > 0 {
                        skipped.push(SkippedCell { s, t, state, count: b.len() });
                    }
                    continue;
                }
                let (mean, se) = mean_se(b);
                let z = if se > 0.0 {
                    mean / se
                } else if mean.abs() <= ZERO_MEAN {
                    0.0
                } else {
                    mean.signum() * f64::INFINITY
                };
                cells.push(Cell { s, t, state, count: b.len(), mean, se, z });
            }
        }
    }
    let max_abs_z = cells.iter().map(|c| c.z.abs()).fold(0.0, f64::max);
    let worst = cells
        .iter()
        .max_by(|a, b| rejection(kind, a.z).total_cmp(&rejection(kind, b.z)))
        .cloned();
    let pass = worst.as_ref().is_none_or(|c| rejection(kind, c.z) <= z_max);
    MartingaleTestResult {
        kind,
        checkpoints: checkpoints.to_vec(),
        z_max,
        cells,
        skipped,
        max_abs_z,
        worst,
        pass,
        compensator_means: Vec::new(),
        notes: vec![
            "increments conditioned on the state at the earlier checkpoint (Markov property)".into(),
            "bounded integrands on a finite state space: no localisation needed".into(),
        ],
    }
}

/// Walks a path once, accumulating `value(t, X_t) - value(0, X_0)` minus the
/// compensator up to every checkpoint. `drift(x, a, b)` integrates the
/// drift along a constant state; `atom(e, x)` is the expected jump of the
/// value at epoch index `e` from pre-jump state `x`.
fn dynkin_values(
    path: &PathSample,
    epochs: &[f64],
    checkpoints: &[f64],
    value: impl Fn(f64, usize) -> f64,
    drift: impl Fn(usize, f64, f64) -> f64,
    atom: impl Fn(usize, usize) -> f64,
) -> (Vec<f64>, Vec<usize>, Vec<f64>) {
    let start = value(0.0, path.initial);
    let mut compensator = 0.0;
    let mut state = path.initial;
    let mut from = 0.0;
    let mut rec = 0;
    let mut next_epoch = 0;
    let mut values = Vec::with_capacity(checkpoints.len());
    let mut states = Vec::with_capacity(checkpoints.len());
    let mut comps = Vec::with_capacity(checkpoints.len());
    for &c in checkpoints {
        while rec < path.times.len() && path.times[rec] <= c {
            let tau = path.times[rec];
            compensator += drift(state, from, tau);
            while next_epoch < epochs.len() && epochs[next_epoch] < tau {
                next_epoch += 1;
            }
            if next_epoch < epochs.len() && epochs[next_epoch] == tau {
                compensator += atom(next_epoch, state);
                next_epoch += 1;
            }
            state = path.states[rec];
            from = tau;
            rec += 1;
        }
        let comp = compensator + drift(state, from, c);
        values.push(value(c, state) - start - comp);
        states.push(state);
        comps.push(comp);
    }
    (values, states, comps)
}

/// Dynkin martingale `M_c = f(X_c) - f(X_0) - int_0^c (Q_s f)(X_s) ds -
/// sum_{tau <= c} ((K_tau - I) f)(X_{tau-})` for paths of `spec` (or, for
/// mutation tests, paths of another process), z-tested per checkpoint pair
/// and conditioning state.
pub fn martingale_test(
    paths: &[PathSample],
    spec: &ProcessSpec,
    f: &TestFunction,
    checkpoints: &[f64],
    z_max: f64,
) -> Result<MartingaleTestResult> {
    if f.len() != spec.n() {
        return Err(Error::Dimension { expected: spec.n(), got: f.len() });
    }
    let cps = prepare_checkpoints(checkpoints, spec.horizon())?;
    let fv = f.values.as_slice();
    let epochs = spec.epochs();
    let kernels = spec.jumps.as_ref().map(|j| j.kernels.as_slice()).unwrap_or(&[]);
    let atoms: Vec<Vector> = kernels.iter().map(|k| k * &f.values - &f.values).collect();
    let per_path: Vec<(Vec<f64>, Vec<usize>, Vec<f64>)> = paths
        .par_iter()
        .map(|p| {
            dynkin_values(
                p,
                epochs,
                &cps,
                |_, x| fv[x],
                |x, a, b| spec.rates.integrate_row(x, fv, a, b),
                |e, x| atoms[e][x],
            )
        })
        .collect();
    let (values, states): (Vec<_>, Vec<_>) = per_path.into_iter().map(|(v, s, _)| (v, s)).unzip();
    Ok(stratified_test(&cps, &values, &states, spec.n(), TestKind::TwoSided, z_max))
}

/// A function of time and state given on knots, interpolated linearly in
/// time between the right value at one knot and the left value at the next.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeFunction {
    pub knots: Vec<f64>,
    pub right: Vec<Vector>,
    pub left: Vec<Vector>,
}

impl SpaceTimeFunction {
    /// Knot values (for instance `T^X_{s,t} f` for `s <= t`) on the leading
    /// knots of `knots`.
    pub fn from_knot_values(knots: &[f64], values: &KnotValues) -> Self {
        Self {
            knots: knots[..values.len()].to_vec(),
            right: values.right.clone(),
            left: values.left.clone(),
        }
    }

    pub fn constant(knots: &[f64], v: &Vector) -> Self {
        Self { knots: knots.to_vec(), right: vec![v.clone(); knots.len()], left: vec![v.clone(); knots.len()] }
    }

    pub fn end(&self) -> f64 {
        *self.knots.last().expect("non-empty knots")
    }

    /// `u(s, x)` from the requested side; times past the last knot take
    /// the last value.
    pub fn value(&self, s: f64, x: usize, side: Side) -> f64 {
        let k = self.knots.partition_point(|&t| t <= s);
        if k == 0 {
            return self.right[0][x];
        }
        let k = k - 1;
        if s == self.knots[k] {
            return if side == Side::Left && k > 0 { self.left[k][x] } else { self.right[k][x] };
        }
        if k + 1 >= self.knots.len() {
            return self.right[k][x];
        }
        let w = (s - self.knots[k]) / (self.knots[k + 1] - self.knots[k]);
        (1.0 - w) * self.right[k][x] + w * self.left[k + 1][x]
    }

    fn value_vec(&self, s: f64, side: Side) -> Vec<f64> {
        (0..self.right[0].len()).map(|x| self.value(s, x, side)).collect()
    }
}

/// `int_a^b (Q_s u(s))(x) ds` by Simpson on every piece between knots and
/// rate breakpoints (exact when both factors are linear on each piece).
fn drift_integral(spec: &ProcessSpec, u: &SpaceTimeFunction, cuts: &[f64], x: usize, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let lo = cuts.partition_point(|&c| c <= a);
    let hi = cuts.partition_point(|&c| c < b);
    let mut points = Vec::with_capacity(hi.saturating_sub(lo) + 2);
    points.push(a);
    points.extend_from_slice(&cuts[lo..hi.max(lo)]);
    points.push(b);
    points
        .windows(2)
        .map(|w| {
            let (p, q) = (w[0], w[1]);
            let mid = 0.5 * (p + q);
            let fp = spec.rates.apply_row(p, Side::Right, x, &u.value_vec(p, Side::Right));
            let fm = spec.rates.apply_row(mid, Side::Right, x, &u.value_vec(mid, Side::Right));
            let fq = spec.rates.apply_row(q, Side::Left, x, &u.value_vec(q, Side::Left));
            (q - p) * (fp + 4.0 * fm + fq) / 6.0
        })
        .sum()
}

/// Dynkin martingale of a space-time function along paths of `spec`:
/// `M_c = u(c, X_c) - u(0, X_0) - int_0^c (d/ds + Q_s) u(s, X_s) ds -
/// sum_{tau <= c} [(K_tau u(tau))(X_{tau-}) - u(tau-, X_{tau-})]`.
///
/// The time derivative integrates exactly to one-sided knot differences of
/// the interpolant. The result also reports the mean cumulative
/// compensator at each checkpoint.
pub fn spacetime_martingale_test(
    paths: &[PathSample],
    spec: &ProcessSpec,
    u: &SpaceTimeFunction,
    checkpoints: &[f64],
    z_max: f64,
    kind: TestKind,
) -> Result<MartingaleTestResult> {
    if u.right.first().map(|v| v.len()) != Some(spec.n()) {
        return Err(Error::Dimension { expected: spec.n(), got: u.right.first().map_or(0, |v| v.len()) });
    }
    let cps = prepare_checkpoints(checkpoints, u.end())?;
    let epochs = spec.epochs();
    let kernels = spec.jumps.as_ref().map(|j| j.kernels.as_slice()).unwrap_or(&[]);
    let mut cuts: Vec<f64> = u.knots.clone();
    cuts.extend(spec.rates.breakpoints());
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let atoms: Vec<Vector> = epochs
        .iter()
        .zip(kernels)
        .map(|(&tau, k)| {
            let right = Vector::from_vec(u.value_vec(tau, Side::Right));
            let left = Vector::from_vec(u.value_vec(tau, Side::Left));
            k * right - left
        })
        .collect();
    let per_path: Vec<(Vec<f64>, Vec<usize>, Vec<f64>)> = paths
        .par_iter()
        .map(|p| {
            dynkin_values(
                p,
                epochs,
                &cps,
                |t, x| u.value(t, x, Side::Right),
                |x, a, b| {
                    if b <= a {
                        return 0.0;
                    }
                    u.value(b, x, Side::Left) - u.value(a, x, Side::Right) + drift_integral(spec, u, &cuts, x, a, b)
                },
                |e, x| atoms[e][x],
            )
        })
        .collect();
    let mut comp_sums = vec![0.0; cps.len()];
    for (_, _, c) in &per_path {
        for (acc, v) in comp_sums.iter_mut().zip(c) {
            *acc += v;
        }
    }
    let total = paths.len().max(1) as f64;
    let (values, states): (Vec<_>, Vec<_>) = per_path.into_iter().map(|(v, s, _)| (v, s)).unzip();
    let mut result = stratified_test(&cps, &values, &states, spec.n(), kind, z_max);
    result.compensator_means = comp_sums.into_iter().map(|s| s / total).collect();
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkingTestResult {
    pub t: f64,
    pub test: MartingaleTestResult,
    /// Path mean of `L_t = T^X_{t,t} f(Y_t)`.
    pub mean_linking_end: f64,
    /// Path mean of `f(Y_t)`.
    pub mean_f_end: f64,
    pub endpoint_gap: f64,
    /// Exact `E f(Y_t)` and the z-score of the path mean against it.
    pub exact_f_end: f64,
    pub se_f_end: f64,
    pub oracle_z: f64,
}

/// Tests the linking process `L_s = T^X_{s,t} f(Y_s)` along paths of `Y`
/// at knots nearest to the given checkpoints (clamped to `[0, t]`).
#[allow(clippy::too_many_arguments)]
pub fn linking_supermartingale_test(
    paths_y: &[PathSample],
    ev_x: &EvolutionSystem,
    ev_y: &EvolutionSystem,
    f: &TestFunction,
    t: f64,
    checkpoints: &[f64],
    z_max: f64,
    kind: TestKind,
) -> Result<LinkingTestResult> {
    if f.len() != ev_x.n() || ev_y.n() != ev_x.n() {
        return Err(Error::Dimension { expected: ev_x.n(), got: f.len().min(ev_y.n()) });
    }
    let grid = ev_x.grid();
    let ti = grid.index_of(t)?;
    let u = ev_x.backward(&f.values, ti);
    let mut idx: Vec<usize> = checkpoints.iter().map(|&c| grid.nearest(c.clamp(0.0, t)).min(ti)).collect();
    idx.push(0);
    idx.push(ti);
    idx.sort_unstable();
    idx.dedup();
    let cps: Vec<f64> = idx.iter().map(|&k| grid.knot(k)).collect();
    let per_path: Vec<(Vec<f64>, Vec<usize>)> = paths_y
        .par_iter()
        .map(|p| {
            let states: Vec<usize> = cps.iter().map(|&c| p.state_at(c)).collect();
            let values = idx.iter().zip(&states).map(|(&k, &x)| u.right[k][x]).collect();
            (values, states)
        })
        .collect();
    let (values, states): (Vec<_>, Vec<_>) = per_path.into_iter().unzip();
    let test = stratified_test(&cps, &values, &states, ev_x.n(), kind, z_max);

    let last = cps.len() - 1;
    let ends: Vec<f64> = values.iter().map(|v| v[last]).collect();
    let (mean_linking_end, _) = mean_se(&ends);
    let (mean_f_end, se_f_end) = empirical_mean(paths_y, f, t);
    let exact_f_end = ev_y.spec().initial.dot(&ev_y.backward(&f.values, ti).right[0]);
    let oracle_z = if se_f_end > 0.0 { (mean_f_end - exact_f_end) / se_f_end } else { 0.0 };
    Ok(LinkingTestResult {
        t,
        test,
        mean_linking_end,
        mean_f_end,
        endpoint_gap: mean_linking_end - mean_f_end,
        exact_f_end,
        se_f_end,
        oracle_z,
    })
}
