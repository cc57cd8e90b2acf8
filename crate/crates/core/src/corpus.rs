//! Named example processes and the seeded random soundness corpus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::comparison::{check, CheckOptions, Theorem, Verdict};
use crate::evolution::{build_evolution, EvolutionSystem, TimeGrid, BLOCK_TOL};
use crate::rates::{rebalance, JumpSchedule, ProcessSpec, RateModel};
use crate::state::TestFunction;
use crate::{Error, Matrix, Result, Vector};

/// Master seed of the soundness corpus.
pub const MASTER_SEED: u64 = 20_240_917;
pub const CORPUS_SIZE: usize = 100;
pub const CORPUS_STEPS: usize = 64;

/// `[[-a, a], [b, -b]]`.
pub fn two_state(a: f64, b: f64) -> Matrix {
    Matrix::from_row_slice(2, 2, &[-a, a, b, -b])
}

/// The two-state demo pair on `[0, 1]`: `X` moves up at rate 2, `Y` at
/// rate 1, both down at rate 1, both started in state 0.
pub fn demo_pair() -> (ProcessSpec, ProcessSpec) {
    (
        ProcessSpec::from_state(RateModel::constant(two_state(2.0, 1.0), 1.0), 0),
        ProcessSpec::from_state(RateModel::constant(two_state(1.0, 1.0), 1.0), 0),
    )
}

/// `f = (0, 1)`.
pub fn up_indicator() -> TestFunction {
    TestFunction::named(vec![0.0, 1.0], "up").expect("finite values")
}

/// A pair on `[0, 2]` whose rates of `X` drop at `s = 1`: right and left
/// generators differ exactly at the comparison time `t = 1`.
pub fn breakpoint_pair() -> (ProcessSpec, ProcessSpec) {
    (
        ProcessSpec::from_state(
            RateModel::piecewise(vec![0.0, 1.0, 2.0], vec![two_state(2.0, 1.0), two_state(0.5, 1.0)]),
            0,
        ),
        ProcessSpec::from_state(RateModel::constant(two_state(1.0, 1.0), 2.0), 0),
    )
}

/// Pure-jump pair on `[0, 2]` with epochs 1 and 2 and kernels
/// `[[1-p, p], [0, 1]]`, `p = 0.5` for `X` and `0.3` for `Y`.
pub fn fixed_jump_pair() -> (ProcessSpec, ProcessSpec) {
    let make = |p: f64| {
        let k = Matrix::from_row_slice(2, 2, &[1.0 - p, p, 0.0, 1.0]);
        ProcessSpec::new(
            RateModel::constant(Matrix::zeros(2, 2), 2.0),
            Some(JumpSchedule::new(vec![1.0, 2.0], vec![k.clone(), k])),
            Vector::from_vec(vec![1.0, 0.0]),
        )
    };
    (make(0.5), make(0.3))
}

/// Evolution systems of a pair on a common grid of `steps` intervals.
pub fn build_pair(x: &ProcessSpec, y: &ProcessSpec, steps: usize) -> Result<(EvolutionSystem, EvolutionSystem)> {
    let grid = TimeGrid::for_specs(steps, &[x, y])?;
    Ok((build_evolution(x, &grid, BLOCK_TOL)?, build_evolution(y, &grid, BLOCK_TOL)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Birth-death chains with `X` moving up faster and down slower.
    BirthDeath,
    /// Independent random dense chains.
    Dense,
    /// `Y` equal to `X` except for one perturbed rate.
    Perturbed,
    Identical,
    /// Shared fixed epochs; kernels of `X` shifted towards the top state.
    FixedJumps,
    /// `X` has absorbing or unreachable states.
    SupportGap,
}

impl Family {
    const ALL: [Family; 6] = [
        Family::BirthDeath,
        Family::Dense,
        Family::Perturbed,
        Family::Identical,
        Family::FixedJumps,
        Family::SupportGap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::BirthDeath => "birth_death",
            Family::Dense => "dense",
            Family::Perturbed => "perturbed",
            Family::Identical => "identical",
            Family::FixedJumps => "fixed_jumps",
            Family::SupportGap => "support_gap",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusScenario {
    pub id: usize,
    pub family: Family,
    pub x: ProcessSpec,
    pub y: ProcessSpec,
    pub f: TestFunction,
    pub t: f64,
    pub steps: usize,
}

impl CorpusScenario {
    pub fn build(&self) -> Result<(EvolutionSystem, EvolutionSystem)> {
        build_pair(&self.x, &self.y, self.steps)
    }

    /// Number of states.
    pub fn n(&self) -> usize {
        self.x.n()
    }
}

/// `count` scenarios cycling through the families, scenario `i` drawn from
/// stream `i` of a generator keyed by `seed`.
pub fn soundness_corpus(count: usize, seed: u64) -> Vec<CorpusScenario> {
    (0..count)
        .map(|id| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id as u64);
            let family = Family::ALL[id % Family::ALL.len()];
            random_scenario(id, family, &mut rng)
        })
        .collect()
}

fn random_scenario(id: usize, family: Family, rng: &mut ChaCha8Rng) -> CorpusScenario {
    let horizon = [1.0, 1.5, 2.0][rng.random_range(0..3)];
    let t = if rng.random_bool(0.5) { horizon } else { horizon / 2.0 };
    let (x, y, f) = match family {
        Family::BirthDeath => birth_death(rng, horizon),
        Family::Dense => {
            let n = rng.random_range(2..=6);
            let x = ProcessSpec::new(random_model(rng, n, horizon, 3.0), None, random_law(rng, n));
            let mut y = ProcessSpec::new(random_model(rng, n, horizon, 3.0), None, x.initial.clone());
            if rng.random_bool(0.2) {
                y.initial = random_law(rng, n);
            }
            (x, y, random_function(rng, n))
        }
        Family::Perturbed => {
            let n = rng.random_range(2..=6);
            let q = random_rates(rng, n, 3.0, 0.8);
            let mut p = q.clone();
            let (i, j) = distinct_pair(rng, n);
            p[(i, j)] = (p[(i, j)] + rng.random_range(-1.0..1.0)).max(0.0);
            rebalance(&mut p);
            let law = random_law(rng, n);
            (
                ProcessSpec::new(RateModel::constant(q, horizon), None, law.clone()),
                ProcessSpec::new(RateModel::constant(p, horizon), None, law),
                random_function(rng, n),
            )
        }
        Family::Identical => {
            let n = rng.random_range(2..=6);
            let x = ProcessSpec::new(random_model(rng, n, horizon, 3.0), None, random_law(rng, n));
            (x.clone(), x, random_function(rng, n))
        }
        Family::FixedJumps => fixed_jumps(rng, horizon),
        Family::SupportGap => {
            let n = rng.random_range(3..=6);
            let mut qx = random_rates(rng, n, 3.0, 0.8);
            // Make the top state absorbing and unreachable from below for X.
            for j in 0..n {
                qx[(n - 1, j)] = 0.0;
                qx[(j, n - 1)] = 0.0;
            }
            rebalance(&mut qx);
            let qy = random_rates(rng, n, 3.0, 0.8);
            let mut law = random_law(rng, n);
            law[n - 1] = 0.0;
            if law.sum() == 0.0 {
                law[0] = 1.0;
            }
            law /= law.sum();
            (
                ProcessSpec::new(RateModel::constant(qx, horizon), None, law.clone()),
                ProcessSpec::new(RateModel::constant(qy, horizon), None, law),
                random_function(rng, n),
            )
        }
    };
    CorpusScenario { id, family, x, y, f, t, steps: CORPUS_STEPS }
}

fn distinct_pair(rng: &mut ChaCha8Rng, n: usize) -> (usize, usize) {
    let i = rng.random_range(0..n);
    let j = (i + rng.random_range(1..n)) % n;
    (i, j)
}

/// Off-diagonal rates uniform on `[0, scale)`, each present with
/// probability `density`.
fn random_rates(rng: &mut ChaCha8Rng, n: usize, scale: f64, density: f64) -> Matrix {
    let mut q = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random_bool(density) {
                q[(i, j)] = rng.random_range(0.0..scale);
            }
        }
    }
    rebalance(&mut q);
    q
}

/// A constant, two-piece or affine model with random rates.
fn random_model(rng: &mut ChaCha8Rng, n: usize, horizon: f64, scale: f64) -> RateModel {
    match rng.random_range(0..3) {
        0 => RateModel::constant(random_rates(rng, n, scale, 0.7), horizon),
        1 => RateModel::piecewise(
            vec![0.0, horizon / 2.0, horizon],
            vec![random_rates(rng, n, scale, 0.7), random_rates(rng, n, scale, 0.7)],
        ),
        _ => {
            let a = random_rates(rng, n, scale, 0.7);
            let b = random_rates(rng, n, scale, 0.7);
            RateModel::affine(a.clone(), (b - a) / horizon, horizon)
        }
    }
}

fn random_law(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    if rng.random_bool(0.5) {
        let mut v = Vector::zeros(n);
        v[rng.random_range(0..n)] = 1.0;
        v
    } else {
        let v = Vector::from_fn(n, |_, _| rng.random_range(0.05..1.0));
        let total = v.sum();
        v / total
    }
}

fn random_function(rng: &mut ChaCha8Rng, n: usize) -> TestFunction {
    TestFunction::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), None).expect("finite values")
}

fn increasing_function(rng: &mut ChaCha8Rng, n: usize) -> TestFunction {
    let mut acc = rng.random_range(-1.0..1.0);
    let values = (0..n)
        .map(|_| {
            let v = acc;
            acc += rng.random_range(0.0..1.0);
            v
        })
        .collect();
    TestFunction::new(values, None).expect("finite values")
}

/// Ordered birth-death rate matrices: births of `X` dominate those of `Y`,
/// deaths of `X` are dominated by those of `Y`.
fn ordered_birth_death(rng: &mut ChaCha8Rng, n: usize) -> (Matrix, Matrix) {
    let mut qx = Matrix::zeros(n, n);
    let mut qy = Matrix::zeros(n, n);
    for i in 0..n {
        if i + 1 < n {
            let up = rng.random_range(0.2..2.0);
            qx[(i, i + 1)] = up;
            qy[(i, i + 1)] = up * rng.random_range(0.3..1.0);
        }
        if i > 0 {
            let down = rng.random_range(0.2..2.0);
            qy[(i, i - 1)] = down;
            qx[(i, i - 1)] = down * rng.random_range(0.3..1.0);
        }
    }
    rebalance(&mut qx);
    rebalance(&mut qy);
    (qx, qy)
}

fn birth_death(rng: &mut ChaCha8Rng, horizon: f64) -> (ProcessSpec, ProcessSpec, TestFunction) {
    let n = rng.random_range(2..=6);
    let (mx, my) = match rng.random_range(0..3) {
        0 => {
            let (qx, qy) = ordered_birth_death(rng, n);
            (RateModel::constant(qx, horizon), RateModel::constant(qy, horizon))
        }
        1 => {
            let (ax, ay) = ordered_birth_death(rng, n);
            let (bx, by) = ordered_birth_death(rng, n);
            let cuts = vec![0.0, horizon / 2.0, horizon];
            (RateModel::piecewise(cuts.clone(), vec![ax, bx]), RateModel::piecewise(cuts, vec![ay, by]))
        }
        _ => {
            // Linear interpolation between ordered endpoints stays ordered.
            let (ax, ay) = ordered_birth_death(rng, n);
            let (bx, by) = ordered_birth_death(rng, n);
            (
                RateModel::affine(ax.clone(), (bx - ax) / horizon, horizon),
                RateModel::affine(ay.clone(), (by - ay) / horizon, horizon),
            )
        }
    };
    let law = random_law(rng, n);
    (ProcessSpec::new(mx, None, law.clone()), ProcessSpec::new(my, None, law), increasing_function(rng, n))
}

fn fixed_jumps(rng: &mut ChaCha8Rng, horizon: f64) -> (ProcessSpec, ProcessSpec, TestFunction) {
    let n = rng.random_range(2..=4);
    let times = if rng.random_bool(0.5) { vec![horizon / 2.0] } else { vec![horizon / 2.0, horizon] };
    let mut kx = Vec::new();
    let mut ky = Vec::new();
    for _ in &times {
        let mut k = Matrix::from_fn(n, n, |_, _| rng.random_range(0.0..1.0));
        for i in 0..n {
            let s: f64 = k.row(i).sum();
            k.row_mut(i).scale_mut(1.0 / s);
        }
        let alpha = rng.random_range(0.0..0.5);
        let mut shifted = &k * (1.0 - alpha);
        for i in 0..n {
            shifted[(i, n - 1)] += alpha;
        }
        kx.push(shifted);
        ky.push(k);
    }
    let (qx, qy) = if rng.random_bool(0.5) {
        (Matrix::zeros(n, n), Matrix::zeros(n, n))
    } else {
        let q = random_rates(rng, n, 1.0, 0.7);
        (q.clone(), q)
    };
    let law = random_law(rng, n);
    (
        ProcessSpec::new(RateModel::constant(qx, horizon), Some(JumpSchedule::new(times.clone(), kx)), law.clone()),
        ProcessSpec::new(RateModel::constant(qy, horizon), Some(JumpSchedule::new(times, ky)), law),
        increasing_function(rng, n),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SoundnessRow {
    pub id: usize,
    pub family: Family,
    pub theorem: Theorem,
    pub reversed: bool,
    pub verdict: Verdict,
    pub oracle_margin: f64,
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SoundnessSummary {
    pub scenarios: usize,
    pub rows: Vec<SoundnessRow>,
    /// Checks that returned a verdict, excluding inapplicable ones.
    pub checks: usize,
    pub certified: usize,
    pub violations: usize,
}

impl SoundnessSummary {
    pub fn table(&self) -> String {
        let mut out = format!("{:<12} {:>8} {:>10} {:>11}\n", "theorem", "checks", "certified", "violations");
        for th in Theorem::ALL {
            let rows: Vec<_> = self.rows.iter().filter(|r| r.theorem == th).collect();
            out.push_str(&format!(
                "{:<12} {:>8} {:>10} {:>11}\n",
                th.name(),
                rows.len(),
                rows.iter().filter(|r| r.verdict.is_certified()).count(),
                rows.iter().filter(|r| r.violation).count()
            ));
        }
        out
    }
}

/// Every theorem in both orientations. `theorem10` is skipped when the
/// epochs or initial laws of the pair differ.
pub fn check_scenario(sc: &CorpusScenario, opts: &CheckOptions) -> Result<Vec<SoundnessRow>> {
    let (x, y) = sc.build()?;
    let mut rows = Vec::new();
    for reversed in [false, true] {
        let (a, b) = if reversed { (&y, &x) } else { (&x, &y) };
        for th in Theorem::ALL {
            match check(th, a, b, &sc.f, sc.t, opts) {
                Ok(r) => rows.push(SoundnessRow {
                    id: sc.id,
                    family: sc.family,
                    theorem: th,
                    reversed,
                    verdict: r.verdict,
                    oracle_margin: r.oracle_margin,
                    violation: r.soundness_violation,
                }),
                Err(Error::EpochMismatch | Error::InitialLawMismatch(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(rows)
}

pub fn run_soundness(scenarios: &[CorpusScenario], opts: &CheckOptions) -> Result<SoundnessSummary> {
    let per: Vec<Vec<SoundnessRow>> = scenarios.par_iter().map(|sc| check_scenario(sc, opts)).collect::<Result<_>>()?;
    let rows: Vec<SoundnessRow> = per.into_iter().flatten().collect();
    Ok(SoundnessSummary {
        scenarios: scenarios.len(),
        checks: rows.len(),
        certified: rows.iter().filter(|r| r.verdict.is_certified()).count(),
        violations: rows.iter().filter(|r| r.violation).count(),
        rows,
    })
}
