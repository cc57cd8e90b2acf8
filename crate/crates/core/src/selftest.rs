//! Built-in self test: closed-form and residual checks plus the randomized
//! soundness corpus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::comparison::{check_theorem10, check_theorem4, check_theorem7, CheckOptions, Fault, Theorem, Verdict};
use crate::corpus::{
    breakpoint_pair, build_pair, demo_pair, fixed_jump_pair, run_soundness, soundness_corpus, two_state, Family,
    SoundnessRow, SoundnessSummary, CORPUS_SIZE, MASTER_SEED,
};
use crate::evolution::{check_backward_equation, check_integral_representation};
use crate::generators::estimate_generator;
use crate::rates::{ProcessSpec, RateModel, Side};
use crate::scenario::{EXIT_INCONCLUSIVE, EXIT_OK, EXIT_SOUNDNESS};
use crate::{max_entry, Result};

pub const QUICK_SIZE: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub value: f64,
    pub bound: String,
    pub pass: bool,
}

impl CheckRow {
    fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, bound: format!("<= {bound:e}"), pass: value <= bound }
    }

    fn at_least(name: &str, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, bound: format!(">= {bound}"), pass: value >= bound }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelftestReport {
    pub analytic: Vec<CheckRow>,
    pub soundness: SoundnessSummary,
    pub reversal: ReversalCheck,
    pub exit_code: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReversalCheck {
    /// Pairs whose swapped oracle margin is not the exact negation.
    pub margin_mismatches: usize,
    /// Ordered families where a certified verdict does not flip.
    pub ordered_flip_failures: usize,
    /// Pairs certified in the same strict direction both ways.
    pub contradictions: usize,
    pub pairs: usize,
}

impl ReversalCheck {
    pub fn pass(&self) -> bool {
        self.margin_mismatches == 0 && self.ordered_flip_failures == 0 && self.contradictions == 0
    }
}

/// Compares every (scenario, theorem) row with its swapped counterpart.
pub fn reversal_check(rows: &[SoundnessRow]) -> ReversalCheck {
    let mut out = ReversalCheck { margin_mismatches: 0, ordered_flip_failures: 0, contradictions: 0, pairs: 0 };
    for a in rows.iter().filter(|r| !r.reversed) {
        let Some(b) = rows.iter().find(|b| b.reversed && b.id == a.id && b.theorem == a.theorem) else {
            continue;
        };
        out.pairs += 1;
        if b.oracle_margin != -a.oracle_margin {
            out.margin_mismatches += 1;
        }
        let ordered = matches!(a.family, Family::BirthDeath | Family::Identical);
        if ordered && a.verdict.is_certified() && b.verdict != a.verdict.reversed() {
            out.ordered_flip_failures += 1;
        }
        if matches!(a.verdict, Verdict::XGeY | Verdict::XLeY) && a.verdict == b.verdict {
            out.contradictions += 1;
        }
    }
    out
}

/// The closed-form and residual checks.
pub fn analytic_checks() -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    let up = crate::corpus::up_indicator();
    let (sx, sy) = demo_pair();

    let (x, y) = build_pair(&sx, &sy, 64)?;
    let exact = 2.0 / 3.0 * (1.0 - (-3.0f64).exp());
    rows.push(CheckRow::at_most("closed_form_T01", (x.transition_at(0.0, 1.0)?[(0, 1)] - exact).abs(), 1e-9));

    // Chapman-Kolmogorov on a time-varying model.
    let affine = ProcessSpec::from_state(
        RateModel::affine(two_state(1.0, 2.0), two_state(2.0, 0.5), 1.0),
        0,
    );
    let ev = crate::evolution::build_evolution(
        &affine,
        &crate::evolution::TimeGrid::for_specs(64, &[&affine])?,
        crate::evolution::BLOCK_TOL,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(MASTER_SEED);
    let mut ck: f64 = 0.0;
    for _ in 0..100 {
        let mut idx = [0usize; 3].map(|_| rng.random_range(0..ev.grid().len()));
        idx.sort_unstable();
        let [a, b, c] = idx;
        let lhs = ev.transition(a, b)? * ev.transition(b, c)?;
        ck = ck.max(max_entry(&(lhs - ev.transition(a, c)?)));
    }
    rows.push(CheckRow::at_most("chapman_kolmogorov", ck, 1e-10));

    let (x256, _) = build_pair(&sx, &sy, 256)?;
    let (x512, y512) = build_pair(&sx, &sy, 512)?;
    let r256 = check_backward_equation(&x256, &up, 1.0)?.max_right();
    let r512 = check_backward_equation(&x512, &up, 1.0)?.max_right();
    rows.push(CheckRow::at_least("backward_residual_halving", r256 / r512, 1.8));
    let integral = check_integral_representation(&x512, &up, 0.0, 1.0)?;
    rows.push(CheckRow::at_most("integral_representation", integral.primal.max(integral.dual), 1e-5));
    let r4 = check_theorem4(&x512, &y512, &up, 1.0, &CheckOptions::default())?;
    rows.push(CheckRow::at_most("inhomogeneous_representation", r4.representation_residual.unwrap_or(f64::INFINITY), 1e-4));

    let (bx, _) = breakpoint_pair();
    let (evb, _) = build_pair(&bx, &bx, 128)?;
    let right = estimate_generator(&evb, 1.0, Side::Right)?;
    let left = estimate_generator(&evb, 1.0, Side::Left)?;
    let smooth = estimate_generator(&evb, 0.5, Side::Right)?;
    rows.push(CheckRow::at_most("generator_right_at_breakpoint", max_entry(&(right.estimate - two_state(0.5, 1.0))), 1e-6));
    rows.push(CheckRow::at_most("generator_left_at_breakpoint", max_entry(&(left.estimate - two_state(2.0, 1.0))), 1e-6));
    rows.push(CheckRow::at_most("generator_smooth", max_entry(&(smooth.estimate - two_state(2.0, 1.0))), 1e-6));

    let r7 = check_theorem7(&x, &y, &up, 1.0, &CheckOptions::default())?;
    let curve = r7.linking_curve.as_ref().expect("linking curve");
    rows.push(CheckRow::at_most("linking_curve_max_increase", curve.max_increase().max(0.0), 1e-9));
    rows.push(CheckRow::at_most("linking_curve_start", (curve.g[0] - exact).abs(), 1e-9));
    let ey = 0.5 * (1.0 - (-2.0f64).exp());
    rows.push(CheckRow::at_most("linking_curve_end", (curve.g[curve.g.len() - 1] - ey).abs(), 1e-9));

    let (jx, jy) = fixed_jump_pair();
    let (ejx, ejy) = build_pair(&jx, &jy, 8)?;
    let r10 = check_theorem10(&ejx, &ejy, &up, 2.0, &CheckOptions::default())?;
    rows.push(CheckRow::at_most(
        "fixed_jump_expectations",
        (r10.expectation_x - 0.75).abs().max((r10.expectation_y - 0.51).abs()),
        1e-12,
    ));
    rows.push(CheckRow {
        name: "fixed_jump_verdict".into(),
        value: r10.oracle_margin,
        bound: "x_ge_y".into(),
        pass: r10.verdict == Verdict::XGeY,
    });
    Ok(rows)
}

/// Runs the analytic checks and the soundness corpus (`QUICK_SIZE`
/// scenarios when `quick`). `fault` injects a defect into every condition
/// check, which the oracle cross-check must expose.
pub fn run_selftest(quick: bool, fault: Option<Fault>) -> Result<SelftestReport> {
    let analytic = analytic_checks()?;
    let corpus = soundness_corpus(if quick { QUICK_SIZE } else { CORPUS_SIZE }, MASTER_SEED);
    let opts = CheckOptions { fault, ..Default::default() };
    let soundness = run_soundness(&corpus, &opts)?;
    let reversal = reversal_check(&soundness.rows);
    let exit_code = if soundness.violations > 0 || reversal.contradictions > 0 {
        EXIT_SOUNDNESS
    } else if analytic.iter().all(|r| r.pass) && reversal.pass() {
        EXIT_OK
    } else {
        EXIT_INCONCLUSIVE
    };
    Ok(SelftestReport { analytic, soundness, reversal, exit_code })
}

impl SelftestReport {
    pub fn table(&self) -> String {
        let mut out = String::from("analytic checks\n");
        for r in &self.analytic {
            out.push_str(&format!(
                "  {:<32} {:>12.4e}  {:<12} {}\n",
                r.name,
                r.value,
                r.bound,
                if r.pass { "pass" } else { "FAIL" }
            ));
        }
        out.push_str(&format!("\nsoundness corpus ({} scenarios)\n", self.soundness.scenarios));
        for line in self.soundness.table().lines() {
            out.push_str(&format!("  {line}\n"));
        }
        let rv = &self.reversal;
        out.push_str(&format!(
            "\nreversal: {} pairs, {} margin mismatches, {} ordered flip failures, {} contradictions\n",
            rv.pairs, rv.margin_mismatches, rv.ordered_flip_failures, rv.contradictions
        ));
        let theorems = Theorem::ALL.len();
        out.push_str(&format!(
            "\n{} ({} theorems x 2 orientations per scenario)\n",
            if self.exit_code == EXIT_OK { "selftest passed" } else { "selftest FAILED" },
            theorems
        ));
        out
    }
}
