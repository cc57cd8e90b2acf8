//! Comparison checkers for two processes `X` and `Y` on a common grid.
//!
//! Every checker evaluates its hypotheses as explicit predicates on knots,
//! derives a verdict, and always attaches the exact oracle
//! `E f(X_t) - E f(Y_t)` so a failed hypothesis still shows how close the
//! ordering is. A certified verdict that the oracle contradicts is flagged
//! as a soundness violation.
//!
//! Conventions: `G(s) = (Q^X_s - Q^Y_s) u(s)` with `u(s) = T^X_{s,t} f`.
//! `G >= 0` certifies `X >= Y` (`E f(X_t) >= E f(Y_t)`), `G <= 0` certifies
//! `X <= Y`. Hypotheses stated "almost surely" are checked componentwise on
//! the support of the relevant marginal.

use rayon::prelude::*;
use serde::Serialize;

use crate::evolution::{EvolutionSystem, KnotValues};
use crate::rates::Side;
use crate::state::{cone_residual, monotonicity_margin, ConeKind, FunctionCone, TestFunction};
use crate::{max_norm, Error, Result, Vector};

/// Slack of every componentwise hypothesis inequality.
pub const CONDITION_TOL: f64 = 1e-9;
/// Probability mass above which a state belongs to a marginal's support.
pub const SUPPORT_EPS: f64 = 1e-12;
/// Slack when testing a certified direction against the oracle.
pub const ORACLE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    /// Evolution-system comparison (pointwise in the starting state).
    Theorem4,
    /// Linking-process comparison with right generators.
    Theorem7,
    /// Linking-process comparison with left generators.
    Theorem8,
    /// Extended-generator variant with a class (DL) certificate.
    Theorem9,
    /// Random generators relative to time plus fixed jump epochs.
    Theorem10,
}

impl Theorem {
    pub const ALL: [Theorem; 5] =
        [Theorem::Theorem4, Theorem::Theorem7, Theorem::Theorem8, Theorem::Theorem9, Theorem::Theorem10];

    pub fn name(self) -> &'static str {
        match self {
            Theorem::Theorem4 => "theorem4",
            Theorem::Theorem7 => "theorem7",
            Theorem::Theorem8 => "theorem8",
            Theorem::Theorem9 => "theorem9",
            Theorem::Theorem10 => "theorem10",
        }
    }
}

/// Which ordering a checker should try to certify.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Whichever direction the hypotheses support.
    #[default]
    Auto,
    /// `E f(X_t) >= E f(Y_t)` only.
    Ge,
    /// `E f(X_t) <= E f(Y_t)` only.
    Le,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// Certified `E f(X_t) <= E f(Y_t)`.
    XLeY,
    /// Certified `E f(X_t) >= E f(Y_t)`.
    XGeY,
    /// Both directions certified.
    Equal,
    Inconclusive,
}

impl Verdict {
    pub fn is_certified(self) -> bool {
        self != Verdict::Inconclusive
    }

    /// The verdict with `X` and `Y` exchanged.
    pub fn reversed(self) -> Self {
        match self {
            Verdict::XLeY => Verdict::XGeY,
            Verdict::XGeY => Verdict::XLeY,
            v => v,
        }
    }

    /// Whether an oracle margin `E f(X) - E f(Y)` is consistent.
    pub fn admits(self, margin: f64) -> bool {
        match self {
            Verdict::XLeY => margin <= ORACLE_TOL,
            Verdict::XGeY => margin >= -ORACLE_TOL,
            Verdict::Equal => margin.abs() <= ORACLE_TOL,
            Verdict::Inconclusive => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// Holds automatically on a finite state space; not computed.
    Assumed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub condition: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<usize>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Condition {
    pub name: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_margin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Condition {
    fn assumed(name: &str, note: &str) -> Self {
        Self {
            name: name.into(),
            status: Status::Assumed,
            worst_margin: None,
            witness: None,
            note: Some(note.into()),
        }
    }

    fn flag(name: &str, ok: bool, note: Option<String>) -> Self {
        Self {
            name: name.into(),
            status: if ok { Status::Pass } else { Status::Fail },
            worst_margin: None,
            witness: None,
            note,
        }
    }

    fn from_scan(name: &str, scan: &Scan, tol: f64) -> Self {
        let (margin, witness) = match scan.min {
            Some((v, time, state)) => (
                Some(v),
                Some(Witness { condition: name.into(), time: Some(time), state: Some(state), value: v }),
            ),
            None => (None, None),
        };
        Self {
            name: name.into(),
            status: if margin.is_none_or(|m| m >= -tol) { Status::Pass } else { Status::Fail },
            worst_margin: margin,
            witness,
            note: None,
        }
    }

    pub fn holds(&self) -> bool {
        self.status != Status::Fail
    }
}

/// Exact mean of the linking process, `g(s) = E[T^X_{s,t} f(Y_s)]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkingCurve {
    pub s: Vec<f64>,
    pub g: Vec<f64>,
}

impl LinkingCurve {
    /// Largest knot-to-knot increase (non-increasing curves give <= 0).
    pub fn max_increase(&self) -> f64 {
        self.g.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest knot-to-knot decrease.
    pub fn max_decrease(&self) -> f64 {
        self.g.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,g\n");
        for (s, g) in self.s.iter().zip(&self.g) {
            out.push_str(&format!("{s},{g:.17e}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub theorem: Theorem,
    pub function: String,
    pub t: f64,
    pub conditions: Vec<Condition>,
    pub verdict: Verdict,
    /// `E f(X_t) - E f(Y_t)` from the exact oracle.
    pub oracle_margin: f64,
    pub expectation_x: f64,
    pub expectation_y: f64,
    /// Certified verdict contradicted by the oracle.
    pub soundness_violation: bool,
    pub witnesses: Vec<Witness>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linking_curve: Option<LinkingCurve>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub representation_residual: Option<f64>,
    pub notes: Vec<String>,
}

/// Deliberate defects for mutation testing of the soundness machinery.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Negate the generator difference in every condition check.
    FlipGeneratorSign,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    pub tol: f64,
    pub support_eps: f64,
    pub direction: Direction,
    pub fault: Option<Fault>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self { tol: CONDITION_TOL, support_eps: SUPPORT_EPS, direction: Direction::Auto, fault: None }
    }
}

impl CheckOptions {
    fn sign(&self) -> f64 {
        if self.fault == Some(Fault::FlipGeneratorSign) {
            -1.0
        } else {
            1.0
        }
    }
}

/// Running minimum and maximum of a scanned quantity with their locations.
#[derive(Debug, Clone, Default)]
struct Scan {
    min: Option<(f64, f64, usize)>,
    max: Option<(f64, f64, usize)>,
}

impl Scan {
    fn push(&mut self, value: f64, time: f64, state: usize) {
        if self.min.is_none_or(|(v, ..)| value < v) {
            self.min = Some((value, time, state));
        }
        if self.max.is_none_or(|(v, ..)| value > v) {
            self.max = Some((value, time, state));
        }
    }

    /// The scan of the negated quantity.
    fn negated(&self) -> Scan {
        Scan {
            min: self.max.map(|(v, t, s)| (-v, t, s)),
            max: self.min.map(|(v, t, s)| (-v, t, s)),
        }
    }
}

fn decide(ge: bool, le: bool, direction: Direction) -> Verdict {
    match (direction, ge, le) {
        (_, true, true) => Verdict::Equal,
        (Direction::Auto | Direction::Ge, true, false) => Verdict::XGeY,
        (Direction::Auto | Direction::Le, false, true) => Verdict::XLeY,
        _ => Verdict::Inconclusive,
    }
}

fn common_grid(x: &EvolutionSystem, y: &EvolutionSystem, f: &TestFunction) -> Result<()> {
    if x.grid().knots() != y.grid().knots() {
        return Err(Error::GridMismatch);
    }
    if x.n() != y.n() {
        return Err(Error::Dimension { expected: x.n(), got: y.n() });
    }
    if f.len() != x.n() {
        return Err(Error::Dimension { expected: x.n(), got: f.len() });
    }
    Ok(())
}

fn no_jumps_condition(x: &EvolutionSystem, y: &EvolutionSystem) -> Condition {
    let ok = x.spec().epochs().is_empty() && y.spec().epochs().is_empty();
    Condition::flag(
        "strongly_continuous",
        ok,
        (!ok).then(|| "fixed jump epochs break strong continuity; use theorem10".to_string()),
    )
}

fn initial_law_condition(x: &EvolutionSystem, y: &EvolutionSystem, tol: f64) -> Condition {
    let gap = max_norm(&(&x.spec().initial - &y.spec().initial));
    Condition { worst_margin: Some(-gap), ..Condition::flag("initial_laws_equal", gap <= tol, None) }
}

/// `mu_0 T_{0,t} f`.
pub fn oracle_expectation(ev: &EvolutionSystem, f: &TestFunction, t: f64) -> Result<f64> {
    if f.len() != ev.n() {
        return Err(Error::Dimension { expected: ev.n(), got: f.len() });
    }
    let ti = ev.grid().index_of(t)?;
    let u = ev.backward(&f.values, ti);
    Ok(ev.spec().initial.dot(&u.right[0]))
}

/// States carrying more than `eps` mass under `mu_0 T_{0,s}`.
pub fn support_marginal(ev: &EvolutionSystem, s: f64, eps: f64) -> Result<Vec<usize>> {
    let k = ev.grid().index_of(s)?;
    let m = ev.marginals(&ev.spec().initial);
    Ok(support_of(&m.right[k], eps))
}

fn support_of(p: &Vector, eps: f64) -> Vec<usize> {
    (0..p.len()).filter(|&i| p[i] > eps).collect()
}

/// Evolution-system comparison: `G(s) <= 0` at every knot and state gives
/// `T^X_{s,t} f <= T^Y_{s,t} f` for all `s <= t`, and symmetrically.
pub fn check_theorem4(
    x: &EvolutionSystem,
    y: &EvolutionSystem,
    f: &TestFunction,
    t: f64,
    opts: &CheckOptions,
) -> Result<ComparisonReport> {
    common_grid(x, y, f)?;
    let ti = x.grid().index_of(t)?;
    let knots = x.grid().knots();
    let ux = x.backward(&f.values, ti);
    let uy = y.backward(&f.values, ti);

    let mut scan = Scan::default();
    let mut g_curve = Vec::with_capacity(ti + 1);
    for (k, &tk) in knots.iter().enumerate().take(ti + 1) {
        let qx = x.spec().rates.rate_at(tk, Side::Right)?;
        let qy = y.spec().rates.rate_at(tk, Side::Right)?;
        let g = (qx - qy) * &ux.right[k] * opts.sign();
        for i in 0..g.len() {
            scan.push(g[i], tk, i);
        }
        g_curve.push(g);
    }
    let ge = Condition::from_scan("generator_ge", &scan, opts.tol);
    let le = Condition::from_scan("generator_le", &scan.negated(), opts.tol);
    let conditions = vec![
        no_jumps_condition(x, y),
        Condition::assumed("domain", "every function is in the generator domain on a finite state space"),
        Condition::assumed("integrability", "bounded integrands on a finite state space"),
        ge,
        le,
    ];
    let prereq = conditions[0].holds();
    let verdict = if prereq {
        decide(conditions[3].holds(), conditions[4].holds(), opts.direction)
    } else {
        Verdict::Inconclusive
    };

    // Conclusion is pointwise: compare T^X f and T^Y f at every knot and state.
    let mut pointwise = Scan::default();
    for (k, &tk) in knots.iter().enumerate().take(ti + 1) {
        let d = &ux.right[k] - &uy.right[k];
        for i in 0..d.len() {
            pointwise.push(d[i], tk, i);
        }
    }
    let ok = match verdict {
        Verdict::XGeY => pointwise.min.is_none_or(|(v, ..)| v >= -ORACLE_TOL),
        Verdict::XLeY => pointwise.max.is_none_or(|(v, ..)| v <= ORACLE_TOL),
        Verdict::Equal => {
            pointwise.min.is_none_or(|(v, ..)| v >= -ORACLE_TOL)
                && pointwise.max.is_none_or(|(v, ..)| v <= ORACLE_TOL)
        }
        Verdict::Inconclusive => true,
    };

    // F(s) = T^Y_{s,t} f - T^X_{s,t} f solves dF = -A^Y F + G with G as above.
    let big_f: Vec<Vector> = (0..=ti).map(|k| &uy.right[k] - &ux.right[k]).collect();
    let g_unsigned: Vec<Vector> = g_curve.iter().map(|g| g * opts.sign()).collect();
    let representation_residual = if prereq {
        Some(crate::evolution::check_inhomogeneous_representation(y, &big_f, &g_unsigned, 0.0, t)?)
    } else {
        None
    };

    let ex = x.spec().initial.dot(&ux.right[0]);
    let ey = y.spec().initial.dot(&uy.right[0]);
    Ok(finish(ComparisonReport {
        theorem: Theorem::Theorem4,
        function: f.label(),
        t,
        conditions,
        verdict,
        oracle_margin: ex - ey,
        expectation_x: ex,
        expectation_y: ey,
        soundness_violation: !ok,
        witnesses: Vec::new(),
        linking_curve: None,
        representation_residual,
        notes: vec!["conclusion checked pointwise: T^X_{s,t} f vs T^Y_{s,t} f at every knot s <= t and state".into()],
    }))
}

/// Linking-process comparison with right generators.
pub fn check_theorem7(
    x: &EvolutionSystem,
    y: &EvolutionSystem,
    f: &TestFunction,
    t: f64,
    opts: &CheckOptions,
) -> Result<ComparisonReport> {
    martingale_check(x, y, f, t, opts, Side::Right, Theorem::Theorem7)
}

/// Linking-process comparison with left generators; differs from
/// [`check_theorem7`] only at rate discontinuities.
pub fn check_theorem8(
    x: &EvolutionSystem,
    y: &EvolutionSystem,
    f: &TestFunction,
    t: f64,
    opts: &CheckOptions,
) -> Result<ComparisonReport> {
    martingale_check(x, y, f, t, opts, Side::Left, Theorem::Theorem8)
}

/// Extended-generator variant. The class (DL) hypothesis is discharged by
/// boundedness: `sup_s |T^X_{s,t} f| <= |f|`.
pub fn check_theorem9(
    x: &EvolutionSystem,
    y: &EvolutionSystem,
    f: &TestFunction,
    t: f64,
    opts: &CheckOptions,
) -> Result<ComparisonReport> {
    martingale_check(x, y, f, t, opts, Side::Right, Theorem::Theorem9)
}

fn martingale_check(
    x: &EvolutionSystem,
    y: &EvolutionSystem,
    f: &TestFunction,
    t: f64,
    opts: &CheckOptions,
    side: Side,
    theorem: Theorem,
) -> Result<ComparisonReport> {
    common_grid(x, y, f)?;
    let ti = x.grid().index_of(t)?;
    let knots = x.grid().knots();
    let u = x.backward(&f.values, ti);
    let px = x.marginals(&x.spec().initial);
    let py = y.marginals(&y.spec().initial);

    let mut support_ok = true;
    let mut support_witness = None;
    let mut support_margin = f64::INFINITY;
    let mut scan = Scan::default();
    for (k, &tk) in knots.iter().enumerate().take(ti + 1) {
        let (mx, my) = (px.at(k, side), py.at(k, side));
        let supp_y = support_of(my, opts.support_eps);
        for &i in &supp_y {
            support_margin = support_margin.min(mx[i]);
            if mx[i] <= opts.support_eps && support_ok {
                support_ok = false;
                support_witness = Some(Witness {
                    condition: "support_inclusion".into(),
                    time: Some(tk),
                    state: Some(i),
                    value: my[i],
                });
            }
        }
        let qx = x.spec().rates.rate_at(tk, side)?;
        let qy = y.spec().rates.rate_at(tk, side)?;
        let g = (qx - qy) * u.at(k, side) * opts.sign();
        for &i in &supp_y {
            scan.push(g[i], tk, i);
        }
    }

    let support = Condition {
        name: "support_inclusion".into(),
        status: if support_ok { Status::Pass } else { Status::Fail },
        worst_margin: support_margin.is_finite().then_some(support_margin),
        witness: support_witness,
        note: Some(format!("supp(P^Y_s) within supp(P^X_s) at every knot, eps = {:e}", opts.support_eps)),
    };
    let mut conditions = vec![
        no_jumps_condition(x, y),
        initial_law_condition(x, y, opts.tol),
        Condition::assumed("domain", "every function is in the generator domain on a finite state space"),
        Condition::assumed("integrability", "one-sided derivatives of bounded smooth expectations"),
        support,
    ];
    let mut notes = Vec::new();
    if theorem == Theorem::Theorem9 {
        let sup = u.right.iter().map(max_norm).fold(0.0, f64::max);
        let bound = f.sup_norm();
        conditions.push(Condition {
            name: "class_dl".into(),
            status: if sup <= bound + opts.tol { Status::Pass } else { Status::Fail },
            worst_margin: Some(bound - sup),
            witness: None,
            note: Some(format!("bounded linking process: sup_s |T^X_(s,t) f| = {sup:e} <= |f| = {bound:e}")),
        });
        notes.push(
            "generator condition applied to T^X_(s,t) f as in the proof; the stated hypothesis applies it to f".into(),
        );
    }
    let side_tag = if side == Side::Left { "left" } else { "right" };
    let mut ge = Condition::from_scan("generator_ge", &scan, opts.tol);
    let mut le = Condition::from_scan("generator_le", &scan.negated(), opts.tol);
    ge.note = Some(format!("{side_tag} rates, restricted to supp(P^Y_s)"));
    le.note = ge.note.clone();
    let prereq = conditions.iter().all(Condition::holds);
    let verdict = if prereq { decide(ge.holds(), le.holds(), opts.direction) } else { Verdict::Inconclusive };
    conditions.push(ge);
    conditions.push(le);

    let curve = LinkingCurve {
        s: knots[..=ti].to_vec(),
        g: (0..=ti).map(|k| py.right[k].dot(&u.right[k])).collect(),
    };
    let ex = x.spec().initial.dot(&u.right[0]);
    let ey = oracle_expectation(y, f, t)?;
    let margin = ex - ey;
    let curve_ok = match verdict {
        Verdict::XGeY => curve.max_increase() <= ORACLE_TOL,
        Verdict::XLeY => curve.max_decrease() <= ORACLE_TOL,
        Verdict::Equal => curve.max_increase() <= ORACLE_TOL && curve.max_decrease() <= ORACLE_TOL,
        Verdict::Inconclusive => true,
    } || ti == 0;
    if !curve_ok {
        notes.push("linking curve not monotone in the certified direction".into());
    }

    Ok(finish(ComparisonReport {
        theorem,
        function: f.label(),
        t,
        conditions,
        verdict,
        oracle_margin: margin,
        expectation_x: ex,
        expectation_y: ey,
        soundness_violation: !verdict.admits(margin) || !curve_ok,
        witnesses: Vec::new(),
        linking_curve: Some(curve),
        representation_residual: None,
        notes,
    }))
}

/// Random-generator comparison for processes with the same fixed jump
/// epochs and initial law.
///
/// Besides the componentwise inequality on `f` itself (rates at every knot,
/// kernels at every epoch), the checker requires the compensator means to
/// be ordered: `E[(Q^X_s f)(X_s)] >= E[(Q^Y_s f)(Y_s)]` at every knot and
/// the analogous atom inequality at every epoch. The componentwise
/// inequality alone compares generators at a common state, which says
/// nothing about `E f(X_t) - E f(Y_t)` when the laws of `X_s` and `Y_s`
/// differ.
pub fn check_theorem10(
    x: &EvolutionSystem,
    y: &EvolutionSystem,
    f: &TestFunction,
    t: f64,
    opts: &CheckOptions,
) -> Result<ComparisonReport> {
    common_grid(x, y, f)?;
    if x.spec().epochs() != y.spec().epochs() {
        return Err(Error::EpochMismatch);
    }
    let law_gap = max_norm(&(&x.spec().initial - &y.spec().initial));
    if law_gap > opts.tol {
        return Err(Error::InitialLawMismatch(law_gap));
    }
    let ti = x.grid().index_of(t)?;
    let knots = x.grid().knots();
    let fv = &f.values;
    let px = x.marginals(&x.spec().initial);
    let py = y.marginals(&y.spec().initial);

    let mut pointwise = Scan::default();
    let mut mean = Scan::default();
    for (k, &tk) in knots.iter().enumerate().take(ti + 1) {
        let qx = x.spec().rates.rate_at(tk, Side::Right)?;
        let qy = y.spec().rates.rate_at(tk, Side::Right)?;
        let (ax, ay) = (&qx * fv, &qy * fv);
        let d = (&ax - &ay) * opts.sign();
        for i in 0..d.len() {
            pointwise.push(d[i], tk, i);
        }
        mean.push((px.right[k].dot(&ax) - py.right[k].dot(&ay)) * opts.sign(), tk, 0);
        if k > 0 {
            if let (Some(kx), Some(ky)) = (x.jump_at(k), y.jump_at(k)) {
                let (jx, jy) = (kx * fv - fv, ky * fv - fv);
                let d = (&jx - &jy) * opts.sign();
                for i in 0..d.len() {
                    pointwise.push(d[i], tk, i);
                }
                mean.push((px.left[k].dot(&jx) - py.left[k].dot(&jy)) * opts.sign(), tk, 0);
            }
        }
    }
    let bound = 2.0 * f.sup_norm();
    let mut conditions = vec![
        Condition { worst_margin: Some(-law_gap), ..Condition::flag("initial_laws_equal", true, None) },
        Condition {
            name: "class_dl".into(),
            status: Status::Pass,
            worst_margin: Some(bound),
            witness: None,
            note: Some(format!("f(X_t) - f(Y_t) bounded by {bound:e}")),
        },
    ];
    let pg = Condition::from_scan("generator_pointwise_ge", &pointwise, opts.tol);
    let pl = Condition::from_scan("generator_pointwise_le", &pointwise.negated(), opts.tol);
    let mut mg = Condition::from_scan("compensator_mean_ge", &mean, opts.tol);
    let mut ml = Condition::from_scan("compensator_mean_le", &mean.negated(), opts.tol);
    for c in [&mut mg, &mut ml] {
        if let Some(w) = c.witness.as_mut() {
            w.state = None;
        }
    }
    let verdict = decide(pg.holds() && mg.holds(), pl.holds() && ml.holds(), opts.direction);
    conditions.extend([pg, pl, mg, ml]);

    let mut ok = true;
    let mut worst = f64::INFINITY;
    for (mx, my) in px.right.iter().zip(&py.right).take(ti + 1) {
        let m = mx.dot(fv) - my.dot(fv);
        if !verdict.admits(m) {
            ok = false;
        }
        worst = worst.min(match verdict {
            Verdict::XLeY => -m,
            _ => m,
        });
    }
    let ex = oracle_expectation(x, f, t)?;
    let ey = oracle_expectation(y, f, t)?;
    Ok(finish(ComparisonReport {
        theorem: Theorem::Theorem10,
        function: f.label(),
        t,
        conditions,
        verdict,
        oracle_margin: ex - ey,
        expectation_x: ex,
        expectation_y: ey,
        soundness_violation: !ok,
        witnesses: Vec::new(),
        linking_curve: None,
        representation_residual: None,
        notes: vec![format!("oracle ordering checked at every knot s <= t; worst directed margin {worst:e}")],
    }))
}

/// Copies failing-condition witnesses into the report's witness list.
fn finish(mut report: ComparisonReport) -> ComparisonReport {
    report.witnesses = report
        .conditions
        .iter()
        .filter(|c| c.status == Status::Fail)
        .filter_map(|c| c.witness.clone())
        .collect();
    report
}

pub fn check(
    theorem: Theorem,
    x: &EvolutionSystem,
    y: &EvolutionSystem,
    f: &TestFunction,
    t: f64,
    opts: &CheckOptions,
) -> Result<ComparisonReport> {
    match theorem {
        Theorem::Theorem4 => check_theorem4(x, y, f, t, opts),
        Theorem::Theorem7 => check_theorem7(x, y, f, t, opts),
        Theorem::Theorem8 => check_theorem8(x, y, f, t, opts),
        Theorem::Theorem9 => check_theorem9(x, y, f, t, opts),
        Theorem::Theorem10 => check_theorem10(x, y, f, t, opts),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropagationCheck {
    pub holds: bool,
    /// Smallest membership margin over generators and knot pairs (negative
    /// when `T^X_{s,r} g` leaves the cone).
    pub worst_margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness_generator: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness_r: Option<f64>,
    pub pairs_checked: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub cone: ConeKind,
    pub t: f64,
    pub propagation: PropagationCheck,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_generator: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_margin: Option<f64>,
    pub reports: Vec<ComparisonReport>,
}

/// Propagation of order for `X` plus a linking-process check per cone
/// generator. The class verdict is certified iff every generator certifies
/// a common direction.
pub fn sweep_function_class(
    x: &EvolutionSystem,
    y: &EvolutionSystem,
    cone: &FunctionCone,
    t: f64,
    opts: &CheckOptions,
) -> Result<ClassReport> {
    let ti = x.grid().index_of(t)?;
    let knots = x.grid().knots();
    let margin_of = |v: &Vector| -> f64 {
        match cone.kind {
            ConeKind::AllBounded => 0.0,
            ConeKind::Increasing => cone
                .order()
                .and_then(|o| monotonicity_margin(v, o))
                .map_or(0.0, |(m, _)| m),
            ConeKind::Custom => -cone_residual(v, &cone.generators),
        }
    };

    // (margin, generator index, s index, r index) per end knot r.
    let per_end: Vec<(f64, usize, usize, usize, usize)> = (0..=ti)
        .into_par_iter()
        .map(|r| {
            let mut worst = (f64::INFINITY, 0, 0, r, 0);
            for (gi, g) in cone.generators.iter().enumerate() {
                let u = x.backward(&g.values, r);
                for (s, v) in u.right.iter().enumerate() {
                    let m = margin_of(v);
                    worst.4 += 1;
                    if m < worst.0 {
                        worst = (m, gi, s, r, worst.4);
                    }
                }
            }
            worst
        })
        .collect();
    let pairs_checked = per_end.iter().map(|w| w.4).sum();
    let worst = per_end
        .iter()
        .copied()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap_or((0.0, 0, 0, 0, 0));
    let holds = worst.0 >= -opts.tol;
    let propagation = PropagationCheck {
        holds,
        worst_margin: worst.0,
        witness_generator: (!holds).then(|| cone.generators[worst.1].label()),
        witness_s: (!holds).then(|| knots[worst.2]),
        witness_r: (!holds).then(|| knots[worst.3]),
        pairs_checked,
    };

    let reports: Vec<ComparisonReport> = cone
        .generators
        .par_iter()
        .map(|g| check_theorem7(x, y, g, t, opts))
        .collect::<Result<_>>()?;

    let mut verdict = Verdict::Equal;
    for r in &reports {
        verdict = match (verdict, r.verdict) {
            (_, Verdict::Inconclusive) | (Verdict::Inconclusive, _) => Verdict::Inconclusive,
            (v, Verdict::Equal) => v,
            (Verdict::Equal, v) => v,
            (a, b) if a == b => a,
            _ => Verdict::Inconclusive,
        };
    }
    let directed = |r: &ComparisonReport| -> f64 {
        let name = match verdict {
            Verdict::XLeY => "generator_le",
            _ => "generator_ge",
        };
        r.conditions
            .iter()
            .find(|c| c.name == name)
            .and_then(|c| c.worst_margin)
            .unwrap_or(f64::INFINITY)
    };
    let worst_report = reports.iter().min_by(|a, b| directed(a).total_cmp(&directed(b)));
    Ok(ClassReport {
        cone: cone.kind,
        t,
        propagation,
        verdict,
        worst_generator: worst_report.map(|r| r.function.clone()),
        worst_margin: worst_report.map(directed).filter(|m| m.is_finite()),
        reports,
    })
}

/// `u(s) = T^X_{s,t} f` on knots; convenience for callers building
/// space-time functions.
pub fn linking_function(x: &EvolutionSystem, f: &TestFunction, t: f64) -> Result<KnotValues> {
    let ti = x.grid().index_of(t)?;
    Ok(x.backward(&f.values, ti))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::{build_evolution, TimeGrid, BLOCK_TOL};
    use crate::rates::{JumpSchedule, ProcessSpec, RateModel};
    use crate::state::{upset_generators, StateSpace};
    use crate::Matrix;

    fn two_state(a: f64, b: f64) -> Matrix {
        Matrix::from_row_slice(2, 2, &[-a, a, b, -b])
    }

    fn pair(qx: RateModel, qy: RateModel, m: usize) -> (EvolutionSystem, EvolutionSystem) {
        let sx = ProcessSpec::from_state(qx, 0);
        let sy = ProcessSpec::from_state(qy, 0);
        let grid = TimeGrid::for_specs(m, &[&sx, &sy]).unwrap();
        (build_evolution(&sx, &grid, BLOCK_TOL).unwrap(), build_evolution(&sy, &grid, BLOCK_TOL).unwrap())
    }

    fn demo(m: usize) -> (EvolutionSystem, EvolutionSystem) {
        pair(RateModel::constant(two_state(2.0, 1.0), 1.0), RateModel::constant(two_state(1.0, 1.0), 1.0), m)
    }

    fn up() -> TestFunction {
        TestFunction::new(vec![0.0, 1.0], Some("up".into())).unwrap()
    }

    fn closed_form(a: f64, b: f64, t: f64) -> f64 {
        a / (a + b) * (1.0 - (-(a + b) * t).exp())
    }

    fn condition<'a>(r: &'a ComparisonReport, name: &str) -> &'a Condition {
        r.conditions.iter().find(|c| c.name == name).unwrap()
    }

    #[test]
    fn oracle_values() {
        let (x, y) = demo(64);
        assert!((oracle_expectation(&x, &up(), 1.0).unwrap() - closed_form(2.0, 1.0, 1.0)).abs() < 1e-12);
        assert!((oracle_expectation(&y, &up(), 1.0).unwrap() - closed_form(1.0, 1.0, 1.0)).abs() < 1e-12);
        assert!((oracle_expectation(&x, &up(), 1.0).unwrap() - 0.633475).abs() < 1e-6);
        assert!((oracle_expectation(&y, &up(), 1.0).unwrap() - 0.432332).abs() < 1e-6);
        let one = TestFunction::constant(2, 1.0);
        assert!((oracle_expectation(&x, &one, 1.0).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn theorem4_identical_processes() {
        let (x, _) = demo(32);
        let r = check_theorem4(&x, &x, &up(), 1.0, &CheckOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Equal);
        assert_eq!(r.oracle_margin, 0.0);
        assert_eq!(condition(&r, "generator_ge").worst_margin, Some(0.0));
    }

    #[test]
    fn theorem4_demo_pair_certifies_x_above() {
        let (x, y) = demo(64);
        let r = check_theorem4(&x, &y, &up(), 1.0, &CheckOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::XGeY);
        assert!(!r.soundness_violation);
        assert!((r.expectation_x - closed_form(2.0, 1.0, 1.0)).abs() < 1e-9);
        assert!((r.expectation_y - closed_form(1.0, 1.0, 1.0)).abs() < 1e-9);
        // Row 1 of G is exactly zero, row 0 equals u_1 - u_0 = e^{-3(t-s)} > 0.
        let ge = condition(&r, "generator_ge");
        assert_eq!(ge.worst_margin, Some(0.0));
        assert!(r.representation_residual.unwrap() < 1e-4);
    }

    #[test]
    fn theorem4_decreasing_function_fails_ge_direction() {
        let (x, y) = demo(64);
        let down = TestFunction::new(vec![1.0, 0.0], None).unwrap();
        let opts = CheckOptions { direction: Direction::Ge, ..Default::default() };
        let r = check_theorem4(&x, &y, &down, 1.0, &opts).unwrap();
        assert_eq!(r.verdict, Verdict::Inconclusive);
        let ge = condition(&r, "generator_ge");
        assert_eq!(ge.status, Status::Fail);
        assert!(ge.worst_margin.unwrap() < 0.0);
        assert!(!r.witnesses.is_empty() && r.witnesses[0].time.is_some());
        // Unrestricted, the opposite direction is certified and matches the oracle.
        let r = check_theorem4(&x, &y, &down, 1.0, &CheckOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::XLeY);
        assert!(r.oracle_margin < 0.0 && !r.soundness_violation);
    }

    #[test]
    fn theorem7_demo_linking_curve() {
        let (x, y) = demo(128);
        let r = check_theorem7(&x, &y, &up(), 1.0, &CheckOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::XGeY);
        let g = r.linking_curve.as_ref().unwrap();
        assert!((g.g[0] - closed_form(2.0, 1.0, 1.0)).abs() < 1e-9);
        assert!((g.g.last().unwrap() - closed_form(1.0, 1.0, 1.0)).abs() < 1e-9);
        assert!(g.max_increase() <= 1e-9);
    }

    #[test]
    fn theorem7_identical_is_martingale() {
        let (x, _) = demo(32);
        let r = check_theorem7(&x, &x, &up(), 1.0, &CheckOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Equal);
        let g = &r.linking_curve.unwrap().g;
        assert!(g.iter().all(|v| (v - g[0]).abs() < 1e-12));
    }

    #[test]
    fn theorem7_support_gap() {
        let absorbing = Matrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, -1.0]);
        let (x, y) = pair(
            RateModel::constant(absorbing, 1.0),
            RateModel::constant(two_state(1.0, 1.0), 1.0),
            16,
        );
        assert_eq!(support_marginal(&x, 0.5, SUPPORT_EPS).unwrap(), vec![0]);
        assert_eq!(support_marginal(&y, 0.0, SUPPORT_EPS).unwrap(), vec![0]);
        assert_eq!(support_marginal(&y, 0.5, SUPPORT_EPS).unwrap(), vec![0, 1]);
        let r = check_theorem7(&x, &y, &up(), 1.0, &CheckOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Inconclusive);
        let c = condition(&r, "support_inclusion");
        assert_eq!(c.status, Status::Fail);
        assert_eq!(c.witness.as_ref().unwrap().state, Some(1));
    }

    #[test]
    fn theorem8_differs_only_at_breakpoint() {
        // X switches at t = 1 (the comparison time) to a slower up-rate.
        let xr = RateModel::piecewise(vec![0.0, 1.0, 2.0], vec![two_state(2.0, 1.0), two_state(0.5, 1.0)]);
        let yr = RateModel::constant(two_state(1.0, 1.0), 2.0);
        let (x, y) = pair(xr, yr, 64);
        let opts = CheckOptions::default();
        let r7 = check_theorem7(&x, &y, &up(), 1.0, &opts).unwrap();
        let r8 = check_theorem8(&x, &y, &up(), 1.0, &opts).unwrap();
        assert_eq!(r8.verdict, Verdict::XGeY);
        assert_eq!(r7.verdict, Verdict::Inconclusive);
        let w = &condition(&r7, "generator_ge").witness.as_ref().unwrap();
        assert_eq!(w.time, Some(1.0));
        assert!(r7.oracle_margin > 0.0 && !r7.soundness_violation && !r8.soundness_violation);
        assert_eq!(r7.oracle_margin, r8.oracle_margin);
    }

    #[test]
    fn theorem8_matches_theorem7_for_smooth_rates() {
        let (x, y) = demo(32);
        let opts = CheckOptions::default();
        let r7 = check_theorem7(&x, &y, &up(), 1.0, &opts).unwrap();
        let r8 = check_theorem8(&x, &y, &up(), 1.0, &opts).unwrap();
        assert_eq!(r7.verdict, r8.verdict);
    }

    #[test]
    fn theorem9_carries_dl_certificate() {
        let (x, y) = demo(32);
        let r9 = check_theorem9(&x, &y, &up(), 1.0, &CheckOptions::default()).unwrap();
        let r7 = check_theorem7(&x, &y, &up(), 1.0, &CheckOptions::default()).unwrap();
        assert_eq!(r9.verdict, r7.verdict);
        let dl = condition(&r9, "class_dl");
        assert_eq!(dl.status, Status::Pass);
        assert!(dl.worst_margin.unwrap() >= 0.0);
        assert!(!r9.notes.is_empty());
    }

    fn jump_process(p: f64, q: RateModel) -> ProcessSpec {
        let k = Matrix::from_row_slice(2, 2, &[1.0 - p, p, 0.0, 1.0]);
        ProcessSpec::new(
            q,
            Some(JumpSchedule::new(vec![1.0, 2.0], vec![k.clone(), k])),
            Vector::from_vec(vec![1.0, 0.0]),
        )
    }

    fn jump_pair(px: f64, py: f64) -> (EvolutionSystem, EvolutionSystem) {
        let sx = jump_process(px, RateModel::constant(Matrix::zeros(2, 2), 2.0));
        let sy = jump_process(py, RateModel::constant(Matrix::zeros(2, 2), 2.0));
        let grid = TimeGrid::for_specs(8, &[&sx, &sy]).unwrap();
        (build_evolution(&sx, &grid, BLOCK_TOL).unwrap(), build_evolution(&sy, &grid, BLOCK_TOL).unwrap())
    }

    #[test]
    fn theorem10_pure_jump_pair() {
        let (x, y) = jump_pair(0.5, 0.3);
        let r = check_theorem10(&x, &y, &up(), 2.0, &CheckOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::XGeY);
        // Kernel products: 1 - 0.5^2 and 1 - 0.7^2.
        assert!((r.expectation_x - 0.75).abs() < 1e-12);
        assert!((r.expectation_y - 0.51).abs() < 1e-12);
        assert!(!r.soundness_violation);
        let r = check_theorem10(&x, &x, &up(), 2.0, &CheckOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Equal);
    }

    #[test]
    fn theorem10_kernel_violation_has_epoch_witness() {
        // Continuous parts ordered (X moves up faster); one kernel of X is worse.
        let kx1 = Matrix::from_row_slice(2, 2, &[0.5, 0.5, 0.0, 1.0]);
        let kx2 = Matrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 1.0]);
        let ky = Matrix::from_row_slice(2, 2, &[0.7, 0.3, 0.0, 1.0]);
        let sx = ProcessSpec::new(
            RateModel::constant(two_state(2.0, 0.0), 2.0),
            Some(JumpSchedule::new(vec![1.0, 2.0], vec![kx1, kx2])),
            Vector::from_vec(vec![1.0, 0.0]),
        );
        let sy = ProcessSpec::new(
            RateModel::constant(two_state(1.0, 0.0), 2.0),
            Some(JumpSchedule::new(vec![1.0, 2.0], vec![ky.clone(), ky])),
            Vector::from_vec(vec![1.0, 0.0]),
        );
        let grid = TimeGrid::for_specs(8, &[&sx, &sy]).unwrap();
        let x = build_evolution(&sx, &grid, BLOCK_TOL).unwrap();
        let y = build_evolution(&sy, &grid, BLOCK_TOL).unwrap();
        let r = check_theorem10(&x, &y, &up(), 2.0, &CheckOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Inconclusive);
        let w = condition(&r, "generator_pointwise_ge").witness.as_ref().unwrap();
        assert_eq!(w.time, Some(2.0));
        assert_eq!(w.state, Some(0));
    }

    #[test]
    fn theorem10_pointwise_alone_is_not_enough() {
        // Q^X f >= Q^Y f componentwise, yet X is drained into state 2 where f = 0.
        let qx = Matrix::from_row_slice(3, 3, &[-101.0, 1.0, 100.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let qy = Matrix::from_row_slice(3, 3, &[-0.9, 0.9, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let sx = ProcessSpec::from_state(RateModel::constant(qx, 1.0), 0);
        let sy = ProcessSpec::from_state(RateModel::constant(qy, 1.0), 0);
        let grid = TimeGrid::for_specs(32, &[&sx, &sy]).unwrap();
        let x = build_evolution(&sx, &grid, BLOCK_TOL).unwrap();
        let y = build_evolution(&sy, &grid, BLOCK_TOL).unwrap();
        let f = TestFunction::new(vec![0.0, 1.0, 0.0], None).unwrap();
        let r = check_theorem10(&x, &y, &f, 1.0, &CheckOptions::default()).unwrap();
        assert_eq!(condition(&r, "generator_pointwise_ge").status, Status::Pass);
        assert_eq!(condition(&r, "compensator_mean_ge").status, Status::Fail);
        assert_eq!(r.verdict, Verdict::Inconclusive);
        assert!(r.oracle_margin < -0.5);
    }

    #[test]
    fn theorem10_rejects_mismatched_inputs() {
        let (x, _) = jump_pair(0.5, 0.3);
        let (a, b) = demo(8);
        assert!(check_theorem10(&a, &b, &up(), 1.0, &CheckOptions::default()).is_ok());
        let sy = ProcessSpec::new(
            RateModel::constant(Matrix::zeros(2, 2), 2.0),
            None,
            Vector::from_vec(vec![1.0, 0.0]),
        );
        let y = build_evolution(&sy, x.grid(), BLOCK_TOL).unwrap();
        assert!(matches!(
            check_theorem10(&x, &y, &up(), 2.0, &CheckOptions::default()),
            Err(Error::EpochMismatch)
        ));
        let mut sy2 = x.spec().clone();
        sy2.initial = Vector::from_vec(vec![0.5, 0.5]);
        let y2 = build_evolution(&sy2, x.grid(), BLOCK_TOL).unwrap();
        assert!(matches!(
            check_theorem10(&x, &y2, &up(), 2.0, &CheckOptions::default()),
            Err(Error::InitialLawMismatch(_))
        ));
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let (x, _) = demo(8);
        let (y, _) = demo(16);
        assert!(matches!(
            check_theorem7(&x, &y, &up(), 1.0, &CheckOptions::default()),
            Err(Error::GridMismatch)
        ));
    }

    #[test]
    fn flipped_sign_fault_is_caught_by_oracle() {
        let (x, y) = demo(32);
        let opts = CheckOptions { fault: Some(Fault::FlipGeneratorSign), ..Default::default() };
        for th in [Theorem::Theorem4, Theorem::Theorem7, Theorem::Theorem8, Theorem::Theorem9] {
            let r = check(th, &x, &y, &up(), 1.0, &opts).unwrap();
            assert!(r.soundness_violation, "{th:?}");
        }
        let (x, y) = jump_pair(0.5, 0.3);
        let r = check_theorem10(&x, &y, &up(), 2.0, &opts).unwrap();
        assert!(r.soundness_violation);
    }

    #[test]
    fn reversal_flips_verdict_and_negates_margin() {
        let (x, y) = demo(64);
        for th in Theorem::ALL {
            let a = check(th, &x, &y, &up(), 1.0, &CheckOptions::default()).unwrap();
            let b = check(th, &y, &x, &up(), 1.0, &CheckOptions::default()).unwrap();
            assert_eq!(b.verdict, a.verdict.reversed(), "{th:?}");
            assert_eq!(b.oracle_margin, -a.oracle_margin);
        }
    }

    #[test]
    fn sweep_increasing_cone() {
        let (x, y) = demo(32);
        let cone = upset_generators(&StateSpace::totally_ordered(2).unwrap()).unwrap();
        let r = sweep_function_class(&x, &y, &cone, 1.0, &CheckOptions::default()).unwrap();
        assert!(r.propagation.holds);
        assert_eq!(r.verdict, Verdict::XGeY);
        // The constant generator: identical expectations, zero margins.
        assert_eq!(r.reports[0].verdict, Verdict::Equal);
        assert!(r.reports[0].oracle_margin.abs() < 1e-12);
    }

    #[test]
    fn sweep_detects_non_monotone_propagation() {
        // A chain that swaps the two extreme states reverses increasing functions.
        let q = Matrix::from_row_slice(3, 3, &[-5.0, 0.0, 5.0, 0.0, 0.0, 0.0, 5.0, 0.0, -5.0]);
        let (x, y) = pair(RateModel::constant(q.clone(), 1.0), RateModel::constant(q, 1.0), 16);
        let cone = upset_generators(&StateSpace::totally_ordered(3).unwrap()).unwrap();
        let r = sweep_function_class(&x, &y, &cone, 1.0, &CheckOptions::default()).unwrap();
        assert!(!r.propagation.holds);
        assert!(r.propagation.witness_generator.is_some());
        assert!(r.propagation.worst_margin < 0.0);
    }
}
