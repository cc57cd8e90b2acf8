//! Finite state spaces, partial orders, test functions and the cones of
//! functions that define integral stochastic orders.
//!
//! Functions on `{0, .., n-1}` are stored as tables (vectors) and measured in
//! the max norm.

use serde::{Deserialize, Serialize};

use crate::{Error, Matrix, Result, Vector};

/// Default slack for cone membership.
pub const CONE_TOL: f64 = 1e-9;

/// Largest state count for which up-sets of a general partial order are
/// enumerated by brute force.
const MAX_UPSET_ENUMERATION: usize = 20;

/// A partial order on `{0, .., n-1}`, stored as its reflexive-transitive
/// closure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartialOrder {
    n: usize,
    le: Vec<bool>,
}

impl PartialOrder {
    /// Closes `pairs` (each `(i, j)` meaning `i <= j`) reflexively and
    /// transitively and rejects cycles.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut le = vec![false; n * n];
        for i in 0..n {
            le[i * n + i] = true;
        }
        for &(i, j) in pairs {
            if i >= n || j >= n {
                return Err(Error::Config(format!(
                    "order pair ({i}, {j}) outside state space of size {n}"
                )));
            }
            le[i * n + j] = true;
        }
        // Warshall closure.
        for k in 0..n {
            for i in 0..n {
                if !le[i * n + k] {
                    continue;
                }
                for j in 0..n {
                    if le[k * n + j] {
                        le[i * n + j] = true;
                    }
                }
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if le[i * n + j] && le[j * n + i] {
                    return Err(Error::Config(format!(
                        "order is not antisymmetric: {i} and {j} are mutually related"
                    )));
                }
            }
        }
        Ok(Self { n, le })
    }

    /// The chain `0 < 1 < .. < n-1`.
    pub fn total(n: usize) -> Self {
        let pairs: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::from_pairs(n, &pairs).expect("a chain is a partial order")
    }

    /// Only reflexive relations.
    pub fn antichain(n: usize) -> Self {
        Self::from_pairs(n, &[]).expect("the identity relation is a partial order")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn le(&self, i: usize, j: usize) -> bool {
        self.le[i * self.n + j]
    }

    pub fn is_total(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| self.le(i, j) || self.le(j, i)))
    }

    /// Strict relations `i < j` of the closure.
    pub fn strict_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| {
            (0..self.n).filter_map(move |j| (i != j && self.le(i, j)).then_some((i, j)))
        })
    }

    /// Whether the indicated subset is closed upwards.
    pub fn is_upset(&self, member: &[bool]) -> bool {
        self.strict_pairs().all(|(i, j)| !member[i] || member[j])
    }
}

/// A finite state space with optional labels and order.
#[derive(Debug, Clone)]
pub struct StateSpace {
    n: usize,
    labels: Option<Vec<String>>,
    order: Option<PartialOrder>,
}

impl StateSpace {
    pub fn new(n: usize, labels: Option<Vec<String>>, order: Option<PartialOrder>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("state space must have at least one state".into()));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Dimension { expected: n, got: l.len() });
            }
        }
        if let Some(o) = &order {
            if o.n() != n {
                return Err(Error::Dimension { expected: n, got: o.n() });
            }
        }
        Ok(Self { n, labels, order })
    }

    pub fn totally_ordered(n: usize) -> Result<Self> {
        Self::new(n, None, Some(PartialOrder::total(n)))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn order(&self) -> Option<&PartialOrder> {
        self.order.as_ref()
    }
}

/// A real function on the state space, stored as its table of values.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    pub values: Vector,
    pub name: Option<String>,
}

impl TestFunction {
    pub fn new(values: Vec<f64>, name: Option<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("test function has no values".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Config(format!("test function entry {i} is not finite")));
        }
        Ok(Self { values: Vector::from_vec(values), name })
    }

    pub fn named(values: Vec<f64>, name: &str) -> Result<Self> {
        Self::new(values, Some(name.to_string()))
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self { values: Vector::from_element(n, c), name: Some("constant".into()) }
    }

    pub fn indicator(member: &[bool]) -> Self {
        let values = member.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        let support: Vec<String> = member
            .iter()
            .enumerate()
            .filter(|&(_, &m)| m).map(|(i, _)| i.to_string())
            .collect();
        Self {
            values: Vector::from_vec(values),
            name: Some(format!("1{{{}}}", support.join(","))),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            let v: Vec<String> = self.values.iter().map(|x| format!("{x}")).collect();
            format!("({})", v.join(","))
        })
    }

    pub fn sup_norm(&self) -> f64 {
        crate::max_norm(&self.values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConeKind {
    Increasing,
    AllBounded,
    Custom,
}

/// A finitely generated cone of test functions. Membership is always
/// modulo constants: `f` belongs if `f - c` is a nonnegative combination of
/// generators for some real `c`.
#[derive(Debug, Clone)]
pub struct FunctionCone {
    pub kind: ConeKind,
    pub generators: Vec<TestFunction>,
    order: Option<PartialOrder>,
}

impl FunctionCone {
    pub fn custom(generators: Vec<TestFunction>) -> Result<Self> {
        let n = generators
            .first()
            .map(TestFunction::len)
            .ok_or_else(|| Error::Config("custom cone needs at least one generator".into()))?;
        if let Some(g) = generators.iter().find(|g| g.len() != n) {
            return Err(Error::Dimension { expected: n, got: g.len() });
        }
        Ok(Self { kind: ConeKind::Custom, generators, order: None })
    }

    /// Every real function; generated by the signed point indicators.
    pub fn all_bounded(n: usize) -> Self {
        let mut generators = vec![TestFunction::constant(n, 1.0)];
        for i in 0..n {
            let mut e = vec![false; n];
            e[i] = true;
            let ind = TestFunction::indicator(&e);
            let neg = TestFunction {
                values: -&ind.values,
                name: ind.name.as_ref().map(|s| format!("-{s}")),
            };
            generators.push(ind);
            generators.push(neg);
        }
        Self { kind: ConeKind::AllBounded, generators, order: None }
    }

    pub fn order(&self) -> Option<&PartialOrder> {
        self.order.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.generators.first().map_or(0, TestFunction::len)
    }
}

/// Indicators of all nontrivial up-sets of the order, preceded by the
/// constant function 1.
pub fn upset_generators(space: &StateSpace) -> Result<FunctionCone> {
    let order = space
        .order()
        .ok_or_else(|| Error::Config("increasing cone requires an order on the state space".into()))?;
    let n = space.n();
    let mut generators = vec![TestFunction::constant(n, 1.0)];
    if order.is_total() {
        // Rank states along the chain; up-sets are the tails.
        let mut rank: Vec<usize> = (0..n).collect();
        rank.sort_by_key(|&i| (0..n).filter(|&j| order.le(j, i)).count());
        for k in 1..n {
            let mut member = vec![false; n];
            for &s in &rank[k..] {
                member[s] = true;
            }
            generators.push(TestFunction::indicator(&member));
        }
    } else {
        if n > MAX_UPSET_ENUMERATION {
            return Err(Error::Config(format!(
                "up-set enumeration of a non-total order limited to {MAX_UPSET_ENUMERATION} states"
            )));
        }
        let mut sets: Vec<Vec<bool>> = (1u64..(1u64 << n) - 1)
            .map(|mask| (0..n).map(|i| mask & (1 << i) != 0).collect::<Vec<bool>>())
            .filter(|member| order.is_upset(member))
            .collect();
        // Larger up-sets first, then lexicographic by membership.
        sets.sort_by(|a, b| {
            let ca = a.iter().filter(|&&m| m).count();
            let cb = b.iter().filter(|&&m| m).count();
            cb.cmp(&ca).then_with(|| b.cmp(a))
        });
        generators.extend(sets.iter().map(|m| TestFunction::indicator(m)));
    }
    Ok(FunctionCone { kind: ConeKind::Increasing, generators, order: Some(order.clone()) })
}

/// Smallest value of `f(j) - f(i)` over strict pairs `i < j`, with the
/// offending pair; `None` for an antichain.
pub fn monotonicity_margin(values: &Vector, order: &PartialOrder) -> Option<(f64, (usize, usize))> {
    order
        .strict_pairs()
        .map(|(i, j)| (values[j] - values[i], (i, j)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
}

pub fn is_in_cone(f: &TestFunction, cone: &FunctionCone, tol: f64) -> Result<bool> {
    let n = cone.dim();
    if f.len() != n {
        return Err(Error::Dimension { expected: n, got: f.len() });
    }
    Ok(match cone.kind {
        ConeKind::AllBounded => f.values.iter().all(|v| v.is_finite()),
        ConeKind::Increasing => {
            let order = cone
                .order()
                .ok_or_else(|| Error::Config("increasing cone without an order".into()))?;
            monotonicity_margin(&f.values, order).is_none_or(|(m, _)| m >= -tol)
        }
        ConeKind::Custom => cone_residual(&f.values, &cone.generators) <= tol,
    })
}

/// Max-norm distance from `f` to the cone spanned by `generators` plus the
/// constants, measured at the nonnegative least-squares solution.
pub fn cone_residual(f: &Vector, generators: &[TestFunction]) -> f64 {
    let n = f.len();
    let k = generators.len() + 2;
    let mut a = Matrix::zeros(n, k);
    for (c, g) in generators.iter().enumerate() {
        a.set_column(c, &g.values);
    }
    a.set_column(k - 2, &Vector::from_element(n, 1.0));
    a.set_column(k - 1, &Vector::from_element(n, -1.0));
    let x = nnls(&a, f);
    crate::max_norm(&(&a * x - f))
}

/// Lawson-Hanson active-set solver for `min |A x - b|_2` subject to `x >= 0`.
pub fn nnls(a: &Matrix, b: &Vector) -> Vector {
    let ncols = a.ncols();
    let mut x = Vector::zeros(ncols);
    let mut passive = vec![false; ncols];
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0) * b.amax().max(1.0);
    let wtol = 1e-12 * scale;

    for _ in 0..(3 * ncols + 10) {
        let w = a.transpose() * (b - a * &x);
        let next = (0..ncols)
            .filter(|&j| !passive[j] && w[j] > wtol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = next else { break };
        passive[j] = true;

        loop {
            let cols: Vec<usize> = (0..ncols).filter(|&c| passive[c]).collect();
            let z_p = least_squares(&a.select_columns(&cols), b);
            let mut z = Vector::zeros(ncols);
            for (k, &c) in cols.iter().enumerate() {
                z[c] = z_p[k];
            }
            if cols.iter().all(|&c| z[c] > 0.0) {
                x = z;
                break;
            }
            let alpha = cols
                .iter()
                .filter(|&&c| z[c] <= 0.0)
                .map(|&c| x[c] / (x[c] - z[c]))
                .fold(f64::INFINITY, f64::min);
            x += (z - &x) * alpha;
            for &c in &cols {
                if x[c] <= 1e-15 {
                    x[c] = 0.0;
                    passive[c] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    x
}

fn least_squares(a: &Matrix, b: &Vector) -> Vector {
    let svd = a.clone().svd(true, true);
    svd.solve(b, 1e-13).unwrap_or_else(|_| Vector::zeros(a.ncols()))
}
