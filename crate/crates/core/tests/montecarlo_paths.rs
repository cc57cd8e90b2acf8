//! Path simulation against exact marginals, and the martingale tests on
//! known cases.

use markov_order::comparison::oracle_expectation;
use markov_order::corpus::{build_pair, demo_pair, fixed_jump_pair, soundness_corpus, up_indicator, MASTER_SEED};
use markov_order::montecarlo::{
    empirical_marginal, empirical_mean, martingale_test, simulate, spacetime_martingale_test, SpaceTimeFunction,
    TestKind, DEFAULT_Z_MAX,
};
use markov_order::rates::{ProcessSpec, RateModel, Side};
use markov_order::Matrix;

const PATHS: usize = 100_000;

#[test]
fn thinning_reproduces_exact_marginals() {
    let corpus = soundness_corpus(20, MASTER_SEED);
    let mut specs: Vec<ProcessSpec> = corpus.iter().map(|s| s.x.clone()).collect();
    specs.push(demo_pair().0);
    specs.push(fixed_jump_pair().0);
    for (k, spec) in specs.iter().enumerate() {
        let (ev, _) = build_pair(spec, spec, 40).unwrap();
        let paths = simulate(spec, PATHS, 1000 + k as u64);
        let h = spec.horizon();
        for c in [0.2, 0.4, 0.6, 0.8, 1.0].map(|q| q * h) {
            let (probs, _) = empirical_marginal(&paths, spec.n(), c);
            let exact = ev.marginals(&spec.initial).at(ev.grid().index_of(c).unwrap(), Side::Right).clone();
            for i in 0..spec.n() {
                let p = exact[i];
                let se = (p * (1.0 - p) / PATHS as f64).sqrt();
                let diff = (probs[i] - p).abs();
                assert!(diff <= 4.0 * se + 1e-12, "spec {k}, c = {c}, state {i}: {} vs {p}", probs[i]);
            }
        }
    }
}

#[test]
fn simulation_is_reproducible_from_the_seed() {
    let (sx, _) = demo_pair();
    let a = simulate(&sx, 500, 42);
    let b = simulate(&sx, 500, 42);
    let c = simulate(&sx, 500, 43);
    assert_eq!(a.iter().map(|p| &p.times).collect::<Vec<_>>(), b.iter().map(|p| &p.times).collect::<Vec<_>>());
    assert_eq!(a.iter().map(|p| &p.states).collect::<Vec<_>>(), b.iter().map(|p| &p.states).collect::<Vec<_>>());
    assert_ne!(a.iter().map(|p| &p.times).collect::<Vec<_>>(), c.iter().map(|p| &p.times).collect::<Vec<_>>());
}

#[test]
fn zero_rates_never_move() {
    let spec = ProcessSpec::from_state(RateModel::constant(Matrix::zeros(3, 3), 1.0), 2);
    for p in simulate(&spec, 100, 1) {
        assert_eq!(p.state_at(1.0), 2);
        assert!(p.states.iter().all(|&s| s == 2));
    }
}

#[test]
fn fixed_jump_expectation_within_three_standard_errors() {
    let (sx, sy) = fixed_jump_pair();
    let f = up_indicator();
    for (spec, exact, seed) in [(&sx, 0.75, 5), (&sy, 0.51, 6)] {
        let (m, se) = empirical_mean(&simulate(spec, PATHS, seed), &f, 2.0);
        assert!((m - exact).abs() <= 3.0 * se, "{m} vs {exact} (se {se})");
    }
}

#[test]
fn dynkin_martingale_passes_for_the_true_generator_and_fails_for_a_wrong_one() {
    let (sx, sy) = demo_pair();
    let paths = simulate(&sx, PATHS, 3);
    let cps = [0.25, 0.5, 0.75, 1.0];
    let ok = martingale_test(&paths, &sx, &up_indicator(), &cps, DEFAULT_Z_MAX).unwrap();
    assert!(ok.pass, "max |z| = {}", ok.max_abs_z);
    let bad = martingale_test(&paths, &sy, &up_indicator(), &cps, DEFAULT_Z_MAX).unwrap();
    assert!(!bad.pass && bad.max_abs_z > 10.0);
}

#[test]
fn backward_values_give_a_space_time_martingale() {
    let (sx, _) = demo_pair();
    let (ev, _) = build_pair(&sx, &sx, 256).unwrap();
    let u = SpaceTimeFunction::from_knot_values(ev.grid().knots(), &ev.backward(&up_indicator().values, 256));
    let paths = simulate(&sx, PATHS, 8);
    let r = spacetime_martingale_test(&paths, &sx, &u, &[0.5, 1.0], DEFAULT_Z_MAX, TestKind::TwoSided).unwrap();
    assert!(r.pass, "max |z| = {}", r.max_abs_z);
    // The mean of u(0, X_0) is the exact expectation.
    let exact = oracle_expectation(&ev, &up_indicator(), 1.0).unwrap();
    assert!((u.value(0.0, 0, Side::Right) - exact).abs() <= 1e-12);
}
