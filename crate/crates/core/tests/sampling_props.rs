mod common;

use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;
use seg_core::operators::ROOT_TOL;
use seg_core::sampling::{self, SamplingScheme, SchemeAnalysis, SchemeSpec};
use seg_core::FiniteSumOperator;

fn probs(r: &mut impl Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| r.random_range(0.2..1.0)).collect();
    let t: f64 = raw.iter().sum();
    raw.iter().map(|p| p / t).collect()
}

/// One instance of every scheme on `n` components (tuple schemes keep `b <= 3`).
fn all_schemes(op: &FiniteSumOperator, seed: u64) -> Vec<SamplingScheme> {
    let n = op.n();
    let mut r = common::rng(seed);
    let b = r.random_range(1..=n.min(3));
    let incl: Vec<f64> = (0..n).map(|_| r.random_range(0.1..0.9)).collect();
    vec![
        SamplingScheme::uniform(n, b).unwrap(),
        SamplingScheme::importance(&op.lipschitz().unwrap()).unwrap(),
        SamplingScheme::b_nice(n, r.random_range(1..=n)).unwrap(),
        SamplingScheme::indep_with_replacement(b, &probs(&mut r, n)).unwrap(),
        SamplingScheme::iswor(&incl).unwrap(),
    ]
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn every_scheme_is_unbiased(seed in any::<u64>(), n in 1usize..=12, d in 1usize..4) {
        let op = common::random_operator(seed, n, d);
        let mut r = common::rng(seed ^ 7);
        for scheme in all_schemes(&op, seed) {
            for _ in 0..50 {
                let x = common::gaussian_vec(&mut r, d) * 3.0;
                let e = sampling::weighted_expectation(&scheme, &op, &x).unwrap().unwrap();
                let f = op.eval_full(&x).unwrap();
                prop_assert!((&e - &f).norm() <= 1e-9 * (1.0 + f.norm()), "{}: {} vs {}", scheme.label(), e, f);
            }
        }
    }

    #[test]
    fn closed_form_second_moments_match_enumeration(seed in any::<u64>(), n in 1usize..=8, d in 1usize..4) {
        let op = common::random_operator(seed, n, d);
        let mut r = common::rng(seed ^ 11);
        for scheme in all_schemes(&op, seed) {
            for _ in 0..5 {
                let x = common::gaussian_vec(&mut r, d);
                let brute = sampling::weighted_second_moment(&scheme, &op, &x).unwrap().unwrap();
                let closed = sampling::weighted_second_moment_closed(&scheme, &op, &x).unwrap();
                prop_assert!(close(brute, closed, 1e-10), "{}: {brute} vs {closed}", scheme.label());
            }
        }
    }

    #[test]
    fn mu_bar_lies_between_mu_min_and_mu(seed in any::<u64>(), n in 1usize..=8, d in 1usize..4) {
        let op = common::random_operator(seed, n, d);
        let mus = op.mus().unwrap();
        let mu_min = mus.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(mu_min >= 0.0);
        let (_, mu) = op.full_constants().unwrap();
        for scheme in all_schemes(&op, seed) {
            let an = SchemeAnalysis::new(&scheme, &op).unwrap();
            let (bar, se) = an.mu_bar();
            prop_assert!(se.is_none());
            prop_assert!(bar >= mu_min - 1e-10, "{}: {bar} < {mu_min}", scheme.label());
            prop_assert!(bar <= mu + 1e-10, "{}: {bar} > {mu}", scheme.label());
        }
    }

    #[test]
    fn nice_beats_uniform_on_constants(seed in any::<u64>(), n in 1usize..=8, d in 1usize..4, bf in 0.0..1.0f64) {
        let op = common::random_operator(seed, n, d);
        let b = 1 + ((n - 1) as f64 * bf) as usize;
        let nice = SamplingScheme::b_nice(n, b).unwrap();
        let us = SamplingScheme::uniform(n, 1).unwrap();
        let an_nice = SchemeAnalysis::new(&nice, &op).unwrap();
        let an_us = SchemeAnalysis::new(&us, &op).unwrap();
        prop_assert!(an_nice.mu_bar().0 >= an_us.mu_bar().0 - 1e-10);
        let l_max = op.lipschitz().unwrap().into_iter().fold(0.0, f64::max);
        prop_assert!(an_nice.l_eff() <= l_max + 1e-10);
    }

    #[test]
    fn conditions_hold_at_the_solution(seed in any::<u64>(), n in 1usize..=6, d in 1usize..4) {
        let op = common::random_operator(seed, n, d);
        let x_star = op.solve_root(ROOT_TOL).unwrap();
        prop_assume!(op.mus().unwrap().iter().all(|m| *m >= 0.0));
        for scheme in all_schemes(&op, seed) {
            let rep = sampling::verify_conditions(&scheme, &op, &x_star).unwrap();
            prop_assert!(rep.all_hold(), "{:?}", rep);
            prop_assert!(rep.unbiased_exact);
        }
    }

    #[test]
    fn scheme_strings_round_trip(b in 1usize..64, p in 0.01..0.99f64, which in 0usize..5) {
        let spec = match which {
            0 => SchemeSpec::Uniform { b },
            1 => SchemeSpec::Importance,
            2 => SchemeSpec::BNice { b },
            3 => SchemeSpec::IndepWithReplacement { b },
            _ => SchemeSpec::Iswor { p },
        };
        let back: SchemeSpec = spec.to_string().parse().unwrap();
        prop_assert_eq!(back, spec);
    }
}

/// Independent oracle: average `||F_S(x*)||^2` over all `b`-subsets via bitmasks.
fn nice_brute_force(fs: &[DVector<f64>], b: usize) -> f64 {
    let n = fs.len();
    let (mut acc, mut count) = (0.0, 0usize);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != b {
            continue;
        }
        let mut m = DVector::zeros(fs[0].len());
        for (i, f) in fs.iter().enumerate() {
            if mask >> i & 1 == 1 {
                m += f;
            }
        }
        acc += (m / b as f64).norm_squared();
        count += 1;
    }
    acc / count as f64
}

#[test]
fn nice_variance_identity_exhaustive() {
    for n in 1..=8usize {
        for seed in 0..3u64 {
            let op = common::random_operator(100 * n as u64 + seed, n, 3);
            let x_star = op.solve_root(ROOT_TOL).unwrap();
            let fs: Vec<_> = (0..n).map(|i| op.eval_component(i, &x_star).unwrap()).collect();
            let sigma_us = fs.iter().map(|f| f.norm_squared()).sum::<f64>() / n as f64;
            for b in 1..=n {
                let factor = if n == b { 0.0 } else { (n - b) as f64 / (b as f64 * (n as f64 - 1.0)) };
                let brute = nice_brute_force(&fs, b);
                let closed = sampling::sigma_star_sq(&SamplingScheme::b_nice(n, b).unwrap(), &op, &x_star).unwrap();
                let scale = sigma_us.max(1.0);
                assert!((brute - factor * sigma_us).abs() <= 1e-10 * scale, "n={n} b={b}: {brute} vs {}", factor * sigma_us);
                assert!((closed - factor * sigma_us).abs() <= 1e-10 * scale);
            }
        }
    }
}

#[test]
fn draw_frequencies_match_probabilities() {
    let n = 8;
    let op = common::random_operator(42, n, 2);
    let draws = 200_000;
    for (k, scheme) in all_schemes(&op, 5).into_iter().enumerate() {
        let expected: Vec<f64> = {
            let mut e = vec![0.0; n];
            scheme.for_each_outcome(1e6, |idx, p, _| {
                for &i in idx {
                    e[i] += p;
                }
            });
            e
        };
        let mut rng = common::rng(k as u64);
        let mut sum = vec![0.0; n];
        let mut sum_sq = vec![0.0; n];
        let mut counts = vec![0.0; n];
        for _ in 0..draws {
            counts.iter_mut().for_each(|c| *c = 0.0);
            let s = scheme.draw(&mut rng);
            for &i in &s.indices {
                counts[i] += 1.0;
            }
            for i in 0..n {
                sum[i] += counts[i];
                sum_sq[i] += counts[i] * counts[i];
            }
        }
        let m = draws as f64;
        for i in 0..n {
            let mean = sum[i] / m;
            let se = ((sum_sq[i] / m - mean * mean) / m).sqrt();
            assert!((mean - expected[i]).abs() <= 4.0 * se + 1e-12, "{} index {i}: {mean} vs {}", scheme.label(), expected[i]);
        }
    }
}

#[test]
fn importance_rho_tilde_by_enumeration() {
    use nalgebra::dmatrix;
    use seg_core::schedule::rho_tilde_sseg;
    let comps = vec![
        seg_core::Component::affine(dmatrix![0.5, 0.0; 0.0, 1.0], DVector::zeros(2)).unwrap(),
        seg_core::Component::affine(dmatrix![0.5, 0.0; 0.0, 3.0], DVector::zeros(2)).unwrap(),
    ];
    let op = FiniteSumOperator::new(comps).unwrap();
    let scheme = SamplingScheme::importance(&op.lipschitz().unwrap()).unwrap();
    let an = SchemeAnalysis::new(&scheme, &op).unwrap();
    let consts = an.constants(&DVector::zeros(2)).unwrap();
    let gamma = 1.0 / 12.0;
    assert!((an.cap() - gamma).abs() < 1e-15);
    // Two-term oracle: p = (1/4, 3/4), weights 2/1 and 2/3.
    let oracle = (0.25 * gamma * 2.0 * 0.5 + 0.75 * gamma * (2.0 / 3.0) * 0.5) / 8.0;
    let got = rho_tilde_sseg(&consts, gamma).unwrap();
    assert!((got - oracle).abs() < 1e-15);
    assert!((got - gamma * 0.5 / 8.0).abs() < 1e-15);
}
