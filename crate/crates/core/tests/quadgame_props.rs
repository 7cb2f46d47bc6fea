use nalgebra::DMatrix;
use proptest::prelude::*;
use seg_core::operators::ROOT_TOL;
use seg_core::quadgame::{generate_game, GameGenConfig, LmaxOverride, QuadraticGame};

fn eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    let e = m.clone().symmetric_eigenvalues();
    (e.min(), e.max())
}

fn asym(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

fn check_bands(g: &QuadraticGame, cfg: &GameGenConfig) {
    let tol = 1e-9;
    let (mut amin, mut amax) = (f64::INFINITY, 0.0f64);
    for i in 0..g.n {
        assert!(asym(&g.a_mats[i]) <= 1e-12);
        assert!(asym(&g.c_mats[i]) <= 1e-12);
        let (lo, hi) = eig_range(&g.a_mats[i]);
        assert!(lo >= cfg.mu_a - tol && hi <= cfg.l_a + tol, "A_{i} spectrum [{lo}, {hi}]");
        let (lo_c, hi_c) = eig_range(&g.c_mats[i]);
        assert!(lo_c >= cfg.mu_c - tol && hi_c <= cfg.l_c + tol, "C_{i} spectrum [{lo_c}, {hi_c}]");
        let sv = g.b_mats[i].clone().singular_values();
        let r = g.d.min(g.p);
        for s in sv.iter().take(r) {
            assert!(*s >= cfg.mu_b - tol && *s <= cfg.l_b + tol);
        }
        amin = amin.min(lo);
        amax = amax.max(hi);
    }
    // Endpoints are attained somewhere in the family (one slot only holds the lower one).
    assert!((amin - cfg.mu_a).abs() <= tol);
    if g.n * g.d >= 2 {
        assert!((amax - cfg.l_a).abs() <= tol);
    }
}

#[test]
fn default_game_respects_bands() {
    let cfg = GameGenConfig {
        seed: 3,
        ..Default::default()
    };
    let g = generate_game(&cfg).unwrap();
    assert_eq!((g.n, g.d, g.p), (100, 100, 100));
    check_bands(&g, &cfg);
}

#[test]
fn overridden_component_has_requested_scale() {
    let mut cfg = GameGenConfig::desk(5);
    cfg.lmax_override = Some(LmaxOverride { index: 0, l_max: 20.0 });
    let op = generate_game(&cfg).unwrap().to_operator().unwrap();
    let ls = op.lipschitz().unwrap();
    assert!((ls[0] - 20.0).abs() < 1e-9);
    for l in &ls[1..] {
        assert!((l - 1.0).abs() < 1e-9);
    }
}

fn small_config() -> impl Strategy<Value = GameGenConfig> {
    (1usize..6, 1usize..5, 1usize..5, 0.05..0.3f64, 0.5..2.0f64, 0.0..0.5f64, any::<u64>()).prop_map(|(n, d, p, mu, l, mu_b, seed)| GameGenConfig {
        n,
        d,
        p,
        mu_a: mu,
        l_a: l,
        mu_c: mu * 1.5,
        l_c: l,
        mu_b,
        l_b: mu_b + 0.5,
        seed,
        ..Default::default()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_games_respect_bands(cfg in small_config()) {
        let g = generate_game(&cfg).unwrap();
        check_bands(&g, &cfg);
    }

    #[test]
    fn component_mu_is_min_of_diagonal_blocks(cfg in small_config()) {
        let g = generate_game(&cfg).unwrap();
        let op = g.to_operator().unwrap();
        for i in 0..g.n {
            let m = g.block_matrix(i);
            let sym = (&m + m.transpose()) * 0.5;
            let oracle = sym.symmetric_eigenvalues().min();
            let blocks = eig_range(&g.a_mats[i]).0.min(eig_range(&g.c_mats[i]).0);
            let (_, mu) = op.component_constants(i).unwrap();
            prop_assert!((mu - oracle).abs() <= 1e-9);
            prop_assert!((mu - blocks).abs() <= 1e-9);
        }
    }

    #[test]
    fn positive_bands_give_solvable_games(cfg in small_config()) {
        let op = generate_game(&cfg).unwrap().to_operator().unwrap();
        let (_, mu) = op.full_constants().unwrap();
        prop_assert!(mu >= cfg.mu_a.min(cfg.mu_c) - 1e-9);
        let x = op.solve_root(ROOT_TOL).unwrap();
        prop_assert!(op.eval_full(&x).unwrap().norm() <= ROOT_TOL);
    }

    #[test]
    fn generation_is_deterministic_and_round_trips(cfg in small_config()) {
        let g = generate_game(&cfg).unwrap();
        prop_assert_eq!(&g, &generate_game(&cfg).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.qgame");
        g.save(&path).unwrap();
        let back = QuadraticGame::load(&path).unwrap();
        prop_assert_eq!(&back, &g);
        for i in 0..g.n {
            for (x, y) in back.b_mats[i].iter().zip(g.b_mats[i].iter()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn negative_component_keeps_mu_bar_positive(seed in any::<u64>(), idx in 0usize..4) {
        let mut cfg = GameGenConfig { n: 4, d: 3, p: 3, seed, ..Default::default() };
        cfg.negative_mu_component = Some(idx);
        let op = generate_game(&cfg).unwrap().to_operator().unwrap();
        let mus = op.mus().unwrap();
        prop_assert!(mus[idx] < 0.0);
        prop_assert_eq!(mus.iter().filter(|m| **m < 0.0).count(), 1);
        let bar = seg_core::sampling::mu_bar(&seg_core::sampling::SamplingScheme::uniform(4, 1).unwrap(), &mus).unwrap();
        prop_assert!(bar > 0.0);
        prop_assert!(op.full_constants().unwrap().1 > 0.0);
    }
}
