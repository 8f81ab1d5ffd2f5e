use fqi_lab::rademacher::{
    empirical_rademacher, localized_rademacher, rate_exponent, sub_root_fixed_point, theoretical_psi, AscentConfig,
    DifferenceClass, FiniteClass, SubRootSpec, SupMethod,
};
use fqi_lab::relu::{Architecture, ReluNetwork};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect()
}

/// `E|S_n| / n` for a simple random walk, summed over the binomial law.
fn exact_walk_mean(n: usize) -> f64 {
    let mut log_c = 0.0f64; // ln C(n, k)
    let mut acc = 0.0;
    for k in 0..=n {
        if k > 0 {
            log_c += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        let s = (2 * k) as f64 - n as f64;
        acc += (log_c - n as f64 * std::f64::consts::LN_2).exp() * s.abs();
    }
    acc / n as f64
}

#[test]
fn sign_class_matches_random_walk() {
    let n = 100;
    let xs = points(n, 1, 0);
    let class = FiniteClass::from_table(vec![vec![1.0; n], vec![-1.0; n]]).unwrap();
    let est = empirical_rademacher(&class, &xs, 2000, 17).unwrap();
    assert_eq!(est.method, SupMethod::Exhaustive);
    assert!(est.bias_note.is_none());
    let exact = exact_walk_mean(n);
    assert!((exact - 0.0796).abs() < 1e-3);
    assert!((est.value - exact).abs() <= 0.005, "{} vs {exact}", est.value);

    // independent Monte-Carlo of the same walk
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws = 20_000;
    let mc: f64 = (0..draws)
        .map(|_| (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).sum::<f64>().abs() / n as f64)
        .sum::<f64>()
        / draws as f64;
    assert!((mc - exact).abs() <= 0.003, "{mc} vs {exact}");
}

#[test]
fn shattering_class_reaches_one() {
    let n = 10;
    let members: Vec<Vec<f64>> =
        (0..1u32 << n).map(|mask| (0..n).map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 }).collect()).collect();
    let class = FiniteClass::from_table(members).unwrap();
    let est = empirical_rademacher(&class, &points(n, 1, 1), 50, 2).unwrap();
    assert_eq!(est.value, 1.0);
}

#[test]
fn zero_class_is_exactly_zero() {
    let class = FiniteClass::from_table(vec![vec![0.0; 30]]).unwrap();
    assert_eq!(empirical_rademacher(&class, &points(30, 2, 0), 100, 0).unwrap().value, 0.0);
}

#[test]
fn singleton_class_averages_to_zero() {
    for seed in 0..5 {
        let n = 200;
        let draws = 500;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let member: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let class = FiniteClass::from_table(vec![member]).unwrap();
        let est = empirical_rademacher(&class, &points(n, 1, seed), draws, seed).unwrap();
        assert!(est.value.abs() <= 3.0 / ((n * draws) as f64).sqrt(), "seed {seed}: {}", est.value);
    }
}

const SMALL: Architecture = Architecture { height: 3, width: 8, sparsity: 64, bound: 10.0 };

fn constant_anchor(v: f64) -> ReluNetwork {
    let mut net = ReluNetwork::zeros(2, SMALL).unwrap();
    let last = net.params().len() - 1;
    net.params_mut()[last] = v;
    net
}

#[test]
fn localized_complexity_is_monotone_in_the_radius() {
    let anchor = constant_anchor(0.5);
    let ascent = AscentConfig::default();
    let mut means = [0.0; 3];
    for seed in 0..5u64 {
        let xs = points(64, 2, 100 + seed);
        let mu = points(512, 2, 200 + seed);
        let at = |r: f64| localized_rademacher(&SMALL, &anchor, r, &xs, &mu, 10, &ascent, seed).unwrap().value;
        let (tiny, mid, wide) = (at(1e-8), at(0.01), at(1.0));
        assert!(tiny <= 1e-3, "seed {seed}: {tiny}");
        assert!(mid <= wide, "seed {seed}: {mid} > {wide}");
        means[0] += tiny / 5.0;
        means[1] += mid / 5.0;
        means[2] += wide / 5.0;
    }
    assert!(means[0] <= means[1] && means[1] <= means[2], "{means:?}");
}

#[test]
fn unbinding_radius_matches_the_difference_class() {
    let anchor = constant_anchor(0.3);
    let ascent = AscentConfig::default();
    let xs = points(64, 2, 9);
    let mu = points(512, 2, 10);
    let local = localized_rademacher(&SMALL, &anchor, 4.0, &xs, &mu, 20, &ascent, 4).unwrap();
    let class = DifferenceClass { anchor, ascent };
    let free = empirical_rademacher(&class, &xs, 20, 4).unwrap();
    let pooled = (local.stderr.powi(2) + free.stderr.powi(2)).sqrt();
    assert!((local.value - free.value).abs() <= 2.0 * pooled + 1e-12, "{} vs {}", local.value, free.value);
    assert!(local.bias_note.is_some() && free.bias_note.is_some());
}

#[test]
fn affine_fixed_points_match_the_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let a: f64 = 10.0 - rng.random_range(0.0..10.0);
        let b: f64 = 10.0 - rng.random_range(0.0..10.0);
        let s = (a + (a * a + 4.0 * b).sqrt()) / 2.0;
        let want = s * s;
        let got = sub_root_fixed_point(&SubRootSpec::AffineSqrt { a, b }, 1000.0, 1e-12).unwrap();
        assert!((got - want).abs() <= 1e-10 * want.max(1.0), "a {a}, b {b}: {got} vs {want}");
    }
}

#[test]
fn psi_at_zero_keeps_only_the_radius_free_terms() {
    let (big_n, n, alpha, beta) = (20.0f64, 5000.0f64, 1.5, 0.3);
    let complexity = (big_n * (big_n.ln().powi(2) + n.ln())).sqrt();
    let want = n.powf(-beta - 0.5) * complexity + n.powf(-beta * (1.0 - 1.0 / (2.0 * alpha)) - 0.5) + 1.0 / n;
    let got = theoretical_psi(big_n, n, alpha, 1, beta, 0.0).unwrap();
    assert!((got - want).abs() < 1e-15);
}

#[test]
fn exponents_approach_the_parametric_limit() {
    let r = rate_exponent(1e6, 2).unwrap();
    assert!((r.stat_exponent - 0.5).abs() < 1e-5);
    assert!((r.sample_exponent - 1.0).abs() < 1e-5);
    let e = rate_exponent(2.0, 1).unwrap();
    assert!((e.stat_exponent - 5.0 / 13.0).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn theoretical_psi_is_sub_root(
        big_n in 1.0f64..500.0, n in 2.0f64..1e7, alpha in 0.6f64..5.0, d in 1usize..4, frac in 0.01f64..0.99,
    ) {
        let alpha = alpha + d as f64 / 2.0;
        let beta = frac * alpha / d as f64;
        let psi = |r: f64| theoretical_psi(big_n, n, alpha, d, beta, r).unwrap();
        let grid: Vec<f64> = (0..80).map(|i| 10f64.powf(-8.0 + 10.0 * i as f64 / 79.0)).collect();
        for w in grid.windows(2) {
            let (a, b) = (psi(w[0]), psi(w[1]));
            prop_assert!(b >= a);
            prop_assert!(b / w[1].sqrt() <= a / w[0].sqrt() * (1.0 + 1e-12));
        }
        for r in &grid {
            prop_assert!(psi(4.0 * r) <= 2.0 * psi(*r) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn stat_exponent_rises_with_smoothness_and_falls_with_dimension(alpha in 0.1f64..20.0, step in 0.01f64..5.0, d in 1usize..6) {
        let base = rate_exponent(alpha, d).unwrap().stat_exponent;
        prop_assert!(rate_exponent(alpha + step, d).unwrap().stat_exponent > base);
        prop_assert!(rate_exponent(alpha, d + 1).unwrap().stat_exponent < base);
    }
}
