mod common;

use common::{boundary_brute_force, combinations, dense_omega, normal_mat, normal_vec, random_spd, random_stable_model};
use nalgebra::{DMatrix, DVector};
use pomon::rng::rng_for;
use pomon::sampler::{adaptive_alpha, omega, select_exhaustive, select_greedy, select_random, solve_ellipsoid_max};
use pomon::{stats, AlphaSchedule, ModelParams, ObservationMask, UcrInputs};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random decision context for a `q`-state, `p`-output model.
struct Instance {
    params: ModelParams,
    f_hat: DVector<f64>,
    sigma_f: DMatrix<f64>,
    g: DMatrix<f64>,
    p_pred: DMatrix<f64>,
    alpha: f64,
}

impl Instance {
    fn draw(rng: &mut ChaCha8Rng, q: usize, p: usize) -> Self {
        let params = random_stable_model(rng, q, p);
        Self {
            f_hat: normal_vec(rng, q),
            sigma_f: random_spd(rng, q) * 0.3,
            g: DMatrix::identity(q, q) + normal_mat(rng, q, q) * 0.5,
            p_pred: params.stationary_cov().unwrap(),
            alpha: rng.random_range(0.05..0.9),
            params,
        }
    }

    fn inputs(&self) -> UcrInputs<'_> {
        UcrInputs {
            f_hat: &self.f_hat,
            sigma_f: &self.sigma_f,
            g_next: &self.g,
            p_pred: &self.p_pred,
            params: &self.params,
            alpha: self.alpha,
        }
    }

    fn omega(&self, rows: &[usize]) -> DMatrix<f64> {
        dense_omega(rows, &self.g, &self.p_pred, self.params.c(), self.params.sigma_r())
    }
}

#[test]
fn omega_matches_dense_formula() {
    let mut rng = rng_for(3, 0, 0);
    for _ in 0..200 {
        let q = rng.random_range(1..=4);
        let p = rng.random_range(1..=6);
        let inst = Instance::draw(&mut rng, q, p);
        let m = rng.random_range(1..=p);
        let mask = select_random(p, m, &mut rng).unwrap();
        let got = omega(&mask, &inst.g, &inst.p_pred, &inst.params).unwrap();
        let want = inst.omega(mask.indices());
        assert!((got - &want).amax() < 1e-10 * want.amax().max(1.0));
    }
}

#[test]
fn ellipsoid_maximum_matches_boundary_search() {
    let mut rng = rng_for(4, 0, 0);
    for case in 0..200 {
        let q = rng.random_range(1..=3);
        let inst = Instance::draw(&mut rng, q, 4);
        let om = inst.omega(&[0, 2]);
        let inputs = inst.inputs();
        let sol = solve_ellipsoid_max(&inputs, &om).unwrap();
        let brute = boundary_brute_force(&inst.f_hat, &inst.sigma_f, &om, inputs.radius2().unwrap(), 4000, &mut rng);
        let rel = (sol.score - brute) / brute.abs().max(1e-12);
        assert!(rel.abs() < 1e-3, "case {case}: solver {} vs brute force {brute}", sol.score);
    }
}

#[test]
fn exhaustive_matches_brute_force_over_subsets() {
    let mut rng = rng_for(5, 0, 0);
    for case in 0..20 {
        let inst = Instance::draw(&mut rng, 3, 6);
        let r2 = inst.inputs().radius2().unwrap();
        let scores: Vec<f64> = combinations(6, 2)
            .iter()
            .map(|rows| boundary_brute_force(&inst.f_hat, &inst.sigma_f, &inst.omega(rows), r2, 2000, &mut rng))
            .collect();
        let best = scores.iter().copied().fold(f64::MIN, f64::max);
        let dec = select_exhaustive(&inst.inputs(), 2).unwrap();
        assert!((dec.score - best).abs() < 1e-3 * best, "case {case}: {} vs {best}", dec.score);
        let pos = combinations(6, 2).iter().position(|c| c == dec.mask.indices()).unwrap();
        assert!((scores[pos] - best).abs() < 1e-3 * best, "case {case}: chosen subset is not optimal");
    }
}

#[test]
fn greedy_never_beats_exhaustive() {
    let mut rng = rng_for(6, 0, 0);
    for _ in 0..100 {
        let inst = Instance::draw(&mut rng, 3, 6);
        let g = select_greedy(&inst.inputs(), 3).unwrap();
        let e = select_exhaustive(&inst.inputs(), 3).unwrap();
        assert!(g.score <= e.score * (1.0 + 1e-12));
    }
}

#[test]
fn greedy_equals_exhaustive_for_single_variable() {
    let mut rng = rng_for(7, 0, 0);
    for _ in 0..100 {
        let q = rng.random_range(1..=4);
        let inst = Instance::draw(&mut rng, q, 8);
        assert_eq!(select_greedy(&inst.inputs(), 1).unwrap(), select_exhaustive(&inst.inputs(), 1).unwrap());
    }
}

#[test]
fn low_rank_scores_agree_with_full_solver() {
    let mut rng = rng_for(8, 0, 0);
    for _ in 0..100 {
        let q = rng.random_range(1..=4);
        let inst = Instance::draw(&mut rng, q, 6);
        let m = rng.random_range(1..=3);
        let dec = select_exhaustive(&inst.inputs(), m).unwrap();
        let full = solve_ellipsoid_max(&inst.inputs(), &inst.omega(dec.mask.indices())).unwrap();
        assert!((dec.score - full.score).abs() < 1e-8 * full.score.max(1.0));
    }
}

#[test]
fn random_subsets_are_uniform() {
    let mut rng = rng_for(9, 0, 0);
    let draws = 100_000;
    let mut counts = [0usize; 10];
    for _ in 0..draws {
        for &i in select_random(10, 2, &mut rng).unwrap().indices() {
            counts[i] += 1;
        }
    }
    for (i, c) in counts.iter().enumerate() {
        let freq = *c as f64 / draws as f64;
        assert!((freq - 0.2).abs() < 0.005, "index {i} frequency {freq}");
    }

    let mut pairs = [0usize; 3];
    let n = 30_000;
    for _ in 0..n {
        let mask = select_random(3, 2, &mut rng).unwrap();
        let slot = match mask.indices() {
            [0, 1] => 0,
            [0, 2] => 1,
            _ => 2,
        };
        pairs[slot] += 1;
    }
    let expected = n as f64 / 3.0;
    let chi2: f64 = pairs.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    let p_value = 1.0 - stats::chi2_cdf(chi2, 2);
    assert!(p_value > 0.01, "chi-square {chi2}, p = {p_value}");
}

#[test]
fn full_subset_when_all_variables_fit() {
    let mut rng = rng_for(10, 0, 0);
    let inst = Instance::draw(&mut rng, 2, 4);
    let dec = select_exhaustive(&inst.inputs(), 4).unwrap();
    assert_eq!(dec.mask, ObservationMask::full(4));
    assert_eq!(select_random(4, 4, &mut rng).unwrap(), ObservationMask::full(4));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn maximizer_lies_on_the_boundary(seed in any::<u64>(), q in 1usize..=5, p in 1usize..=6) {
        let mut rng = rng_for(seed, 0, 0);
        let inst = Instance::draw(&mut rng, q, p);
        let m = rng.random_range(1..=p);
        let inputs = inst.inputs();
        let dec = select_greedy(&inputs, m).unwrap();
        let r2 = inputs.radius2().unwrap();
        let d = &dec.f_star - &inst.f_hat;
        let lhs = (d.transpose() * inst.sigma_f.clone().try_inverse().unwrap() * &d)[(0, 0)];
        prop_assert!((lhs - r2).abs() <= 1e-6 * r2, "{} vs {}", lhs, r2);
    }

    #[test]
    fn alpha_schedule_is_clamped_and_monotone(t1 in 0.0f64..200.0, t2 in 0.0f64..200.0) {
        let s = AlphaSchedule::reference();
        let (a1, a2) = (adaptive_alpha(t1, &s), adaptive_alpha(t2, &s));
        prop_assert!((s.alpha_min..=s.alpha_max).contains(&a1));
        prop_assert!(t1 > t2 || a1 <= a2);
    }
}

#[test]
fn boundary_check_uses_the_same_quantile_as_the_solver() {
    let mut rng = rng_for(12, 0, 0);
    let inst = Instance::draw(&mut rng, 3, 5);
    let inputs = inst.inputs();
    let r2 = stats::chi2_quantile(1.0 - inst.alpha, 3).unwrap();
    assert_eq!(inputs.radius2().unwrap(), r2);
}
