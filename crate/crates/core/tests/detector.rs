mod common;

use nalgebra::{DMatrix, DVector};
use pomon::detector::glrt_from_accumulators;
use pomon::harness::paper_p10_model;
use pomon::rng::rng_for;
use pomon::sampler::select_random;
use pomon::ssm::StreamSimulator;
use pomon::stats;
use pomon::{filter_init, filter_step, Detector, ModelParams, ObservationMask, StepTerm, WindowConfig};
use proptest::prelude::*;

/// Run `steps` full-observation steps, adding `shift` to the state from step
/// `change_after + 1` on, and return the detector.
fn run_full(params: &ModelParams, window: &WindowConfig, steps: usize, change_after: usize, shift: &DVector<f64>, seed: u64) -> Detector {
    let mut sim = StreamSimulator::from_seed(params, seed).unwrap();
    let mut det = Detector::new(params.q(), window);
    let mut state = filter_init(params).unwrap();
    let mask = ObservationMask::full(params.p());
    for n in 1..=steps {
        let (_, y) = sim.step((n > change_after).then_some(shift));
        let (next, out) = filter_step(&state, params, &mask, &y).unwrap();
        det.push_step(&StepTerm::from_step(&out, params));
        state = next;
    }
    det
}

#[test]
fn null_statistic_has_mean_q() {
    let params = paper_p10_model();
    let window = WindowConfig::new(12, 1, f64::INFINITY).unwrap();
    let zero = DVector::zeros(params.q());
    let stats: Vec<f64> = (0..3000)
        .map(|r| run_full(&params, &window, 20, usize::MAX, &zero, 9000 + r).glrt(10).unwrap())
        .collect();
    let mean = stats::mean(&stats);
    let se = stats::std_dev(&stats) / (stats.len() as f64).sqrt();
    assert!((mean - 7.0).abs() < 3.0 * se, "null mean {mean} (se {se}), expected q = 7");
}

#[test]
fn shift_estimate_is_unbiased_at_the_true_change() {
    let params = paper_p10_model();
    let window = WindowConfig::new(30, 1, f64::INFINITY).unwrap();
    let f = DVector::from_vec(vec![0.4, 0.0, -0.2, 0.0, 0.0, 0.1, 0.0]);
    let reps = 1000;
    let mut est = DMatrix::zeros(reps, params.q());
    for r in 0..reps {
        let det = run_full(&params, &window, 25, 15, &f, 20_000 + r as u64);
        let e = det.estimate_shift(15).unwrap();
        est.row_mut(r).copy_from(&e.f_hat.transpose());
    }
    for j in 0..params.q() {
        let col: Vec<f64> = est.column(j).iter().copied().collect();
        let mean = stats::mean(&col);
        let tol = 4.0 * stats::std_dev(&col) / (reps as f64).sqrt();
        assert!((mean - f[j]).abs() < tol, "component {j}: mean {mean} vs {} (tol {tol})", f[j]);
    }
}

#[test]
fn scan_localizes_the_change() {
    let params = paper_p10_model();
    let window = WindowConfig::new(50, 5, f64::INFINITY).unwrap();
    let mut f = DVector::zeros(params.q());
    f[0] = 0.4;
    let true_k = 60;
    let taus: Vec<f64> = (0..200)
        .map(|r| {
            let det = run_full(&params, &window, 90, true_k, &f, 40_000 + r);
            det.scan(&window).tau_hat.unwrap() as f64
        })
        .collect();
    let median = stats::median(&taus);
    assert!((median - true_k as f64).abs() <= 10.0, "median change estimate {median}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn scan_is_nonnegative_and_consistent(seed in any::<u64>(), m in 1usize..=4, steps in 1usize..60, h in 0.0f64..40.0) {
        let params = paper_p10_model();
        let window = WindowConfig::new(20, 3, h).unwrap();
        let mut sim = StreamSimulator::from_seed(&params, seed).unwrap();
        let mut pick = rng_for(seed, 1, 0);
        let mut det = Detector::new(params.q(), &window);
        let mut state = filter_init(&params).unwrap();
        for _ in 0..steps {
            let mask = select_random(params.p(), m, &mut pick).unwrap();
            let (_, y) = sim.step(None);
            let (next, out) = filter_step(&state, &params, &mask, &mask.pick(&y)).unwrap();
            det.push_step(&StepTerm::from_step(&out, &params));
            state = next;
        }
        let res = det.scan(&window);
        prop_assert!(res.t_stat >= 0.0);
        prop_assert_eq!(res.alarm, res.t_stat > h);
        let n = det.n();
        let best = det
            .candidates()
            .filter(|c| window.admits(n, c.k))
            .filter_map(|c| glrt_from_accumulators(&c.s_vec, &c.m_mat))
            .fold(0.0, f64::max);
        prop_assert_eq!(res.t_stat, best);
        if let (Some(k), Some(f_hat)) = (res.tau_hat, res.f_hat.as_ref()) {
            prop_assert!(window.admits(n, k));
            let c = det.candidate(k).unwrap();
            let resid = (&c.m_mat * f_hat - &c.s_vec).amax();
            prop_assert!(resid < 1e-8 * c.s_vec.amax().max(1.0));
        }
    }
}
