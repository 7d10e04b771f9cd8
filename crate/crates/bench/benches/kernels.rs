use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use pomon::detector::{Detector, StepTerm, WindowConfig};
use pomon::harness::paper_p10_model;
use pomon::rng::rng_for;
use pomon::sampler::{self, UcrInputs};
use pomon::ssm::{filter_init, filter_step, ModelParams, ObservationMask, StreamSimulator};
use pomon::ScanResult;

/// A detector warmed up on 200 in-control steps with random pairs observed.
fn warmed(params: &ModelParams) -> (Detector, DMatrix<f64>, WindowConfig) {
    let window = WindowConfig::new(50, 5, f64::INFINITY).unwrap();
    let mut det = Detector::new(params.q(), &window);
    let mut sim = StreamSimulator::from_seed(params, 7).unwrap();
    let mut rng = rng_for(7, 1, 0);
    let mut state = filter_init(params).unwrap();
    for _ in 0..200 {
        let mask = sampler::select_random(params.p(), 2, &mut rng).unwrap();
        let (_, y) = sim.step(None);
        let (next, out) = filter_step(&state, params, &mask, &mask.pick(&y)).unwrap();
        det.push_step(&StepTerm::from_step(&out, params));
        state = next;
    }
    (det, state.p_pred, window)
}

fn filter(c: &mut Criterion) {
    let params = paper_p10_model();
    let state = filter_init(&params).unwrap();
    let mut group = c.benchmark_group("filter_step");
    for m in [1, 2, 5, 10] {
        let mask = ObservationMask::new((0..m).collect(), params.p()).unwrap();
        let y = nalgebra::DVector::from_element(m, 0.1);
        group.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| {
            b.iter(|| filter_step(&state, &params, &mask, &y).unwrap());
        });
    }
    group.finish();
}

fn scan(c: &mut Criterion) {
    let params = paper_p10_model();
    let (det, _, window) = warmed(&params);
    c.bench_function("scan_window_50", |b| b.iter(|| det.scan(&window)));
}

fn selection(c: &mut Criterion) {
    let params = paper_p10_model();
    let (det, p_pred, window) = warmed(&params);
    let res: ScanResult = det.scan(&window);
    let k = res.tau_hat.unwrap();
    let g = det.next_g(k).unwrap();
    let inputs = UcrInputs {
        f_hat: res.f_hat.as_ref().unwrap(),
        sigma_f: res.sigma_f.as_ref().unwrap(),
        g_next: &g,
        p_pred: &p_pred,
        params: &params,
        alpha: 0.5,
    };
    let mut group = c.benchmark_group("select");
    for m in [1, 2, 3] {
        group.bench_with_input(BenchmarkId::new("greedy", m), &m, |b, &m| {
            b.iter(|| sampler::select_greedy(&inputs, m).unwrap());
        });
        group.bench_with_input(BenchmarkId::new("exhaustive", m), &m, |b, &m| {
            b.iter(|| sampler::select_exhaustive(&inputs, m).unwrap());
        });
    }
    group.finish();

    let mask = ObservationMask::new(vec![0, 4], params.p()).unwrap();
    let omega = sampler::omega(&mask, &g, &p_pred, &params).unwrap();
    c.bench_function("solve_ellipsoid_max_q7", |b| {
        b.iter(|| sampler::solve_ellipsoid_max(&inputs, &omega).unwrap());
    });
}

criterion_group!(benches, filter, scan, selection);
criterion_main!(benches);
