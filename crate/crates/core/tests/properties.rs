use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use fourier_sdr::driver::{run_with_inputs, RunConfig, RunInputs};
use fourier_sdr::experiments::{ackley_indicator_target, ackley_subspace};
use fourier_sdr::model::{Activation, RidgeModel};
use fourier_sdr::objective::{
    data_fit, model_distance, objective_parts, penalty_anchor, penalty_term, ObjectiveContext, TargetFunction,
};
use fourier_sdr::optimizer::OptimizerConfig;
use fourier_sdr::sampling::{sample_cutoff, sample_gaussian};
use fourier_sdr::spectral::{
    estimate_moment, rank_penalty, subspace_accuracy, sym_eigen, top_k_projector, MomentMatrix, Projector,
};

fn gamma_of(code: u8) -> f64 {
    [f64::INFINITY, 8.0, 2.0, 0.7][code as usize % 4]
}

fn random_psd(n: usize, rank: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = DMatrix::from_fn(n, rank, |_, _| rng.sample::<f64, _>(StandardNormal));
    &b * b.transpose()
}

fn random_projector(n: usize, k: usize, seed: u64) -> Projector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    Projector::from_orthonormal_columns(&a.qr().q().columns(0, k).into_owned())
}

fn context(n: usize, gamma: f64, lambda: f64, seed: u64) -> ObjectiveContext {
    let g = sample_gaussian(n, 80, seed).unwrap();
    let c = sample_cutoff(n, 80, gamma, 1.7, seed).unwrap();
    let prev = RidgeModel::random(n, 5, Activation::Tanh, gamma, 1.7, seed ^ 0xabc).unwrap();
    let anchors = penalty_anchor(&prev, &c, &random_projector(n, 1, seed)).unwrap();
    let target = TargetFunction::new(n, |x| (x[0] - x[1]).cos() + 0.5 * x[0]);
    ObjectiveContext::new(&target, g, c, lambda, anchors).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn objective_parts_are_nonnegative(seed in 0u64..10_000, n in 2usize..6, code in 0u8..4, lambda in 0.0f64..5.0) {
        let gamma = gamma_of(code);
        let ctx = context(n, gamma, lambda, seed);
        let model = RidgeModel::random(n, 6, Activation::Tanh, gamma, 1.7, seed + 1).unwrap();
        let v = objective_parts(&model, &ctx).unwrap();
        prop_assert!(v.data_fit >= 0.0 && v.penalty >= 0.0 && v.total >= 0.0);
        let target = TargetFunction::new(n, |x| x[0]);
        prop_assert!(data_fit(&model, &target, &ctx.gauss_batch).unwrap() >= 0.0);
        prop_assert!(penalty_term(&model, &ctx.cutoff_batch, &ctx.anchors).unwrap() >= 0.0);
    }

    #[test]
    fn objective_difference_bounded_by_model_distance(seed in 0u64..10_000, code in 0u8..4, lambda in 0.0f64..5.0) {
        let gamma = gamma_of(code);
        let ctx = context(3, gamma, lambda, seed);
        let m1 = RidgeModel::random(3, 6, Activation::Tanh, gamma, 1.7, seed + 1).unwrap();
        let m2 = RidgeModel::random(3, 6, Activation::Logistic, gamma, 1.7, seed + 2).unwrap();
        let p1 = objective_parts(&m1, &ctx).unwrap().total;
        let p2 = objective_parts(&m2, &ctx).unwrap().total;
        let delta = model_distance(&m1, &m2, &ctx).unwrap();
        let bound = delta * (2.0 * p2.sqrt() + delta);
        prop_assert!((p1 - p2).abs() <= bound * (1.0 + 1e-12) + 1e-14);
    }

    #[test]
    fn projector_is_symmetric_idempotent_with_trace_k(seed in 0u64..10_000, n in 2usize..9, k_frac in 0.0f64..1.0) {
        let k = 1 + ((n - 1) as f64 * k_frac) as usize;
        let m = MomentMatrix::from_matrix(random_psd(n, n, seed)).unwrap();
        let p = top_k_projector(&m, k).unwrap();
        let pm = p.matrix();
        prop_assert!((pm * pm - pm).norm() < 1e-8);
        prop_assert!((pm - pm.transpose()).norm() < 1e-8);
        prop_assert!((pm.trace() - k as f64).abs() < 1e-8);
    }

    #[test]
    fn rank_penalty_decreases_to_zero(seed in 0u64..10_000, n in 2usize..9, rank_frac in 0.0f64..1.0) {
        let rank = 1 + ((n - 1) as f64 * rank_frac) as usize;
        let m = MomentMatrix::from_matrix(random_psd(n, rank, seed)).unwrap();
        let values: Vec<f64> = (1..=n).map(|k| rank_penalty(&m, k).unwrap()).collect();
        prop_assert!(values.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        prop_assert!(values[n - 1].abs() < 1e-12);
        prop_assert!(values[rank - 1].abs() < 1e-9 * m.trace());
    }

    #[test]
    fn moment_matrix_is_psd(seed in 0u64..10_000, n in 2usize..7, code in 0u8..4) {
        let gamma = gamma_of(code);
        let model = RidgeModel::random(n, 7, Activation::Tanh, gamma, 2.0, seed).unwrap();
        let batch = sample_cutoff(n, 200, gamma, 2.0, seed).unwrap();
        let m = estimate_moment(&model, &batch).unwrap();
        let eig = sym_eigen(m.matrix()).unwrap();
        prop_assert!(*eig.values.last().unwrap() >= -1e-10 * m.trace().max(f64::MIN_POSITIVE));
    }

    #[test]
    fn accuracy_within_triangle_bound(seed in 0u64..10_000, n in 3usize..9, k_frac in 0.0f64..1.0) {
        let k = 1 + ((n - 1) as f64 * k_frac) as usize;
        let p = random_projector(n, k, seed);
        let q = random_projector(n, k, seed + 7);
        let acc = subspace_accuracy(&p, &q).unwrap();
        let kf = k as f64;
        prop_assert!(acc >= 0.0 && acc <= (2.0 * kf).sqrt() + kf.sqrt());
        prop_assert!(subspace_accuracy(&p, &p).unwrap() < 1e-8);
    }

    #[test]
    fn zero_rank_moment_falls_back(n in 2usize..8, k_frac in 0.0f64..1.0) {
        let k = 1 + ((n - 1) as f64 * k_frac) as usize;
        let p = top_k_projector(&MomentMatrix::from_matrix(DMatrix::zeros(n, n)).unwrap(), k).unwrap();
        prop_assert!(p.is_fallback());
        let axes: Vec<usize> = (0..k).collect();
        let expect = Projector::coordinate(n, &axes).unwrap();
        prop_assert_eq!(p.matrix(), expect.matrix());
    }
}

/// Q e₁ = e₃, Q e₃ = −e₁: a quarter turn in the (x₁, x₃) plane.
fn quarter_turn(n: usize) -> DMatrix<f64> {
    let mut q = DMatrix::identity(n, n);
    q[(0, 0)] = 0.0;
    q[(2, 2)] = 0.0;
    q[(2, 0)] = 1.0;
    q[(0, 2)] = -1.0;
    q
}

fn row_major(q: &DMatrix<f64>) -> Vec<f64> {
    (0..q.nrows()).flat_map(|i| q.row(i).iter().copied().collect::<Vec<_>>()).collect()
}

fn apply(q: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (q * nalgebra::DVector::from_column_slice(v)).iter().copied().collect()
}

/// Rotating the target, both batches and the initial directions together
/// rotates the recovered projector. Adam scales each parameter coordinate
/// separately, so this holds for signed permutations such as a quarter turn.
#[test]
fn driver_is_equivariant_under_a_plane_quarter_turn() {
    let n = 4;
    let cfg = RunConfig {
        iterations: 3,
        units: 6,
        gauss_samples: 150,
        cutoff_samples: 150,
        lambda: 0.3,
        optimizer: OptimizerConfig {
            step_count: 30,
            learning_rate: 0.02,
            ..Default::default()
        },
        ..RunConfig::desk(n, 2)
    };
    let base = |x: &[f64]| (1.5 * x[0]).sin() + x[1] * x[2] - 0.2 * x[3];
    let target = TargetFunction::new(n, base);
    let q = quarter_turn(n);
    let qt = q.transpose();
    let rotated_target = TargetFunction::new(n, move |x| base(&apply(&qt, x)));

    let inputs = RunInputs::sample(&cfg).unwrap();
    let init = &inputs.init;
    let dirs: Vec<Vec<f64>> = (0..init.units()).map(|i| apply(&q, init.direction(i))).collect();
    let rotated = RunInputs {
        gauss_batch: inputs.gauss_batch.mapped(&row_major(&q)).unwrap(),
        cutoff_batch: inputs.cutoff_batch.mapped(&row_major(&q)).unwrap(),
        init: RidgeModel::from_parts(&dirs, init.offsets(), init.coeffs(), init.activation(), init.gamma(), init.radius())
            .unwrap(),
    };

    let a = run_with_inputs(&cfg, &target, None, inputs).unwrap();
    let b = run_with_inputs(&cfg, &rotated_target, None, rotated).unwrap();
    let expect = &q * a.projector.matrix() * q.transpose();
    assert!((b.projector.matrix() - expect).norm() < 1e-8);
    for (ra, rb) in a.trace.iter().zip(&b.trace) {
        assert!((ra.total - rb.total).abs() < 1e-8 * ra.total.max(1.0));
    }
}

/// Sanity check: without the penalty, a fit of a target depending only on
/// (x₁, x₂) already puts most gradient energy in that plane.
#[test]
fn unpenalized_fit_concentrates_on_the_effective_plane() {
    let n = 4;
    let cfg = RunConfig {
        lambda: 0.0,
        iterations: 10,
        ..RunConfig::desk(n, 2)
    };
    let target = ackley_indicator_target(n, 0.0).unwrap();
    let p_true = ackley_subspace(n).unwrap();
    let res = fourier_sdr::run_alternating(&cfg, &target, Some(&p_true)).unwrap();
    let last = res.trace.last().unwrap();
    let trace: f64 = last.eigenvalues.iter().sum();
    let top2 = last.eigenvalues[0] + last.eigenvalues[1];
    assert!(top2 >= 0.9 * trace, "{:?}", last.eigenvalues);
}
