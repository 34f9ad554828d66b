//! The outer alternating loop.
//!
//! ```text
//! P₀ ← 0, G₀ ← 0
//! sample x₁…x_K (Gaussian) and z₁…z_L (cutoff density) once
//! for t = 1…N:
//!     G_t ← argmin Φ¹(G) + λ Φ²(G; G_{t−1}, P_{t−1})
//!     M̂_t ← moment matrix of G_t on z₁…z_L
//!     P_t ← projector onto the top-k eigenvectors of M̂_t
//! ```

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdrError};
use crate::model::{Activation, RidgeModel};
use crate::objective::{objective_parts, penalty_anchor, Anchors, ObjectiveContext, TargetFunction};
use crate::optimizer::{minimize, OptimizerConfig};
use crate::sampling::{quantile_radius, sample_cutoff, sample_gaussian, SampleBatch};
use crate::spectral::{estimate_moment, projector_from_eigen, spectral_gap, subspace_accuracy, sym_eigen, Projector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusSpec {
    Fixed(f64),
    /// R = Q(p, n): P[|x| > R] = p under the Gaussian input density.
    Quantile(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub n: usize,
    pub k: usize,
    pub lambda: f64,
    /// Cutoff steepness; `f64::INFINITY` for the hard ball cutoff.
    #[serde(with = "inf_f64")]
    pub gamma: f64,
    pub radius: RadiusSpec,
    pub iterations: usize,
    pub units: usize,
    pub gauss_samples: usize,
    pub cutoff_samples: usize,
    pub seed: u64,
    pub activation: Activation,
    pub optimizer: OptimizerConfig,
}

impl RunConfig {
    /// N=200, K=1000, L=10000, M=200, γ=∞, R=Q(0.01, n).
    pub fn paper(n: usize, k: usize) -> Self {
        Self {
            n,
            k,
            lambda: 0.1,
            gamma: f64::INFINITY,
            radius: RadiusSpec::Quantile(0.01),
            iterations: 200,
            units: 200,
            gauss_samples: 1000,
            cutoff_samples: 10_000,
            seed: 0,
            activation: Activation::Tanh,
            optimizer: OptimizerConfig::default(),
        }
    }

    /// Scaled-down study: N=50, K=500, L=2000, M=64.
    pub fn desk(n: usize, k: usize) -> Self {
        Self {
            iterations: 50,
            units: 64,
            gauss_samples: 500,
            cutoff_samples: 2000,
            ..Self::paper(n, k)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.k && self.k < self.n) {
            return Err(SdrError::invalid(format!("need 1 ≤ k < n, got k={} n={}", self.k, self.n)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(SdrError::invalid(format!("lambda must be ≥ 0, got {}", self.lambda)));
        }
        if !(self.gamma > 0.0) {
            return Err(SdrError::invalid(format!("gamma must be positive or inf, got {}", self.gamma)));
        }
        if self.units == 0 || self.gauss_samples == 0 || self.cutoff_samples == 0 {
            return Err(SdrError::invalid("M, K and L must all be ≥ 1"));
        }
        self.optimizer.validate()?;
        self.resolved_radius().map(|_| ())
    }

    pub fn resolved_radius(&self) -> Result<f64> {
        match self.radius {
            RadiusSpec::Fixed(r) if r > 0.0 && r.is_finite() => Ok(r),
            RadiusSpec::Fixed(r) => Err(SdrError::invalid(format!("radius must be positive, got {r}"))),
            RadiusSpec::Quantile(p) => quantile_radius(p, self.n),
        }
    }
}

/// Serializes ±∞ as the strings "inf"/"-inf" since JSON has no infinity.
mod inf_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub phi1: f64,
    pub phi2: f64,
    pub total: f64,
    /// Φ at the inner starting point under this iteration's anchors.
    pub start_total: f64,
    /// Eigenvalues of M̂_t, descending.
    pub eigenvalues: Vec<f64>,
    /// λ_k − λ_{k+1}; near zero means the recovered subspace is ill-defined.
    pub gap: f64,
    pub acc: Option<f64>,
    /// The moment matrix was numerically zero and P_t fell back to coordinate axes.
    pub fallback: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhaseTimings {
    pub sampling: Duration,
    pub optimize: Duration,
    pub spectral: Duration,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub config: RunConfig,
    pub radius: f64,
    pub projector: Projector,
    pub model: RidgeModel,
    pub trace: Vec<IterationRecord>,
    /// Wall-clock per phase. Kept out of the serialized result so result files
    /// stay byte-identical across repeated runs.
    pub timings: PhaseTimings,
}

/// Pre-built inputs for a run: both sample batches and the model the first
/// inner minimization starts from.
#[derive(Clone, Debug)]
pub struct RunInputs {
    pub gauss_batch: SampleBatch,
    pub cutoff_batch: SampleBatch,
    pub init: RidgeModel,
}

impl RunInputs {
    pub fn sample(cfg: &RunConfig) -> Result<Self> {
        let radius = cfg.resolved_radius()?;
        Ok(Self {
            gauss_batch: sample_gaussian(cfg.n, cfg.gauss_samples, cfg.seed)?,
            cutoff_batch: sample_cutoff(cfg.n, cfg.cutoff_samples, cfg.gamma, radius, cfg.seed)?,
            init: RidgeModel::random(cfg.n, cfg.units, cfg.activation, cfg.gamma, radius, cfg.seed)?,
        })
    }
}

pub fn run_alternating(cfg: &RunConfig, target: &TargetFunction, p_true: Option<&Projector>) -> Result<RunResult> {
    cfg.validate()?;
    let clock = Instant::now();
    let inputs = RunInputs::sample(cfg)?;
    let sampling = clock.elapsed();
    let mut result = run_with_inputs(cfg, target, p_true, inputs)?;
    result.timings.sampling = sampling;
    Ok(result)
}

/// The alternating loop on caller-supplied batches and initialization.
pub fn run_with_inputs(
    cfg: &RunConfig,
    target: &TargetFunction,
    p_true: Option<&Projector>,
    inputs: RunInputs,
) -> Result<RunResult> {
    cfg.validate()?;
    let n = cfg.n;
    if target.n() != n {
        return Err(SdrError::DimensionMismatch {
            expected: n,
            got: target.n(),
        });
    }
    if let Some(p) = p_true {
        if p.n() != n {
            return Err(SdrError::DimensionMismatch { expected: n, got: p.n() });
        }
    }
    let radius = cfg.resolved_radius()?;
    let RunInputs {
        gauss_batch,
        cutoff_batch,
        init,
    } = inputs;

    let mut timings = PhaseTimings::default();
    let mut projector = Projector::zeros(n);
    let mut model = RidgeModel::zeros(n, cfg.units, cfg.activation, cfg.gamma, radius)?;
    let mut ctx = ObjectiveContext::new(
        target,
        gauss_batch,
        cutoff_batch,
        cfg.lambda,
        Anchors::zeros(n, cfg.cutoff_samples),
    )?;
    let mut trace = Vec::with_capacity(cfg.iterations);

    for t in 1..=cfg.iterations {
        let wrap = |e: SdrError| SdrError::Iteration {
            iteration: t,
            source: Box::new(e),
        };
        let clock = Instant::now();
        let anchors = penalty_anchor(&model, &ctx.cutoff_batch, &projector).map_err(wrap)?;
        ctx = ctx.with_anchors(anchors).map_err(wrap)?;
        let start = if t == 1 || !cfg.optimizer.warm_start {
            &init
        } else {
            &model
        };
        let start_total = objective_parts(start, &ctx).map_err(wrap)?.total;
        let fitted = minimize(start, &ctx, &cfg.optimizer).map_err(wrap)?;
        timings.optimize += clock.elapsed();

        let clock = Instant::now();
        let moment = estimate_moment(&fitted.model, &ctx.cutoff_batch).map_err(wrap)?;
        let eig = sym_eigen(moment.matrix()).map_err(wrap)?;
        projector = projector_from_eigen(&eig, cfg.k).map_err(wrap)?;
        timings.spectral += clock.elapsed();

        let acc = p_true.map(|p| subspace_accuracy(&projector, p)).transpose()?;
        trace.push(IterationRecord {
            t,
            phi1: fitted.value.data_fit,
            phi2: fitted.value.penalty,
            total: fitted.value.total,
            start_total,
            gap: spectral_gap(&eig.values, cfg.k),
            eigenvalues: eig.values,
            acc,
            fallback: projector.is_fallback(),
        });
        model = fitted.model;
    }

    Ok(RunResult {
        config: cfg.clone(),
        radius,
        projector,
        model,
        trace,
        timings,
    })
}

#[derive(Serialize, Deserialize)]
struct ResultFile {
    config: RunConfig,
    radius: f64,
    projector: Vec<Vec<f64>>,
    final_acc: Option<f64>,
    model: String,
    trace: Vec<IterationRecord>,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl RunResult {
    pub fn final_acc(&self) -> Option<f64> {
        self.trace.last().and_then(|r| r.acc)
    }

    /// Structured result with the resolved configuration, final projector,
    /// model (in its text format) and trace. Contains no timing data.
    pub fn to_json(&self) -> Result<String> {
        let file = ResultFile {
            config: self.config.clone(),
            radius: self.radius,
            projector: matrix_rows(self.projector.matrix()),
            final_acc: self.final_acc(),
            model: self.model.to_text(),
            trace: self.trace.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    /// One row per outer iteration: `t,phi1,phi2,total,eig1..eign,gap,acc`,
    /// preceded by `#` lines carrying the resolved configuration.
    pub fn trace_csv(&self) -> Result<String> {
        let mut out = String::new();
        let cfg = serde_json::to_string(&self.config)?;
        writeln!(out, "# config {cfg}").unwrap();
        writeln!(out, "# radius {}", self.radius).unwrap();
        let eig_cols: Vec<String> = (1..=self.config.n).map(|i| format!("eig{i}")).collect();
        writeln!(out, "t,phi1,phi2,total,{},gap,acc", eig_cols.join(",")).unwrap();
        for r in &self.trace {
            let eig: Vec<String> = r.eigenvalues.iter().map(|v| format!("{v:e}")).collect();
            let acc = r.acc.map_or_else(String::new, |a| format!("{a:e}"));
            writeln!(
                out,
                "{},{:e},{:e},{:e},{},{:e},{}",
                r.t,
                r.phi1,
                r.phi2,
                r.total,
                eig.join(","),
                r.gap,
                acc
            )
            .unwrap();
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::top_k_projector;

    fn tiny(n: usize) -> RunConfig {
        RunConfig {
            iterations: 3,
            units: 6,
            gauss_samples: 120,
            cutoff_samples: 150,
            optimizer: OptimizerConfig {
                step_count: 25,
                learning_rate: 0.03,
                ..Default::default()
            },
            ..RunConfig::desk(n, 2)
        }
    }

    fn target(n: usize) -> TargetFunction {
        TargetFunction::new(n, |x| (2.0 * x[0]).sin() + x[1] * x[1])
    }

    #[test]
    fn config_validation() {
        assert!(tiny(4).validate().is_ok());
        assert!(RunConfig { k: 4, ..tiny(4) }.validate().is_err());
        assert!(RunConfig { k: 0, ..tiny(4) }.validate().is_err());
        assert!(RunConfig { lambda: -1.0, ..tiny(4) }.validate().is_err());
        assert!(RunConfig { units: 0, ..tiny(4) }.validate().is_err());
        assert!(RunConfig { radius: RadiusSpec::Quantile(1.5), ..tiny(4) }.validate().is_err());
        assert!(RunConfig { radius: RadiusSpec::Fixed(0.0), ..tiny(4) }.validate().is_err());
    }

    #[test]
    fn zero_iterations_return_initial_state() {
        let cfg = RunConfig { iterations: 0, ..tiny(3) };
        let res = run_alternating(&cfg, &target(3), None).unwrap();
        assert_eq!(res.projector, Projector::zeros(3));
        assert!(res.model.params().iter().all(|&v| v == 0.0));
        assert!(res.trace.is_empty());
    }

    #[test]
    fn trace_length_and_projector_invariants() {
        let p_true = Projector::coordinate(4, &[0, 1]).unwrap();
        let res = run_alternating(&tiny(4), &target(4), Some(&p_true)).unwrap();
        assert_eq!(res.trace.len(), 3);
        let p = res.projector.matrix();
        assert!((p * p - p).norm() < 1e-8);
        assert!((p.trace() - 2.0).abs() < 1e-8);
        assert!(res.trace.iter().all(|r| r.acc.is_some()));
        assert_eq!(res.final_acc(), res.trace[2].acc);
    }

    #[test]
    fn warm_started_iterations_never_increase_the_objective() {
        let cfg = RunConfig { lambda: 0.5, ..tiny(3) };
        let res = run_alternating(&cfg, &target(3), None).unwrap();
        for r in &res.trace[1..] {
            assert!(r.total <= r.start_total + 1e-12, "{r:?}");
        }
    }

    #[test]
    fn unpenalized_first_iteration_is_plain_gradient_outer_product() {
        let cfg = RunConfig { iterations: 1, lambda: 0.0, ..tiny(4) };
        let t = target(4);
        let res = run_alternating(&cfg, &t, None).unwrap();

        let inputs = RunInputs::sample(&cfg).unwrap();
        let ctx = ObjectiveContext::new(&t, inputs.gauss_batch, inputs.cutoff_batch, 0.0, Anchors::zeros(4, cfg.cutoff_samples))
            .unwrap();
        let fit = minimize(&inputs.init, &ctx, &cfg.optimizer).unwrap();
        let m = estimate_moment(&fit.model, &ctx.cutoff_batch).unwrap();
        let p = top_k_projector(&m, 2).unwrap();
        assert_eq!(res.projector, p);
        assert_eq!(res.model, fit.model);
    }

    #[test]
    fn deterministic_end_to_end() {
        let a = run_alternating(&tiny(3), &target(3), None).unwrap();
        let b = run_alternating(&tiny(3), &target(3), None).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.trace_csv().unwrap(), b.trace_csv().unwrap());
    }

    #[test]
    fn result_json_round_trips_config() {
        let res = run_alternating(&RunConfig { iterations: 1, ..tiny(3) }, &target(3), None).unwrap();
        let json = res.to_json().unwrap();
        let back: ResultFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back.config, res.config);
        assert!(back.config.gamma.is_infinite());
        assert_eq!(RidgeModel::from_text(&back.model).unwrap(), res.model);
    }

    #[test]
    fn trace_csv_layout() {
        let res = run_alternating(&tiny(3), &target(3), None).unwrap();
        let csv = res.trace_csv().unwrap();
        let lines: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(lines[0], "t,phi1,phi2,total,eig1,eig2,eig3,gap,acc");
        assert_eq!(lines.len(), 4);
        assert!(csv.contains("\"seed\":0"));
    }

    #[test]
    fn target_dimension_checked() {
        assert!(matches!(
            run_alternating(&tiny(3), &target(4), None),
            Err(SdrError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn failures_carry_iteration_index() {
        let bad = TargetFunction::new(3, |x| if x[0] > 0.0 { f64::NAN } else { 0.0 });
        let err = run_alternating(&tiny(3), &bad, None).unwrap_err();
        assert!(matches!(err, SdrError::Iteration { iteration: 1, .. }));
        assert!(err.is_numerical());
    }
}
