//! Monte-Carlo objective of one outer iteration.
//!
//! ```text
//! Φ(G) = Φ¹(G) + λ Φ²(G)
//! Φ¹(G) = (1/K) Σᵢ (f(xᵢ) − G(xᵢ))²                 xᵢ ~ π^{-n/2} e^{-|x|²}
//! Φ²(G) = (1/L) Σᵢ |g_G(zᵢ) − P g_{G'}(zᵢ)|²         zᵢ ~ σ(γ(R − |x|))²
//! ```
//!
//! where `g_G` is the effective gradient field of a model (see
//! [`RidgeModel::effective_grad`]), `G'` the previous iterate and `P` the
//! previous projector. The anchors `P g_{G'}(zᵢ)` are computed once per outer
//! iteration and frozen.
//!
//! Sums over samples are split into fixed chunks of [`CHUNK`] points that may
//! be evaluated in parallel; the chunk partials are then added in index order,
//! so every value is bit-identical regardless of the thread count.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Result, SdrError};
use crate::model::{dot, RidgeModel};
use crate::sampling::{Density, SampleBatch};
use crate::spectral::{Projector, CHUNK};

/// Black-box regression function f: ℝⁿ → ℝ.
#[derive(Clone)]
pub struct TargetFunction {
    n: usize,
    f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl TargetFunction {
    pub fn new(n: usize, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { n, f: Arc::new(f) }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    /// Wraps a model as a target; Φ¹ of that model against it is exactly zero.
    pub fn from_model(model: &RidgeModel) -> Self {
        let m = model.clone();
        Self::new(model.n(), move |x| m.eval_unchecked(x))
    }
}

impl fmt::Debug for TargetFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetFunction").field("n", &self.n).finish_non_exhaustive()
    }
}

/// Frozen penalty anchors: row i is P·g_{G'}(zᵢ).
#[derive(Clone, Debug, PartialEq)]
pub struct Anchors {
    n: usize,
    rows: Vec<f64>,
}

impl Anchors {
    pub fn zeros(n: usize, count: usize) -> Self {
        Self {
            n,
            rows: vec![0.0; n * count],
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.n..(i + 1) * self.n]
    }
}

/// Objective value split into its two parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveValue {
    pub data_fit: f64,
    pub penalty: f64,
    pub total: f64,
}

/// Everything Φ needs for one outer iteration.
#[derive(Clone, Debug)]
pub struct ObjectiveContext {
    pub gauss_batch: SampleBatch,
    pub cutoff_batch: SampleBatch,
    pub lambda: f64,
    pub anchors: Anchors,
    /// f evaluated at the Gaussian points, in batch order.
    target_values: Vec<f64>,
}

impl ObjectiveContext {
    pub fn new(
        target: &TargetFunction,
        gauss_batch: SampleBatch,
        cutoff_batch: SampleBatch,
        lambda: f64,
        anchors: Anchors,
    ) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(SdrError::invalid(format!("lambda must be ≥ 0, got {lambda}")));
        }
        if anchors.len() != cutoff_batch.len() || anchors.n != cutoff_batch.n() {
            return Err(SdrError::DimensionMismatch {
                expected: cutoff_batch.len(),
                got: anchors.len(),
            });
        }
        check_dim(target.n(), gauss_batch.n())?;
        check_dim(target.n(), cutoff_batch.n())?;
        let target_values = gauss_batch.iter().map(|x| target.eval(x)).collect();
        Ok(Self {
            gauss_batch,
            cutoff_batch,
            lambda,
            anchors,
            target_values,
        })
    }

    /// Replace the anchors, keeping batches, λ and cached target values.
    pub fn with_anchors(&self, anchors: Anchors) -> Result<Self> {
        if anchors.len() != self.cutoff_batch.len() {
            return Err(SdrError::DimensionMismatch {
                expected: self.cutoff_batch.len(),
                got: anchors.len(),
            });
        }
        Ok(Self {
            anchors,
            ..self.clone()
        })
    }

    pub fn target_values(&self) -> &[f64] {
        &self.target_values
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(SdrError::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Sum per-chunk partial vectors in chunk order.
fn ordered_sum(partials: Vec<Vec<f64>>, len: usize) -> Vec<f64> {
    let mut total = vec![0.0; len];
    for p in partials {
        total.iter_mut().zip(&p).for_each(|(t, v)| *t += v);
    }
    total
}

fn ordered_scalar_sum(partials: Vec<f64>) -> f64 {
    partials.into_iter().fold(0.0, |acc, v| acc + v)
}

/// Φ¹ = (1/K) Σ (f(xᵢ) − G(xᵢ))².
pub fn data_fit(model: &RidgeModel, target: &TargetFunction, gauss_batch: &SampleBatch) -> Result<f64> {
    check_dim(model.n(), target.n())?;
    check_dim(model.n(), gauss_batch.n())?;
    if gauss_batch.density() != Density::Gaussian {
        return Err(SdrError::invalid("data fit needs a Gaussian batch"));
    }
    let values: Vec<f64> = gauss_batch.iter().map(|x| target.eval(x)).collect();
    Ok(data_fit_cached(model, gauss_batch, &values))
}

fn data_fit_cached(model: &RidgeModel, batch: &SampleBatch, values: &[f64]) -> f64 {
    let n = model.n();
    let partials: Vec<f64> = batch
        .as_flat()
        .par_chunks(CHUNK * n)
        .zip(values.par_chunks(CHUNK))
        .map(|(pts, vals)| {
            pts.chunks_exact(n)
                .zip(vals)
                .map(|(x, f)| {
                    let r = f - model.eval_unchecked(x);
                    r * r
                })
                .sum::<f64>()
        })
        .collect();
    ordered_scalar_sum(partials) / batch.len() as f64
}

/// Anchor rows P·g_{G'}(zᵢ) for the previous model `G'` and projector `P`.
pub fn penalty_anchor(model: &RidgeModel, cutoff_batch: &SampleBatch, projector: &Projector) -> Result<Anchors> {
    let n = model.n();
    check_dim(n, cutoff_batch.n())?;
    check_dim(n, projector.n())?;
    let rows: Vec<Vec<f64>> = cutoff_batch
        .as_flat()
        .par_chunks(CHUNK * n)
        .map(|pts| {
            let mut out = Vec::with_capacity(pts.len());
            let mut g = vec![0.0; n];
            let mut pg = vec![0.0; n];
            for z in pts.chunks_exact(n) {
                model.effective_grad_into(z, &mut g);
                projector.apply_into(&g, &mut pg);
                out.extend_from_slice(&pg);
            }
            out
        })
        .collect();
    Ok(Anchors {
        n,
        rows: rows.concat(),
    })
}

/// Φ² = (1/L) Σ |g_G(zᵢ) − anchorᵢ|².
pub fn penalty_term(model: &RidgeModel, cutoff_batch: &SampleBatch, anchors: &Anchors) -> Result<f64> {
    let n = model.n();
    check_dim(n, cutoff_batch.n())?;
    if anchors.len() != cutoff_batch.len() {
        return Err(SdrError::DimensionMismatch {
            expected: cutoff_batch.len(),
            got: anchors.len(),
        });
    }
    let partials: Vec<f64> = cutoff_batch
        .as_flat()
        .par_chunks(CHUNK * n)
        .zip(anchors.rows.par_chunks(CHUNK * n))
        .map(|(pts, anc)| {
            let mut g = vec![0.0; n];
            let mut acc = 0.0;
            for (z, a) in pts.chunks_exact(n).zip(anc.chunks_exact(n)) {
                model.effective_grad_into(z, &mut g);
                acc += g.iter().zip(a).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
            }
            acc
        })
        .collect();
    Ok(ordered_scalar_sum(partials) / cutoff_batch.len() as f64)
}

pub fn objective_parts(model: &RidgeModel, ctx: &ObjectiveContext) -> Result<ObjectiveValue> {
    check_dim(model.n(), ctx.gauss_batch.n())?;
    let data_fit = data_fit_cached(model, &ctx.gauss_batch, &ctx.target_values);
    // evaluated even for λ = 0, traces report it
    let penalty = penalty_term(model, &ctx.cutoff_batch, &ctx.anchors)?;
    Ok(ObjectiveValue {
        data_fit,
        penalty,
        total: data_fit + ctx.lambda * penalty,
    })
}

/// Φ¹ + λΦ².
pub fn objective_total(model: &RidgeModel, ctx: &ObjectiveContext) -> Result<f64> {
    objective_parts(model, ctx).map(|v| v.total)
}

/// Empirical distance δ between two models, in the norm whose square Φ measures:
/// δ² = (1/K) Σ (G₁(xᵢ) − G₂(xᵢ))² + λ (1/L) Σ |g₁(zᵢ) − g₂(zᵢ)|².
pub fn model_distance(m1: &RidgeModel, m2: &RidgeModel, ctx: &ObjectiveContext) -> Result<f64> {
    check_dim(m1.n(), m2.n())?;
    check_dim(m1.n(), ctx.gauss_batch.n())?;
    let n = m1.n();
    let fit: f64 = ctx
        .gauss_batch
        .iter()
        .map(|x| (m1.eval_unchecked(x) - m2.eval_unchecked(x)).powi(2))
        .sum::<f64>()
        / ctx.gauss_batch.len() as f64;
    let mut g1 = vec![0.0; n];
    let mut g2 = vec![0.0; n];
    let mut pen = 0.0;
    for z in ctx.cutoff_batch.iter() {
        m1.effective_grad_into(z, &mut g1);
        m2.effective_grad_into(z, &mut g2);
        pen += g1.iter().zip(&g2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    pen /= ctx.cutoff_batch.len() as f64;
    Ok((fit + ctx.lambda * pen).sqrt())
}

/// Value and exact parameter gradient of Φ¹ + λΦ², in the model's flat
/// parameter layout `[directions | offsets | coefficients]`.
pub fn grad_params(model: &RidgeModel, ctx: &ObjectiveContext) -> Result<(ObjectiveValue, Vec<f64>)> {
    let n = model.n();
    check_dim(n, ctx.gauss_batch.n())?;
    check_dim(n, ctx.cutoff_batch.n())?;
    let len = model.param_count();
    let k_inv = 1.0 / ctx.gauss_batch.len() as f64;
    let l_inv = 1.0 / ctx.cutoff_batch.len() as f64;

    let fit_parts: Vec<(f64, Vec<f64>)> = ctx
        .gauss_batch
        .as_flat()
        .par_chunks(CHUNK * n)
        .zip(ctx.target_values.par_chunks(CHUNK))
        .map(|(pts, vals)| {
            let mut grad = vec![0.0; len];
            let mut value = 0.0;
            let mut scratch = UnitScratch::new(model.units());
            for (x, &f) in pts.chunks_exact(n).zip(vals) {
                value += accumulate_fit(model, x, f, 2.0 * k_inv, &mut grad, &mut scratch);
            }
            (value, grad)
        })
        .collect();

    let lambda = ctx.lambda;
    let pen_parts: Vec<(f64, Vec<f64>)> = ctx
        .cutoff_batch
        .as_flat()
        .par_chunks(CHUNK * n)
        .zip(ctx.anchors.rows.par_chunks(CHUNK * n))
        .map(|(pts, anc)| {
            let mut grad = vec![0.0; len];
            let mut value = 0.0;
            let mut scratch = UnitScratch::new(model.units());
            let mut e = vec![0.0; n];
            for (z, a) in pts.chunks_exact(n).zip(anc.chunks_exact(n)) {
                value += accumulate_penalty(model, z, a, 2.0 * l_inv * lambda, &mut grad, &mut scratch, &mut e);
            }
            (value, grad)
        })
        .collect();

    let (fit_values, fit_grads): (Vec<f64>, Vec<Vec<f64>>) = fit_parts.into_iter().unzip();
    let (pen_values, pen_grads): (Vec<f64>, Vec<Vec<f64>>) = pen_parts.into_iter().unzip();
    let data_fit = ordered_scalar_sum(fit_values) * k_inv;
    let penalty = ordered_scalar_sum(pen_values) * l_inv;
    let mut grad = ordered_sum(fit_grads, len);
    let pen_grad = ordered_sum(pen_grads, len);
    grad.iter_mut().zip(&pen_grad).for_each(|(g, p)| *g += p);
    Ok((
        ObjectiveValue {
            data_fit,
            penalty,
            total: data_fit + lambda * penalty,
        },
        grad,
    ))
}

/// Per-unit activations at one point.
struct UnitScratch {
    psi: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

impl UnitScratch {
    fn new(units: usize) -> Self {
        Self {
            psi: vec![0.0; units],
            d1: vec![0.0; units],
            d2: vec![0.0; units],
        }
    }

    fn fill(&mut self, model: &RidgeModel, x: &[f64]) {
        let act = model.activation();
        let b = model.offsets();
        for i in 0..model.units() {
            let (v, d, dd) = act.eval3(dot(model.direction(i), x) - b[i]);
            self.psi[i] = v;
            self.d1[i] = d;
            self.d2[i] = dd;
        }
    }
}

/// Adds `scale·r·σ·∂θ/∂p` (r = G − f) to `grad`; returns r².
fn accumulate_fit(
    model: &RidgeModel,
    x: &[f64],
    f: f64,
    scale: f64,
    grad: &mut [f64],
    s: &mut UnitScratch,
) -> f64 {
    let sigma = model.cutoff(x).sigma;
    if sigma == 0.0 {
        return f * f;
    }
    s.fill(model, x);
    let c = model.coeffs();
    let theta: f64 = c.iter().zip(&s.psi).map(|(c, p)| c * p).sum();
    let r = sigma * theta - f;
    let w = scale * r * sigma;
    let (n, m) = (model.n(), model.units());
    let (dirs, rest) = grad.split_at_mut(m * n);
    let (db, dc) = rest.split_at_mut(m);
    for i in 0..m {
        let cd = w * c[i] * s.d1[i];
        for (g, xj) in dirs[i * n..(i + 1) * n].iter_mut().zip(x) {
            *g += cd * xj;
        }
        db[i] -= cd;
        dc[i] += w * s.psi[i];
    }
    r * r
}

/// Adds `scale·e·∂e/∂p` with e = h·θ·z + ∇θ − anchor; returns |e|².
fn accumulate_penalty(
    model: &RidgeModel,
    z: &[f64],
    anchor: &[f64],
    scale: f64,
    grad: &mut [f64],
    s: &mut UnitScratch,
    e: &mut [f64],
) -> f64 {
    let cut = model.cutoff(z);
    if model.is_hard_cutoff() && cut.sigma == 0.0 {
        return anchor.iter().map(|v| v * v).sum();
    }
    s.fill(model, z);
    let (n, m) = (model.n(), model.units());
    let c = model.coeffs();
    let h = cut.radial;

    let mut theta = 0.0;
    e.iter_mut().zip(anchor).for_each(|(ev, a)| *ev = -a);
    for i in 0..m {
        theta += c[i] * s.psi[i];
        let w = c[i] * s.d1[i];
        for (ev, aj) in e.iter_mut().zip(model.direction(i)) {
            *ev += w * aj;
        }
    }
    if h != 0.0 {
        let ht = h * theta;
        e.iter_mut().zip(z).for_each(|(ev, zj)| *ev += ht * zj);
    }
    let value: f64 = e.iter().map(|v| v * v).sum();
    if scale == 0.0 {
        return value;
    }

    let eh = h * dot(e, z);
    let (dirs, rest) = grad.split_at_mut(m * n);
    let (db, dc) = rest.split_at_mut(m);
    for i in 0..m {
        let a = model.direction(i);
        let ea = dot(e, a);
        let ci = c[i];
        dc[i] += scale * (eh * s.psi[i] + s.d1[i] * ea);
        let zcoef = scale * ci * (eh * s.d1[i] + s.d2[i] * ea);
        db[i] -= zcoef;
        let ecoef = scale * ci * s.d1[i];
        for ((g, zj), ej) in dirs[i * n..(i + 1) * n].iter_mut().zip(z).zip(e.iter()) {
            *g += zcoef * zj + ecoef * ej;
        }
    }
    value
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Activation;
    use crate::sampling::{sample_cutoff, sample_gaussian};
    use crate::spectral::Projector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn batches(n: usize, k: usize, l: usize, gamma: f64, seed: u64) -> (SampleBatch, SampleBatch) {
        (
            sample_gaussian(n, k, seed).unwrap(),
            sample_cutoff(n, l, gamma, 1.5, seed).unwrap(),
        )
    }

    fn wavy_target(n: usize) -> TargetFunction {
        TargetFunction::new(n, |x| (2.0 * x[0]).sin() + x[1] * x[1] - 0.3 * x[0] * x[1])
    }

    #[test]
    fn perfect_fit_is_zero() {
        let (g, _) = batches(3, 100, 10, f64::INFINITY, 1);
        let m = RidgeModel::random(3, 5, Activation::Tanh, f64::INFINITY, 1.5, 2).unwrap();
        assert_eq!(data_fit(&m, &TargetFunction::from_model(&m), &g).unwrap(), 0.0);
    }

    #[test]
    fn single_point_fit() {
        let g = SampleBatch::from_points(1, vec![0.0], Density::Gaussian, 0).unwrap();
        // one unit tanh(x − b) with tanh(−b)·c = 1 at x = 0
        let b = -(0.5f64.atanh());
        let m = RidgeModel::from_parts(&[vec![1.0]], &[b], &[2.0], Activation::Tanh, f64::INFINITY, 1.0).unwrap();
        assert!((m.eval(&[0.0]).unwrap() - 1.0).abs() < 1e-15);
        let target = TargetFunction::new(1, |_| 3.0);
        assert!((data_fit(&m, &target, &g).unwrap() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn data_fit_matches_plain_loop() {
        let (g, _) = batches(4, 100, 10, f64::INFINITY, 3);
        let m = RidgeModel::random(4, 6, Activation::Tanh, 2.0, 1.5, 4).unwrap();
        let target = wavy_target(4);
        let mut expect = 0.0;
        for i in 0..g.len() {
            let x = g.point(i);
            let mut theta = 0.0;
            for u in 0..m.units() {
                let a = m.direction(u);
                let s: f64 = (0..4).map(|j| a[j] * x[j]).sum::<f64>() - m.offsets()[u];
                theta += m.coeffs()[u] * s.tanh();
            }
            let r = (x.iter().map(|v| v * v).sum::<f64>()).sqrt();
            let sigma = 1.0 / (1.0 + (-(2.0 * (1.5 - r))).exp());
            expect += (target.eval(x) - sigma * theta).powi(2);
        }
        expect /= g.len() as f64;
        let got = data_fit(&m, &target, &g).unwrap();
        assert!((got - expect).abs() <= 1e-13 * expect.max(1.0));
    }

    #[test]
    fn data_fit_rejects_wrong_batch() {
        let (_, c) = batches(2, 10, 10, f64::INFINITY, 5);
        let m = RidgeModel::zeros(2, 1, Activation::Tanh, f64::INFINITY, 1.5).unwrap();
        assert!(data_fit(&m, &wavy_target(2), &c).is_err());
        let g3 = sample_gaussian(3, 10, 0).unwrap();
        assert!(matches!(
            data_fit(&m, &wavy_target(2), &g3),
            Err(SdrError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn anchors_with_zero_and_identity_projector() {
        let (_, c) = batches(3, 10, 50, f64::INFINITY, 6);
        let m = RidgeModel::random(3, 4, Activation::Tanh, f64::INFINITY, 1.5, 7).unwrap();
        assert_eq!(penalty_anchor(&m, &c, &Projector::zeros(3)).unwrap(), Anchors::zeros(3, 50));
        let ident = penalty_anchor(&m, &c, &Projector::identity(3)).unwrap();
        for i in 0..c.len() {
            assert_eq!(ident.row(i), m.effective_grad(c.point(i)).unwrap().as_slice());
        }
    }

    #[test]
    fn anchor_of_single_unit_on_first_axis() {
        // G = c·tanh(aᵀz − b), P = e₁e₁ᵀ ⇒ anchor = (c·tanh′(aᵀz − b)·a₁, 0, 0)
        let a = vec![0.7, -0.4, 1.1];
        let (b, cc) = (0.3, -1.2);
        let m = RidgeModel::from_parts(&[a.clone()], &[b], &[cc], Activation::Tanh, f64::INFINITY, 1.5).unwrap();
        let (_, c) = batches(3, 10, 40, f64::INFINITY, 8);
        let p = Projector::coordinate(3, &[0]).unwrap();
        let anchors = penalty_anchor(&m, &c, &p).unwrap();
        for i in 0..c.len() {
            let z = c.point(i);
            let s = a[0] * z[0] + a[1] * z[1] + a[2] * z[2] - b;
            let expect = cc * (1.0 - s.tanh().powi(2)) * a[0];
            let row = anchors.row(i);
            assert!((row[0] - expect).abs() < 1e-15);
            assert_eq!(row[1], 0.0);
            assert_eq!(row[2], 0.0);
        }
    }

    #[test]
    fn penalty_self_anchor_and_zero_anchor() {
        let (_, c) = batches(3, 10, 60, 3.0, 9);
        let m = RidgeModel::random(3, 4, Activation::Tanh, 3.0, 1.5, 10).unwrap();
        let own = penalty_anchor(&m, &c, &Projector::identity(3)).unwrap();
        assert_eq!(penalty_term(&m, &c, &own).unwrap(), 0.0);
        let zero = penalty_term(&m, &c, &Anchors::zeros(3, 60)).unwrap();
        let expect: f64 = c
            .iter()
            .map(|z| m.effective_grad(z).unwrap().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            / 60.0;
        assert!((zero - expect).abs() <= 1e-14 * expect);
    }

    #[test]
    fn penalty_matches_double_loop() {
        let (_, c) = batches(4, 10, 80, 2.5, 11);
        let prev = RidgeModel::random(4, 5, Activation::Tanh, 2.5, 1.5, 12).unwrap();
        let m = RidgeModel::random(4, 5, Activation::Tanh, 2.5, 1.5, 13).unwrap();
        let p = Projector::coordinate(4, &[1, 3]).unwrap();
        let anchors = penalty_anchor(&prev, &c, &p).unwrap();
        let mut expect = 0.0;
        for i in 0..c.len() {
            let z = c.point(i);
            let g = m.grad_x(z).unwrap();
            let gp = prev.grad_x(z).unwrap();
            let sigma = m.cutoff(z).sigma;
            for j in 0..4 {
                let pj: f64 = (0..4).map(|l| p.matrix()[(j, l)] * gp[l]).sum();
                expect += (g[j] / sigma - pj / sigma).powi(2);
            }
        }
        expect /= c.len() as f64;
        let got = penalty_term(&m, &c, &anchors).unwrap();
        assert!((got - expect).abs() <= 1e-10 * expect, "{got} vs {expect}");
    }

    fn context(n: usize, units: usize, gamma: f64, lambda: f64, seed: u64) -> (RidgeModel, ObjectiveContext) {
        let (g, c) = batches(n, 60, 80, gamma, seed);
        let prev = RidgeModel::random(n, units, Activation::Tanh, gamma, 1.5, seed + 100).unwrap();
        let model = RidgeModel::random(n, units, Activation::Tanh, gamma, 1.5, seed + 200).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let axes: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.5)).collect();
        let p = Projector::coordinate(n, &axes).unwrap();
        let anchors = penalty_anchor(&prev, &c, &p).unwrap();
        let ctx = ObjectiveContext::new(&wavy_target(n), g, c, lambda, anchors).unwrap();
        (model, ctx)
    }

    #[test]
    fn total_is_sum_of_parts() {
        let (m, ctx) = context(3, 4, 3.0, 0.7, 14);
        let fit = data_fit(&m, &wavy_target(3), &ctx.gauss_batch).unwrap();
        let pen = penalty_term(&m, &ctx.cutoff_batch, &ctx.anchors).unwrap();
        assert_eq!(objective_total(&m, &ctx).unwrap(), fit + 0.7 * pen);
        let ctx0 = ObjectiveContext { lambda: 0.0, ..ctx };
        assert_eq!(objective_total(&m, &ctx0).unwrap(), fit);
    }

    #[test]
    fn self_anchored_perfect_fit_is_zero() {
        let (g, c) = batches(3, 50, 50, f64::INFINITY, 15);
        let m = RidgeModel::random(3, 4, Activation::Tanh, f64::INFINITY, 1.5, 16).unwrap();
        let anchors = penalty_anchor(&m, &c, &Projector::identity(3)).unwrap();
        let ctx = ObjectiveContext::new(&TargetFunction::from_model(&m), g, c, 2.0, anchors).unwrap();
        assert_eq!(objective_total(&m, &ctx).unwrap(), 0.0);
    }

    #[test]
    fn context_validates_inputs() {
        let (g, c) = batches(3, 10, 20, f64::INFINITY, 17);
        assert!(ObjectiveContext::new(&wavy_target(3), g.clone(), c.clone(), -1.0, Anchors::zeros(3, 20)).is_err());
        assert!(ObjectiveContext::new(&wavy_target(3), g, c, 1.0, Anchors::zeros(3, 19)).is_err());
    }

    #[test]
    fn gradient_value_agrees_with_objective() {
        let (m, ctx) = context(4, 5, 2.0, 0.3, 18);
        let (v, _) = grad_params(&m, &ctx).unwrap();
        let direct = objective_parts(&m, &ctx).unwrap();
        assert!((v.total - direct.total).abs() <= 1e-12 * direct.total);
        assert!((v.data_fit - direct.data_fit).abs() <= 1e-12 * direct.data_fit);
        assert!((v.penalty - direct.penalty).abs() <= 1e-12 * direct.penalty);
    }

    fn max_fd_error(m: &RidgeModel, ctx: &ObjectiveContext) -> f64 {
        let (_, grad) = grad_params(m, ctx).unwrap();
        let h = 1e-6;
        let scale = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        let mut worst: f64 = 0.0;
        for p in 0..m.param_count() {
            let mut up = m.params().to_vec();
            let mut dn = m.params().to_vec();
            up[p] += h;
            dn[p] -= h;
            let fu = objective_total(&m.with_params(up).unwrap(), ctx).unwrap();
            let fd = objective_total(&m.with_params(dn).unwrap(), ctx).unwrap();
            let num = (fu - fd) / (2.0 * h);
            worst = worst.max((num - grad[p]).abs() / grad[p].abs().max(1e-2 * scale));
        }
        worst
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (seed, gamma) in [(19, f64::INFINITY), (20, 2.0), (21, 0.8)] {
            let (m, ctx) = context(3, 4, gamma, 0.5, seed);
            let err = max_fd_error(&m, &ctx);
            assert!(err < 1e-4, "gamma {gamma}: {err}");
        }
    }

    #[test]
    fn gradient_vanishes_at_perfect_fit_without_penalty() {
        let (g, c) = batches(3, 50, 30, f64::INFINITY, 22);
        let m = RidgeModel::random(3, 4, Activation::Tanh, f64::INFINITY, 1.5, 23).unwrap();
        let ctx = ObjectiveContext::new(&TargetFunction::from_model(&m), g, c, 0.0, Anchors::zeros(3, 30)).unwrap();
        let (v, grad) = grad_params(&m, &ctx).unwrap();
        assert_eq!(v.total, 0.0);
        assert!(grad.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn coefficient_gradient_scales_linearly() {
        // G is linear in c; with target 0 and λ = 0, ∂Φ¹/∂c at t·c is t times that at c.
        let (g, c) = batches(3, 50, 30, f64::INFINITY, 24);
        let m = RidgeModel::random(3, 4, Activation::Tanh, f64::INFINITY, 1.5, 25).unwrap();
        let ctx = ObjectiveContext::new(&TargetFunction::new(3, |_| 0.0), g, c, 0.0, Anchors::zeros(3, 30)).unwrap();
        let scaled = |t: f64| {
            let mut p = m.params().to_vec();
            let start = m.units() * (m.n() + 1);
            p[start..].iter_mut().for_each(|v| *v *= t);
            m.with_params(p).unwrap()
        };
        let start = m.units() * (m.n() + 1);
        let (_, g1) = grad_params(&scaled(1.0), &ctx).unwrap();
        for t in [2.0, -0.5] {
            let (_, gt) = grad_params(&scaled(t), &ctx).unwrap();
            for i in start..m.param_count() {
                assert!((gt[i] - t * g1[i]).abs() <= 1e-12 * g1[i].abs().max(1e-12));
            }
        }
    }

    #[test]
    fn model_distance_of_identical_models_is_zero() {
        let (m, ctx) = context(3, 4, 2.0, 1.0, 26);
        assert_eq!(model_distance(&m, &m, &ctx).unwrap(), 0.0);
    }
}
