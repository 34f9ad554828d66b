//! Ridge-network hypothesis class with a radial cutoff.
//!
//! A model evaluates
//!
//! ```text
//! G(x) = σ(γ(R − |x|)) · θ(x),    θ(x) = Σᵢ cᵢ ψ(aᵢᵀx − bᵢ)
//! ```
//!
//! where σ is the logistic sigmoid. `gamma = ∞` replaces the sigmoid by the
//! indicator of the closed ball of radius `R`.
//!
//! Parameters are kept in one flat vector laid out as
//! `[a₁ … a_M | b₁ … b_M | c₁ … c_M]` (directions row-major), which is the
//! layout the optimizer and the parameter gradients use as well.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdrError};

/// Ridge activation ψ together with its first two derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    /// Logistic sigmoid 1/(1+e^{-s}).
    Logistic,
}

impl Activation {
    #[inline]
    pub fn value(self, s: f64) -> f64 {
        match self {
            Activation::Tanh => fast_tanh(s),
            Activation::Logistic => logistic(s),
        }
    }

    #[inline]
    pub fn deriv(self, s: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = fast_tanh(s);
                1.0 - t * t
            }
            Activation::Logistic => {
                let p = logistic(s);
                p * (1.0 - p)
            }
        }
    }

    #[inline]
    pub fn second_deriv(self, s: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = fast_tanh(s);
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Logistic => {
                let p = logistic(s);
                p * (1.0 - p) * (1.0 - 2.0 * p)
            }
        }
    }

    /// ψ, ψ′ and ψ″ in one call; shares the transcendental evaluation.
    #[inline]
    pub fn eval3(self, s: f64) -> (f64, f64, f64) {
        match self {
            Activation::Tanh => {
                let t = fast_tanh(s);
                let d = 1.0 - t * t;
                (t, d, -2.0 * t * d)
            }
            Activation::Logistic => {
                let p = logistic(s);
                let d = p * (1.0 - p);
                (p, d, d * (1.0 - 2.0 * p))
            }
        }
    }

    /// Supremum of |ψ| over the real line.
    pub fn sup_abs(self) -> f64 {
        1.0
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Logistic => "logistic",
        }
    }
}

impl FromStr for Activation {
    type Err = SdrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "logistic" | "sigmoid" => Ok(Activation::Logistic),
            other => Err(SdrError::invalid(format!("unknown activation `{other}`"))),
        }
    }
}

/// tanh through a single `expm1`; accurate to a few ulps and cheaper than libm tanh.
#[inline]
fn fast_tanh(s: f64) -> f64 {
    let e = (-2.0 * s.abs()).exp_m1();
    (-e / (2.0 + e)).copysign(s)
}

/// Numerically stable logistic sigmoid.
#[inline]
pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// The cutoff factor at a point, split into the pieces the gradient formulas need.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CutoffTerms {
    /// σ(γ(R − |x|)), or the ball indicator when γ = ∞.
    pub sigma: f64,
    /// Coefficient h with radial term h·x: h = −γ(1−σ)/|x|. Zero at the origin
    /// and everywhere when γ = ∞.
    pub radial: f64,
}

pub fn cutoff_terms(gamma: f64, radius: f64, x: &[f64]) -> CutoffTerms {
    let r = norm(x);
    if gamma.is_infinite() {
        let inside = if r <= radius { 1.0 } else { 0.0 };
        return CutoffTerms {
            sigma: inside,
            radial: 0.0,
        };
    }
    let t = gamma * (radius - r);
    let sigma = logistic(t);
    let radial = if r > 0.0 {
        -gamma * logistic(-t) / r
    } else {
        0.0
    };
    CutoffTerms { sigma, radial }
}

#[inline]
pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    n: usize,
    units: usize,
    params: Vec<f64>,
    activation: Activation,
    gamma: f64,
    radius: f64,
}

impl RidgeModel {
    /// The all-zero model of the given shape.
    pub fn zeros(
        n: usize,
        units: usize,
        activation: Activation,
        gamma: f64,
        radius: f64,
    ) -> Result<Self> {
        Self::check_shape(n, units, gamma, radius)?;
        Ok(Self {
            n,
            units,
            params: vec![0.0; units * (n + 2)],
            activation,
            gamma,
            radius,
        })
    }

    pub fn from_parts(
        directions: &[Vec<f64>],
        offsets: &[f64],
        coeffs: &[f64],
        activation: Activation,
        gamma: f64,
        radius: f64,
    ) -> Result<Self> {
        let units = directions.len();
        let n = directions.first().map_or(0, Vec::len);
        Self::check_shape(n, units, gamma, radius)?;
        for a in directions {
            if a.len() != n {
                return Err(SdrError::DimensionMismatch {
                    expected: n,
                    got: a.len(),
                });
            }
        }
        for v in [offsets.len(), coeffs.len()] {
            if v != units {
                return Err(SdrError::DimensionMismatch {
                    expected: units,
                    got: v,
                });
            }
        }
        let mut params = Vec::with_capacity(units * (n + 2));
        directions.iter().for_each(|a| params.extend_from_slice(a));
        params.extend_from_slice(offsets);
        params.extend_from_slice(coeffs);
        Ok(Self {
            n,
            units,
            params,
            activation,
            gamma,
            radius,
        })
    }

    /// Seeded random initialization: direction entries N(0,1)/√n, offsets
    /// uniform on (−R, R), coefficients normal with standard deviation 1/√M.
    pub fn random(
        n: usize,
        units: usize,
        activation: Activation,
        gamma: f64,
        radius: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut model = Self::zeros(n, units, activation, gamma, radius)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (n as f64).sqrt();
        let offsets = Uniform::new(-radius, radius).expect("radius > 0");
        let coeffs = Normal::new(0.0, 1.0 / (units as f64).sqrt()).expect("finite std");
        let (dirs, rest) = model.params.split_at_mut(units * n);
        for a in dirs.iter_mut() {
            *a = rng.sample::<f64, _>(StandardNormal) * scale;
        }
        let (b, c) = rest.split_at_mut(units);
        for v in b.iter_mut() {
            *v = rng.sample(offsets);
        }
        for v in c.iter_mut() {
            *v = rng.sample(coeffs);
        }
        Ok(model)
    }

    fn check_shape(n: usize, units: usize, gamma: f64, radius: f64) -> Result<()> {
        if n == 0 || units == 0 {
            return Err(SdrError::invalid("model needs n ≥ 1 and M ≥ 1"));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(SdrError::invalid(format!("radius must be positive, got {radius}")));
        }
        if !(gamma > 0.0) {
            return Err(SdrError::invalid(format!("gamma must be positive or inf, got {gamma}")));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn is_hard_cutoff(&self) -> bool {
        self.gamma.is_infinite()
    }

    /// Flat parameter vector `[directions | offsets | coefficients]`.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Same shape, new parameters.
    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        if params.len() != self.params.len() {
            return Err(SdrError::DimensionMismatch {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        Ok(Self {
            params,
            ..self.clone()
        })
    }

    pub fn direction(&self, i: usize) -> &[f64] {
        &self.params[i * self.n..(i + 1) * self.n]
    }

    pub fn directions(&self) -> &[f64] {
        &self.params[..self.units * self.n]
    }

    pub fn offsets(&self) -> &[f64] {
        let start = self.units * self.n;
        &self.params[start..start + self.units]
    }

    pub fn coeffs(&self) -> &[f64] {
        let start = self.units * (self.n + 1);
        &self.params[start..]
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(SdrError::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn cutoff(&self, x: &[f64]) -> CutoffTerms {
        cutoff_terms(self.gamma, self.radius, x)
    }

    /// θ(x) without the cutoff factor.
    pub(crate) fn ridge_sum(&self, x: &[f64]) -> f64 {
        let act = self.activation;
        let b = self.offsets();
        let c = self.coeffs();
        (0..self.units)
            .map(|i| c[i] * act.value(dot(self.direction(i), x) - b[i]))
            .sum()
    }

    /// θ(x) and ∇θ(x), written into `grad`.
    pub(crate) fn ridge_sum_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let act = self.activation;
        let b = self.offsets();
        let c = self.coeffs();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut theta = 0.0;
        for i in 0..self.units {
            let a = self.direction(i);
            let s = dot(a, x) - b[i];
            theta += c[i] * act.value(s);
            let w = c[i] * act.deriv(s);
            for (g, &aj) in grad.iter_mut().zip(a) {
                *g += w * aj;
            }
        }
        theta
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> f64 {
        let cut = self.cutoff(x);
        if cut.sigma == 0.0 {
            return 0.0;
        }
        cut.sigma * self.ridge_sum(x)
    }

    /// Exact input gradient ∂G/∂x = σ·(h·θ·x + ∇θ) with h the radial coefficient.
    pub fn grad_x(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let mut g = self.effective_grad_unchecked(x);
        let sigma = self.cutoff(x).sigma;
        g.iter_mut().for_each(|v| *v *= sigma);
        Ok(g)
    }

    /// The gradient field weighted out of the cutoff measure σ² dx:
    /// `h·θ(x)·x + ∇θ(x)`, i.e. ∂G/∂x divided by σ. This is the vector the
    /// moment matrix and the alignment penalty are built from. With a hard
    /// cutoff it is ∇θ inside the ball and zero outside.
    pub fn effective_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        Ok(self.effective_grad_unchecked(x))
    }

    pub(crate) fn effective_grad_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n];
        self.effective_grad_into(x, &mut g);
        g
    }

    pub(crate) fn effective_grad_into(&self, x: &[f64], out: &mut [f64]) {
        let cut = self.cutoff(x);
        if self.is_hard_cutoff() && cut.sigma == 0.0 {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let theta = self.ridge_sum_and_grad(x, out);
        if cut.radial != 0.0 {
            let h = cut.radial * theta;
            for (g, &xj) in out.iter_mut().zip(x) {
                *g += h * xj;
            }
        }
    }

    /// Serialize to the flat text format: a header
    /// `ridgemodel n M gamma R activation` followed by one line per unit
    /// holding `a_1 … a_n b c`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "ridgemodel {} {} {} {} {}",
            self.n,
            self.units,
            fmt_f64(self.gamma),
            fmt_f64(self.radius),
            self.activation.name()
        )
        .unwrap();
        let b = self.offsets();
        let c = self.coeffs();
        for i in 0..self.units {
            let mut fields: Vec<String> = self.direction(i).iter().map(|&v| fmt_f64(v)).collect();
            fields.push(fmt_f64(b[i]));
            fields.push(fmt_f64(c[i]));
            writeln!(out, "{}", fields.join(" ")).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(SdrError::Parse {
            line: 1,
            msg: "empty model file".into(),
        })?;
        let head: Vec<&str> = header.split_whitespace().collect();
        if head.len() != 6 || head[0] != "ridgemodel" {
            return Err(SdrError::Parse {
                line: 1,
                msg: "expected `ridgemodel n M gamma R activation`".into(),
            });
        }
        let n: usize = parse_field(head[1], 1)?;
        let units: usize = parse_field(head[2], 1)?;
        let gamma: f64 = parse_field(head[3], 1)?;
        let radius: f64 = parse_field(head[4], 1)?;
        let activation: Activation = head[5].parse()?;

        let mut directions = Vec::with_capacity(units);
        let mut offsets = Vec::with_capacity(units);
        let mut coeffs = Vec::with_capacity(units);
        for (idx, line) in lines {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| parse_field(t, idx + 1))
                .collect::<Result<_>>()?;
            if vals.len() != n + 2 {
                return Err(SdrError::Parse {
                    line: idx + 1,
                    msg: format!("expected {} values, found {}", n + 2, vals.len()),
                });
            }
            directions.push(vals[..n].to_vec());
            offsets.push(vals[n]);
            coeffs.push(vals[n + 1]);
        }
        if directions.len() != units {
            return Err(SdrError::Parse {
                line: 1,
                msg: format!("header declares {units} units, found {}", directions.len()),
            });
        }
        Self::from_parts(&directions, &offsets, &coeffs, activation, gamma, radius)
    }
}

/// 17 significant digits; enough for an exact f64 round trip.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_field<T: FromStr>(tok: &str, line: usize) -> Result<T> {
    tok.parse().map_err(|_| SdrError::Parse {
        line,
        msg: format!("cannot parse `{tok}`"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn single_unit(n: usize, gamma: f64) -> RidgeModel {
        let mut a = vec![0.0; n];
        a[0] = 1.0;
        RidgeModel::from_parts(&[a], &[0.0], &[1.0], Activation::Tanh, gamma, 1.0).unwrap()
    }

    fn random_point(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-scale..scale)).collect()
    }

    #[test]
    fn zero_model_is_zero_everywhere() {
        let m = RidgeModel::zeros(3, 5, Activation::Tanh, 2.0, 1.5).unwrap();
        assert_eq!(m.eval(&[0.3, -0.2, 0.1]).unwrap(), 0.0);
        assert_eq!(m.grad_x(&[0.3, -0.2, 0.1]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn hard_cutoff_vanishes_outside() {
        let m = RidgeModel::random(3, 4, Activation::Tanh, f64::INFINITY, 1.0, 1).unwrap();
        assert_eq!(m.eval(&[2.0, 0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn single_tanh_unit_value() {
        let m = single_unit(4, f64::INFINITY);
        let v = m.eval(&[0.5, 0.0, 0.0, 0.0]).unwrap();
        // tanh(0.5) to 20 digits: 0.46211715726000975850
        assert_relative_eq!(v, 0.462_117_157_260_009_76, max_relative = 1e-15);
    }

    #[test]
    fn single_tanh_unit_gradient_at_origin() {
        let m = single_unit(3, f64::INFINITY);
        assert_eq!(m.grad_x(&[0.0; 3]).unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn soft_cutoff_radial_term_zero_at_origin() {
        let m = RidgeModel::random(3, 4, Activation::Tanh, 3.0, 1.0, 5).unwrap();
        let g = m.effective_grad(&[0.0; 3]).unwrap();
        let mut plain = vec![0.0; 3];
        m.ridge_sum_and_grad(&[0.0; 3], &mut plain);
        assert_eq!(g, plain);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = single_unit(3, f64::INFINITY);
        assert!(matches!(
            m.eval(&[0.0; 2]),
            Err(SdrError::DimensionMismatch { expected: 3, got: 2 })
        ));
        assert!(m.grad_x(&[0.0; 4]).is_err());
    }

    #[test]
    fn invalid_shapes_rejected() {
        assert!(RidgeModel::zeros(0, 1, Activation::Tanh, 1.0, 1.0).is_err());
        assert!(RidgeModel::zeros(2, 1, Activation::Tanh, 1.0, -1.0).is_err());
        assert!(RidgeModel::zeros(2, 1, Activation::Tanh, 0.0, 1.0).is_err());
        assert!(RidgeModel::from_parts(
            &[vec![1.0, 0.0]],
            &[0.0, 1.0],
            &[1.0],
            Activation::Tanh,
            1.0,
            1.0
        )
        .is_err());
    }

    fn fd_check(m: &RidgeModel, x: &[f64]) -> f64 {
        let h = 1e-5;
        let g = m.grad_x(x).unwrap();
        let mut worst: f64 = 0.0;
        let scale = g.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1e-3);
        for j in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            let fd = (m.eval(&xp).unwrap() - m.eval(&xm).unwrap()) / (2.0 * h);
            worst = worst.max((fd - g[j]).abs() / scale);
        }
        worst
    }

    #[test]
    fn grad_x_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (k, gamma) in [f64::INFINITY, 4.0, 0.7].into_iter().enumerate() {
            let m = RidgeModel::random(4, 6, Activation::Tanh, gamma, 2.0, 100 + k as u64).unwrap();
            for _ in 0..100 {
                let mut x = random_point(&mut rng, 4, 1.0);
                if gamma.is_infinite() && norm(&x) > 1.9 {
                    x.iter_mut().for_each(|v| *v *= 0.5);
                }
                let err = fd_check(&m, &x);
                assert!(err < 1e-4, "gamma={gamma}: relative error {err}");
            }
        }
    }

    #[test]
    fn logistic_activation_gradients() {
        let m = RidgeModel::random(3, 5, Activation::Logistic, 2.5, 1.5, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let x = random_point(&mut rng, 3, 1.5);
            assert!(fd_check(&m, &x) < 1e-4);
        }
        for s in [-2.0, -0.3, 0.0, 0.8, 3.0] {
            let h = 1e-5;
            let act = Activation::Logistic;
            let fd1 = (act.value(s + h) - act.value(s - h)) / (2.0 * h);
            let fd2 = (act.deriv(s + h) - act.deriv(s - h)) / (2.0 * h);
            assert_relative_eq!(act.deriv(s), fd1, epsilon = 1e-9);
            assert_relative_eq!(act.second_deriv(s), fd2, epsilon = 1e-9);
        }
    }

    #[test]
    fn outside_ball_is_exactly_zero() {
        let m = RidgeModel::random(5, 8, Activation::Tanh, f64::INFINITY, 1.3, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let dir: Vec<f64> = (0..5).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let len = norm(&dir);
            let r = rng.random_range(1.3 * 1.000_001..3.0 * 1.3);
            let x: Vec<f64> = dir.iter().map(|v| v / len * r).collect();
            assert_eq!(m.eval(&x).unwrap(), 0.0);
        }
    }

    #[test]
    fn interior_values_bounded_by_coefficients() {
        let m = RidgeModel::random(4, 10, Activation::Tanh, 20.0, 2.0, 21).unwrap();
        let bound: f64 = m.coeffs().iter().map(|c| c.abs()).sum::<f64>() * m.activation().sup_abs();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut checked = 0;
        for _ in 0..200 {
            let x = random_point(&mut rng, 4, 1.0);
            if norm(&x) <= 2.0 - 10.0 / 20.0 {
                assert!(m.eval(&x).unwrap().abs() <= bound);
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn text_round_trip_is_exact() {
        for gamma in [f64::INFINITY, 3.25] {
            let m = RidgeModel::random(3, 7, Activation::Tanh, gamma, 2.5765, 42).unwrap();
            let text = m.to_text();
            assert!(text.starts_with("ridgemodel 3 7 "));
            let back = RidgeModel::from_text(&text).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn malformed_text_rejected() {
        assert!(RidgeModel::from_text("").is_err());
        assert!(RidgeModel::from_text("ridgemodel 2 1 inf 1 tanh\n1 2 3\n").is_err());
        assert!(RidgeModel::from_text("ridgemodel 2 2 inf 1 tanh\n1 2 3 4\n").is_err());
        assert!(RidgeModel::from_text("ridgemodel 2 1 inf 1 relu\n1 2 3 4\n").is_err());
    }

    proptest! {
        #[test]
        fn text_round_trip_prop(seed in any::<u64>(), n in 1usize..6, units in 1usize..6, soft in any::<bool>()) {
            let gamma = if soft { 2.0 } else { f64::INFINITY };
            let m = RidgeModel::random(n, units, Activation::Tanh, gamma, 1.7, seed).unwrap();
            prop_assert_eq!(RidgeModel::from_text(&m.to_text()).unwrap(), m);
        }
    }
}
