//! Seeded Monte-Carlo point sets.
//!
//! Both samplers draw from ChaCha8 (`rand_chacha`), seeded with
//! `seed_from_u64(seed)` and switched to a fixed per-sampler stream, so the
//! Gaussian and cutoff batches of one run are independent even when they share
//! a seed, and every batch is reproducible across platforms.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{Result, SdrError};
use crate::model::{logistic, norm};

const GAUSSIAN_STREAM: u64 = 1;
const CUTOFF_STREAM: u64 = 2;


#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Density {
    /// π^{-n/2} e^{-|x|²}
    Gaussian,
    /// ∝ σ(γ(R − |x|))², uniform on the ball when γ = ∞.
    Cutoff { gamma: f64, radius: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    n: usize,
    points: Vec<f64>,
    density: Density,
    seed: u64,
}

impl SampleBatch {
    /// Wrap externally produced points (row-major, `n` coordinates each).
    pub fn from_points(n: usize, points: Vec<f64>, density: Density, seed: u64) -> Result<Self> {
        if n == 0 || points.is_empty() || points.len() % n != 0 {
            return Err(SdrError::invalid(format!(
                "{} coordinates do not form points of dimension {n}",
                points.len()
            )));
        }
        Ok(Self {
            n,
            points,
            density,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn density(&self) -> Density {
        self.density
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.n..(i + 1) * self.n]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.points.chunks_exact(self.n)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.points
    }

    /// Apply a linear map `x ↦ Qx` to every point (Q given row-major, n×n).
    pub fn mapped(&self, q: &[f64]) -> Result<Self> {
        if q.len() != self.n * self.n {
            return Err(SdrError::DimensionMismatch {
                expected: self.n * self.n,
                got: q.len(),
            });
        }
        let n = self.n;
        let mut points = Vec::with_capacity(self.points.len());
        for x in self.iter() {
            for row in q.chunks_exact(n) {
                points.push(row.iter().zip(x).map(|(a, b)| a * b).sum());
            }
        }
        Ok(Self {
            points,
            ..self.clone()
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = (1..=self.n).map(|j| format!("x{j}")).collect();
        writeln!(out, "{}", header.join(",")).unwrap();
        for x in self.iter() {
            let row: Vec<String> = x.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", row.join(",")).unwrap();
        }
        out
    }
}

fn check_counts(n: usize, count: usize) -> Result<()> {
    if n == 0 || count == 0 {
        return Err(SdrError::invalid("sample dimension and count must be ≥ 1"));
    }
    Ok(())
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `count` iid draws from π^{-n/2} e^{-|x|²}: every coordinate is N(0, ½).
pub fn sample_gaussian(n: usize, count: usize, seed: u64) -> Result<SampleBatch> {
    check_counts(n, count)?;
    let mut rng = stream_rng(seed, GAUSSIAN_STREAM);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let points = (0..n * count)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
        .collect();
    Ok(SampleBatch {
        n,
        points,
        density: Density::Gaussian,
        seed,
    })
}

fn unit_direction(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let d: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let len = norm(&d);
        if len > 0.0 {
            return d.into_iter().map(|v| v / len).collect();
        }
    }
}

fn uniform_ball_point(rng: &mut ChaCha8Rng, n: usize, radius: f64, out: &mut Vec<f64>) {
    let dir = unit_direction(rng, n);
    let u: f64 = rng.random();
    let r = radius * u.powf(1.0 / n as f64);
    out.extend(dir.iter().map(|v| v * r));
}

/// Radial envelope r^{n−1}·min(1, e^{−2γ(r−R)}) ≥ r^{n−1}σ(γ(R−r))², sampled
/// exactly: r^{n−1} on [0, R], and beyond R the binomial expansion of
/// (R + s)^{n−1} e^{−2γs} as a mixture of Gamma(j+1, rate 2γ) shifts.
struct SoftRadius {
    n: usize,
    gamma: f64,
    radius: f64,
    pieces: WeightedIndex<f64>,
    shifts: Vec<Gamma<f64>>,
}

impl SoftRadius {
    fn new(n: usize, gamma: f64, radius: f64) -> Result<Self> {
        let nf = n as f64;
        let rate = 2.0 * gamma;
        let mut log_w = vec![nf * radius.ln() - nf.ln()];
        let mut shifts = Vec::with_capacity(n);
        for j in 0..n {
            let jf = j as f64;
            let ln_binom = ln_gamma(nf) - ln_gamma(jf + 1.0) - ln_gamma(nf - jf);
            log_w.push(ln_binom + (nf - 1.0 - jf) * radius.ln() + ln_gamma(jf + 1.0) - (jf + 1.0) * rate.ln());
            shifts.push(Gamma::new(jf + 1.0, 1.0 / rate).map_err(|e| SdrError::invalid(e.to_string()))?);
        }
        let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = log_w.iter().map(|l| (l - top).exp()).collect();
        let pieces = WeightedIndex::new(weights).map_err(|e| SdrError::invalid(e.to_string()))?;
        Ok(Self {
            n,
            gamma,
            radius,
            pieces,
            shifts,
        })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        loop {
            let piece = self.pieces.sample(rng);
            let (r, envelope) = if piece == 0 {
                let u: f64 = rng.random();
                (self.radius * u.powf(1.0 / self.n as f64), 1.0)
            } else {
                let s = self.shifts[piece - 1].sample(rng);
                (self.radius + s, (-2.0 * self.gamma * s).exp())
            };
            let sigma = logistic(self.gamma * (self.radius - r));
            let u: f64 = rng.random();
            if u * envelope < sigma * sigma {
                return r;
            }
        }
    }
}

/// `count` iid draws from the density ∝ σ(γ(R − |x|))².
///
/// γ = ∞ gives the uniform distribution on the ball B_R(0), drawn as a uniform
/// direction times R·u^{1/n}. Finite γ draws a uniform direction and a radius
/// from r^{n−1}σ(γ(R − r))² by rejection from a tight envelope.
pub fn sample_cutoff(
    n: usize,
    count: usize,
    gamma: f64,
    radius: f64,
    seed: u64,
) -> Result<SampleBatch> {
    check_counts(n, count)?;
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(SdrError::invalid(format!("radius must be positive, got {radius}")));
    }
    if !(gamma > 0.0) {
        return Err(SdrError::invalid(format!("gamma must be positive or inf, got {gamma}")));
    }
    let mut rng = stream_rng(seed, CUTOFF_STREAM);
    let mut points = Vec::with_capacity(n * count);
    if gamma.is_infinite() {
        for _ in 0..count {
            uniform_ball_point(&mut rng, n, radius, &mut points);
        }
    } else {
        let radial = SoftRadius::new(n, gamma, radius)?;
        for _ in 0..count {
            let dir = unit_direction(&mut rng, n);
            let r = radial.sample(&mut rng);
            points.extend(dir.iter().map(|v| v * r));
        }
    }
    Ok(SampleBatch {
        n,
        points,
        density: Density::Cutoff { gamma, radius },
        seed,
    })
}

/// P[|x| > r] for x ~ π^{-n/2} e^{-|x|²}. |x|² is Gamma(n/2, 1) distributed.
pub fn gaussian_radius_tail(r: f64, n: usize) -> f64 {
    if r <= 0.0 {
        return 1.0;
    }
    gamma_ur(n as f64 / 2.0, r * r)
}

/// Radius R with P[|x| > R] = p under π^{-n/2} e^{-|x|²}, by bisection to an
/// absolute tolerance of 10⁻⁸ (well below it in practice).
pub fn quantile_radius(p: f64, n: usize) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(SdrError::invalid(format!("tail probability must lie in (0,1), got {p}")));
    }
    if n == 0 {
        return Err(SdrError::invalid("dimension must be ≥ 1"));
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while gaussian_radius_tail(hi, n) > p {
        hi *= 2.0;
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if gaussian_radius_tail(mid, n) > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
