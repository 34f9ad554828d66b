//! Moment matrices of gradient fields and their spectral reductions.
//!
//! The moment matrix of a model is the average outer product of its effective
//! gradient field over the cutoff sample. Its leading eigenvectors span the
//! recovered input subspace and its trailing eigenvalues measure how far the
//! field is from being k-dimensional.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Result, SdrError};
use crate::model::RidgeModel;
use crate::sampling::SampleBatch;

/// Samples per parallel work item. The reduction topology depends only on
/// this constant, never on the thread count.
pub(crate) const CHUNK: usize = 128;

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_REL_TOL: f64 = 1e-12;
const SYMMETRY_REL_TOL: f64 = 1e-10;
/// Below this every eigenvalue counts as zero and the projector falls back to
/// the leading coordinate axes.
const NULL_SPECTRUM: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct MomentMatrix(DMatrix<f64>);

impl MomentMatrix {
    /// Wraps `m` after symmetrizing it as (M + Mᵀ)/2.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(SdrError::invalid(format!(
                "moment matrix must be square, got {}×{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(Self(sym))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projector {
    matrix: DMatrix<f64>,
    rank: usize,
    fallback: bool,
}

impl Projector {
    pub fn zeros(n: usize) -> Self {
        Self {
            matrix: DMatrix::zeros(n, n),
            rank: 0,
            fallback: false,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            matrix: DMatrix::identity(n, n),
            rank: n,
            fallback: false,
        }
    }

    /// Orthogonal projector onto the span of the listed coordinate axes.
    pub fn coordinate(n: usize, axes: &[usize]) -> Result<Self> {
        let mut matrix = DMatrix::zeros(n, n);
        for &i in axes {
            if i >= n {
                return Err(SdrError::invalid(format!("axis {i} out of range for n = {n}")));
            }
            matrix[(i, i)] = 1.0;
        }
        let rank = (0..n).filter(|&i| matrix[(i, i)] == 1.0).count();
        Ok(Self {
            matrix,
            rank,
            fallback: false,
        })
    }

    /// Σ uᵢuᵢᵀ over the columns of `basis`, which must be orthonormal.
    pub fn from_orthonormal_columns(basis: &DMatrix<f64>) -> Self {
        Self {
            matrix: basis * basis.transpose(),
            rank: basis.ncols(),
            fallback: false,
        }
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Set when the moment matrix was numerically zero and the projector is the
    /// coordinate-axis fallback rather than a principal subspace.
    pub fn is_fallback(&self) -> bool {
        self.fallback
    }

    /// y = P v, written into `out`.
    pub(crate) fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        let n = self.n();
        for (i, o) in out.iter_mut().enumerate().take(n) {
            *o = (0..n).map(|j| self.matrix[(i, j)] * v[j]).sum();
        }
    }
}

/// Eigenvalues in descending order with matching unit eigenvectors as columns.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

/// (1/L) Σ gᵢgᵢᵀ with gᵢ the model's effective gradient at the i-th cutoff point.
pub fn estimate_moment(model: &RidgeModel, batch: &SampleBatch) -> Result<MomentMatrix> {
    let n = model.n();
    if batch.n() != n {
        return Err(SdrError::DimensionMismatch {
            expected: n,
            got: batch.n(),
        });
    }
    let partials: Vec<Vec<f64>> = batch
        .as_flat()
        .par_chunks(CHUNK * n)
        .map(|chunk| {
            let mut acc = vec![0.0; n * n];
            let mut g = vec![0.0; n];
            for z in chunk.chunks_exact(n) {
                model.effective_grad_into(z, &mut g);
                for i in 0..n {
                    for j in 0..n {
                        acc[i * n + j] += g[i] * g[j];
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; n * n];
    for p in &partials {
        total.iter_mut().zip(p).for_each(|(t, v)| *t += v);
    }
    let inv = 1.0 / batch.len() as f64;
    MomentMatrix::from_matrix(DMatrix::from_row_slice(n, n, &total) * inv)
}

/// Empirical second-moment matrix (1/L) Σ zᵢzᵢᵀ of a point set. Its rank is
/// at most k exactly when the points lie in a k-dimensional subspace.
pub fn second_moment(batch: &SampleBatch) -> Result<MomentMatrix> {
    let n = batch.n();
    let mut total = DMatrix::<f64>::zeros(n, n);
    for z in batch.iter() {
        for i in 0..n {
            for j in 0..n {
                total[(i, j)] += z[i] * z[j];
            }
        }
    }
    MomentMatrix::from_matrix(total / batch.len() as f64)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Sweeps until the off-diagonal Frobenius norm falls below 10⁻¹²·‖M‖_F (at
/// most 100 sweeps). Eigenpairs are sorted by descending eigenvalue with a
/// stable sort, and each eigenvector is signed so its largest-magnitude entry
/// (lowest index on ties) is positive.
pub fn sym_eigen(m: &DMatrix<f64>) -> Result<SymEigen> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(SdrError::invalid("eigendecomposition needs a square matrix"));
    }
    let fro = m.norm();
    let asym = (m - m.transpose()).norm();
    if asym > SYMMETRY_REL_TOL * fro {
        return Err(SdrError::invalid(format!(
            "matrix is not symmetric: ‖M − Mᵀ‖_F = {asym:e}"
        )));
    }

    let mut a = m.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let target = JACOBI_REL_TOL * fro;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off = off_diagonal_norm(&a);
        if off <= target || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].partial_cmp(&a[(i, i)]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        let mut u: DVector<f64> = v.column(i).into_owned();
        let mut lead = 0;
        for r in 1..n {
            if u[r].abs() > u[lead].abs() {
                lead = r;
            }
        }
        if u[lead] < 0.0 {
            u.neg_mut();
        }
        vectors.set_column(col, &u);
    }
    Ok(SymEigen { values, vectors })
}

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// A ← JᵀAJ and V ← VJ for the plane rotation J(p, q, c, s) that zeroes a[p,q].
fn rotate(a: &mut DMatrix<f64>, v: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    let n = a.nrows();
    let app = a[(p, p)];
    let aqq = a[(q, q)];
    let apq = a[(p, q)];
    for k in 0..n {
        if k != p && k != q {
            let akp = a[(k, p)];
            let akq = a[(k, q)];
            let new_kp = c * akp - s * akq;
            let new_kq = s * akp + c * akq;
            a[(k, p)] = new_kp;
            a[(p, k)] = new_kp;
            a[(k, q)] = new_kq;
            a[(q, k)] = new_kq;
        }
    }
    a[(p, p)] = c * c * app - 2.0 * s * c * apq + s * s * aqq;
    a[(q, q)] = s * s * app + 2.0 * s * c * apq + c * c * aqq;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

fn check_rank(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(SdrError::invalid(format!("k = {k} must lie in 1..={n}")));
    }
    Ok(())
}

/// Projector onto the span of the top-k eigenvectors.
pub fn top_k_projector(m: &MomentMatrix, k: usize) -> Result<Projector> {
    let eig = sym_eigen(m.matrix())?;
    projector_from_eigen(&eig, k)
}

pub fn projector_from_eigen(eig: &SymEigen, k: usize) -> Result<Projector> {
    let n = eig.values.len();
    check_rank(k, n)?;
    if eig.values.iter().all(|&v| v.abs() < NULL_SPECTRUM) {
        let axes: Vec<usize> = (0..k).collect();
        let mut p = Projector::coordinate(n, &axes)?;
        p.fallback = true;
        return Ok(p);
    }
    let basis = eig.vectors.columns(0, k).into_owned();
    Ok(Projector::from_orthonormal_columns(&basis))
}

/// Sum of the trailing n − k eigenvalues: the squared Frobenius distance from
/// M^{1/2} to the nearest matrix of rank ≤ k.
pub fn rank_penalty(m: &MomentMatrix, k: usize) -> Result<f64> {
    check_rank(k, m.n())?;
    let eig = sym_eigen(m.matrix())?;
    Ok(eig.values[k..].iter().sum())
}

/// λ_k − λ_{k+1}; zero when k = n.
pub fn spectral_gap(values: &[f64], k: usize) -> f64 {
    match (values.get(k.wrapping_sub(1)), values.get(k)) {
        (Some(a), Some(b)) => a - b,
        _ => 0.0,
    }
}

/// ‖P − P_true‖_F.
pub fn subspace_accuracy(p: &Projector, p_true: &Projector) -> Result<f64> {
    if p.n() != p_true.n() {
        return Err(SdrError::DimensionMismatch {
            expected: p_true.n(),
            got: p.n(),
        });
    }
    Ok((p.matrix() - p_true.matrix()).norm())
}

pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:e}", m[(i, j)])).collect();
        writeln!(out, "{}", row.join(",")).unwrap();
    }
    out
}
