//! Small dense linear-algebra helpers on top of `nalgebra`.
//!
//! Every matrix norm used by the bounds in this crate is the spectral norm
//! (largest singular value). The Frobenius norm only appears in iteration
//! stopping rules.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;
pub type CMat = DMatrix<Complex<f64>>;
pub type CVector = DVector<Complex<f64>>;

/// Operator 2-norm.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn spectral_norm_c(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Ratio of extreme singular values; infinite for singular input.
pub fn condition_number_c(m: &CMat) -> f64 {
    let sv = m.singular_values();
    let lo = sv.min();
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        sv.max() / lo
    }
}

pub fn condition_number(m: &Mat) -> f64 {
    let sv = m.singular_values();
    let lo = sv.min();
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        sv.max() / lo
    }
}

pub fn spectral_radius(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Principal square root of a symmetric PSD matrix. Eigenvalues below zero
/// (round-off) are clamped to zero.
pub fn sym_sqrt(m: &Mat) -> Mat {
    sym_fn(m, |l| l.max(0.0).sqrt())
}

/// Inverse principal square root of a symmetric PD matrix.
pub fn sym_inv_sqrt(m: &Mat) -> Result<Mat> {
    let eig = symmetrize(m).symmetric_eigen();
    let lo = eig.eigenvalues.min();
    if lo <= 1e-300 {
        return Err(Error::invalid(
            "inverse square root of a matrix that is not positive definite",
        ));
    }
    Ok(sym_fn(m, |l| 1.0 / l.sqrt()))
}

fn sym_fn(m: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    let eig = symmetrize(m).symmetric_eigen();
    let d = Mat::from_diagonal(&eig.eigenvalues.map(f));
    let v = &eig.eigenvectors;
    symmetrize(&(v * d * v.transpose()))
}

pub fn sym_eigenvalues(m: &Mat) -> Vector {
    symmetrize(m).symmetric_eigen().eigenvalues
}

pub fn max_sym_eigenvalue(m: &Mat) -> f64 {
    if m.is_empty() {
        return f64::NEG_INFINITY;
    }
    sym_eigenvalues(m).max()
}

pub fn min_sym_eigenvalue(m: &Mat) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    sym_eigenvalues(m).min()
}

/// Solves `a * x = b` by LU with partial pivoting.
pub fn solve(a: &Mat, b: &Mat) -> Result<Mat> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::solver("singular linear system", f64::INFINITY))
}

pub fn inverse(a: &Mat) -> Result<Mat> {
    a.clone()
        .try_inverse()
        .ok_or_else(|| Error::solver("singular matrix inverse", f64::INFINITY))
}

pub fn power(m: &Mat, k: usize) -> Mat {
    let mut out = Mat::identity(m.nrows(), m.ncols());
    for _ in 0..k {
        out = &out * m;
    }
    out
}

/// `‖new − old‖_F ≤ tol · ‖new‖_F` (with a floor so that zero fixed points
/// converge).
pub fn converged(new: &Mat, old: &Mat, tol: f64) -> bool {
    (new - old).norm() <= tol * new.norm().max(1e-300)
}

pub fn to_complex(m: &Mat) -> CMat {
    m.map(|x| Complex::new(x, 0.0))
}

/// Eigendecomposition `M = S diag(λ) S⁻¹` of a general real matrix, carried
/// out in complex arithmetic.
///
/// Eigenvalues come from the real Schur form. Each eigenvalue cluster (values
/// within a relative 1e-7 of each other) gets as many basis vectors as its
/// multiplicity, read off the smallest right singular vectors of `M − λI`.
/// For a defective matrix these vectors do not span an invariant subspace and
/// the resulting `S` is (numerically) singular; callers detect that through
/// the condition number and the reconstruction residual.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub vectors: CMat,
    pub values: CVector,
}

impl EigenDecomposition {
    pub fn reconstruct(&self) -> Result<CMat> {
        let inv = self
            .vectors
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::CertificationFailed("singular eigenbasis".into()))?;
        Ok(&self.vectors * CMat::from_diagonal(&self.values) * inv)
    }
}

pub fn eigen_decompose(m: &Mat) -> EigenDecomposition {
    let n = m.nrows();
    let mut values: Vec<Complex<f64>> = m.complex_eigenvalues().iter().copied().collect();
    values.sort_by(|a, b| {
        a.re.partial_cmp(&b.re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.im.partial_cmp(&b.im).unwrap_or(std::cmp::Ordering::Equal))
    });

    let scale = spectral_norm(m).max(1.0);
    let mut clusters: Vec<Vec<Complex<f64>>> = Vec::new();
    for v in values {
        match clusters
            .iter_mut()
            .find(|c| (c[0] - v).norm() <= 1e-7 * scale)
        {
            Some(c) => c.push(v),
            None => clusters.push(vec![v]),
        }
    }

    let cm = to_complex(m);
    let mut vectors = CMat::zeros(n, n);
    let mut out_values = CVector::zeros(n);
    let mut col = 0;
    for cluster in clusters {
        let k = cluster.len();
        let mean = cluster.iter().sum::<Complex<f64>>() / k as f64;
        let shifted = &cm - CMat::identity(n, n) * mean;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.expect("requested V");
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            svd.singular_values[a]
                .partial_cmp(&svd.singular_values[b])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        for (&j, &lambda) in order.iter().take(k).zip(cluster.iter()) {
            let v = v_t.row(j).transpose().map(|z| z.conj());
            let norm = v.norm();
            vectors.set_column(col, &(v / Complex::new(norm, 0.0)));
            // Keep the individually computed eigenvalue unless the cluster is
            // a genuine repeated root, in which case the mean is more accurate.
            out_values[col] = if k > 1 { mean } else { lambda };
            col += 1;
        }
    }
    EigenDecomposition {
        vectors,
        values: out_values,
    }
}

/// Stacks blocks `[[a, b], [c, d]]`.
pub fn block2(a: &Mat, b: &Mat, c: &Mat, d: &Mat) -> Mat {
    let (r1, c1) = a.shape();
    let (r2, c2) = d.shape();
    let mut out = Mat::zeros(r1 + r2, c1 + c2);
    out.view_mut((0, 0), (r1, c1)).copy_from(a);
    out.view_mut((0, c1), (r1, c2)).copy_from(b);
    out.view_mut((r1, 0), (r2, c1)).copy_from(c);
    out.view_mut((r1, c1), (r2, c2)).copy_from(d);
    out
}

pub fn vstack(a: &Mat, b: &Mat) -> Mat {
    let mut out = Mat::zeros(a.nrows() + b.nrows(), a.ncols());
    out.rows_mut(0, a.nrows()).copy_from(a);
    out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    out
}

pub fn hstack(a: &Mat, b: &Mat) -> Mat {
    let mut out = Mat::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Builds a matrix from row slices. Panics on ragged input; intended for
/// literals in tests and presets.
pub fn mat(rows: &[&[f64]]) -> Mat {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    assert!(rows.iter().all(|row| row.len() == c), "ragged matrix literal");
    Mat::from_fn(r, c, |i, j| rows[i][j])
}

pub fn vector(xs: &[f64]) -> Vector {
    Vector::from_column_slice(xs)
}

/// Euclidean projection onto the spectral-norm ball of the given radius
/// (singular values clipped at `radius`).
pub fn clip_spectral(m: &Mat, radius: f64) -> Mat {
    if spectral_norm(m) <= radius {
        return m.clone();
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V");
    let s = svd.singular_values.map(|x| x.min(radius));
    u * Mat::from_diagonal(&s) * v_t
}
