//! Dense helpers on top of nalgebra: general complex eigendecomposition and
//! real/complex conversions.

use nalgebra::{Complex, DMatrix, Schur, SymmetricEigen, SVD};

use crate::{Error, Result};

pub(crate) type C64 = Complex<f64>;

/// Largest eigenvector-matrix condition number accepted by [`eigen`].
pub(crate) const MAX_EIGENBASIS_CONDITION: f64 = 1e12;

pub(crate) fn to_complex(m: &DMatrix<f64>) -> DMatrix<C64> {
    m.map(|x| C64::new(x, 0.0))
}

pub(crate) fn real_part(m: &DMatrix<C64>) -> DMatrix<f64> {
    m.map(|z| z.re)
}

pub(crate) fn max_abs_imag(m: &DMatrix<C64>) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.im.abs()))
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn hermitize(m: &DMatrix<C64>) -> DMatrix<C64> {
    (m + m.adjoint()).map(|z| z * 0.5)
}

pub(crate) fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub(crate) fn hermitian_eigenvalues(m: &DMatrix<C64>) -> Vec<f64> {
    let eig = SymmetricEigen::new(hermitize(m));
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    vals
}

/// Eigenvalues of a real symmetric matrix, ascending.
pub(crate) fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    vals
}

/// A diagonalisation `M = V diag(values) V⁻¹`.
pub(crate) struct Eigen {
    pub values: Vec<C64>,
    pub vectors: DMatrix<C64>,
    pub inverse: DMatrix<C64>,
}

fn schur_eigenvalues(m: &DMatrix<C64>) -> Result<Vec<C64>> {
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::numerical("complex Schur decomposition did not converge"))?;
    let (_, t) = schur.unpack();
    Ok((0..t.nrows()).map(|i| t[(i, i)]).collect())
}

/// General complex eigendecomposition.
///
/// Eigenvalues come from the complex Schur form. Eigenvectors are taken as
/// the near-null right singular vectors of `M − λI`, one cluster of
/// (numerically) equal eigenvalues at a time, which keeps degenerate but
/// diagonalisable matrices well conditioned.
pub(crate) fn eigen(m: &DMatrix<C64>) -> Result<Eigen> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::invalid(format!("matrix is not square: {}x{}", n, m.ncols())));
    }
    let scale = m.iter().fold(0.0f64, |acc, z| acc.max(z.norm())).max(1.0);
    let mut values = schur_eigenvalues(m)?;
    values.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));

    let cluster_tol = 1e-7 * scale;
    let mut clusters: Vec<Vec<C64>> = Vec::new();
    for v in values {
        match clusters
            .iter_mut()
            .find(|c| (c.iter().sum::<C64>() / c.len() as f64 - v).norm() < cluster_tol)
        {
            Some(c) => c.push(v),
            None => clusters.push(vec![v]),
        }
    }

    let mut vectors = DMatrix::<C64>::zeros(n, n);
    let mut ordered = Vec::with_capacity(n);
    let mut col = 0;
    for cluster in &clusters {
        let lambda = cluster.iter().sum::<C64>() / cluster.len() as f64;
        let shifted = m - DMatrix::<C64>::identity(n, n) * lambda;
        let svd = SVD::new(shifted, false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| Error::numerical("SVD did not return right singular vectors"))?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
        let null_tol = 1e-6 * scale;
        if let Some(&worst) = order.get(cluster.len() - 1) {
            let residual = svd.singular_values[worst];
            if residual > null_tol {
                return Err(Error::numerical(format!(
                    "eigenbasis is defective near eigenvalue {lambda} (residual {residual:e}, condition estimate inf)"
                )));
            }
        }
        for (&row, &value) in order.iter().take(cluster.len()).zip(cluster) {
            let v = v_t.row(row).adjoint();
            vectors.set_column(col, &v);
            ordered.push(value);
            col += 1;
        }
    }

    let sv = SVD::new(vectors.clone(), false, false).singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition < MAX_EIGENBASIS_CONDITION) {
        return Err(Error::numerical(format!(
            "eigenbasis is defective or ill-conditioned (condition estimate {condition:e})"
        )));
    }
    let inverse = vectors
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::numerical("eigenvector matrix is singular"))?;
    Ok(Eigen { values: ordered, vectors, inverse })
}

/// Determinant of a complex matrix via LU.
pub(crate) fn det_complex(m: &DMatrix<C64>) -> C64 {
    m.clone().lu().determinant()
}
