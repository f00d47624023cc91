//! Symplectic linear algebra over real `2n × 2n` covariance matrices.
//!
//! Quadratures are ordered `(x₁, p₁, …, x_n, p_n)` and the canonical
//! commutation relations read `[X_i, X_j] = 2iΩ_ij`, so a covariance matrix
//! `σ` is physical iff `σ + iΩ ≥ 0`, equivalently iff all of its symplectic
//! eigenvalues are at least one.

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, C64};
use crate::{Error, Result};

/// Tolerance on the smallest eigenvalue of `σ + iΩ` for a state to count as
/// bona fide.
pub const BONA_FIDE_TOL: f64 = 1e-10;

/// Asymmetry above which [`GaussianState::new`] logs a warning before
/// symmetrising.
pub const SYMMETRY_WARN: f64 = 1e-12;

/// Asymmetry above which the input is rejected outright.
const SYMMETRY_REJECT: f64 = 1e-6;

/// The block-diagonal form `Ω = ⊕ ω` with `ω = [[0, 1], [−1, 0]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticForm {
    n_modes: usize,
    matrix: DMatrix<f64>,
}

impl SymplecticForm {
    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// `iΩ` as a complex Hermitian matrix.
    pub fn i_omega(&self) -> DMatrix<C64> {
        self.matrix.map(|x| C64::new(0.0, x))
    }
}

pub fn symplectic_form(n_modes: usize) -> Result<SymplecticForm> {
    if n_modes == 0 {
        return Err(Error::invalid("symplectic form needs at least one mode"));
    }
    let dim = 2 * n_modes;
    let mut matrix = DMatrix::zeros(dim, dim);
    for k in 0..n_modes {
        matrix[(2 * k, 2 * k + 1)] = 1.0;
        matrix[(2 * k + 1, 2 * k)] = -1.0;
    }
    Ok(SymplecticForm { n_modes, matrix })
}

pub(crate) fn omega(n_modes: usize) -> DMatrix<f64> {
    symplectic_form(n_modes.max(1))
        .expect("n_modes >= 1")
        .into_matrix()
}

/// A zero-mean Gaussian state described by its covariance matrix.
///
/// The matrix is guaranteed symmetric; physicality is *not* enforced at
/// construction (partially transposed matrices and test inputs are allowed)
/// and is checked with [`check_bona_fide`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianState {
    n_modes: usize,
    cm: DMatrix<f64>,
}

impl GaussianState {
    /// Wraps a covariance matrix, symmetrising it.
    pub fn new(cm: DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = cm.shape();
        if rows != cols || rows == 0 || rows % 2 != 0 {
            return Err(Error::invalid(format!(
                "covariance matrix must be square with even positive dimension, got {rows}x{cols}"
            )));
        }
        if cm.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("covariance matrix has non-finite entries"));
        }
        let asym = linalg::max_asymmetry(&cm);
        let scale = cm.amax().max(1.0);
        if asym > SYMMETRY_REJECT * scale {
            return Err(Error::invalid(format!(
                "covariance matrix is not symmetric (max asymmetry {asym:e})"
            )));
        }
        if asym > SYMMETRY_WARN {
            warn!("symmetrising covariance matrix with asymmetry {asym:e}");
        }
        Ok(Self { n_modes: rows / 2, cm: linalg::symmetrize(&cm) })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn cm(&self) -> &DMatrix<f64> {
        &self.cm
    }

    pub fn into_cm(self) -> DMatrix<f64> {
        self.cm
    }

    /// The `2×2` block `σ_ij` between modes `i` and `j`.
    pub fn block(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.cm.view((2 * i, 2 * j), (2, 2)).into_owned()
    }

    /// Reduced state of the listed modes, in the given order.
    pub fn reduced(&self, modes: &[usize]) -> Result<GaussianState> {
        check_modes(self.n_modes, modes)?;
        let idx: Vec<usize> = modes.iter().flat_map(|&m| [2 * m, 2 * m + 1]).collect();
        let d = idx.len();
        let cm = DMatrix::from_fn(d, d, |a, b| self.cm[(idx[a], idx[b])]);
        GaussianState::new(cm)
    }
}

fn check_modes(n_modes: usize, modes: &[usize]) -> Result<()> {
    if let Some(&bad) = modes.iter().find(|&&m| m >= n_modes) {
        return Err(Error::invalid(format!("mode index {bad} out of range for {n_modes} modes")));
    }
    Ok(())
}

/// Symplectic eigenvalues of a raw symmetric matrix, ascending.
///
/// Computed as the moduli of the eigenvalues of `iΩσ`, which come in pairs.
pub fn symplectic_spectrum(cm: &DMatrix<f64>) -> Result<Vec<f64>> {
    let (rows, cols) = cm.shape();
    if rows != cols || rows % 2 != 0 || rows == 0 {
        return Err(Error::invalid(format!("expected a 2n x 2n matrix, got {rows}x{cols}")));
    }
    let asym = linalg::max_asymmetry(cm);
    if asym > SYMMETRY_REJECT * cm.amax().max(1.0) {
        return Err(Error::invalid(format!("matrix is not symmetric (max asymmetry {asym:e})")));
    }
    let n = rows / 2;
    let product = omega(n) * cm;
    let eig = product.complex_eigenvalues();
    let mut moduli: Vec<f64> = eig.iter().map(|z| z.norm()).collect();
    if moduli.iter().any(|x| !x.is_finite()) {
        return Err(Error::numerical("symplectic eigensolve produced non-finite values"));
    }
    moduli.sort_by(f64::total_cmp);
    Ok(moduli.chunks(2).map(|p| 0.5 * (p[0] + p[1])).collect())
}

pub fn symplectic_eigenvalues(state: &GaussianState) -> Result<Vec<f64>> {
    symplectic_spectrum(&state.cm)
}

/// Outcome of the uncertainty-relation test `σ + iΩ ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BonaFideReport {
    pub valid: bool,
    pub min_eigenvalue: f64,
}

pub fn check_bona_fide(state: &GaussianState) -> BonaFideReport {
    let form = symplectic_form(state.n_modes).expect("state has modes");
    let m = linalg::to_complex(&state.cm) + form.i_omega();
    let min_eigenvalue = linalg::hermitian_eigenvalues(&m)[0];
    BonaFideReport { valid: min_eigenvalue >= -BONA_FIDE_TOL, min_eigenvalue }
}

/// Flips the sign of the momentum quadrature of every listed mode: `PσP`.
pub fn partial_transpose(state: &GaussianState, transposed_modes: &[usize]) -> Result<GaussianState> {
    check_modes(state.n_modes, transposed_modes)?;
    let dim = 2 * state.n_modes;
    let mut sign = vec![1.0; dim];
    for &m in transposed_modes {
        sign[2 * m + 1] = -1.0;
    }
    let cm = DMatrix::from_fn(dim, dim, |i, j| sign[i] * sign[j] * state.cm[(i, j)]);
    Ok(GaussianState { n_modes: state.n_modes, cm })
}

/// `V f(D) V⁻¹` for a diagonalisable complex matrix `M = V D V⁻¹`.
///
/// `f` is applied to the eigenvalues as given, so `|z| z.sqrt()` yields the
/// principal square root. Fails with a numerical error carrying the condition
/// estimate when the eigenbasis is defective or worse than `1e12`.
pub fn matrix_function<F>(m: &DMatrix<C64>, f: F) -> Result<DMatrix<C64>>
where
    F: Fn(C64) -> C64,
{
    let eig = linalg::eigen(m)?;
    let mut scaled = eig.vectors.clone();
    for (j, &lambda) in eig.values.iter().enumerate() {
        let fl = f(lambda);
        for i in 0..scaled.nrows() {
            scaled[(i, j)] *= fl;
        }
    }
    Ok(scaled * eig.inverse)
}

/// Convenience wrapper for real matrices.
pub fn matrix_function_real<F>(m: &DMatrix<f64>, f: F) -> Result<DMatrix<C64>>
where
    F: Fn(C64) -> C64,
{
    matrix_function(&linalg::to_complex(m), f)
}
