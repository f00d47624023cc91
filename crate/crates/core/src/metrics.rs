//! Distinguishability and entanglement of Gaussian states.
//!
//! All functions take covariance matrices in the `ν ≥ 1` convention.
//! Fidelity formulas are written for `V = σ/2`, the convention in which the
//! vacuum has `V = 𝕀/2`, and the conversion happens internally.

use log::{debug, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{BathSpec, Channel, ChannelPoint};
use crate::linalg::{self, C64};
use crate::states::{make_state, StateSpec};
use crate::symplectic::{
    check_bona_fide, matrix_function, omega, partial_transpose, symplectic_spectrum, GaussianState,
};
use crate::{Error, Result};

/// Fidelities outside `[0, 1]` by more than this are logged before clipping.
pub const FIDELITY_CLIP_WARN: f64 = 1e-6;

/// Petz-Rényi inputs need every symplectic eigenvalue above `1 + PURITY_MARGIN`.
pub const PURITY_MARGIN: f64 = 1e-9;

/// Smallest eigenvalue of `σ′(κ−1) − σ(κ)` for which the entropy is defined.
pub const CONDITION_TOL: f64 = 1e-10;

const IMAG_TOL: f64 = 1e-9;
const PURE_ROOT_TOL: f64 = 1e-6;

fn same_modes(a: &GaussianState, b: &GaussianState) -> Result<usize> {
    if a.n_modes() != b.n_modes() {
        return Err(Error::invalid(format!(
            "states have {} and {} modes",
            a.n_modes(),
            b.n_modes()
        )));
    }
    Ok(a.n_modes())
}

fn require_bona_fide(s: &GaussianState, name: &str) -> Result<()> {
    let report = check_bona_fide(s);
    if !report.valid {
        return Err(Error::invalid(format!(
            "{name} is not bona fide (min eigenvalue {:e})",
            report.min_eigenvalue
        )));
    }
    Ok(())
}

fn clip_fidelity(f: f64) -> Result<f64> {
    if !f.is_finite() {
        return Err(Error::numerical(format!("fidelity evaluated to {f}")));
    }
    let clipped = f.clamp(0.0, 1.0);
    if (f - clipped).abs() > FIDELITY_CLIP_WARN {
        warn!("fidelity {f} clipped to {clipped}");
    }
    Ok(clipped)
}

/// Uhlmann fidelity of two zero-mean Gaussian states with any number of modes.
///
/// ```
/// use qbm_gauss::metrics::fidelity_general;
/// use qbm_gauss::states::{make_state, StateSpec};
///
/// let a = make_state(&StateSpec::squeezed(2.0)).unwrap();
/// let b = make_state(&StateSpec::squeezed(3.0)).unwrap();
/// let f = fidelity_general(&a, &b).unwrap();
/// assert!((f - 1.0 / 1f64.cosh()).abs() < 1e-6);
/// ```
pub fn fidelity_general(a: &GaussianState, b: &GaussianState) -> Result<f64> {
    let n = same_modes(a, b)?;
    require_bona_fide(a, "first state")?;
    require_bona_fide(b, "second state")?;
    let w = omega(n);
    let v1 = a.cm() * 0.5;
    let v2 = b.cm() * 0.5;
    let sum = &v1 + &v2;
    let sum_inv = sum
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::numerical("V₁ + V₂ is singular"))?;
    let v_aux = w.transpose() * &sum_inv * (&w * 0.25 + &v2 * &w * &v1);
    // √(𝕀 + (V_aux Ω)⁻²/4) through the spectrum of V_aux Ω
    let a_mat = linalg::to_complex(&(&v_aux * &w));
    let root = matrix_function(&a_mat, |z| (C64::new(1.0, 0.0) + (z * z * 4.0).inv()).sqrt())?;
    let ident = DMatrix::<C64>::identity(2 * n, 2 * n);
    let inner = (root + ident) * linalg::to_complex(&v_aux) * C64::new(2.0, 0.0);
    let f_tot4 = linalg::det_complex(&inner);
    let det_sum = sum.determinant();
    if !(det_sum > 0.0) {
        return Err(Error::numerical("det(V₁ + V₂) is not positive"));
    }
    // pure inputs put the square root at a zero eigenvalue, where rounding surfaces as √ε
    if f_tot4.im.abs() > PURE_ROOT_TOL * det_sum {
        return Err(Error::numerical(format!("F_tot⁴ has imaginary part {:e}", f_tot4.im)));
    }
    let ratio = f_tot4.re.max(0.0) / det_sum;
    clip_fidelity(ratio.sqrt())
}

/// `det(V + iΩ/2)` for `V = σ/2`, real for a symmetric `σ`.
fn det_uncertainty(v: &DMatrix<f64>) -> f64 {
    let n = v.nrows() / 2;
    let m = linalg::to_complex(v) + linalg::to_complex(&omega(n)) * C64::new(0.0, 0.5);
    linalg::det_complex(&m).re
}

/// Closed-form fidelity for one- and two-mode states.
pub fn fidelity_closed(a: &GaussianState, b: &GaussianState) -> Result<f64> {
    let n = same_modes(a, b)?;
    let v1 = a.cm() * 0.5;
    let v2 = b.cm() * 0.5;
    let sigma = (&v1 + &v2).determinant();
    let lambda = 4f64.powi(n as i32) * det_uncertainty(&v1) * det_uncertainty(&v2);
    let lambda = lambda.max(0.0);
    let f = match n {
        1 => 1.0 / ((sigma + lambda).sqrt() - lambda.sqrt()),
        2 => {
            let w = omega(2);
            let prod = (&w * &v1) * (&w * &v2) - DMatrix::identity(4, 4) * 0.25;
            let eta = 16.0 * prod.determinant();
            let s = eta.max(0.0).sqrt() + lambda.sqrt();
            1.0 / (s - (s * s - sigma).max(0.0).sqrt())
        }
        _ => {
            return Err(Error::invalid(format!(
                "closed-form fidelity covers one and two modes, got {n}"
            )))
        }
    };
    clip_fidelity(f)
}

/// Closed form when available, the general formula otherwise.
pub fn fidelity(a: &GaussianState, b: &GaussianState) -> Result<f64> {
    if a.n_modes() <= 2 {
        fidelity_closed(a, b)
    } else {
        fidelity_general(a, b)
    }
}

fn check_bipartition(n: usize, part: &[usize]) -> Result<()> {
    if part.is_empty() || part.len() >= n {
        return Err(Error::invalid(format!(
            "bipartition must be a nonempty proper subset of {n} modes, got {part:?}"
        )));
    }
    let mut seen = vec![false; n];
    for &m in part {
        if m >= n {
            return Err(Error::invalid(format!("mode {m} out of range for {n} modes")));
        }
        if seen[m] {
            return Err(Error::invalid(format!("mode {m} listed twice")));
        }
        seen[m] = true;
    }
    Ok(())
}

/// Logarithmic negativity (natural log) across `part | rest`.
///
/// ```
/// use qbm_gauss::metrics::log_negativity;
/// use qbm_gauss::states::{make_state, StateSpec};
///
/// let tms = make_state(&StateSpec::two_mode_squeezed(2.0)).unwrap();
/// assert!((log_negativity(&tms, &[1]).unwrap() - 4.0).abs() < 1e-9);
/// ```
pub fn log_negativity(state: &GaussianState, part: &[usize]) -> Result<f64> {
    check_bipartition(state.n_modes(), part)?;
    let pt = partial_transpose(state, part)?;
    let spectrum = symplectic_spectrum(pt.cm())?;
    Ok(spectrum.iter().filter(|&&nu| nu < 1.0).map(|nu| -nu.ln()).sum())
}

/// Partial-transpose symplectic eigenvalues `(ν̃₋, ν̃₊)` of a two-mode state.
pub fn two_mode_pt_spectrum(state: &GaussianState) -> Result<(f64, f64)> {
    if state.n_modes() != 2 {
        return Err(Error::invalid("two-mode spectrum needs a two-mode state"));
    }
    let d1 = state.block(0, 0).determinant();
    let d2 = state.block(1, 1).determinant();
    let d12 = state.block(0, 1).determinant();
    let det = state.cm().determinant();
    let tilde = d1 + d2 - 2.0 * d12;
    let root = (tilde * tilde - 4.0 * det).max(0.0).sqrt();
    let hi2 = (tilde + root) / 2.0;
    let lo2 = if hi2 > 0.0 { det / hi2 } else { 0.0 };
    Ok((lo2.max(0.0).sqrt(), hi2.sqrt()))
}

/// Two-mode logarithmic negativity from the closed-form spectrum.
pub fn log_negativity_two_mode(state: &GaussianState) -> Result<f64> {
    let (lo, hi) = two_mode_pt_spectrum(state)?;
    Ok([lo, hi].iter().filter(|&&nu| nu < 1.0).map(|nu| -nu.ln()).sum())
}

/// Inputs of the Petz-Rényi relative entropy `D_κ(ρ‖ρ′)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PetzRenyiRequest {
    kappa: f64,
    rho: GaussianState,
    rho_prime: GaussianState,
}

impl PetzRenyiRequest {
    pub fn new(kappa: f64, rho: GaussianState, rho_prime: GaussianState) -> Result<Self> {
        if !(kappa > 1.0 && kappa.is_finite()) {
            return Err(Error::invalid(format!("κ must lie in (1, ∞), got {kappa}")));
        }
        same_modes(&rho, &rho_prime)?;
        for (s, name) in [(&rho, "ρ"), (&rho_prime, "ρ′")] {
            let nu = symplectic_spectrum(s.cm())?;
            if nu[0] <= 1.0 + PURITY_MARGIN {
                return Err(Error::invalid(format!(
                    "{name} must be strictly mixed, smallest symplectic eigenvalue is {}",
                    nu[0]
                )));
            }
        }
        Ok(Self { kappa, rho, rho_prime })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn rho(&self) -> &GaussianState {
        &self.rho
    }

    pub fn rho_prime(&self) -> &GaussianState {
        &self.rho_prime
    }
}

fn is_integer(p: f64) -> bool {
    p.fract() == 0.0 && p.abs() < 64.0
}

fn matrix_power(m: &DMatrix<C64>, p: f64) -> Result<DMatrix<C64>> {
    if is_integer(p) && p >= 0.0 {
        let mut out = DMatrix::<C64>::identity(m.nrows(), m.ncols());
        for _ in 0..p as usize {
            out = &out * m;
        }
        Ok(out)
    } else {
        matrix_function(m, |z| z.powf(p))
    }
}

/// `σ(p) = [(𝕀 + A⁻¹)^p + (𝕀 − A⁻¹)^p][(𝕀 + A⁻¹)^p − (𝕀 − A⁻¹)^p]⁻¹ iΩ` with `A = σ iΩ`.
pub fn sigma_power(state: &GaussianState, p: f64) -> Result<DMatrix<f64>> {
    let n = state.n_modes();
    let i_omega = linalg::to_complex(&omega(n)) * C64::new(0.0, 1.0);
    let a = linalg::to_complex(state.cm()) * &i_omega;
    let a_inv = a.try_inverse().ok_or_else(|| Error::numerical("σ iΩ is singular"))?;
    let ident = DMatrix::<C64>::identity(2 * n, 2 * n);
    let plus = matrix_power(&(&ident + &a_inv), p)?;
    let minus = matrix_power(&(&ident - &a_inv), p)?;
    let den = (&plus - &minus)
        .try_inverse()
        .ok_or_else(|| Error::numerical(format!("denominator of σ({p}) is singular")))?;
    let out = (&plus + &minus) * den * i_omega;
    let scale = out.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    let imag = linalg::max_abs_imag(&out);
    if imag > IMAG_TOL * scale {
        return Err(Error::numerical(format!("σ({p}) has imaginary part {imag:e}")));
    }
    Ok(linalg::symmetrize(&linalg::real_part(&out)))
}

/// Result of the domain test `σ′(κ−1) − σ(κ) > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub holds: bool,
    pub min_eigenvalue: f64,
}

fn condition_matrix(req: &PetzRenyiRequest) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let s_k = sigma_power(&req.rho, req.kappa)?;
    let sp_k1 = sigma_power(&req.rho_prime, req.kappa - 1.0)?;
    let diff = linalg::symmetrize(&(&sp_k1 - &s_k));
    Ok((diff, s_k, sp_k1))
}

pub fn petz_renyi_condition(req: &PetzRenyiRequest) -> Result<ConditionReport> {
    let (diff, _, _) = condition_matrix(req)?;
    let min_eigenvalue = linalg::symmetric_eigenvalues(&diff)[0];
    Ok(ConditionReport { holds: min_eigenvalue > CONDITION_TOL, min_eigenvalue })
}

/// `√det((σ + iΩ)/2) = Π_k √(ν_k² − 1)/2`.
fn partition_factor(cm: &DMatrix<f64>) -> Result<f64> {
    let nu = symplectic_spectrum(cm)?;
    Ok(nu.iter().map(|v| (v * v - 1.0).max(0.0).sqrt() / 2.0).product())
}

/// Petz-Rényi relative entropy `D_κ(ρ‖ρ′) = ln Q_κ / (κ − 1)` (natural log).
///
/// ```
/// use qbm_gauss::metrics::{petz_renyi_entropy, PetzRenyiRequest};
/// use qbm_gauss::states::{make_state, StateSpec};
///
/// let rho = make_state(&StateSpec::thermal(1.0)).unwrap();
/// let rho_prime = make_state(&StateSpec::thermal(2.0)).unwrap();
/// let req = PetzRenyiRequest::new(2.0, rho, rho_prime).unwrap();
/// let d = petz_renyi_entropy(&req).unwrap();
/// assert!((d - (6.0f64 / 5.0).ln()).abs() < 1e-10);
/// ```
pub fn petz_renyi_entropy(req: &PetzRenyiRequest) -> Result<f64> {
    let (diff, s_k, sp_k1) = condition_matrix(req)?;
    let min_eigenvalue = linalg::symmetric_eigenvalues(&diff)[0];
    if !(min_eigenvalue > CONDITION_TOL) {
        return Err(Error::domain(format!(
            "σ′(κ−1) − σ(κ) is not positive definite (min eigenvalue {min_eigenvalue:e})"
        )));
    }
    let k = req.kappa;
    let z_rho = partition_factor(req.rho.cm())?;
    let z_rho_prime = partition_factor(req.rho_prime.cm())?;
    let z_k = partition_factor(&s_k)?;
    let z_k1 = partition_factor(&sp_k1)?;
    let det_half = (&diff * 0.5).determinant();
    if !(det_half > 0.0) {
        return Err(Error::numerical(format!("det of the condition matrix is {det_half:e}")));
    }
    // logs keep the tiny factors of nearly pure states representable
    let ln_q = (k - 1.0) * z_rho_prime.ln() - k * z_rho.ln() + z_k.ln() + z_k1.ln() - 0.5 * det_half.ln();
    if !ln_q.is_finite() {
        return Err(Error::numerical("Q_κ is not a positive finite number"));
    }
    let d = ln_q / (k - 1.0);
    if d < -1e-9 {
        debug!("negative Petz-Rényi entropy {d:e}");
    }
    Ok(d)
}

/// Count of sign changes of the discrete derivative of `values` on `t ∈ (lo, hi)`.
///
/// Each change marks a strict local extremum of the sampled curve. Flat steps
/// (exact ties) are skipped.
pub fn derivative_sign_changes(t: &[f64], values: &[f64], lo: f64, hi: f64) -> usize {
    let mut last = 0.0f64;
    let mut changes = 0;
    for i in 1..values.len().min(t.len()) {
        if !(t[i - 1] > lo && t[i] < hi) {
            continue;
        }
        let d = values[i] - values[i - 1];
        if d == 0.0 || !d.is_finite() {
            continue;
        }
        if last != 0.0 && d.signum() != last.signum() {
            changes += 1;
        }
        last = d;
    }
    changes
}

/// Which functional a [`MetricSeries`] carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Fidelity,
    LogNegativity,
    PetzRenyi,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Fidelity => "fidelity",
            MetricKind::LogNegativity => "log_negativity",
            MetricKind::PetzRenyi => "petz_renyi",
        }
    }
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "fidelity" => Ok(MetricKind::Fidelity),
            "log_negativity" | "negativity" | "en" => Ok(MetricKind::LogNegativity),
            "petz_renyi" | "renyi" | "entropy" => Ok(MetricKind::PetzRenyi),
            other => Err(Error::invalid(format!("unknown metric '{other}'"))),
        }
    }
}

/// A metric evaluated along the evolution of one state or a pair of states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub metric: MetricKind,
    pub t: Vec<f64>,
    /// `None` where the metric is undefined (entropy before `t*`).
    pub values: Vec<Option<f64>>,
    pub bath: BathSpec,
    pub states: Vec<StateSpec>,
    pub kappa: Option<f64>,
    pub t_star: Option<f64>,
}

impl MetricSeries {
    /// Defined values with their times.
    pub fn defined(&self) -> (Vec<f64>, Vec<f64>) {
        self.t
            .iter()
            .zip(&self.values)
            .filter_map(|(&t, v)| v.map(|v| (t, v)))
            .unzip()
    }
}

/// What to evaluate along a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRequest {
    pub metric: MetricKind,
    /// One state for negativity, the pair `(ρ, ρ′)` otherwise.
    pub states: Vec<StateSpec>,
    pub kappa: f64,
    /// Modes on one side of the cut for negativity.
    pub bipartition: Vec<usize>,
}

fn evolved(channel: &Channel, state: &GaussianState, point: &ChannelPoint) -> Result<GaussianState> {
    Ok(channel.apply(state, point, 0)?.state)
}

fn entropy_at(
    channel: &Channel,
    pair: &(GaussianState, GaussianState),
    point: &ChannelPoint,
    kappa: f64,
) -> Result<Option<f64>> {
    let rho = evolved(channel, &pair.0, point)?;
    let rho_prime = evolved(channel, &pair.1, point)?;
    let req = match PetzRenyiRequest::new(kappa, rho, rho_prime) {
        Ok(r) => r,
        Err(Error::InvalidArgument(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    match petz_renyi_entropy(&req) {
        Ok(d) => Ok(Some(d)),
        Err(Error::Domain(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn condition_at(
    channel: &Channel,
    pair: &(GaussianState, GaussianState),
    point: &ChannelPoint,
    kappa: f64,
) -> Result<bool> {
    let rho = evolved(channel, &pair.0, point)?;
    let rho_prime = evolved(channel, &pair.1, point)?;
    match PetzRenyiRequest::new(kappa, rho, rho_prime) {
        Ok(req) => Ok(petz_renyi_condition(&req)?.holds),
        Err(Error::InvalidArgument(_)) => Ok(false),
        Err(e) => Err(e),
    }
}

fn build_pair(specs: &[StateSpec]) -> Result<(GaussianState, GaussianState)> {
    if specs.len() != 2 {
        return Err(Error::invalid(format!("expected a pair of states, got {}", specs.len())));
    }
    let a = make_state(&specs[0])?;
    let b = make_state(&specs[1])?;
    same_modes(&a, &b)?;
    Ok((a, b))
}

/// Settings of the critical-time search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalTimeOptions {
    /// Upper end of the bracket `(0, t_max]`, in units of `1/ω_c`.
    pub t_max: f64,
    /// Scan step, in units of `1/ω_c`.
    pub step: f64,
    /// Consecutive scan points that must satisfy the condition.
    pub hold: usize,
    /// Bisection tolerance, in units of `1/ω_c`.
    pub tol: f64,
}

impl Default for CriticalTimeOptions {
    fn default() -> Self {
        Self { t_max: 5.0, step: 0.005, hold: 10, tol: 1e-4 }
    }
}

/// Earliest time after which the Petz-Rényi domain condition holds for the
/// evolved pair `(ρ, ρ′)`.
pub fn critical_time(
    pair: (&StateSpec, &StateSpec),
    channel: &Channel,
    kappa: f64,
    options: &CriticalTimeOptions,
) -> Result<f64> {
    if !(kappa > 1.0) {
        return Err(Error::invalid(format!("κ must lie in (1, ∞), got {kappa}")));
    }
    let states = build_pair(&[*pair.0, *pair.1])?;
    let wc = channel.bath().omega_c();
    let t_max = options.t_max / wc;
    let step = options.step / wc;
    let grid = crate::channel::uniform_grid(t_max, step)?;
    let coeffs = channel.accumulate(&grid)?;
    let holds: Vec<bool> = (0..coeffs.len())
        .into_par_iter()
        .map(|i| condition_at(channel, &states, &coeffs.point(i), kappa))
        .collect::<Result<Vec<bool>>>()?;
    let first = (1..holds.len()).find(|&i| {
        let end = (i + options.hold).min(holds.len() - 1);
        holds[i..=end].iter().all(|&h| h)
    });
    let Some(i) = first else {
        return Err(Error::NotFound(format!(
            "Petz-Rényi condition never holds on (0, {}]",
            options.t_max
        )));
    };
    let mut lo = grid[i - 1];
    let mut hi = grid[i];
    let check = |t: f64| -> Result<bool> { condition_at(channel, &states, &channel.point(t)?, kappa) };
    while hi - lo > options.tol / wc {
        let mid = 0.5 * (lo + hi);
        if check(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // dense rescan of the holding window
    let window = options.hold as f64 * step;
    for k in 1..=20 {
        let t = hi + window * k as f64 / 20.0;
        if t <= t_max && !check(t)? {
            warn!("Petz-Rényi condition fails again at t = {t} after onset {hi}");
            break;
        }
    }
    Ok(hi)
}

/// Evaluate `request` on `t_grid` through `channel`.
pub fn compute_series(request: &SeriesRequest, channel: &Channel, t_grid: &[f64]) -> Result<MetricSeries> {
    let coeffs = channel.accumulate(t_grid)?;
    let points: Vec<ChannelPoint> = coeffs.points().collect();
    let mut t_star = None;
    let values: Vec<Option<f64>> = match request.metric {
        MetricKind::Fidelity => {
            let pair = build_pair(&request.states)?;
            points
                .par_iter()
                .map(|p| {
                    let a = evolved(channel, &pair.0, p)?;
                    let b = evolved(channel, &pair.1, p)?;
                    fidelity(&a, &b).map(Some)
                })
                .collect::<Result<_>>()?
        }
        MetricKind::LogNegativity => {
            let spec = request
                .states
                .first()
                .ok_or_else(|| Error::invalid("negativity needs a state"))?;
            let state = make_state(spec)?;
            let part = if request.bipartition.is_empty() { vec![0] } else { request.bipartition.clone() };
            check_bipartition(state.n_modes(), &part)?;
            points
                .par_iter()
                .map(|p| log_negativity(&evolved(channel, &state, p)?, &part).map(Some))
                .collect::<Result<_>>()?
        }
        MetricKind::PetzRenyi => {
            let pair = build_pair(&request.states)?;
            let values: Vec<Option<f64>> = points
                .par_iter()
                .map(|p| entropy_at(channel, &pair, p, request.kappa))
                .collect::<Result<_>>()?;
            let options = CriticalTimeOptions::default();
            t_star = match critical_time((&request.states[0], &request.states[1]), channel, request.kappa, &options) {
                Ok(t) => Some(t),
                Err(Error::NotFound(msg)) => {
                    warn!("{msg}");
                    None
                }
                Err(e) => return Err(e),
            };
            values
        }
    };
    Ok(MetricSeries {
        metric: request.metric,
        t: t_grid.to_vec(),
        values,
        bath: *channel.bath(),
        states: request.states.clone(),
        kappa: (request.metric == MetricKind::PetzRenyi).then_some(request.kappa),
        t_star,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{BathSpec, CoefficientSource, NoiseScaling};
    use crate::states::StateFamily;
    use proptest::prelude::*;

    fn st(spec: StateSpec) -> GaussianState {
        make_state(&spec).unwrap()
    }

    fn random_state(n: usize, seeds: &[f64]) -> GaussianState {
        // thermal diagonal dressed by local squeezers/rotations and a beam splitter
        let mut cm = DMatrix::<f64>::zeros(2 * n, 2 * n);
        for k in 0..n {
            let nu = 1.0 + 2.0 * seeds[k].abs();
            cm[(2 * k, 2 * k)] = nu;
            cm[(2 * k + 1, 2 * k + 1)] = nu;
        }
        let mut s = DMatrix::<f64>::identity(2 * n, 2 * n);
        for k in 0..n {
            let r = seeds[n + k];
            let th = 3.0 * seeds[2 * n + k];
            let (sn, cs) = th.sin_cos();
            let rot = DMatrix::from_row_slice(2, 2, &[cs, sn, -sn, cs]);
            let sq = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![r.exp(), (-r).exp()]));
            let local = rot * sq;
            let mut big = DMatrix::<f64>::identity(2 * n, 2 * n);
            big.view_mut((2 * k, 2 * k), (2, 2)).copy_from(&local);
            s = big * s;
        }
        if n == 2 {
            let th = seeds[3 * n];
            let (sn, cs) = th.sin_cos();
            let mut bs = DMatrix::<f64>::zeros(4, 4);
            for i in 0..2 {
                bs[(i, i)] = cs;
                bs[(i + 2, i + 2)] = cs;
                bs[(i, i + 2)] = sn;
                bs[(i + 2, i)] = -sn;
            }
            s = bs * s;
        }
        GaussianState::new(&s * cm * s.transpose()).unwrap()
    }

    #[test]
    fn fidelity_anchor_values() {
        let a = st(StateSpec::squeezed(2.0));
        let b = st(StateSpec::squeezed(3.0));
        assert!((fidelity_closed(&a, &b).unwrap() - 1.0 / 1f64.cosh()).abs() < 1e-10);
        let th1 = st(StateSpec::thermal(1.0));
        let th2 = st(StateSpec::thermal(2.0));
        let expect = (6f64.sqrt() - 2f64.sqrt()).powi(-2);
        assert!((fidelity_general(&th1, &th2).unwrap() - expect).abs() < 1e-12);
        assert!((fidelity_closed(&th1, &th2).unwrap() - expect).abs() < 1e-12);
        let t2 = st(StateSpec::two_mode_squeezed(2.0));
        let t3 = st(StateSpec::two_mode_squeezed(3.0));
        let expect = 1.0 / 1f64.cosh().powi(2);
        assert!((fidelity_closed(&t2, &t3).unwrap() - expect).abs() < 1e-8);
        assert!((fidelity_general(&t2, &t3).unwrap() - expect).abs() < 1e-6);
    }

    #[test]
    fn fidelity_of_identical_states() {
        for spec in [StateSpec::thermal(0.7), StateSpec::squeezed(1.3), StateSpec::two_mode_squeezed(0.8)] {
            let s = st(spec);
            assert!((fidelity_general(&s, &s).unwrap() - 1.0).abs() < 1e-10);
            assert!((fidelity_closed(&s, &s).unwrap() - 1.0).abs() < 1e-10);
        }
        let bh = st(StateSpec::basset_hound(0.5));
        assert!((fidelity_general(&bh, &bh).unwrap() - 1.0).abs() < 1e-6);
        assert!(fidelity_closed(&bh, &bh).is_err());
        assert!(fidelity_general(&bh, &st(StateSpec::vacuum())).is_err());
    }

    #[test]
    fn negativity_anchors() {
        let vv = GaussianState::new(DMatrix::identity(4, 4)).unwrap();
        assert_eq!(log_negativity(&vv, &[0]).unwrap(), 0.0);
        let tms = st(StateSpec::two_mode_squeezed(2.0));
        assert!((log_negativity(&tms, &[0]).unwrap() - 4.0).abs() < 1e-9);
        assert!((log_negativity_two_mode(&tms).unwrap() - 4.0).abs() < 1e-9);
        let bh = st(StateSpec::basset_hound(2.0));
        let en = log_negativity(&bh, &[0]).unwrap();
        assert!((en - 4.0).abs() < 1e-8, "{en}");
        assert!(log_negativity(&tms, &[]).is_err());
        assert!(log_negativity(&tms, &[0, 1]).is_err());
        assert!(log_negativity(&bh, &[1, 1]).is_err());
        assert!(log_negativity(&bh, &[3]).is_err());
    }

    #[test]
    fn petz_renyi_thermal_anchor() {
        let req = PetzRenyiRequest::new(2.0, st(StateSpec::thermal(1.0)), st(StateSpec::thermal(2.0))).unwrap();
        assert!(petz_renyi_condition(&req).unwrap().holds);
        assert!((petz_renyi_entropy(&req).unwrap() - 1.2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn petz_renyi_identical_states_vanish() {
        for k in [1.5, 2.0, 3.0] {
            for s in [st(StateSpec::thermal(0.8)), random_state(2, &[0.3, 0.9, 0.2, -0.4, 0.5, 1.1, 0.7])] {
                let req = PetzRenyiRequest::new(k, s.clone(), s).unwrap();
                assert!(petz_renyi_entropy(&req).unwrap().abs() < 1e-9);
            }
        }
    }

    #[test]
    fn petz_renyi_rejects_bad_requests() {
        let th = st(StateSpec::thermal(1.0));
        assert!(PetzRenyiRequest::new(0.5, th.clone(), th.clone()).is_err());
        assert!(PetzRenyiRequest::new(1.0, th.clone(), th.clone()).is_err());
        assert!(PetzRenyiRequest::new(2.0, st(StateSpec::vacuum()), th.clone()).is_err());
        // ρ′ much purer than ρ breaks the domain condition
        let req = PetzRenyiRequest::new(2.0, st(StateSpec::thermal(3.0)), st(StateSpec::thermal(0.05))).unwrap();
        assert!(!petz_renyi_condition(&req).unwrap().holds);
        assert!(matches!(petz_renyi_entropy(&req), Err(Error::Domain(_))));
    }

    #[test]
    fn sigma_power_special_cases() {
        let s = random_state(2, &[0.4, 0.1, 0.3, -0.2, 0.6, 0.9, 0.2]);
        let one = sigma_power(&s, 1.0).unwrap();
        assert!((&one - s.cm()).amax() < 1e-10);
        let two = sigma_power(&s, 2.0).unwrap();
        let w = omega(2);
        let expect = (s.cm() + &w * s.cm().clone().try_inverse().unwrap() * w.transpose()) * 0.5;
        assert!((&two - expect).amax() < 1e-10);
        // symplectic spectrum maps through g(ν) = ((ν+1)^κ + (ν−1)^κ)/((ν+1)^κ − (ν−1)^κ)
        let k = 2.5;
        let nu = symplectic_spectrum(s.cm()).unwrap();
        let got = symplectic_spectrum(&sigma_power(&s, k).unwrap()).unwrap();
        for (v, g) in nu.iter().zip(got) {
            let (p, m) = ((v + 1.0).powf(k), (v - 1.0).powf(k));
            assert!(((p + m) / (p - m) - g).abs() < 1e-9);
        }
    }

    #[test]
    fn condition_grows_as_kappa_approaches_one() {
        let rho = st(StateSpec::thermal(1.0));
        let rho_prime = st(StateSpec::thermal(2.0));
        let mut prev = f64::NEG_INFINITY;
        for eps in [1e-1, 1e-2, 1e-3] {
            let req = PetzRenyiRequest::new(1.0 + eps, rho.clone(), rho_prime.clone()).unwrap();
            let rep = petz_renyi_condition(&req).unwrap();
            assert!(rep.holds);
            assert!(rep.min_eigenvalue > prev);
            prev = rep.min_eigenvalue;
        }
        assert!(prev > 100.0);
    }

    #[test]
    fn sign_change_counter() {
        let t = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(derivative_sign_changes(&t, &[0.0, 1.0, 0.5, 0.7, 0.7], -1.0, 10.0), 2);
        assert_eq!(derivative_sign_changes(&t, &[0.0, 1.0, 2.0, 3.0, 4.0], -1.0, 10.0), 0);
    }

    #[test]
    fn metric_kind_parsing() {
        assert_eq!("fidelity".parse::<MetricKind>().unwrap(), MetricKind::Fidelity);
        assert_eq!("log-negativity".parse::<MetricKind>().unwrap(), MetricKind::LogNegativity);
        assert_eq!("petz_renyi".parse::<MetricKind>().unwrap(), MetricKind::PetzRenyi);
        assert!("purity".parse::<MetricKind>().is_err());
    }

    #[test]
    fn one_mode_critical_time_high_coupling() {
        let bath = BathSpec::new(0.3, 50.0, 7.0, 1.0).unwrap();
        let ch = Channel::with_source(bath, CoefficientSource::ClosedForm).with_scaling(NoiseScaling::Uniform);
        let opts = CriticalTimeOptions { t_max: 1.0, ..Default::default() };
        let t = critical_time((&StateSpec::squeezed(2.0), &StateSpec::squeezed(3.0)), &ch, 2.0, &opts).unwrap();
        assert!((t - 0.06).abs() < 0.02, "{t}");
        assert_eq!(StateFamily::Squeezed1.n_modes(), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn closed_and_general_fidelity_agree(seeds in proptest::collection::vec(-1.0f64..1.0, 14)) {
            for n in [1usize, 2] {
                let a = random_state(n, &seeds[..7]);
                let b = random_state(n, &seeds[7..]);
                let fg = fidelity_general(&a, &b).unwrap();
                let fc = fidelity_closed(&a, &b).unwrap();
                prop_assert!((fg - fc).abs() < 1e-8, "n = {}: {} vs {}", n, fg, fc);
                prop_assert!((fg - fidelity_general(&b, &a).unwrap()).abs() < 1e-10);
                prop_assert!((fc - fidelity_closed(&b, &a).unwrap()).abs() < 1e-10);
            }
        }

        #[test]
        fn negativity_closed_spectrum_matches_eigensolve(seeds in proptest::collection::vec(-1.0f64..1.0, 7)) {
            let s = random_state(2, &seeds);
            let general = log_negativity(&s, &[1]).unwrap();
            let closed = log_negativity_two_mode(&s).unwrap();
            prop_assert!(general >= 0.0);
            prop_assert!((general - closed).abs() < 1e-9, "{} vs {}", general, closed);
        }

        #[test]
        fn petz_renyi_is_nonnegative(seeds in proptest::collection::vec(-1.0f64..1.0, 14)) {
            let a = random_state(2, &seeds[..7]);
            let b = random_state(2, &seeds[7..]);
            if let Ok(req) = PetzRenyiRequest::new(2.0, a, b) {
                if petz_renyi_condition(&req).unwrap().holds {
                    prop_assert!(petz_renyi_entropy(&req).unwrap() >= -1e-9);
                }
            }
        }
    }
}
