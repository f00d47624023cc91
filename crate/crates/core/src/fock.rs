//! Truncated Fock-space reference implementation.
//!
//! Density matrices of one or two modes are built from their number-basis
//! expansions and evolved under the time-dependent master equation
//!
//! ```text
//! dρ/dt = (Δ+γ)/2 (2aρa† − a†aρ − ρa†a) + (Δ−γ)/2 (2a†ρa − aa†ρ − ρaa†)
//! ```
//!
//! acting on the first mode. Fidelity, negativity and the Petz-Rényi
//! quasi-entropy are then computed by plain linear algebra, which makes this
//! module an independent check on the covariance-matrix formulas.
//!
//! The basis index of `|n₁, n₂⟩` is `n₁(c+1) + n₂` for cutoff `c`. Matrices
//! are stored as sorted lists of structurally non-zero entries: the states
//! and the dissipator only populate a few "charge" sectors, so a two-mode
//! matrix at cutoff 80 has under a million entries instead of forty million.
//! The linear algebra works block by block on the connected components of the
//! sparsity pattern.

use std::collections::{HashMap, HashSet};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::channel::{BathSpec, Channel};
use crate::linalg::C64;
use crate::states::{StateFamily, StateSpec};
use crate::{Error, Result};

pub const DEFAULT_CUTOFF: usize = 40;

/// Construction fails when the truncated state misses more weight than this.
pub const MAX_LEAKAGE: f64 = 1e-6;

/// Local error target of the integrator.
pub const STEP_TOL: f64 = 1e-9;

/// `ρ′` eigenvalues below this fraction of the largest are dropped from `ρ′^{1−κ}`.
pub const SPECTRAL_FLOOR: f64 = 1e-10;

/// Eigenvalues of `ρ′` between the floor and this fraction of the largest
/// form the resolution band of the quasi-entropy.
pub const TAIL_BAND: f64 = 1e-7;

/// Largest tolerated share of `Q_κ` coming from the resolution band, and
/// from the lower bound on what the dropped subspace would add.
pub const TAIL_TOL: f64 = 1e-4;

const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq)]
pub struct FockDensityMatrix {
    n_modes: usize,
    cutoff: usize,
    /// `(row, column, value)` sorted by row, then column.
    entries: Vec<(usize, usize, C64)>,
    leakage: f64,
}

impl FockDensityMatrix {
    /// Wrap a dense density matrix of dimension `(cutoff+1)^n_modes`.
    pub fn new(n_modes: usize, cutoff: usize, rho: DMatrix<C64>) -> Result<Self> {
        let dim = Self::check_shape(n_modes, cutoff)?;
        if rho.shape() != (dim, dim) {
            return Err(Error::invalid(format!(
                "expected a {dim}x{dim} matrix, got {}x{}",
                rho.nrows(),
                rho.ncols()
            )));
        }
        let mut entries = Vec::new();
        for i in 0..dim {
            for j in 0..dim {
                if rho[(i, j)] != ZERO {
                    entries.push((i, j, rho[(i, j)]));
                }
            }
        }
        Ok(Self::from_sorted(n_modes, cutoff, entries))
    }

    /// Build from `(row, column, value)` triples in any order.
    /// Repeated positions are summed.
    pub fn from_entries(n_modes: usize, cutoff: usize, mut entries: Vec<(usize, usize, C64)>) -> Result<Self> {
        let dim = Self::check_shape(n_modes, cutoff)?;
        if let Some(&(i, j, _)) = entries.iter().find(|e| e.0 >= dim || e.1 >= dim) {
            return Err(Error::invalid(format!("entry ({i}, {j}) outside a {dim}x{dim} matrix")));
        }
        entries.sort_by_key(|e| (e.0, e.1));
        let mut merged: Vec<(usize, usize, C64)> = Vec::with_capacity(entries.len());
        for (i, j, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => merged.push((i, j, v)),
            }
        }
        Ok(Self::from_sorted(n_modes, cutoff, merged))
    }

    fn check_shape(n_modes: usize, cutoff: usize) -> Result<usize> {
        if !(1..=2).contains(&n_modes) {
            return Err(Error::invalid(format!("Fock oracle handles one or two modes, got {n_modes}")));
        }
        if cutoff == 0 {
            return Err(Error::invalid("cutoff must be positive"));
        }
        Ok((cutoff + 1).pow(n_modes as u32))
    }

    fn from_sorted(n_modes: usize, cutoff: usize, entries: Vec<(usize, usize, C64)>) -> Self {
        let trace: f64 = entries.iter().filter(|e| e.0 == e.1).map(|e| e.2.re).sum();
        Self { n_modes, cutoff, entries, leakage: 1.0 - trace }
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn dim(&self) -> usize {
        (self.cutoff + 1).pow(self.n_modes as u32)
    }

    /// Stored `(row, column, value)` triples, sorted.
    pub fn entries(&self) -> &[(usize, usize, C64)] {
        &self.entries
    }

    /// Matrix element `⟨i|ρ|j⟩`.
    pub fn get(&self, i: usize, j: usize) -> C64 {
        match self.entries.binary_search_by_key(&(i, j), |e| (e.0, e.1)) {
            Ok(k) => self.entries[k].2,
            Err(_) => ZERO,
        }
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        for &(i, j, v) in &self.entries {
            m[(i, j)] = v;
        }
        m
    }

    /// `1 − Tr ρ`, the weight lost to truncation.
    pub fn leakage(&self) -> f64 {
        self.leakage
    }

    pub fn trace(&self) -> f64 {
        1.0 - self.leakage
    }

    /// Largest deviation from Hermiticity.
    pub fn hermiticity_error(&self) -> f64 {
        self.entries.iter().map(|&(i, j, v)| (v - self.get(j, i).conj()).norm()).fold(0.0, f64::max)
    }

    /// `ρ₁ ⊗ ρ₂` of two single-mode matrices with the same cutoff.
    pub fn tensor(a: &Self, b: &Self) -> Result<Self> {
        if a.n_modes != 1 || b.n_modes != 1 || a.cutoff != b.cutoff {
            return Err(Error::invalid("tensor product needs two one-mode matrices with equal cutoff"));
        }
        let n = a.cutoff + 1;
        let mut entries = Vec::with_capacity(a.entries.len() * b.entries.len());
        for &(i, j, v) in &a.entries {
            for &(k, l, w) in &b.entries {
                entries.push((i * n + k, j * n + l, v * w));
            }
        }
        Self::from_entries(2, a.cutoff, entries)
    }

    /// Level of `mode` in basis state `index`.
    fn level(&self, index: usize, mode: usize) -> usize {
        (index / self.stride(mode)) % (self.cutoff + 1)
    }

    fn stride(&self, mode: usize) -> usize {
        (self.cutoff + 1).pow((self.n_modes - 1 - mode) as u32)
    }

    /// Mean photon number of `mode`.
    pub fn mean_photons(&self, mode: usize) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.0 == e.1)
            .map(|&(i, _, v)| self.level(i, mode) as f64 * v.re)
            .sum()
    }

    /// Covariance matrix `σᵢⱼ = ½⟨{ΔRᵢ, ΔRⱼ}⟩` with `x = a + a†`, `p = −i(a − a†)`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.n_modes;
        // ladder operators b = (a₁, a₁†, a₂, a₂†)
        let ladders: Vec<(usize, bool)> = (0..n).flat_map(|m| [(m, false), (m, true)]).collect();
        let k = ladders.len();
        let first: Vec<C64> = ladders.iter().map(|&op| self.expect(&[op])).collect();
        let mut sym = DMatrix::<C64>::zeros(k, k);
        for u in 0..k {
            for v in 0..k {
                let uv = self.expect(&[ladders[u], ladders[v]]);
                let vu = self.expect(&[ladders[v], ladders[u]]);
                sym[(u, v)] = (uv + vu) * 0.5 - first[u] * first[v];
            }
        }
        // R = T b
        let i = C64::new(0.0, 1.0);
        let one = C64::new(1.0, 0.0);
        let mut t = DMatrix::<C64>::zeros(2 * n, k);
        for m in 0..n {
            t[(2 * m, 2 * m)] = one;
            t[(2 * m, 2 * m + 1)] = one;
            t[(2 * m + 1, 2 * m)] = -i;
            t[(2 * m + 1, 2 * m + 1)] = i;
        }
        let cm = &t * sym * t.transpose();
        DMatrix::from_fn(2 * n, 2 * n, |r, c| 0.5 * (cm[(r, c)].re + cm[(c, r)].re))
    }

    /// `Tr(ρ O₁ O₂ …)` for a product of ladder operators `(mode, dagger)`.
    fn expect(&self, ops: &[(usize, bool)]) -> C64 {
        let mut acc = ZERO;
        'entries: for &(row, col, v) in &self.entries {
            // ⟨col|O|row⟩, applying the rightmost operator first
            let mut index = row;
            let mut coeff = 1.0;
            for &(mode, dagger) in ops.iter().rev() {
                let level = self.level(index, mode);
                let stride = self.stride(mode);
                if dagger {
                    if level == self.cutoff {
                        continue 'entries;
                    }
                    coeff *= ((level + 1) as f64).sqrt();
                    index += stride;
                } else {
                    if level == 0 {
                        continue 'entries;
                    }
                    coeff *= (level as f64).sqrt();
                    index -= stride;
                }
            }
            if index == col {
                acc += v * coeff;
            }
        }
        acc
    }
}

fn pure(n_modes: usize, cutoff: usize, amplitudes: &[(usize, f64)]) -> Result<FockDensityMatrix> {
    let mut entries = Vec::with_capacity(amplitudes.len() * amplitudes.len());
    let amplitudes: Vec<_> = amplitudes.iter().copied().filter(|a| a.1 != 0.0).collect();
    for &(i, ci) in &amplitudes {
        for &(j, cj) in &amplitudes {
            entries.push((i, j, C64::new(ci * cj, 0.0)));
        }
    }
    FockDensityMatrix::from_entries(n_modes, cutoff, entries)
}

/// Number-basis density matrix of `spec` truncated at `cutoff` photons per mode.
///
/// ```
/// use qbm_gauss::fock::build_fock;
/// use qbm_gauss::states::StateSpec;
///
/// let rho = build_fock(&StateSpec::squeezed(0.8), 40).unwrap();
/// assert!((rho.mean_photons(0) - 0.8f64.sinh().powi(2)).abs() < 1e-6);
/// ```
pub fn build_fock(spec: &StateSpec, cutoff: usize) -> Result<FockDensityMatrix> {
    spec.validate()?;
    if cutoff == 0 {
        return Err(Error::invalid("cutoff must be positive"));
    }
    let n = cutoff + 1;
    let state = match spec.family {
        StateFamily::Vacuum => pure(1, cutoff, &[(0, 1.0)])?,
        StateFamily::Thermal => {
            let nb = spec.n_bar;
            let ratio = nb / (nb + 1.0);
            let mut p = 1.0 / (nb + 1.0);
            let mut entries = Vec::with_capacity(n);
            for k in 0..n {
                entries.push((k, k, C64::new(p, 0.0)));
                p *= ratio;
            }
            FockDensityMatrix::from_entries(1, cutoff, entries)?
        }
        StateFamily::Squeezed1 => {
            let th = spec.r.tanh();
            let mut c = 1.0 / spec.r.cosh().sqrt();
            let mut amps = Vec::new();
            let mut k = 0;
            while 2 * k <= cutoff {
                amps.push((2 * k, c));
                // c_{2k+2}/c_{2k} = −tanh r √((2k+1)/(2k+2))
                c *= -th * ((2 * k + 1) as f64 / (2 * k + 2) as f64).sqrt();
                k += 1;
            }
            pure(1, cutoff, &amps)?
        }
        StateFamily::Squeezed2 => {
            let th = spec.r.tanh();
            let mut c = 1.0 / spec.r.cosh();
            let mut amps = Vec::new();
            for k in 0..n {
                amps.push((k * n + k, c));
                c *= th;
            }
            pure(2, cutoff, &amps)?
        }
        StateFamily::BassetHound => {
            return Err(Error::invalid("the Fock oracle does not build three-mode states"))
        }
    };
    if state.leakage > MAX_LEAKAGE {
        return Err(Error::Truncation { leakage: state.leakage, limit: MAX_LEAKAGE });
    }
    Ok(state)
}

/// Entries reachable from the initial pattern and their neighbours under the
/// dissipators, which couple `(n₁, m₁)` only to `(n₁ ± 1, m₁ ± 1)`.
struct Sparsity {
    entries: Vec<(usize, usize)>,
    up: Vec<Option<usize>>,
    down: Vec<Option<usize>>,
    c_up: Vec<f64>,
    c_down: Vec<f64>,
    diag: Vec<f64>,
}

impl Sparsity {
    fn new(rho: &FockDensityMatrix) -> Self {
        let stride = rho.stride(0);
        let cutoff = rho.cutoff;
        let mut marked = HashSet::new();
        let mut entries = Vec::new();
        for &(i, j, _) in &rho.entries {
            let (n1, m1) = (rho.level(i, 0), rho.level(j, 0));
            let low = n1.min(m1);
            let (i0, j0) = (i - low * stride, j - low * stride);
            if !marked.insert((i0, j0)) {
                continue;
            }
            // the whole diagonal line through (n₁, m₁) is reachable
            for k in 0..=(cutoff - n1.max(m1) + low) {
                entries.push((i0 + k * stride, j0 + k * stride));
            }
        }
        entries.sort_unstable();
        let position: HashMap<(usize, usize), usize> = entries.iter().enumerate().map(|(k, &e)| (e, k)).collect();
        let len = entries.len();
        let (mut up, mut down) = (Vec::with_capacity(len), Vec::with_capacity(len));
        let (mut c_up, mut c_down, mut diag) = (Vec::with_capacity(len), Vec::with_capacity(len), Vec::with_capacity(len));
        for &(i, j) in &entries {
            let (n1, m1) = (rho.level(i, 0), rho.level(j, 0));
            up.push(if n1 < cutoff && m1 < cutoff { position.get(&(i + stride, j + stride)).copied() } else { None });
            down.push(if n1 > 0 && m1 > 0 { position.get(&(i - stride, j - stride)).copied() } else { None });
            c_up.push(2.0 * (((n1 + 1) * (m1 + 1)) as f64).sqrt());
            c_down.push(2.0 * ((n1 * m1) as f64).sqrt());
            diag.push((n1 + m1) as f64);
        }
        Self { entries, up, down, c_up, c_down, diag }
    }

    fn gather(&self, rho: &FockDensityMatrix) -> Vec<C64> {
        self.entries.iter().map(|&(i, j)| rho.get(i, j)).collect()
    }

    fn scatter(&self, template: &FockDensityMatrix, values: &[C64]) -> Result<FockDensityMatrix> {
        let position: HashMap<(usize, usize), usize> =
            self.entries.iter().enumerate().map(|(k, &e)| (e, k)).collect();
        let entries = self
            .entries
            .iter()
            .zip(values)
            .map(|(&(i, j), &v)| {
                let mirror = position.get(&(j, i)).map_or(ZERO, |&k| values[k].conj());
                (i, j, (v + mirror) * 0.5)
            })
            .collect();
        Ok(FockDensityMatrix::from_sorted(template.n_modes, template.cutoff, entries))
    }

    /// `out = L(t) x` with damping-side rate `k1 = (Δ+γ)/2` and heating-side rate `k2 = (Δ−γ)/2`.
    fn derivative(&self, x: &[C64], k1: f64, k2: f64, out: &mut [C64]) {
        for e in 0..x.len() {
            let mut d = x[e] * (-k1 * self.diag[e] - k2 * (self.diag[e] + 2.0));
            if let Some(u) = self.up[e] {
                d += x[u] * (k1 * self.c_up[e]);
            }
            if let Some(w) = self.down[e] {
                d += x[w] * (k2 * self.c_down[e]);
            }
            out[e] = d;
        }
    }
}

struct Integrator<'a> {
    sparsity: &'a Sparsity,
    channel: &'a Channel,
    k: [Vec<C64>; 4],
    tmp: Vec<C64>,
}

impl Integrator<'_> {
    fn rates(&self, t: f64) -> Result<(f64, f64)> {
        let g = self.channel.gamma(t);
        let d = self.channel.delta(t)?;
        Ok((0.5 * (d + g), 0.5 * (d - g)))
    }

    fn rk4(&mut self, y: &[C64], t: f64, h: f64, out: &mut [C64]) -> Result<()> {
        let n = y.len();
        let (a1, b1) = self.rates(t)?;
        let (a2, b2) = self.rates(t + 0.5 * h)?;
        let (a4, b4) = self.rates(t + h)?;
        self.sparsity.derivative(y, a1, b1, &mut self.k[0]);
        for e in 0..n {
            self.tmp[e] = y[e] + self.k[0][e] * (0.5 * h);
        }
        self.sparsity.derivative(&self.tmp, a2, b2, &mut self.k[1]);
        for e in 0..n {
            self.tmp[e] = y[e] + self.k[1][e] * (0.5 * h);
        }
        self.sparsity.derivative(&self.tmp, a2, b2, &mut self.k[2]);
        for e in 0..n {
            self.tmp[e] = y[e] + self.k[2][e] * h;
        }
        self.sparsity.derivative(&self.tmp, a4, b4, &mut self.k[3]);
        for e in 0..n {
            out[e] = y[e] + (self.k[0][e] + (self.k[1][e] + self.k[2][e]) * 2.0 + self.k[3][e]) * (h / 6.0);
        }
        Ok(())
    }
}

/// Evolve `rho0` through the master equation of `channel`, returning the state
/// at every point of `t_grid` (ascending, starting at 0).
pub fn evolve_fock_with(rho0: &FockDensityMatrix, t_grid: &[f64], channel: &Channel) -> Result<Vec<FockDensityMatrix>> {
    if t_grid.is_empty() || t_grid[0] != 0.0 || t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("time grid must be ascending and start at 0"));
    }
    let sparsity = Sparsity::new(rho0);
    let n = sparsity.entries.len();
    let mut integrator =
        Integrator { sparsity: &sparsity, channel, k: std::array::from_fn(|_| vec![ZERO; n]), tmp: vec![ZERO; n] };
    let mut y = sparsity.gather(rho0);
    let mut full = vec![ZERO; n];
    let mut half = vec![ZERO; n];
    let mut two = vec![ZERO; n];
    let mut out = vec![rho0.clone()];
    let mut t = 0.0;
    let mut h = 0.01 / channel.bath().omega_c().max(channel.bath().omega0() / 7.0);
    let h_min = 1e-12 * t_grid[t_grid.len() - 1].max(1.0);
    for &target in &t_grid[1..] {
        while t < target {
            let step = h.min(target - t);
            integrator.rk4(&y, t, step, &mut full)?;
            integrator.rk4(&y, t, 0.5 * step, &mut half)?;
            integrator.rk4(&half, t + 0.5 * step, 0.5 * step, &mut two)?;
            let err = two.iter().zip(&full).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / 15.0;
            let accepted = err <= STEP_TOL;
            if accepted {
                for e in 0..n {
                    y[e] = two[e] + (two[e] - full[e]) / 15.0;
                }
                t = if target - t <= step { target } else { t + step };
            }
            // a shortened final step says nothing about the stable step size
            if !(accepted && step < h) {
                let factor = if err == 0.0 { 2.0 } else { (0.9 * (STEP_TOL / err).powf(0.2)).clamp(0.2, 2.0) };
                h = step * factor;
            }
            if h < h_min {
                return Err(Error::numerical(format!("step size underflow at t = {t}")));
            }
        }
        out.push(sparsity.scatter(rho0, &y)?);
    }
    Ok(out)
}

/// [`evolve_fock_with`] on a validated channel for `bath`.
pub fn evolve_fock(rho0: &FockDensityMatrix, t_grid: &[f64], bath: &BathSpec) -> Result<Vec<FockDensityMatrix>> {
    evolve_fock_with(rho0, t_grid, &Channel::new(*bath)?)
}

/// Dense diagonal blocks of several matrices over the connected components of
/// their union pattern. `blocks[b][m]` is block `b` of matrix `m`, scaled by
/// `scales[m]`.
fn blocks(mats: &[&FockDensityMatrix], scales: &[f64]) -> Vec<Vec<DMatrix<C64>>> {
    let d = mats[0].dim();
    let mut parent: Vec<usize> = (0..d).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut used = vec![false; d];
    for m in mats {
        for &(i, j, _) in &m.entries {
            used[i] = true;
            used[j] = true;
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut block_of = vec![usize::MAX; d];
    let mut position = vec![0; d];
    let mut sizes: Vec<usize> = Vec::new();
    let mut root_block: HashMap<usize, usize> = HashMap::new();
    for i in 0..d {
        if !used[i] {
            continue;
        }
        let root = find(&mut parent, i);
        let next = sizes.len();
        let b = *root_block.entry(root).or_insert(next);
        if b == next {
            sizes.push(0);
        }
        block_of[i] = b;
        position[i] = sizes[b];
        sizes[b] += 1;
    }
    let mut out: Vec<Vec<DMatrix<C64>>> =
        sizes.iter().map(|&s| mats.iter().map(|_| DMatrix::zeros(s, s)).collect()).collect();
    for (k, m) in mats.iter().enumerate() {
        for &(i, j, v) in &m.entries {
            out[block_of[i]][k][(position[i], position[j])] = v * scales[k];
        }
    }
    out
}

/// Entries below this fraction of the largest are flushed to zero before an
/// eigendecomposition; left in, products of them underflow into subnormals
/// and can stall the QR iteration.
const FLUSH: f64 = 1e-60;

fn herm_eig(m: &DMatrix<C64>) -> Result<(Vec<f64>, DMatrix<C64>)> {
    let mut m = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let cut = FLUSH * m.iter().map(|v| v.norm()).fold(0.0, f64::max);
    m.apply(|v| {
        if v.norm() < cut {
            *v = ZERO;
        }
    });
    let eig = SymmetricEigen::new(m);
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("eigendecomposition of a density-matrix block did not converge"));
    }
    Ok((eig.eigenvalues.iter().copied().collect(), eig.eigenvectors))
}

fn herm_function(values: &[f64], vectors: &DMatrix<C64>, f: impl Fn(f64) -> f64) -> DMatrix<C64> {
    let mut scaled = vectors.clone();
    for (j, &v) in values.iter().enumerate() {
        let fv = f(v);
        for i in 0..scaled.nrows() {
            scaled[(i, j)] *= fv;
        }
    }
    scaled * vectors.adjoint()
}

fn compatible(a: &FockDensityMatrix, b: &FockDensityMatrix) -> Result<()> {
    if a.n_modes != b.n_modes || a.cutoff != b.cutoff {
        return Err(Error::invalid("density matrices have different shapes"));
    }
    Ok(())
}

/// Uhlmann fidelity `(Tr √(√ρ₁ ρ₂ √ρ₁))²` of the trace-normalized matrices.
pub fn fock_fidelity(a: &FockDensityMatrix, b: &FockDensityMatrix) -> Result<f64> {
    compatible(a, b)?;
    let mut root_sum = 0.0;
    for pair in blocks(&[a, b], &[1.0 / a.trace(), 1.0 / b.trace()]) {
        let (va, ua) = herm_eig(&pair[0])?;
        let sa = herm_function(&va, &ua, |v| v.max(0.0).sqrt());
        let (vm, _) = herm_eig(&(&sa * &pair[1] * &sa))?;
        root_sum += vm.iter().map(|v| v.max(0.0).sqrt()).sum::<f64>();
    }
    Ok((root_sum * root_sum).min(1.0))
}

/// `ρ` with indices of `mode` transposed.
pub fn fock_partial_transpose(rho: &FockDensityMatrix, mode: usize) -> Result<FockDensityMatrix> {
    if mode >= rho.n_modes {
        return Err(Error::invalid(format!("mode {mode} out of range")));
    }
    let stride = rho.stride(mode);
    let entries = rho
        .entries
        .iter()
        .map(|&(i, j, v)| {
            let (ni, nj) = (rho.level(i, mode), rho.level(j, mode));
            (i - ni * stride + nj * stride, j - nj * stride + ni * stride, v)
        })
        .collect();
    FockDensityMatrix::from_entries(rho.n_modes, rho.cutoff, entries)
}

/// `E_N = ln ‖ρ^{T_B}‖₁` (natural log) for the cut `part | rest` of a two-mode matrix.
pub fn fock_log_negativity(rho: &FockDensityMatrix, part: &[usize]) -> Result<f64> {
    if rho.n_modes != 2 || part.len() != 1 || part[0] > 1 {
        return Err(Error::invalid("Fock negativity needs a two-mode matrix and a one-mode cut"));
    }
    let pt = fock_partial_transpose(rho, part[0])?;
    let mut norm = 0.0;
    for block in blocks(&[&pt], &[1.0 / rho.trace()]) {
        let (v, _) = herm_eig(&block[0])?;
        norm += v.iter().map(|x| x.abs()).sum::<f64>();
    }
    Ok(norm.ln().max(0.0))
}

/// `Q_κ = Tr[ρ^κ ρ′^{1−κ}]` of the trace-normalized matrices.
///
/// Eigenvalues of `ρ′` below [`SPECTRAL_FLOOR`] times the largest are at the
/// level of rounding noise and are left out of `ρ′^{1−κ}`. The result is only
/// returned when it is resolved. The dropped subspace would add at least
/// `w·floor^{1−κ}`, where `w` is the weight of `ρ^κ` on it. The eigenvalues
/// just above the floor (up to [`TAIL_BAND`]) show how fast the sum is still
/// growing. Both must stay below [`TAIL_TOL`] of `Q_κ`. Pairs close to the
/// edge of the domain, where `Q_κ` is carried by ever higher photon numbers,
/// fail with a numerical error.
pub fn fock_quasi_entropy(a: &FockDensityMatrix, b: &FockDensityMatrix, kappa: f64) -> Result<f64> {
    compatible(a, b)?;
    if !(kappa > 1.0) {
        return Err(Error::invalid(format!("κ must exceed 1, got {kappa}")));
    }
    let pairs = blocks(&[a, b], &[1.0 / a.trace(), 1.0 / b.trace()]);
    let spectra = pairs.iter().map(|p| herm_eig(&p[1])).collect::<Result<Vec<_>>>()?;
    let top = spectra.iter().flat_map(|s| s.0.iter().copied()).fold(0.0, f64::max);
    let (floor, band) = (SPECTRAL_FLOOR * top, TAIL_BAND * top);
    let (mut q, mut tail, mut excluded) = (0.0, 0.0, 0.0);
    for (pair, (vb, ub)) in pairs.iter().zip(&spectra) {
        let (va, ua) = herm_eig(&pair[0])?;
        let pa = herm_function(&va, &ua, |v| v.max(0.0).powf(kappa));
        // weights ⟨v|ρ^κ|v⟩ on the eigenvectors of ρ′
        let weights = (ub.adjoint() * pa * ub).diagonal();
        for (&lambda, w) in vb.iter().zip(weights.iter()) {
            if lambda > floor {
                let c = w.re * lambda.powf(1.0 - kappa);
                q += c;
                if lambda <= band {
                    tail += c.abs();
                }
            } else {
                excluded += w.re.abs();
            }
        }
    }
    let missing = excluded * floor.powf(1.0 - kappa);
    if missing.max(tail) > TAIL_TOL * q {
        return Err(Error::numerical(format!(
            "Q_κ not resolved: band share {:.1e}, dropped share at least {:.1e}",
            tail / q,
            missing / q
        )));
    }
    Ok(q)
}

/// `D_κ = ln Q_κ / (κ − 1)` from [`fock_quasi_entropy`].
pub fn fock_petz_renyi(a: &FockDensityMatrix, b: &FockDensityMatrix, kappa: f64) -> Result<f64> {
    Ok(fock_quasi_entropy(a, b, kappa)?.ln() / (kappa - 1.0))
}

/// Parameters of the oracle-versus-Gaussian comparison.
///
/// Every `(r, T, α)` combination evolves the one-mode pair `|r − 0.2⟩, |r⟩`
/// and the two-mode pair of two-mode squeezed vacua with the same squeezings
/// through the channel with `ω₀`, `ω_c` fixed, and compares fidelity,
/// negativity of the more squeezed two-mode state and `D_κ` of the one-mode
/// pair at every time.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationGrid {
    pub squeezing: Vec<f64>,
    pub temperatures: Vec<f64>,
    pub alphas: Vec<f64>,
    pub times: Vec<f64>,
    pub omega0: f64,
    pub omega_c: f64,
    pub kappa: f64,
    /// Offset between the two squeezings of each pair.
    pub pair_offset: f64,
    pub cutoff_one_mode: usize,
    pub cutoff_two_mode: usize,
}

impl Default for ValidationGrid {
    fn default() -> Self {
        Self {
            squeezing: vec![0.3, 0.5, 0.8],
            temperatures: vec![10.0, 50.0],
            alphas: vec![0.1, 0.2],
            times: vec![0.0, 0.5, 1.0, 2.0, 5.0],
            omega0: 7.0,
            omega_c: 1.0,
            kappa: 2.0,
            pair_offset: 0.2,
            cutoff_one_mode: DEFAULT_CUTOFF,
            cutoff_two_mode: 40,
        }
    }
}

impl ValidationGrid {
    /// Same grid with both cutoffs doubled.
    pub fn doubled(&self) -> Self {
        Self { cutoff_one_mode: 2 * self.cutoff_one_mode, cutoff_two_mode: 2 * self.cutoff_two_mode, ..self.clone() }
    }
}

/// Oracle and Gaussian values at one grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationPoint {
    pub r: f64,
    pub temperature: f64,
    pub alpha: f64,
    pub t: f64,
    pub fidelity_one_mode: (f64, f64),
    pub fidelity_two_mode: (f64, f64),
    pub log_negativity: (f64, f64),
    /// Gaussian `D_κ`, present when the pair is inside the domain.
    pub petz_renyi_gaussian: Option<f64>,
    /// Oracle `D_κ`, present when the Gaussian value is and the oracle resolves it.
    pub petz_renyi_fock: Option<f64>,
}

impl ValidationPoint {
    pub fn fidelity_gap(&self) -> f64 {
        (self.fidelity_one_mode.0 - self.fidelity_one_mode.1)
            .abs()
            .max((self.fidelity_two_mode.0 - self.fidelity_two_mode.1).abs())
    }

    pub fn negativity_gap(&self) -> f64 {
        (self.log_negativity.0 - self.log_negativity.1).abs()
    }

    pub fn petz_renyi_gap(&self) -> Option<f64> {
        Some((self.petz_renyi_gaussian? - self.petz_renyi_fock?).abs())
    }

    /// Oracle values only, for cutoff comparisons.
    pub fn oracle_values(&self) -> [Option<f64>; 4] {
        [
            Some(self.fidelity_one_mode.1),
            Some(self.fidelity_two_mode.1),
            Some(self.log_negativity.1),
            self.petz_renyi_fock,
        ]
    }
}

fn validate_bath(grid: &ValidationGrid, r: f64, temperature: f64, alpha: f64) -> Result<Vec<ValidationPoint>> {
    use crate::channel::DiffusionForm;
    use crate::metrics::{fidelity, log_negativity, petz_renyi_condition, petz_renyi_entropy, PetzRenyiRequest};
    use crate::states::make_state;

    let bath = BathSpec::new(alpha, temperature, grid.omega0, grid.omega_c)?;
    let channel = Channel::new(bath)?.with_form(DiffusionForm::Exact);
    let r0 = r - grid.pair_offset;
    let specs = [
        StateSpec::squeezed(r0),
        StateSpec::squeezed(r),
        StateSpec::two_mode_squeezed(r0),
        StateSpec::two_mode_squeezed(r),
    ];
    let mut fock = Vec::with_capacity(4);
    let mut gauss = Vec::with_capacity(4);
    for spec in &specs {
        let cutoff = if spec.family.n_modes() == 1 { grid.cutoff_one_mode } else { grid.cutoff_two_mode };
        fock.push(evolve_fock_with(&build_fock(spec, cutoff)?, &grid.times, &channel)?);
        let initial = make_state(spec)?;
        let mut traj = Vec::with_capacity(grid.times.len());
        for &t in &grid.times {
            traj.push(channel.evolve(&initial, t, 0)?.state);
        }
        gauss.push(traj);
    }
    let mut points = Vec::with_capacity(grid.times.len());
    for (k, &t) in grid.times.iter().enumerate() {
        let petz_renyi_gaussian = match PetzRenyiRequest::new(grid.kappa, gauss[0][k].clone(), gauss[1][k].clone()) {
            Ok(request) if petz_renyi_condition(&request)?.holds => Some(petz_renyi_entropy(&request)?),
            // pure states at t = 0 are outside the domain
            _ => None,
        };
        let petz_renyi_fock = match petz_renyi_gaussian {
            Some(_) => match fock_petz_renyi(&fock[0][k], &fock[1][k], grid.kappa) {
                Ok(f) => Some(f),
                Err(Error::Numerical(_)) => None,
                Err(e) => return Err(e),
            },
            None => None,
        };
        points.push(ValidationPoint {
            r,
            temperature,
            alpha,
            t,
            fidelity_one_mode: (fidelity(&gauss[0][k], &gauss[1][k])?, fock_fidelity(&fock[0][k], &fock[1][k])?),
            fidelity_two_mode: (fidelity(&gauss[2][k], &gauss[3][k])?, fock_fidelity(&fock[2][k], &fock[3][k])?),
            log_negativity: (log_negativity(&gauss[3][k], &[1])?, fock_log_negativity(&fock[3][k], &[1])?),
            petz_renyi_gaussian,
            petz_renyi_fock,
        });
    }
    Ok(points)
}

/// Evaluate every point of `grid`, parallel over bath settings.
pub fn validate_against_gaussian(grid: &ValidationGrid) -> Result<Vec<ValidationPoint>> {
    use rayon::prelude::*;

    let mut jobs = Vec::new();
    for &r in &grid.squeezing {
        for &temperature in &grid.temperatures {
            for &alpha in &grid.alphas {
                jobs.push((r, temperature, alpha));
            }
        }
    }
    let results: Vec<Result<Vec<ValidationPoint>>> =
        jobs.par_iter().map(|&(r, temperature, alpha)| validate_bath(grid, r, temperature, alpha)).collect();
    let mut out = Vec::new();
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Largest change of any oracle value between two runs over the same grid.
pub fn max_oracle_change(a: &[ValidationPoint], b: &[ValidationPoint]) -> f64 {
    let mut worst: f64 = 0.0;
    for (p, q) in a.iter().zip(b) {
        for (x, y) in p.oracle_values().iter().zip(q.oracle_values()) {
            match (x, y) {
                (Some(x), Some(y)) => worst = worst.max((x - y).abs()),
                (None, None) => {}
                _ => return f64::INFINITY,
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{CoefficientSource, DiffusionForm};
    use crate::states::make_state;

    #[test]
    fn build_examples() {
        let vac = build_fock(&StateSpec::squeezed(0.0), 10).unwrap();
        assert_eq!(vac.get(0, 0), C64::new(1.0, 0.0));
        assert_eq!(vac.entries().len(), 1);
        assert_eq!(vac.trace(), 1.0);
        // r = 1 leaks about 2e-6 at the default cutoff
        assert!(matches!(build_fock(&StateSpec::squeezed(1.0), 40), Err(Error::Truncation { .. })));
        let sq = build_fock(&StateSpec::squeezed(1.0), 80).unwrap();
        assert!((sq.mean_photons(0) - 1f64.sinh().powi(2)).abs() < 1e-6);
        let th = build_fock(&StateSpec::thermal(1.0), 40).unwrap();
        assert!((th.trace() - (1.0 - 0.5f64.powi(41))).abs() < 1e-15);
        assert!(matches!(build_fock(&StateSpec::squeezed(2.0), 40), Err(Error::Truncation { .. })));
        assert!(build_fock(&StateSpec::basset_hound(0.5), 10).is_err());
    }

    #[test]
    fn moments_match_covariance_matrices() {
        for spec in [StateSpec::squeezed(0.5), StateSpec::thermal(0.7), StateSpec::two_mode_squeezed(0.4)] {
            let rho = build_fock(&spec, 40).unwrap();
            let cm = make_state(&spec).unwrap().into_cm();
            assert!((rho.covariance() - cm).amax() < 1e-8, "{spec:?}");
        }
    }

    #[test]
    fn identity_cases() {
        let a = build_fock(&StateSpec::thermal(0.8), 30).unwrap();
        assert!((fock_fidelity(&a, &a).unwrap() - 1.0).abs() < 1e-10);
        assert!((fock_quasi_entropy(&a, &a, 2.0).unwrap() - 1.0).abs() < 1e-10);
        let prod = FockDensityMatrix::tensor(&a, &build_fock(&StateSpec::squeezed(0.3), 30).unwrap()).unwrap();
        assert!(fock_log_negativity(&prod, &[1]).unwrap().abs() < 1e-10);
    }

    #[test]
    fn analytic_overlaps() {
        let a = build_fock(&StateSpec::squeezed(0.5), 40).unwrap();
        let b = build_fock(&StateSpec::squeezed(0.8), 40).unwrap();
        assert!((fock_fidelity(&a, &b).unwrap() - 1.0 / 0.3f64.cosh()).abs() < 1e-7);
        let t1 = build_fock(&StateSpec::two_mode_squeezed(0.5), 45).unwrap();
        let t2 = build_fock(&StateSpec::two_mode_squeezed(0.8), 45).unwrap();
        assert!((fock_fidelity(&t1, &t2).unwrap() - 0.3f64.cosh().powi(-2)).abs() < 1e-7);
        assert!((fock_log_negativity(&t2, &[1]).unwrap() - 1.6).abs() < 1e-6);
    }

    #[test]
    fn thermal_quasi_entropy() {
        let a = build_fock(&StateSpec::thermal(1.0), 60).unwrap();
        let b = build_fock(&StateSpec::thermal(2.0), 60).unwrap();
        assert!((fock_quasi_entropy(&a, &b, 2.0).unwrap() - 1.2).abs() < 1e-8);
        assert!((fock_fidelity(&a, &b).unwrap() - (6f64.sqrt() - 2f64.sqrt()).powi(-2)).abs() < 1e-8);
    }

    #[test]
    fn evolution_preserves_trace_and_reaches_thermal_occupation() {
        let bath = BathSpec::new(0.6, 2.0, 7.0, 1.0).unwrap();
        let ch = Channel::with_source(bath, CoefficientSource::ClosedForm);
        let vac = build_fock(&StateSpec::vacuum(), 30).unwrap();
        let grid = [0.0, 1.0, 40.0];
        let traj = evolve_fock_with(&vac, &grid, &ch).unwrap();
        assert_eq!(traj[0], vac);
        for rho in &traj {
            assert!((rho.trace() - 1.0).abs() < 1e-8);
            assert!(rho.hermiticity_error() < 1e-12);
        }
        let expect = (bath.thermal_variance() - 1.0) / 2.0;
        let exact = ch.with_form(DiffusionForm::Exact).point(40.0).unwrap();
        let gaussian = (exact.delta_gamma_exact * 2.0 + (-exact.big_gamma).exp() - 1.0) / 2.0;
        assert!((traj[2].mean_photons(0) - gaussian).abs() < 1e-7);
        assert!((traj[2].mean_photons(0) - expect).abs() < 1e-2 * expect);
    }

    #[test]
    fn partial_transpose_is_an_involution() {
        let t = build_fock(&StateSpec::two_mode_squeezed(0.3), 8).unwrap();
        let pt = fock_partial_transpose(&t, 1).unwrap();
        assert_eq!(fock_partial_transpose(&pt, 1).unwrap(), t);
        assert!(fock_partial_transpose(&t, 2).is_err());
    }
}
