//! Shifted periodic cell problem `-(∇ + ik)·(a_Y (∇ + ik) ψ) = μ ψ` on `Y = (-pi, pi)^n`,
//! discretized by plane waves `e^{i l·y}`, `|l_j| <= M`.
//!
//! Galerkin entries are `H[l', l] = (l' + k)^T â[l' - l] (l + k)` where `â` are the
//! Fourier coefficients of `a_Y` from the trapezoid rule on `N = 4M` points per axis.
//! Coefficient vectors `c` represent `ψ = |Y|^{-1/2} Σ c_l e^{i l·y}`, so
//! `Σ |c_l|^2 = 1` is the `L²(Y)` normalization.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::eigen::{self, CVec, LobpcgOptions};
use crate::error::{Error, Result};
use crate::medium::{CoefMatrix, PeriodicMedium};

pub const DEFAULT_CUTOFF_1D: usize = 64;
pub const DEFAULT_CUTOFF_2D: usize = 24;
pub const DEFAULT_CUTOFF_3D: usize = 8;
pub const MIN_CUTOFF: usize = 4;
/// Relative eigen-residual tolerance.
pub const EIGEN_RTOL: f64 = 1e-9;
/// Basis sizes up to this use the dense Hermitian solver.
pub const DENSE_LIMIT: usize = 600;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

pub fn default_cutoff(dim: usize) -> usize {
    match dim {
        1 => DEFAULT_CUTOFF_1D,
        2 => DEFAULT_CUTOFF_2D,
        _ => DEFAULT_CUTOFF_3D,
    }
}

/// `|Y| = (2 pi)^n`.
pub fn cell_volume(dim: usize) -> f64 {
    (2.0 * PI).powi(dim as i32)
}

/// Strategy for extracting eigenpairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EigenMethod {
    /// Dense for small bases, LOBPCG otherwise.
    #[default]
    Auto,
    Dense,
    Lobpcg,
}

/// `k`-independent data: medium samples, their Fourier coefficients, FFT plans.
struct CellSampling {
    dim: usize,
    cutoff: usize,
    points: usize,
    modes: Vec<Vec<i64>>,
    grid_index: Vec<usize>,
    /// `a_ij` samples on the `N^n` grid, index `i * dim + j`.
    samples: Vec<Vec<f64>>,
    /// `â_ij` on the same index layout (frequency `m` stored at `m mod N`).
    fourier: Vec<Vec<Complex64>>,
    diagonal: bool,
    mean_trace: f64,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl CellSampling {
    fn new(medium: &PeriodicMedium, cutoff: usize) -> Result<Self> {
        let dim = medium.dim();
        let points = 4 * cutoff;
        let total = points.pow(dim as u32);
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(points);
        let ifft = planner.plan_fft_inverse(points);

        let mut samples = vec![vec![0.0; total]; dim * dim];
        let mut y = vec![0.0; dim];
        for flat in 0..total {
            let mut rem = flat;
            for d in (0..dim).rev() {
                y[d] = 2.0 * PI * (rem % points) as f64 / points as f64;
                rem /= points;
            }
            let a: CoefMatrix = medium.eval(&y);
            if !a.is_finite() {
                return Err(Error::NonFiniteCoefficient { y: y.clone() });
            }
            for i in 0..dim {
                for j in 0..dim {
                    samples[i * dim + j][flat] = a.get(i, j);
                }
            }
        }
        let diagonal = medium.is_diagonal();
        let scale = 1.0 / total as f64;
        let mut fourier = Vec::with_capacity(dim * dim);
        for field in &samples {
            let mut buf: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v * scale, 0.0)).collect();
            fft_nd(&mut buf, dim, points, fft.as_ref());
            if medium.reflection_symmetric() {
                // Even coefficients have real Fourier data; drop rounding residue.
                for z in buf.iter_mut() {
                    z.im = 0.0;
                }
            }
            fourier.push(buf);
        }
        let mean_trace = (0..dim).map(|i| fourier[i * dim + i][0].re).sum::<f64>() / dim as f64;

        let side = 2 * cutoff + 1;
        let count = side.pow(dim as u32);
        let mut modes = Vec::with_capacity(count);
        let mut grid_index = Vec::with_capacity(count);
        for b in 0..count {
            let mut rem = b;
            let mut l = vec![0i64; dim];
            for d in (0..dim).rev() {
                l[d] = (rem % side) as i64 - cutoff as i64;
                rem /= side;
            }
            grid_index.push(wrap_index(&l, points));
            modes.push(l);
        }
        Ok(Self { dim, cutoff, points, modes, grid_index, samples, fourier, diagonal, mean_trace, fft, ifft })
    }

    fn total(&self) -> usize {
        self.points.pow(self.dim as u32)
    }
}

fn wrap_index(l: &[i64], points: usize) -> usize {
    let n = points as i64;
    l.iter().fold(0usize, |acc, &v| acc * points + v.rem_euclid(n) as usize)
}

/// In-place multidimensional FFT on an `n^dim` row-major buffer.
fn fft_nd(buf: &mut [Complex64], dim: usize, n: usize, plan: &dyn Fft<f64>) {
    // Last axis is contiguous.
    plan.process(buf);
    let mut line = vec![ZERO; n];
    for axis in 0..dim.saturating_sub(1) {
        let stride = n.pow((dim - 1 - axis) as u32);
        let block = stride * n;
        for start in (0..buf.len()).step_by(block) {
            for offset in 0..stride {
                let base = start + offset;
                for (i, v) in line.iter_mut().enumerate() {
                    *v = buf[base + i * stride];
                }
                plan.process(&mut line);
                for (i, v) in line.iter().enumerate() {
                    buf[base + i * stride] = *v;
                }
            }
        }
    }
}

/// The Bloch operator at a fixed wave vector.
#[derive(Clone)]
pub struct BlochOperatorDiscretization {
    sampling: Arc<CellSampling>,
    k: Vec<f64>,
}

impl fmt::Debug for BlochOperatorDiscretization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BlochOperatorDiscretization")
            .field("k", &self.k)
            .field("cutoff", &self.sampling.cutoff)
            .field("basis", &self.sampling.modes.len())
            .finish()
    }
}

impl BlochOperatorDiscretization {
    /// Sample the medium and set up the plane-wave basis.
    pub fn assemble(medium: &PeriodicMedium, k: &[f64], cutoff: usize) -> Result<Self> {
        if cutoff < MIN_CUTOFF {
            return Err(Error::InvalidParameter(format!("mode cutoff {cutoff} below {MIN_CUTOFF}")));
        }
        check_k(medium.dim(), k)?;
        Ok(Self { sampling: Arc::new(CellSampling::new(medium, cutoff)?), k: k.to_vec() })
    }

    /// Same medium and basis at another wave vector (no resampling).
    pub fn with_k(&self, k: &[f64]) -> Result<Self> {
        check_k(self.dim(), k)?;
        Ok(Self { sampling: Arc::clone(&self.sampling), k: k.to_vec() })
    }

    pub fn dim(&self) -> usize {
        self.sampling.dim
    }

    pub fn k(&self) -> &[f64] {
        &self.k
    }

    pub fn cutoff(&self) -> usize {
        self.sampling.cutoff
    }

    pub fn basis_len(&self) -> usize {
        self.sampling.modes.len()
    }

    /// Integer frequencies of the basis, in coefficient order.
    pub fn modes(&self) -> &[Vec<i64>] {
        &self.sampling.modes
    }

    /// Position of `l = 0` in the basis.
    pub fn zero_mode(&self) -> usize {
        (self.basis_len() - 1) / 2
    }

    /// Dense Hermitian Galerkin matrix (symmetrized).
    pub fn matrix(&self) -> DMatrix<Complex64> {
        let s = &self.sampling;
        let n = s.dim;
        let nb = s.modes.len();
        let shifted: Vec<Vec<f64>> = s
            .modes
            .iter()
            .map(|l| l.iter().zip(&self.k).map(|(&li, &ki)| li as f64 + ki).collect())
            .collect();
        let mut h = DMatrix::from_element(nb, nb, ZERO);
        let mut diff = vec![0i64; n];
        for r in 0..nb {
            for c in 0..nb {
                for d in 0..n {
                    diff[d] = s.modes[r][d] - s.modes[c][d];
                }
                let g = wrap_index(&diff, s.points);
                let mut v = ZERO;
                for i in 0..n {
                    for j in 0..n {
                        if s.diagonal && i != j {
                            continue;
                        }
                        v += s.fourier[i * n + j][g] * (shifted[r][i] * shifted[c][j]);
                    }
                }
                h[(r, c)] = v;
            }
        }
        let ht = h.adjoint();
        (h + ht) * Complex64::new(0.5, 0.0)
    }

    /// Matrix-free product `y = H x` via FFTs on the sampling grid.
    pub fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        let s = &self.sampling;
        let n = s.dim;
        let total = s.total();
        let scale = 1.0 / total as f64;
        let mut grads: Vec<Vec<Complex64>> = Vec::with_capacity(n);
        for j in 0..n {
            let mut buf = vec![ZERO; total];
            for (b, l) in s.modes.iter().enumerate() {
                buf[s.grid_index[b]] = Complex64::new(0.0, l[j] as f64 + self.k[j]) * x[b];
            }
            fft_nd(&mut buf, n, s.points, s.ifft.as_ref());
            grads.push(buf);
        }
        y.iter_mut().for_each(|v| *v = ZERO);
        for i in 0..n {
            let mut flux = vec![ZERO; total];
            for j in 0..n {
                if s.diagonal && i != j {
                    continue;
                }
                let a = &s.samples[i * n + j];
                for (f, (g, &av)) in flux.iter_mut().zip(grads[j].iter().zip(a)) {
                    *f += g * av;
                }
            }
            fft_nd(&mut flux, n, s.points, s.fft.as_ref());
            for (b, l) in s.modes.iter().enumerate() {
                y[b] += Complex64::new(0.0, -(l[i] as f64 + self.k[i])) * flux[s.grid_index[b]] * scale;
            }
        }
    }

    /// Rayleigh quotient `<x, H x> / <x, x>` through the matrix-free product.
    pub fn quotient(&self, x: &[Complex64]) -> f64 {
        let mut hx = vec![ZERO; x.len()];
        self.apply(x, &mut hx);
        let num: Complex64 = x.iter().zip(&hx).map(|(a, b)| a.conj() * b).sum();
        num.re / x.iter().map(|z| z.norm_sqr()).sum::<f64>()
    }

    fn shifted_norm2(&self, b: usize) -> f64 {
        self.sampling.modes[b].iter().zip(&self.k).map(|(&l, &k)| (l as f64 + k).powi(2)).sum()
    }
}

fn check_k(dim: usize, k: &[f64]) -> Result<()> {
    if k.len() != dim {
        return Err(Error::InvalidParameter(format!("wave vector has {} components, medium has {dim}", k.len())));
    }
    if k.iter().any(|v| !v.is_finite() || v.abs() > 0.5 + 1e-12) {
        return Err(Error::InvalidParameter(format!("wave vector {k:?} outside the closed reciprocal cell")));
    }
    Ok(())
}

/// One eigenpair of the cell problem.
#[derive(Debug, Clone, PartialEq)]
pub struct BlochMode {
    pub k: Vec<f64>,
    pub band: usize,
    pub eigenvalue: f64,
    /// Plane-wave coefficients, `Σ |c|^2 = 1`, largest entry real positive.
    pub coefficients: Vec<Complex64>,
    pub modes: Arc<Vec<Vec<i64>>>,
    /// `||H c - μ c||`.
    pub residual: f64,
}

impl BlochMode {
    pub fn dim(&self) -> usize {
        self.k.len()
    }

    /// `ψ(y)`.
    pub fn psi(&self, y: &[f64]) -> Complex64 {
        let norm = cell_volume(self.dim()).powf(-0.5);
        self.coefficients
            .iter()
            .zip(self.modes.iter())
            .map(|(c, l)| {
                let phase: f64 = l.iter().zip(y).map(|(&li, &yi)| li as f64 * yi).sum();
                c * Complex64::from_polar(1.0, phase)
            })
            .sum::<Complex64>()
            * norm
    }

    /// Coefficients with modulus above `tol`, as `(l, c_l)`.
    pub fn significant(&self, tol: f64) -> Vec<(Vec<i64>, Complex64)> {
        self.coefficients
            .iter()
            .zip(self.modes.iter())
            .filter(|(c, _)| c.norm() > tol)
            .map(|(c, l)| (l.clone(), *c))
            .collect()
    }

    /// `Σ |c_l|^2`, i.e. `||ψ||²_{L²(Y)}`.
    pub fn norm_squared(&self) -> f64 {
        self.coefficients.iter().map(|c| c.norm_sqr()).sum()
    }
}

fn fix_phase(c: &mut [Complex64]) {
    let norm = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let max = c.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    // First entry within rounding of the maximum modulus decides the phase.
    let pivot = c.iter().position(|z| z.norm() >= max * (1.0 - 1e-9)).unwrap_or(0);
    let rot = c[pivot].conj() / (c[pivot].norm() * norm);
    for z in c.iter_mut() {
        *z *= rot;
    }
    c[pivot] = Complex64::new(c[pivot].re, 0.0);
}

/// The `count` lowest eigenpairs, ascending.
pub fn bands_with(disc: &BlochOperatorDiscretization, count: usize, method: EigenMethod) -> Result<Vec<BlochMode>> {
    let nb = disc.basis_len();
    if count == 0 || count > nb {
        return Err(Error::InvalidParameter(format!("cannot extract {count} bands from a basis of {nb}")));
    }
    let dense = match method {
        EigenMethod::Dense => true,
        EigenMethod::Lobpcg => false,
        EigenMethod::Auto => nb <= DENSE_LIMIT,
    };
    let vectors: Vec<CVec> = if dense {
        let (_, vecs) = eigen::dense_hermitian(&disc.matrix());
        vecs.into_iter().take(count).collect()
    } else {
        lobpcg_bands(disc, count)?
    };
    let modes = Arc::new(disc.modes().to_vec());
    let mut out = Vec::with_capacity(count);
    for (band, mut c) in vectors.into_iter().enumerate() {
        fix_phase(&mut c);
        // Rayleigh refinement: eigenvalue error becomes quadratic in the vector error.
        let mut hc = vec![ZERO; nb];
        disc.apply(&c, &mut hc);
        let mu: f64 = c.iter().zip(&hc).map(|(a, b)| (a.conj() * b).re).sum();
        let residual = hc.iter().zip(&c).map(|(h, x)| (h - x * mu).norm_sqr()).sum::<f64>().sqrt();
        if !mu.is_finite() {
            return Err(Error::EigenNonConvergence { iterations: 0, residual: f64::NAN });
        }
        out.push(BlochMode { k: disc.k().to_vec(), band, eigenvalue: mu, coefficients: c, modes: Arc::clone(&modes), residual });
    }
    out.sort_by(|a, b| a.eigenvalue.total_cmp(&b.eigenvalue));
    for (i, m) in out.iter_mut().enumerate() {
        m.band = i;
    }
    Ok(out)
}

fn lobpcg_bands(disc: &BlochOperatorDiscretization, count: usize) -> Result<Vec<CVec>> {
    let nb = disc.basis_len();
    let abar = disc.sampling.mean_trace;
    let diag: Vec<f64> = (0..nb).map(|b| abar * disc.shifted_norm2(b) + 0.25 * abar).collect();
    let block = count + 2;
    let mut order: Vec<usize> = (0..nb).collect();
    order.sort_by(|&a, &b| diag[a].total_cmp(&diag[b]).then(a.cmp(&b)));
    let init: Vec<CVec> = (0..block)
        .map(|c| {
            (0..nb)
                .map(|b| {
                    // Deterministic small perturbation couples all symmetry sectors.
                    let t = ((b * 7919 + c * 104_729) % 1009) as f64 / 1009.0 - 0.5;
                    let base = if b == order[c] { 1.0 } else { 0.0 };
                    Complex64::new(base + 1e-3 * t / (1.0 + diag[b]), 0.0)
                })
                .collect()
        })
        .collect();
    let scale = diag.iter().fold(1.0f64, |m, &d| m.max(d));
    let opts = LobpcgOptions { block, wanted: count, tol: EIGEN_RTOL * 1e-2 * scale.sqrt(), max_iter: 500 };
    let (_, vecs) = eigen::lobpcg(
        |x, y| disc.apply(x, y),
        |r, w| {
            for ((wi, ri), d) in w.iter_mut().zip(r).zip(&diag) {
                *wi = ri / d;
            }
        },
        init,
        opts,
    )?;
    Ok(vecs.into_iter().take(count).collect())
}

pub fn bands(disc: &BlochOperatorDiscretization, count: usize) -> Result<Vec<BlochMode>> {
    bands_with(disc, count, EigenMethod::Auto)
}

/// Smallest eigenpair.
pub fn lowest_band(disc: &BlochOperatorDiscretization) -> Result<BlochMode> {
    Ok(bands(disc, 1)?.remove(0))
}

/// `μ₀(k)` with cutoff `M`.
pub fn mu0(medium: &PeriodicMedium, k: &[f64], cutoff: usize) -> Result<f64> {
    let disc = BlochOperatorDiscretization::assemble(medium, k, cutoff)?;
    Ok(lowest_band(&disc)?.eigenvalue)
}

/// Evaluates `μ₀` at many wave vectors while sampling the medium once.
#[derive(Clone, Debug)]
pub struct BandEvaluator {
    disc: BlochOperatorDiscretization,
}

impl BandEvaluator {
    pub fn new(medium: &PeriodicMedium, cutoff: usize) -> Result<Self> {
        let zero = vec![0.0; medium.dim()];
        Ok(Self { disc: BlochOperatorDiscretization::assemble(medium, &zero, cutoff)? })
    }

    pub fn dim(&self) -> usize {
        self.disc.dim()
    }

    pub fn discretization(&self, k: &[f64]) -> Result<BlochOperatorDiscretization> {
        self.disc.with_k(k)
    }

    pub fn mode(&self, k: &[f64]) -> Result<BlochMode> {
        lowest_band(&self.disc.with_k(k)?)
    }

    pub fn mu0(&self, k: &[f64]) -> Result<f64> {
        Ok(self.mode(k)?.eigenvalue)
    }
}

/// Quadratic form `(1/|Y|) ∫_Y |(∇ + ik) w|²_{a_Y} dy` of a unit trial vector, by
/// trapezoid quadrature on `4M` points per axis with direct medium evaluation.
pub fn rayleigh_form(medium: &PeriodicMedium, k: &[f64], modes: &[Vec<i64>], coefficients: &[Complex64]) -> f64 {
    let dim = medium.dim();
    let cutoff = modes.iter().flat_map(|l| l.iter()).fold(0i64, |m, &v| m.max(v.abs())) as usize;
    let points = 4 * cutoff.max(1);
    let total = points.pow(dim as u32);
    let plan = FftPlanner::new().plan_fft_inverse(points);
    let grads: Vec<Vec<Complex64>> = (0..dim)
        .map(|j| {
            let mut buf = vec![ZERO; total];
            for (l, c) in modes.iter().zip(coefficients) {
                buf[wrap_index(l, points)] += Complex64::new(0.0, l[j] as f64 + k[j]) * c;
            }
            fft_nd(&mut buf, dim, points, plan.as_ref());
            buf
        })
        .collect();
    let mut y = vec![0.0; dim];
    let mut sum = 0.0;
    for flat in 0..total {
        let mut rem = flat;
        for d in (0..dim).rev() {
            y[d] = 2.0 * PI * (rem % points) as f64 / points as f64;
            rem /= points;
        }
        let a = medium.eval(&y);
        for i in 0..dim {
            for j in 0..dim {
                sum += (grads[i][flat].conj() * grads[j][flat]).re * a.get(i, j);
            }
        }
    }
    let norm2: f64 = coefficients.iter().map(|c| c.norm_sqr()).sum();
    sum / total as f64 / norm2
}

/// Quadratic form of a computed mode; agrees with its eigenvalue for converged modes.
pub fn rayleigh(medium: &PeriodicMedium, mode: &BlochMode) -> f64 {
    rayleigh_form(medium, &mode.k, &mode.modes, &mode.coefficients)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::make_cosine_medium_1d;
    use crate::quadrature;

    fn cosine() -> PeriodicMedium {
        make_cosine_medium_1d(1.5, 1.4).unwrap()
    }

    #[test]
    fn constant_medium_matrix_is_diagonal() {
        let m = PeriodicMedium::constant(2, 1.7).unwrap();
        let d = BlochOperatorDiscretization::assemble(&m, &[0.2, -0.35], 4).unwrap();
        let h = d.matrix();
        for r in 0..d.basis_len() {
            for c in 0..d.basis_len() {
                let l = &d.modes()[r];
                let expect = if r == c { 1.7 * ((l[0] as f64 + 0.2).powi(2) + (l[1] as f64 - 0.35).powi(2)) } else { 0.0 };
                assert!((h[(r, c)] - expect).norm() < 1e-13, "({r},{c})");
            }
        }
    }

    #[test]
    fn cosine_matrix_at_k0_m1_by_hand() {
        // a = 1.5 + 0.7 e^{iy} + 0.7 e^{-iy}; basis l = -1, 0, 1.
        let d = BlochOperatorDiscretization::assemble(&cosine(), &[0.0], 4).unwrap();
        let h = d.matrix();
        let idx = |l: i64| (l + 4) as usize;
        let entry = |a: i64, b: i64| h[(idx(a), idx(b))];
        assert!((entry(0, 0)).norm() < 1e-14);
        assert!((entry(-1, -1).re - 1.5).abs() < 1e-13);
        assert!((entry(1, 1).re - 1.5).abs() < 1e-13);
        assert!((entry(1, -1).re - 0.0).abs() < 1e-13);
        assert!((entry(0, 1)).norm() < 1e-14);
        assert!((entry(-1, 1).re).abs() < 1e-13);
        // l' = 2, l = 1 couples through â[1] = 0.7: (2)(1)(0.7).
        assert!((entry(2, 1).re - 1.4).abs() < 1e-13);
        assert!((entry(-2, -1).re - 1.4).abs() < 1e-13);
    }

    #[test]
    fn constant_vector_in_kernel_at_k0() {
        let d = BlochOperatorDiscretization::assemble(&cosine(), &[0.0], 8).unwrap();
        let h = d.matrix();
        let z = d.zero_mode();
        for r in 0..d.basis_len() {
            assert!(h[(r, z)].norm() < 1e-14);
        }
    }

    #[test]
    fn matrix_free_product_matches_dense() {
        let m = PeriodicMedium::isotropic(2, "bumps", true, true, |y| 2.0 + y[0].cos() * y[1].cos()).unwrap();
        let d = BlochOperatorDiscretization::assemble(&m, &[0.13, -0.41], 5).unwrap();
        let h = d.matrix();
        let x: Vec<Complex64> = (0..d.basis_len()).map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos())).collect();
        let mut y = vec![ZERO; x.len()];
        d.apply(&x, &mut y);
        let dense = &h * nalgebra::DVector::from_vec(x.clone());
        for (a, b) in y.iter().zip(dense.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
        let herm = (&h - h.adjoint()).norm() / h.norm();
        assert!(herm < 1e-12);
    }

    #[test]
    fn homogeneous_dispersion_is_exact() {
        let m = PeriodicMedium::constant(1, 2.5).unwrap();
        for k in [0.1, -0.3, 0.45] {
            let mu = mu0(&m, &[k], 8).unwrap();
            assert!((mu - 2.5 * k * k).abs() < 1e-13);
        }
    }

    #[test]
    fn cosine_k0_has_constant_eigenfunction() {
        let d = BlochOperatorDiscretization::assemble(&cosine(), &[0.0], DEFAULT_CUTOFF_1D).unwrap();
        let mode = lowest_band(&d).unwrap();
        assert!(mode.eigenvalue.abs() < 1e-12);
        let c0 = mode.coefficients[d.zero_mode()];
        assert!((c0.re - 1.0).abs() < 1e-12 && c0.im == 0.0);
        let psi = mode.psi(&[1.3]);
        assert!((psi.re - (2.0 * PI).powf(-0.5)).abs() < 1e-12);
    }

    #[test]
    fn spectral_self_convergence() {
        let a = mu0(&cosine(), &[0.25], 32).unwrap();
        let b = mu0(&cosine(), &[0.25], 64).unwrap();
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }

    #[test]
    fn small_k_ratio_approaches_harmonic_mean() {
        // Independent oracle: (1/2pi ∫ 1/a)^{-1}.
        let inv = quadrature::composite(-PI, PI, 64, 16, |y| 1.0 / (1.5 + 1.4 * y.cos())) / (2.0 * PI);
        let harmonic = 1.0 / inv;
        assert!((harmonic - 0.29f64.sqrt()).abs() < 1e-12);
        let k = 1e-3;
        let ratio = mu0(&cosine(), &[k], DEFAULT_CUTOFF_1D).unwrap() / (k * k);
        assert!((ratio - harmonic).abs() < 1e-5, "ratio {ratio}");
    }

    #[test]
    fn rayleigh_matches_eigenvalue_and_bounds_trials() {
        let m = cosine();
        let d = BlochOperatorDiscretization::assemble(&m, &[0.3], 32).unwrap();
        let mode = lowest_band(&d).unwrap();
        let r = rayleigh(&m, &mode);
        assert!((r - mode.eigenvalue).abs() <= 1e-8 * (1.0 + mode.eigenvalue));
        assert!((mode.norm_squared() - 1.0).abs() < 1e-12);
        for s in 0..20 {
            let trial: Vec<Complex64> = (0..d.basis_len())
                .map(|i| Complex64::new(((i * 31 + s * 17) % 13) as f64 - 6.0, ((i * 7 + s) % 5) as f64 - 2.0))
                .collect();
            assert!(rayleigh_form(&m, &[0.3], d.modes(), &trial) >= mode.eigenvalue - 1e-10);
        }
    }

    #[test]
    fn lobpcg_matches_dense_in_2d() {
        let m = PeriodicMedium::isotropic(2, "bumps", true, true, |y| 2.0 + y[0].cos() * y[1].cos()).unwrap();
        let d = BlochOperatorDiscretization::assemble(&m, &[0.21, 0.07], 8).unwrap();
        let dense = bands_with(&d, 2, EigenMethod::Dense).unwrap();
        let iter = bands_with(&d, 2, EigenMethod::Lobpcg).unwrap();
        for (a, b) in dense.iter().zip(&iter) {
            assert!((a.eigenvalue - b.eigenvalue).abs() < 1e-11, "{} vs {}", a.eigenvalue, b.eigenvalue);
        }
        let overlap: Complex64 = dense[0].coefficients.iter().zip(&iter[0].coefficients).map(|(a, b)| a.conj() * b).sum();
        assert!((overlap.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn spectral_gap_is_positive() {
        let ev = BandEvaluator::new(&cosine(), 32).unwrap();
        for k in [0.0, 0.2, 0.5] {
            let b = bands(&ev.discretization(&[k]).unwrap(), 2).unwrap();
            assert!(b[1].eigenvalue - b[0].eigenvalue > 0.05, "k={k}");
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(BlochOperatorDiscretization::assemble(&cosine(), &[0.1], 3).is_err());
        assert!(BlochOperatorDiscretization::assemble(&cosine(), &[0.7], 8).is_err());
        assert!(BlochOperatorDiscretization::assemble(&cosine(), &[0.1, 0.1], 8).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn band_function_is_nonnegative_and_even(k in -0.5f64..0.5) {
            let ev = BandEvaluator::new(&cosine(), 32).unwrap();
            let (a, b) = (ev.mu0(&[k]).unwrap(), ev.mu0(&[-k]).unwrap());
            proptest::prop_assert!(a >= -1e-10);
            proptest::prop_assert!((a - b).abs() <= 1e-9);
        }
    }
}
