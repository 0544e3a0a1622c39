//! Taylor coefficients of `μ₀` at `k = 0` and the well-posed decomposition.
//!
//! For symmetric media `μ₀(k) = a*|k|² + α Σ k_i⁴ + 3β Σ_{i≠j} k_i² k_j² + O(|k|⁶)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::{default_cutoff, BandEvaluator};
use crate::error::{Error, Result};
use crate::medium::PeriodicMedium;

/// Finite-difference steps in `k`, halving.
pub const RICHARDSON_STEPS: [f64; 3] = [0.04, 0.02, 0.01];
/// Successive extrapolants must agree to this relative tolerance.
pub const RICHARDSON_RTOL: f64 = 1e-6;
/// Extra halvings of the finest step tried before giving up.
pub const MAX_EXTRA_HALVINGS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct DispersionOptions {
    pub cutoff: usize,
    pub steps: Vec<f64>,
    pub rtol: f64,
}

impl DispersionOptions {
    pub fn for_dim(dim: usize) -> Self {
        Self { cutoff: default_cutoff(dim), steps: RICHARDSON_STEPS.to_vec(), rtol: RICHARDSON_RTOL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionCoefficients {
    pub n: usize,
    pub a_star: f64,
    pub alpha: f64,
    /// Zero in one dimension.
    pub beta: f64,
    /// Steps used in `k`.
    pub h_k: Vec<f64>,
}

impl DispersionCoefficients {
    pub fn new(n: usize, a_star: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !(1..=3).contains(&n) {
            return Err(Error::InvalidParameter(format!("dimension {n} not in 1..=3")));
        }
        if !(a_star > 0.0 && a_star.is_finite()) {
            return Err(Error::InvalidParameter(format!("a* = {a_star} must be positive")));
        }
        if !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::InvalidParameter("non-finite dispersion coefficient".into()));
        }
        if n == 1 && beta != 0.0 {
            return Err(Error::InvalidParameter("beta is undefined in one dimension".into()));
        }
        Ok(Self { n, a_star, alpha, beta, h_k: Vec::new() })
    }
}

/// Richardson table for estimates with an even error expansion in `h`, `h` halving per row.
#[derive(Debug, Clone, PartialEq)]
pub struct RichardsonTable {
    pub rows: Vec<Vec<f64>>,
}

impl RichardsonTable {
    pub fn new(raw: &[f64]) -> Self {
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(raw.len());
        for (i, &r) in raw.iter().enumerate() {
            let mut row = vec![r];
            for j in 1..=i {
                let f = 4f64.powi(j as i32);
                let v = row[j - 1] + (row[j - 1] - rows[i - 1][j - 1]) / (f - 1.0);
                row.push(v);
            }
            rows.push(row);
        }
        Self { rows }
    }

    pub fn best(&self) -> f64 {
        *self.rows.last().and_then(|r| r.last()).expect("empty table")
    }

    /// Difference between the two highest-order extrapolants on the finest row.
    pub fn gap(&self) -> f64 {
        let last = self.rows.last().expect("empty table");
        if last.len() < 2 {
            return f64::INFINITY;
        }
        (last[last.len() - 1] - last[last.len() - 2]).abs()
    }

    pub fn converged(&self, quantity: &'static str, rtol: f64) -> Result<f64> {
        let best = self.best();
        let gap = self.gap();
        if !(gap <= rtol * best.abs().max(1.0)) {
            return Err(Error::RichardsonNonConvergence { quantity, gap });
        }
        Ok(best)
    }
}

fn require_symmetric(medium: &PeriodicMedium) -> Result<()> {
    if !medium.is_symmetric() {
        return Err(Error::SymmetryRequired(format!(
            "medium '{}' lacks reflection/permutation symmetry flags",
            medium.label()
        )));
    }
    Ok(())
}

fn axis_k(dim: usize, values: &[(usize, f64)]) -> Vec<f64> {
    let mut k = vec![0.0; dim];
    for &(a, v) in values {
        k[a] = v;
    }
    k
}

fn evaluate_all(ev: &BandEvaluator, points: &[Vec<f64>]) -> Result<Vec<f64>> {
    points.par_iter().map(|k| ev.mu0(k)).collect()
}

/// `a*` from `μ₀(h e₁) / h²` (evenness and `μ₀(0) = 0` reduce the central stencil).
pub fn fit_a_star_with(ev: &BandEvaluator, opts: &DispersionOptions) -> Result<f64> {
    let dim = ev.dim();
    let estimate = |h: f64| -> Result<f64> { Ok(ev.mu0(&axis_k(dim, &[(0, h)]))? / (h * h)) };
    let points: Vec<Vec<f64>> = opts.steps.iter().map(|&h| axis_k(dim, &[(0, h)])).collect();
    let mu = evaluate_all(ev, &points)?;
    let raw: Vec<f64> = opts.steps.iter().zip(&mu).map(|(h, m)| m / (h * h)).collect();
    refine("a_star", raw, opts, estimate)
}

/// Accept the table or extend it by halving the finest step.
fn refine<F>(quantity: &'static str, mut raw: Vec<f64>, opts: &DispersionOptions, estimate: F) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let mut h = *opts.steps.last().ok_or_else(|| Error::InvalidParameter("no finite-difference steps".into()))?;
    let mut extra = 0;
    loop {
        let table = RichardsonTable::new(&raw);
        match table.converged(quantity, opts.rtol) {
            Ok(v) => return Ok(v),
            Err(e) if extra >= MAX_EXTRA_HALVINGS => return Err(e),
            Err(_) => {
                h *= 0.5;
                extra += 1;
                raw.push(estimate(h)?);
            }
        }
    }
}

pub fn fit_a_star(medium: &PeriodicMedium) -> Result<f64> {
    require_symmetric(medium)?;
    let opts = DispersionOptions::for_dim(medium.dim());
    fit_a_star_with(&BandEvaluator::new(medium, opts.cutoff)?, &opts)
}

/// `α = ∂⁴_{k₁}μ₀(0)/24` and, for `n >= 2`, `β = ∂²_{k₁}∂²_{k₂}μ₀(0)/24`.
pub fn fit_alpha_beta_with(ev: &BandEvaluator, opts: &DispersionOptions) -> Result<(f64, f64)> {
    let dim = ev.dim();
    let hs = &opts.steps;
    let mut points: Vec<Vec<f64>> = Vec::new();
    for &h in hs {
        points.push(axis_k(dim, &[(0, h)]));
        points.push(axis_k(dim, &[(0, 2.0 * h)]));
        if dim >= 2 {
            points.push(axis_k(dim, &[(0, h), (1, h)]));
        }
    }
    let mu = evaluate_all(ev, &points)?;
    let per = if dim >= 2 { 3 } else { 2 };
    let alpha_at = |m1: f64, m2: f64, h: f64| (2.0 * m2 - 8.0 * m1) / (24.0 * h.powi(4));
    let beta_at = |m1: f64, m11: f64, h: f64| (4.0 * m11 - 8.0 * m1) / (24.0 * h.powi(4));
    let mut raw_alpha = Vec::with_capacity(hs.len());
    let mut raw_beta = Vec::with_capacity(hs.len());
    for (i, &h) in hs.iter().enumerate() {
        let (m1, m2) = (mu[per * i], mu[per * i + 1]);
        // 4th central difference with μ(0) = 0 and μ(-k) = μ(k).
        raw_alpha.push(alpha_at(m1, m2, h));
        if dim >= 2 {
            // Tensor stencil reduced by μ(±h, ±h) = μ(h, h) and μ(0, h) = μ(h, 0).
            raw_beta.push(beta_at(m1, mu[per * i + 2], h));
        }
    }
    let alpha = refine("alpha", raw_alpha, opts, |h| {
        Ok(alpha_at(ev.mu0(&axis_k(dim, &[(0, h)]))?, ev.mu0(&axis_k(dim, &[(0, 2.0 * h)]))?, h))
    })?;
    let beta = if dim >= 2 {
        refine("beta", raw_beta, opts, |h| {
            Ok(beta_at(ev.mu0(&axis_k(dim, &[(0, h)]))?, ev.mu0(&axis_k(dim, &[(0, h), (1, h)]))?, h))
        })?
    } else {
        0.0
    };
    Ok((alpha, beta))
}

pub fn fit_alpha_beta(medium: &PeriodicMedium) -> Result<(f64, f64)> {
    require_symmetric(medium)?;
    let opts = DispersionOptions::for_dim(medium.dim());
    fit_alpha_beta_with(&BandEvaluator::new(medium, opts.cutoff)?, &opts)
}

/// All three coefficients with one medium sampling.
pub fn compute_coefficients_with(medium: &PeriodicMedium, opts: &DispersionOptions) -> Result<DispersionCoefficients> {
    require_symmetric(medium)?;
    let ev = BandEvaluator::new(medium, opts.cutoff)?;
    let a_star = fit_a_star_with(&ev, opts)?;
    let (alpha, beta) = fit_alpha_beta_with(&ev, opts)?;
    let mut c = DispersionCoefficients::new(medium.dim(), a_star, alpha, beta)?;
    c.h_k = opts.steps.clone();
    Ok(c)
}

pub fn compute_coefficients(medium: &PeriodicMedium) -> Result<DispersionCoefficients> {
    compute_coefficients_with(medium, &DispersionOptions::for_dim(medium.dim()))
}

/// Central third-difference of `μ₀` along axis 0 at `k = 0` (no evenness assumed).
pub fn third_derivative_probe(ev: &BandEvaluator, h: f64) -> Result<f64> {
    let dim = ev.dim();
    let points: Vec<Vec<f64>> = [2.0 * h, h, -h, -2.0 * h].iter().map(|&s| axis_k(dim, &[(0, s)])).collect();
    let m = evaluate_all(ev, &points)?;
    Ok((m[0] - 2.0 * m[1] + 2.0 * m[2] - m[3]) / (2.0 * h.powi(3)))
}

/// Sign pattern of `(α, β)`; numbering follows the usual four-way split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignCase {
    /// `α <= 0, β <= 0`.
    Case1,
    /// `α <= 0, β > 0`.
    Case2,
    /// `α > 0, β <= 0`.
    Case3,
    /// `α >= 0, β >= 0` (also the tie-break whenever both are nonnegative).
    Case4,
}

impl SignCase {
    pub fn classify(alpha: f64, beta: f64) -> Self {
        if alpha >= 0.0 && beta >= 0.0 {
            SignCase::Case4
        } else if alpha <= 0.0 && beta <= 0.0 {
            SignCase::Case1
        } else if alpha <= 0.0 {
            SignCase::Case2
        } else {
            SignCase::Case3
        }
    }

    pub fn number(self) -> u8 {
        match self {
            SignCase::Case1 => 1,
            SignCase::Case2 => 2,
            SignCase::Case3 => 3,
            SignCase::Case4 => 4,
        }
    }
}

#[inline]
fn pos(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// `A = a* I`, `C` (iiii and iijj/ijij/ijji entries), and after [`decompose`] `E = e I`, `F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveTensors {
    pub n: usize,
    pub a_star: f64,
    pub alpha: f64,
    pub beta: f64,
    /// `E = e I`; `None` before decomposition.
    pub e: Option<f64>,
    pub f_iiii: Option<f64>,
    pub f_ijij: Option<f64>,
    pub case: Option<SignCase>,
}

pub fn build_tensors(coeffs: &DispersionCoefficients) -> Result<EffectiveTensors> {
    if !(coeffs.a_star > 0.0) {
        return Err(Error::InvalidParameter(format!("a* = {} must be positive", coeffs.a_star)));
    }
    Ok(EffectiveTensors {
        n: coeffs.n,
        a_star: coeffs.a_star,
        alpha: coeffs.alpha,
        beta: if coeffs.n == 1 { 0.0 } else { coeffs.beta },
        e: None,
        f_iiii: None,
        f_ijij: None,
        case: None,
    })
}

/// Rewrite `-C D⁴ = E D² A D² - F D⁴` with `E`, `F` positive semidefinite.
pub fn decompose(coeffs: &DispersionCoefficients) -> Result<EffectiveTensors> {
    let mut t = build_tensors(coeffs)?;
    let (a, b) = (t.alpha, t.beta);
    t.e = Some((pos(-a) + 3.0 * pos(-b)) / t.a_star);
    t.f_iiii = Some(pos(a) + 3.0 * pos(-b));
    t.f_ijij = Some(pos(-a) + 3.0 * pos(b));
    t.case = Some(SignCase::classify(a, b));
    Ok(t)
}

fn quartic_sums(k: &[f64]) -> (f64, f64, f64) {
    let k2: f64 = k.iter().map(|v| v * v).sum();
    let k4: f64 = k.iter().map(|v| v.powi(4)).sum();
    // Σ_{i≠j} k_i² k_j² = |k|⁴ - Σ k_i⁴.
    (k2, k4, k2 * k2 - k4)
}

impl EffectiveTensors {
    pub fn e(&self) -> f64 {
        self.e.expect("tensors not decomposed")
    }

    pub fn f_iiii(&self) -> f64 {
        self.f_iiii.expect("tensors not decomposed")
    }

    pub fn f_ijij(&self) -> f64 {
        self.f_ijij.expect("tensors not decomposed")
    }

    pub fn a_entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.a_star
        } else {
            0.0
        }
    }

    pub fn e_entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.e()
        } else {
            0.0
        }
    }

    pub fn c_entry(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        if i == j && j == k && k == l {
            self.alpha
        } else if (i == j && k == l) || (i == k && j == l) || (i == l && j == k) {
            // Exactly two distinct indices, each twice.
            self.beta
        } else {
            0.0
        }
    }

    pub fn f_entry(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        if i == j && j == k && k == l {
            self.f_iiii()
        } else if i == k && j == l && i != j {
            self.f_ijij()
        } else {
            0.0
        }
    }

    /// `A(k, k) = a* |k|²`.
    pub fn a_symbol(&self, k: &[f64]) -> f64 {
        self.a_star * quartic_sums(k).0
    }

    /// `C(k, k, k, k) = α Σ k_i⁴ + 3β Σ_{i≠j} k_i² k_j²`.
    pub fn c_symbol(&self, k: &[f64]) -> f64 {
        let (_, k4, mixed) = quartic_sums(k);
        self.alpha * k4 + 3.0 * self.beta * mixed
    }

    pub fn e_symbol(&self, k: &[f64]) -> f64 {
        self.e() * quartic_sums(k).0
    }

    /// `F(k, k, k, k) = F_iiii Σ k_i⁴ + F_ijij Σ_{i≠j} k_i² k_j²`.
    pub fn f_symbol(&self, k: &[f64]) -> f64 {
        let (_, k4, mixed) = quartic_sums(k);
        self.f_iiii() * k4 + self.f_ijij() * mixed
    }

    /// `Σ F_ijkl ξ_ij ξ_kl` for a row-major `n x n` matrix `ξ`.
    pub fn f_quadratic(&self, xi: &[f64]) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        s += self.f_entry(i, j, k, l) * xi[i * n + j] * xi[k * n + l];
                    }
                }
            }
        }
        s
    }
}

/// `|-C(k) - (E(k) A(k) - F(k))|`.
pub fn symbol_residual(t: &EffectiveTensors, k: &[f64]) -> f64 {
    (-t.c_symbol(k) - (t.e_symbol(k) * t.a_symbol(k) - t.f_symbol(k))).abs()
}
