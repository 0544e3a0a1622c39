//! Spectral reference solutions built from Bloch waves.
//!
//! Transform convention: `F₀(k) = (2π)^{-n/2} ∫ f(x) e^{-ik·x} dx`, Bloch waves
//! `w_m^ε(x, k) = ψ_m(x/ε, εk) e^{ik·x}` with `‖ψ_m(·, k)‖_{L²(Y)} = 1`, and
//! coefficients `f̂_m^ε(k) = ∫ f(x) w_m^ε(x, k)* dx`. For `ψ ≡ |Y|^{-1/2}` this gives
//! `f̂_0^ε = F₀` exactly, since `|Y| = (2π)^n`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::bloch::{bands, cell_volume, BandEvaluator, BlochMode};
use crate::datum::InitialDatum;
use crate::dispersion::DispersionCoefficients;
use crate::error::{Error, Result};
use crate::grid::{Grid, GridField};
use crate::medium::PeriodicMedium;
use crate::quadrature::{composite_rule, tensor_rule};

/// Default `k`-nodes per axis.
pub const K_NODES_1D: usize = 256;
pub const K_NODES_2D: usize = 64;
/// Gauss nodes per `k`-panel.
pub const K_PANEL_NODES: usize = 16;
/// Panels are narrow enough to hold at most this many oscillations of `e^{ik·x ± itω}`.
pub const OSCILLATIONS_PER_PANEL: f64 = 2.0;
/// Gauss nodes per `x`-panel of width about `ε/2` in the coefficient quadrature.
pub const X_PANEL_NODES: usize = 8;
/// Accepted relative change of a coefficient under node doubling.
pub const X_DOUBLING_RTOL: f64 = 1e-10;
/// Floor on `A(k, k)` before dividing by its root.
pub const A_FLOOR: f64 = 1e-300;

/// Quadrature over `K` (or `K ∩ Z/ε`) with the datum's transform sampled at the nodes.
#[derive(Debug, Clone)]
pub struct SpectralDatum {
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub f0: Vec<f64>,
    /// Half-width of the integration box.
    pub radius: f64,
}

fn require_localized(datum: &InitialDatum) -> Result<()> {
    if datum.transform_dim() != datum.dim() {
        return Err(Error::InvalidParameter("spectral oracles need data localized along every axis".into()));
    }
    Ok(())
}

/// Default node count for `dim`.
pub fn default_k_nodes(dim: usize) -> usize {
    if dim == 1 {
        K_NODES_1D
    } else {
        K_NODES_2D
    }
}

/// Tensor Gauss–Legendre rule on `[-radius, radius]ⁿ`, restricted to the ball.
///
/// `frequency` bounds `|∂ₖ phase|` of the integrand; the panel count is raised above
/// the default whenever that is needed to resolve the oscillation.
pub fn spectral_datum(datum: &InitialDatum, radius: f64, frequency: f64, nodes_per_axis: Option<usize>) -> Result<SpectralDatum> {
    require_localized(datum)?;
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidParameter(format!("k-radius {radius} must be positive")));
    }
    let dim = datum.dim();
    let base = nodes_per_axis.unwrap_or_else(|| default_k_nodes(dim));
    let needed = (2.0 * radius * frequency.max(0.0) / (2.0 * PI * OSCILLATIONS_PER_PANEL)).ceil() as usize;
    let panels = base.div_ceil(K_PANEL_NODES).max(needed).max(1);
    let axis = composite_rule(-radius, radius, panels, K_PANEL_NODES);
    let axes = vec![axis; dim];
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let mut f0 = Vec::new();
    for (k, w) in tensor_rule(&axes) {
        let r2: f64 = k.iter().map(|v| v * v).sum();
        if dim > 1 && r2 > radius * radius {
            continue;
        }
        f0.push(datum.fourier(&k).re);
        nodes.push(k);
        weights.push(w);
    }
    Ok(SpectralDatum { nodes, weights, f0, radius })
}

/// An oracle field with its time derivative and gradient.
#[derive(Debug, Clone)]
pub struct OracleField {
    pub time: f64,
    pub value: GridField,
    pub dt: GridField,
    pub grad: Vec<GridField>,
    /// Largest imaginary part encountered (zero up to rounding for real data).
    pub imag_residue: f64,
}

/// `(2π)^{-n/2} Σ_q w_q F₀(k_q) e^{ik_q·x} cos(t r(k_q))` and its derivatives.
fn synthesize(sd: &SpectralDatum, rate: &[f64], grid: &Grid, t: f64) -> Result<OracleField> {
    let dim = grid.dim();
    let norm = (2.0 * PI).powf(-0.5 * dim as f64);
    let amp: Vec<f64> = sd.f0.iter().zip(&sd.weights).map(|(f, w)| f * w * norm).collect();
    let cos_t: Vec<f64> = rate.iter().map(|r| (t * r).cos()).collect();
    let sin_t: Vec<f64> = rate.iter().map(|r| -(t * r).sin() * r).collect();
    let rows: Vec<(f64, f64, Vec<f64>, f64)> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.point(i);
            let mut val = Complex64::new(0.0, 0.0);
            let mut dtv = Complex64::new(0.0, 0.0);
            let mut grad = vec![Complex64::new(0.0, 0.0); dim];
            for q in 0..amp.len() {
                let k = &sd.nodes[q];
                let phase: f64 = k.iter().zip(&x).map(|(a, b)| a * b).sum();
                let e = Complex64::from_polar(amp[q], phase);
                val += e * cos_t[q];
                dtv += e * sin_t[q];
                for d in 0..dim {
                    grad[d] += e * Complex64::new(0.0, k[d] * cos_t[q]);
                }
            }
            let imag = grad.iter().fold(val.im.abs().max(dtv.im.abs()), |m, g| m.max(g.im.abs()));
            (val.re, dtv.re, grad.iter().map(|g| g.re).collect(), imag)
        })
        .collect();
    let value = GridField::from_values(grid.clone(), rows.iter().map(|r| r.0).collect())?;
    let dt = GridField::from_values(grid.clone(), rows.iter().map(|r| r.1).collect())?;
    let grad = (0..dim)
        .map(|d| GridField::from_values(grid.clone(), rows.iter().map(|r| r.2[d]).collect()))
        .collect::<Result<Vec<_>>>()?;
    let imag_residue = rows.iter().fold(0.0f64, |m, r| m.max(r.3));
    Ok(OracleField { time: t, value, dt, grad, imag_residue })
}

/// Largest `|x|` on the grid, used to bound the `k`-oscillation.
fn grid_extent(grid: &Grid) -> f64 {
    (0..grid.dim())
        .map(|d| grid.origin[d].abs().max(grid.upper(d).abs()))
        .fold(0.0f64, |s, v| s.max(v))
        * (grid.dim() as f64).sqrt()
}

/// `|k|` range of `K ∩ Z/ε`.
pub fn band_radius(datum: &InitialDatum, epsilon: f64) -> f64 {
    datum.k_support_radius().min(0.5 / epsilon)
}

/// `U^ε(x, t) = (2π)^{-n/2} ∫_K F₀(k) e^{ik·x} cos(t √μ₀^ε(k)) dk`, `μ₀^ε(k) = ε^{-2} μ₀(εk)`.
///
/// The integral is restricted to `K ∩ Z/ε`, where `μ₀(εk)` is the lowest band.
pub fn evaluate_u(datum: &InitialDatum, ev: &BandEvaluator, epsilon: f64, grid: &Grid, t: f64) -> Result<OracleField> {
    check_dims(datum, ev.dim(), grid)?;
    let radius = band_radius(datum, epsilon);
    let speed = max_speed_bound(ev)?;
    let sd = spectral_datum(datum, radius, grid_extent(grid) + speed * t, None)?;
    let rate = sd
        .nodes
        .par_iter()
        .map(|k| {
            let ek: Vec<f64> = k.iter().map(|v| v * epsilon).collect();
            Ok((ev.mu0(&ek)?.max(0.0) / (epsilon * epsilon)).sqrt())
        })
        .collect::<Result<Vec<f64>>>()?;
    synthesize(&sd, &rate, grid, t)
}

fn max_speed_bound(ev: &BandEvaluator) -> Result<f64> {
    // Group velocity of the lowest band, bounded by twice the secant slope to the zone
    // corner; the node-doubling tests confirm the resulting resolution.
    let d = ev.dim();
    let corner = vec![0.5; d];
    let mu = ev.mu0(&corner)?;
    Ok(2.0 * (mu / corner.iter().map(|v| v * v).sum::<f64>()).sqrt())
}

fn check_dims(datum: &InitialDatum, dim: usize, grid: &Grid) -> Result<()> {
    require_localized(datum)?;
    if datum.dim() != dim || grid.dim() != dim {
        return Err(Error::IncompatibleGrids("datum, medium and grid dimensions differ".into()));
    }
    Ok(())
}

/// Frequency of the branch `exp(±it(√A(k,k) + ε² C(k) / (2√A(k,k))))`.
pub fn v_rate(coeffs: &DispersionCoefficients, epsilon: f64, k: &[f64]) -> f64 {
    let k2: f64 = k.iter().map(|v| v * v).sum();
    let k4: f64 = k.iter().map(|v| v.powi(4)).sum();
    let a = (coeffs.a_star * k2).max(A_FLOOR);
    let c = coeffs.alpha * k4 + 3.0 * coeffs.beta * (k2 * k2 - k4);
    a.sqrt() + 0.5 * epsilon * epsilon * c / a.sqrt()
}

/// `v^ε(x, t)`: both branches with weight ½, i.e. a cosine of the expanded phase.
pub fn evaluate_v(datum: &InitialDatum, coeffs: &DispersionCoefficients, epsilon: f64, grid: &Grid, t: f64) -> Result<OracleField> {
    check_dims(datum, coeffs.n, grid)?;
    let radius = datum.k_support_radius();
    let peak = (0..=64)
        .map(|i| {
            let mut k = vec![0.0; coeffs.n];
            k[0] = radius * i as f64 / 64.0;
            let h = 1e-6 * radius;
            let mut kp = k.clone();
            kp[0] += h;
            ((v_rate(coeffs, epsilon, &kp) - v_rate(coeffs, epsilon, &k)) / h).abs()
        })
        .fold(0.0f64, f64::max);
    let sd = spectral_datum(datum, radius, grid_extent(grid) + peak * t, None)?;
    let rate: Vec<f64> = sd.nodes.iter().map(|k| v_rate(coeffs, epsilon, k)).collect();
    synthesize(&sd, &rate, grid, t)
}

/// `f̂_m^ε(k) = Σ_l c_l* F₀(k + l/ε)`: the coefficient from the plane-wave expansion of `ψ_m`.
pub fn bloch_coefficient_series(datum: &InitialDatum, mode: &BlochMode, epsilon: f64, k: &[f64]) -> Complex64 {
    // |Y|^{-1/2} (2π)^{n/2} = 1.
    mode.coefficients
        .iter()
        .zip(mode.modes.iter())
        .filter(|(c, _)| c.norm() > 1e-300)
        .map(|(c, l)| {
            let q: Vec<f64> = k.iter().zip(l).map(|(ki, &li)| ki + li as f64 / epsilon).collect();
            c.conj() * datum.fourier(&q)
        })
        .sum()
}

fn in_zone(k: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    let ek: Vec<f64> = k.iter().map(|v| v * epsilon).collect();
    if ek.iter().any(|v| v.abs() > 0.5 + 1e-12) {
        return Err(Error::InvalidParameter(format!("k = {k:?} lies outside Z/ε")));
    }
    Ok(ek)
}

fn x_quadrature(datum: &InitialDatum, mode: &BlochMode, epsilon: f64, k: &[f64], per_panel: usize) -> Complex64 {
    let dim = datum.dim();
    let r = datum.x_support_radius(1e-14) + 2.0 * PI * epsilon;
    let panels = ((2.0 * r) / (0.5 * epsilon)).ceil() as usize;
    let axis = composite_rule(-r, r, panels, per_panel);
    let significant = mode.significant(1e-15);
    let norm = cell_volume(dim).powf(-0.5);
    let psi_conj = |y: &[f64]| -> Complex64 {
        significant
            .iter()
            .map(|(l, c)| {
                let ph: f64 = l.iter().zip(y).map(|(&li, yi)| li as f64 * yi).sum();
                c.conj() * Complex64::from_polar(1.0, -ph)
            })
            .sum::<Complex64>()
            * norm
    };
    // Collected before summing so the result does not depend on thread scheduling.
    let terms: Vec<Complex64> = tensor_rule(&vec![axis; dim])
        .par_iter()
        .map(|(x, w)| {
            let y: Vec<f64> = x.iter().map(|v| v / epsilon).collect();
            let kx: f64 = k.iter().zip(x).map(|(a, b)| a * b).sum();
            psi_conj(&y) * Complex64::from_polar(datum.eval(x) * w, -kx)
        })
        .collect();
    terms.iter().sum()
}

/// `f̂_0^ε(k)` by direct quadrature of `f(x) ψ₀(x/ε, εk)* e^{-ik·x}`, accepted only when
/// doubling the nodes per panel changes it by at most [`X_DOUBLING_RTOL`].
pub fn bloch_coefficient(datum: &InitialDatum, ev: &BandEvaluator, epsilon: f64, k: &[f64]) -> Result<Complex64> {
    require_localized(datum)?;
    let ek = in_zone(k, epsilon)?;
    let mode = ev.mode(&ek)?;
    let coarse = x_quadrature(datum, &mode, epsilon, k, X_PANEL_NODES);
    let fine = x_quadrature(datum, &mode, epsilon, k, 2 * X_PANEL_NODES);
    let change = (fine - coarse).norm();
    if change > X_DOUBLING_RTOL * fine.norm().max(datum.amplitude().abs() * 1e-6) {
        return Err(Error::QuadratureNonConvergence { change });
    }
    Ok(fine)
}

/// `‖f̂_0^ε - F₀‖_{L¹(K ∩ Z/ε)}`, with the coefficients from the plane-wave expansion.
pub fn coefficient_l1_gap(datum: &InitialDatum, ev: &BandEvaluator, epsilon: f64, nodes_per_axis: Option<usize>) -> Result<f64> {
    let radius = band_radius(datum, epsilon);
    let sd = spectral_datum(datum, radius, 0.0, nodes_per_axis)?;
    let gaps = sd
        .nodes
        .par_iter()
        .zip(&sd.f0)
        .zip(&sd.weights)
        .map(|((k, f0), w)| {
            let mode = ev.mode(&in_zone(k, epsilon)?)?;
            Ok(w * (bloch_coefficient_series(datum, &mode, epsilon, k) - f0).norm())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(gaps.iter().sum())
}

/// `u_0^ε(x, t) = ∫ f̂_0^ε(k) w_0^ε(x, k) cos(t √μ₀^ε(k)) dk` over `K ∩ Z/ε`.
pub fn band_m0_solution(datum: &InitialDatum, ev: &BandEvaluator, epsilon: f64, grid: &Grid, t: f64) -> Result<GridField> {
    check_dims(datum, ev.dim(), grid)?;
    let radius = band_radius(datum, epsilon);
    let speed = max_speed_bound(ev)?;
    let sd = spectral_datum(datum, radius, grid_extent(grid) + speed * t, None)?;
    let dim = grid.dim();
    let norm = cell_volume(dim).powf(-0.5);
    let per_k = sd
        .nodes
        .par_iter()
        .zip(&sd.weights)
        .map(|(k, w)| {
            let mode = ev.mode(&in_zone(k, epsilon)?)?;
            let coef = bloch_coefficient_series(datum, &mode, epsilon, k);
            let rate = (mode.eigenvalue.max(0.0)).sqrt() / epsilon;
            Ok((coef * w * (t * rate).cos() * norm, mode.significant(1e-14)))
        })
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.point(i);
            let mut s = Complex64::new(0.0, 0.0);
            for (q, (amp, terms)) in per_k.iter().enumerate() {
                let k = &sd.nodes[q];
                let psi: Complex64 = terms
                    .iter()
                    .map(|(l, c)| {
                        let ph: f64 = l.iter().zip(&x).map(|(&li, xi)| li as f64 * xi / epsilon).sum();
                        c * Complex64::from_polar(1.0, ph)
                    })
                    .sum();
                let kx: f64 = k.iter().zip(&x).map(|(a, b)| a * b).sum();
                s += amp * psi * Complex64::from_polar(1.0, kx);
            }
            s.re
        })
        .collect();
    GridField::from_values(grid.clone(), values)
}

/// Partial Parseval sums `Σ_{m ≤ M_b} ∫_{Z/ε} |f̂_m^ε|² dk` against `‖f‖²`.
#[derive(Debug, Clone)]
pub struct ParsevalReport {
    pub lhs: f64,
    /// Cumulative band sums for `M_b = 0, 1, …`.
    pub rhs: Vec<f64>,
    /// `lhs - rhs` per cutoff.
    pub gap: Vec<f64>,
}

pub fn parseval_check(
    datum: &InitialDatum,
    medium: &PeriodicMedium,
    epsilon: f64,
    max_band: usize,
    cutoff: usize,
    nodes_per_axis: Option<usize>,
) -> Result<ParsevalReport> {
    require_localized(datum)?;
    let dim = datum.dim();
    let lhs = datum.l2_norm_squared();
    let ev = BandEvaluator::new(medium, cutoff)?;
    let half = 0.5 / epsilon;
    let per_axis = nodes_per_axis.unwrap_or_else(|| default_k_nodes(dim));
    let axis = composite_rule(-half, half, per_axis.div_ceil(K_PANEL_NODES).max(1), K_PANEL_NODES);
    let rule = tensor_rule(&vec![axis; dim]);
    let contributions = rule
        .par_iter()
        .map(|(k, w)| {
            let ek: Vec<f64> = k.iter().map(|v| v * epsilon).collect();
            let modes = bands(&ev.discretization(&ek)?, max_band + 1)?;
            Ok(modes.iter().map(|m| w * bloch_coefficient_series(datum, m, epsilon, k).norm_sqr()).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rhs = vec![0.0; max_band + 1];
    for c in &contributions {
        for (m, v) in c.iter().enumerate() {
            rhs[m] += v;
        }
    }
    for m in 1..rhs.len() {
        rhs[m] += rhs[m - 1];
    }
    let gap = rhs.iter().map(|r| lhs - r).collect();
    Ok(ParsevalReport { lhs, rhs, gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datum::{make_gaussian_datum, AxisMask};
    use crate::grid::Boundary;
    use crate::medium::make_cosine_medium_1d;

    fn line(hw: f64, dx: f64) -> Grid {
        Grid::symmetric_1d(hw, dx, Boundary::ZeroExterior).unwrap()
    }

    fn cosine_ev() -> BandEvaluator {
        BandEvaluator::new(&make_cosine_medium_1d(1.5, 1.4).unwrap(), 32).unwrap()
    }

    #[test]
    fn k_rule_integrates_the_transform() {
        let d = make_gaussian_datum(0.4, 1, AxisMask::All).unwrap();
        let sd = spectral_datum(&d, d.k_support_radius(), 0.0, None).unwrap();
        let l2: f64 = sd.f0.iter().zip(&sd.weights).map(|(f, w)| f * f * w).sum();
        assert!((l2 - d.l2_norm_squared()).abs() < 1e-12);
        let vol: f64 = sd.weights.iter().sum();
        assert!((vol - 2.0 * sd.radius).abs() < 1e-10);
    }

    #[test]
    fn oracles_start_from_the_datum() {
        let d = make_gaussian_datum(0.4, 1, AxisMask::All).unwrap();
        let g = line(10.0, 0.25);
        let coeffs = DispersionCoefficients::new(1, 0.5385, -0.5853, 0.0).unwrap();
        let v = evaluate_v(&d, &coeffs, 0.2, &g, 0.0).unwrap();
        let u = evaluate_u(&d, &cosine_ev(), 0.05, &g, 0.0).unwrap();
        for i in 0..g.len() {
            let f = d.eval(&g.point(i));
            assert!((v.value.values[i] - f).abs() < 1e-10);
            assert!((u.value.values[i] - f).abs() < 1e-10);
            assert!(v.dt.values[i].abs() < 1e-14);
        }
        assert!(v.imag_residue < 1e-10 && u.imag_residue < 1e-10);
    }

    #[test]
    fn non_dispersive_limit_is_dalembert() {
        let d = make_gaussian_datum(0.4, 1, AxisMask::All).unwrap();
        let g = line(20.0, 0.5);
        let coeffs = DispersionCoefficients::new(1, 0.64, 0.0, 0.0).unwrap();
        let t = 7.0;
        let v = evaluate_v(&d, &coeffs, 0.2, &g, t).unwrap();
        for i in 0..g.len() {
            let x = g.coord(0, i);
            let exact = 0.5 * (d.eval(&[x - 0.8 * t]) + d.eval(&[x + 0.8 * t]));
            // ∂ₜ f(x ∓ ct) = 2σc (x ∓ ct) f(x ∓ ct) up to the sign of the branch.
            let dexact = 0.4 * 0.8 * ((x - 0.8 * t) * d.eval(&[x - 0.8 * t]) - (x + 0.8 * t) * d.eval(&[x + 0.8 * t]));
            assert!((v.value.values[i] - exact).abs() < 1e-10);
            assert!((v.dt.values[i] - dexact).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_medium_u_is_the_exact_wave() {
        let d = make_gaussian_datum(0.4, 1, AxisMask::All).unwrap();
        let ev = BandEvaluator::new(&PeriodicMedium::constant(1, 2.0).unwrap(), 8).unwrap();
        let g = line(15.0, 0.5);
        let t = 4.0;
        let u = evaluate_u(&d, &ev, 0.05, &g, t).unwrap();
        let c = 2.0f64.sqrt();
        for i in 0..g.len() {
            let x = g.coord(0, i);
            let exact = 0.5 * (d.eval(&[x - c * t]) + d.eval(&[x + c * t]));
            assert!((u.value.values[i] - exact).abs() < 1e-9);
        }
    }

    #[test]
    fn k_node_doubling_is_stable() {
        let d = make_gaussian_datum(0.4, 1, AxisMask::All).unwrap();
        let coeffs = DispersionCoefficients::new(1, 0.5385, -0.5853, 0.0).unwrap();
        let g = line(40.0, 0.2);
        let t = 25.0;
        let sd = |n| spectral_datum(&d, d.k_support_radius(), 40.0 + 2.0 * t, Some(n)).unwrap();
        let (a, b) = (sd(256), sd(512));
        let ra: Vec<f64> = a.nodes.iter().map(|k| v_rate(&coeffs, 0.2, k)).collect();
        let rb: Vec<f64> = b.nodes.iter().map(|k| v_rate(&coeffs, 0.2, k)).collect();
        let fa = synthesize(&a, &ra, &g, t).unwrap();
        let fb = synthesize(&b, &rb, &g, t).unwrap();
        let diff = fa.value.values.iter().zip(&fb.value.values).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(diff <= 1e-8, "diff {diff}");
    }

    #[test]
    fn u_node_doubling_is_stable() {
        let d = make_gaussian_datum(0.4, 1, AxisMask::All).unwrap();
        let ev = cosine_ev();
        let (eps, t) = (0.2, 25.0);
        let g = line(50.0, 0.25);
        let speed = max_speed_bound(&ev).unwrap();
        let sd = |n| spectral_datum(&d, band_radius(&d, eps), grid_extent(&g) + speed * t, Some(n)).unwrap();
        let field = |s: SpectralDatum| {
            let rate: Vec<f64> = s.nodes.iter().map(|k| (ev.mu0(&[k[0] * eps]).unwrap() / (eps * eps)).sqrt()).collect();
            synthesize(&s, &rate, &g, t).unwrap()
        };
        let base = sd(256);
        let doubled = sd(2 * base.nodes.len());
        let (a, b) = (field(base), field(doubled));
        let diff = a.value.values.iter().zip(&b.value.values).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(diff <= 1e-8, "diff {diff}");
    }

    #[test]
    fn constant_medium_coefficient_equals_transform() {
        let d = make_gaussian_datum(0.4, 1, AxisMask::All).unwrap();
        let ev = BandEvaluator::new(&PeriodicMedium::constant(1, 1.3).unwrap(), 8).unwrap();
        for k in [0.0, 0.7, -1.9] {
            let c = bloch_coefficient(&d, &ev, 0.2, &[k]).unwrap();
            assert!((c - d.fourier(&[k])).norm() < 1e-8, "k {k}: {c}");
        }
    }

    #[test]
    fn quadrature_and_series_routes_agree() {
        let d = make_gaussian_datum(0.4, 1, AxisMask::All).unwrap();
        let ev = cosine_ev();
        let eps = 0.2;
        for k in [0.3, -1.1, 2.4] {
            let direct = bloch_coefficient(&d, &ev, eps, &[k]).unwrap();
            let mode = ev.mode(&[k * eps]).unwrap();
            let series = bloch_coefficient_series(&d, &mode, eps, &[k]);
            assert!((direct - series).norm() < 1e-8, "k {k}: {direct} vs {series}");
        }
        assert!(bloch_coefficient(&d, &ev, eps, &[3.0]).is_err());
    }

    #[test]
    fn coefficient_is_small_outside_k() {
        let d = make_gaussian_datum(0.4, 1, AxisMask::All).unwrap();
        let ev = cosine_ev();
        let eps = 0.05;
        let k = d.k_support_radius() + 0.5;
        let mode = ev.mode(&[k * eps]).unwrap();
        assert!(bloch_coefficient_series(&d, &mode, eps, &[k]).norm() < 1e-6);
    }

    #[test]
    fn parseval_gap_closes_with_more_bands() {
        let d = make_gaussian_datum(0.4, 1, AxisMask::All).unwrap();
        let zero = parseval_check(&d.zeroed(), &make_cosine_medium_1d(1.5, 1.4).unwrap(), 0.5, 0, 16, None).unwrap();
        assert_eq!((zero.lhs, zero.rhs[0]), (0.0, 0.0));
        let flat = parseval_check(&d, &PeriodicMedium::constant(1, 1.0).unwrap(), 0.5, 3, 16, None).unwrap();
        assert!(flat.gap[3].abs() < 1e-6, "{flat:?}");
        let cos = parseval_check(&d, &make_cosine_medium_1d(1.5, 1.4).unwrap(), 0.5, 3, 16, None).unwrap();
        assert!(cos.gap[0] > 0.0 && cos.gap[3].abs() * 10.0 <= cos.gap[0], "{cos:?}");
    }

    #[test]
    fn bloch_and_dispersive_references_agree_to_first_order() {
        let d = make_gaussian_datum(0.4, 1, AxisMask::All).unwrap();
        let ev = cosine_ev();
        let coeffs = crate::dispersion::compute_coefficients(&make_cosine_medium_1d(1.5, 1.4).unwrap()).unwrap();
        let gap = |eps: f64| {
            let t = 1.0 / (eps * eps);
            let g = line(0.75 * t + 6.0, 0.05);
            let u = evaluate_u(&d, &ev, eps, &g, t).unwrap();
            let v = evaluate_v(&d, &coeffs, eps, &g, t).unwrap();
            assert!(u.imag_residue <= 1e-10 && v.imag_residue <= 1e-10, "{} {}", u.imag_residue, v.imag_residue);
            let diff: Vec<f64> = u.value.values.iter().zip(&v.value.values).map(|(a, b)| a - b).collect();
            GridField::from_values(g, diff).unwrap().l2_norm()
        };
        let (g1, g2) = (gap(0.2), gap(0.1));
        let slope = (g1 / g2).log2();
        assert!(slope >= 0.8, "gaps {g1:.3e} {g2:.3e}, slope {slope}");
    }
}
