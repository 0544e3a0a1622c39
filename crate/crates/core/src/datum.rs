//! Initial data `f` and their Fourier descriptors `F0`.
//!
//! Transform convention: `f(x) = (2 pi)^{-m/2} \int F0(k) e^{+i k.x} dk`, taken over
//! the `m` axes on which the datum is localized. Along unmasked axes `f` is
//! constant and no transform is taken.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::medium::SUPPORT_TOLERANCE;

/// Gaussian initial datum `f(x) = amplitude * exp(-sigma * sum_{masked} x_i^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialDatum {
    sigma: f64,
    amplitude: f64,
    mask: Vec<bool>,
    support_tolerance: f64,
}

/// Which axes a Gaussian datum is localized along.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisMask<'a> {
    All,
    Only(&'a [usize]),
}

pub fn make_gaussian_datum(sigma: f64, n: usize, axes: AxisMask<'_>) -> Result<InitialDatum> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("Gaussian width parameter {sigma} must be positive")));
    }
    if !(1..=3).contains(&n) {
        return Err(Error::InvalidParameter(format!("dimension {n} not in 1..=3")));
    }
    let mask = match axes {
        AxisMask::All => vec![true; n],
        AxisMask::Only(list) => {
            let mut m = vec![false; n];
            for &a in list {
                if a >= n {
                    return Err(Error::InvalidParameter(format!("axis {a} out of range for n = {n}")));
                }
                m[a] = true;
            }
            if !m.iter().any(|&b| b) {
                return Err(Error::InvalidParameter("datum must be localized along some axis".into()));
            }
            m
        }
    };
    Ok(InitialDatum { sigma, amplitude: 1.0, mask, support_tolerance: SUPPORT_TOLERANCE })
}

impl InitialDatum {
    /// The identically zero datum (same shape as `self`).
    pub fn zeroed(&self) -> Self {
        Self { amplitude: 0.0, ..self.clone() }
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn dim(&self) -> usize {
        self.mask.len()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn masked_axes(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&d| self.mask[d]).collect()
    }

    /// Number of axes along which the datum is localized.
    pub fn transform_dim(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(&self.mask).filter(|(_, &m)| m).map(|(v, _)| v * v).sum();
        self.amplitude * (-self.sigma * r2).exp()
    }

    /// `F0(k)` with `k` ranging over the masked axes only.
    pub fn fourier(&self, k: &[f64]) -> Complex64 {
        let m = self.transform_dim() as f64;
        let k2: f64 = k.iter().map(|v| v * v).sum();
        let v = self.amplitude * (2.0 * self.sigma).powf(-0.5 * m) * (-k2 / (4.0 * self.sigma)).exp();
        Complex64::new(v, 0.0)
    }

    /// `rho_K`: `|F0(k)| < support_tolerance` whenever `|k| > rho_K`.
    pub fn k_support_radius(&self) -> f64 {
        let m = self.transform_dim() as f64;
        let peak = self.amplitude.abs() * (2.0 * self.sigma).powf(-0.5 * m);
        if peak <= self.support_tolerance {
            return 0.0;
        }
        (4.0 * self.sigma * (peak / self.support_tolerance).ln()).sqrt()
    }

    /// Radius beyond which `|f| < tol` along the masked axes.
    pub fn x_support_radius(&self, tol: f64) -> f64 {
        let a = self.amplitude.abs();
        if a <= tol {
            return 0.0;
        }
        ((a / tol).ln() / self.sigma).sqrt()
    }

    /// `||f||^2` over the masked axes (per unit length along unmasked ones).
    pub fn l2_norm_squared(&self) -> f64 {
        let m = self.transform_dim() as f64;
        self.amplitude * self.amplitude * (PI / (2.0 * self.sigma)).powf(0.5 * m)
    }

    pub fn support_tolerance(&self) -> f64 {
        self.support_tolerance
    }

    /// The same datum viewed on its localized axes only.
    pub fn restricted_to_masked(&self) -> InitialDatum {
        Self { mask: vec![true; self.transform_dim()], ..self.clone() }
    }

    /// Whether the datum is constant along `axis`.
    pub fn is_constant_along(&self, axis: usize) -> bool {
        !self.mask[axis]
    }
}
