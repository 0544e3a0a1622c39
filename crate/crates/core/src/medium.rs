//! Periodic media `a_Y` on the cell `Y = (-pi, pi)^n`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quadrature;

/// Coefficients below this magnitude in Fourier space count as zero.
pub const SUPPORT_TOLERANCE: f64 = 1e-12;
/// Number of unit directions used to probe ellipticity.
pub const ELLIPTICITY_PROBES: usize = 200;
/// Minimum samples per axis for tabulated media.
pub const MIN_TABLE_POINTS: usize = 64;

/// Symmetric `n x n` coefficient matrix (`n <= 3`), row-major in a fixed buffer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefMatrix {
    n: usize,
    data: [f64; 9],
}

impl CoefMatrix {
    pub fn zeros(n: usize) -> Self {
        assert!((1..=3).contains(&n));
        Self { n, data: [0.0; 9] }
    }

    pub fn scalar(n: usize, value: f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, value);
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n);
            for (j, &v) in row.iter().enumerate() {
                m.set(i, j, v);
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[3 * i + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[3 * i + j] = v;
    }

    /// `xi^T a xi`.
    pub fn quadratic_form(&self, xi: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                s += xi[i] * self.get(i, j) * xi[j];
            }
        }
        s
    }

    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Row-sum norm, an upper bound for the spectral norm.
    pub fn norm_bound(&self) -> f64 {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| i == j || self.get(i, j) == 0.0))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Periodic table of coefficient matrices on a uniform grid over `[-pi, pi)^n`.
#[derive(Debug, Clone)]
pub struct SampledTable {
    points: usize,
    values: Vec<CoefMatrix>,
}

impl SampledTable {
    /// `values` are ordered with axis 0 fastest.
    pub fn new(n: usize, points: usize, values: Vec<CoefMatrix>) -> Result<Self> {
        if points < MIN_TABLE_POINTS {
            return Err(Error::InvalidParameter(format!(
                "sampled media need at least {MIN_TABLE_POINTS} points per axis, got {points}"
            )));
        }
        if values.len() != points.pow(n as u32) {
            return Err(Error::InvalidParameter("sample count does not match grid".into()));
        }
        if let Some(bad) = values.iter().position(|v| v.dim() != n) {
            return Err(Error::InvalidParameter(format!("sample {bad} has wrong dimension")));
        }
        Ok(Self { points, values })
    }

    fn eval(&self, n: usize, y: &[f64]) -> CoefMatrix {
        let h = 2.0 * PI / self.points as f64;
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for d in 0..n {
            let s = (wrap(y[d]) + PI) / h;
            let i = s.floor();
            frac[d] = s - i;
            base[d] = (i as usize) % self.points;
        }
        let mut acc = CoefMatrix::zeros(n);
        for corner in 0..(1usize << n) {
            let mut weight = 1.0;
            let mut idx = 0;
            let mut stride = 1;
            for d in 0..n {
                let bit = (corner >> d) & 1;
                weight *= if bit == 1 { frac[d] } else { 1.0 - frac[d] };
                idx += ((base[d] + bit) % self.points) * stride;
                stride *= self.points;
            }
            if weight != 0.0 {
                acc = add_scaled(&acc, &self.values[idx], weight);
            }
        }
        acc
    }
}

fn add_scaled(a: &CoefMatrix, b: &CoefMatrix, w: f64) -> CoefMatrix {
    let mut out = *a;
    for (o, v) in out.data.iter_mut().zip(b.data.iter()) {
        *o += w * v;
    }
    out
}

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type TensorFn = Arc<dyn Fn(&[f64]) -> CoefMatrix + Send + Sync>;

#[derive(Clone)]
enum Coefficient {
    Constant(f64),
    Cosine { mean: f64, amplitude: f64 },
    SmoothedSquare { cbar: f64 },
    Isotropic(ScalarFn),
    Tensor(TensorFn),
    Sampled(SampledTable),
}

/// A `Y`-periodic, symmetric positive-definite coefficient field.
#[derive(Clone)]
pub struct PeriodicMedium {
    dim: usize,
    coefficient: Coefficient,
    gamma: f64,
    max_norm: f64,
    reflection_symmetric: bool,
    permutation_symmetric: bool,
    label: String,
}

impl fmt::Debug for PeriodicMedium {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PeriodicMedium")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("gamma", &self.gamma)
            .field("max_norm", &self.max_norm)
            .field("reflection_symmetric", &self.reflection_symmetric)
            .field("permutation_symmetric", &self.permutation_symmetric)
            .finish()
    }
}

/// Reduce a coordinate into `[-pi, pi)`.
#[inline]
pub fn wrap(y: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let r = y - two_pi * ((y + PI) / two_pi).floor();
    if r >= PI {
        r - two_pi
    } else {
        r
    }
}

/// One factor of the smoothed-square profile, `[1 + tanh(4(y + 3pi/5))][1 - tanh(4(y - 3pi/5))]`.
fn square_factor(y: f64) -> f64 {
    let s = 0.6 * PI;
    (1.0 + (4.0 * (y + s)).tanh()) * (1.0 - (4.0 * (y - s)).tanh())
}

/// The unshifted smoothed-square field `c(y)` on the cell.
pub fn smoothed_square_profile(y: &[f64]) -> f64 {
    y.iter().map(|&v| square_factor(wrap(v))).product::<f64>() / 8.0
}

/// `a_Y(y) = mean + amplitude * cos(y)`.
pub fn make_cosine_medium_1d(mean: f64, amplitude: f64) -> Result<PeriodicMedium> {
    if !(mean.is_finite() && amplitude.is_finite()) {
        return Err(Error::InvalidParameter("non-finite cosine medium parameters".into()));
    }
    if mean <= amplitude.abs() {
        return Err(Error::Ellipticity(format!(
            "mean {mean} must exceed |amplitude| {}",
            amplitude.abs()
        )));
    }
    Ok(PeriodicMedium {
        dim: 1,
        coefficient: Coefficient::Cosine { mean, amplitude },
        gamma: mean - amplitude.abs(),
        max_norm: mean + amplitude.abs(),
        reflection_symmetric: true,
        permutation_symmetric: true,
        label: format!("cosine-1d(mean={mean}, amplitude={amplitude})"),
    })
}

/// The isotropic two-dimensional smoothed square structure `(1 + c(y) - cbar) I`.
pub fn make_smoothed_square_medium_2d() -> PeriodicMedium {
    // c factorizes, so its cell mean is the square of a one-dimensional mean.
    let g_mean = quadrature::composite(-PI, PI, 256, 16, square_factor) / (2.0 * PI);
    let cbar = g_mean * g_mean / 8.0;
    let mut medium = PeriodicMedium {
        dim: 2,
        coefficient: Coefficient::SmoothedSquare { cbar },
        gamma: 0.0,
        max_norm: 0.0,
        reflection_symmetric: true,
        permutation_symmetric: true,
        label: "smoothed-square-2d".into(),
    };
    let (lo, hi) = medium.sample_extremes(256);
    medium.gamma = lo;
    medium.max_norm = hi;
    medium
}

impl PeriodicMedium {
    /// Homogeneous medium `a_Y = value * I`.
    pub fn constant(dim: usize, value: f64) -> Result<Self> {
        check_dim(dim)?;
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::Ellipticity(format!("constant coefficient {value} must be positive")));
        }
        Ok(Self {
            dim,
            coefficient: Coefficient::Constant(value),
            gamma: value,
            max_norm: value,
            reflection_symmetric: true,
            permutation_symmetric: true,
            label: format!("constant-{dim}d({value})"),
        })
    }

    /// Isotropic medium `a_Y(y) = f(y) I` from a closed-form, `Y`-periodic scalar field.
    pub fn isotropic<F>(dim: usize, label: &str, reflection: bool, permutation: bool, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        check_dim(dim)?;
        Self::validated(dim, label, reflection, permutation, Coefficient::Isotropic(Arc::new(f)))
    }

    /// General symmetric matrix field.
    pub fn tensor<F>(dim: usize, label: &str, reflection: bool, permutation: bool, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> CoefMatrix + Send + Sync + 'static,
    {
        check_dim(dim)?;
        Self::validated(dim, label, reflection, permutation, Coefficient::Tensor(Arc::new(f)))
    }

    /// Tabulated medium with multilinear interpolation.
    pub fn sampled(dim: usize, label: &str, reflection: bool, permutation: bool, table: SampledTable) -> Result<Self> {
        check_dim(dim)?;
        Self::validated(dim, label, reflection, permutation, Coefficient::Sampled(table))
    }

    fn validated(dim: usize, label: &str, reflection: bool, permutation: bool, coefficient: Coefficient) -> Result<Self> {
        let mut medium = Self {
            dim,
            coefficient,
            gamma: 0.0,
            max_norm: 0.0,
            reflection_symmetric: reflection,
            permutation_symmetric: permutation,
            label: label.to_string(),
        };
        let points = halton_points(dim, 512);
        let probes = unit_probes(dim, ELLIPTICITY_PROBES);
        let mut gamma = f64::INFINITY;
        let mut max_norm: f64 = 0.0;
        for y in &points {
            let a = medium.eval(y);
            if !a.is_finite() {
                return Err(Error::NonFiniteCoefficient { y: y.clone() });
            }
            if a.asymmetry() != 0.0 {
                return Err(Error::InvalidParameter(format!("coefficient not symmetric at y = {y:?}")));
            }
            for xi in &probes {
                gamma = gamma.min(a.quadratic_form(xi));
            }
            max_norm = max_norm.max(a.norm_bound());
        }
        if gamma <= 0.0 {
            return Err(Error::Ellipticity(format!("probe minimum {gamma} is not positive")));
        }
        medium.gamma = gamma;
        medium.max_norm = max_norm;
        if let Some(gap) = medium.symmetry_defect(&points) {
            if gap > 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "declared symmetries violated by {gap:.3e}"
                )));
            }
        }
        Ok(medium)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Upper bound on `max_y ||a_Y(y)||` used by CFL and cone checks.
    pub fn max_norm(&self) -> f64 {
        self.max_norm
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn reflection_symmetric(&self) -> bool {
        self.reflection_symmetric
    }

    pub fn permutation_symmetric(&self) -> bool {
        self.permutation_symmetric
    }

    pub fn is_symmetric(&self) -> bool {
        self.reflection_symmetric && self.permutation_symmetric
    }

    /// True when `a_Y(y)` is diagonal everywhere (known structurally, not sampled).
    pub fn is_diagonal(&self) -> bool {
        !matches!(self.coefficient, Coefficient::Tensor(_) | Coefficient::Sampled(_))
            || matches!(&self.coefficient, Coefficient::Sampled(t) if t.values.iter().all(|v| v.is_diagonal()))
    }

    /// Evaluate `a_Y(y)`; `y` may lie outside the cell.
    pub fn eval(&self, y: &[f64]) -> CoefMatrix {
        debug_assert_eq!(y.len(), self.dim);
        match &self.coefficient {
            Coefficient::Constant(c) => CoefMatrix::scalar(self.dim, *c),
            Coefficient::Tensor(f) => {
                let w: Vec<f64> = y.iter().map(|&v| wrap(v)).collect();
                f(&w)
            }
            Coefficient::Sampled(t) => t.eval(self.dim, y),
            _ => CoefMatrix::scalar(self.dim, self.eval_scalar(y)),
        }
    }

    /// Diagonal entry `a_ii(y)`.
    #[inline]
    pub fn diag(&self, y: &[f64], axis: usize) -> f64 {
        match &self.coefficient {
            Coefficient::Tensor(_) | Coefficient::Sampled(_) => self.eval(y).get(axis, axis),
            _ => self.eval_scalar(y),
        }
    }

    fn eval_scalar(&self, y: &[f64]) -> f64 {
        match &self.coefficient {
            Coefficient::Constant(c) => *c,
            Coefficient::Cosine { mean, amplitude } => mean + amplitude * y[0].cos(),
            Coefficient::SmoothedSquare { cbar } => 1.0 + smoothed_square_profile(y) - cbar,
            Coefficient::Isotropic(f) => {
                let mut w = [0.0; 3];
                for (d, &v) in y.iter().enumerate() {
                    w[d] = wrap(v);
                }
                f(&w[..self.dim])
            }
            Coefficient::Tensor(_) | Coefficient::Sampled(_) => unreachable!("matrix-valued medium"),
        }
    }

    /// Cell mean of the smoothed-square profile, when this medium is that preset.
    pub fn smoothed_square_mean(&self) -> Option<f64> {
        match self.coefficient {
            Coefficient::SmoothedSquare { cbar } => Some(cbar),
            _ => None,
        }
    }

    /// Largest deviation from the declared reflection/permutation symmetries at `points`,
    /// or `None` if no symmetry is declared.
    pub fn symmetry_defect(&self, points: &[Vec<f64>]) -> Option<f64> {
        if !self.reflection_symmetric && !self.permutation_symmetric {
            return None;
        }
        let mut worst: f64 = 0.0;
        for y in points {
            let a = self.eval(y);
            let mut images = Vec::new();
            if self.reflection_symmetric {
                for i in 0..self.dim {
                    let mut s = y.clone();
                    s[i] = -s[i];
                    images.push(s);
                }
            }
            if self.permutation_symmetric {
                for i in 0..self.dim {
                    for j in (i + 1)..self.dim {
                        let mut r = y.clone();
                        r.swap(i, j);
                        images.push(r);
                    }
                }
            }
            for img in images {
                let b = self.eval(&img);
                for i in 0..self.dim {
                    for j in 0..self.dim {
                        worst = worst.max((a.get(i, j) - b.get(i, j)).abs());
                    }
                }
            }
        }
        Some(worst)
    }

    fn sample_extremes(&self, per_axis: usize) -> (f64, f64) {
        let h = 2.0 * PI / per_axis as f64;
        let total = per_axis.pow(self.dim as u32);
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        let mut y = vec![0.0; self.dim];
        for idx in 0..total {
            let mut rem = idx;
            for v in y.iter_mut() {
                *v = -PI + (rem % per_axis) as f64 * h;
                rem /= per_axis;
            }
            let a = self.eval(&y);
            for i in 0..self.dim {
                lo = lo.min(a.get(i, i));
            }
            hi = hi.max(a.norm_bound());
        }
        (lo, hi)
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if (1..=3).contains(&dim) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("dimension {dim} not in 1..=3")))
    }
}

fn radical_inverse(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Deterministic low-discrepancy points in `Y`.
pub fn halton_points(dim: usize, count: usize) -> Vec<Vec<f64>> {
    const BASES: [usize; 3] = [2, 3, 5];
    (1..=count)
        .map(|i| (0..dim).map(|d| -PI + 2.0 * PI * radical_inverse(i, BASES[d])).collect())
        .collect()
}

/// Deterministic unit probe directions.
pub fn unit_probes(dim: usize, count: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = (0..dim)
        .map(|d| (0..dim).map(|e| if d == e { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut i = 1;
    while out.len() < count {
        let v: Vec<f64> = (0..dim).map(|d| 2.0 * radical_inverse(i, [7, 11, 13][d]) - 1.0).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            out.push(v.iter().map(|x| x / norm).collect());
        }
        i += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_medium_values() {
        let m = make_cosine_medium_1d(1.5, 1.4).unwrap();
        assert!((m.eval(&[0.0]).get(0, 0) - 2.9).abs() < 1e-15);
        assert!((m.eval(&[PI]).get(0, 0) - 0.1).abs() < 1e-14);
        assert!((m.gamma() - 0.1).abs() < 1e-15);
        assert!(m.is_symmetric());

        let c = make_cosine_medium_1d(1.0, 0.0).unwrap();
        assert_eq!(c.eval(&[1.234]).get(0, 0), 1.0);

        let h = make_cosine_medium_1d(2.0, 1.0).unwrap();
        assert!((h.eval(&[PI / 2.0]).get(0, 0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_medium_rejects_loss_of_ellipticity() {
        assert!(matches!(make_cosine_medium_1d(1.0, 1.0), Err(Error::Ellipticity(_))));
        assert!(matches!(make_cosine_medium_1d(1.0, -1.5), Err(Error::Ellipticity(_))));
    }

    #[test]
    fn smoothed_square_corner_and_centre() {
        let m = make_smoothed_square_medium_2d();
        let cbar = m.smoothed_square_mean().unwrap();
        let t = (12.0 * PI / 5.0).tanh();
        let c00 = (1.0 + t).powi(2) * (1.0 - (-t)).powi(2) / 8.0;
        assert!((smoothed_square_profile(&[0.0, 0.0]) - c00).abs() < 1e-14);
        assert!((c00 - 2.0).abs() < 1e-5);
        let a00 = m.eval(&[0.0, 0.0]);
        assert!((a00.get(0, 0) - (1.0 + c00 - cbar)).abs() < 1e-14);
        assert_eq!(a00.get(0, 1), 0.0);
        let corner = smoothed_square_profile(&[PI, PI]);
        assert!(corner < 1e-6, "c(pi, pi) = {corner}");
        assert!((m.eval(&[PI, PI]).get(1, 1) - (1.0 + corner - cbar)).abs() < 1e-14);
    }

    #[test]
    fn smoothed_square_has_unit_mean() {
        // The profile has a derivative jump of order 1e-3 at the cell faces, so
        // integrate with panels aligned to them.
        let m = make_smoothed_square_medium_2d();
        let axis = quadrature::composite_rule(-PI, PI, 64, 10);
        let s: f64 = quadrature::tensor_rule(&[axis.clone(), axis])
            .iter()
            .map(|(y, w)| w * m.eval(y).get(0, 0))
            .sum();
        let mean = s / (4.0 * PI * PI);
        assert!((mean - 1.0).abs() < 1e-12, "mean = {mean}");
    }

    #[test]
    fn wrap_reduces_into_cell() {
        for y in [-7.0, -PI, 0.3, PI, 9.5, 100.0] {
            let w = wrap(y);
            assert!((-PI..PI).contains(&w));
            let k = ((y - w) / (2.0 * PI)).round();
            assert!((y - w - 2.0 * PI * k).abs() < 1e-12);
        }
    }

    #[test]
    fn custom_medium_validation() {
        let ok = PeriodicMedium::isotropic(2, "bumps", true, true, |y| 2.0 + y[0].cos() * y[1].cos()).unwrap();
        // Sampled minimum: never below the true bound 1, and close to it.
        assert!(ok.gamma() >= 1.0 - 1e-12 && ok.gamma() < 1.05, "gamma = {}", ok.gamma());
        let asym = PeriodicMedium::isotropic(1, "shifted", true, true, |y| 2.0 + (y[0] + 0.3).cos());
        assert!(asym.is_err());
        let bad = PeriodicMedium::isotropic(1, "bad", false, false, |y| y[0].cos());
        assert!(matches!(bad, Err(Error::Ellipticity(_))));
        let nan = PeriodicMedium::isotropic(1, "nan", false, false, |_| f64::NAN);
        assert!(matches!(nan, Err(Error::NonFiniteCoefficient { .. })));
    }

    #[test]
    fn sampled_table_interpolates_periodically() {
        let p = 64;
        let h = 2.0 * PI / p as f64;
        let values = (0..p)
            .map(|i| CoefMatrix::scalar(1, 2.0 + (-PI + i as f64 * h).cos()))
            .collect();
        let table = SampledTable::new(1, p, values).unwrap();
        let m = PeriodicMedium::sampled(1, "table", true, true, table).unwrap();
        for y in [0.1, 1.0, 3.0, -3.1] {
            assert!((m.eval(&[y]).get(0, 0) - (2.0 + y.cos())).abs() < 2e-3);
        }
        assert!(SampledTable::new(1, 32, vec![CoefMatrix::scalar(1, 1.0); 32]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn smoothed_square_is_symmetric_and_deterministic(y1 in -2.0 * PI..2.0 * PI, y2 in -2.0 * PI..2.0 * PI) {
            let m = make_smoothed_square_medium_2d();
            let a = m.eval(&[y1, y2]).get(0, 0);
            prop_assert_eq!(a.to_bits(), m.eval(&[y1, y2]).get(0, 0).to_bits());
            for s in [[-y1, y2], [y1, -y2], [y2, y1]] {
                prop_assert!((m.eval(&s).get(0, 0) - a).abs() <= 1e-12);
            }
        }

        #[test]
        fn cosine_medium_is_even(y in -2.0 * PI..2.0 * PI) {
            let m = make_cosine_medium_1d(1.5, 1.4).unwrap();
            prop_assert!((m.eval(&[-y]).get(0, 0) - m.eval(&[y]).get(0, 0)).abs() <= 1e-12);
        }
    }
}
