//! Uniform grids, sampled fields and leapfrog states.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum points per axis (width of the five-point stencils).
pub const MIN_POINTS: usize = 5;

/// Boundary treatment along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// `u = 0` outside the computational domain.
    ZeroExterior,
    /// Indices wrap around; the domain length is `points * spacing`.
    Periodic,
}

/// Grid metadata shared by fields. Axis 0 is the slowest index (row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub shape: Vec<usize>,
    pub spacing: Vec<f64>,
    pub origin: Vec<f64>,
    pub boundary: Vec<Boundary>,
}

impl Grid {
    pub fn new(shape: Vec<usize>, spacing: Vec<f64>, origin: Vec<f64>, boundary: Vec<Boundary>) -> Result<Self> {
        let n = shape.len();
        if n == 0 || n > 3 || spacing.len() != n || origin.len() != n || boundary.len() != n {
            return Err(Error::InvalidParameter("inconsistent grid metadata".into()));
        }
        if let Some(&p) = shape.iter().find(|&&p| p < MIN_POINTS) {
            return Err(Error::InvalidParameter(format!("grid needs >= {MIN_POINTS} points per axis, got {p}")));
        }
        if spacing.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::InvalidParameter("grid spacing must be positive".into()));
        }
        Ok(Self { shape, spacing, origin, boundary })
    }

    /// One-dimensional grid symmetric about 0: points `j * dx` for `|j| <= round(half_width / dx)`.
    pub fn symmetric_1d(half_width: f64, dx: f64, boundary: Boundary) -> Result<Self> {
        let half = (half_width / dx).round().max(2.0) as usize;
        Self::new(vec![2 * half + 1], vec![dx], vec![-(half as f64) * dx], vec![boundary])
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Element strides, last axis fastest.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dim()];
        for d in (0..self.dim().saturating_sub(1)).rev() {
            s[d] = s[d + 1] * self.shape[d + 1];
        }
        s
    }

    #[inline]
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        self.origin[axis] + i as f64 * self.spacing[axis]
    }

    /// Coordinates along one axis.
    pub fn axis_coords(&self, axis: usize) -> Vec<f64> {
        (0..self.shape[axis]).map(|i| self.coord(axis, i)).collect()
    }

    /// Multi-index of a flat index.
    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for d in (0..self.dim()).rev() {
            idx[d] = flat % self.shape[d];
            flat /= self.shape[d];
        }
        idx
    }

    /// Physical point of a flat index.
    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.unravel(flat).iter().enumerate().map(|(d, &i)| self.coord(d, i)).collect()
    }

    /// Volume element `prod dx`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Last coordinate along an axis.
    pub fn upper(&self, axis: usize) -> f64 {
        self.coord(axis, self.shape[axis] - 1)
    }

    /// Flat offsets of the first point of every line along `axis`, in row-major order.
    pub fn line_starts(&self, axis: usize) -> Vec<usize> {
        let stride = self.strides()[axis];
        let block = stride * self.shape[axis];
        let mut out = Vec::with_capacity(self.len() / self.shape[axis]);
        for outer in (0..self.len()).step_by(block) {
            out.extend(outer..outer + stride);
        }
        out
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self.shape == other.shape
            && self.boundary == other.boundary
            && self.spacing.iter().zip(&other.spacing).all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs())
            && self.origin.iter().zip(&other.origin).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()))
    }
}

/// A real field sampled on a [`Grid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: Grid) -> Self {
        let n = grid.len();
        Self { grid, values: vec![0.0; n] }
    }

    pub fn from_fn<F: FnMut(&[f64]) -> f64>(grid: Grid, mut f: F) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        let strides = grid.strides();
        let mut x = vec![0.0; grid.dim()];
        for flat in 0..grid.len() {
            let mut rem = flat;
            for d in 0..grid.dim() {
                let i = rem / strides[d];
                rem %= strides[d];
                x[d] = grid.coord(d, i);
            }
            values.push(f(&x));
        }
        Self { grid, values }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::IncompatibleGrids(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Discrete `L^2` norm (trapezoid; endpoints of zero-exterior axes carry half weight).
    pub fn l2_norm(&self) -> f64 {
        trapezoid_sum(&self.grid, |i| self.values[i] * self.values[i]).sqrt()
    }

    pub fn dot(&self, other: &GridField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>() * self.grid.cell_volume()
    }
}

/// Trapezoid-weighted sum `sum_i w_i g(i)` over the grid, scaled by the cell volume.
pub fn trapezoid_sum<G: Fn(usize) -> f64>(grid: &Grid, g: G) -> f64 {
    let strides = grid.strides();
    let mut s = 0.0;
    for flat in 0..grid.len() {
        let mut w = 1.0;
        let mut rem = flat;
        for d in 0..grid.dim() {
            let i = rem / strides[d];
            rem %= strides[d];
            if grid.boundary[d] == Boundary::ZeroExterior && (i == 0 || i + 1 == grid.shape[d]) {
                w *= 0.5;
            }
        }
        s += w * g(flat);
    }
    s * grid.cell_volume()
}

/// Two consecutive time levels of a leapfrog scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveState {
    pub prev: GridField,
    pub curr: GridField,
    pub step: usize,
    pub dt: f64,
}

impl WaveState {
    pub fn new(prev: GridField, curr: GridField, step: usize, dt: f64) -> Result<Self> {
        if !prev.grid.same_as(&curr.grid) {
            return Err(Error::IncompatibleGrids("time levels live on different grids".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("time step {dt} must be positive")));
        }
        Ok(Self { prev, curr, step, dt })
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn grid(&self) -> &Grid {
        &self.curr.grid
    }
}

/// A stored time level.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub field: GridField,
}

/// Result of a time-stepping run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Always ends with the final time level.
    pub snapshots: Vec<Snapshot>,
    /// Discrete energy `E^{m+1/2}` after every step.
    pub energy: Vec<f64>,
    pub final_state: WaveState,
}

impl RunOutput {
    pub fn final_field(&self) -> &GridField {
        &self.final_state.curr
    }

    /// `max_m |E^{m+1/2} - E^{1/2}| / |E^{1/2}|`.
    pub fn energy_drift(&self) -> f64 {
        let Some(&e0) = self.energy.first() else { return 0.0 };
        let dev = self.energy.iter().fold(0.0f64, |m, e| m.max((e - e0).abs()));
        if e0 == 0.0 {
            dev
        } else {
            dev / e0.abs()
        }
    }
}

/// Abort threshold: growth by this factor over the initial amplitude.
pub const BLOWUP_FACTOR: f64 = 1e6;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_tiny_grids() {
        assert!(Grid::new(vec![4], vec![0.1], vec![0.0], vec![Boundary::Periodic]).is_err());
        assert!(Grid::new(vec![5], vec![0.0], vec![0.0], vec![Boundary::Periodic]).is_err());
    }

    #[test]
    fn symmetric_grid_contains_origin() {
        let g = Grid::symmetric_1d(10.0, 0.1, Boundary::ZeroExterior).unwrap();
        assert_eq!(g.shape[0], 201);
        assert!(g.coord(0, 100).abs() < 1e-14);
        assert!((g.coord(0, 0) + g.upper(0)).abs() < 1e-12);
    }

    #[test]
    fn row_major_layout() {
        let g = Grid::new(vec![5, 6], vec![1.0, 1.0], vec![0.0, 0.0], vec![Boundary::ZeroExterior; 2]).unwrap();
        assert_eq!(g.strides(), vec![6, 1]);
        let f = GridField::from_fn(g.clone(), |x| 10.0 * x[0] + x[1]);
        assert_eq!(f.values[7], 11.0);
        assert_eq!(g.unravel(7), vec![1, 1]);
    }

    #[test]
    fn lines_cover_every_point_once() {
        let g = Grid::new(vec![5, 6, 7], vec![1.0; 3], vec![0.0; 3], vec![Boundary::Periodic; 3]).unwrap();
        for axis in 0..3 {
            let stride = g.strides()[axis];
            let mut seen = vec![0; g.len()];
            for s in g.line_starts(axis) {
                for i in 0..g.shape[axis] {
                    seen[s + i * stride] += 1;
                }
            }
            assert!(seen.iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn trapezoid_norm_of_sine() {
        let n = 2001;
        let dx = 2.0 * std::f64::consts::PI / (n - 1) as f64;
        let g = Grid::new(vec![n], vec![dx], vec![0.0], vec![Boundary::ZeroExterior]).unwrap();
        let f = GridField::from_fn(g, |x| x[0].sin());
        assert!((f.l2_norm() - std::f64::consts::PI.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn wave_state_checks_grids() {
        let a = GridField::zeros(Grid::symmetric_1d(1.0, 0.1, Boundary::Periodic).unwrap());
        let b = GridField::zeros(Grid::symmetric_1d(2.0, 0.1, Boundary::Periodic).unwrap());
        assert!(WaveState::new(a.clone(), b, 0, 0.1).is_err());
        assert!(WaveState::new(a.clone(), a, 0, 0.0).is_err());
    }
}
