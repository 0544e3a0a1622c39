//! Fourth-order finite differences for `∂²ₜu = ∇·(a(x/ε) ∇u)` with leapfrog in time.
//!
//! Along each axis
//! `(A u)_j = 4/(3Δx²) [a_{j+½}(u_{j+1} - u_j) - a_{j-½}(u_j - u_{j-1})]
//!          - 1/(12Δx²) [a_{j+1}(u_{j+2} - u_j) - a_{j-1}(u_j - u_{j-2})]`
//! with interval averages `a_{j+½}` over `[x_j, x_{j+1}]` and `a_j` over `[x_{j-1}, x_{j+1}]`.

use crate::config::{check_cone, RunSetup, CFL_FRACTION};
use crate::datum::InitialDatum;
use crate::error::{Error, Result};
use crate::grid::{Boundary, Grid, GridField, RunOutput, Snapshot, WaveState, BLOWUP_FACTOR};
use crate::medium::PeriodicMedium;
use crate::quadrature::GaussLegendre;
use rayon::prelude::*;

/// Minimum Gauss nodes per averaging interval.
pub const MIN_AVERAGING_NODES: usize = 8;

/// Interval averages of `a_dd(x/ε)` along each axis, stored per grid line.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedCoefficients {
    pub grid: Grid,
    pub epsilon: f64,
    /// `half[d][line][j + 1] = a_{j+½}` for `j = -1..=n-1`.
    pub half: Vec<Vec<Vec<f64>>>,
    /// `node[d][line][j + 1] = a_j` for `j = -1..=n`.
    pub node: Vec<Vec<Vec<f64>>>,
}

/// Gauss nodes per interval: `max(8, ceil(16 Δx / ε))`.
pub fn averaging_nodes(dx: f64, epsilon: f64) -> usize {
    MIN_AVERAGING_NODES.max((16.0 * dx / epsilon).ceil() as usize)
}

pub fn average_coefficients(medium: &PeriodicMedium, epsilon: f64, grid: &Grid) -> Result<AveragedCoefficients> {
    let dim = grid.dim();
    if medium.dim() != dim {
        return Err(Error::IncompatibleGrids(format!("{dim}-D grid for a {}-D medium", medium.dim())));
    }
    if dim > 1 && !medium.is_diagonal() {
        return Err(Error::InvalidParameter("multi-dimensional scheme requires a diagonal medium".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon = {epsilon} must be positive")));
    }
    let mut half = Vec::with_capacity(dim);
    let mut node = Vec::with_capacity(dim);
    let mut x = vec![0.0; dim];
    for d in 0..dim {
        let n = grid.shape[d];
        let dx = grid.spacing[d];
        let q = averaging_nodes(dx, epsilon);
        let panels = q.div_ceil(MIN_AVERAGING_NODES);
        let rule = GaussLegendre::new(MIN_AVERAGING_NODES);
        let periodic = grid.boundary[d] == Boundary::Periodic;
        let mut half_d = Vec::new();
        let mut node_d = Vec::new();
        for start in grid.line_starts(d) {
            let idx = grid.unravel(start);
            for (a, &i) in idx.iter().enumerate() {
                x[a] = grid.coord(a, i);
            }
            // Interval averages for j = -2..=n (interval [x_j, x_{j+1}]).
            let mut ext = vec![0.0; n + 3];
            let range: Box<dyn Iterator<Item = i64>> =
                if periodic { Box::new(0..n as i64) } else { Box::new(-2..=n as i64) };
            for j in range {
                let lo = grid.origin[d] + j as f64 * dx;
                let h = dx / panels as f64;
                let mut sum = 0.0;
                for p in 0..panels {
                    let a = lo + p as f64 * h;
                    sum += rule.integrate(a, a + h, |s| {
                        let mut y = x.clone();
                        y[d] = s;
                        for v in y.iter_mut() {
                            *v /= epsilon;
                        }
                        medium.diag(&y, d)
                    });
                }
                let avg = sum / dx;
                if !(avg > 0.0 && avg.is_finite()) {
                    return Err(Error::Positivity { index: start, value: avg });
                }
                ext[(j + 2) as usize] = avg;
            }
            if periodic {
                let ni = n as i64;
                for j in [-2i64, -1, ni] {
                    ext[(j + 2) as usize] = ext[(j.rem_euclid(ni) + 2) as usize];
                }
            }
            // a_{j+½}, j = -1..=n-1  ->  ext[j + 2].
            let h_line: Vec<f64> = (0..=n).map(|k| ext[k + 1]).collect();
            // a_j = (a_{j-½} + a_{j+½}) / 2, j = -1..=n.
            let n_line: Vec<f64> = (0..n + 2).map(|k| 0.5 * (ext[k] + ext[k + 1])).collect();
            half_d.push(h_line);
            node_d.push(n_line);
        }
        half.push(half_d);
        node.push(node_d);
    }
    Ok(AveragedCoefficients { grid: grid.clone(), epsilon, half, node })
}

impl AveragedCoefficients {
    /// `out = A u`, parallel over slabs of constant first index.
    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        let slab = g.strides()[0];
        let per_chunk = (4096 / slab).max(1);
        out.par_chunks_mut(slab * per_chunk).enumerate().for_each(|(c, chunk)| {
            let mut pad = Vec::new();
            for (r, row) in chunk.chunks_mut(slab).enumerate() {
                let i = c * per_chunk + r;
                self.first_axis_row(u, i, row);
                for d in 1..g.dim() {
                    self.inner_axis_row(u, i, d, row, &mut pad);
                }
            }
        });
    }

    fn weights(&self, d: usize) -> (f64, f64) {
        let h2 = self.grid.spacing[d] * self.grid.spacing[d];
        (4.0 / (3.0 * h2), 1.0 / (12.0 * h2))
    }

    /// Axis-0 contribution at the points with first index `i`; overwrites `row`.
    fn first_axis_row(&self, u: &[f64], i: usize, row: &mut [f64]) {
        let g = &self.grid;
        let n = g.shape[0] as i64;
        let slab = row.len();
        let periodic = g.boundary[0] == Boundary::Periodic;
        let (c1, c2) = self.weights(0);
        let offset = |di: i64| -> Option<usize> {
            let j = i as i64 + di;
            if periodic {
                Some(j.rem_euclid(n) as usize * slab)
            } else if (0..n).contains(&j) {
                Some(j as usize * slab)
            } else {
                None
            }
        };
        let rows: Vec<Option<usize>> = (-2..=2).map(offset).collect();
        let at = |k: usize, p: usize| rows[k].map_or(0.0, |o| u[o + p]);
        for (p, o) in row.iter_mut().enumerate() {
            let ah = &self.half[0][p];
            let an = &self.node[0][p];
            let uc = at(2, p);
            let near = ah[i + 1] * (at(3, p) - uc) - ah[i] * (uc - at(1, p));
            let wide = an[i + 2] * (at(4, p) - uc) - an[i] * (uc - at(0, p));
            *o = c1 * near - c2 * wide;
        }
    }

    /// Adds the axis-`d` contribution (`d ≥ 1`) for the slab with first index `i`.
    fn inner_axis_row(&self, u: &[f64], i: usize, d: usize, row: &mut [f64], pad: &mut Vec<f64>) {
        let g = &self.grid;
        let n = g.shape[d];
        let s = g.strides()[d];
        let slab = row.len();
        let base = i * slab;
        let periodic = g.boundary[d] == Boundary::Periodic;
        let (c1, c2) = self.weights(d);
        let lines_per_slab = slab / n;
        pad.resize(n + 4, 0.0);
        let block = s * n;
        for k in 0..lines_per_slab {
            let local = (k / s) * block + k % s;
            let line = i * lines_per_slab + k;
            for j in 0..n {
                pad[j + 2] = u[base + local + j * s];
            }
            if periodic {
                pad[0] = pad[n];
                pad[1] = pad[n + 1];
                pad[n + 2] = pad[2];
                pad[n + 3] = pad[3];
            } else {
                pad[0] = 0.0;
                pad[1] = 0.0;
                pad[n + 2] = 0.0;
                pad[n + 3] = 0.0;
            }
            let ah = &self.half[d][line];
            let an = &self.node[d][line];
            for j in 0..n {
                let q = j + 2;
                let uc = pad[q];
                let near = ah[j + 1] * (pad[q + 1] - uc) - ah[j] * (uc - pad[q - 1]);
                let wide = an[j + 2] * (pad[q + 2] - uc) - an[j] * (uc - pad[q - 2]);
                row[local + j * s] += c1 * near - c2 * wide;
            }
        }
    }

    pub fn min_value(&self) -> f64 {
        self.half
            .iter()
            .chain(&self.node)
            .flat_map(|axis| axis.iter().flatten())
            .fold(f64::INFINITY, |m, &v| m.min(v))
    }

    pub fn max_value(&self) -> f64 {
        self.half
            .iter()
            .chain(&self.node)
            .flat_map(|axis| axis.iter().flatten())
            .fold(0.0f64, |m, &v| m.max(v))
    }
}

pub fn apply_stencil(u: &GridField, coeffs: &AveragedCoefficients) -> Result<GridField> {
    if !u.grid.same_as(&coeffs.grid) {
        return Err(Error::IncompatibleGrids("field and coefficients live on different grids".into()));
    }
    let mut out = vec![0.0; u.values.len()];
    coeffs.apply_into(&u.values, &mut out);
    GridField::from_values(u.grid.clone(), out)
}

/// `u⁰ = f`, `u¹ = u⁰ + (Δt²/2) A u⁰` (zero initial velocity).
pub fn first_step(f: &GridField, coeffs: &AveragedCoefficients, dt: f64) -> Result<WaveState> {
    let au = apply_stencil(f, coeffs)?;
    let next: Vec<f64> = f.values.iter().zip(&au.values).map(|(u, a)| u + 0.5 * dt * dt * a).collect();
    WaveState::new(f.clone(), GridField::from_values(f.grid.clone(), next)?, 1, dt)
}

/// One leapfrog step `u^{m+1} = 2u^m - u^{m-1} + Δt² A u^m`.
pub fn step(state: &WaveState, coeffs: &AveragedCoefficients) -> Result<WaveState> {
    let au = apply_stencil(&state.curr, coeffs)?;
    let dt2 = state.dt * state.dt;
    let next: Vec<f64> = state
        .curr
        .values
        .iter()
        .zip(&state.prev.values)
        .zip(&au.values)
        .map(|((c, p), a)| 2.0 * c - p + dt2 * a)
        .collect();
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Instability { step: state.step + 1, time: (state.step + 1) as f64 * state.dt });
    }
    WaveState::new(state.curr.clone(), GridField::from_values(state.curr.grid.clone(), next)?, state.step + 1, state.dt)
}

/// Conserved leapfrog energy `½‖(u^{m+1} - u^m)/Δt‖² - ½⟨u^{m+1}, A u^m⟩`.
pub fn discrete_energy(next: &[f64], curr: &[f64], a_curr: &[f64], dt: f64, cell: f64) -> f64 {
    let mut kinetic = 0.0;
    let mut potential = 0.0;
    for ((n, c), a) in next.iter().zip(curr).zip(a_curr) {
        let v = (n - c) / dt;
        kinetic += v * v;
        potential += n * a;
    }
    0.5 * (kinetic - potential) * cell
}

/// `0.5 min Δx / sqrt(max ‖a‖)`.
pub fn cfl_bound(medium: &PeriodicMedium, grid: &Grid) -> f64 {
    let min_dx = grid.spacing.iter().fold(f64::INFINITY, |m, &h| m.min(h));
    CFL_FRACTION * min_dx / medium.max_norm().sqrt()
}

pub fn sample_datum(grid: &Grid, datum: &InitialDatum) -> Result<GridField> {
    if grid.dim() != datum.dim() {
        return Err(Error::IncompatibleGrids("datum and grid dimensions differ".into()));
    }
    Ok(GridField::from_fn(grid.clone(), |x| datum.eval(x)))
}

/// Leapfrog driver shared by both solvers: `accel(u, out)` writes `∂²ₜu`, and the
/// energy callback receives `(u^{m+1}, u^m, accel(u^m))`.
pub(crate) fn leapfrog<A, E>(
    setup: &RunSetup,
    initial: GridField,
    mut accel: A,
    mut energy: E,
) -> Result<RunOutput>
where
    A: FnMut(&[f64], &mut [f64], usize) -> Result<()>,
    E: FnMut(&[f64], &[f64], &[f64]) -> f64,
{
    let dt = setup.dt;
    let dt2 = dt * dt;
    let n = initial.values.len();
    let grid = initial.grid.clone();
    let threshold = BLOWUP_FACTOR * initial.max_abs().max(f64::MIN_POSITIVE);
    let mut prev = initial.values.clone();
    let mut acc = vec![0.0; n];
    accel(&prev, &mut acc, 0)?;
    let mut curr: Vec<f64> = prev.iter().zip(&acc).map(|(u, a)| u + 0.5 * dt2 * a).collect();
    let mut energy_log = Vec::with_capacity(setup.steps);
    let mut snapshots = vec![Snapshot { step: 0, time: 0.0, field: initial.clone() }];
    let keep = |m: usize| setup.snapshot_every > 0 && m % setup.snapshot_every == 0;
    if keep(1) && setup.steps > 1 {
        snapshots.push(Snapshot { step: 1, time: dt, field: GridField::from_values(grid.clone(), curr.clone())? });
    }
    energy_log.push(energy(&curr, &prev, &acc));
    let mut next = vec![0.0; n];
    for m in 1..setup.steps {
        accel(&curr, &mut acc, m)?;
        let mut max = 0.0f64;
        let mut finite = true;
        for i in 0..n {
            let v = 2.0 * curr[i] - prev[i] + dt2 * acc[i];
            finite &= v.is_finite();
            max = max.max(v.abs());
            next[i] = v;
        }
        if !finite || max > threshold {
            return Err(Error::Instability { step: m + 1, time: (m + 1) as f64 * dt });
        }
        energy_log.push(energy(&next, &curr, &acc));
        std::mem::swap(&mut prev, &mut curr);
        std::mem::swap(&mut curr, &mut next);
        if keep(m + 1) && m + 1 < setup.steps {
            snapshots.push(Snapshot {
                step: m + 1,
                time: (m + 1) as f64 * dt,
                field: GridField::from_values(grid.clone(), curr.clone())?,
            });
        }
    }
    let final_state = WaveState::new(
        GridField::from_values(grid.clone(), prev)?,
        GridField::from_values(grid.clone(), curr)?,
        setup.steps,
        dt,
    )?;
    snapshots.push(Snapshot { step: setup.steps, time: setup.final_time(), field: final_state.curr.clone() });
    Ok(RunOutput { snapshots, energy: energy_log, final_state })
}

/// Heterogeneous run from `u(0) = f`, `∂ₜu(0) = 0` up to `setup.final_time()`.
pub fn run(setup: &RunSetup, medium: &PeriodicMedium, datum: &InitialDatum) -> Result<RunOutput> {
    let bound = cfl_bound(medium, &setup.grid);
    if setup.dt > bound * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt: setup.dt, bound });
    }
    check_cone(&setup.grid, medium.max_norm().sqrt(), setup.final_time(), datum)?;
    let coeffs = average_coefficients(medium, setup.epsilon, &setup.grid)?;
    let initial = sample_datum(&setup.grid, datum)?;
    let cell = setup.grid.cell_volume();
    let dt = setup.dt;
    leapfrog(
        setup,
        initial,
        |u, out, _| {
            coeffs.apply_into(u, out);
            Ok(())
        },
        |next, curr, acc| discrete_energy(next, curr, acc, dt, cell),
    )
}
