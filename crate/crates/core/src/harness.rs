//! Paired runs, error metrics, convergence tables and figure data.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{CoefficientSpec, DatumSpec, MediumSpec, SimulationConfig};
use crate::dispersion::{compute_coefficients_with, decompose, DispersionCoefficients, DispersionOptions, EffectiveTensors};
use crate::error::{Error, Result};
use crate::grid::{Boundary, Grid, GridField, RunOutput, Snapshot};
use crate::{effective, hetero};

/// Environment variable bounding the worker threads of parallel sweeps.
pub const WORKERS_ENV: &str = "LONGWAVE_WORKERS";

/// Run `f` on a pool sized by [`WORKERS_ENV`] (rayon's default when unset or invalid).
pub fn with_workers<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R> {
    let n = std::env::var(WORKERS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Four-point Lagrange weights for nodes `-1, 0, 1, 2` at offset `t ∈ [0, 1)`.
fn cubic_weights(t: f64) -> [f64; 4] {
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ]
}

/// Tensor-product cubic interpolation of `w` onto `target`; zero outside zero-exterior
/// axes, periodic wrap on periodic ones.
pub fn interpolate_cubic(w: &GridField, target: &Grid) -> Result<GridField> {
    let src = &w.grid;
    let dim = src.dim();
    if target.dim() != dim {
        return Err(Error::IncompatibleGrids(format!("{}-D field onto a {}-D grid", dim, target.dim())));
    }
    for d in 0..dim {
        if src.boundary[d] != target.boundary[d] {
            return Err(Error::IncompatibleGrids(format!("boundary modes differ on axis {d}")));
        }
        if src.boundary[d] == Boundary::Periodic {
            let (ps, pt) = (src.spacing[d] * src.shape[d] as f64, target.spacing[d] * target.shape[d] as f64);
            if (ps - pt).abs() > 1e-9 * ps {
                return Err(Error::IncompatibleGrids(format!("periods {ps} and {pt} differ on axis {d}")));
            }
        }
    }
    let strides = src.strides();
    let values: Vec<f64> = (0..target.len())
        .into_par_iter()
        .map(|flat| {
            let x = target.point(flat);
            let mut idx = vec![[0usize; 4]; dim];
            let mut wts = vec![[0.0f64; 4]; dim];
            for d in 0..dim {
                let n = src.shape[d] as i64;
                let s = (x[d] - src.origin[d]) / src.spacing[d];
                let i = s.floor() as i64;
                let cw = cubic_weights(s - i as f64);
                for m in 0..4 {
                    let j = i - 1 + m as i64;
                    let (jj, inside) = match src.boundary[d] {
                        Boundary::Periodic => (j.rem_euclid(n), true),
                        Boundary::ZeroExterior => (j, (0..n).contains(&j)),
                    };
                    idx[d][m] = if inside { jj as usize } else { usize::MAX };
                    wts[d][m] = if inside { cw[m] } else { 0.0 };
                }
            }
            let mut sum = 0.0;
            for combo in 0..4usize.pow(dim as u32) {
                let mut c = combo;
                let mut weight = 1.0;
                let mut pos = 0usize;
                for d in 0..dim {
                    let m = c % 4;
                    c /= 4;
                    if idx[d][m] == usize::MAX {
                        weight = 0.0;
                        break;
                    }
                    weight *= wts[d][m];
                    pos += idx[d][m] * strides[d];
                }
                if weight != 0.0 {
                    sum += weight * w.values[pos];
                }
            }
            sum
        })
        .collect();
    GridField::from_values(target.clone(), values)
}

fn aligned(u: &GridField, w: &GridField) -> Result<GridField> {
    if u.grid.same_as(&w.grid) {
        Ok(w.clone())
    } else {
        interpolate_cubic(w, &u.grid)
    }
}

/// `‖u - w‖_{L²}` by the composite trapezoid rule on `u`'s grid.
pub fn l2_error(u: &GridField, w: &GridField) -> Result<f64> {
    let w = aligned(u, w)?;
    let diff: Vec<f64> = u.values.iter().zip(&w.values).map(|(a, b)| a - b).collect();
    Ok(GridField::from_values(u.grid.clone(), diff)?.l2_norm())
}

pub fn linf_error(u: &GridField, w: &GridField) -> Result<f64> {
    let w = aligned(u, w)?;
    Ok(u.values.iter().zip(&w.values).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
}

/// `ū(x₁) = (1/P) ∫ u(x₁, x₂) dx₂` over the periodic last axis of a 2D field.
pub fn x2_mean(u: &GridField) -> Result<GridField> {
    let g = &u.grid;
    if g.dim() != 2 || g.boundary[1] != Boundary::Periodic {
        return Err(Error::IncompatibleGrids("x₂-mean needs a 2D grid periodic in x₂".into()));
    }
    let (n0, n1) = (g.shape[0], g.shape[1]);
    // The trapezoid rule over a full period weighs every node equally.
    let values = (0..n0).map(|i| u.values[i * n1..(i + 1) * n1].iter().sum::<f64>() / n1 as f64).collect();
    let line = Grid::new(vec![n0], vec![g.spacing[0]], vec![g.origin[0]], vec![g.boundary[0]])?;
    GridField::from_values(line, values)
}

/// Shape summary of a grid for reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridMeta {
    pub shape: Vec<usize>,
    pub spacing: Vec<f64>,
    pub origin: Vec<f64>,
}

impl From<&Grid> for GridMeta {
    fn from(g: &Grid) -> Self {
        Self { shape: g.shape.clone(), spacing: g.spacing.clone(), origin: g.origin.clone() }
    }
}

/// Comparison of `u^ε` and `w^ε` at one time.
///
/// `surrogate = min(L², L∞)` bounds the sum-space norm from above.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub epsilon: f64,
    pub time: f64,
    pub l2: f64,
    pub linf: f64,
    pub surrogate: f64,
    pub hetero_grid: GridMeta,
    pub effective_grid: GridMeta,
    pub wall_clock_s: f64,
}

/// Coefficients from the config, or from the cell problem when not given.
pub fn resolve_coefficients(cfg: &SimulationConfig) -> Result<DispersionCoefficients> {
    if let Some(c) = cfg.explicit_coefficients()? {
        return Ok(c);
    }
    let medium = cfg.build_medium()?;
    let mut opts = DispersionOptions::for_dim(medium.dim());
    if let Some(m) = cfg.bloch_cutoff {
        opts.cutoff = m;
    }
    compute_coefficients_with(&medium, &opts)
}

/// Both solutions at the final time with their comparison.
#[derive(Debug, Clone)]
pub struct PairResult {
    pub coefficients: DispersionCoefficients,
    pub tensors: EffectiveTensors,
    pub hetero: RunOutput,
    pub effective: RunOutput,
    /// `u^ε` on the comparison grid (the x₂-mean for strip runs).
    pub u_profile: GridField,
    /// `w^ε` interpolated onto the comparison grid.
    pub w_profile: GridField,
    pub report: ErrorReport,
}

pub fn run_hetero(cfg: &SimulationConfig) -> Result<RunOutput> {
    let medium = cfg.build_medium()?;
    let setup = cfg.hetero_setup(&medium)?;
    hetero::run(&setup, &medium, &cfg.build_datum()?)
}

pub fn run_effective(cfg: &SimulationConfig, coefficients: &DispersionCoefficients) -> Result<(EffectiveTensors, RunOutput)> {
    let tensors = decompose(coefficients)?;
    let setup = cfg.effective_setup(coefficients)?;
    let out = effective::run(&setup, &tensors, &cfg.build_datum()?, None)?;
    Ok((tensors, out))
}

/// Comparison profile of a heterogeneous field: itself, or its x₂-mean when the
/// effective run was reduced to fewer axes.
fn comparison_profile(u: &GridField, reduced_dim: usize) -> Result<GridField> {
    if u.grid.dim() == reduced_dim {
        Ok(u.clone())
    } else if u.grid.dim() == 2 && reduced_dim == 1 {
        x2_mean(u)
    } else {
        Err(Error::IncompatibleGrids(format!("cannot compare {}-D with {reduced_dim}-D output", u.grid.dim())))
    }
}

pub fn run_pair(cfg: &SimulationConfig, coefficients: &DispersionCoefficients) -> Result<PairResult> {
    let start = Instant::now();
    let hetero_out = run_hetero(cfg)?;
    let (tensors, effective_out) = run_effective(cfg, coefficients)?;
    let w = effective_out.final_field();
    let u_profile = comparison_profile(hetero_out.final_field(), w.grid.dim())?;
    let w_profile = aligned(&u_profile, w)?;
    let l2 = l2_error(&u_profile, &w_profile)?;
    let linf = linf_error(&u_profile, &w_profile)?;
    let report = ErrorReport {
        epsilon: cfg.epsilon,
        time: hetero_out.final_state.time(),
        l2,
        linf,
        surrogate: l2.min(linf),
        hetero_grid: (&hetero_out.final_state.curr.grid).into(),
        effective_grid: (&w.grid).into(),
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    Ok(PairResult {
        coefficients: coefficients.clone(),
        tensors,
        hetero: hetero_out,
        effective: effective_out,
        u_profile,
        w_profile,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    pub time: f64,
    pub l2: Option<f64>,
    pub linf: Option<f64>,
    /// Failure description when the row's runs aborted.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    /// Sorted by `ε` descending.
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `log L²` against `log ε` over the successful rows.
    pub slope: Option<f64>,
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Paired runs at each `ε` with `t = t0 ε⁻²`; rows run as independent parallel jobs.
pub fn convergence_study(base: &SimulationConfig, epsilons: &[f64]) -> Result<ConvergenceTable> {
    let coefficients = resolve_coefficients(base)?;
    let mut eps: Vec<f64> = epsilons.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));
    let rows: Vec<ConvergenceRow> = with_workers(|| {
        eps.par_iter()
            .map(|&e| {
                let cfg = SimulationConfig { epsilon: e, ..base.clone() };
                let time = cfg.final_time();
                match cfg.validate().and_then(|_| run_pair(&cfg, &coefficients)) {
                    Ok(p) => ConvergenceRow { epsilon: e, time, l2: Some(p.report.l2), linf: Some(p.report.linf), failure: None },
                    Err(err) => ConvergenceRow { epsilon: e, time, l2: None, linf: None, failure: Some(err.to_string()) },
                }
            })
            .collect()
    })?;
    let pts: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.l2.map(|l| (r.epsilon, l))).collect();
    Ok(ConvergenceTable { slope: log_log_slope(&pts), rows })
}

/// Figures whose data the harness reproduces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureId {
    Compare1dA,
    Compare1dB,
    Convergence1d,
    Field2d,
    Profile2d,
    Compare2d,
}

impl FigureId {
    pub const ALL: [FigureId; 6] =
        [Self::Compare1dA, Self::Compare1dB, Self::Convergence1d, Self::Field2d, Self::Profile2d, Self::Compare2d];

    pub fn name(self) -> &'static str {
        match self {
            Self::Compare1dA => "1d-compare-a",
            Self::Compare1dB => "1d-compare-b",
            Self::Convergence1d => "1d-convergence",
            Self::Field2d => "2d-field",
            Self::Profile2d => "2d-profile",
            Self::Compare2d => "2d-compare",
        }
    }

    /// Default configuration of the experiment behind the figure.
    pub fn default_config(self) -> SimulationConfig {
        let one_d = |epsilon: f64, t0: f64| SimulationConfig {
            epsilon,
            t0,
            final_time: None,
            snapshot_every: 0,
            medium: MediumSpec::Cosine1d { mean: 1.5, amplitude: 1.4 },
            datum: DatumSpec { sigma: 0.4, amplitude: 1.0, axes: None },
            hetero: Default::default(),
            effective: Default::default(),
            bloch_cutoff: None,
        };
        match self {
            Self::Compare1dA => one_d(0.05, 1.0),
            Self::Compare1dB => one_d(0.1, 2.0),
            Self::Convergence1d => one_d(0.2, 1.0),
            Self::Field2d | Self::Profile2d | Self::Compare2d => SimulationConfig {
                medium: MediumSpec::SmoothedSquare2d,
                datum: DatumSpec { sigma: 0.6, amplitude: 1.0, axes: Some(vec![0]) },
                ..one_d(0.1, 1.0)
            },
        }
    }

    /// `ε` values of the convergence figure.
    pub fn convergence_epsilons() -> Vec<f64> {
        vec![0.2, 0.1, 0.05]
    }
}

impl FromStr for FigureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s).ok_or_else(|| Error::UnknownFigure(s.to_string()))
    }
}

/// Write a CSV table: header row, then values with 17 significant digits.
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut text = header.join(",");
    text.push('\n');
    for row in rows {
        let mut first = true;
        for v in row {
            if !first {
                text.push(',');
            }
            first = false;
            write!(text, "{v:.16e}").expect("writing to a String");
        }
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Coordinates header for a field: `x1, …, xn`.
pub fn coordinate_header(dim: usize) -> Vec<String> {
    (1..=dim).map(|d| format!("x{d}")).collect()
}

/// Field rows `(x…, value)`.
pub fn field_rows(u: &GridField) -> impl Iterator<Item = Vec<f64>> + '_ {
    (0..u.values.len()).map(move |i| {
        let mut row = u.grid.point(i);
        row.push(u.values[i]);
        row
    })
}

/// One CSV per snapshot (`{prefix}_NNNN.csv`, rows `(x…, value)` in row-major order)
/// plus `{prefix}_index.csv` listing step, time and file name.
pub fn write_snapshot_bundle(dir: &Path, prefix: &str, snapshots: &[Snapshot], value: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(snapshots.len() + 1);
    let mut index = String::from("snapshot,step,time,file\n");
    for (i, s) in snapshots.iter().enumerate() {
        let name = format!("{prefix}_{i:04}.csv");
        let mut header = coordinate_header(s.field.grid.dim());
        header.push(value.into());
        let refs: Vec<&str> = header.iter().map(|h| h.as_str()).collect();
        let path = dir.join(&name);
        write_csv(&path, &refs, field_rows(&s.field))?;
        writeln!(index, "{i},{},{:.16e},{name}", s.step, s.time).expect("writing to a String");
        files.push(path);
    }
    let path = dir.join(format!("{prefix}_index.csv"));
    std::fs::write(&path, index)?;
    files.push(path);
    Ok(files)
}

#[derive(Debug, Serialize)]
struct FigureMeta<'a> {
    figure: &'a str,
    config: &'a SimulationConfig,
    coefficients: CoefficientSpec,
    e: f64,
    f_iiii: f64,
    f_ijij: f64,
    reports: Vec<ErrorReport>,
    convergence: Option<ConvergenceTable>,
}

fn comparison_csv(path: &Path, pair: &PairResult) -> Result<()> {
    let rows = (0..pair.u_profile.values.len()).map(|i| {
        let mut r = pair.u_profile.grid.point(i);
        r.push(pair.u_profile.values[i]);
        r.push(pair.w_profile.values[i]);
        r
    });
    let mut header = coordinate_header(pair.u_profile.grid.dim());
    let u_name = if pair.hetero.final_field().grid.dim() > pair.u_profile.grid.dim() { "u_mean" } else { "u" };
    header.push(u_name.into());
    header.push("w".into());
    let refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    write_csv(path, &refs, rows)
}

/// Emit the data behind `figure` into `out_dir`; returns the files written.
pub fn reproduce(figure: FigureId, cfg: &SimulationConfig, out_dir: &Path, epsilons: Option<&[f64]>) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    cfg.validate()?;
    let coefficients = resolve_coefficients(cfg)?;
    let tensors = decompose(&coefficients)?;
    let name = figure.name();
    let mut files = Vec::new();
    let mut reports = Vec::new();
    let mut convergence = None;
    match figure {
        FigureId::Convergence1d => {
            let eps = epsilons.map(|e| e.to_vec()).unwrap_or_else(FigureId::convergence_epsilons);
            let with_coeffs = SimulationConfig {
                effective: crate::config::EffectiveSpec {
                    coefficients: Some(CoefficientSpec { a_star: coefficients.a_star, alpha: coefficients.alpha, beta: coefficients.beta }),
                    ..cfg.effective.clone()
                },
                ..cfg.clone()
            };
            let table = convergence_study(&with_coeffs, &eps)?;
            let path = out_dir.join(format!("{name}.csv"));
            write_csv(
                &path,
                &["epsilon", "time", "l2_error", "linf_error"],
                table.rows.iter().map(|r| vec![r.epsilon, r.time, r.l2.unwrap_or(f64::NAN), r.linf.unwrap_or(f64::NAN)]),
            )?;
            files.push(path);
            convergence = Some(table);
        }
        FigureId::Compare1dA | FigureId::Compare1dB | FigureId::Compare2d => {
            let pair = run_pair(cfg, &coefficients)?;
            let path = out_dir.join(format!("{name}.csv"));
            comparison_csv(&path, &pair)?;
            files.push(path);
            reports.push(pair.report);
        }
        FigureId::Field2d | FigureId::Profile2d => {
            let out = run_hetero(cfg)?;
            let u = out.final_field();
            if u.grid.dim() != 2 {
                return Err(Error::Config(format!("{name} needs a two-dimensional medium")));
            }
            let path = out_dir.join(format!("{name}.csv"));
            if figure == FigureId::Field2d {
                // Right-propagating half.
                let rows = field_rows(u).filter(|r| r[0] >= 0.0);
                write_csv(&path, &["x1", "x2", "u"], rows)?;
            } else {
                let mean = x2_mean(u)?;
                let peak = (0..mean.values.len())
                    .filter(|&i| mean.grid.coord(0, i) >= 0.0)
                    .max_by(|&a, &b| mean.values[a].total_cmp(&mean.values[b]))
                    .unwrap_or(0);
                let n1 = u.grid.shape[1];
                let x1 = mean.grid.coord(0, peak);
                write_csv(
                    &path,
                    &["x1", "x2", "u"],
                    (0..n1).map(|j| vec![x1, u.grid.coord(1, j), u.values[peak * n1 + j]]),
                )?;
            }
            files.push(path);
        }
    }
    let meta = FigureMeta {
        figure: name,
        config: cfg,
        coefficients: CoefficientSpec { a_star: coefficients.a_star, alpha: coefficients.alpha, beta: coefficients.beta },
        e: tensors.e(),
        f_iiii: tensors.f_iiii(),
        f_ijij: tensors.f_ijij(),
        reports,
        convergence,
    };
    let path = out_dir.join(format!("{name}.json"));
    write_json(&path, &meta)?;
    files.push(path);
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn identical_fields_have_zero_error() {
        let g = Grid::symmetric_1d(3.0, 0.1, Boundary::ZeroExterior).unwrap();
        let u = GridField::from_fn(g, |x| (-x[0] * x[0]).exp());
        assert_eq!(l2_error(&u, &u).unwrap(), 0.0);
        assert_eq!(linf_error(&u, &u).unwrap(), 0.0);
    }

    #[test]
    fn sine_norm_on_a_period() {
        let n = 2000;
        let g = Grid::new(vec![n], vec![2.0 * PI / n as f64], vec![0.0], vec![Boundary::Periodic]).unwrap();
        let u = GridField::from_fn(g.clone(), |x| x[0].sin());
        let z = GridField::zeros(g);
        assert!((l2_error(&u, &z).unwrap() - PI.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn cubic_interpolation_is_exact_on_cubics() {
        let coarse = Grid::symmetric_1d(2.0, 0.1, Boundary::ZeroExterior).unwrap();
        let fine = Grid::symmetric_1d(1.5, 0.013, Boundary::ZeroExterior).unwrap();
        let p = |x: &[f64]| 1.0 - x[0] + 0.3 * x[0].powi(2) - 0.7 * x[0].powi(3);
        let w = GridField::from_fn(coarse, p);
        let wi = interpolate_cubic(&w, &fine).unwrap();
        for i in 0..fine.len() {
            assert!((wi.values[i] - p(&fine.point(i))).abs() < 1e-11);
        }
        let g2 = Grid::new(vec![20, 12], vec![0.1, 0.1], vec![-1.0, 0.0], vec![Boundary::ZeroExterior, Boundary::Periodic]).unwrap();
        assert!(interpolate_cubic(&w, &g2).is_err());
    }

    #[test]
    fn cubic_interpolation_converges_at_fourth_order() {
        let f = |x: &[f64]| (-0.4 * x[0] * x[0]).exp();
        let target = Grid::symmetric_1d(4.0, 0.0037, Boundary::ZeroExterior).unwrap();
        let err = |h: f64| {
            let w = GridField::from_fn(Grid::symmetric_1d(12.0, h, Boundary::ZeroExterior).unwrap(), f);
            let wi = interpolate_cubic(&w, &target).unwrap();
            (0..target.len()).fold(0.0f64, |m, i| m.max((wi.values[i] - f(&target.point(i))).abs()))
        };
        let (e1, e2) = (err(0.1), err(0.05));
        assert!((e1 / e2).log2() > 3.7, "{e1} {e2}");
    }

    #[test]
    fn x2_mean_properties() {
        let eps = 0.1;
        let n1 = 30;
        let g = Grid::new(
            vec![11, n1],
            vec![0.2, 2.0 * PI * eps / n1 as f64],
            vec![-1.0, -PI * eps],
            vec![Boundary::ZeroExterior, Boundary::Periodic],
        )
        .unwrap();
        let flat = GridField::from_fn(g.clone(), |x| x[0].cos());
        let m = x2_mean(&flat).unwrap();
        for i in 0..11 {
            assert!((m.values[i] - m.grid.coord(0, i).cos()).abs() < 1e-15);
        }
        let wave = GridField::from_fn(g, |x| x[0].exp() * (3.0 * x[1] / eps).cos());
        assert!(x2_mean(&wave).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn slope_of_a_power_law() {
        let pts: Vec<(f64, f64)> = [0.2, 0.1, 0.05].iter().map(|&e| (e, 3.0 * e * e)).collect();
        assert!((log_log_slope(&pts).unwrap() - 2.0).abs() < 1e-12);
        assert!(log_log_slope(&pts[..1]).is_none());
    }

    #[test]
    fn snapshot_bundle_layout() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::symmetric_1d(1.0, 0.5, Boundary::ZeroExterior).unwrap();
        let snaps: Vec<Snapshot> = (0..2)
            .map(|i| Snapshot { step: 10 * i, time: 0.1 * i as f64, field: GridField::from_fn(g.clone(), |x| x[0] + i as f64) })
            .collect();
        let files = write_snapshot_bundle(dir.path(), "u", &snaps, "u").unwrap();
        assert_eq!(files.len(), 3);
        let index = std::fs::read_to_string(dir.path().join("u_index.csv")).unwrap();
        assert_eq!(index.lines().count(), 3);
        assert!(index.lines().nth(2).unwrap().ends_with(",u_0001.csv"));
        let body = std::fs::read_to_string(dir.path().join("u_0001.csv")).unwrap();
        assert_eq!(body.lines().next(), Some("x1,u"));
        assert_eq!(body.lines().count(), 1 + g.len());
    }

    #[test]
    fn figure_ids_round_trip() {
        for f in FigureId::ALL {
            assert_eq!(f.name().parse::<FigureId>().unwrap(), f);
            f.default_config().validate().unwrap();
        }
        assert!(matches!("fig-9".parse::<FigureId>(), Err(Error::UnknownFigure(_))));
    }

    #[test]
    fn csv_has_header_and_full_precision() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_csv(&p, &["a", "b"], vec![vec![0.1, 1.0 / 3.0]]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("a,b"));
        let vals: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(vals, vec![0.1, 1.0 / 3.0]);
    }

    #[test]
    fn constant_medium_pair_sits_at_the_discretization_floor() {
        let cfg = SimulationConfig::from_toml_str(
            r#"
epsilon = 0.5
final_time = 3.0
[medium]
preset = "constant"
dim = 1
value = 1.0
[datum]
sigma = 0.4
[effective]
dx = 0.02
dt = 0.005
"#,
        )
        .unwrap();
        let coeffs = resolve_coefficients(&cfg).unwrap();
        assert!((coeffs.a_star - 1.0).abs() < 1e-9 && coeffs.alpha.abs() < 1e-6);
        let pair = run_pair(&cfg, &coeffs).unwrap();
        assert!(pair.report.l2 < 1e-3, "{:?}", pair.report);
        assert!(pair.report.surrogate <= pair.report.l2 + pair.report.linf);
    }
}
