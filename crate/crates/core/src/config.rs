//! TOML run configuration and its resolution into solver setups.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datum::{make_gaussian_datum, AxisMask, InitialDatum};
use crate::dispersion::DispersionCoefficients;
use crate::error::{Error, Result};
use crate::grid::{Boundary, Grid, MIN_POINTS};
use crate::medium::{make_cosine_medium_1d, make_smoothed_square_medium_2d, PeriodicMedium, SUPPORT_TOLERANCE};

/// Fraction of the explicit stability limit allowed by default.
pub const CFL_FRACTION: f64 = 0.5;
/// Heterogeneous grid: points per period `2 pi eps`.
pub const HETERO_POINTS_PER_PERIOD: f64 = 30.0;
pub const HETERO_DT_1D: f64 = 0.008;
pub const HETERO_DT_2D: f64 = 0.004;
pub const EFFECTIVE_DX: f64 = 2.0 * PI / 100.0;
pub const EFFECTIVE_DT_1D: f64 = 0.005;
pub const EFFECTIVE_DT_2D: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", deny_unknown_fields)]
pub enum MediumSpec {
    #[serde(rename = "cosine-1d")]
    Cosine1d { mean: f64, amplitude: f64 },
    #[serde(rename = "smoothed-square-2d")]
    SmoothedSquare2d,
    #[serde(rename = "constant")]
    Constant { dim: usize, value: f64 },
}

impl MediumSpec {
    pub fn build(&self) -> Result<PeriodicMedium> {
        match *self {
            MediumSpec::Cosine1d { mean, amplitude } => make_cosine_medium_1d(mean, amplitude),
            MediumSpec::SmoothedSquare2d => Ok(make_smoothed_square_medium_2d()),
            MediumSpec::Constant { dim, value } => PeriodicMedium::constant(dim, value),
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            MediumSpec::Cosine1d { .. } => 1,
            MediumSpec::SmoothedSquare2d => 2,
            MediumSpec::Constant { dim, .. } => dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatumSpec {
    pub sigma: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
    /// Axes along which the Gaussian is localized; all axes when absent.
    #[serde(default)]
    pub axes: Option<Vec<usize>>,
}

fn one() -> f64 {
    1.0
}

impl DatumSpec {
    pub fn build(&self, dim: usize) -> Result<InitialDatum> {
        let mask = match &self.axes {
            Some(a) => AxisMask::Only(a),
            None => AxisMask::All,
        };
        Ok(make_gaussian_datum(self.sigma, dim, mask)?.with_amplitude(self.amplitude))
    }
}

/// Grid and time-step overrides for one solver.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub dx: Option<f64>,
    pub dt: Option<f64>,
    /// Per-axis half-widths; zero-exterior axes default to the cone-check radius.
    pub half_width: Option<Vec<f64>>,
    pub boundary: Option<Vec<Boundary>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSpec {
    pub a_star: f64,
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectiveSpec {
    pub dx: Option<f64>,
    pub dt: Option<f64>,
    pub half_width: Option<Vec<f64>>,
    pub boundary: Option<Vec<Boundary>>,
    /// Explicit `(a*, α, β)`; computed from the medium when absent.
    pub coefficients: Option<CoefficientSpec>,
}

impl EffectiveSpec {
    pub fn solver(&self) -> SolverSpec {
        SolverSpec { dx: self.dx, dt: self.dt, half_width: self.half_width.clone(), boundary: self.boundary.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub epsilon: f64,
    /// Horizon in units of `eps^-2`; ignored when `final_time` is set.
    #[serde(default = "one")]
    pub t0: f64,
    pub final_time: Option<f64>,
    /// Steps between snapshots; 0 keeps only the final state.
    #[serde(default)]
    pub snapshot_every: usize,
    pub medium: MediumSpec,
    pub datum: DatumSpec,
    #[serde(default)]
    pub hetero: SolverSpec,
    #[serde(default)]
    pub effective: EffectiveSpec,
    /// Plane-wave cutoff for the cell problem.
    pub bloch_cutoff: Option<usize>,
}

/// Fully resolved parameters of one time-stepping run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSetup {
    pub epsilon: f64,
    pub grid: Grid,
    pub dt: f64,
    pub steps: usize,
    pub snapshot_every: usize,
}

impl RunSetup {
    pub fn final_time(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    /// Steps at which a run stores snapshots: 0, multiples of `snapshot_every`, the last.
    pub fn snapshot_steps(&self) -> Vec<usize> {
        let mut steps = vec![0];
        if self.snapshot_every > 0 {
            steps.extend((1..self.steps).filter(|m| m % self.snapshot_every == 0));
        }
        steps.push(self.steps);
        steps
    }
}

/// Number of steps reaching `final_time` exactly with a step no larger than `dt`.
pub fn steps_for(final_time: f64, dt: f64) -> (usize, f64) {
    let steps = ((final_time / dt) - 1e-9).ceil().max(1.0) as usize;
    (steps, final_time / steps as f64)
}

/// Half-width a zero-exterior domain needs: `speed * T + r(f)`.
pub fn cone_requirement(speed: f64, final_time: f64, datum: &InitialDatum) -> f64 {
    speed * final_time + datum.x_support_radius(SUPPORT_TOLERANCE)
}

/// Verify the cone condition on every zero-exterior axis.
pub fn check_cone(grid: &Grid, speed: f64, final_time: f64, datum: &InitialDatum) -> Result<()> {
    let required = cone_requirement(speed, final_time, datum);
    for d in 0..grid.dim() {
        if grid.boundary[d] != Boundary::ZeroExterior {
            continue;
        }
        if !datum.mask()[d] {
            return Err(Error::Config(format!(
                "datum is constant along axis {d}; that axis must be periodic"
            )));
        }
        let half = (-grid.origin[d]).min(grid.upper(d));
        if half + 1e-12 < required {
            return Err(Error::DomainTooSmall { half_width: half, required });
        }
    }
    Ok(())
}

/// Build a grid: zero-exterior axes are symmetric about 0 and cover `half_width`;
/// periodic axes span `[-half_width, half_width)` with the spacing adjusted to fit.
pub fn build_grid(
    dim: usize,
    dx: f64,
    half_width: &[f64],
    boundary: &[Boundary],
) -> Result<Grid> {
    if half_width.len() != dim || boundary.len() != dim {
        return Err(Error::Config(format!("expected {dim} half-widths and boundary modes")));
    }
    let mut shape = Vec::with_capacity(dim);
    let mut spacing = Vec::with_capacity(dim);
    let mut origin = Vec::with_capacity(dim);
    for d in 0..dim {
        let hw = half_width[d];
        if !(hw > 0.0 && hw.is_finite()) {
            return Err(Error::Config(format!("half-width {hw} on axis {d} must be positive")));
        }
        match boundary[d] {
            Boundary::ZeroExterior => {
                let j = ((hw / dx) - 1e-9).ceil().max(2.0) as usize;
                shape.push(2 * j + 1);
                spacing.push(dx);
                origin.push(-(j as f64) * dx);
            }
            Boundary::Periodic => {
                let n = ((2.0 * hw / dx).round() as usize).max(MIN_POINTS);
                let h = 2.0 * hw / n as f64;
                shape.push(n);
                spacing.push(h);
                origin.push(-hw);
            }
        }
    }
    Grid::new(shape, spacing, origin, boundary.to_vec())
}

impl SimulationConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// `text` layered over `base`: keys present in `text` win, absent ones keep the
    /// base value. A table naming a `preset` replaces the base table whole.
    pub fn layered(base: &SimulationConfig, text: &str) -> Result<Self> {
        fn merge(base: &mut toml::Table, over: toml::Table) {
            for (k, v) in over {
                match (base.get_mut(&k), v) {
                    (Some(toml::Value::Table(b)), toml::Value::Table(o)) if !o.contains_key("preset") => merge(b, o),
                    (_, v) => {
                        base.insert(k, v);
                    }
                }
            }
        }
        let config_err = |e: &dyn std::fmt::Display| Error::Config(e.to_string());
        let mut table = toml::Table::try_from(base).map_err(|e| config_err(&e))?;
        merge(&mut table, text.parse::<toml::Table>().map_err(|e| config_err(&e))?);
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| config_err(&e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_layered(base: &SimulationConfig, path: &Path) -> Result<Self> {
        Self::layered(base, &std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon = {} must be positive", self.epsilon)));
        }
        if !(self.t0 > 0.0) {
            return Err(Error::Config(format!("t0 = {} must be positive", self.t0)));
        }
        if let Some(t) = self.final_time {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("final_time = {t} must be positive")));
            }
        }
        for (name, s) in [("hetero", &self.hetero), ("effective", &self.effective.solver())] {
            for (field, v) in [("dx", s.dx), ("dt", s.dt)] {
                if let Some(v) = v {
                    if !(v > 0.0 && v.is_finite()) {
                        return Err(Error::Config(format!("{name}.{field} = {v} must be positive")));
                    }
                }
            }
            let dim = self.dim();
            if s.half_width.as_ref().is_some_and(|h| h.len() != dim) || s.boundary.as_ref().is_some_and(|b| b.len() != dim) {
                return Err(Error::Config(format!("{name}: per-axis lists need {dim} entries")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.medium.dim()
    }

    pub fn final_time(&self) -> f64 {
        self.final_time.unwrap_or(self.t0 / (self.epsilon * self.epsilon))
    }

    pub fn build_medium(&self) -> Result<PeriodicMedium> {
        self.medium.build()
    }

    pub fn build_datum(&self) -> Result<InitialDatum> {
        self.datum.build(self.dim())
    }

    /// Default boundary: zero-exterior along localized axes, periodic along constant ones.
    fn boundaries(&self, spec: &SolverSpec, datum: &InitialDatum) -> Vec<Boundary> {
        spec.boundary.clone().unwrap_or_else(|| {
            datum.mask().iter().map(|&m| if m { Boundary::ZeroExterior } else { Boundary::Periodic }).collect()
        })
    }

    fn half_widths(&self, spec: &SolverSpec, boundary: &[Boundary], speed: f64, datum: &InitialDatum, dx: f64) -> Vec<f64> {
        spec.half_width.clone().unwrap_or_else(|| {
            let cone = cone_requirement(speed, self.final_time(), datum) + 2.0 * dx;
            boundary
                .iter()
                .map(|b| match b {
                    Boundary::ZeroExterior => cone,
                    Boundary::Periodic => PI * self.epsilon,
                })
                .collect()
        })
    }

    /// Setup of the heterogeneous run. The default step is the reference step capped by
    /// the CFL bound; an explicit step above the bound is rejected.
    pub fn hetero_setup(&self, medium: &PeriodicMedium) -> Result<RunSetup> {
        let datum = self.build_datum()?;
        let speed = medium.max_norm().sqrt();
        let dx = self.hetero.dx.unwrap_or(2.0 * PI * self.epsilon / HETERO_POINTS_PER_PERIOD);
        let boundary = self.boundaries(&self.hetero, &datum);
        let hw = self.half_widths(&self.hetero, &boundary, speed, &datum, dx);
        let grid = build_grid(self.dim(), dx, &hw, &boundary)?;
        let min_dx = grid.spacing.iter().fold(f64::INFINITY, |m, &h| m.min(h));
        let bound = CFL_FRACTION * min_dx / speed;
        let dt = match self.hetero.dt {
            Some(dt) if dt > bound * (1.0 + 1e-12) => return Err(Error::Cfl { dt, bound }),
            Some(dt) => dt,
            None => {
                let reference = if self.dim() == 1 { HETERO_DT_1D } else { HETERO_DT_2D };
                reference.min(bound)
            }
        };
        let (steps, dt) = steps_for(self.final_time(), dt);
        check_cone(&grid, speed, self.final_time(), &datum)?;
        Ok(RunSetup { epsilon: self.epsilon, grid, dt, steps, snapshot_every: self.snapshot_every })
    }

    /// Setup of the effective run (speed `sqrt(a*)`).
    pub fn effective_setup(&self, coeffs: &DispersionCoefficients) -> Result<RunSetup> {
        let datum = self.build_datum()?;
        let speed = coeffs.a_star.sqrt();
        let spec = self.effective.solver();
        let dx = spec.dx.unwrap_or(EFFECTIVE_DX);
        let boundary = self.boundaries(&spec, &datum);
        let hw = match &spec.half_width {
            Some(h) => h.clone(),
            None => {
                // Cover the heterogeneous domain so solutions can be compared pointwise.
                let medium = self.build_medium()?;
                let outer = cone_requirement(medium.max_norm().sqrt(), self.final_time(), &datum) + 2.0 * dx;
                boundary
                    .iter()
                    .map(|b| match b {
                        Boundary::ZeroExterior => outer,
                        Boundary::Periodic => PI * self.epsilon,
                    })
                    .collect()
            }
        };
        let grid = build_grid(self.dim(), dx, &hw, &boundary)?;
        let dt = spec.dt.unwrap_or_else(|| {
            if spec.dx.is_none() {
                if self.dim() == 1 {
                    EFFECTIVE_DT_1D
                } else {
                    EFFECTIVE_DT_2D
                }
            } else {
                CFL_FRACTION * dx / speed
            }
        });
        let (steps, dt) = steps_for(self.final_time(), dt);
        check_cone(&grid, speed, self.final_time(), &datum)?;
        Ok(RunSetup { epsilon: self.epsilon, grid, dt, steps, snapshot_every: self.snapshot_every })
    }

    pub fn explicit_coefficients(&self) -> Result<Option<DispersionCoefficients>> {
        match self.effective.coefficients {
            None => Ok(None),
            Some(c) => {
                let beta = if self.dim() == 1 { 0.0 } else { c.beta };
                Ok(Some(DispersionCoefficients::new(self.dim(), c.a_star, c.alpha, beta)?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
epsilon = 0.2
t0 = 1.0
snapshot_every = 100

[medium]
preset = "cosine-1d"
mean = 1.5
amplitude = 1.4

[datum]
sigma = 0.4
"#;

    #[test]
    fn parses_and_resolves_defaults() {
        let cfg = SimulationConfig::from_toml_str(SAMPLE).unwrap();
        assert!((cfg.final_time() - 25.0).abs() < 1e-12);
        let medium = cfg.build_medium().unwrap();
        let setup = cfg.hetero_setup(&medium).unwrap();
        assert!((setup.grid.spacing[0] - 2.0 * PI * 0.2 / 30.0).abs() < 1e-15);
        // The reference step 0.008 satisfies the bound at this eps.
        assert!((setup.dt - 0.008).abs() < 1e-15);
        assert_eq!(setup.steps, 3125);
        assert!(setup.grid.upper(0) >= 2.9f64.sqrt() * 25.0);
    }

    #[test]
    fn explicit_dt_above_cfl_is_rejected() {
        let text = format!("{SAMPLE}\n[hetero]\ndt = 0.05\n");
        let cfg = SimulationConfig::from_toml_str(&text).unwrap();
        let medium = cfg.build_medium().unwrap();
        assert!(matches!(cfg.hetero_setup(&medium), Err(Error::Cfl { .. })));
    }

    #[test]
    fn small_domain_is_rejected() {
        let text = format!("{SAMPLE}\n[hetero]\nhalf_width = [10.0]\n");
        let cfg = SimulationConfig::from_toml_str(&text).unwrap();
        let medium = cfg.build_medium().unwrap();
        assert!(matches!(cfg.hetero_setup(&medium), Err(Error::DomainTooSmall { .. })));
    }

    #[test]
    fn strip_geometry_defaults() {
        let text = r#"
epsilon = 0.1
final_time = 1.0
[medium]
preset = "smoothed-square-2d"
[datum]
sigma = 0.6
axes = [0]
"#;
        let cfg = SimulationConfig::from_toml_str(text).unwrap();
        let medium = cfg.build_medium().unwrap();
        let s = cfg.hetero_setup(&medium).unwrap();
        assert_eq!(s.grid.boundary, vec![Boundary::ZeroExterior, Boundary::Periodic]);
        assert_eq!(s.grid.shape[1], 30);
        assert!((s.grid.spacing[1] * 30.0 - 2.0 * PI * 0.1).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_values_and_unknown_keys() {
        assert!(SimulationConfig::from_toml_str(&SAMPLE.replace("epsilon = 0.2", "epsilon = -1.0")).is_err());
        assert!(SimulationConfig::from_toml_str(&format!("{SAMPLE}\nbogus = 1\n")).is_err());
        assert!(SimulationConfig::from_toml_str(&SAMPLE.replace("cosine-1d", "sawtooth")).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = SimulationConfig::from_toml_str(SAMPLE).unwrap();
        let again = SimulationConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn step_count_hits_final_time() {
        let (n, dt) = steps_for(100.0, 0.00615);
        assert!(dt <= 0.00615 && (n as f64 * dt - 100.0).abs() < 1e-10);
    }

    #[test]
    fn layered_config_keeps_unset_base_keys() {
        let base = SimulationConfig::from_toml_str(SAMPLE).unwrap();
        let cfg = SimulationConfig::layered(&base, "epsilon = 0.1\n[datum]\namplitude = 2.0\n[hetero]\ndt = 0.004\n").unwrap();
        assert_eq!(cfg.epsilon, 0.1);
        assert_eq!(cfg.datum.sigma, 0.4);
        assert_eq!(cfg.datum.amplitude, 2.0);
        assert_eq!(cfg.hetero.dt, Some(0.004));
        assert_eq!(cfg.medium, base.medium);
        assert_eq!(cfg.snapshot_every, 100);
        let swapped = SimulationConfig::layered(&base, "[medium]\npreset = \"constant\"\ndim = 1\nvalue = 2.0\n").unwrap();
        assert_eq!(swapped.medium, MediumSpec::Constant { dim: 1, value: 2.0 });
        assert!(SimulationConfig::layered(&base, "[datum]\nsigma = 0.4\nbogus = 1\n").is_err());
    }

    proptest::proptest! {
        #[test]
        fn steps_for_lands_on_the_final_time(t in 0.01f64..500.0, dt in 1e-4f64..0.1) {
            let (n, h) = steps_for(t, dt);
            proptest::prop_assert!(h <= dt * (1.0 + 1e-12));
            proptest::prop_assert!((n as f64 * h - t).abs() <= 1e-9 * t);
        }
    }
}
