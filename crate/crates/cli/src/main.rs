//! `longwave`: command line driver for cell problems, solvers, oracles and experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use longwave_core::bloch::{default_cutoff, BandEvaluator};
use longwave_core::config::{CoefficientSpec, RunSetup, SimulationConfig};
use longwave_core::dispersion::{decompose, DispersionCoefficients};
use longwave_core::grid::{GridField, Snapshot};
use longwave_core::harness::{self, FigureId};
use longwave_core::{hetero, oracle, Error, Result};

#[derive(Parser)]
#[command(name = "longwave", version, about = "Long-time wave propagation in periodic media")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lowest Bloch eigenvalue μ₀ on a uniform k-grid, as CSV.
    Cell {
        #[command(flatten)]
        common: Common,
        /// k-points per axis.
        #[arg(long, default_value_t = 41)]
        k_points: usize,
        /// Grid covers [-k_max, k_max] on every axis.
        #[arg(long, default_value_t = 0.5)]
        k_max: f64,
    },
    /// Effective coefficients a*, α, β and the (E, F) decomposition.
    Dispersion {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Heterogeneous wave equation; writes snapshots and run metadata.
    SolveHetero {
        #[command(flatten)]
        common: Common,
    },
    /// Dispersive effective equation; writes snapshots and run metadata.
    SolveEffective {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        coefficients: CoefficientArgs,
    },
    /// Spectral reference fields and Bloch diagnostics.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: OracleMode,
        #[command(flatten)]
        coefficients: CoefficientArgs,
        /// Bands summed by the Parseval check.
        #[arg(long, default_value_t = 4)]
        bands: usize,
        /// k-points per axis for `blochcoef`.
        #[arg(long, default_value_t = 65)]
        k_points: usize,
    },
    /// Paired heterogeneous and effective runs with error report.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        coefficients: CoefficientArgs,
    },
    /// Errors at t = t0 ε⁻² over a list of ε with the fitted log-log slope.
    Convergence {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        coefficients: CoefficientArgs,
        /// Comma-separated ε values.
        #[arg(long, value_delimiter = ',', default_values_t = FigureId::convergence_epsilons())]
        eps: Vec<f64>,
    },
    /// Data behind a named figure.
    Reproduce {
        #[command(flatten)]
        common: Common,
        /// Comma-separated ε values for `1d-convergence`.
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OracleMode {
    /// Band-0 Bloch-wave field U^ε on the heterogeneous grid.
    #[value(name = "U")]
    U,
    /// Dispersive reference v^ε on the effective grid.
    #[value(name = "v")]
    V,
    /// Real part of the band-0 component of u^ε on the heterogeneous grid.
    #[value(name = "band0")]
    Band0,
    /// Cumulative Parseval sums over bands.
    #[value(name = "parseval")]
    Parseval,
    /// Band-0 Bloch coefficients against the datum transform.
    #[value(name = "blochcoef")]
    BlochCoef,
}

/// Options shared by every subcommand. Precedence: flags > config file > figure defaults.
#[derive(Args)]
struct Common {
    /// TOML configuration layered over the figure defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Figure whose parameters seed the configuration.
    #[arg(long, default_value = "1d-compare-b")]
    figure: String,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Horizon in units of ε⁻².
    #[arg(long)]
    t0: Option<f64>,
    #[arg(long)]
    final_time: Option<f64>,
    #[arg(long)]
    snapshot_every: Option<usize>,
    /// Heterogeneous grid spacing.
    #[arg(long)]
    dx: Option<f64>,
    /// Heterogeneous time step.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    effective_dx: Option<f64>,
    #[arg(long)]
    effective_dt: Option<f64>,
    /// Plane-wave cutoff of the cell problem.
    #[arg(long)]
    bloch_cutoff: Option<usize>,
}

#[derive(Args)]
struct CoefficientArgs {
    /// Explicit coefficients bypass the cell problem; all of a*, α needed, β defaults to 0.
    #[arg(long, requires = "alpha")]
    a_star: Option<f64>,
    #[arg(long, requires = "a_star", allow_hyphen_values = true)]
    alpha: Option<f64>,
    #[arg(long, requires = "a_star", allow_hyphen_values = true)]
    beta: Option<f64>,
}

impl Common {
    fn figure(&self) -> Result<FigureId> {
        self.figure.parse()
    }

    fn resolve(&self, coefficients: Option<&CoefficientArgs>) -> Result<SimulationConfig> {
        let defaults = self.figure()?.default_config();
        let mut cfg = match &self.config {
            Some(path) => SimulationConfig::load_layered(&defaults, path)?,
            None => defaults,
        };
        if let Some(e) = self.epsilon {
            cfg.epsilon = e;
        }
        if let Some(t0) = self.t0 {
            cfg.t0 = t0;
            cfg.final_time = None;
        }
        if self.final_time.is_some() {
            cfg.final_time = self.final_time;
        }
        if let Some(s) = self.snapshot_every {
            cfg.snapshot_every = s;
        }
        cfg.hetero.dx = self.dx.or(cfg.hetero.dx);
        cfg.hetero.dt = self.dt.or(cfg.hetero.dt);
        cfg.effective.dx = self.effective_dx.or(cfg.effective.dx);
        cfg.effective.dt = self.effective_dt.or(cfg.effective.dt);
        cfg.bloch_cutoff = self.bloch_cutoff.or(cfg.bloch_cutoff);
        if let Some(CoefficientArgs { a_star: Some(a_star), alpha: Some(alpha), beta }) = coefficients {
            cfg.effective.coefficients = Some(CoefficientSpec { a_star: *a_star, alpha: *alpha, beta: beta.unwrap_or(0.0) });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out)?;
        Ok(&self.out)
    }
}

fn cutoff(cfg: &SimulationConfig) -> usize {
    cfg.bloch_cutoff.unwrap_or_else(|| default_cutoff(cfg.dim()))
}

fn coefficient_json(c: &DispersionCoefficients) -> Result<serde_json::Value> {
    let t = decompose(c)?;
    Ok(json!({
        "dim": c.n,
        "a_star": c.a_star,
        "alpha": c.alpha,
        "beta": c.beta,
        "case": t.case.map(|s| s.number()),
        "e": t.e(),
        "f_iiii": t.f_iiii(),
        "f_ijij": t.f_ijij(),
    }))
}

fn setup_json(setup: &RunSetup) -> serde_json::Value {
    json!({
        "epsilon": setup.epsilon,
        "dt": setup.dt,
        "steps": setup.steps,
        "final_time": setup.final_time(),
        "snapshot_every": setup.snapshot_every,
        "grid": {
            "shape": setup.grid.shape,
            "spacing": setup.grid.spacing,
            "origin": setup.grid.origin,
            "boundary": setup.grid.boundary,
        },
    })
}

fn print_files(files: &[PathBuf]) {
    for f in files {
        println!("{}", f.display());
    }
}

fn cmd_cell(common: &Common, k_points: usize, k_max: f64) -> Result<()> {
    if k_points == 0 || !(k_max >= 0.0) {
        return Err(Error::InvalidParameter("k_points must be positive and k_max nonnegative".into()));
    }
    let cfg = common.resolve(None)?;
    let ev = BandEvaluator::new(&cfg.build_medium()?, cutoff(&cfg))?;
    let dim = cfg.dim();
    let axis: Vec<f64> = (0..k_points)
        .map(|i| if k_points == 1 { 0.0 } else { -k_max + 2.0 * k_max * i as f64 / (k_points - 1) as f64 })
        .collect();
    let points: Vec<Vec<f64>> = (0..k_points.pow(dim as u32))
        .map(|mut flat| {
            let mut k = vec![0.0; dim];
            for d in (0..dim).rev() {
                k[d] = axis[flat % k_points];
                flat /= k_points;
            }
            k
        })
        .collect();
    let rows = harness::with_workers(|| {
        points
            .par_iter()
            .map(|k| {
                let mut row = k.clone();
                row.push(ev.mu0(k)?);
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let mut header: Vec<String> = (1..=dim).map(|d| format!("k{d}")).collect();
    header.push("mu0".into());
    let refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let path = common.out_dir()?.join("cell.csv");
    harness::write_csv(&path, &refs, rows)?;
    print_files(&[path]);
    Ok(())
}

fn cmd_dispersion(common: &Common, format: Format) -> Result<()> {
    let cfg = common.resolve(None)?;
    let c = harness::resolve_coefficients(&cfg)?;
    let record = coefficient_json(&c)?;
    match format {
        Format::Json => println!("{record}"),
        Format::Text => {
            let t = decompose(&c)?;
            println!("a_star  = {:.10}", c.a_star);
            println!("alpha   = {:.10}", c.alpha);
            println!("beta    = {:.10}", c.beta);
            match t.case {
                Some(case) => println!("case    = {}", case.number()),
                None => println!("case    = n/a (1D)"),
            }
            println!("E       = {:.10}", t.e());
            println!("F_iiii  = {:.10}", t.f_iiii());
            println!("F_ijij  = {:.10}", t.f_ijij());
        }
    }
    Ok(())
}

fn cmd_solve_hetero(common: &Common) -> Result<()> {
    let cfg = common.resolve(None)?;
    let medium = cfg.build_medium()?;
    let setup = cfg.hetero_setup(&medium)?;
    let out = hetero::run(&setup, &medium, &cfg.build_datum()?)?;
    let dir = common.out_dir()?;
    let mut files = harness::write_snapshot_bundle(dir, "u", &out.snapshots, "u")?;
    let meta = json!({
        "solver": "hetero",
        "config": cfg,
        "setup": setup_json(&setup),
        "cfl_bound": hetero::cfl_bound(&medium, &setup.grid),
        "energy_drift": out.energy_drift(),
    });
    let path = dir.join("u_meta.json");
    harness::write_json(&path, &meta)?;
    files.push(path);
    print_files(&files);
    Ok(())
}

fn cmd_solve_effective(common: &Common, coefficients: &CoefficientArgs) -> Result<()> {
    let cfg = common.resolve(Some(coefficients))?;
    let c = harness::resolve_coefficients(&cfg)?;
    let setup = cfg.effective_setup(&c)?;
    let (_, out) = harness::run_effective(&cfg, &c)?;
    let dir = common.out_dir()?;
    let mut files = harness::write_snapshot_bundle(dir, "w", &out.snapshots, "w")?;
    let meta = json!({
        "solver": "effective",
        "config": cfg,
        "coefficients": coefficient_json(&c)?,
        "setup": setup_json(&setup),
        "output_grid_shape": out.final_field().grid.shape,
        "energy_drift": out.energy_drift(),
    });
    let path = dir.join("w_meta.json");
    harness::write_json(&path, &meta)?;
    files.push(path);
    print_files(&files);
    Ok(())
}

/// Oracle field at every snapshot time of `setup`.
fn oracle_snapshots(setup: &RunSetup, field: impl Fn(f64) -> Result<GridField>) -> Result<Vec<Snapshot>> {
    setup
        .snapshot_steps()
        .into_iter()
        .map(|step| {
            let time = step as f64 * setup.dt;
            Ok(Snapshot { step, time, field: field(time)? })
        })
        .collect()
}

fn cmd_oracle(common: &Common, mode: OracleMode, coefficients: &CoefficientArgs, bands: usize, k_points: usize) -> Result<()> {
    let cfg = common.resolve(Some(coefficients))?;
    let datum = cfg.build_datum()?;
    let eps = cfg.epsilon;
    let dir = common.out_dir()?;
    let files = match mode {
        OracleMode::U | OracleMode::Band0 => {
            let medium = cfg.build_medium()?;
            let ev = BandEvaluator::new(&medium, cutoff(&cfg))?;
            let setup = cfg.hetero_setup(&medium)?;
            let snaps = oracle_snapshots(&setup, |t| match mode {
                OracleMode::U => Ok(oracle::evaluate_u(&datum, &ev, eps, &setup.grid, t)?.value),
                _ => oracle::band_m0_solution(&datum, &ev, eps, &setup.grid, t),
            })?;
            let name = if mode == OracleMode::U { "U" } else { "band0" };
            harness::write_snapshot_bundle(dir, name, &snaps, name)?
        }
        OracleMode::V => {
            let c = harness::resolve_coefficients(&cfg)?;
            let setup = cfg.effective_setup(&c)?;
            let snaps = oracle_snapshots(&setup, |t| Ok(oracle::evaluate_v(&datum, &c, eps, &setup.grid, t)?.value))?;
            harness::write_snapshot_bundle(dir, "v", &snaps, "v")?
        }
        OracleMode::Parseval => {
            let medium = cfg.build_medium()?;
            let report = oracle::parseval_check(&datum, &medium, eps, bands, cutoff(&cfg), None)?;
            let path = dir.join("parseval.csv");
            harness::write_csv(
                &path,
                &["bands", "lhs", "rhs", "gap"],
                report.rhs.iter().zip(&report.gap).enumerate().map(|(m, (r, g))| vec![(m + 1) as f64, report.lhs, *r, *g]),
            )?;
            vec![path]
        }
        OracleMode::BlochCoef => {
            let ev = BandEvaluator::new(&cfg.build_medium()?, cutoff(&cfg))?;
            let dim = cfg.dim();
            let r = oracle::band_radius(&datum, eps);
            let n = k_points.max(1);
            let axis: Vec<f64> = (0..n).map(|i| if n == 1 { 0.0 } else { -r + 2.0 * r * i as f64 / (n - 1) as f64 }).collect();
            let rows = harness::with_workers(|| {
                (0..n.pow(dim as u32))
                    .into_par_iter()
                    .map(|mut flat| {
                        let mut k = vec![0.0; dim];
                        for d in (0..dim).rev() {
                            k[d] = axis[flat % n];
                            flat /= n;
                        }
                        let c = oracle::bloch_coefficient(&datum, &ev, eps, &k)?;
                        let f0 = datum.fourier(&k);
                        let mut row = k;
                        row.extend([c.re, c.im, f0.re, f0.im]);
                        Ok(row)
                    })
                    .collect::<Result<Vec<_>>>()
            })??;
            let mut header: Vec<String> = (1..=dim).map(|d| format!("k{d}")).collect();
            header.extend(["coef_re", "coef_im", "f0_re", "f0_im"].map(String::from));
            let refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
            let path = dir.join("blochcoef.csv");
            harness::write_csv(&path, &refs, rows)?;
            vec![path]
        }
    };
    print_files(&files);
    Ok(())
}

fn cmd_compare(common: &Common, coefficients: &CoefficientArgs) -> Result<()> {
    let cfg = common.resolve(Some(coefficients))?;
    let c = harness::resolve_coefficients(&cfg)?;
    let pair = harness::run_pair(&cfg, &c)?;
    let dir = common.out_dir()?;
    let mut header = harness::coordinate_header(pair.u_profile.grid.dim());
    header.extend(["u", "w"].map(String::from));
    let refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let rows = (0..pair.u_profile.values.len()).map(|i| {
        let mut r = pair.u_profile.grid.point(i);
        r.extend([pair.u_profile.values[i], pair.w_profile.values[i]]);
        r
    });
    let csv = dir.join("compare.csv");
    harness::write_csv(&csv, &refs, rows)?;
    let report = dir.join("compare.json");
    harness::write_json(&report, &json!({ "config": cfg, "coefficients": coefficient_json(&c)?, "report": pair.report }))?;
    println!("{}", serde_json::to_string(&pair.report).map_err(|e| Error::Config(e.to_string()))?);
    print_files(&[csv, report]);
    Ok(())
}

fn cmd_convergence(common: &Common, coefficients: &CoefficientArgs, eps: &[f64]) -> Result<()> {
    let cfg = common.resolve(Some(coefficients))?;
    let table = harness::convergence_study(&cfg, eps)?;
    let dir = common.out_dir()?;
    let csv = dir.join("convergence.csv");
    harness::write_csv(
        &csv,
        &["epsilon", "time", "l2_error", "linf_error"],
        table.rows.iter().map(|r| vec![r.epsilon, r.time, r.l2.unwrap_or(f64::NAN), r.linf.unwrap_or(f64::NAN)]),
    )?;
    let meta = dir.join("convergence.json");
    harness::write_json(&meta, &json!({ "config": cfg, "table": table }))?;
    for r in &table.rows {
        match (&r.l2, &r.failure) {
            (Some(l2), _) => println!("eps = {:<6} t = {:<8} L2 = {l2:.6e}", r.epsilon, r.time),
            (None, Some(f)) => println!("eps = {:<6} t = {:<8} failed: {f}", r.epsilon, r.time),
            _ => {}
        }
    }
    if let Some(s) = table.slope {
        println!("slope = {s:.4}");
    }
    print_files(&[csv, meta]);
    Ok(())
}

fn cmd_reproduce(common: &Common, eps: Option<&[f64]>) -> Result<()> {
    let figure = common.figure()?;
    let cfg = common.resolve(None)?;
    let files = harness::reproduce(figure, &cfg, common.out_dir()?, eps)?;
    print_files(&files);
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Cell { common, k_points, k_max } => cmd_cell(common, *k_points, *k_max),
        Command::Dispersion { common, format } => cmd_dispersion(common, *format),
        Command::SolveHetero { common } => cmd_solve_hetero(common),
        Command::SolveEffective { common, coefficients } => cmd_solve_effective(common, coefficients),
        Command::Oracle { common, mode, coefficients, bands, k_points } => {
            cmd_oracle(common, *mode, coefficients, *bands, *k_points)
        }
        Command::Compare { common, coefficients } => cmd_compare(common, coefficients),
        Command::Convergence { common, coefficients, eps } => cmd_convergence(common, coefficients, eps),
        Command::Reproduce { common, eps } => cmd_reproduce(common, eps.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
