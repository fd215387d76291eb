use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use ioncrystal::constants::angular_to_mhz;
use ioncrystal::crystal::{
    classify_dimension, solve_equilibrium_with, CrystalConfigurationResult, CrystalError, SolverOptions,
    DEFAULT_PLANARITY_THRESHOLD, DEFAULT_RESTARTS,
};
use ioncrystal::modes::mode_spectrum;
use serde::Serialize;

use crate::output::{invalid, Run};
use crate::source::{GeometryFile, PositionRow, Source, SourceArgs};
use crate::Status;

#[derive(Args, Debug, Clone)]
pub struct SolveArgs {
    /// Number of ions.
    #[arg(long, short = 'n')]
    pub ions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random starts; the lowest-energy converged one is kept.
    #[arg(long, default_value_t = DEFAULT_RESTARTS)]
    pub restarts: usize,
    /// Force tolerance relative to m·ω_x²·ℓ.
    #[arg(long, default_value_t = SolverOptions::default().relative_force_tolerance)]
    pub force_tolerance: f64,
    #[arg(long, default_value_t = SolverOptions::default().max_iterations)]
    pub max_iterations: usize,
    /// Extent below this (m) counts as collapsed.
    #[arg(long, default_value_t = DEFAULT_PLANARITY_THRESHOLD)]
    pub planarity_threshold: f64,
}

impl SolveArgs {
    fn options(&self) -> Result<SolverOptions> {
        if !(self.force_tolerance > 0.0) || self.max_iterations == 0 {
            return Err(invalid("force tolerance and iteration limit must be positive"));
        }
        if !(self.planarity_threshold > 0.0) {
            return Err(invalid("planarity threshold must be positive"));
        }
        if self.ions == 0 || self.restarts == 0 {
            return Err(invalid("--ions and --restarts must be at least 1"));
        }
        Ok(SolverOptions {
            relative_force_tolerance: self.force_tolerance,
            max_iterations: self.max_iterations,
            ..SolverOptions::default()
        })
    }

    fn record(&self, run: &mut Run) {
        run.seed = Some(self.seed);
        run.tolerances.insert("relative_force_tolerance".into(), self.force_tolerance);
        run.tolerances.insert("planarity_threshold_m".into(), self.planarity_threshold);
        run.tolerances.insert("max_iterations".into(), self.max_iterations as f64);
    }
}

#[derive(Args, Debug)]
pub struct EquilibriumArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub solve: SolveArgs,
}

/// Solves and returns the result even when it did not converge.
fn solve(source: &Source, solve: &SolveArgs) -> Result<CrystalConfigurationResult> {
    let opts = solve.options()?;
    match solve_equilibrium_with(&source.trap, solve.ions, solve.seed, solve.restarts, &[], &opts) {
        Ok(r) => Ok(r),
        Err(CrystalError::NotConverged(r)) => Ok(*r),
        Err(e) => Err(invalid(e)),
    }
}

fn geometry_file(source: &Source, result: &CrystalConfigurationResult, solve: &SolveArgs) -> Result<GeometryFile> {
    let dim = classify_dimension(&result.positions, solve.planarity_threshold).map_err(invalid)?;
    Ok(GeometryFile::new(source, result, dim.to_string(), solve.restarts))
}

fn position_rows(g: &GeometryFile) -> Vec<PositionRow> {
    g.positions_um
        .iter()
        .enumerate()
        .map(|(index, p)| PositionRow {
            index,
            x_um: p[0],
            y_um: p[1],
            z_um: p[2],
        })
        .collect()
}

fn status(converged: bool) -> Status {
    if converged {
        Status::Ok
    } else {
        Status::NotConverged
    }
}

pub fn run_equilibrium(args: &EquilibriumArgs, out: &Path) -> Result<Status> {
    let mut run = Run::new("equilibrium");
    args.solve.options()?;
    let source = args.source.resolve(&mut run)?;
    args.solve.record(&mut run);
    run.parameters = serde_json::json!({
        "source": args.source.describe(),
        "ions": args.solve.ions,
        "restarts": args.solve.restarts,
    });
    let result = solve(&source, &args.solve)?;
    let g = geometry_file(&source, &result, &args.solve)?;
    println!(
        "{} ions, {}, extent = [{:.3}, {:.3}, {:.3}] um, converged = {}",
        g.n_ions, g.dimensionality, g.extent_um[0], g.extent_um[1], g.extent_um[2], g.converged
    );
    run.converged = g.converged;
    run.csv("geometry.csv", position_rows(&g))?;
    run.json("geometry.json", &g)?;
    run.commit(out)?;
    Ok(status(g.converged))
}

#[derive(Args, Debug)]
pub struct ModesArgs {
    /// Geometry file written by `equilibrium`. Without it the crystal is solved first.
    #[arg(long, conflicts_with_all = ["freqs", "trap", "set", "v_rf", "ions"])]
    pub geometry: Option<PathBuf>,
    #[command(flatten)]
    pub source: SourceArgs,
    /// Number of ions (when solving).
    #[arg(long, short = 'n')]
    pub ions: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_RESTARTS)]
    pub restarts: usize,
}

#[derive(Serialize)]
struct ModeRow {
    index: usize,
    frequency_mhz: f64,
    eigenvalue_rad2_s2: f64,
    participation_x: f64,
    participation_y: f64,
    participation_z: f64,
    soft: bool,
}

/// Loads a geometry, or solves one, for commands that need a crystal.
pub fn crystal_geometry(
    run: &mut Run,
    geometry: Option<&Path>,
    source: &SourceArgs,
    ions: Option<usize>,
    seed: u64,
    restarts: usize,
) -> Result<GeometryFile> {
    if let Some(path) = geometry {
        return GeometryFile::load(run, path);
    }
    let ions = ions.ok_or_else(|| invalid("either --geometry or --ions is required"))?;
    let solve_args = SolveArgs {
        ions,
        seed,
        restarts,
        force_tolerance: SolverOptions::default().relative_force_tolerance,
        max_iterations: SolverOptions::default().max_iterations,
        planarity_threshold: DEFAULT_PLANARITY_THRESHOLD,
    };
    solve_args.options()?;
    let src = source.resolve(run)?;
    solve_args.record(run);
    let result = solve(&src, &solve_args)?;
    geometry_file(&src, &result, &solve_args)
}

pub fn run_modes(args: &ModesArgs, out: &Path) -> Result<Status> {
    let mut run = Run::new("modes");
    let g = crystal_geometry(
        &mut run,
        args.geometry.as_deref(),
        &args.source,
        args.ions,
        args.seed,
        args.restarts,
    )?;
    run.parameters = serde_json::json!({
        "geometry": args.geometry,
        "source": args.source.describe(),
        "ions": args.ions,
        "restarts": args.restarts,
    });
    let source = g.source()?;
    let spectrum = mode_spectrum(&g.principal_positions(), &source.trap).map_err(invalid)?;
    let rows: Vec<ModeRow> = (0..spectrum.len())
        .map(|k| ModeRow {
            index: k,
            frequency_mhz: angular_to_mhz(spectrum.frequencies[k]),
            eigenvalue_rad2_s2: spectrum.eigenvalues[k],
            participation_x: spectrum.participation[k][0],
            participation_y: spectrum.participation[k][1],
            participation_z: spectrum.participation[k][2],
            soft: spectrum.soft[k],
        })
        .collect();
    println!(
        "{} modes, {:.6} to {:.6} MHz{}",
        rows.len(),
        rows.first().map_or(0.0, |r| r.frequency_mhz),
        rows.last().map_or(0.0, |r| r.frequency_mhz),
        if spectrum.has_soft_modes() { ", soft modes present" } else { "" }
    );
    run.converged = g.converged;
    run.csv("modes.csv", rows)?;
    if args.geometry.is_none() {
        run.csv("geometry.csv", position_rows(&g))?;
        run.json("geometry.json", &g)?;
    }
    run.commit(out)?;
    Ok(status(g.converged))
}
