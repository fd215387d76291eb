use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use ioncrystal::constants::{angular_to_mhz, mhz_to_angular, YB171_ATOMIC_MASS_AMU};
use ioncrystal::crystal::{
    scan_structure, HarmonicTrap, ScanRecord, ScanSpec, SolverOptions, SweepParameter,
    DEFAULT_PLANARITY_THRESHOLD, DEFAULT_RESTARTS,
};
use ioncrystal::io::TrapFile;
use ioncrystal::modes::{soft_mode_scan, SqueezeSpec};
use ioncrystal::trap_model::{secular_frequencies, IonSpecies};
use ioncrystal::Axis;
use serde::{Deserialize, Serialize};

use crate::output::{invalid, read_input, Run};
use crate::Status;

pub const SCAN_SCHEMA: &str = "ioncrystal.scan/1";

#[derive(Args, Debug)]
pub struct ScanArgs {
    /// Scan spec file (TOML).
    #[arg(long)]
    pub spec: PathBuf,
}

/// On-disk scan description.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScanFile {
    pub schema: String,
    pub ions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "yes")]
    pub warm_start: bool,
    #[serde(default)]
    pub bidirectional: bool,
    #[serde(default = "default_threshold")]
    pub planarity_threshold: f64,
    #[serde(default = "default_tolerance")]
    pub relative_force_tolerance: f64,
    /// Also track the softest transverse mode (omega_x sweeps with z following).
    #[serde(default)]
    pub soft_mode: bool,
    pub trap: TrapSection,
    pub sweep: SweepSection,
}

fn default_restarts() -> usize {
    DEFAULT_RESTARTS
}
fn yes() -> bool {
    true
}
fn default_threshold() -> f64 {
    DEFAULT_PLANARITY_THRESHOLD
}
fn default_tolerance() -> f64 {
    SolverOptions::default().relative_force_tolerance
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TrapSection {
    /// Secular frequencies in MHz.
    pub freqs_mhz: Option<[f64; 3]>,
    #[serde(default = "yb_amu")]
    pub mass_amu: f64,
    #[serde(default = "one")]
    pub charge: i32,
    /// Trap file, relative to the spec file; the bundled reference trap when
    /// neither this nor `freqs_mhz` is given.
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub voltages: std::collections::BTreeMap<String, f64>,
}

fn yb_amu() -> f64 {
    YB171_ATOMIC_MASS_AMU
}
fn one() -> i32 {
    1
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// omega_x, omega_y, omega_z (MHz) or v_rf (V).
    pub parameter: String,
    pub values: Option<Vec<f64>>,
    pub start: Option<f64>,
    pub stop: Option<f64>,
    pub steps: Option<usize>,
    pub follow: Option<Follow>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Follow {
    pub axis: Axis,
    pub ratio: f64,
}

impl SweepSection {
    fn grid(&self) -> Result<Vec<f64>> {
        match (&self.values, self.start, self.stop, self.steps) {
            (Some(v), None, None, None) => Ok(v.clone()),
            (None, Some(a), Some(b), Some(n)) if n >= 2 => {
                Ok((0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect())
            }
            _ => Err(invalid("sweep needs either `values` or `start`, `stop` and `steps` (>= 2)")),
        }
    }
}

#[derive(Serialize)]
struct ScanRow {
    parameter: f64,
    size_x_um: Option<f64>,
    size_y_um: Option<f64>,
    size_z_um: Option<f64>,
    energy_j: Option<f64>,
    converged: bool,
    dimensionality: Option<String>,
    error: Option<String>,
}

fn rows(records: &[ScanRecord], scale: f64) -> Vec<ScanRow> {
    records
        .iter()
        .map(|r| ScanRow {
            parameter: r.parameter / scale,
            size_x_um: r.extent.map(|e| e.size_x * 1e6),
            size_y_um: r.extent.map(|e| e.size_y * 1e6),
            size_z_um: r.extent.map(|e| e.size_z * 1e6),
            energy_j: r.energy,
            converged: r.converged,
            dimensionality: r.dimensionality.map(|d| d.to_string()),
            error: r.error.clone(),
        })
        .collect()
}

#[derive(Serialize)]
struct SoftRow {
    omega_x_mhz: f64,
    min_eigenvalue_rad2_s2: Option<f64>,
    /// sign(λ)·sqrt(|λ|)/2π
    min_frequency_mhz: Option<f64>,
    error: Option<String>,
}

struct Prepared {
    spec: ScanSpec,
    scale: f64,
    squeeze: Option<SqueezeSpec>,
}

fn prepare(file: &ScanFile, base: &Path, run: &mut Run) -> Result<Prepared> {
    if file.schema != SCAN_SCHEMA {
        return Err(invalid(format!(
            "unsupported schema '{}', expected '{SCAN_SCHEMA}'",
            file.schema
        )));
    }
    if file.ions == 0 || file.restarts == 0 {
        return Err(invalid("`ions` and `restarts` must be at least 1"));
    }
    if !(file.planarity_threshold > 0.0 && file.relative_force_tolerance > 0.0) {
        return Err(invalid("tolerances must be positive"));
    }
    let t = &file.trap;
    let (template, config) = match (&t.freqs_mhz, &t.file) {
        (Some(_), Some(_)) => return Err(invalid("give either trap.freqs_mhz or trap.file")),
        (Some(f), None) => {
            if !t.voltages.is_empty() {
                return Err(invalid("trap.voltages needs a trap file"));
            }
            let species = IonSpecies::from_amu(t.mass_amu, t.charge).map_err(invalid)?;
            (HarmonicTrap::new(f.map(mhz_to_angular), species).map_err(invalid)?, None)
        }
        (None, path) => {
            let mut trap_file = match path {
                Some(p) => {
                    let p = base.join(p);
                    let text = read_input(run, &p)?;
                    TrapFile::parse(&text, &p.display().to_string()).map_err(invalid)?
                }
                None => TrapFile::reference(),
            };
            for (name, v) in &t.voltages {
                trap_file.set_voltage(name, *v).map_err(invalid)?;
            }
            let config = trap_file.configuration();
            let freqs = secular_frequencies(&config).map_err(invalid)?;
            (HarmonicTrap::from_secular(&freqs, config.species).map_err(invalid)?, Some(config))
        }
    };

    let s = &file.sweep;
    let axis = match s.parameter.as_str() {
        "omega_x" => Some(Axis::X),
        "omega_y" => Some(Axis::Y),
        "omega_z" => Some(Axis::Z),
        "v_rf" => None,
        other => return Err(invalid(format!("unknown sweep parameter '{other}'"))),
    };
    let raw = s.grid()?;
    let (parameter, values, scale) = match axis {
        Some(axis) => {
            let follow = match &s.follow {
                Some(f) if f.axis == axis => return Err(invalid("an axis cannot follow itself")),
                Some(f) if !(f.ratio > 0.0) => return Err(invalid("follow ratio must be positive")),
                Some(f) => Some((f.axis, f.ratio)),
                None => None,
            };
            let scale = mhz_to_angular(1.0);
            (
                SweepParameter::Omega { axis, follow },
                raw.iter().map(|v| v * scale).collect::<Vec<_>>(),
                scale,
            )
        }
        None => {
            let config = config.ok_or_else(|| invalid("v_rf sweeps need a trap file, not freqs_mhz"))?;
            if s.follow.is_some() {
                return Err(invalid("`follow` applies to frequency sweeps only"));
            }
            (SweepParameter::RfVoltage(Box::new(config)), raw, 1.0)
        }
    };
    if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(invalid("sweep values must be positive"));
    }

    let options = SolverOptions {
        relative_force_tolerance: file.relative_force_tolerance,
        ..SolverOptions::default()
    };
    let squeeze = if file.soft_mode {
        match &parameter {
            SweepParameter::Omega {
                axis: Axis::X,
                follow: Some((Axis::Z, ratio)),
            } => {
                let mut sq = SqueezeSpec::new(template, values.clone(), *ratio, file.ions);
                sq.seed = file.seed;
                sq.restarts = file.restarts;
                sq.options = options;
                Some(sq)
            }
            _ => {
                return Err(invalid(
                    "soft_mode needs an omega_x sweep with `follow = { axis = \"z\", ratio = ... }`",
                ))
            }
        }
    } else {
        None
    };
    let mut spec = ScanSpec::new(template, parameter, values, file.ions);
    spec.seed = file.seed;
    spec.restarts = file.restarts;
    spec.warm_start = file.warm_start;
    spec.bidirectional = file.bidirectional;
    spec.threshold = file.planarity_threshold;
    spec.options = options;
    Ok(Prepared { spec, scale, squeeze })
}

pub fn run(args: &ScanArgs, out: &Path) -> Result<Status> {
    let mut run = Run::new("scan");
    let text = read_input(&mut run, &args.spec)?;
    let file: ScanFile = toml::from_str(&text)
        .map_err(|e| invalid(format!("{}: {e}", args.spec.display())))?;
    let base = args.spec.parent().unwrap_or(Path::new("."));
    let prepared = prepare(&file, base, &mut run)?;
    run.seed = Some(file.seed);
    run.tolerances
        .insert("relative_force_tolerance".into(), file.relative_force_tolerance);
    run.tolerances
        .insert("planarity_threshold_m".into(), file.planarity_threshold);
    run.parameters = serde_json::to_value(&file)?;

    let result = scan_structure(&prepared.spec).map_err(invalid)?;
    let mut converged = result.records.iter().all(|r| r.converged);
    run.csv("scan.csv", rows(&result.records, prepared.scale))?;
    if let Some(rev) = &result.reverse_records {
        converged &= rev.iter().all(|r| r.converged);
        run.csv("scan_reverse.csv", rows(rev, prepared.scale))?;
    }
    let departure = result.planar_departure();
    let transitions: Vec<_> = result
        .transitions
        .iter()
        .cloned()
        .map(|mut t| {
            t.from_value /= prepared.scale;
            t.to_value /= prepared.scale;
            t
        })
        .collect();
    let mut summary = serde_json::json!({
        "parameter": result.parameter_name,
        "transitions": transitions,
        "hysteresis": result.hysteresis,
        "planar_departure": departure.map(|i| result.records[i].parameter / prepared.scale),
    });
    if let Some(sq) = &prepared.squeeze {
        let soft = soft_mode_scan(sq).map_err(invalid)?;
        let soft_rows: Vec<SoftRow> = soft
            .points
            .iter()
            .map(|p| SoftRow {
                omega_x_mhz: angular_to_mhz(p.omega_x),
                min_eigenvalue_rad2_s2: p.min_eigenvalue,
                min_frequency_mhz: p.min_eigenvalue.map(|l| angular_to_mhz(l.signum() * l.abs().sqrt())),
                error: p.error.clone(),
            })
            .collect();
        converged &= soft.points.iter().all(|p| p.error.is_none());
        run.csv("softmode.csv", soft_rows)?;
        summary["soft_mode_transition_mhz"] = serde_json::json!(soft.transition_omega_x.map(angular_to_mhz));
    }
    println!(
        "{} points, {} transitions, planar departure at {}",
        result.records.len(),
        result.transitions.len(),
        summary["planar_departure"]
    );
    run.json("scan.json", &summary)?;
    run.converged = converged;
    run.commit(out)?;
    Ok(if converged { Status::Ok } else { Status::NotConverged })
}
