use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use ioncrystal::constants::{
    angular_to_mhz, mhz_to_angular, ATOMIC_MASS_UNIT, ELECTRON_MASS_AMU, ELEMENTARY_CHARGE,
    YB171_ATOMIC_MASS_AMU,
};
use ioncrystal::crystal::{CrystalConfigurationResult, HarmonicTrap};
use ioncrystal::io::TrapFile;
use ioncrystal::trap_model::{secular_frequencies, trap_center, IonSpecies, TrapConfiguration};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::output::{invalid, read_input, Run};

pub const GEOMETRY_SCHEMA: &str = "ioncrystal.geometry/1";

fn parse_assignment(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=VOLTS, got '{s}'"))?;
    let v: f64 = value
        .trim()
        .parse()
        .map_err(|_| format!("'{value}' is not a number"))?;
    Ok((name.trim().to_string(), v))
}

#[derive(Args, Debug, Clone)]
pub struct TrapArgs {
    /// Trap basis file (TOML). Defaults to the bundled reference trap.
    #[arg(long)]
    pub trap: Option<PathBuf>,
    /// Set a group or electrode voltage, NAME=VOLTS. Repeatable.
    #[arg(long = "set", value_name = "NAME=VOLTS", value_parser = parse_assignment)]
    pub set: Vec<(String, f64)>,
    /// RF amplitude override, V.
    #[arg(long, value_name = "VOLTS")]
    pub v_rf: Option<f64>,
}

impl TrapArgs {
    pub fn load_file(&self, run: &mut Run) -> Result<TrapFile> {
        let mut file = match &self.trap {
            Some(path) => {
                let text = read_input(run, path)?;
                TrapFile::parse(&text, &path.display().to_string()).map_err(invalid)?
            }
            None => TrapFile::reference(),
        };
        for (name, v) in &self.set {
            if !v.is_finite() {
                return Err(invalid(format!("voltage for '{name}' must be finite")));
            }
            file.set_voltage(name, *v).map_err(invalid)?;
        }
        if let Some(v) = self.v_rf {
            file.rf.voltage = v;
        }
        // Re-validate after edits.
        TrapFile::parse(&file.to_toml(), "trap").map_err(invalid)
    }

    pub fn configuration(&self, run: &mut Run) -> Result<TrapConfiguration> {
        Ok(self.load_file(run)?.configuration())
    }
}

#[derive(Args, Debug, Clone)]
pub struct SourceArgs {
    #[command(flatten)]
    pub trap_args: TrapArgs,
    /// Secular frequencies FX,FY,FZ in MHz, instead of a trap file.
    #[arg(long, value_delimiter = ',', num_args = 1, value_name = "FX,FY,FZ", conflicts_with_all = ["trap", "set", "v_rf"])]
    pub freqs: Option<Vec<f64>>,
    /// Atomic mass in amu, with --freqs.
    #[arg(long, default_value_t = YB171_ATOMIC_MASS_AMU, requires = "freqs")]
    pub mass_amu: f64,
    /// Charge in elementary charges, with --freqs.
    #[arg(long, default_value_t = 1, requires = "freqs")]
    pub charge: i32,
}

/// A harmonic trap plus where its principal frame sits in the lab.
pub struct Source {
    pub trap: HarmonicTrap,
    /// Columns are the principal directions.
    pub axes: Matrix3<f64>,
    pub center: Vector3<f64>,
}

impl Source {
    pub fn from_config(config: TrapConfiguration) -> Result<Self> {
        let freqs = secular_frequencies(&config).map_err(invalid)?;
        let trap = HarmonicTrap::from_secular(&freqs, config.species).map_err(invalid)?;
        let center = trap_center(&config).map_err(invalid)?;
        Ok(Source {
            trap,
            axes: freqs.principal_axes,
            center,
        })
    }

    pub fn to_lab(&self, r: &Vector3<f64>) -> Vector3<f64> {
        self.center + self.axes * r
    }
}

impl SourceArgs {
    pub fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "trap": self.trap_args.trap,
            "set": self.trap_args.set,
            "v_rf": self.trap_args.v_rf,
            "freqs_mhz": self.freqs,
            "mass_amu": self.freqs.as_ref().map(|_| self.mass_amu),
            "charge": self.freqs.as_ref().map(|_| self.charge),
        })
    }

    pub fn resolve(&self, run: &mut Run) -> Result<Source> {
        match &self.freqs {
            Some(f) => {
                if f.len() != 3 {
                    return Err(invalid(format!("--freqs needs three values, got {}", f.len())));
                }
                let species = IonSpecies::from_amu(self.mass_amu, self.charge).map_err(invalid)?;
                let omega = [mhz_to_angular(f[0]), mhz_to_angular(f[1]), mhz_to_angular(f[2])];
                Ok(Source {
                    trap: HarmonicTrap::new(omega, species).map_err(invalid)?,
                    axes: Matrix3::identity(),
                    center: Vector3::zeros(),
                })
            }
            None => Source::from_config(self.trap_args.configuration(run)?),
        }
    }
}

pub fn species_amu(species: &IonSpecies) -> (f64, i32) {
    let charge = (species.charge / ELEMENTARY_CHARGE).round() as i32;
    (species.mass / ATOMIC_MASS_UNIT + f64::from(charge) * ELECTRON_MASS_AMU, charge)
}

fn um(v: &Vector3<f64>) -> [f64; 3] {
    [v.x * 1e6, v.y * 1e6, v.z * 1e6]
}

/// Equilibrium geometry with everything needed to rebuild its trap.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryFile {
    pub schema: String,
    pub n_ions: usize,
    pub seed: u64,
    pub restarts: usize,
    /// Secular frequencies along the principal axes, MHz.
    pub freqs_mhz: [f64; 3],
    pub mass_amu: f64,
    pub charge: i32,
    /// Principal directions as rows: x, y, z.
    pub principal_axes: [[f64; 3]; 3],
    pub center_um: [f64; 3],
    /// Lab-frame positions, µm.
    pub positions_um: Vec<[f64; 3]>,
    pub energy_j: f64,
    pub converged: bool,
    pub gradient_norm_n: f64,
    pub force_tolerance_n: f64,
    /// In the principal frame.
    pub dimensionality: String,
    /// Principal-frame extent, µm.
    pub extent_um: [f64; 3],
}

impl GeometryFile {
    pub fn new(
        source: &Source,
        result: &CrystalConfigurationResult,
        dimensionality: String,
        restarts: usize,
    ) -> Self {
        let (mass_amu, charge) = species_amu(&source.trap.species);
        let axes = source.axes;
        let e = result.extent();
        GeometryFile {
            schema: GEOMETRY_SCHEMA.to_string(),
            n_ions: result.n_ions(),
            seed: result.seed,
            restarts,
            freqs_mhz: source.trap.omega.map(angular_to_mhz),
            mass_amu,
            charge,
            principal_axes: [0, 1, 2].map(|c| [axes[(0, c)], axes[(1, c)], axes[(2, c)]]),
            center_um: um(&source.center),
            positions_um: result.positions.iter().map(|r| um(&source.to_lab(r))).collect(),
            energy_j: result.energy,
            converged: result.converged,
            gradient_norm_n: result.gradient_norm,
            force_tolerance_n: result.force_tolerance,
            dimensionality,
            extent_um: [e.size_x * 1e6, e.size_y * 1e6, e.size_z * 1e6],
        }
    }

    pub fn load(run: &mut Run, path: &std::path::Path) -> Result<Self> {
        let text = read_input(run, path)?;
        let g: GeometryFile = serde_json::from_str(&text)
            .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        if g.schema != GEOMETRY_SCHEMA {
            return Err(invalid(format!(
                "{}: unsupported schema '{}', expected '{GEOMETRY_SCHEMA}'",
                path.display(),
                g.schema
            )));
        }
        if g.positions_um.len() != g.n_ions || g.n_ions == 0 {
            return Err(invalid(format!("{}: n_ions does not match positions", path.display())));
        }
        Ok(g)
    }

    pub fn axes(&self) -> Matrix3<f64> {
        let a = self.principal_axes;
        Matrix3::from_columns(&a.map(Vector3::from))
    }

    pub fn source(&self) -> Result<Source> {
        let species = IonSpecies::from_amu(self.mass_amu, self.charge).map_err(invalid)?;
        let omega = self.freqs_mhz.map(mhz_to_angular);
        Ok(Source {
            trap: HarmonicTrap::new(omega, species).map_err(invalid)?,
            axes: self.axes(),
            center: Vector3::from(self.center_um) * 1e-6,
        })
    }

    pub fn lab_positions(&self) -> Vec<Vector3<f64>> {
        self.positions_um.iter().map(|p| Vector3::from(*p) * 1e-6).collect()
    }

    /// Positions in the principal frame, SI.
    pub fn principal_positions(&self) -> Vec<Vector3<f64>> {
        let axes = self.axes();
        let c = Vector3::from(self.center_um) * 1e-6;
        self.lab_positions().iter().map(|r| axes.transpose() * (r - c)).collect()
    }
}

#[derive(Serialize)]
pub struct PositionRow {
    pub index: usize,
    pub x_um: f64,
    pub y_um: f64,
    pub z_um: f64,
}
