//! Trap basis files.
//!
//! ```toml
//! schema = "ioncrystal.trap/1"
//! name = "example"
//!
//! [species]
//! atomic_mass_amu = 170.9363258
//! charge = 1                      # elementary charges
//!
//! [rf]
//! voltage = 80.0                  # V
//! frequency_mhz = 40.0            # drive frequency / 2pi
//! [rf.basis]
//! curvature = { xx = 0.0, yy = 5.8e7, xy = 0.0, xz = 0.0, yz = 0.0 }
//! linear_field = [0.0, 0.0, 0.0]
//!
//! [[electrodes]]
//! label = "DC1"
//! voltage = 0.3
//! curvature = { xx = 6.0e6, yy = 9.1e7, xy = 0.0, xz = 0.0, yz = -1.9e7 }
//! linear_field = [0.0, 0.0, 0.0]
//!
//! [groups]
//! C = ["DC1"]
//! ```
//!
//! Curvatures are in V/m^2 per volt and linear fields in V/m per volt. The
//! `zz` entry may be given; it must then equal `-(xx + yy)` to the Laplace
//! tolerance, otherwise it is reconstructed.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::{angular_to_mhz, mhz_to_angular, ATOMIC_MASS_UNIT, ELECTRON_MASS_AMU, ELEMENTARY_CHARGE};
use crate::trap_model::{
    DcElectrode, ElectrodeBasis, IonSpecies, RfDrive, TrapConfiguration, TrapError,
    LAPLACE_TOLERANCE,
};

pub const TRAP_SCHEMA: &str = "ioncrystal.trap/1";

/// Reconstructed reference trap: bases chosen to reproduce the aligned
/// voltage ratio 5.11, the -5.7 deg / +22.9 deg limit rotations and
/// 0.427 / 1.5 / 0.561 MHz secular frequencies at its stored voltages.
pub const REFERENCE_TRAP_TOML: &str = include_str!("../data/reference_trap.toml");

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{source_name}: {message}")]
    Parse { source_name: String, message: String },
    #[error("{source_name}: schema error: {message}")]
    Schema { source_name: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Trap(#[from] TrapError),
}

pub type Result<T, E = IoError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvatureEntries {
    pub xx: f64,
    pub yy: f64,
    #[serde(default)]
    pub xy: f64,
    #[serde(default)]
    pub xz: f64,
    #[serde(default)]
    pub yz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zz: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voltage: Option<f64>,
    pub curvature: CurvatureEntries,
    #[serde(default)]
    pub linear_field: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesEntry {
    pub atomic_mass_amu: f64,
    #[serde(default = "one")]
    pub charge: i32,
}

fn one() -> i32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfEntry {
    pub voltage: f64,
    pub frequency_mhz: f64,
    pub basis: BasisEntry,
}

/// On-disk form of a trap configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapFile {
    pub schema: String,
    #[serde(default)]
    pub name: String,
    pub species: SpeciesEntry,
    pub rf: RfEntry,
    pub electrodes: Vec<BasisEntry>,
    #[serde(default)]
    pub groups: BTreeMap<String, Vec<String>>,
}

fn basis_from_entry(label: &str, e: &BasisEntry) -> Result<ElectrodeBasis, String> {
    let c = &e.curvature;
    let basis = ElectrodeBasis::from_entries(
        label,
        [c.xx, c.yy, c.xy, c.xz, c.yz],
        Vector3::from(e.linear_field),
    )
    .map_err(|err| err.to_string())?;
    if let Some(zz) = c.zz {
        let want = -(c.xx + c.yy);
        let norm = basis.curvature.amax();
        if (zz - want).abs() > LAPLACE_TOLERANCE * norm {
            return Err(format!(
                "electrode '{label}': zz = {zz} violates Laplace (expected {want})"
            ));
        }
    }
    Ok(basis)
}

fn entry_from_basis(b: &ElectrodeBasis, voltage: Option<f64>) -> BasisEntry {
    let k = &b.curvature;
    BasisEntry {
        label: Some(b.label.clone()),
        voltage,
        curvature: CurvatureEntries {
            xx: k[(0, 0)],
            yy: k[(1, 1)],
            xy: k[(0, 1)],
            xz: k[(0, 2)],
            yz: k[(1, 2)],
            zz: None,
        },
        linear_field: [b.linear_field.x, b.linear_field.y, b.linear_field.z],
    }
}

impl TrapFile {
    /// Parses and validates. Errors carry `source_name` and, for syntax
    /// errors, the line and column.
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let file: TrapFile = toml::from_str(text).map_err(|e| IoError::Parse {
            source_name: source_name.to_string(),
            message: e.to_string(),
        })?;
        file.validate()
            .map_err(|message| IoError::Schema {
                source_name: source_name.to_string(),
                message,
            })?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| IoError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn reference() -> Self {
        Self::parse(REFERENCE_TRAP_TOML, "reference_trap").expect("bundled trap file is valid")
    }

    fn validate(&self) -> Result<(), String> {
        if self.schema != TRAP_SCHEMA {
            return Err(format!(
                "unsupported schema '{}', expected '{TRAP_SCHEMA}'",
                self.schema
            ));
        }
        for (i, e) in self.electrodes.iter().enumerate() {
            if e.label.as_deref().unwrap_or("").is_empty() {
                return Err(format!("electrode #{} has no label", i + 1));
            }
        }
        let config = self.build().map_err(|e| e.to_string())?;
        for (group, members) in &self.groups {
            if members.is_empty() {
                return Err(format!("group '{group}' is empty"));
            }
            for m in members {
                if config.electrode(m).is_err() {
                    return Err(format!("group '{group}' names unknown electrode '{m}'"));
                }
            }
        }
        Ok(())
    }

    fn build(&self) -> Result<TrapConfiguration, String> {
        let s = &self.species;
        if s.charge == 0 {
            return Err("species charge must be non-zero".into());
        }
        let species =
            IonSpecies::from_amu(s.atomic_mass_amu, s.charge).map_err(|e| e.to_string())?;
        let rf_label = self.rf.basis.label.clone().unwrap_or_else(|| "RF".into());
        let rf_basis = basis_from_entry(&rf_label, &self.rf.basis)?;
        let drive = RfDrive::new(self.rf.voltage, mhz_to_angular(self.rf.frequency_mhz))
            .map_err(|e| e.to_string())?;
        let dc = self
            .electrodes
            .iter()
            .map(|e| {
                let label = e.label.clone().unwrap_or_default();
                Ok(DcElectrode {
                    basis: basis_from_entry(&label, e)?,
                    voltage: e.voltage.unwrap_or(0.0),
                })
            })
            .collect::<Result<Vec<_>, String>>()?;
        TrapConfiguration::new(species, dc, rf_basis, drive).map_err(|e| e.to_string())
    }

    pub fn configuration(&self) -> TrapConfiguration {
        self.build().expect("validated on construction")
    }

    /// File form of `config`, keeping `groups`.
    pub fn from_configuration(
        config: &TrapConfiguration,
        name: &str,
        groups: BTreeMap<String, Vec<String>>,
    ) -> Self {
        let s = &config.species;
        let charge = (s.charge / ELEMENTARY_CHARGE).round() as i32;
        let amu = s.mass / ATOMIC_MASS_UNIT + f64::from(charge) * ELECTRON_MASS_AMU;
        TrapFile {
            schema: TRAP_SCHEMA.to_string(),
            name: name.to_string(),
            species: SpeciesEntry {
                atomic_mass_amu: amu,
                charge,
            },
            rf: RfEntry {
                voltage: config.rf_drive.v_rf,
                frequency_mhz: angular_to_mhz(config.rf_drive.omega_rf),
                basis: entry_from_basis(&config.rf_basis, None),
            },
            electrodes: config
                .dc_electrodes
                .iter()
                .map(|e| entry_from_basis(&e.basis, Some(e.voltage)))
                .collect(),
            groups,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("trap file serialises")
    }

    /// Electrode labels of `name`: a group, or a single electrode label.
    pub fn resolve(&self, name: &str) -> Option<Vec<String>> {
        if let Some(g) = self.groups.get(name) {
            return Some(g.clone());
        }
        self.electrodes
            .iter()
            .any(|e| e.label.as_deref() == Some(name))
            .then(|| vec![name.to_string()])
    }

    /// Sets a group (or single electrode) to `voltage`.
    pub fn set_voltage(&mut self, name: &str, voltage: f64) -> Result<(), TrapError> {
        let members = self
            .resolve(name)
            .ok_or_else(|| TrapError::UnknownElectrode(name.to_string()))?;
        for e in &mut self.electrodes {
            if members.iter().any(|m| Some(m.as_str()) == e.label.as_deref()) {
                e.voltage = Some(voltage);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::angular_to_mhz;
    use crate::trap_model::{
        axis_rotation_angle, secular_frequencies, solve_rotation_ratio,
    };

    fn group<'a>(f: &'a TrapFile, name: &str) -> Vec<&'a str> {
        f.groups[name].iter().map(String::as_str).collect()
    }

    #[test]
    fn reference_reproduces_documented_quantities() {
        let f = TrapFile::reference();
        let config = f.configuration();
        let w = secular_frequencies(&config).unwrap();
        for (got, want) in w.as_array().iter().zip([0.427, 1.5, 0.561]) {
            assert!((angular_to_mhz(*got) - want).abs() < 1e-9, "{got}");
        }
        let ratio = solve_rotation_ratio(&config, &group(&f, "C"), &group(&f, "NC")).unwrap();
        assert!((ratio - 5.11).abs() < 1e-9);
        assert!(axis_rotation_angle(&config).unwrap().abs() < 1e-6);

        let c_only = config.clone().with_voltages(group(&f, "NC").into_iter().map(|l| (l, 0.0))).unwrap();
        assert!((axis_rotation_angle(&c_only).unwrap() + 5.7).abs() < 1e-6);
        let nc_only = config.with_voltages(group(&f, "C").into_iter().map(|l| (l, 0.0))).unwrap();
        assert!((axis_rotation_angle(&nc_only).unwrap() - 22.9).abs() < 1e-6);
    }

    #[test]
    fn round_trip_through_toml() {
        let f = TrapFile::reference();
        let text = f.to_toml();
        let g = TrapFile::parse(&text, "round trip").unwrap();
        let (a, b) = (f.configuration(), g.configuration());
        assert_eq!(a.dc_electrodes.len(), b.dc_electrodes.len());
        for (x, y) in a.dc_electrodes.iter().zip(&b.dc_electrodes) {
            assert_eq!(x, y);
        }
        assert!((a.species.mass - b.species.mass).abs() < 1e-12 * a.species.mass);
        assert_eq!(f.groups, g.groups);
    }

    #[test]
    fn syntax_errors_report_line() {
        let err = TrapFile::parse("schema = \"ioncrystal.trap/1\"\n[species\n", "bad.toml").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.toml") && msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn schema_errors() {
        let good = REFERENCE_TRAP_TOML;
        let wrong_schema = good.replace("ioncrystal.trap/1", "ioncrystal.trap/9");
        assert!(matches!(
            TrapFile::parse(&wrong_schema, "x"),
            Err(IoError::Schema { .. })
        ));
        let bad_group = good.replace("C = [\"DC1\", \"DC2\"]", "C = [\"DC1\", \"DC9\"]");
        assert!(TrapFile::parse(&bad_group, "x").unwrap_err().to_string().contains("DC9"));
        let unknown = good.replace("charge = 1", "charge = 1\ncolour = 3");
        assert!(matches!(TrapFile::parse(&unknown, "x"), Err(IoError::Parse { .. })));
        let bad_zz = good.replace("xy = 0.0, xz = 0.0, yz = 0.0 }", "xy = 0.0, xz = 0.0, yz = 0.0, zz = 1.0 }");
        assert!(TrapFile::parse(&bad_zz, "x").unwrap_err().to_string().contains("Laplace"));
    }

    #[test]
    fn group_voltages() {
        let mut f = TrapFile::reference();
        f.set_voltage("C", 0.0).unwrap();
        f.set_voltage("NC", 0.0).unwrap();
        let w = secular_frequencies(&f.configuration()).unwrap();
        // RF only: no axial confinement, equal radial frequencies.
        assert!(w.omega_x.abs() < 1e-6);
        assert!((w.omega_y - w.omega_z).abs() < 1e-9 * w.omega_y);
        assert!(f.set_voltage("nope", 1.0).is_err());
        assert_eq!(f.resolve("DC3").unwrap(), vec!["DC3".to_string()]);
    }
}
