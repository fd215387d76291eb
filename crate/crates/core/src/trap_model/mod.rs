//! Electrode potential bases, the combined static + RF pseudopotential, and
//! the secular frequencies that follow from it.
//!
//! Every basis is a quadratic form per applied volt,
//! `phi(r) = 1/2 r^T K r + g . r`, with `K` the curvature (Hessian, V/m^2)
//! and `g` the linear field term (V/m). The RF electrode contributes a
//! pseudopotential whose curvature in units of angular frequency squared is
//! `q^2 V_rf^2 K_rf^2 / (2 m^2 omega_rf^2)`, so in any frame where both
//! `K_static` and `K_rf` are diagonal
//!
//! ```text
//! omega_i = (omega_rf / 2) sqrt(4 q k_i / (m omega_rf^2) + 2 q^2 V_rf^2 k'_i^2 / (m^2 omega_rf^4))
//! ```
//!
//! which is the lowest-order Mathieu result. Higher-order corrections are not
//! modelled; the stability parameter `q_i = 2 q V_rf k'_i / (m omega_rf^2)` is
//! reported so callers can judge validity.

mod field;
mod fit;
mod rotation;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::axis::Axis;
use crate::constants::{amu_to_kg, ELECTRON_MASS_AMU, ELEMENTARY_CHARGE, YB171_ATOMIC_MASS_AMU};

pub use field::{rf_field_at, rf_null, trap_center};
pub use fit::{fit_quadratic_basis, QuadraticFit, MIN_FIT_SAMPLES};
pub use rotation::{
    apply_rotation_ratio, axis_rotation_angle, frequency_difference, planar_verdict,
    residual_cross_term,
    solve_rotation_ratio, stability_bound, FrequencyDifference, PlanarVerdict,
    ALIGNMENT_TOLERANCE,
};

/// Relative tolerance on `|trace(K)|` for the Laplace constraint.
pub const LAPLACE_TOLERANCE: f64 = 1e-9;
/// Relative tolerance on `|K_ij - K_ji|`.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;
/// Above this Mathieu `|q|` the lowest-order secular approximation is flagged.
pub const MATHIEU_Q_WARNING: f64 = 0.3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrapError {
    #[error("electrode '{label}': curvature trace {trace:e} violates Laplace (norm {norm:e})")]
    NotTraceless { label: String, trace: f64, norm: f64 },
    #[error("electrode '{label}': curvature matrix is not symmetric")]
    NotSymmetric { label: String },
    #[error("electrode '{label}': non-finite entry")]
    NonFinite { label: String },
    #[error("invalid ion species: {0}")]
    InvalidSpecies(String),
    #[error("invalid RF drive: {0}")]
    InvalidDrive(String),
    #[error("trap configuration needs at least one DC electrode")]
    NoDcElectrodes,
    #[error("duplicate electrode label '{0}'")]
    DuplicateElectrode(String),
    #[error("unknown electrode '{0}'")]
    UnknownElectrode(String),
    #[error("axis {axis} is unstable: omega^2 = {radicand:e} (rad/s)^2")]
    UnstableAxis { axis: Axis, radicand: f64 },
    #[error("principal axes not aligned with y/z: cross term {cross:e} exceeds {tolerance:e}")]
    AxesNotAligned { cross: f64, tolerance: f64 },
    #[error("no voltage ratio cancels the y-z cross term (NC set has none, C set has {c_cross:e})")]
    NoSolution { c_cross: f64 },
    #[error("voltage ratio indeterminate: neither electrode set has a y-z cross term")]
    Indeterminate,
    #[error("y-z curvature block is degenerate; principal axes undefined")]
    Degenerate,
    #[error("sample geometry cannot determine all quadratic coefficients (condition {condition:e})")]
    RankDeficient { condition: f64 },
    #[error("quadratic fit needs at least {need} samples, got {got}")]
    InsufficientSamples { got: usize, need: usize },
    #[error("electrode set is empty")]
    EmptyElectrodeSet,
}

pub type Result<T, E = TrapError> = std::result::Result<T, E>;

/// Quadratic potential of one electrode per applied volt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeBasis {
    pub label: String,
    /// Symmetric, traceless Hessian of the potential, V/m^2 per volt.
    pub curvature: Matrix3<f64>,
    /// Potential gradient at the origin, V/m per volt.
    pub linear_field: Vector3<f64>,
}

impl ElectrodeBasis {
    pub fn new(
        label: impl Into<String>,
        curvature: Matrix3<f64>,
        linear_field: Vector3<f64>,
    ) -> Result<Self> {
        let basis = ElectrodeBasis {
            label: label.into(),
            curvature,
            linear_field,
        };
        basis.validate()?;
        Ok(basis)
    }

    /// Builds a basis from the five independent curvature entries; `zz` is
    /// reconstructed as `-(xx + yy)`.
    pub fn from_entries(
        label: impl Into<String>,
        [xx, yy, xy, xz, yz]: [f64; 5],
        linear_field: Vector3<f64>,
    ) -> Result<Self> {
        let zz = -(xx + yy);
        let k = Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz);
        Self::new(label, k, linear_field)
    }

    /// Diagonal basis `diag(a, b, -(a+b))` with no linear term.
    pub fn diagonal(label: impl Into<String>, xx: f64, yy: f64) -> Self {
        Self::from_entries(label, [xx, yy, 0.0, 0.0, 0.0], Vector3::zeros())
            .expect("diagonal traceless basis is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.curvature;
        if k.iter().chain(self.linear_field.iter()).any(|v| !v.is_finite()) {
            return Err(TrapError::NonFinite {
                label: self.label.clone(),
            });
        }
        let norm = k.amax();
        for i in 0..3 {
            for j in (i + 1)..3 {
                if (k[(i, j)] - k[(j, i)]).abs() > SYMMETRY_TOLERANCE * norm {
                    return Err(TrapError::NotSymmetric {
                        label: self.label.clone(),
                    });
                }
            }
        }
        let trace = k.trace();
        if trace.abs() > LAPLACE_TOLERANCE * norm {
            return Err(TrapError::NotTraceless {
                label: self.label.clone(),
                trace,
                norm,
            });
        }
        Ok(())
    }

    /// Potential per volt at `r`, relative to the origin.
    pub fn potential(&self, r: &Vector3<f64>) -> f64 {
        0.5 * r.dot(&(self.curvature * r)) + self.linear_field.dot(r)
    }

    pub fn scaled(&self, factor: f64) -> ElectrodeBasis {
        ElectrodeBasis {
            label: self.label.clone(),
            curvature: self.curvature * factor,
            linear_field: self.linear_field * factor,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IonSpecies {
    /// kg
    pub mass: f64,
    /// C
    pub charge: f64,
}

impl IonSpecies {
    pub fn new(mass: f64, charge: f64) -> Result<Self> {
        if !(mass.is_finite() && mass > 0.0) {
            return Err(TrapError::InvalidSpecies(format!("mass must be positive, got {mass}")));
        }
        if !charge.is_finite() || charge == 0.0 {
            return Err(TrapError::InvalidSpecies("charge must be non-zero".into()));
        }
        Ok(IonSpecies { mass, charge })
    }

    /// Singly charged ion of the given atomic mass (amu), electron removed.
    pub fn singly_charged(atomic_mass_amu: f64) -> Result<Self> {
        Self::from_amu(atomic_mass_amu, 1)
    }

    /// Ion of a neutral atom of `atomic_mass_amu` stripped of `charge` electrons.
    pub fn from_amu(atomic_mass_amu: f64, charge: i32) -> Result<Self> {
        Self::new(
            amu_to_kg(atomic_mass_amu - f64::from(charge) * ELECTRON_MASS_AMU),
            f64::from(charge) * ELEMENTARY_CHARGE,
        )
    }

    pub fn ytterbium_171() -> Self {
        Self::singly_charged(YB171_ATOMIC_MASS_AMU).expect("valid species")
    }

    pub fn charge_to_mass(&self) -> f64 {
        self.charge / self.mass
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RfDrive {
    /// RF voltage entering the pseudopotential, V.
    pub v_rf: f64,
    /// Drive angular frequency, rad/s.
    pub omega_rf: f64,
}

impl RfDrive {
    pub fn new(v_rf: f64, omega_rf: f64) -> Result<Self> {
        if !(v_rf.is_finite() && v_rf >= 0.0) {
            return Err(TrapError::InvalidDrive(format!("v_rf must be >= 0, got {v_rf}")));
        }
        if !(omega_rf.is_finite() && omega_rf > 0.0) {
            return Err(TrapError::InvalidDrive(format!(
                "omega_rf must be > 0, got {omega_rf}"
            )));
        }
        Ok(RfDrive { v_rf, omega_rf })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DcElectrode {
    pub basis: ElectrodeBasis,
    /// V
    pub voltage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrapConfiguration {
    pub species: IonSpecies,
    pub dc_electrodes: Vec<DcElectrode>,
    pub rf_basis: ElectrodeBasis,
    pub rf_drive: RfDrive,
}

impl TrapConfiguration {
    pub fn new(
        species: IonSpecies,
        dc_electrodes: Vec<DcElectrode>,
        rf_basis: ElectrodeBasis,
        rf_drive: RfDrive,
    ) -> Result<Self> {
        let config = TrapConfiguration {
            species,
            dc_electrodes,
            rf_basis,
            rf_drive,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        IonSpecies::new(self.species.mass, self.species.charge)?;
        RfDrive::new(self.rf_drive.v_rf, self.rf_drive.omega_rf)?;
        if self.dc_electrodes.is_empty() {
            return Err(TrapError::NoDcElectrodes);
        }
        self.rf_basis.validate()?;
        for (i, e) in self.dc_electrodes.iter().enumerate() {
            e.basis.validate()?;
            if !e.voltage.is_finite() {
                return Err(TrapError::NonFinite {
                    label: e.basis.label.clone(),
                });
            }
            if self.dc_electrodes[..i]
                .iter()
                .any(|o| o.basis.label == e.basis.label)
            {
                return Err(TrapError::DuplicateElectrode(e.basis.label.clone()));
            }
        }
        Ok(())
    }

    pub fn electrode(&self, label: &str) -> Result<&DcElectrode> {
        self.dc_electrodes
            .iter()
            .find(|e| e.basis.label == label)
            .ok_or_else(|| TrapError::UnknownElectrode(label.to_string()))
    }

    pub fn voltage(&self, label: &str) -> Result<f64> {
        self.electrode(label).map(|e| e.voltage)
    }

    pub fn set_voltage(&mut self, label: &str, voltage: f64) -> Result<()> {
        let e = self
            .dc_electrodes
            .iter_mut()
            .find(|e| e.basis.label == label)
            .ok_or_else(|| TrapError::UnknownElectrode(label.to_string()))?;
        e.voltage = voltage;
        Ok(())
    }

    pub fn with_voltage(mut self, label: &str, voltage: f64) -> Result<Self> {
        self.set_voltage(label, voltage)?;
        Ok(self)
    }

    pub fn with_voltages<'a, I>(mut self, voltages: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, f64)>,
    {
        for (label, v) in voltages {
            self.set_voltage(label, v)?;
        }
        Ok(self)
    }

    pub fn with_rf_voltage(mut self, v_rf: f64) -> Result<Self> {
        self.rf_drive = RfDrive::new(v_rf, self.rf_drive.omega_rf)?;
        Ok(self)
    }

    /// All DC voltages set to zero.
    pub fn zeroed_dc(mut self) -> Self {
        for e in &mut self.dc_electrodes {
            e.voltage = 0.0;
        }
        self
    }

    /// Pseudopotential prefactor `q^2 V_rf^2 / (2 m^2 omega_rf^2)`, multiplying `K_rf^2`.
    fn pseudo_prefactor(&self) -> f64 {
        let qm = self.species.charge_to_mass();
        let RfDrive { v_rf, omega_rf } = self.rf_drive;
        qm * qm * v_rf * v_rf / (2.0 * omega_rf * omega_rf)
    }
}

/// Sum of `V_E K_E` over DC electrodes, V/m^2.
pub fn total_static_curvature(config: &TrapConfiguration) -> Matrix3<f64> {
    config
        .dc_electrodes
        .iter()
        .fold(Matrix3::zeros(), |acc, e| acc + e.basis.curvature * e.voltage)
}

/// Sum of `V_E g_E` over DC electrodes, V/m.
pub fn total_static_field(config: &TrapConfiguration) -> Vector3<f64> {
    config
        .dc_electrodes
        .iter()
        .fold(Vector3::zeros(), |acc, e| acc + e.basis.linear_field * e.voltage)
}

/// Curvature of the total (static + pseudo) potential energy divided by the
/// ion mass, (rad/s)^2. Its eigenvalues are the secular `omega^2`.
pub fn frequency_matrix(config: &TrapConfiguration) -> Matrix3<f64> {
    let qm = config.species.charge_to_mass();
    let k_rf = &config.rf_basis.curvature;
    total_static_curvature(config) * qm + (k_rf * k_rf) * config.pseudo_prefactor()
}

/// Signed secular `omega^2` per lab-labelled principal axis. Never fails;
/// negative entries mark anti-confining directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecularSpectrum {
    /// (rad/s)^2, indexed by [`Axis::index`].
    pub omega_squared: [f64; 3],
    /// Columns are the principal directions assigned to x, y, z.
    pub principal_axes: Matrix3<f64>,
    /// Mathieu `q` along each principal axis.
    pub mathieu_q: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecularFrequencies {
    /// rad/s
    pub omega_x: f64,
    pub omega_y: f64,
    pub omega_z: f64,
    /// Columns are the principal directions labelled x, y, z (det = +1).
    pub principal_axes: Matrix3<f64>,
    pub mathieu_q: [f64; 3],
}

impl SecularFrequencies {
    pub fn omega(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.omega_x,
            Axis::Y => self.omega_y,
            Axis::Z => self.omega_z,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.omega_x, self.omega_y, self.omega_z]
    }

    /// Axes whose `|q|` exceeds [`MATHIEU_Q_WARNING`].
    pub fn high_q_axes(&self) -> Vec<Axis> {
        Axis::ALL
            .into_iter()
            .filter(|a| self.mathieu_q[a.index()].abs() > MATHIEU_Q_WARNING)
            .collect()
    }
}

pub fn secular_spectrum(config: &TrapConfiguration) -> SecularSpectrum {
    let m = frequency_matrix(config);
    let (omega_squared, axes) = labelled_eigen(&m);
    let k_rf_principal = axes.transpose() * config.rf_basis.curvature * axes;
    let RfDrive { v_rf, omega_rf } = config.rf_drive;
    let q_scale = 2.0 * config.species.charge_to_mass() * v_rf / (omega_rf * omega_rf);
    let mathieu_q = [0, 1, 2].map(|i| q_scale * k_rf_principal[(i, i)]);
    SecularSpectrum {
        omega_squared,
        principal_axes: axes,
        mathieu_q,
    }
}

pub fn secular_frequencies(config: &TrapConfiguration) -> Result<SecularFrequencies> {
    let spec = secular_spectrum(config);
    let scale = spec.omega_squared.iter().fold(0.0_f64, |a, w| a.max(w.abs()));
    let mut omega = [0.0; 3];
    for axis in Axis::ALL {
        let w2 = spec.omega_squared[axis.index()];
        if w2 < -1e-12 * scale {
            return Err(TrapError::UnstableAxis { axis, radicand: w2 });
        }
        omega[axis.index()] = w2.max(0.0).sqrt();
    }
    let freqs = SecularFrequencies {
        omega_x: omega[0],
        omega_y: omega[1],
        omega_z: omega[2],
        principal_axes: spec.principal_axes,
        mathieu_q: spec.mathieu_q,
    };
    for axis in freqs.high_q_axes() {
        log::warn!(
            "Mathieu q = {:.3} along {axis}: lowest-order secular frequency is unreliable",
            freqs.mathieu_q[axis.index()]
        );
    }
    Ok(freqs)
}

/// Eigen-decomposes a symmetric 3x3 matrix and assigns each eigenvector to
/// the lab axis it overlaps most. Degenerate subspaces are resolved towards
/// the lab axes; a matrix without off-diagonal terms yields the identity.
pub(crate) fn labelled_eigen(m: &Matrix3<f64>) -> ([f64; 3], Matrix3<f64>) {
    let scale = m.amax();
    let off = [m[(0, 1)], m[(0, 2)], m[(1, 2)]]
        .iter()
        .fold(0.0_f64, |a, v| a.max(v.abs()));
    if scale == 0.0 || off <= 1e-15 * scale {
        return ([m[(0, 0)], m[(1, 1)], m[(2, 2)]], Matrix3::identity());
    }

    let eig = SymmetricEigen::new(*m);
    let vals = eig.eigenvalues;
    let vecs = eig.eigenvectors;
    let gap_tol = 1e-10 * scale;
    let close = |i: usize, j: usize| (vals[i] - vals[j]).abs() <= gap_tol;

    let mut axes = Matrix3::zeros();
    let mut values = [0.0; 3];
    if close(0, 1) && close(1, 2) {
        return ([vals[0], vals[1], vals[2]].map(|_| vals.mean()), Matrix3::identity());
    }
    let lone = (0..3).find(|&i| {
        let others: Vec<usize> = (0..3).filter(|&j| j != i).collect();
        close(others[0], others[1]) && !close(i, others[0])
    });

    if let Some(i) = lone {
        // One distinct direction; rebuild the degenerate plane from lab axes.
        let u: Vector3<f64> = vecs.column(i).into();
        let a = (0..3)
            .max_by(|&p, &q| u[p].abs().total_cmp(&u[q].abs()))
            .unwrap();
        let pair: Vec<usize> = (0..3).filter(|&j| j != i).collect();
        let degenerate_value = 0.5 * (vals[pair[0]] + vals[pair[1]]);
        let rest: Vec<usize> = (0..3).filter(|&b| b != a).collect();
        let mut e_b = Vector3::zeros();
        e_b[rest[0]] = 1.0;
        let w_b = (e_b - u * u.dot(&e_b)).normalize();
        let w_c = u.cross(&w_b);
        axes.set_column(a, &u);
        axes.set_column(rest[0], &w_b);
        axes.set_column(rest[1], &w_c);
        values[a] = vals[i];
        values[rest[0]] = degenerate_value;
        values[rest[1]] = degenerate_value;
    } else {
        const PERMS: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        // perm[axis] = eigen index
        let score = |p: &[usize; 3]| -> f64 { (0..3).map(|a| vecs[(a, p[a])].powi(2)).sum() };
        let best = PERMS
            .iter()
            .max_by(|p, q| score(p).total_cmp(&score(q)))
            .unwrap();
        for a in 0..3 {
            axes.set_column(a, &vecs.column(best[a]));
            values[a] = vals[best[a]];
        }
    }

    for a in 0..3 {
        if axes[(a, a)] < 0.0 {
            let flipped = -axes.column(a);
            axes.set_column(a, &flipped);
        }
    }
    if axes.determinant() < 0.0 {
        let weakest = (0..3)
            .min_by(|&p, &q| axes[(p, p)].total_cmp(&axes[(q, q)]))
            .unwrap();
        let flipped = -axes.column(weakest);
        axes.set_column(weakest, &flipped);
    }
    (values, axes)
}
