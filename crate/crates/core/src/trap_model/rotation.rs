//! Principal-axis orientation in the y-z plane and the radial frequency split.

use serde::{Deserialize, Serialize};

use super::{
    frequency_matrix, secular_spectrum, total_static_curvature, Result, TrapConfiguration,
    TrapError,
};
use crate::axis::Axis;

/// Relative size of the y-z entry of the frequency matrix below which the
/// principal axes count as aligned with y and z.
pub const ALIGNMENT_TOLERANCE: f64 = 1e-8;

/// Planar-crystal criterion coefficient: `omega_y > (2.264 N)^(1/4) omega_{x,z}`.
const PLANAR_CRITERION: f64 = 2.264;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyDifference {
    /// `omega_y^2 - omega_z^2`, (rad/s)^2.
    pub difference: f64,
    /// `C` with `difference = C V_NC`, (rad/s)^2 / V. `None` when `V_NC = 0`.
    pub coefficient: Option<f64>,
    /// Voltage on the NC electrode set, V.
    pub v_nc: f64,
}

/// Radial frequency split and the geometry constant `C` relating it to the
/// NC voltage. Requires the principal axes to lie along y and z.
pub fn frequency_difference(
    config: &TrapConfiguration,
    nc_electrodes: &[&str],
) -> Result<FrequencyDifference> {
    let first = nc_electrodes.first().ok_or(TrapError::EmptyElectrodeSet)?;
    let v_nc = config.voltage(first)?;
    for label in nc_electrodes {
        config.electrode(label)?;
    }
    let m = frequency_matrix(config);
    let tolerance = ALIGNMENT_TOLERANCE * m.amax();
    if m[(1, 2)].abs() > tolerance {
        return Err(TrapError::AxesNotAligned {
            cross: m[(1, 2)],
            tolerance,
        });
    }
    let spec = secular_spectrum(config);
    let difference = spec.omega_squared[Axis::Y.index()] - spec.omega_squared[Axis::Z.index()];
    let qm = config.species.charge_to_mass();
    let coefficient = (v_nc != 0.0).then(|| {
        qm * config
            .dc_electrodes
            .iter()
            .map(|e| (e.basis.curvature[(1, 1)] - e.basis.curvature[(2, 2)]) * e.voltage / v_nc)
            .sum::<f64>()
    });
    Ok(FrequencyDifference {
        difference,
        coefficient,
        v_nc,
    })
}

fn set_cross_term(config: &TrapConfiguration, set: &[&str]) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Err(TrapError::EmptyElectrodeSet);
    }
    let mut cross = 0.0;
    let mut scale = 0.0_f64;
    for label in set {
        let k = &config.electrode(label)?.basis.curvature;
        cross += k[(1, 2)];
        scale = scale.max(k.amax());
    }
    Ok((cross, scale))
}

/// `V_NC / V_C` that cancels the y-z cross term of the static curvature when
/// every electrode of a set carries the set's voltage.
pub fn solve_rotation_ratio(
    config: &TrapConfiguration,
    c_electrodes: &[&str],
    nc_electrodes: &[&str],
) -> Result<f64> {
    let (c_c, scale_c) = set_cross_term(config, c_electrodes)?;
    let (c_nc, scale_nc) = set_cross_term(config, nc_electrodes)?;
    let zero = 1e-14 * scale_c.max(scale_nc);
    match (c_c.abs() <= zero, c_nc.abs() <= zero) {
        (true, true) => Err(TrapError::Indeterminate),
        (false, true) => Err(TrapError::NoSolution { c_cross: c_c }),
        _ => Ok(-c_c / c_nc),
    }
}

/// Sets `V_C = v_c` on the C set and `V_NC = ratio * v_c` on the NC set.
pub fn apply_rotation_ratio(
    config: &TrapConfiguration,
    c_electrodes: &[&str],
    nc_electrodes: &[&str],
    v_c: f64,
) -> Result<TrapConfiguration> {
    let ratio = solve_rotation_ratio(config, c_electrodes, nc_electrodes)?;
    let mut out = config.clone();
    for label in c_electrodes {
        out.set_voltage(label, v_c)?;
    }
    for label in nc_electrodes {
        out.set_voltage(label, ratio * v_c)?;
    }
    Ok(out)
}

/// Tilt of the principal axis nearest to z, in degrees within (-45, 45].
///
/// Positive angles are clockwise when looking along +x, i.e. a right-handed
/// rotation about +x that carries z towards -y. The y-z block of the full
/// frequency matrix (static plus pseudopotential) is used; with an RF basis
/// whose y-z block is a multiple of the identity this equals the static-only
/// result.
pub fn axis_rotation_angle(config: &TrapConfiguration) -> Result<f64> {
    let m = frequency_matrix(config);
    let (a, b, c) = (m[(1, 1)], m[(2, 2)], m[(1, 2)]);
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 || (c.abs() <= 1e-12 * scale && (a - b).abs() <= 1e-12 * scale) {
        return Err(TrapError::Degenerate);
    }
    // Eigenvector of the larger eigenvalue sits at theta0 from y towards z.
    let theta0 = 0.5 * (2.0 * c).atan2(a - b);
    let big = (theta0.cos(), theta0.sin());
    let small = (-theta0.sin(), theta0.cos());
    let (mut vy, mut vz) = if small.1.abs() >= big.1.abs() { small } else { big };
    if vz < 0.0 {
        vy = -vy;
        vz = -vz;
    }
    Ok((-vy).atan2(vz).to_degrees())
}

/// Upper bound on the in-plane frequencies for a planar `n_ions` crystal:
/// `omega_y / (2.264 N)^(1/4)`.
pub fn stability_bound(n_ions: usize, omega_y: f64) -> f64 {
    assert!(n_ions >= 1, "stability_bound needs at least one ion");
    omega_y / (PLANAR_CRITERION * n_ions as f64).powf(0.25)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanarVerdict {
    /// Both in-plane frequencies below the bound: planar in x-z.
    Planar,
    /// Both above: three-dimensional.
    NotPlanar,
    /// One above, one below. The bound alone cannot decide.
    Indeterminate,
}

pub fn planar_verdict(n_ions: usize, omega_x: f64, omega_y: f64, omega_z: f64) -> PlanarVerdict {
    let bound = stability_bound(n_ions, omega_y);
    match (omega_x < bound, omega_z < bound) {
        (true, true) => PlanarVerdict::Planar,
        (false, false) => PlanarVerdict::NotPlanar,
        _ => PlanarVerdict::Indeterminate,
    }
}

/// Largest y-z entry of the static curvature relative to its largest entry.
pub fn residual_cross_term(config: &TrapConfiguration) -> f64 {
    let k = total_static_curvature(config);
    let s = k.amax();
    if s == 0.0 {
        0.0
    } else {
        k[(1, 2)].abs() / s
    }
}
