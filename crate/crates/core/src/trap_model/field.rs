use nalgebra::{Matrix3, Vector3};

use super::{frequency_matrix, total_static_field, Result, TrapConfiguration, TrapError};

/// Amplitude of the field oscillating at the drive frequency, V/m:
/// `V_rf (K_rf r + g_rf)`. Only meaningful inside the harmonic region.
pub fn rf_field_at(config: &TrapConfiguration, position: &Vector3<f64>) -> Vector3<f64> {
    let rf = &config.rf_basis;
    (rf.curvature * position + rf.linear_field) * config.rf_drive.v_rf
}

/// Minimum-norm point where the RF field vanishes, if one exists. A purely
/// radial quadrupole has a null line along x; the point on it nearest the
/// origin is returned.
pub fn rf_null(config: &TrapConfiguration) -> Option<Vector3<f64>> {
    let rf = &config.rf_basis;
    let r = pseudo_solve(&rf.curvature, &(-rf.linear_field))?;
    let residual = (rf.curvature * r + rf.linear_field).norm();
    let scale = rf.linear_field.norm().max(rf.curvature.amax() * r.norm());
    (residual <= 1e-9 * scale.max(f64::MIN_POSITIVE)).then_some(r)
}

/// Equilibrium of a single ion in the combined static and pseudopotential.
pub fn trap_center(config: &TrapConfiguration) -> Result<Vector3<f64>> {
    let m = frequency_matrix(config);
    let qm = config.species.charge_to_mass();
    let rf = &config.rf_basis;
    let force = total_static_field(config) * qm
        + rf.curvature * rf.linear_field * config.pseudo_prefactor();
    if force.amax() == 0.0 {
        return Ok(Vector3::zeros());
    }
    m.lu().solve(&(-force)).ok_or(TrapError::Degenerate)
}

fn pseudo_solve(a: &Matrix3<f64>, b: &Vector3<f64>) -> Option<Vector3<f64>> {
    let svd = a.svd(true, true);
    let tol = 1e-12 * svd.singular_values.max();
    svd.solve(b, tol.max(f64::MIN_POSITIVE)).ok()
}
