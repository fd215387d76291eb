//! Imperfection coefficients: linear maps from simulated to measured
//! secular `omega^2` while one electrode group is swept.
//!
//! For a sweep of a group voltage `V`, both `omega_sim^2` and
//! `omega_real^2` are affine in `V`, so `omega_real^2 = eta omega_sim^2 + b`
//! with `eta = a_real / a_sim`, the ratio of the slopes.

use std::collections::BTreeMap;

use nalgebra::Matrix3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::axis::Axis;
use crate::trap_model::{
    axis_rotation_angle, secular_spectrum, ElectrodeBasis, TrapConfiguration, TrapError,
};

/// Voltages closer than this (V) count as equal.
pub const VOLTAGE_TOLERANCE: f64 = 1e-6;
/// Default limit on the principal-axis tilt for radial fits, degrees.
pub const DEFAULT_MAX_ROTATION_DEG: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },
    #[error("swept voltage takes fewer than two distinct values")]
    InsufficientVariation,
    #[error("records mix conditions: {0}")]
    MixedConditions(String),
    #[error("principal axes rotated by {angle_deg:.3} deg (limit {limit_deg} deg)")]
    RotationDrift { angle_deg: f64, limit_deg: f64 },
    #[error("eta must be positive and finite, got {0}")]
    InvalidEta(f64),
    #[error(transparent)]
    Trap(#[from] TrapError),
}

pub type Result<T, E = CalibrationError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    /// Electrode label to volts; electrodes not listed keep the template value.
    pub voltages: BTreeMap<String, f64>,
    /// rad/s
    pub measured_frequency: f64,
    pub axis: Axis,
    /// One-sigma uncertainty of the measured frequency, rad/s.
    pub sigma: Option<f64>,
}

impl CalibrationRecord {
    pub fn new(voltages: BTreeMap<String, f64>, measured_frequency: f64, axis: Axis) -> Self {
        CalibrationRecord {
            voltages,
            measured_frequency,
            axis,
            sigma: None,
        }
    }

    fn validate(&self, index: usize) -> Result<()> {
        let bad = |reason: &str| CalibrationError::InvalidRecord {
            index,
            reason: reason.to_string(),
        };
        if !(self.measured_frequency.is_finite() && self.measured_frequency > 0.0) {
            return Err(bad("measured frequency must be positive"));
        }
        if let Some(s) = self.sigma {
            if !(s.is_finite() && s > 0.0) {
                return Err(bad("sigma must be positive"));
            }
        }
        if self.voltages.values().any(|v| !v.is_finite()) {
            return Err(bad("non-finite voltage"));
        }
        Ok(())
    }

    /// The template with this record's voltages applied.
    pub fn configuration(&self, template: &TrapConfiguration) -> Result<TrapConfiguration> {
        Ok(template
            .clone()
            .with_voltages(self.voltages.iter().map(|(k, v)| (k.as_str(), *v)))?)
    }
}

/// Secular frequency along `record.axis` predicted by the uncorrected model.
/// Only that axis needs to be confining.
pub fn simulate_counterpart(record: &CalibrationRecord, template: &TrapConfiguration) -> Result<f64> {
    let config = record.configuration(template)?;
    let w2 = secular_spectrum(&config).omega_squared[record.axis.index()];
    if !(w2 > 0.0) {
        return Err(TrapError::UnstableAxis {
            axis: record.axis,
            radicand: w2,
        }
        .into());
    }
    Ok(w2.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFit {
    pub axis: Axis,
    /// Electrodes whose voltage was swept.
    pub swept: Vec<String>,
    pub eta: f64,
    /// (rad/s)^2
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
    /// Standard error of `eta` from the residual scatter (zero for a perfect fit).
    pub eta_std_error: f64,
    /// Simulated `omega^2` per record, (rad/s)^2.
    pub simulated_omega_sq: Vec<f64>,
    /// Measured minus fitted `omega^2` per record, (rad/s)^2.
    pub residuals: Vec<f64>,
    pub weighted: bool,
}

fn voltage_of(record: &CalibrationRecord, template: &TrapConfiguration, label: &str) -> Result<f64> {
    match record.voltages.get(label) {
        Some(v) => Ok(*v),
        None => Ok(template.voltage(label)?),
    }
}

/// Electrodes whose voltage changes across the records, after checking that
/// they move in lockstep.
fn swept_electrodes(records: &[CalibrationRecord], template: &TrapConfiguration) -> Result<Vec<String>> {
    for r in records {
        for label in r.voltages.keys() {
            template.electrode(label)?;
        }
    }
    let mut swept = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for e in &template.dc_electrodes {
        let label = &e.basis.label;
        let col = records
            .iter()
            .map(|r| voltage_of(r, template, label))
            .collect::<Result<Vec<f64>>>()?;
        let (lo, hi) = col
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        if hi - lo > VOLTAGE_TOLERANCE {
            swept.push(label.clone());
            columns.push(col);
        }
    }
    if swept.is_empty() {
        return Err(CalibrationError::InsufficientVariation);
    }
    for (label, col) in swept.iter().zip(&columns).skip(1) {
        if col
            .iter()
            .zip(&columns[0])
            .any(|(a, b)| (a - b).abs() > VOLTAGE_TOLERANCE)
        {
            return Err(CalibrationError::MixedConditions(format!(
                "electrodes '{}' and '{label}' are both varied but not together",
                swept[0]
            )));
        }
    }
    Ok(swept)
}

/// Least-squares fit of measured `omega^2` against simulated `omega^2`.
///
/// When every record carries a `sigma`, points are weighted by
/// `1 / (2 omega sigma)^2`; otherwise the fit is unweighted.
pub fn fit_eta(records: &[CalibrationRecord], template: &TrapConfiguration) -> Result<CalibrationFit> {
    for (i, r) in records.iter().enumerate() {
        r.validate(i)?;
    }
    if records.len() < 2 {
        return Err(CalibrationError::InsufficientVariation);
    }
    let axis = records[0].axis;
    if records.iter().any(|r| r.axis != axis) {
        return Err(CalibrationError::MixedConditions(
            "records refer to different axes".into(),
        ));
    }
    let swept = swept_electrodes(records, template)?;

    let x = records
        .iter()
        .map(|r| simulate_counterpart(r, template).map(|w| w * w))
        .collect::<Result<Vec<f64>>>()?;
    let y: Vec<f64> = records.iter().map(|r| r.measured_frequency.powi(2)).collect();
    let weighted = records.iter().all(|r| r.sigma.is_some());
    let w: Vec<f64> = records
        .iter()
        .map(|r| match (weighted, r.sigma) {
            (true, Some(s)) => 1.0 / (2.0 * r.measured_frequency * s).powi(2),
            _ => 1.0,
        })
        .collect();

    let sw: f64 = w.iter().sum();
    let xm = w.iter().zip(&x).map(|(w, x)| w * x).sum::<f64>() / sw;
    let ym = w.iter().zip(&y).map(|(w, y)| w * y).sum::<f64>() / sw;
    let sxx: f64 = w.iter().zip(&x).map(|(w, x)| w * (x - xm).powi(2)).sum();
    let sxy: f64 = (0..x.len()).map(|i| w[i] * (x[i] - xm) * (y[i] - ym)).sum();
    let syy: f64 = w.iter().zip(&y).map(|(w, y)| w * (y - ym).powi(2)).sum();
    // The simulated frequency may not depend on the swept electrodes at all.
    let xscale = x.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if sxx <= (1e-12 * xscale).powi(2) * sw {
        return Err(CalibrationError::InsufficientVariation);
    }
    let eta = sxy / sxx;
    let intercept = ym - eta * xm;
    let residuals: Vec<f64> = (0..x.len()).map(|i| y[i] - (eta * x[i] + intercept)).collect();
    let ss_res: f64 = (0..x.len()).map(|i| w[i] * residuals[i].powi(2)).sum();
    let r_squared = if syy > 0.0 {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let n = x.len();
    let eta_std_error = if n > 2 {
        (ss_res / (n - 2) as f64 / sxx).sqrt()
    } else {
        0.0
    };
    Ok(CalibrationFit {
        axis,
        swept,
        eta,
        intercept,
        r_squared,
        n_points: n,
        eta_std_error,
        simulated_omega_sq: x,
        residuals,
        weighted,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialEta {
    pub y: CalibrationFit,
    pub z: CalibrationFit,
    /// Arithmetic mean of the y and z slopes.
    pub eta_avg: f64,
}

/// Fits y and z datasets separately and averages the slopes.
///
/// Every record's configuration must keep the principal axes within
/// `max_rotation_deg` of y and z.
pub fn radial_eta_pair(
    records_y: &[CalibrationRecord],
    records_z: &[CalibrationRecord],
    template: &TrapConfiguration,
    max_rotation_deg: f64,
) -> Result<RadialEta> {
    for r in records_y.iter().chain(records_z) {
        let angle = match axis_rotation_angle(&r.configuration(template)?) {
            Ok(a) => a,
            Err(TrapError::Degenerate) => 0.0,
            Err(e) => return Err(e.into()),
        };
        if angle.abs() > max_rotation_deg {
            return Err(CalibrationError::RotationDrift {
                angle_deg: angle,
                limit_deg: max_rotation_deg,
            });
        }
    }
    let y = fit_eta(records_y, template)?;
    let z = fit_eta(records_z, template)?;
    if y.axis != Axis::Y || z.axis != Axis::Z {
        return Err(CalibrationError::MixedConditions(
            "radial datasets must be along y and z".into(),
        ));
    }
    let eta_avg = 0.5 * (y.eta + z.eta);
    Ok(RadialEta { y, z, eta_avg })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectedBasis {
    pub basis: ElectrodeBasis,
    /// Trace removed from the y-z diagonal to restore Laplace, V/m^2 per volt.
    /// Each of `yy` and `zz` was shifted by minus half this amount.
    pub trace_shift: f64,
}

/// Scales the axial (`xx`) curvature by `eta_axial` and the y-z block by
/// `eta_radial`, then restores zero trace by spreading the excess equally
/// over `yy` and `zz`. The `xx` entry and the x-y, x-z couplings are left as
/// scaled, so the axial response scales by exactly `eta_axial`.
pub fn apply_correction(basis: &ElectrodeBasis, eta_axial: f64, eta_radial: f64) -> Result<CorrectedBasis> {
    for eta in [eta_axial, eta_radial] {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(CalibrationError::InvalidEta(eta));
        }
    }
    let k = basis.curvature;
    let mut c = Matrix3::zeros();
    c[(0, 0)] = eta_axial * k[(0, 0)];
    c[(0, 1)] = k[(0, 1)];
    c[(0, 2)] = k[(0, 2)];
    c[(1, 0)] = k[(1, 0)];
    c[(2, 0)] = k[(2, 0)];
    for i in 1..3 {
        for j in 1..3 {
            c[(i, j)] = eta_radial * k[(i, j)];
        }
    }
    let trace_shift = c.trace();
    c[(1, 1)] -= 0.5 * trace_shift;
    c[(2, 2)] -= 0.5 * trace_shift;
    let corrected = ElectrodeBasis::new(basis.label.clone(), c, basis.linear_field)?;
    Ok(CorrectedBasis {
        basis: corrected,
        trace_shift,
    })
}

/// Applies [`apply_correction`] to the named electrodes of a configuration.
pub fn correct_configuration(
    config: &TrapConfiguration,
    electrodes: &[&str],
    eta_axial: f64,
    eta_radial: f64,
) -> Result<TrapConfiguration> {
    let mut out = config.clone();
    for label in electrodes {
        config.electrode(label)?;
        let e = out
            .dc_electrodes
            .iter_mut()
            .find(|e| e.basis.label == *label)
            .expect("checked above");
        e.basis = apply_correction(&e.basis, eta_axial, eta_radial)?.basis;
    }
    Ok(out)
}

/// Synthetic measurement series: the group `electrodes` is set to each of
/// `voltages` and the "measured" frequency follows
/// `omega^2 = eta omega_sim^2 + offset`, then gets multiplicative Gaussian
/// noise of relative size `relative_noise`.
#[allow(clippy::too_many_arguments)]
pub fn synthetic_records(
    template: &TrapConfiguration,
    electrodes: &[&str],
    voltages: &[f64],
    axis: Axis,
    eta: f64,
    offset: f64,
    relative_noise: f64,
    seed: u64,
) -> Result<Vec<CalibrationRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    voltages
        .iter()
        .map(|&v| {
            let map: BTreeMap<String, f64> =
                electrodes.iter().map(|e| (e.to_string(), v)).collect();
            let mut rec = CalibrationRecord::new(map, 1.0, axis);
            let sim = simulate_counterpart(&rec, template)?;
            let w2 = eta * sim * sim + offset;
            if !(w2 > 0.0) {
                return Err(CalibrationError::InvalidRecord {
                    index: 0,
                    reason: format!("synthetic omega^2 = {w2:e} is not positive"),
                });
            }
            let noise: f64 = StandardNormal.sample(&mut rng);
            rec.measured_frequency = w2.sqrt() * (1.0 + relative_noise * noise);
            if relative_noise > 0.0 {
                rec.sigma = Some(relative_noise * w2.sqrt());
            }
            Ok(rec)
        })
        .collect()
}
