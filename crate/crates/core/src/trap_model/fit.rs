use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::{ElectrodeBasis, Result, TrapError};

pub const MIN_FIT_SAMPLES: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticFit {
    pub basis: ElectrodeBasis,
    /// Fitted potential at the origin, V per volt.
    pub offset: f64,
    /// Root-mean-square residual of the fit, V per volt.
    pub rms_residual: f64,
}

/// Least-squares fit of a traceless quadratic form to sampled potentials.
///
/// The Laplace constraint is built into the parameterisation:
/// `1/2 kxx (x^2 - z^2) + 1/2 kyy (y^2 - z^2) + kxy xy + kxz xz + kyz yz + g.r + c`.
pub fn fit_quadratic_basis(label: &str, samples: &[(Vector3<f64>, f64)]) -> Result<QuadraticFit> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(TrapError::InsufficientSamples {
            got: samples.len(),
            need: MIN_FIT_SAMPLES,
        });
    }
    // Work in coordinates scaled to O(1) for conditioning.
    let length = (samples.iter().map(|(r, _)| r.norm_squared()).sum::<f64>()
        / samples.len() as f64)
        .sqrt();
    let length = if length > 0.0 { length } else { 1.0 };

    let n = samples.len();
    let mut design = DMatrix::zeros(n, 9);
    let mut rhs = DVector::zeros(n);
    for (row, (r, phi)) in samples.iter().enumerate() {
        let (x, y, z) = (r.x / length, r.y / length, r.z / length);
        let cols = [
            0.5 * (x * x - z * z),
            0.5 * (y * y - z * z),
            x * y,
            x * z,
            y * z,
            x,
            y,
            z,
            1.0,
        ];
        for (c, v) in cols.into_iter().enumerate() {
            design[(row, c)] = v;
        }
        rhs[row] = *phi;
    }

    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smax > 0.0 { smin / smax } else { 0.0 };
    if condition < 1e-10 {
        return Err(TrapError::RankDeficient { condition });
    }
    let coef = svd
        .solve(&rhs, 0.0)
        .map_err(|_| TrapError::RankDeficient { condition })?;

    let l2 = length * length;
    let (kxx, kyy) = (coef[0] / l2, coef[1] / l2);
    let (kxy, kxz, kyz) = (coef[2] / l2, coef[3] / l2, coef[4] / l2);
    let kzz = -(kxx + kyy);
    let curvature = Matrix3::new(kxx, kxy, kxz, kxy, kyy, kyz, kxz, kyz, kzz);
    let linear_field = Vector3::new(coef[5], coef[6], coef[7]) / length;

    let residual = &design * &coef - &rhs;
    let rms_residual = (residual.norm_squared() / n as f64).sqrt();
    let basis = ElectrodeBasis::new(label, curvature, linear_field)?;
    Ok(QuadraticFit {
        basis,
        offset: coef[8],
        rms_residual,
    })
}
