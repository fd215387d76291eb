//! Quasi-Newton (BFGS) minimisation with a backtracking line search, a
//! gradient-descent fallback when the line search fails, and a final Newton
//! polish using the analytic Hessian.

use nalgebra::{DMatrix, DVector};

pub(crate) trait Objective {
    fn dim(&self) -> usize;
    /// Value at `x`, gradient written into `grad`.
    fn value_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64;
    fn hessian(&self, x: &[f64]) -> DMatrix<f64>;
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct MinimizeOptions {
    /// Converged when the max-norm of the gradient falls below this.
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
    /// Largest coordinate change per step.
    pub max_step: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct MinimizeOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Value after every accepted step, starting with the initial point.
    pub trace: Vec<f64>,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 50;
const NEWTON_STEPS: usize = 8;

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

/// Accept a trial point: strictly lower value, or a value equal within
/// roundoff with a smaller gradient.
fn acceptable(f_old: f64, f_new: f64, g_old: f64, g_new: f64) -> bool {
    if !f_new.is_finite() {
        return false;
    }
    f_new < f_old || (f_new <= f_old + 4.0 * f64::EPSILON * f_old.abs() && g_new < g_old)
}

pub(crate) fn minimize(obj: &impl Objective, x0: Vec<f64>, opts: &MinimizeOptions) -> MinimizeOutcome {
    let n = obj.dim();
    let mut x = DVector::from_vec(x0);
    let mut g = DVector::zeros(n);
    let mut f = obj.value_gradient(x.as_slice(), g.as_mut_slice());
    let mut trace = vec![f];
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut fresh_h = true;
    let mut iterations = 0;

    let mut x_new = DVector::zeros(n);
    let mut g_new = DVector::zeros(n);

    while iterations < opts.max_iterations && max_norm(g.as_slice()) >= opts.gradient_tolerance {
        iterations += 1;
        let mut d = -(&h_inv * &g);
        if d.dot(&g) >= 0.0 {
            h_inv.fill_with_identity();
            fresh_h = true;
            d = -g.clone();
        }
        let mut accepted = line_search(obj, &x, f, &g, &d, opts, &mut x_new, &mut g_new);
        if accepted.is_none() && !fresh_h {
            // Fall back to steepest descent.
            h_inv.fill_with_identity();
            fresh_h = true;
            d = -g.clone();
            accepted = line_search(obj, &x, f, &g, &d, opts, &mut x_new, &mut g_new);
        }
        let Some(f_new) = accepted else { break };

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh_h {
                h_inv *= sy / y.dot(&y);
                fresh_h = false;
            }
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            // H+ = H - rho (s hy^T + hy s^T) + (rho^2 yHy + rho) s s^T
            h_inv.ger(-rho, &s, &hy, 1.0);
            h_inv.ger(-rho, &hy, &s, 1.0);
            h_inv.ger(rho * rho * yhy + rho, &s, &s, 1.0);
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;
        trace.push(f);
    }

    // Newton polish: quadratic convergence from wherever BFGS stopped.
    for _ in 0..NEWTON_STEPS {
        let g_norm = max_norm(g.as_slice());
        if g_norm < 1e-3 * opts.gradient_tolerance {
            break;
        }
        let hess = obj.hessian(x.as_slice());
        let Some(chol) = hess.cholesky() else { break };
        let mut step = -chol.solve(&g);
        let longest = max_norm(step.as_slice());
        if longest > opts.max_step {
            step *= opts.max_step / longest;
        }
        x_new.copy_from(&(&x + &step));
        let f_new = obj.value_gradient(x_new.as_slice(), g_new.as_mut_slice());
        if !acceptable(f, f_new, g_norm, max_norm(g_new.as_slice())) {
            break;
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;
        trace.push(f);
        iterations += 1;
    }

    let gradient_norm = max_norm(g.as_slice());
    MinimizeOutcome {
        x: x.as_slice().to_vec(),
        value: f,
        converged: gradient_norm < opts.gradient_tolerance,
        iterations,
        trace,
    }
}

#[allow(clippy::too_many_arguments)]
fn line_search(
    obj: &impl Objective,
    x: &DVector<f64>,
    f: f64,
    g: &DVector<f64>,
    d: &DVector<f64>,
    opts: &MinimizeOptions,
    x_new: &mut DVector<f64>,
    g_new: &mut DVector<f64>,
) -> Option<f64> {
    let slope = g.dot(d);
    let longest = max_norm(d.as_slice());
    let mut alpha = if longest > opts.max_step {
        opts.max_step / longest
    } else {
        1.0
    };
    let g_norm = max_norm(g.as_slice());
    for _ in 0..MAX_BACKTRACKS {
        x_new.copy_from(x);
        x_new.axpy(alpha, d, 1.0);
        let f_new = obj.value_gradient(x_new.as_slice(), g_new.as_mut_slice());
        let sufficient = f_new <= f + ARMIJO * alpha * slope;
        if f_new.is_finite()
            && (sufficient || acceptable(f, f_new, g_norm, max_norm(g_new.as_slice())))
        {
            return Some(f_new);
        }
        alpha *= 0.5;
    }
    None
}
