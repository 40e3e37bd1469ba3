//! Dense Levenberg-Marquardt with forward-difference Jacobians, shared by the
//! calibration refinement and the pose solvers.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::par;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmError {
    #[error("normal equations singular even at maximum damping")]
    SingularNormalEquations,
    #[error("non-finite cost")]
    NonFiniteCost,
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub initial_lambda: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub max_lambda: f64,
    pub rel_cost_tol: f64,
    pub step_tol: f64,
    pub jac_rel_step: f64,
    pub jac_abs_step: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            initial_lambda: 1e-3,
            lambda_up: 10.0,
            lambda_down: 0.1,
            max_lambda: 1e10,
            rel_cost_tol: 1e-12,
            step_tol: 1e-12,
            jac_rel_step: 1e-6,
            jac_abs_step: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    CostConverged,
    StepConverged,
    MaxIterations,
    DampingExhausted,
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub params: DVector<f64>,
    pub initial_cost: f64,
    pub cost: f64,
    pub iterations: usize,
    /// Cost after each accepted step, starting with the initial cost.
    pub accepted_costs: Vec<f64>,
    pub termination: Termination,
    pub residual_count: usize,
}

impl LmReport {
    /// Root mean squared residual.
    pub fn rms(&self) -> f64 {
        (2.0 * self.cost / self.residual_count.max(1) as f64).sqrt()
    }

    pub fn initial_rms(&self) -> f64 {
        (2.0 * self.initial_cost / self.residual_count.max(1) as f64).sqrt()
    }
}

/// A least-squares problem: `residuals(x)` fills a fixed-length vector.
pub trait Problem: Sync {
    fn residual_count(&self) -> usize;
    fn residuals(&self, params: &[f64], out: &mut [f64]) -> bool;
}

fn evaluate<P: Problem>(p: &P, x: &[f64], r: &mut DVector<f64>) -> Result<f64, LmError> {
    if !p.residuals(x, r.as_mut_slice()) {
        return Err(LmError::NonFiniteCost);
    }
    let cost = 0.5 * r.norm_squared();
    if cost.is_finite() {
        Ok(cost)
    } else {
        Err(LmError::NonFiniteCost)
    }
}

/// Forward-difference Jacobian with step `max(rel·|x|, abs)`.
pub fn numeric_jacobian<P: Problem>(
    p: &P,
    x: &[f64],
    r0: &DVector<f64>,
    opts: &LmOptions,
) -> Result<DMatrix<f64>, LmError> {
    let m = p.residual_count();
    let cols = par::map_indices(x.len(), |j| {
        let mut xp = x.to_vec();
        let h = (opts.jac_rel_step * x[j].abs()).max(opts.jac_abs_step);
        xp[j] += h;
        let mut rp = DVector::zeros(m);
        if !p.residuals(&xp, rp.as_mut_slice()) {
            return None;
        }
        Some((rp - r0) / h)
    });
    let mut jac = DMatrix::zeros(m, x.len());
    for (j, col) in cols.into_iter().enumerate() {
        let col = col.ok_or(LmError::NonFiniteCost)?;
        jac.set_column(j, &col);
    }
    Ok(jac)
}

pub fn levenberg_marquardt<P: Problem>(problem: &P, x0: &[f64], opts: &LmOptions) -> Result<LmReport, LmError> {
    let m = problem.residual_count();
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let mut r = DVector::zeros(m);
    let initial_cost = evaluate(problem, x.as_slice(), &mut r)?;
    let mut cost = initial_cost;
    let mut lambda = opts.initial_lambda;
    let mut accepted = vec![cost];
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;
    let mut trial_r = DVector::zeros(m);

    'outer: while iterations < opts.max_iterations {
        iterations += 1;
        if cost == 0.0 {
            termination = Termination::CostConverged;
            break;
        }
        let jac = numeric_jacobian(problem, x.as_slice(), &r, opts)?;
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        loop {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    lambda *= opts.lambda_up;
                    if lambda > opts.max_lambda {
                        return Err(LmError::SingularNormalEquations);
                    }
                    continue;
                }
            };
            if step.norm() < opts.step_tol * (1.0 + x.norm()) {
                termination = Termination::StepConverged;
                break 'outer;
            }
            let trial = &x + &step;
            let trial_cost = match evaluate(problem, trial.as_slice(), &mut trial_r) {
                Ok(c) => c,
                Err(_) => f64::INFINITY,
            };
            if trial_cost < cost {
                let rel = (cost - trial_cost) / cost;
                x = trial;
                std::mem::swap(&mut r, &mut trial_r);
                cost = trial_cost;
                accepted.push(cost);
                lambda = (lambda * opts.lambda_down).max(1e-15);
                if rel < opts.rel_cost_tol {
                    termination = Termination::CostConverged;
                    break 'outer;
                }
                break;
            }
            lambda *= opts.lambda_up;
            if lambda > opts.max_lambda {
                // no descent possible: we are at a (numerical) minimum
                termination = Termination::DampingExhausted;
                break 'outer;
            }
        }
    }

    Ok(LmReport { params: x, initial_cost, cost, iterations, accepted_costs: accepted, termination, residual_count: m })
}
