//! Oracle baselines that know the true support: the genie MMSE estimator for
//! a single measurement vector and the support-aware Kalman smoother (SKS)
//! for AR(1)-correlated frames.

use nalgebra::{DMatrix, DVector};

use crate::error::{domain, Error, Result};
use crate::gamp::choose_damping;
use crate::matgen::MmvProblem;
use crate::tsbl::{mmv_e_step, MmvState, SweepConfig};

fn check_support(support: &[usize], n: usize) -> Result<()> {
    if let Some(&bad) = support.iter().find(|&&s| s >= n) {
        return Err(domain(
            "support",
            format!("index {bad} out of range for {n} columns"),
        ));
    }
    Ok(())
}

/// Genie MMSE estimate with unit-variance Gaussian coefficients on `support`:
/// `x_S = A_S^T (A_S A_S^T + sigma2 I)^{-1} y`, zero elsewhere.
pub fn genie_mmse(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    sigma2: f64,
    support: &[usize],
) -> Result<DVector<f64>> {
    if !(sigma2 > 0.0) {
        return Err(domain("sigma2", "must be positive"));
    }
    let (m, n) = a.shape();
    if y.len() != m {
        return Err(Error::Shape(format!("y has {} rows, A has {m}", y.len())));
    }
    check_support(support, n)?;
    let mut x = DVector::zeros(n);
    if support.is_empty() {
        return Ok(x);
    }
    let a_s = a.select_columns(support);
    let mut g = &a_s * a_s.transpose();
    for i in 0..m {
        g[(i, i)] += sigma2;
    }
    let chol = g.cholesky().ok_or(Error::Singular {
        what: "genie measurement covariance",
        condition_estimate: f64::INFINITY,
    })?;
    let x_s = a_s.transpose() * chol.solve(y);
    for (&idx, v) in support.iter().zip(x_s.iter()) {
        x[idx] = *v;
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SksOptions {
    /// Safety factor for the damping rule on the support-restricted matrix.
    pub safety: f64,
    pub k_max: usize,
    pub eps_gamp: f64,
}

impl Default for SksOptions {
    fn default() -> Self {
        Self {
            safety: 1.1,
            k_max: 20000,
            eps_gamp: 1e-24,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SksResult {
    pub x_hat: Vec<DVector<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

/// Support-aware Kalman smoother: the temporal E-step restricted to the true
/// support, run to convergence with the true `gamma`, `sigma2` and `beta`.
pub fn sks(problem: &MmvProblem, opts: &SksOptions) -> Result<SksResult> {
    let (m, n) = problem.a.shape();
    let frames = problem.frames();
    check_support(&problem.support, n)?;
    if problem.support.is_empty() {
        return Ok(SksResult {
            x_hat: vec![DVector::zeros(n); frames],
            iterations: 0,
            converged: true,
        });
    }
    let a_s = problem.a.select_columns(&problem.support);
    let gamma = DVector::from_iterator(
        problem.support.len(),
        problem.support.iter().map(|&i| problem.gamma_true[i]),
    );
    if gamma.iter().any(|g| !(*g > 0.0)) {
        return Err(domain("gamma_true", "must be positive on the support"));
    }
    let cfg = choose_damping(&a_s, opts.safety)?.config(opts.k_max, opts.eps_gamp);
    let mut state = MmvState::cold_start(m, frames, &gamma);
    let out = mmv_e_step(
        &a_s,
        &problem.y,
        &gamma,
        problem.beta,
        problem.sigma2,
        &mut state,
        &cfg,
        &SweepConfig {
            within_max: opts.k_max,
            ..SweepConfig::default()
        },
    )?;
    let x_hat = state
        .frames
        .iter()
        .map(|f| {
            let mut x = DVector::zeros(n);
            for (&idx, v) in problem.support.iter().zip(f.x_hat.iter()) {
                x[idx] = *v;
            }
            x
        })
        .collect();
    Ok(SksResult {
        x_hat,
        iterations: out.gamp_iterations,
        converged: out.converged,
    })
}
