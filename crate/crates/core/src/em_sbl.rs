//! Exact EM sparse Bayesian learning.
//!
//! The E-step computes the Gaussian posterior of `x` given `gamma` by dense
//! Cholesky factorizations; it is the correctness oracle for the
//! message-passing E-step and the runtime baseline.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{domain, Error, Result};
use crate::matgen::SmvProblem;
use crate::metrics;
use crate::model::{floor_gamma, relative_change, Sigma2Policy};

#[derive(Debug, Clone, PartialEq)]
pub struct SblState {
    pub gamma: DVector<f64>,
    pub sigma2: f64,
    pub em_iter: usize,
}

impl SblState {
    pub fn new(gamma: DVector<f64>, sigma2: f64) -> Self {
        Self {
            gamma,
            sigma2,
            em_iter: 0,
        }
    }
}

/// Posterior mean and marginal variances of `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub x_hat: DVector<f64>,
    pub tau_x: DVector<f64>,
    /// Full covariance, only filled when requested.
    pub sigma_x: Option<DMatrix<f64>>,
}

/// Which algebraic form of the posterior covariance to factorize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EStepForm {
    /// `M x M` lemma form when `M < N`, otherwise the `N x N` form.
    #[default]
    Auto,
    /// `(A^T A / sigma2 + Gamma^-1)^-1`.
    Direct,
    /// `Gamma - Gamma A^T (sigma2 I + A Gamma A^T)^-1 A Gamma`.
    Lemma,
}

fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn cholesky(m: DMatrix<f64>, what: &'static str) -> Result<Cholesky<f64, Dyn>> {
    match Cholesky::new(m.clone()) {
        Some(c) => Ok(c),
        None => Err(Error::Singular {
            what,
            condition_estimate: condition_estimate(&m),
        }),
    }
}

fn check_shapes(a: &DMatrix<f64>, y: &DVector<f64>, gamma: &DVector<f64>) -> Result<()> {
    if a.nrows() != y.len() || a.ncols() != gamma.len() {
        return Err(Error::Shape(format!(
            "A is {}x{}, y has {}, gamma has {}",
            a.nrows(),
            a.ncols(),
            y.len(),
            gamma.len()
        )));
    }
    Ok(())
}

/// `sigma2 I + A diag(gamma) A^T`.
pub fn measurement_covariance(a: &DMatrix<f64>, gamma: &DVector<f64>, sigma2: f64) -> DMatrix<f64> {
    let mut scaled = a.clone();
    for (j, g) in gamma.iter().enumerate() {
        scaled.column_mut(j).scale_mut(g.sqrt());
    }
    let mut cov = &scaled * scaled.transpose();
    for i in 0..cov.nrows() {
        cov[(i, i)] += sigma2;
    }
    cov
}

/// Exact Gaussian posterior of `x` under prior `N(0, diag(gamma))` and noise `sigma2`.
pub fn e_step_exact(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    state: &SblState,
    form: EStepForm,
    full_covariance: bool,
) -> Result<Posterior> {
    let gamma = &state.gamma;
    check_shapes(a, y, gamma)?;
    if gamma.iter().any(|g| !(*g > 0.0)) {
        return Err(domain(
            "gamma",
            "exact E-step needs strictly positive hyperparameters",
        ));
    }
    if !(state.sigma2 > 0.0) {
        return Err(domain("sigma2", "must be positive"));
    }
    let (m, n) = a.shape();
    let use_lemma = match form {
        EStepForm::Auto => m < n,
        EStepForm::Direct => false,
        EStepForm::Lemma => true,
    };
    if use_lemma {
        lemma_form(a, y, gamma, state.sigma2, full_covariance)
    } else {
        direct_form(a, y, gamma, state.sigma2, full_covariance)
    }
}

fn lemma_form(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    gamma: &DVector<f64>,
    sigma2: f64,
    full: bool,
) -> Result<Posterior> {
    let chol = cholesky(
        measurement_covariance(a, gamma, sigma2),
        "measurement covariance",
    )?;
    let alpha = chol.solve(y);
    let x_hat = (a.tr_mul(&alpha)).component_mul(gamma);

    // B = L^-1 A, so a_n^T Sigma_y^-1 a_n = ||B e_n||^2.
    let mut b = a.clone();
    chol.l_dirty().solve_lower_triangular_mut(&mut b);
    let tau_x = DVector::from_fn(a.ncols(), |j, _| {
        let g = gamma[j];
        (g - g * g * b.column(j).norm_squared()).clamp(0.0, g)
    });

    let sigma_x = full.then(|| {
        for (j, g) in gamma.iter().enumerate() {
            b.column_mut(j).scale_mut(*g);
        }
        let mut cov = -(b.tr_mul(&b));
        for (j, g) in gamma.iter().enumerate() {
            cov[(j, j)] += g;
        }
        cov
    });
    Ok(Posterior {
        x_hat,
        tau_x,
        sigma_x,
    })
}

fn direct_form(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    gamma: &DVector<f64>,
    sigma2: f64,
    full: bool,
) -> Result<Posterior> {
    let mut precision = a.tr_mul(a) / sigma2;
    for (j, g) in gamma.iter().enumerate() {
        precision[(j, j)] += 1.0 / g;
    }
    let chol = cholesky(precision, "posterior precision")?;
    let cov = chol.inverse();
    let x_hat = &cov * a.tr_mul(y) / sigma2;
    let tau_x = DVector::from_fn(a.ncols(), |j, _| cov[(j, j)].clamp(0.0, gamma[j]));
    Ok(Posterior {
        x_hat,
        tau_x,
        sigma_x: full.then_some(cov),
    })
}

/// Maximum-likelihood hyperparameter update `gamma_n = x_n^2 + tau_n` (unfloored).
pub fn m_step_gamma(post: &Posterior) -> DVector<f64> {
    post.x_hat.component_mul(&post.x_hat) + &post.tau_x
}

/// EM noise-variance update
/// `(||y - A x||^2 + sigma2_old * sum(1 - tau_n / gamma_n)) / M`.
pub fn m_step_sigma2(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    post: &Posterior,
    state: &SblState,
) -> Result<f64> {
    let m = a.nrows();
    if m == 0 {
        return Err(domain("rows", "M must be positive"));
    }
    let residual = (y - a * &post.x_hat).norm_squared();
    let mut shrink = 0.0;
    for (tau, g) in post.tau_x.iter().zip(state.gamma.iter()) {
        if *g > 0.0 {
            shrink += 1.0 - tau / g;
        } else if *tau > 0.0 {
            return Err(domain(
                "gamma",
                "zero hyperparameter with positive posterior variance",
            ));
        }
    }
    Ok((residual + state.sigma2 * shrink) / m as f64)
}

/// SBL cost `0.5 log|Sigma_y| + 0.5 y^T Sigma_y^-1 y` (non-informative hyperprior).
pub fn sbl_cost(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    gamma: &DVector<f64>,
    sigma2: f64,
) -> Result<f64> {
    check_shapes(a, y, gamma)?;
    let chol = cholesky(
        measurement_covariance(a, gamma, sigma2),
        "measurement covariance",
    )?;
    let l = chol.l_dirty();
    let log_det: f64 = 2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
    let mut w = y.clone();
    l.solve_lower_triangular_mut(&mut w);
    Ok(0.5 * log_det + 0.5 * w.norm_squared())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmSblOptions {
    pub i_max: usize,
    pub eps_em: f64,
    /// Initial value for every hyperparameter.
    pub gamma0: f64,
    pub sigma2_policy: Sigma2Policy,
    pub record_cost: bool,
    pub form: EStepForm,
}

impl Default for EmSblOptions {
    fn default() -> Self {
        Self {
            i_max: 1000,
            eps_em: 1e-8,
            gamma0: 1.0,
            sigma2_policy: Sigma2Policy::default(),
            record_cost: false,
            form: EStepForm::Auto,
        }
    }
}

impl EmSblOptions {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.i_max == 0 {
            return Err(domain("i_max", "need at least one EM iteration"));
        }
        if !(self.eps_em > 0.0) {
            return Err(domain("eps_em", "must be positive"));
        }
        if !(self.gamma0 > 0.0) {
            return Err(domain("gamma0", "must be positive"));
        }
        Ok(())
    }
}

/// One row of an EM trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub em_iter: usize,
    pub chi: Option<f64>,
    pub nmse_db: Option<f64>,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct EmSblRun {
    pub posterior: Posterior,
    pub state: SblState,
    /// `chi(gamma^0)` followed by the cost after every M-step (when recorded).
    pub cost_trace: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
}

/// Run exact EM-SBL until the normalized change of the mean drops below `eps_em`.
pub fn run_em_sbl(problem: &SmvProblem, opts: &EmSblOptions) -> Result<EmSblRun> {
    opts.validate()?;
    let a = &problem.a;
    let y = &problem.y;
    let n = a.ncols();
    let start = Instant::now();

    let mut state = SblState::new(
        DVector::from_element(n, opts.gamma0),
        opts.sigma2_policy.initial(problem.sigma2)?,
    );
    let mut cost_trace = Vec::new();
    if opts.record_cost {
        cost_trace.push(sbl_cost(a, y, &state.gamma, state.sigma2)?);
    }
    let signal_known = problem.x_true.norm_squared() > 0.0;

    let mut x_prev = DVector::zeros(n);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut posterior = None;

    for i in 1..=opts.i_max {
        let post = e_step_exact(a, y, &state, opts.form, false)?;
        let mut gamma = m_step_gamma(&post);
        floor_gamma(&mut gamma);
        if opts.sigma2_policy.updates() {
            state.sigma2 = m_step_sigma2(a, y, &post, &state)?;
        }
        state.gamma = gamma;
        state.em_iter = i;

        let chi = if opts.record_cost {
            let c = sbl_cost(a, y, &state.gamma, state.sigma2)?;
            cost_trace.push(c);
            Some(c)
        } else {
            None
        };
        trace.push(TraceRow {
            em_iter: i,
            chi,
            nmse_db: signal_known
                .then(|| metrics::nmse_db(&post.x_hat, &problem.x_true).ok())
                .flatten(),
            elapsed_seconds: start.elapsed().as_secs_f64(),
        });

        let change = relative_change(&post.x_hat, &x_prev);
        x_prev = post.x_hat.clone();
        posterior = Some(post);
        if change < opts.eps_em {
            converged = true;
            break;
        }
    }

    Ok(EmSblRun {
        posterior: posterior.expect("i_max >= 1"),
        state,
        cost_trace,
        trace,
        converged,
    })
}
