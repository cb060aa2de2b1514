//! GGAMP-SBL: EM sparse Bayesian learning with the damped GAMP E-step,
//! warm-started across EM iterations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::em_sbl::{self, EmSblOptions, Posterior, SblState};
use crate::error::{domain, Error, Result};
use crate::gamp::{choose_damping, gamp_iterate, DampingConfig, GampState};
use crate::matgen::SmvProblem;
use crate::model::{floor_gamma, relative_change, Sigma2Policy};

/// How the damping factors are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum DampingPolicy {
    /// Select from the grid with the spectral-ratio bound inflated by `safety`.
    Auto {
        safety: f64,
    },
    Fixed {
        theta_s: f64,
        theta_x: f64,
    },
}

impl Default for DampingPolicy {
    fn default() -> Self {
        DampingPolicy::Auto { safety: 1.1 }
    }
}

/// Resolved damping for one matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedDamping {
    pub config: DampingConfig,
    /// `Some(false)` when automatic selection could not meet the bound.
    pub bound_met: Option<bool>,
}

impl DampingPolicy {
    pub fn resolve(
        &self,
        a: &DMatrix<f64>,
        k_max: usize,
        eps_gamp: f64,
    ) -> Result<ResolvedDamping> {
        let resolved = match *self {
            DampingPolicy::Auto { safety } => {
                let choice = choose_damping(a, safety)?;
                ResolvedDamping {
                    config: choice.config(k_max, eps_gamp),
                    bound_met: Some(choice.bound_met),
                }
            }
            DampingPolicy::Fixed { theta_s, theta_x } => ResolvedDamping {
                config: DampingConfig {
                    theta_s,
                    theta_x,
                    k_max,
                    eps_gamp,
                },
                bound_met: None,
            },
        };
        resolved.config.validate()?;
        Ok(resolved)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GgampSblOptions {
    pub damping: DampingPolicy,
    pub k_max: usize,
    pub eps_gamp: f64,
    pub i_max: usize,
    pub eps_em: f64,
    pub gamma0: f64,
    pub sigma2_policy: Sigma2Policy,
    /// Evaluate the exact SBL cost after every M-step (dense, `O(M^2 N)`).
    pub trace_cost: bool,
}

impl Default for GgampSblOptions {
    fn default() -> Self {
        Self {
            damping: DampingPolicy::default(),
            k_max: 200,
            eps_gamp: 1e-8,
            i_max: 1000,
            eps_em: 1e-8,
            gamma0: 1.0,
            sigma2_policy: Sigma2Policy::default(),
            trace_cost: false,
        }
    }
}

impl GgampSblOptions {
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

    /// Matching options for the exact EM-SBL reference.
    pub fn exact_reference(&self) -> EmSblOptions {
        EmSblOptions {
            i_max: self.i_max,
            eps_em: self.eps_em,
            gamma0: self.gamma0,
            sigma2_policy: self.sigma2_policy,
            record_cost: self.trace_cost,
            ..EmSblOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub x_hat: DVector<f64>,
    pub tau_x: DVector<f64>,
    /// Last hyperparameter iterate (after the final M-step).
    pub gamma: DVector<f64>,
    pub sigma2: f64,
    pub em_iters: usize,
    pub inner_iters_total: usize,
    /// Inner iterations used by each E-step.
    pub inner_iters: Vec<usize>,
    /// Whether each E-step met `eps_gamp` before `k_max`.
    pub inner_converged: Vec<bool>,
    pub cost_trace: Option<Vec<f64>>,
    /// The EM stopping rule fired before `i_max`.
    pub converged: bool,
    pub damping: ResolvedDamping,
}

impl SolveResult {
    pub fn all_inner_converged(&self) -> bool {
        self.inner_converged.iter().all(|c| *c)
    }
}

pub(crate) fn with_em_index(err: Error, i: usize) -> Error {
    match err {
        Error::Divergence {
            iteration,
            last_finite_x,
            ..
        } => Error::Divergence {
            iteration,
            em_iteration: Some(i),
            last_finite_x,
        },
        other => other,
    }
}

/// Solve an SMV problem with GGAMP-SBL.
pub fn solve_smv(problem: &SmvProblem, opts: &GgampSblOptions) -> Result<SolveResult> {
    let sigma2 = opts.sigma2_policy.initial(problem.sigma2)?;
    solve_smv_raw(&problem.a, &problem.y, sigma2, opts)
}

/// [`solve_smv`] on a bare `(A, y)` pair with an explicit initial noise variance.
pub fn solve_smv_raw(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    sigma2_init: f64,
    opts: &GgampSblOptions,
) -> Result<SolveResult> {
    opts.validate()?;
    let (m, n) = a.shape();
    if y.len() != m {
        return Err(Error::Shape(format!("A is {m}x{n} but y has {}", y.len())));
    }
    let damping = opts.damping.resolve(a, opts.k_max, opts.eps_gamp)?;

    let mut gamma = DVector::from_element(n, opts.gamma0);
    let mut sigma2 = sigma2_init;
    let mut state = GampState::cold_start(m, &gamma);

    let mut cost_trace = if opts.trace_cost {
        Some(vec![em_sbl::sbl_cost(a, y, &gamma, sigma2)?])
    } else {
        None
    };
    let mut x_prev = DVector::zeros(n);
    let mut inner_iters = Vec::new();
    let mut inner_converged = Vec::new();
    let mut converged = false;
    let mut em_iters = 0;

    for i in 1..=opts.i_max {
        em_iters = i;
        let out = gamp_iterate(a, y, &gamma, sigma2, &mut state, &damping.config, None)
            .map_err(|e| with_em_index(e, i))?;
        inner_iters.push(out.iterations);
        inner_converged.push(out.converged);
        if !out.converged {
            log::debug!(
                "E-step {i} stopped at k_max with change {:.3e}",
                out.last_change
            );
        }

        let mut next_gamma = state.x_hat.component_mul(&state.x_hat) + &state.tau_x;
        floor_gamma(&mut next_gamma);
        if opts.sigma2_policy.updates() {
            let post = Posterior {
                x_hat: state.x_hat.clone(),
                tau_x: state.tau_x.clone(),
                sigma_x: None,
            };
            sigma2 = em_sbl::m_step_sigma2(a, y, &post, &SblState::new(gamma.clone(), sigma2))?;
        }
        gamma = next_gamma;
        if let Some(trace) = cost_trace.as_mut() {
            trace.push(em_sbl::sbl_cost(a, y, &gamma, sigma2)?);
        }

        let change = relative_change(&state.x_hat, &x_prev);
        x_prev.copy_from(&state.x_hat);
        if change < opts.eps_em {
            converged = true;
            break;
        }
    }

    Ok(SolveResult {
        x_hat: state.x_hat,
        tau_x: state.tau_x,
        gamma,
        sigma2,
        em_iters,
        inner_iters_total: inner_iters.iter().sum(),
        inner_iters,
        inner_converged,
        cost_trace,
        converged,
        damping,
    })
}

/// Paired SBL cost traces of GGAMP-SBL and exact EM-SBL on one instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostDescentRow {
    pub em_iter: usize,
    pub chi_ggamp: Option<f64>,
    pub chi_exact: Option<f64>,
}

/// Run both solvers from the same `gamma0` with cost tracing and pair the
/// traces by EM iteration (index 0 is the initial cost).
pub fn cost_descent_report(
    problem: &SmvProblem,
    opts: &GgampSblOptions,
) -> Result<Vec<CostDescentRow>> {
    let opts = GgampSblOptions {
        trace_cost: true,
        ..opts.clone()
    };
    let ggamp = solve_smv(problem, &opts)?.cost_trace.unwrap_or_default();
    let exact = em_sbl::run_em_sbl(problem, &opts.exact_reference())?.cost_trace;
    let len = ggamp.len().max(exact.len());
    Ok((0..len)
        .map(|i| CostDescentRow {
            em_iter: i,
            chi_ggamp: ggamp.get(i).copied(),
            chi_exact: exact.get(i).copied(),
        })
        .collect())
}
