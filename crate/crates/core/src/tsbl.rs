//! GGAMP-TSBL: sparse Bayesian learning for multiple measurement vectors with
//! AR(1) temporal correlation across frames.
//!
//! Each inner iteration runs a forward message sweep, one damped GAMP
//! iteration per frame ("within" step) against the combined temporal prior,
//! and a backward sweep. Backward messages are stored in precision form so
//! that the no-information message is an exact zero.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::gamp::{check_shapes, gamp_step, DampingConfig, GampState, Prior};
use crate::ggamp_sbl::{with_em_index, DampingPolicy, ResolvedDamping};
use crate::matgen::MmvProblem;
use crate::model::{floor_gamma, relative_change, Sigma2Policy, GAMMA_FLOOR};

/// Forward `(eta, psi)` and backward `(theta, phi)` Gaussian messages per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalMessages {
    pub eta: Vec<DVector<f64>>,
    pub psi: Vec<DVector<f64>>,
    /// `1 / phi`; zero encodes the no-information message.
    pub back_precision: Vec<DVector<f64>>,
    /// `theta / phi`.
    pub back_weighted_mean: Vec<DVector<f64>>,
}

impl TemporalMessages {
    /// Prior-only messages: `eta = 0`, `psi = gamma`, backward uninformative.
    pub fn new(frames: usize, gamma: &DVector<f64>) -> Self {
        let n = gamma.len();
        Self {
            eta: vec![DVector::zeros(n); frames],
            psi: vec![gamma.clone(); frames],
            back_precision: vec![DVector::zeros(n); frames],
            back_weighted_mean: vec![DVector::zeros(n); frames],
        }
    }

    pub fn frames(&self) -> usize {
        self.eta.len()
    }

    /// Backward mean `theta`, or `None` for the no-information message.
    pub fn theta(&self, t: usize, n: usize) -> Option<f64> {
        let prec = self.back_precision[t][n];
        (prec > 0.0).then(|| self.back_weighted_mean[t][n] / prec)
    }

    /// Backward variance `phi` (infinite for the no-information message).
    pub fn phi(&self, t: usize, n: usize) -> f64 {
        let prec = self.back_precision[t][n];
        if prec > 0.0 {
            1.0 / prec
        } else {
            f64::INFINITY
        }
    }

    /// Product of the forward and backward messages into frame `t`, as
    /// `(mean, variance)` of the equivalent single-frame Gaussian prior.
    pub fn combined_prior(&self, t: usize) -> (DVector<f64>, DVector<f64>) {
        let n = self.eta[t].len();
        let mut mean = DVector::zeros(n);
        let mut var = DVector::zeros(n);
        for j in 0..n {
            let (eta, psi) = (self.eta[t][j], self.psi[t][j]);
            let bp = self.back_precision[t][j];
            if bp == 0.0 {
                mean[j] = eta;
                var[j] = psi;
            } else {
                let v = 1.0 / (1.0 / psi + bp);
                var[j] = v;
                mean[j] = (eta / psi + self.back_weighted_mean[t][j]) * v;
            }
        }
        (mean, var)
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta.abs() < 1.0) {
        return Err(domain(
            "beta",
            format!("|beta| = {} must be < 1", beta.abs()),
        ));
    }
    Ok(())
}

/// Forward message into frame `t >= 1` from frame `t - 1`:
///
/// `eta_t = beta * (r/tau_r + eta/psi) / c`, `psi_t = beta^2 / c + (1 - beta^2) gamma`
///
/// with `c = 1/tau_r + 1/psi` taken at frame `t - 1`. The within message of
/// frame `t - 1` is given as `(r, 1/tau_r)`; a zero precision means no
/// within information yet.
pub fn forward_step(
    msgs: &mut TemporalMessages,
    t: usize,
    r_prev: &DVector<f64>,
    r_precision_prev: &DVector<f64>,
    gamma: &DVector<f64>,
    beta: f64,
) {
    let b2 = beta * beta;
    for j in 0..gamma.len() {
        let (eta, psi) = (msgs.eta[t - 1][j], msgs.psi[t - 1][j]);
        let w = r_precision_prev[j];
        let c = w + 1.0 / psi;
        let mean = (r_prev[j] * w + eta / psi) / c;
        msgs.eta[t][j] = beta * mean;
        msgs.psi[t][j] = b2 / c + (1.0 - b2) * gamma[j];
    }
}

/// Reset frame 1 to the prior `N(0, gamma)`.
pub fn forward_start(msgs: &mut TemporalMessages, gamma: &DVector<f64>) {
    msgs.eta[0].fill(0.0);
    msgs.psi[0].copy_from(gamma);
}

/// Full forward sweep: [`forward_start`] followed by [`forward_step`] for
/// `t = 2..T` in increasing order.
pub fn forward_pass(
    msgs: &mut TemporalMessages,
    r: &[DVector<f64>],
    r_precision: &[DVector<f64>],
    gamma: &DVector<f64>,
    beta: f64,
) {
    forward_start(msgs, gamma);
    for t in 1..msgs.frames() {
        forward_step(msgs, t, &r[t - 1], &r_precision[t - 1], gamma, beta);
    }
}

/// Backward sweep from frame `T` (uninformative) down to frame 1:
///
/// `theta_t = (1/beta) (r/tau_r + theta/phi) v`, `phi_t = (v + (1 - beta^2) gamma) / beta^2`
///
/// with `v = 1 / (1/tau_r + 1/phi)` at frame `t + 1`, computed in precision
/// form so `beta = 0` yields uninformative messages.
pub fn backward_pass(
    msgs: &mut TemporalMessages,
    r: &[DVector<f64>],
    r_precision: &[DVector<f64>],
    gamma: &DVector<f64>,
    beta: f64,
) {
    let frames = msgs.frames();
    if frames == 0 {
        return;
    }
    msgs.back_precision[frames - 1].fill(0.0);
    msgs.back_weighted_mean[frames - 1].fill(0.0);
    let b2 = beta * beta;
    for t in (0..frames - 1).rev() {
        for j in 0..gamma.len() {
            let w = r_precision[t + 1][j];
            let total = w + msgs.back_precision[t + 1][j];
            if total == 0.0 {
                msgs.back_precision[t][j] = 0.0;
                msgs.back_weighted_mean[t][j] = 0.0;
                continue;
            }
            let v = 1.0 / total;
            let mean = (r[t + 1][j] * w + msgs.back_weighted_mean[t + 1][j]) * v;
            let spread = v + (1.0 - b2) * gamma[j];
            msgs.back_precision[t][j] = b2 / spread;
            msgs.back_weighted_mean[t][j] = beta * mean / spread;
        }
    }
}

/// One damped GAMP iteration for frame `t` against the combined temporal prior.
/// Returns the normalized change of the frame's mean.
#[allow(clippy::too_many_arguments)]
pub fn within_update(
    state: &mut GampState,
    y: &DVector<f64>,
    a: &DMatrix<f64>,
    msgs: &TemporalMessages,
    t: usize,
    sigma2: f64,
    damping: &DampingConfig,
) -> f64 {
    let (mean, var) = msgs.combined_prior(t);
    gamp_step(
        a,
        y,
        Prior::Gaussian {
            mean: &mean,
            var: &var,
        },
        sigma2,
        damping.theta_s,
        damping.theta_x,
        state,
    )
}

/// Hyperparameter update for the AR(1) model,
///
/// `gamma_n = (1/T) [ e_1 + sum_{t>=2} (e_t + beta^2 e_{t-1} - 2 beta c_t) / (1 - beta^2) ]`
///
/// with second moments `e_t = x_t^2 + tau_t` and cross moments
/// `c_t = x_t x_{t-1} + beta tau_{t-1}`. Clamped below at the gamma floor.
pub fn m_step_mmv(
    x_hat: &[DVector<f64>],
    tau_x: &[DVector<f64>],
    beta: f64,
) -> Result<DVector<f64>> {
    check_beta(beta)?;
    let frames = x_hat.len();
    if frames == 0 || tau_x.len() != frames {
        return Err(Error::Shape(format!(
            "{} means vs {} variances",
            frames,
            tau_x.len()
        )));
    }
    let n = x_hat[0].len();
    let b2 = beta * beta;
    let mut gamma = DVector::zeros(n);
    for j in 0..n {
        let second = |t: usize| x_hat[t][j] * x_hat[t][j] + tau_x[t][j];
        let mut sum = second(0);
        for t in 1..frames {
            let cross = x_hat[t][j] * x_hat[t - 1][j] + beta * tau_x[t - 1][j];
            sum += (second(t) + b2 * second(t - 1) - 2.0 * beta * cross) / (1.0 - b2);
        }
        gamma[j] = sum / frames as f64;
    }
    floor_gamma(&mut gamma);
    Ok(gamma)
}

/// Per-frame GAMP states plus the temporal messages between them.
#[derive(Debug, Clone, PartialEq)]
pub struct MmvState {
    pub frames: Vec<GampState>,
    pub messages: TemporalMessages,
    /// False until every frame has produced a within message.
    pub within_ready: bool,
}

impl MmvState {
    pub fn cold_start(m: usize, frames: usize, gamma: &DVector<f64>) -> Self {
        Self {
            frames: (0..frames)
                .map(|_| GampState::cold_start(m, gamma))
                .collect(),
            messages: TemporalMessages::new(frames, gamma),
            within_ready: false,
        }
    }

    fn within_precision(&self, t: usize) -> DVector<f64> {
        let f = &self.frames[t];
        if self.within_ready {
            f.tau_r.map(|v| 1.0 / v)
        } else {
            DVector::zeros(f.n())
        }
    }

    fn within_messages(&self) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let r = self.frames.iter().map(|f| f.r.clone()).collect();
        let prec = (0..self.frames.len())
            .map(|t| self.within_precision(t))
            .collect();
        (r, prec)
    }
}

/// Order of the forward, within and backward updates in one inner sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// For `t = 1..T`: forward message into frame `t` from the within message
    /// of frame `t - 1` produced in this sweep, then damped GAMP iterations on
    /// frame `t` until its own change falls below `eps_gamp` (at most
    /// `within_max`). The backward sweep follows.
    #[default]
    Interleaved,
    /// One damped GAMP iteration per frame per sweep: forward sweep on the
    /// previous within messages, within updates of all frames
    /// (data-parallel), backward sweep.
    Literal,
}

/// Sweep controls for [`mmv_e_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    pub schedule: Schedule,
    /// Cap on GAMP iterations per frame and sweep ([`Schedule::Interleaved`]).
    pub within_max: usize,
    /// Run the within updates on the rayon pool ([`Schedule::Literal`]).
    pub parallel_frames: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            schedule: Schedule::default(),
            within_max: 200,
            parallel_frames: false,
        }
    }
}

/// Outcome of one temporal E-step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmvOutcome {
    pub sweeps: usize,
    /// GAMP iterations summed over frames and sweeps.
    pub gamp_iterations: usize,
    pub converged: bool,
    pub last_change: f64,
}

fn divergence(state: &MmvState, sweep: usize) -> Error {
    Error::Divergence {
        iteration: sweep,
        em_iteration: None,
        last_finite_x: state
            .frames
            .iter()
            .flat_map(|f| f.x_hat.iter().copied())
            .collect(),
    }
}

/// The temporal E-step: forward, within and backward sweeps in the order
/// given by `sweep.schedule`, stopped when the frame-averaged normalized
/// change over a sweep drops below `cfg.eps_gamp` or after `cfg.k_max` sweeps.
///
/// When the temporal messages carry no information (`T = 1` or `beta = 0`)
/// a single interleaved sweep is already a fixed point of the message
/// passing, so the E-step ends after it; `converged` then reports whether
/// every frame's GAMP loop met `eps_gamp`.
#[allow(clippy::too_many_arguments)]
pub fn mmv_e_step(
    a: &DMatrix<f64>,
    y: &[DVector<f64>],
    gamma: &DVector<f64>,
    beta: f64,
    sigma2: f64,
    state: &mut MmvState,
    cfg: &DampingConfig,
    sweep: &SweepConfig,
) -> Result<MmvOutcome> {
    cfg.validate()?;
    check_beta(beta)?;
    if !(sigma2 > 0.0) {
        return Err(domain("sigma2", "must be positive"));
    }
    if sweep.within_max == 0 {
        return Err(domain(
            "within_max",
            "need at least one GAMP iteration per frame",
        ));
    }
    let frames = y.len();
    if frames == 0 || state.frames.len() != frames || state.messages.frames() != frames {
        return Err(Error::Shape(format!(
            "{frames} measurement frames, {} state frames",
            state.frames.len()
        )));
    }
    for (f, yt) in state.frames.iter().zip(y) {
        check_shapes(a, yt, f, gamma.len())?;
    }
    let informative = frames > 1 && beta != 0.0;

    let mut gamp_iterations = 0;
    let mut change = f64::INFINITY;
    for k in 1..=cfg.k_max {
        let snapshot = state.clone();
        let (changes, within_converged) = match sweep.schedule {
            Schedule::Interleaved => {
                forward_start(&mut state.messages, gamma);
                let mut changes = Vec::with_capacity(frames);
                let mut all_converged = true;
                #[allow(clippy::needless_range_loop)] // t indexes frames, messages and y
                for t in 0..frames {
                    if t > 0 {
                        // Frame t - 1 was updated earlier in this sweep.
                        let prev = &state.frames[t - 1];
                        let prec = prev.tau_r.map(|v| 1.0 / v);
                        forward_step(&mut state.messages, t, &prev.r, &prec, gamma, beta);
                    }
                    let (mean, var) = state.messages.combined_prior(t);
                    let prior = Prior::Gaussian {
                        mean: &mean,
                        var: &var,
                    };
                    let frame = &mut state.frames[t];
                    let x_before = frame.x_hat.clone();
                    let mut frame_converged = false;
                    for _ in 0..sweep.within_max {
                        let c = gamp_step(a, &y[t], prior, sigma2, cfg.theta_s, cfg.theta_x, frame);
                        gamp_iterations += 1;
                        if !frame.is_finite() || c.is_nan() {
                            *state = snapshot;
                            return Err(divergence(state, k));
                        }
                        if c < cfg.eps_gamp {
                            frame_converged = true;
                            break;
                        }
                    }
                    all_converged &= frame_converged;
                    changes.push(relative_change(&frame.x_hat, &x_before));
                }
                (changes, all_converged)
            }
            Schedule::Literal => {
                let (r, prec) = state.within_messages();
                forward_pass(&mut state.messages, &r, &prec, gamma, beta);
                let msgs = &state.messages;
                let step = |(t, (f, yt)): (usize, (&mut GampState, &DVector<f64>))| {
                    within_update(f, yt, a, msgs, t, sigma2, cfg)
                };
                let changes: Vec<f64> = if sweep.parallel_frames {
                    state
                        .frames
                        .par_iter_mut()
                        .zip(y.par_iter())
                        .enumerate()
                        .map(step)
                        .collect()
                } else {
                    state
                        .frames
                        .iter_mut()
                        .zip(y.iter())
                        .enumerate()
                        .map(step)
                        .collect()
                };
                gamp_iterations += frames;
                if !state.frames.iter().all(GampState::is_finite)
                    || changes.iter().any(|c| c.is_nan())
                {
                    *state = snapshot;
                    return Err(divergence(state, k));
                }
                let converged = changes.iter().sum::<f64>() / (frames as f64) < cfg.eps_gamp;
                (changes, converged)
            }
        };
        state.within_ready = true;

        let (r, prec) = state.within_messages();
        backward_pass(&mut state.messages, &r, &prec, gamma, beta);

        change = changes.iter().sum::<f64>() / frames as f64;
        let single_pass = !informative && sweep.schedule == Schedule::Interleaved;
        if single_pass || change < cfg.eps_gamp {
            return Ok(MmvOutcome {
                sweeps: k,
                gamp_iterations,
                converged: if single_pass { within_converged } else { true },
                last_change: change,
            });
        }
    }
    Ok(MmvOutcome {
        sweeps: cfg.k_max,
        gamp_iterations,
        converged: false,
        last_change: change,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsblOptions {
    pub damping: DampingPolicy,
    pub k_max: usize,
    pub eps_gamp: f64,
    pub i_max: usize,
    pub eps_em: f64,
    pub gamma0: f64,
    /// Noise variance policy; EM re-estimation is not supported for MMV.
    pub sigma2_policy: Sigma2Policy,
    /// Temporal correlation; `None` takes the problem's value.
    pub beta: Option<f64>,
    pub schedule: Schedule,
    /// Cap on GAMP iterations per frame and sweep; `None` uses `k_max`.
    pub within_max: Option<usize>,
    /// Run the within step of all frames on the rayon pool
    /// ([`Schedule::Literal`] only).
    pub parallel_frames: bool,
}

impl TsblOptions {
    pub fn sweep(&self) -> SweepConfig {
        SweepConfig {
            schedule: self.schedule,
            within_max: self.within_max.unwrap_or(self.k_max),
            parallel_frames: self.parallel_frames,
        }
    }
}

impl Default for TsblOptions {
    fn default() -> Self {
        Self {
            damping: DampingPolicy::default(),
            k_max: 200,
            eps_gamp: 1e-8,
            i_max: 1000,
            eps_em: 1e-8,
            gamma0: 1.0,
            sigma2_policy: Sigma2Policy::default(),
            beta: None,
            schedule: Schedule::default(),
            within_max: None,
            parallel_frames: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmvSolveResult {
    pub x_hat: Vec<DVector<f64>>,
    pub tau_x: Vec<DVector<f64>>,
    pub gamma: DVector<f64>,
    pub sigma2: f64,
    pub beta: f64,
    pub em_iters: usize,
    /// GAMP iterations summed over frames and EM iterations.
    pub inner_iters_total: usize,
    /// GAMP iterations (summed over frames) per EM iteration.
    pub inner_iters: Vec<usize>,
    /// Temporal sweeps per EM iteration.
    pub sweeps: Vec<usize>,
    pub inner_converged: Vec<bool>,
    pub converged: bool,
    pub damping: ResolvedDamping,
}

/// Solve an MMV problem with GGAMP-TSBL.
pub fn solve_mmv(problem: &MmvProblem, opts: &TsblOptions) -> Result<MmvSolveResult> {
    if opts.sigma2_policy.updates() {
        return Err(domain(
            "sigma2_policy",
            "noise variance re-estimation is not available for MMV",
        ));
    }
    let sigma2 = opts.sigma2_policy.initial(problem.sigma2)?;
    let beta = opts.beta.unwrap_or(problem.beta);
    solve_mmv_raw(&problem.a, &problem.y, sigma2, beta, opts)
}

/// [`solve_mmv`] on bare inputs with explicit noise variance and correlation.
pub fn solve_mmv_raw(
    a: &DMatrix<f64>,
    y: &[DVector<f64>],
    sigma2: f64,
    beta: f64,
    opts: &TsblOptions,
) -> Result<MmvSolveResult> {
    check_beta(beta)?;
    if opts.i_max == 0 {
        return Err(domain("i_max", "need at least one EM iteration"));
    }
    if !(opts.eps_em > 0.0) {
        return Err(domain("eps_em", "must be positive"));
    }
    if !(opts.gamma0 > 0.0) {
        return Err(domain("gamma0", "must be positive"));
    }
    if y.is_empty() {
        return Err(domain("t", "need at least one frame"));
    }
    let (m, n) = a.shape();
    let frames = y.len();
    let damping = opts.damping.resolve(a, opts.k_max, opts.eps_gamp)?;

    let mut gamma = DVector::from_element(n, opts.gamma0.max(GAMMA_FLOOR));
    let mut state = MmvState::cold_start(m, frames, &gamma);
    let mut x_prev: Vec<DVector<f64>> = vec![DVector::zeros(n); frames];
    let sweep = opts.sweep();
    let mut inner_iters = Vec::new();
    let mut sweeps = Vec::new();
    let mut inner_converged = Vec::new();
    let mut converged = false;
    let mut em_iters = 0;

    for i in 1..=opts.i_max {
        em_iters = i;
        let out = mmv_e_step(
            a,
            y,
            &gamma,
            beta,
            sigma2,
            &mut state,
            &damping.config,
            &sweep,
        )
        .map_err(|e| with_em_index(e, i))?;
        inner_iters.push(out.gamp_iterations);
        sweeps.push(out.sweeps);
        inner_converged.push(out.converged);

        let xs: Vec<DVector<f64>> = state.frames.iter().map(|f| f.x_hat.clone()).collect();
        let taus: Vec<DVector<f64>> = state.frames.iter().map(|f| f.tau_x.clone()).collect();
        gamma = m_step_mmv(&xs, &taus, beta)?;

        let change = xs
            .iter()
            .zip(&x_prev)
            .map(|(new, old)| relative_change(new, old))
            .sum::<f64>()
            / frames as f64;
        x_prev = xs;
        if change < opts.eps_em {
            converged = true;
            break;
        }
    }

    Ok(MmvSolveResult {
        tau_x: state.frames.iter().map(|f| f.tau_x.clone()).collect(),
        x_hat: x_prev,
        gamma,
        sigma2,
        beta,
        em_iters,
        inner_iters_total: inner_iters.iter().sum(),
        inner_iters,
        sweeps,
        inner_converged,
        converged,
        damping,
    })
}
