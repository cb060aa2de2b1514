//! Checks shared by the property suites and the acceptance target.
//!
//! Every check returns a one-line summary on success and a description of
//! the first violation otherwise, so the same code can back a `#[test]` and
//! a PASS/FAIL line. Reference computations (dense chain inference, the
//! textbook GAMP loop, the decoupled MMV construction) are written out here
//! independently of the library code they verify.
// Some helpers are used by only one of the test targets that include this
// module; `ensure!` conditions are written so that NaN fails them.
#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord)]

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbl_core::em_sbl::m_step_gamma;
use sbl_core::experiment::{median, run_plan, ExperimentPlan, PlanReport, SolverKind, Sparsity};
use sbl_core::gamp::{gamp_step, Prior};
use sbl_core::ggamp_sbl::cost_descent_report;
use sbl_core::metrics::frame_nmse_db;
use sbl_core::model::relative_change;
use sbl_core::tsbl::{
    backward_pass, forward_pass, m_step_mmv, mmv_e_step, MmvState, SweepConfig, TemporalMessages,
};
use sbl_core::{
    choose_damping, e_step_exact, gamp_iterate, generate_matrix, generate_mmv, generate_smv,
    genie_mmse, nmse_db, run_em_sbl, sks, solve_mmv, solve_smv, tnmse_db, DampingConfig,
    DampingPolicy, EStepForm, EmSblOptions, EnsembleKind, EnsembleSpec, GampState, GgampSblOptions,
    MmvProblem, SblState, Sigma2Policy, SksOptions, SmvProblem, TsblOptions, DB_FLOOR, GAMMA_FLOOR,
};

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Stopping tolerance used by the recovery criteria. The stop statistic is a
/// squared relative change, so the library default of 1e-8 halts the EM
/// loop at roughly 1e-4 relative accuracy, visibly short of the SBL fixed
/// point at 60 dB.
pub const RECOVERY_EPS: f64 = 1e-10;

pub fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn smv_view(p: &MmvProblem, t: usize) -> SmvProblem {
    SmvProblem {
        a: p.a.clone(),
        y: p.y[t].clone(),
        x_true: p.x_true[t].clone(),
        sigma2: p.sigma2,
        support: p.support.clone(),
    }
}

fn med(values: &[f64]) -> f64 {
    median(values).unwrap_or(f64::NAN)
}

fn summary_median(report: &PlanReport, solver: SolverKind, param: f64) -> f64 {
    report
        .summary
        .iter()
        .find(|s| s.solver == solver && s.param == param)
        .and_then(|s| s.median_nmse_db)
        .unwrap_or(f64::NAN)
}

fn smv_recovery_options() -> GgampSblOptions {
    GgampSblOptions {
        eps_em: RECOVERY_EPS,
        eps_gamp: RECOVERY_EPS,
        ..GgampSblOptions::default()
    }
}

// ---------------------------------------------------------------- matgen

/// Every ensemble and both problem generators are bit-reproducible from
/// their seeds, and different seeds give different draws.
pub fn generation_is_deterministic() -> Check {
    let kinds = [
        (EnsembleKind::IidGaussian, 0.0),
        (EnsembleKind::ColumnCorrelated, 0.7),
        (EnsembleKind::LowRankProduct, 0.25),
        (EnsembleKind::IllConditioned, 50.0),
        (EnsembleKind::NonzeroMean, 0.3),
    ];
    for (kind, param) in kinds {
        let spec = EnsembleSpec::new(kind, 30, 60, param, 11);
        let a = generate_matrix(&spec).map_err(|e| e.to_string())?;
        ensure!(
            a == generate_matrix(&spec).unwrap(),
            "{kind} matrix differs between calls"
        );
        let other = EnsembleSpec { seed: 12, ..spec };
        ensure!(
            a != generate_matrix(&other).unwrap(),
            "{kind} ignores its seed"
        );
        let p = generate_smv(&spec, 6, 30.0, 4).unwrap();
        ensure!(
            p == generate_smv(&spec, 6, 30.0, 4).unwrap(),
            "{kind} SMV problem differs"
        );
        ensure!(
            p != generate_smv(&spec, 6, 30.0, 5).unwrap(),
            "{kind} SMV ignores the signal seed"
        );
        let q = generate_mmv(&spec, 6, 3, 0.8, None, 30.0, 4).unwrap();
        ensure!(
            q == generate_mmv(&spec, 6, 3, 0.8, None, 30.0, 4).unwrap(),
            "{kind} MMV problem differs"
        );
    }
    Ok("5 ensembles, SMV and MMV generators bit-identical on repeat".into())
}

/// At their zero-deviation parameters the structured ensembles match the
/// i.i.d. `N(0, 1/N)` ensemble in mean, variance, kurtosis and
/// neighbouring-column correlation. The low-rank family cannot reach its
/// neutral point (`R < M` is required) and is excluded.
pub fn neutral_ensembles_match_iid_moments() -> Check {
    let (m, n) = (100, 200);
    let count = (m * n) as f64;
    let mut lines = Vec::new();
    for kind in [
        EnsembleKind::IidGaussian,
        EnsembleKind::ColumnCorrelated,
        EnsembleKind::IllConditioned,
        EnsembleKind::NonzeroMean,
    ] {
        let param = kind.neutral_param().expect("neutral point exists");
        let (mut mean, mut var, mut kurt, mut corr) = (0.0, 0.0, 0.0, 0.0);
        let seeds = 5;
        for seed in 0..seeds {
            let a = generate_matrix(&EnsembleSpec::new(kind, m, n, param, seed)).unwrap()
                * (n as f64).sqrt();
            let mu = a.sum() / count;
            let v = a.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / count;
            let k4 = a.iter().map(|x| (x - mu).powi(4)).sum::<f64>() / count / (v * v);
            let mut c = 0.0;
            for j in 0..n - 1 {
                c += a.column(j).dot(&a.column(j + 1));
            }
            mean += mu / seeds as f64;
            var += v / seeds as f64;
            kurt += k4 / seeds as f64;
            corr += c / ((n - 1) * m) as f64 / v / seeds as f64;
        }
        // Standard errors over 5 x 20000 entries: mean 0.003, variance 0.0045,
        // kurtosis 0.015, lag-one correlation 0.003. Bounds are ~5 sigma.
        ensure!(mean.abs() < 0.015, "{kind}: scaled mean {mean:.4}");
        ensure!(
            (var - 1.0).abs() < 0.025,
            "{kind}: scaled variance {var:.4}"
        );
        ensure!((kurt - 3.0).abs() < 0.1, "{kind}: kurtosis {kurt:.3}");
        ensure!(
            corr.abs() < 0.015,
            "{kind}: neighbour correlation {corr:.4}"
        );
        lines.push(format!("{kind} var {var:.3} kurt {kurt:.2}"));
    }
    Ok(lines.join("; "))
}

/// Per-frame second moments of AR(1) rows do not depend on the frame:
/// with unit row variance, `sum x_t^2` over rows and realizations is
/// chi-square with `n` degrees of freedom for every `t`. Each frame is
/// tested at the 5% level with a Bonferroni correction over frames.
pub fn ar1_rows_are_stationary() -> Check {
    let (realizations, k, frames, beta) = (200, 10, 5, 0.9);
    let mut sums = vec![0.0; frames];
    for seed in 0..realizations {
        let p = generate_mmv(
            &EnsembleSpec::iid(10, 30, seed),
            k,
            frames,
            beta,
            None,
            30.0,
            7_000 + seed,
        )
        .unwrap();
        for (t, x) in p.x_true.iter().enumerate() {
            sums[t] += x.norm_squared();
        }
    }
    let dof = (realizations as usize * k) as f64;
    // Two-sided 5% / 5 = 1% per frame: normal quantile 2.576 (dof = 2000,
    // where the normal approximation to chi-square is accurate).
    let z: Vec<f64> = sums
        .iter()
        .map(|s| (s - dof) / (2.0 * dof).sqrt())
        .collect();
    for (t, zt) in z.iter().enumerate() {
        ensure!(zt.abs() < 2.576, "frame {t}: chi-square z = {zt:.2}");
    }
    Ok(format!(
        "z per frame {:?}",
        z.iter()
            .map(|v| (v * 100.0).round() / 100.0)
            .collect::<Vec<_>>()
    ))
}

// ---------------------------------------------------------------- exact SBL

/// Direct and matrix-inversion-lemma posteriors agree on random instances.
pub fn exact_forms_agree() -> Check {
    let strategy = (1usize..=64, 0.1f64..=1.0, any::<u64>(), 0.01f64..1.0);
    runner(64)
        .run(&strategy, |(n, ratio, seed, sigma2)| {
            let m = ((n as f64 * ratio).ceil() as usize).clamp(1, n);
            let a = generate_matrix(&EnsembleSpec::iid(m, n, seed)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
            let y = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
            let gamma = DVector::from_fn(n, |_, _| rng.random_range(1e-3..3.0));
            let st = SblState::new(gamma, sigma2);
            let d = e_step_exact(&a, &y, &st, EStepForm::Direct, true).unwrap();
            let l = e_step_exact(&a, &y, &st, EStepForm::Lemma, true).unwrap();
            prop_assert!(
                rel(&d.x_hat, &l.x_hat) < 1e-8,
                "mean {}",
                rel(&d.x_hat, &l.x_hat)
            );
            prop_assert!(rel(&d.tau_x, &l.tau_x) < 1e-8);
            let (sd, sl) = (d.sigma_x.unwrap(), l.sigma_x.unwrap());
            prop_assert!((&sd - &sl).norm() < 1e-8 * sl.norm());
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("64 random instances with N <= 64, both forms within 1e-8".into())
}

/// Exact EM never increases the SBL cost (1e-9 absolute slack).
pub fn em_cost_is_monotone() -> Check {
    let mut steps = 0;
    for seed in 0..6u64 {
        let kind = [
            EnsembleKind::IidGaussian,
            EnsembleKind::ColumnCorrelated,
            EnsembleKind::IllConditioned,
        ][seed as usize % 3];
        let param = [0.0, 0.9, 100.0][seed as usize % 3];
        let p = generate_smv(
            &EnsembleSpec::new(kind, 40, 80, param, seed),
            12,
            40.0,
            50 + seed,
        )
        .unwrap();
        for policy in [Sigma2Policy::ScaledTrue(3.0), Sigma2Policy::EmUpdate(3.0)] {
            let opts = EmSblOptions {
                record_cost: true,
                sigma2_policy: policy,
                i_max: 300,
                ..EmSblOptions::default()
            };
            let run = run_em_sbl(&p, &opts).map_err(|e| e.to_string())?;
            for (i, w) in run.cost_trace.windows(2).enumerate() {
                ensure!(
                    w[1] <= w[0] + 1e-9,
                    "seed {seed} {policy:?}: cost rose by {:.3e} at step {}",
                    w[1] - w[0],
                    i + 1
                );
            }
            steps += run.cost_trace.len() - 1;
        }
    }
    Ok(format!("{steps} EM steps, none increased the cost"))
}

/// `||gamma - (x^2 + tau)||^2 / ||gamma||^2` with `(x, tau)` the exact
/// posterior under `gamma` itself.
fn exact_fixed_point_residual(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    gamma: &DVector<f64>,
    sigma2: f64,
) -> f64 {
    let post = e_step_exact(
        a,
        y,
        &SblState::new(gamma.clone(), sigma2),
        EStepForm::Auto,
        false,
    )
    .unwrap();
    let implied = m_step_gamma(&post).map(|g| g.max(GAMMA_FLOOR));
    relative_change(&implied, gamma)
}

/// A converged EM-SBL run sits at an EM fixed point: one more exact E-step
/// reproduces its hyperparameters to the EM tolerance (measured with the
/// same squared statistic as the stopping rule).
pub fn em_fixed_point_consistency() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let p = generate_smv(&EnsembleSpec::iid(50, 100, seed), 20, 40.0, 80 + seed).unwrap();
        let opts = EmSblOptions::default();
        let run = run_em_sbl(&p, &opts).unwrap();
        ensure!(run.converged, "seed {seed} did not converge");
        let r = exact_fixed_point_residual(&p.a, &p.y, &run.state.gamma, run.state.sigma2);
        ensure!(r <= opts.eps_em, "seed {seed}: residual {r:.2e} > eps_em");
        worst = worst.max(r);
    }
    Ok(format!("worst residual {worst:.2e} (eps_em 1e-8)"))
}

// ---------------------------------------------------------------- GAMP

fn all_positive(v: &DVector<f64>) -> bool {
    v.iter().all(|x| *x > 0.0 && x.is_finite())
}

/// `tau_p`, `tau_s`, `tau_r`, `tau_x` stay strictly positive and finite at
/// every iteration, for every ensemble and damping factor.
pub fn gamp_variances_stay_positive() -> Check {
    let strategy = (
        0usize..5,
        any::<u64>(),
        4usize..=40,
        0.2f64..1.0,
        prop::sample::select(vec![1.0, 0.7, 0.3, 0.1]),
        -6.0f64..0.0,
    );
    runner(48)
        .run(&strategy, |(kind_idx, seed, m, ratio, theta, log_s2)| {
            let kind = EnsembleKind::ALL[kind_idx];
            let n = ((m as f64 / ratio).round() as usize).max(m + 1);
            let param = match kind {
                EnsembleKind::IidGaussian => 0.0,
                EnsembleKind::ColumnCorrelated => 0.9,
                EnsembleKind::LowRankProduct => 0.5 * (m - 1) as f64 / n as f64,
                EnsembleKind::IllConditioned => 1e3,
                EnsembleKind::NonzeroMean => 0.5,
            };
            let spec = EnsembleSpec::new(kind, m, n, param, seed);
            prop_assume!(spec.validate().is_ok());
            let p = generate_smv(&spec, (n / 5).max(1), 30.0, seed ^ 1).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gamma = DVector::from_fn(n, |_, _| 10f64.powf(rng.random_range(-8.0..1.0)));
            let sigma2 = 10f64.powf(log_s2);
            let mut st = GampState::cold_start(m, &gamma);
            for k in 0..150 {
                gamp_step(
                    &p.a,
                    &p.y,
                    Prior::ZeroMean(&gamma),
                    sigma2,
                    theta,
                    theta,
                    &mut st,
                );
                if !st.x_hat.iter().all(|x| x.is_finite()) {
                    // Undamped divergence on hard matrices is permitted; the
                    // variance recursion is independent of the means.
                    break;
                }
                prop_assert!(all_positive(&st.tau_p), "tau_p at k={k}");
                prop_assert!(all_positive(&st.tau_s), "tau_s at k={k}");
                prop_assert!(all_positive(&st.tau_r), "tau_r at k={k}");
                prop_assert!(all_positive(&st.tau_x), "tau_x at k={k}");
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("48 random instances over all ensembles and theta in {1, 0.7, 0.3, 0.1}".into())
}

/// The damped GAMP fixed point equals the exact posterior mean. Returns the
/// worst relative error over `count` instances cycling through the
/// i.i.d., column-correlated (0.5, 0.9), ill-conditioned (100) and
/// low-rank (R/N = 0.25) ensembles at `N = 64`, `M = 32`.
pub fn gamp_fixed_point_matches_exact_mean(count: u64) -> Check {
    let ens = [
        (EnsembleKind::IidGaussian, 0.0),
        (EnsembleKind::ColumnCorrelated, 0.5),
        (EnsembleKind::ColumnCorrelated, 0.9),
        (EnsembleKind::IllConditioned, 100.0),
        (EnsembleKind::LowRankProduct, 0.25),
    ];
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let (kind, param) = ens[(i % 5) as usize];
        let p = generate_smv(
            &EnsembleSpec::new(kind, 32, 64, param, 100 + i),
            10,
            30.0,
            200 + i,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(300 + i);
        let gamma = DVector::from_fn(64, |_, _| rng.random_range(0.01..2.0));
        let sigma2 = 3.0 * p.sigma2;
        // The squared stop statistic at 1e-26 leaves ~3e-13 relative motion.
        let cfg = choose_damping(&p.a, 1.1).unwrap().config(400_000, 1e-26);
        let mut st = GampState::cold_start(32, &gamma);
        let out = gamp_iterate(&p.a, &p.y, &gamma, sigma2, &mut st, &cfg, None)
            .map_err(|e| format!("instance {i} ({kind}): {e}"))?;
        ensure!(out.converged, "instance {i} ({kind}) hit k_max");
        let exact = e_step_exact(
            &p.a,
            &p.y,
            &SblState::new(gamma, sigma2),
            EStepForm::Auto,
            false,
        )
        .unwrap();
        let err = rel(&st.x_hat, &exact.x_hat);
        ensure!(
            err < 1e-6,
            "instance {i} ({kind}): relative error {err:.2e}"
        );
        worst = worst.max(err);
    }
    Ok(format!(
        "{count} instances, worst relative error {worst:.2e}"
    ))
}

fn converge_gamp(
    p: &SmvProblem,
    gamma: &DVector<f64>,
    sigma2: f64,
    theta: f64,
) -> Result<GampState, String> {
    let cfg = DampingConfig {
        theta_s: theta,
        theta_x: theta,
        k_max: 200_000,
        eps_gamp: 1e-26,
    };
    let mut st = GampState::cold_start(p.a.nrows(), gamma);
    let out =
        gamp_iterate(&p.a, &p.y, gamma, sigma2, &mut st, &cfg, None).map_err(|e| e.to_string())?;
    if !out.converged {
        return Err(format!("theta {theta} hit k_max"));
    }
    Ok(st)
}

/// Damping changes the path, not the destination: fixed points reached
/// with theta = 1 and theta = 0.3 coincide.
pub fn damping_does_not_move_fixed_points() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let p = generate_smv(&EnsembleSpec::iid(60, 120, seed), 15, 30.0, 10 + seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gamma = DVector::from_fn(120, |_, _| rng.random_range(0.05..2.0));
        let sigma2 = 3.0 * p.sigma2;
        let a = converge_gamp(&p, &gamma, sigma2, 1.0)?;
        let b = converge_gamp(&p, &gamma, sigma2, 0.3)?;
        let (ex, et) = (rel(&a.x_hat, &b.x_hat), rel(&a.tau_x, &b.tau_x));
        ensure!(
            ex < 1e-6 && et < 1e-6,
            "seed {seed}: mean {ex:.2e}, variance {et:.2e}"
        );
        worst = worst.max(ex).max(et);
    }
    Ok(format!("10 instances, worst relative gap {worst:.2e}"))
}

/// Textbook (undamped) GAMP for a Gaussian prior and AWGN output, written
/// in the usual sign convention: `p = A x - tau_p s`, `s = (y - p) / (tau_p + sigma2)`.
struct ReferenceGamp {
    x: Vec<f64>,
    tau_x: Vec<f64>,
    s: Vec<f64>,
    r: Vec<f64>,
    tau_r: Vec<f64>,
}

impl ReferenceGamp {
    fn new(m: usize, gamma: &[f64]) -> Self {
        Self {
            x: vec![0.0; gamma.len()],
            tau_x: gamma.to_vec(),
            s: vec![0.0; m],
            r: vec![0.0; gamma.len()],
            tau_r: vec![0.0; gamma.len()],
        }
    }

    fn step(&mut self, a: &DMatrix<f64>, y: &[f64], gamma: &[f64], sigma2: f64) {
        let (m, n) = a.shape();
        let mut tau_s = vec![0.0; m];
        for i in 0..m {
            let mut tau_p = 0.0;
            let mut ax = 0.0;
            for j in 0..n {
                tau_p += a[(i, j)] * a[(i, j)] * self.tau_x[j];
                ax += a[(i, j)] * self.x[j];
            }
            let p = ax - tau_p * self.s[i];
            self.s[i] = (y[i] - p) / (tau_p + sigma2);
            tau_s[i] = 1.0 / (tau_p + sigma2);
        }
        for j in 0..n {
            let mut prec = 0.0;
            let mut ats = 0.0;
            for i in 0..m {
                prec += a[(i, j)] * a[(i, j)] * tau_s[i];
                ats += a[(i, j)] * self.s[i];
            }
            self.tau_r[j] = 1.0 / prec;
            self.r[j] = self.x[j] + self.tau_r[j] * ats;
            self.x[j] = gamma[j] * self.r[j] / (gamma[j] + self.tau_r[j]);
            self.tau_x[j] = gamma[j] * self.tau_r[j] / (gamma[j] + self.tau_r[j]);
        }
    }
}

fn rel_slice(a: &[f64], b: &DVector<f64>) -> f64 {
    rel(&DVector::from_column_slice(a), b)
}

/// With theta_s = theta_x = 1 the library reproduces the textbook GAMP
/// sequence step by step (its `s` is the negated textbook `s`). Agreement
/// is to 1e-12 relative: the two loops sum in different orders.
pub fn undamped_matches_reference_loop() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let p = generate_smv(&EnsembleSpec::iid(30, 60, seed), 8, 30.0, seed + 40).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 90);
        let gamma = DVector::from_fn(60, |_, _| rng.random_range(0.05..2.0));
        let sigma2 = 3.0 * p.sigma2;
        let mut st = GampState::cold_start(30, &gamma);
        let mut reference = ReferenceGamp::new(30, gamma.as_slice());
        for k in 1..=40 {
            gamp_step(
                &p.a,
                &p.y,
                Prior::ZeroMean(&gamma),
                sigma2,
                1.0,
                1.0,
                &mut st,
            );
            reference.step(&p.a, p.y.as_slice(), gamma.as_slice(), sigma2);
            let neg_s: Vec<f64> = reference.s.iter().map(|v| -v).collect();
            let errs = [
                rel_slice(&reference.x, &st.x_hat),
                rel_slice(&reference.tau_x, &st.tau_x),
                rel_slice(&reference.r, &st.r),
                rel_slice(&reference.tau_r, &st.tau_r),
                rel_slice(&neg_s, &st.s),
            ];
            let e = errs.iter().copied().fold(0.0, f64::max);
            ensure!(
                e < 1e-12,
                "seed {seed} step {k}: deviation {e:.2e} ({errs:?})"
            );
            worst = worst.max(e);
        }
    }
    Ok(format!(
        "5 x 40 steps, worst relative deviation {worst:.2e}"
    ))
}

/// Restarting from a converged state stops within two iterations.
pub fn warm_start_terminates_fast() -> Check {
    let mut most = 0;
    for seed in 0..8u64 {
        let kind = [EnsembleKind::IidGaussian, EnsembleKind::ColumnCorrelated][seed as usize % 2];
        let p = generate_smv(
            &EnsembleSpec::new(kind, 50, 100, 0.9 * (seed % 2) as f64, seed),
            10,
            40.0,
            seed,
        )
        .unwrap();
        let gamma = DVector::from_element(100, 0.5);
        let sigma2 = 3.0 * p.sigma2;
        let cfg = choose_damping(&p.a, 1.1).unwrap().config(20_000, 1e-10);
        let mut st = GampState::cold_start(50, &gamma);
        let first = gamp_iterate(&p.a, &p.y, &gamma, sigma2, &mut st, &cfg, None).unwrap();
        ensure!(first.converged, "seed {seed}: cold start did not converge");
        let again = gamp_iterate(&p.a, &p.y, &gamma, sigma2, &mut st, &cfg, None).unwrap();
        ensure!(
            again.iterations <= 2,
            "seed {seed}: warm restart took {}",
            again.iterations
        );
        most = most.max(again.iterations);
    }
    Ok(format!(
        "8 instances, warm restarts took at most {most} iteration(s)"
    ))
}

// ---------------------------------------------------------------- GGAMP-SBL

/// A converged GGAMP-SBL run is an SBL fixed point: one more EM iteration
/// (warm E-step plus M-step, exactly as the solver would run it) moves
/// gamma by at most 10 eps_em in the squared relative statistic.
pub fn ggamp_fixed_point_consistency() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..30u64 {
        let rho = [0.0, 0.5, 0.9][seed as usize % 3];
        let p = generate_smv(
            &EnsembleSpec::new(EnsembleKind::ColumnCorrelated, 50, 100, rho, seed),
            15,
            40.0,
            9 + seed,
        )
        .unwrap();
        let opts = smv_recovery_options();
        let r = solve_smv(&p, &opts).map_err(|e| e.to_string())?;
        ensure!(r.converged, "seed {seed} did not converge");
        let one_more = GgampSblOptions {
            eps_em: f64::MIN_POSITIVE,
            i_max: r.em_iters + 1,
            ..opts.clone()
        };
        let next = solve_smv(&p, &one_more).map_err(|e| e.to_string())?;
        let res = relative_change(&next.gamma, &r.gamma);
        ensure!(
            res <= 10.0 * opts.eps_em,
            "seed {seed} (rho {rho}): residual {res:.2e}"
        );
        worst = worst.max(res / opts.eps_em);
    }
    Ok(format!("30 instances, worst residual {worst:.1} eps_em"))
}

/// Median NMSE of GGAMP-SBL and EM-SBL agree within 0.5 dB on 30 seeds.
pub fn ggamp_matches_em_sbl_nmse() -> Check {
    let mut lines = Vec::new();
    for rho in [0.0, 0.45] {
        let mut plan = ExperimentPlan::single(
            EnsembleKind::ColumnCorrelated,
            rho,
            128,
            64,
            Sparsity::Lambda(0.2),
            60.0,
            vec![SolverKind::EmSbl, SolverKind::GgampSbl],
            30,
        );
        plan.options.eps_em = RECOVERY_EPS;
        plan.options.eps_gamp = RECOVERY_EPS;
        let rep = run_plan(&plan).map_err(|e| e.to_string())?;
        let (em, gg) = (
            summary_median(&rep, SolverKind::EmSbl, rho),
            summary_median(&rep, SolverKind::GgampSbl, rho),
        );
        ensure!(
            (em - gg).abs() < 0.5,
            "rho {rho}: em_sbl {em:.2} dB vs ggamp_sbl {gg:.2} dB"
        );
        lines.push(format!("rho {rho}: {em:.2} vs {gg:.2} dB"));
    }
    Ok(lines.join("; "))
}

/// Worst relative per-step cost increase and worst final-cost gap to
/// EM-SBL over `seeds` seeds at N = 200, M = 100, K = 40, 60 dB.
pub struct CostDescentStats {
    pub worst_increase: f64,
    pub increasing_steps: usize,
    pub total_steps: usize,
    pub worst_final_gap: f64,
}

pub fn cost_descent_stats(rho: f64, seeds: u64) -> Result<CostDescentStats, String> {
    let mut stats = CostDescentStats {
        worst_increase: f64::NEG_INFINITY,
        increasing_steps: 0,
        total_steps: 0,
        worst_final_gap: 0.0,
    };
    for seed in 0..seeds {
        let spec = EnsembleSpec::new(EnsembleKind::ColumnCorrelated, 100, 200, rho, seed);
        let p = generate_smv(&spec, 40, 60.0, 1000 + seed).unwrap();
        let rows = cost_descent_report(&p, &smv_recovery_options()).map_err(|e| e.to_string())?;
        let g: Vec<f64> = rows.iter().filter_map(|r| r.chi_ggamp).collect();
        let e: Vec<f64> = rows.iter().filter_map(|r| r.chi_exact).collect();
        for w in g.windows(2) {
            let inc = (w[1] - w[0]) / w[0].abs();
            stats.worst_increase = stats.worst_increase.max(inc);
            if inc > 1e-6 {
                stats.increasing_steps += 1;
            }
            stats.total_steps += 1;
        }
        let (gf, ef) = (g[g.len() - 1], e[e.len() - 1]);
        stats.worst_final_gap = stats.worst_final_gap.max((gf - ef).abs() / ef.abs());
    }
    Ok(stats)
}

/// No GGAMP-SBL EM step raises the SBL cost by more than 1e-6 relative.
pub fn ggamp_cost_descent() -> Check {
    let mut lines = Vec::new();
    for rho in [0.0, 0.9] {
        let s = cost_descent_stats(rho, 4)?;
        ensure!(
            s.increasing_steps == 0,
            "rho {rho}: {} of {} steps increased the cost (worst {:.2e})",
            s.increasing_steps,
            s.total_steps,
            s.worst_increase
        );
        lines.push(format!(
            "rho {rho}: {} steps, worst change {:.2e}",
            s.total_steps, s.worst_increase
        ));
    }
    Ok(lines.join("; "))
}

/// Warm starts make the inner loop cheaper as EM proceeds: the last third
/// of the EM iterations averages fewer GAMP iterations than the first
/// third, and the final EM step needs at most three.
pub fn warm_start_efficiency() -> Check {
    let mut lines = Vec::new();
    for seed in 0..6u64 {
        let rho = [0.0, 0.5, 0.9][seed as usize % 3];
        let spec = EnsembleSpec::new(EnsembleKind::ColumnCorrelated, 100, 200, rho, seed);
        let p = generate_smv(&spec, 40, 60.0, 500 + seed).unwrap();
        let r = solve_smv(&p, &GgampSblOptions::default()).map_err(|e| e.to_string())?;
        let it = &r.inner_iters;
        let third = (it.len() / 3).max(1);
        let head = it[..third].iter().sum::<usize>() as f64 / third as f64;
        let tail = it[it.len() - third..].iter().sum::<usize>() as f64 / third as f64;
        let last = *it.last().unwrap();
        ensure!(
            tail < head,
            "seed {seed}: first third averages {head:.1}, last third {tail:.1}"
        );
        ensure!(
            last <= 3,
            "seed {seed} (rho {rho}): final EM step took {last} GAMP iterations"
        );
        lines.push(format!("{head:.0}->{tail:.1}"));
    }
    Ok(format!(
        "mean inner iterations first->last third: {}",
        lines.join(", ")
    ))
}

// ---------------------------------------------------------------- GGAMP-TSBL

/// Exact messages of one scalar AR(1) chain given within messages
/// `r_t = x_t + e_t`, `e_t ~ N(0, tau_t)`, from the dense joint Gaussian:
/// forward `(mean, var)` of `x_t | r_1..r_{t-1}`, backward `(mean, var)`
/// of the likelihood of `r_{t+1}..r_T` as a function of `x_t` (`None` at
/// the last frame), and the posterior means.
pub struct ChainReference {
    pub forward: Vec<(f64, f64)>,
    pub backward: Vec<Option<(f64, f64)>>,
    pub posterior: Vec<f64>,
}

fn ar1_cov(idx: &[usize], gamma: f64, beta: f64) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| {
        gamma * beta.powi((idx[i] as i32 - idx[j] as i32).abs())
    })
}

pub fn chain_reference(r: &[f64], tau: &[f64], gamma: f64, beta: f64) -> ChainReference {
    let frames = r.len();
    let mut forward = Vec::new();
    let mut backward = Vec::new();
    for t in 0..frames {
        let past: Vec<usize> = (0..t).collect();
        if past.is_empty() {
            forward.push((0.0, gamma));
        } else {
            let mut k = ar1_cov(&past, gamma, beta);
            for (i, &p) in past.iter().enumerate() {
                k[(i, i)] += tau[p];
            }
            let c = DVector::from_iterator(
                past.len(),
                past.iter().map(|&p| gamma * beta.powi((t - p) as i32)),
            );
            let inv = k.try_inverse().unwrap();
            let rp = DVector::from_iterator(past.len(), past.iter().map(|&p| r[p]));
            forward.push((
                (c.transpose() * &inv * rp)[0],
                gamma - (c.transpose() * &inv * &c)[0],
            ));
        }
        let future: Vec<usize> = (t + 1..frames).collect();
        if future.is_empty() {
            backward.push(None);
        } else {
            // r_f = beta^(f-t) x_t + (x_f - E[x_f | x_t]) + e_f.
            let c = DVector::from_iterator(
                future.len(),
                future.iter().map(|&f| beta.powi((f - t) as i32)),
            );
            let mut cov = ar1_cov(&future, gamma, beta) - &c * c.transpose() * gamma;
            for (i, &f) in future.iter().enumerate() {
                cov[(i, i)] += tau[f];
            }
            let inv = cov.try_inverse().unwrap();
            let rf = DVector::from_iterator(future.len(), future.iter().map(|&f| r[f]));
            let precision = (c.transpose() * &inv * &c)[0];
            let weighted = (c.transpose() * &inv * rf)[0];
            backward.push(Some((weighted / precision, 1.0 / precision)));
        }
    }
    let all: Vec<usize> = (0..frames).collect();
    let k = ar1_cov(&all, gamma, beta);
    let mut ky = k.clone();
    for t in 0..frames {
        ky[(t, t)] += tau[t];
    }
    let post = &k * ky.try_inverse().unwrap() * DVector::from_column_slice(r);
    ChainReference {
        forward,
        backward,
        posterior: post.iter().copied().collect(),
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1e-300)
}

/// Forward and backward sweeps reproduce exact chain inference on
/// `instances` random instances with T = 3, N = 8 (means and variances
/// to 1e-8 relative).
pub fn chain_messages_match_dense_inference(instances: u64) -> Check {
    let (frames, n) = (3usize, 8usize);
    let mut worst: f64 = 0.0;
    for inst in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(9_000 + inst);
        let beta = rng.random_range(-0.95..0.95);
        let gamma = DVector::from_fn(n, |_, _| rng.random_range(0.05..3.0));
        let r: Vec<DVector<f64>> = (0..frames)
            .map(|_| DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0)))
            .collect();
        let tau: Vec<DVector<f64>> = (0..frames)
            .map(|_| DVector::from_fn(n, |_, _| rng.random_range(0.02..2.0)))
            .collect();
        let prec: Vec<DVector<f64>> = tau.iter().map(|t| t.map(|v| 1.0 / v)).collect();
        let mut msgs = TemporalMessages::new(frames, &gamma);
        forward_pass(&mut msgs, &r, &prec, &gamma, beta);
        backward_pass(&mut msgs, &r, &prec, &gamma, beta);
        for j in 0..n {
            let rj: Vec<f64> = r.iter().map(|v| v[j]).collect();
            let tj: Vec<f64> = tau.iter().map(|v| v[j]).collect();
            let oracle = chain_reference(&rj, &tj, gamma[j], beta);
            for t in 0..frames {
                let (fm, fv) = oracle.forward[t];
                let fm_err = (msgs.eta[t][j] - fm).abs() / fm.abs().max(1e-12);
                let fv_err = (msgs.psi[t][j] - fv).abs() / fv;
                ensure!(
                    fv_err < 1e-8 && (fm_err < 1e-8 || (msgs.eta[t][j] - fm).abs() < 1e-14),
                    "instance {inst} n={j} t={t}: forward ({}, {}) vs ({fm}, {fv})",
                    msgs.eta[t][j],
                    msgs.psi[t][j]
                );
                worst = worst.max(fv_err);
                match oracle.backward[t] {
                    None => ensure!(
                        msgs.theta(t, j).is_none(),
                        "instance {inst}: last frame carries information"
                    ),
                    Some((bm, bv)) => {
                        let theta = msgs
                            .theta(t, j)
                            .ok_or(format!("instance {inst} t={t}: missing message"))?;
                        let phi = msgs.phi(t, j);
                        ensure!(
                            close(theta, bm, 1e-8) && close(phi, bv, 1e-8),
                            "instance {inst} n={j} t={t}: backward ({theta}, {phi}) vs ({bm}, {bv})"
                        );
                        worst = worst
                            .max((theta - bm).abs() / bm.abs())
                            .max((phi - bv).abs() / bv);
                    }
                }
                let (mean, var) = msgs.combined_prior(t);
                let post = (var[j] * rj[t] + tj[t] * mean[j]) / (var[j] + tj[t]);
                ensure!(
                    close(post, oracle.posterior[t], 1e-8),
                    "instance {inst} n={j} t={t}: posterior {post} vs {}",
                    oracle.posterior[t]
                );
            }
        }
    }
    Ok(format!(
        "{instances} instances x 8 chains, worst relative error {worst:.2e}"
    ))
}

/// With one frame the MMV solver is the SMV solver.
pub fn single_frame_matches_smv() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let kind = [EnsembleKind::IidGaussian, EnsembleKind::ColumnCorrelated][seed as usize % 2];
        let spec = EnsembleSpec::new(kind, 50, 100, 0.8 * (seed % 2) as f64, seed);
        let mmv = generate_mmv(&spec, 12, 1, 0.9, None, 40.0, 60 + seed).unwrap();
        let smv = smv_view(&mmv, 0);
        let a = solve_smv(&smv, &GgampSblOptions::default()).map_err(|e| e.to_string())?;
        let b = solve_mmv(&mmv, &TsblOptions::default()).map_err(|e| e.to_string())?;
        ensure!(
            a.em_iters == b.em_iters,
            "seed {seed}: {} vs {} EM iterations",
            a.em_iters,
            b.em_iters
        );
        let d = (&a.x_hat - &b.x_hat[0])
            .amax()
            .max((&a.gamma - &b.gamma).amax());
        ensure!(d <= 1e-10, "seed {seed}: max deviation {d:.2e}");
        worst = worst.max(d);
    }
    Ok(format!("5 instances, max deviation {worst:.2e}"))
}

/// Independent per-frame GAMP E-steps whose hyperparameters are shared
/// through the frame-averaged M-step, with the MMV stopping rule.
fn decoupled_reference(p: &MmvProblem, opts: &TsblOptions) -> (Vec<DVector<f64>>, usize) {
    let (m, n) = p.a.shape();
    let frames = p.frames();
    let cfg = choose_damping(&p.a, 1.1)
        .unwrap()
        .config(opts.k_max, opts.eps_gamp);
    let sigma2 = 3.0 * p.sigma2;
    let mut gamma = DVector::from_element(n, opts.gamma0);
    let mut states: Vec<GampState> = (0..frames)
        .map(|_| GampState::cold_start(m, &gamma))
        .collect();
    let mut x_prev = vec![DVector::zeros(n); frames];
    for i in 1..=opts.i_max {
        for (st, y) in states.iter_mut().zip(&p.y) {
            gamp_iterate(&p.a, y, &gamma, sigma2, st, &cfg, None).unwrap();
        }
        gamma = DVector::zeros(n);
        for st in &states {
            gamma += st.x_hat.component_mul(&st.x_hat) + &st.tau_x;
        }
        gamma = (gamma / frames as f64).map(|g| g.max(GAMMA_FLOOR));
        let change = states
            .iter()
            .zip(&x_prev)
            .map(|(st, old)| relative_change(&st.x_hat, old))
            .sum::<f64>()
            / frames as f64;
        x_prev = states.iter().map(|st| st.x_hat.clone()).collect();
        if change < opts.eps_em {
            return (x_prev, i);
        }
    }
    (x_prev, opts.i_max)
}

/// With beta = 0 the MMV solver equals the decoupled construction.
pub fn zero_beta_matches_decoupled() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..4u64 {
        let kind = [EnsembleKind::IidGaussian, EnsembleKind::ColumnCorrelated][seed as usize % 2];
        let spec = EnsembleSpec::new(kind, 40, 100, 0.6 * (seed % 2) as f64, seed);
        let p = generate_mmv(&spec, 8, 3, 0.0, None, 30.0, 70 + seed).unwrap();
        let opts = TsblOptions::default();
        let res = solve_mmv(&p, &opts).map_err(|e| e.to_string())?;
        let (x, iters) = decoupled_reference(&p, &opts);
        ensure!(
            res.em_iters == iters,
            "seed {seed}: {} vs {iters} EM iterations",
            res.em_iters
        );
        for (t, (got, want)) in res.x_hat.iter().zip(&x).enumerate() {
            let d = (got - want).amax();
            ensure!(d <= 1e-8, "seed {seed} frame {t}: deviation {d:.2e}");
            worst = worst.max(d);
        }
    }
    Ok(format!("4 instances x 3 frames, max deviation {worst:.2e}"))
}

/// The AR(1) M-step with a single frame is the SMV M-step, bit for bit.
pub fn mmv_m_step_single_frame_is_smv_m_step() -> Check {
    let strategy = (
        prop::collection::vec((-3.0f64..3.0, 0.0f64..2.0), 1..50),
        -0.99f64..0.99,
    );
    runner(64)
        .run(&strategy, |(entries, beta)| {
            let x = DVector::from_iterator(entries.len(), entries.iter().map(|e| e.0));
            let tau = DVector::from_iterator(entries.len(), entries.iter().map(|e| e.1));
            let mmv =
                m_step_mmv(std::slice::from_ref(&x), std::slice::from_ref(&tau), beta).unwrap();
            let post = sbl_core::Posterior {
                x_hat: x,
                tau_x: tau,
                sigma_x: None,
            };
            let smv = m_step_gamma(&post).map(|g| g.max(GAMMA_FLOOR));
            prop_assert_eq!(mmv, smv);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("64 random single-frame inputs, exact equality".into())
}

/// Forward variances stay positive and finite, backward precisions stay
/// non-negative and finite (zero is the no-information message), so the
/// backward variance phi is positive (infinite only as the no-information
/// sentinel) through full EM runs.
pub fn message_variances_stay_positive() -> Check {
    let mut checked = 0;
    for seed in 0..4u64 {
        let rho = [0.0, 0.9][seed as usize % 2];
        let beta = [0.9, -0.5, 0.99, 0.0][seed as usize];
        let spec = EnsembleSpec::new(EnsembleKind::ColumnCorrelated, 30, 60, rho, seed);
        let p = generate_mmv(&spec, 8, 4, beta, None, 30.0, seed).unwrap();
        let cfg = choose_damping(&p.a, 1.1).unwrap().config(200, 1e-8);
        let mut gamma = DVector::from_element(60, 1.0);
        let mut state = MmvState::cold_start(30, 4, &gamma);
        for _ in 0..15 {
            mmv_e_step(
                &p.a,
                &p.y,
                &gamma,
                beta,
                3.0 * p.sigma2,
                &mut state,
                &cfg,
                &SweepConfig::default(),
            )
            .map_err(|e| e.to_string())?;
            let msgs = &state.messages;
            for t in 0..4 {
                ensure!(
                    all_positive(&msgs.psi[t]),
                    "seed {seed} t={t}: forward variance not positive"
                );
                ensure!(
                    msgs.back_precision[t]
                        .iter()
                        .all(|v| *v >= 0.0 && v.is_finite()),
                    "seed {seed} t={t}: backward precision invalid"
                );
                for j in 0..60 {
                    ensure!(msgs.phi(t, j) > 0.0, "seed {seed} t={t}: phi not positive");
                }
                checked += 1;
            }
            let xs: Vec<_> = state.frames.iter().map(|f| f.x_hat.clone()).collect();
            let taus: Vec<_> = state.frames.iter().map(|f| f.tau_x.clone()).collect();
            gamma = m_step_mmv(&xs, &taus, beta).unwrap();
        }
    }
    Ok(format!("{checked} frame-message sets checked"))
}

// ---------------------------------------------------------------- oracles and harness

/// SKS with a single frame is the genie estimator.
pub fn sks_equals_genie_single_frame() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let spec = EnsembleSpec::new(EnsembleKind::ColumnCorrelated, 40, 80, 0.5, seed);
        let p = generate_mmv(&spec, 10, 1, 0.7, None, 30.0, seed).unwrap();
        let s = sks(&p, &SksOptions::default()).map_err(|e| e.to_string())?;
        let g = genie_mmse(&p.a, &p.y[0], p.sigma2, &p.support).unwrap();
        let e = rel(&s.x_hat[0], &g);
        ensure!(e < 1e-8, "seed {seed}: relative gap {e:.2e}");
        worst = worst.max(e);
    }
    Ok(format!("5 instances, worst relative gap {worst:.2e}"))
}

/// The genie is a floor: its median NMSE is at most every solver's median
/// at every sweep point (30 seeds).
pub fn genie_is_a_floor() -> Check {
    let mut plan = ExperimentPlan::single(
        EnsembleKind::ColumnCorrelated,
        0.0,
        100,
        50,
        Sparsity::Lambda(0.2),
        40.0,
        vec![SolverKind::EmSbl, SolverKind::GgampSbl, SolverKind::Genie],
        30,
    );
    plan.params = vec![0.0, 0.6];
    let rep = run_plan(&plan).map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    for rho in [0.0, 0.6] {
        let genie = summary_median(&rep, SolverKind::Genie, rho);
        for s in [SolverKind::EmSbl, SolverKind::GgampSbl] {
            let v = summary_median(&rep, s, rho);
            ensure!(
                genie <= v,
                "rho {rho}: genie {genie:.2} dB above {s} {v:.2} dB"
            );
        }
        lines.push(format!("rho {rho}: genie {genie:.2} dB"));
    }
    Ok(lines.join("; "))
}

/// Rerunning a plan, on a different number of worker threads, reproduces
/// record counts and NMSE values.
pub fn plan_is_reproducible() -> Check {
    let mut plan = ExperimentPlan::single(
        EnsembleKind::ColumnCorrelated,
        0.0,
        60,
        30,
        Sparsity::Lambda(0.2),
        40.0,
        vec![
            SolverKind::EmSbl,
            SolverKind::GgampSbl,
            SolverKind::GgampTsbl,
            SolverKind::Genie,
        ],
        4,
    );
    plan.params = vec![0.0, 0.8];
    plan.threads = Some(1);
    let a = run_plan(&plan).map_err(|e| e.to_string())?;
    plan.threads = Some(3);
    let b = run_plan(&plan).map_err(|e| e.to_string())?;
    ensure!(a.records.len() == b.records.len(), "record counts differ");
    ensure!(
        a.records.len() == 2 * 4 * 4,
        "expected 32 records, got {}",
        a.records.len()
    );
    for (x, y) in a.records.iter().zip(&b.records) {
        let (u, v) = (x.nmse_db.unwrap_or(f64::NAN), y.nmse_db.unwrap_or(f64::NAN));
        ensure!(
            (u - v).abs() <= 1e-12,
            "{} seed {}: {u} vs {v}",
            x.solver,
            x.seed
        );
        ensure!(
            x.em_iters == y.em_iters && x.converged == y.converged,
            "{} seed {}: counters differ",
            x.solver,
            x.seed
        );
    }
    Ok(format!(
        "{} records identical across 1 and 3 threads",
        a.records.len()
    ))
}

/// Generation is excluded from timing: a solver that returns zeros costs
/// less than a millisecond per N = 200 instance.
pub fn noop_timing_is_negligible() -> Check {
    let plan = ExperimentPlan::single(
        EnsembleKind::IllConditioned,
        100.0,
        200,
        100,
        Sparsity::Lambda(0.2),
        60.0,
        vec![SolverKind::Noop],
        20,
    );
    let start = Instant::now();
    let rep = run_plan(&plan).map_err(|e| e.to_string())?;
    let wall = start.elapsed().as_secs_f64();
    let slowest = rep.records.iter().map(|r| r.runtime_s).fold(0.0, f64::max);
    ensure!(slowest < 1e-3, "no-op solver took {slowest:.2e} s");
    Ok(format!(
        "slowest no-op {slowest:.1e} s against {:.1e} s per cell including generation",
        wall / 20.0
    ))
}

/// Medians degrade monotonically with column correlation for every solver
/// (the 360-record sweep of the harness documentation).
pub fn rho_sweep_degrades_monotonically() -> Check {
    let mut plan = ExperimentPlan::single(
        EnsembleKind::ColumnCorrelated,
        0.0,
        200,
        100,
        Sparsity::Lambda(0.2),
        60.0,
        vec![SolverKind::EmSbl, SolverKind::GgampSbl, SolverKind::Genie],
        30,
    );
    let rhos = [0.0, 0.3, 0.6, 0.9];
    plan.params = rhos.to_vec();
    plan.options.eps_em = RECOVERY_EPS;
    plan.options.eps_gamp = RECOVERY_EPS;
    let rep = run_plan(&plan).map_err(|e| e.to_string())?;
    ensure!(
        rep.records.len() == 360,
        "expected 360 records, got {}",
        rep.records.len()
    );
    let mut lines = Vec::new();
    for s in [SolverKind::EmSbl, SolverKind::GgampSbl, SolverKind::Genie] {
        let m: Vec<f64> = rhos.iter().map(|&r| summary_median(&rep, s, r)).collect();
        ensure!(
            m.windows(2).all(|w| w[1] >= w[0]),
            "{s} medians not monotone: {m:?}"
        );
        lines.push(format!("{s} {:.1}..{:.1}", m[0], m[3]));
    }
    Ok(lines.join("; "))
}

/// NMSE and TNMSE identities on random vectors.
pub fn metric_identities() -> Check {
    let strategy = (
        prop::collection::vec(-5.0f64..5.0, 1..40),
        -3.0f64..3.0,
        0.01f64..100.0,
    );
    runner(128)
        .run(&strategy, |(xs, c, scale)| {
            let x = DVector::from_vec(xs);
            prop_assume!(x.norm_squared() > 1e-6);
            prop_assert_eq!(nmse_db(&x, &x).unwrap(), DB_FLOOR);
            prop_assert_eq!(nmse_db(&DVector::zeros(x.len()), &x).unwrap(), 0.0);
            prop_assert!(nmse_db(&(&x * 2.0), &x).unwrap().abs() < 1e-12);
            let expected = 20.0 * (c - 1.0f64).abs().log10();
            prop_assume!((c - 1.0f64).abs() > 1e-6);
            prop_assert!((nmse_db(&(&x * c), &x).unwrap() - expected).abs() < 1e-9);
            let y = x.map(|v| v + 0.1);
            let scaled = nmse_db(&(&y * scale), &(&x * scale)).unwrap();
            prop_assert!((scaled - nmse_db(&y, &x).unwrap()).abs() < 1e-9);
            prop_assert_eq!(
                tnmse_db(std::slice::from_ref(&y), std::slice::from_ref(&x)).unwrap(),
                nmse_db(&y, &x).unwrap()
            );
            let t = tnmse_db(
                &[x.clone(), DVector::zeros(x.len())],
                &[x.clone(), x.clone()],
            )
            .unwrap();
            prop_assert!((t - 10.0 * 0.5f64.log10()).abs() < 1e-12);
            let per_frame =
                frame_nmse_db(&[y.clone(), x.clone()], &[x.clone(), x.clone()]).unwrap();
            prop_assert_eq!(per_frame, vec![nmse_db(&y, &x).unwrap(), DB_FLOOR]);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    prop_assert_zero_signal_rejected()?;
    Ok("128 random vectors".into())
}

fn prop_assert_zero_signal_rejected() -> Result<(), String> {
    let z = DVector::zeros(3);
    ensure!(nmse_db(&z, &z).is_err(), "zero signal accepted by nmse");
    ensure!(
        tnmse_db(std::slice::from_ref(&z), std::slice::from_ref(&z)).is_err(),
        "zero frame accepted by tnmse"
    );
    Ok(())
}

/// Every solver is a deterministic function of its input.
pub fn solvers_are_deterministic() -> Check {
    let spec = EnsembleSpec::new(EnsembleKind::ColumnCorrelated, 40, 80, 0.7, 3);
    let p = generate_smv(&spec, 10, 30.0, 4).unwrap();
    let q = generate_mmv(&spec, 10, 3, 0.8, None, 30.0, 5).unwrap();
    let g = GgampSblOptions::default();
    ensure!(
        solve_smv(&p, &g).unwrap().x_hat == solve_smv(&p, &g).unwrap().x_hat,
        "ggamp_sbl differs between runs"
    );
    let e = EmSblOptions::default();
    ensure!(
        run_em_sbl(&p, &e).unwrap().posterior.x_hat == run_em_sbl(&p, &e).unwrap().posterior.x_hat,
        "em_sbl differs between runs"
    );
    let t = TsblOptions::default();
    ensure!(
        solve_mmv(&q, &t).unwrap().x_hat == solve_mmv(&q, &t).unwrap().x_hat,
        "ggamp_tsbl differs"
    );
    let literal = TsblOptions {
        schedule: sbl_core::Schedule::Literal,
        parallel_frames: true,
        damping: DampingPolicy::Fixed {
            theta_s: 0.3,
            theta_x: 0.3,
        },
        i_max: 3,
        ..TsblOptions::default()
    };
    let sequential = TsblOptions {
        parallel_frames: false,
        ..literal.clone()
    };
    ensure!(
        solve_mmv(&q, &literal).unwrap().x_hat == solve_mmv(&q, &sequential).unwrap().x_hat,
        "frame-parallel execution changes the result"
    );
    ensure!(
        sks(&q, &SksOptions::default()).unwrap().x_hat
            == sks(&q, &SksOptions::default()).unwrap().x_hat,
        "sks differs"
    );
    Ok("ggamp_sbl, em_sbl, ggamp_tsbl (both schedules, parallel frames) and sks are bitwise repeatable".into())
}

/// Fraction of per-frame NMSE values shared by frames of an MMV instance is
/// consistent with TNMSE (used by the harness when `T > 1`).
pub fn frame_metrics_average_to_tnmse(p: &MmvProblem, x: &[DVector<f64>]) -> Result<(), String> {
    let per = frame_nmse_db(x, &p.x_true).map_err(|e| e.to_string())?;
    let avg = per.iter().map(|db| 10f64.powf(db / 10.0)).sum::<f64>() / per.len() as f64;
    let t = tnmse_db(x, &p.x_true).unwrap();
    ensure!(
        (10.0 * avg.log10() - t).abs() < 1e-9,
        "frame NMSE average {avg} vs TNMSE {t}"
    );
    Ok(())
}

/// Every property check, in module order, for the acceptance summary.
/// A named check, as listed in the acceptance summary.
pub type NamedCheck = (&'static str, fn() -> Check);

pub fn all_property_checks() -> Vec<NamedCheck> {
    vec![
        ("generation determinism", generation_is_deterministic),
        (
            "neutral ensembles are i.i.d.",
            neutral_ensembles_match_iid_moments,
        ),
        ("AR(1) stationarity", ar1_rows_are_stationary),
        ("exact E-step form equivalence", exact_forms_agree),
        ("EM-SBL cost monotonicity", em_cost_is_monotone),
        ("EM-SBL fixed-point consistency", em_fixed_point_consistency),
        ("GAMP variance positivity", gamp_variances_stay_positive),
        ("GAMP fixed point = exact mean (N<=128)", || {
            gamp_fixed_point_matches_exact_mean(10)
        }),
        (
            "damping-neutral fixed points",
            damping_does_not_move_fixed_points,
        ),
        (
            "undamped = reference GAMP loop",
            undamped_matches_reference_loop,
        ),
        ("warm start <= 2 iterations", warm_start_terminates_fast),
        (
            "GGAMP-SBL fixed-point consistency",
            ggamp_fixed_point_consistency,
        ),
        (
            "GGAMP-SBL vs EM-SBL NMSE < 0.5 dB",
            ggamp_matches_em_sbl_nmse,
        ),
        ("GGAMP-SBL approximate cost descent", ggamp_cost_descent),
        ("GGAMP-SBL warm-start efficiency", warm_start_efficiency),
        ("TSBL T=1 reduction", single_frame_matches_smv),
        ("TSBL beta=0 decoupling", zero_beta_matches_decoupled),
        ("TSBL chain-BP equivalence", || {
            chain_messages_match_dense_inference(20)
        }),
        (
            "TSBL single-frame M-step",
            mmv_m_step_single_frame_is_smv_m_step,
        ),
        (
            "TSBL message variance positivity",
            message_variances_stay_positive,
        ),
        ("SKS = genie at T=1", sks_equals_genie_single_frame),
        ("genie is a floor", genie_is_a_floor),
        ("plan reproducibility", plan_is_reproducible),
        ("timing isolation", noop_timing_is_negligible),
        ("rho sweep monotone", rho_sweep_degrades_monotonically),
        ("metric identities", metric_identities),
        ("solver determinism", solvers_are_deterministic),
    ]
}

/// Median helper re-exported for the acceptance target.
pub fn median_of(values: &[f64]) -> f64 {
    med(values)
}

pub fn smv_problem(p: &MmvProblem, t: usize) -> SmvProblem {
    smv_view(p, t)
}

pub fn nmse_of(x: &DVector<f64>, truth: &DVector<f64>) -> f64 {
    nmse_db(x, truth).unwrap_or(f64::NAN)
}
