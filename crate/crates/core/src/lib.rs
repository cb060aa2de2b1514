//! Sparse signal recovery with sparse Bayesian learning (SBL).
//!
//! The crate provides
//!
//! * [`matgen`]: structured measurement-matrix ensembles and synthetic
//!   single/multiple measurement vector (SMV/MMV) problems,
//! * [`em_sbl`]: exact EM-SBL with a dense Gaussian E-step,
//! * [`gamp`]: the damped Gaussian GAMP inner loop and damping selection,
//! * [`ggamp_sbl`]: GGAMP-SBL, EM-SBL with the GAMP E-step,
//! * [`tsbl`]: GGAMP-TSBL for temporally correlated MMV problems,
//! * [`oracles`]: support-aware genie bounds,
//! * [`experiment`]: sweep plans, result records and summaries.

// Validation is written `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod em_sbl;
pub mod error;
pub mod experiment;
pub mod fixture;
pub mod gamp;
pub mod ggamp_sbl;
pub mod matgen;
pub mod metrics;
pub mod model;
pub mod oracles;
pub mod tsbl;

pub use nalgebra::{DMatrix, DVector};

pub use em_sbl::{
    e_step_exact, run_em_sbl, sbl_cost, EStepForm, EmSblOptions, EmSblRun, Posterior, SblState,
};
pub use error::{Error, Result};
pub use experiment::{
    run_plan, summarize, ExperimentPlan, PlanReport, ResultRecord, SolverKind, SolverOptions,
    Sparsity, SummaryRow,
};
pub use fixture::{FixtureKind, ProblemFixture};
pub use gamp::{choose_damping, damping_threshold, gamp_iterate, DampingConfig, GampState};
pub use ggamp_sbl::{solve_smv, DampingPolicy, GgampSblOptions, SolveResult};
pub use matgen::{
    generate_matrix, generate_mmv, generate_smv, EnsembleKind, EnsembleSpec, MmvProblem, SmvProblem,
};
pub use metrics::{nmse_db, tnmse_db, DB_FLOOR};
pub use model::{Sigma2Policy, GAMMA_FLOOR};
pub use oracles::{genie_mmse, sks, SksOptions, SksResult};
pub use tsbl::{solve_mmv, MmvSolveResult, Schedule, TsblOptions};
