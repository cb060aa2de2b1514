//! Monte-Carlo experiment harness: plan files, sweep execution, result
//! records and summary statistics.
//!
//! A plan is the cartesian product of ensemble parameters, problem sizes
//! and measurement ratios ("points"), crossed with a list of solvers and a
//! number of seeds. Every (point, solver, seed) cell regenerates its problem
//! from the seed, so cells are independent and the same instance is shown to
//! every solver. Only the solver call is timed.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em_sbl::{run_em_sbl, EmSblOptions};
use crate::error::{domain, Error, Result};
use crate::fixture::{FixtureKind, ProblemFixture};
use crate::ggamp_sbl::{solve_smv, DampingPolicy, GgampSblOptions};
use crate::matgen::{
    generate_mmv, generate_smv, EnsembleKind, EnsembleSpec, MmvProblem, SmvProblem,
};
use crate::metrics::tnmse_db;
use crate::model::Sigma2Policy;
use crate::oracles::{genie_mmse, sks, SksOptions};
use crate::tsbl::{solve_mmv, Schedule, TsblOptions};

/// Algorithms the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// Exact EM-SBL (matrix inversions every iteration).
    EmSbl,
    /// Damped GAMP E-step SBL for a single measurement vector.
    GgampSbl,
    /// Damped GAMP SBL with AR(1) temporal messages.
    GgampTsbl,
    /// Support-aware MMSE estimator (per frame when `T > 1`).
    Genie,
    /// Support-aware Kalman smoother.
    Sks,
    /// Returns the zero estimate; measures harness overhead.
    Noop,
}

impl SolverKind {
    pub const ALL: [SolverKind; 6] = [
        SolverKind::EmSbl,
        SolverKind::GgampSbl,
        SolverKind::GgampTsbl,
        SolverKind::Genie,
        SolverKind::Sks,
        SolverKind::Noop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::EmSbl => "em_sbl",
            SolverKind::GgampSbl => "ggamp_sbl",
            SolverKind::GgampTsbl => "ggamp_tsbl",
            SolverKind::Genie => "genie",
            SolverKind::Sks => "sks",
            SolverKind::Noop => "noop",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SolverKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| domain("solver", format!("unknown solver `{s}`")))
    }
}

/// How the number of nonzeros is derived at each point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sparsity {
    /// `K = round(lambda * N)`.
    Lambda(f64),
    /// Fixed `K`.
    K(usize),
    /// `K = round(M / ratio)`, e.g. three measurements per nonzero.
    MeasurementsPerNonzero(f64),
}

impl Sparsity {
    pub fn nonzeros(&self, n: usize, m: usize) -> usize {
        match *self {
            Sparsity::Lambda(lambda) => (lambda * n as f64).round() as usize,
            Sparsity::K(k) => k,
            Sparsity::MeasurementsPerNonzero(ratio) => (m as f64 / ratio).round() as usize,
        }
    }
}

impl Default for Sparsity {
    fn default() -> Self {
        Sparsity::Lambda(0.2)
    }
}

/// Options shared by all solvers of a plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub damping: DampingPolicy,
    pub k_max: usize,
    pub eps_gamp: f64,
    pub i_max: usize,
    pub eps_em: f64,
    pub gamma0: f64,
    pub sigma2_policy: Sigma2Policy,
    pub schedule: Schedule,
}

impl Default for SolverOptions {
    fn default() -> Self {
        let g = GgampSblOptions::default();
        Self {
            damping: g.damping,
            k_max: g.k_max,
            eps_gamp: g.eps_gamp,
            i_max: g.i_max,
            eps_em: g.eps_em,
            gamma0: g.gamma0,
            sigma2_policy: g.sigma2_policy,
            schedule: Schedule::default(),
        }
    }
}

impl SolverOptions {
    pub fn ggamp(&self) -> GgampSblOptions {
        GgampSblOptions {
            damping: self.damping,
            k_max: self.k_max,
            eps_gamp: self.eps_gamp,
            i_max: self.i_max,
            eps_em: self.eps_em,
            gamma0: self.gamma0,
            sigma2_policy: self.sigma2_policy,
            trace_cost: false,
        }
    }

    pub fn em(&self) -> EmSblOptions {
        self.ggamp().exact_reference()
    }

    pub fn tsbl(&self) -> TsblOptions {
        TsblOptions {
            damping: self.damping,
            k_max: self.k_max,
            eps_gamp: self.eps_gamp,
            i_max: self.i_max,
            eps_em: self.eps_em,
            gamma0: self.gamma0,
            sigma2_policy: self.sigma2_policy,
            schedule: self.schedule,
            ..TsblOptions::default()
        }
    }
}

fn default_m_over_n() -> Vec<f64> {
    vec![0.5]
}

fn default_t() -> usize {
    1
}

fn default_seeds() -> usize {
    30
}

/// A Monte-Carlo sweep, usually read from a TOML file:
///
/// ```toml
/// ensemble = "column_correlated"
/// params = [0.0, 0.45, 0.9]
/// n = [200]
/// m_over_n = [0.5]
/// sparsity = { lambda = 0.2 }
/// snr_db = 60.0
/// solvers = ["em_sbl", "ggamp_sbl", "genie"]
/// seeds = 30
///
/// [options]
/// eps_em = 1e-8
/// damping = { mode = "auto", safety = 1.1 }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub ensemble: EnsembleKind,
    /// Ensemble deviation grid (`rho`, `R/N`, `kappa` or `mu`).
    pub params: Vec<f64>,
    /// Signal lengths.
    pub n: Vec<usize>,
    /// Measurement ratios, used when `m` is empty.
    #[serde(default = "default_m_over_n")]
    pub m_over_n: Vec<f64>,
    /// Explicit measurement counts; overrides `m_over_n`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub m: Vec<usize>,
    #[serde(default)]
    pub sparsity: Sparsity,
    /// Frames per instance; `T > 1` draws AR(1) rows.
    #[serde(default = "default_t")]
    pub t: usize,
    #[serde(default)]
    pub beta: f64,
    pub snr_db: f64,
    pub solvers: Vec<SolverKind>,
    /// Trials per point.
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    /// Trials use seeds `seed_offset .. seed_offset + seeds`.
    #[serde(default)]
    pub seed_offset: u64,
    /// Worker threads; `None` uses rayon's default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default)]
    pub options: SolverOptions,
    /// Result CSV written by [`run_plan`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

/// One point of the sweep grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanPoint {
    pub param: f64,
    pub n: usize,
    pub m: usize,
    pub k: usize,
}

impl ExperimentPlan {
    /// A one-point plan with default options.
    #[allow(clippy::too_many_arguments)]
    pub fn single(
        ensemble: EnsembleKind,
        param: f64,
        n: usize,
        m: usize,
        sparsity: Sparsity,
        snr_db: f64,
        solvers: Vec<SolverKind>,
        seeds: usize,
    ) -> Self {
        Self {
            name: None,
            ensemble,
            params: vec![param],
            n: vec![n],
            m_over_n: default_m_over_n(),
            m: vec![m],
            sparsity,
            t: 1,
            beta: 0.0,
            snr_db,
            solvers,
            seeds,
            seed_offset: 0,
            threads: None,
            options: SolverOptions::default(),
            output: None,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let plan: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut s = String::new();
        File::open(path)?.read_to_string(&mut s)?;
        Self::from_toml_str(&s)
    }

    /// Points in canonical order: parameter, then `N`, then `M`.
    pub fn points(&self) -> Vec<PlanPoint> {
        let mut out = Vec::new();
        for &param in &self.params {
            for &n in &self.n {
                let ms: Vec<usize> = if self.m.is_empty() {
                    self.m_over_n
                        .iter()
                        .map(|r| (r * n as f64).round() as usize)
                        .collect()
                } else {
                    self.m.clone()
                };
                for m in ms {
                    let k = self.sparsity.nonzeros(n, m);
                    out.push(PlanPoint { param, n, m, k });
                }
            }
        }
        out
    }

    /// Number of (point, solver, seed) cells.
    pub fn cell_count(&self) -> usize {
        self.points().len() * self.solvers.len() * self.seeds
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.is_empty() {
            return Err(domain("params", "grid is empty"));
        }
        if self.n.is_empty() {
            return Err(domain("n", "grid is empty"));
        }
        if self.m.is_empty() && self.m_over_n.is_empty() {
            return Err(domain("m_over_n", "grid is empty"));
        }
        if self.solvers.is_empty() {
            return Err(domain("solvers", "list is empty"));
        }
        if self.seeds == 0 {
            return Err(domain("seeds", "need at least one seed per point"));
        }
        if self.t == 0 {
            return Err(domain("t", "need at least one frame"));
        }
        if !(self.beta.abs() < 1.0) {
            return Err(domain("beta", "must satisfy |beta| < 1"));
        }
        if !self.snr_db.is_finite() {
            return Err(domain("snr_db", "must be finite"));
        }
        if self.threads == Some(0) {
            return Err(domain("threads", "must be positive"));
        }
        for p in self.points() {
            EnsembleSpec::new(self.ensemble, p.m, p.n, p.param, 0).validate()?;
            if p.k == 0 || p.k > p.n {
                return Err(domain(
                    "sparsity",
                    format!(
                        "K = {} is outside 1..={} at N = {}, M = {}",
                        p.k, p.n, p.n, p.m
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Signal seed paired with matrix seed `seed` (a SplitMix64 step, so the two
/// random streams never coincide).
pub fn signal_seed(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One row of the result CSV. `nmse_db` holds the TNMSE when `t > 1` and is
/// empty when the solver failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub solver: SolverKind,
    pub ensemble: EnsembleKind,
    pub param: f64,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub t: usize,
    pub beta: f64,
    pub snr_db: f64,
    pub seed: u64,
    pub nmse_db: Option<f64>,
    pub runtime_s: f64,
    pub em_iters: usize,
    pub inner_iters_total: usize,
    pub converged: bool,
}

/// The instance shown to every solver of one (point, seed) cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Instance {
    Smv(SmvProblem),
    Mmv(MmvProblem),
}

impl Instance {
    pub fn generate(plan: &ExperimentPlan, point: &PlanPoint, seed: u64) -> Result<Self> {
        let spec = EnsembleSpec::new(plan.ensemble, point.m, point.n, point.param, seed);
        if plan.t == 1 {
            generate_smv(&spec, point.k, plan.snr_db, signal_seed(seed)).map(Instance::Smv)
        } else {
            generate_mmv(
                &spec,
                point.k,
                plan.t,
                plan.beta,
                None,
                plan.snr_db,
                signal_seed(seed),
            )
            .map(Instance::Mmv)
        }
    }

    pub fn from_fixture(fixture: ProblemFixture) -> Result<Self> {
        match fixture.kind {
            FixtureKind::Smv => fixture.into_smv().map(Instance::Smv),
            FixtureKind::Mmv => fixture.into_mmv().map(Instance::Mmv),
        }
    }

    pub fn to_fixture(&self) -> ProblemFixture {
        match self {
            Instance::Smv(p) => ProblemFixture::from(p),
            Instance::Mmv(p) => ProblemFixture::from(p),
        }
    }

    /// Single-frame problems viewed as an MMV problem with `T = 1`.
    fn as_mmv(&self, beta: f64) -> MmvProblem {
        match self {
            Instance::Mmv(p) => p.clone(),
            Instance::Smv(p) => {
                let mut gamma_true = DVector::zeros(p.x_true.len());
                for &i in &p.support {
                    gamma_true[i] = 1.0;
                }
                MmvProblem {
                    a: p.a.clone(),
                    y: vec![p.y.clone()],
                    x_true: vec![p.x_true.clone()],
                    sigma2: p.sigma2,
                    beta,
                    support: p.support.clone(),
                    gamma_true,
                }
            }
        }
    }

    /// Frames as independent SMV problems.
    fn frames(&self) -> Vec<SmvProblem> {
        match self {
            Instance::Smv(p) => vec![p.clone()],
            Instance::Mmv(p) => (0..p.frames())
                .map(|t| SmvProblem {
                    a: p.a.clone(),
                    y: p.y[t].clone(),
                    x_true: p.x_true[t].clone(),
                    sigma2: p.sigma2,
                    support: p.support.clone(),
                })
                .collect(),
        }
    }

    pub fn x_true(&self) -> Vec<DVector<f64>> {
        match self {
            Instance::Smv(p) => vec![p.x_true.clone()],
            Instance::Mmv(p) => p.x_true.clone(),
        }
    }
}

/// What a solver run produced, before scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOutput {
    pub x_hat: Vec<DVector<f64>>,
    pub em_iters: usize,
    pub inner_iters_total: usize,
    pub converged: bool,
}

impl SolverOutput {
    fn direct(x_hat: Vec<DVector<f64>>) -> Self {
        Self {
            x_hat,
            em_iters: 0,
            inner_iters_total: 0,
            converged: true,
        }
    }
}

/// Run one solver on one instance. Single-vector solvers treat the frames of
/// an MMV instance independently; counters are summed over frames.
pub fn run_solver(
    solver: SolverKind,
    instance: &Instance,
    opts: &SolverOptions,
    beta: f64,
) -> Result<SolverOutput> {
    let per_frame = |f: &dyn Fn(&SmvProblem) -> Result<SolverOutput>| -> Result<SolverOutput> {
        let mut total = SolverOutput::direct(Vec::new());
        for frame in instance.frames() {
            let out = f(&frame)?;
            total.x_hat.extend(out.x_hat);
            total.em_iters += out.em_iters;
            total.inner_iters_total += out.inner_iters_total;
            total.converged &= out.converged;
        }
        Ok(total)
    };
    match solver {
        SolverKind::Noop => Ok(SolverOutput::direct(
            instance
                .x_true()
                .iter()
                .map(|x| DVector::zeros(x.len()))
                .collect(),
        )),
        SolverKind::Genie => per_frame(&|p| {
            genie_mmse(&p.a, &p.y, p.sigma2, &p.support).map(|x| SolverOutput::direct(vec![x]))
        }),
        SolverKind::EmSbl => {
            let em = opts.em();
            per_frame(&|p| {
                let run = run_em_sbl(p, &em)?;
                Ok(SolverOutput {
                    x_hat: vec![run.posterior.x_hat],
                    em_iters: run.state.em_iter,
                    inner_iters_total: 0,
                    converged: run.converged,
                })
            })
        }
        SolverKind::GgampSbl => {
            let g = opts.ggamp();
            per_frame(&|p| {
                let r = solve_smv(p, &g)?;
                Ok(SolverOutput {
                    x_hat: vec![r.x_hat],
                    em_iters: r.em_iters,
                    inner_iters_total: r.inner_iters_total,
                    converged: r.converged,
                })
            })
        }
        SolverKind::GgampTsbl => {
            let r = solve_mmv(&instance.as_mmv(beta), &opts.tsbl())?;
            Ok(SolverOutput {
                x_hat: r.x_hat,
                em_iters: r.em_iters,
                inner_iters_total: r.inner_iters_total,
                converged: r.converged,
            })
        }
        SolverKind::Sks => {
            let r = sks(&instance.as_mmv(beta), &SksOptions::default())?;
            Ok(SolverOutput {
                x_hat: r.x_hat,
                em_iters: 0,
                inner_iters_total: r.iterations,
                converged: r.converged,
            })
        }
    }
}

/// Generate, solve and score one cell. Solver errors become a record with
/// `converged = false` and no NMSE; only generation errors propagate.
pub fn run_cell(
    plan: &ExperimentPlan,
    point: &PlanPoint,
    solver: SolverKind,
    seed: u64,
) -> Result<ResultRecord> {
    let instance = Instance::generate(plan, point, seed)?;
    let start = Instant::now();
    let outcome = run_solver(solver, &instance, &plan.options, plan.beta);
    let runtime_s = start.elapsed().as_secs_f64();
    let mut record = ResultRecord {
        solver,
        ensemble: plan.ensemble,
        param: point.param,
        n: point.n,
        m: point.m,
        k: point.k,
        t: plan.t,
        beta: plan.beta,
        snr_db: plan.snr_db,
        seed,
        nmse_db: None,
        runtime_s,
        em_iters: 0,
        inner_iters_total: 0,
        converged: false,
    };
    match outcome.and_then(|out| tnmse_db(&out.x_hat, &instance.x_true()).map(|db| (out, db))) {
        Ok((out, db)) => {
            record.nmse_db = Some(db);
            record.em_iters = out.em_iters;
            record.inner_iters_total = out.inner_iters_total;
            record.converged = out.converged;
        }
        Err(e) => {
            log::warn!(
                "{solver} failed at {}={} N={} M={} seed={seed}: {e}",
                plan.ensemble,
                point.param,
                point.n,
                point.m
            );
        }
    }
    Ok(record)
}

/// Records and per-point summary of a finished plan.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanReport {
    pub records: Vec<ResultRecord>,
    pub summary: Vec<SummaryRow>,
}

/// Execute every cell on a worker pool. Records come back in canonical
/// (point, solver, seed) order; if the plan names an output file the CSV is
/// written there once all cells have finished.
pub fn run_plan(plan: &ExperimentPlan) -> Result<PlanReport> {
    plan.validate()?;
    let points = plan.points();
    let cells: Vec<(usize, SolverKind, u64)> = points
        .iter()
        .enumerate()
        .flat_map(|(pi, _)| {
            plan.solvers.iter().flat_map(move |&s| {
                (0..plan.seeds as u64).map(move |i| (pi, s, plan.seed_offset + i))
            })
        })
        .collect();
    log::info!("running {} cells over {} points", cells.len(), points.len());

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(threads) = plan.threads {
        builder = builder.num_threads(threads);
    }
    let pool = builder.build().map_err(|e| Error::Config(e.to_string()))?;
    let records: Vec<ResultRecord> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(pi, solver, seed)| run_cell(plan, &points[pi], solver, seed))
            .collect::<Result<Vec<_>>>()
    })?;

    if let Some(path) = &plan.output {
        write_records_csv(File::create(path)?, &records)?;
    }
    let summary = summarize(&records);
    Ok(PlanReport { records, summary })
}

pub fn write_records_csv<W: Write>(w: W, records: &[ResultRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    for r in records {
        writer.serialize(r)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_records_csv<R: Read>(r: R) -> Result<Vec<ResultRecord>> {
    let mut reader = csv::Reader::from_reader(r);
    reader
        .deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Aggregate statistics of one (point, solver) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub solver: SolverKind,
    pub ensemble: EnsembleKind,
    pub param: f64,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub t: usize,
    pub beta: f64,
    pub snr_db: f64,
    pub trials: usize,
    /// Trials whose solver returned an error.
    pub failures: usize,
    /// Trials that finished without meeting their stopping rule.
    pub not_converged: usize,
    pub median_nmse_db: Option<f64>,
    pub mean_nmse_db: Option<f64>,
    pub median_runtime_s: f64,
}

/// Median of a non-empty slice (mean of the two central values when even).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len().is_multiple_of(2) {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    })
}

type GroupKey = (
    SolverKind,
    EnsembleKind,
    u64,
    usize,
    usize,
    usize,
    usize,
    u64,
    u64,
);

fn group_key(r: &ResultRecord) -> GroupKey {
    (
        r.solver,
        r.ensemble,
        r.param.to_bits(),
        r.n,
        r.m,
        r.k,
        r.t,
        r.beta.to_bits(),
        r.snr_db.to_bits(),
    )
}

/// Group records by (point, solver) in order of first appearance. The mean
/// NMSE averages the dB values of the successful trials.
pub fn summarize(records: &[ResultRecord]) -> Vec<SummaryRow> {
    let mut index: HashMap<GroupKey, usize> = HashMap::new();
    let mut groups: Vec<Vec<&ResultRecord>> = Vec::new();
    for r in records {
        let slot = *index.entry(group_key(r)).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[slot].push(r);
    }
    groups
        .into_iter()
        .map(|g| {
            let first = g[0];
            let nmse: Vec<f64> = g.iter().filter_map(|r| r.nmse_db).collect();
            let runtimes: Vec<f64> = g.iter().map(|r| r.runtime_s).collect();
            SummaryRow {
                solver: first.solver,
                ensemble: first.ensemble,
                param: first.param,
                n: first.n,
                m: first.m,
                k: first.k,
                t: first.t,
                beta: first.beta,
                snr_db: first.snr_db,
                trials: g.len(),
                failures: g.len() - nmse.len(),
                not_converged: g
                    .iter()
                    .filter(|r| r.nmse_db.is_some() && !r.converged)
                    .count(),
                median_nmse_db: median(&nmse),
                mean_nmse_db: (!nmse.is_empty())
                    .then(|| nmse.iter().sum::<f64>() / nmse.len() as f64),
                median_runtime_s: median(&runtimes).unwrap_or(f64::NAN),
            }
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(w: W, rows: &[SummaryRow]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    for r in rows {
        writer.serialize(r)?;
    }
    writer.flush()?;
    Ok(())
}

/// Fixed-width text table of a summary.
pub fn format_summary(rows: &[SummaryRow]) -> String {
    let fmt_db = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<11} {:<18} {:>8} {:>6} {:>6} {:>5} {:>3} {:>6} {:>7} {:>7} {:>5} {:>12} {:>10} {:>12}",
        "solver",
        "ensemble",
        "param",
        "N",
        "M",
        "K",
        "T",
        "beta",
        "snr_db",
        "trials",
        "fail",
        "median_db",
        "mean_db",
        "median_s"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<11} {:<18} {:>8.4} {:>6} {:>6} {:>5} {:>3} {:>6.3} {:>7.1} {:>7} {:>5} {:>12} {:>10} {:>12.4e}",
            r.solver.as_str(),
            r.ensemble.as_str(),
            r.param,
            r.n,
            r.m,
            r.k,
            r.t,
            r.beta,
            r.snr_db,
            r.trials,
            r.failures,
            fmt_db(r.median_nmse_db),
            fmt_db(r.mean_nmse_db),
            r.median_runtime_s
        );
    }
    out
}
