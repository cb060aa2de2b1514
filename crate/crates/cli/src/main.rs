use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sbl_core::experiment::{
    format_summary, read_records_csv, run_solver, write_records_csv, write_summary_csv, Instance,
    PlanPoint,
};
use sbl_core::fixture::write_frame_nmse_csv;
use sbl_core::metrics::frame_nmse_db;
use sbl_core::{
    run_plan, summarize, tnmse_db, DampingPolicy, EnsembleKind, ExperimentPlan, ProblemFixture,
    ResultRecord, Schedule, Sigma2Policy, SolverKind, Sparsity,
};

/// Sparse Bayesian learning with damped Gaussian GAMP.
#[derive(Parser)]
#[command(name = "sbl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a problem instance and write it as a binary fixture.
    Gen {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Output fixture path.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Solve one instance and print its result record as CSV.
    Solve {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Solve a stored fixture instead of generating a problem (the
        /// ensemble, param and seed columns then echo the flags).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Write per-frame NMSE rows plus the aggregate TNMSE here.
        #[arg(long)]
        frames_out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Run a plan file and write the result CSV.
    Sweep {
        /// TOML plan file.
        plan: PathBuf,
        /// Result CSV (overrides the plan's `output`; stdout if neither is set).
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Override the plan's worker thread count.
        #[arg(long)]
        threads: Option<usize>,
        /// Override the plan's trials per point.
        #[arg(long)]
        seeds: Option<usize>,
        /// Also write the summary as CSV.
        #[arg(long)]
        summary_out: Option<PathBuf>,
    },
    /// Summarize a result CSV: per point and solver, median and mean NMSE
    /// and median runtime.
    Report {
        results: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Args)]
struct ProblemArgs {
    #[arg(long, default_value = "iid_gaussian")]
    ensemble: EnsembleKind,
    /// Ensemble parameter (rho, R/N, kappa or mu).
    #[arg(long, default_value_t = 0.0)]
    param: f64,
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Measurements (default N/2).
    #[arg(long)]
    m: Option<usize>,
    /// Nonzeros (default round(lambda N)).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0.2)]
    lambda: f64,
    /// Frames.
    #[arg(long, default_value_t = 1)]
    t: usize,
    /// AR(1) coefficient across frames.
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
    #[arg(long, default_value_t = 60.0)]
    snr_db: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, default_value = "ggamp_sbl")]
    solver: SolverKind,
    /// Fixed damping theta_s = theta_x (default: automatic selection).
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    eps_gamp: Option<f64>,
    #[arg(long)]
    eps_em: Option<f64>,
    #[arg(long)]
    kmax: Option<usize>,
    #[arg(long)]
    imax: Option<usize>,
    /// `scaled:<factor>` (of the true noise variance), `fixed:<value>` or
    /// `em:<initial factor>`.
    #[arg(long, value_parser = parse_sigma2_policy)]
    sigma2_policy: Option<Sigma2Policy>,
    #[arg(long, value_enum)]
    schedule: Option<ScheduleArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Interleaved,
    Literal,
}

fn parse_sigma2_policy(s: &str) -> std::result::Result<Sigma2Policy, String> {
    let (kind, value) = s
        .split_once(':')
        .ok_or_else(|| format!("expected <kind>:<value>, got `{s}`"))?;
    let v: f64 = value
        .parse()
        .map_err(|e| format!("bad number `{value}`: {e}"))?;
    match kind {
        "scaled" => Ok(Sigma2Policy::ScaledTrue(v)),
        "fixed" => Ok(Sigma2Policy::Fixed(v)),
        "em" => Ok(Sigma2Policy::EmUpdate(v)),
        _ => Err(format!("unknown policy `{kind}` (scaled, fixed or em)")),
    }
}

impl ProblemArgs {
    fn plan(&self, solver: SolverKind) -> ExperimentPlan {
        let m = self.m.unwrap_or(self.n / 2);
        let sparsity = self.k.map_or(Sparsity::Lambda(self.lambda), Sparsity::K);
        let mut plan = ExperimentPlan::single(
            self.ensemble,
            self.param,
            self.n,
            m,
            sparsity,
            self.snr_db,
            vec![solver],
            1,
        );
        plan.t = self.t;
        plan.beta = self.beta;
        plan.seed_offset = self.seed;
        plan
    }

    fn instance(&self, plan: &ExperimentPlan) -> Result<(PlanPoint, Instance)> {
        plan.validate()?;
        let point = plan.points()[0];
        let instance = Instance::generate(plan, &point, self.seed)?;
        Ok((point, instance))
    }
}

impl SolverArgs {
    fn apply(&self, plan: &mut ExperimentPlan) {
        let o = &mut plan.options;
        if let Some(theta) = self.theta {
            o.damping = DampingPolicy::Fixed {
                theta_s: theta,
                theta_x: theta,
            };
        }
        if let Some(v) = self.eps_gamp {
            o.eps_gamp = v;
        }
        if let Some(v) = self.eps_em {
            o.eps_em = v;
        }
        if let Some(v) = self.kmax {
            o.k_max = v;
        }
        if let Some(v) = self.imax {
            o.i_max = v;
        }
        if let Some(v) = self.sigma2_policy {
            o.sigma2_policy = v;
        }
        if let Some(s) = self.schedule {
            o.schedule = match s {
                ScheduleArg::Interleaved => Schedule::Interleaved,
                ScheduleArg::Literal => Schedule::Literal,
            };
        }
    }
}

fn dims(instance: &Instance) -> (usize, usize, usize, usize, f64) {
    match instance {
        Instance::Smv(p) => (p.a.ncols(), p.a.nrows(), p.support.len(), 1, 0.0),
        Instance::Mmv(p) => (
            p.a.ncols(),
            p.a.nrows(),
            p.support.len(),
            p.frames(),
            p.beta,
        ),
    }
}

fn gen(problem: &ProblemArgs, out: &PathBuf) -> Result<()> {
    let plan = problem.plan(SolverKind::Noop);
    let (point, instance) = problem.instance(&plan)?;
    instance
        .to_fixture()
        .save(out)
        .with_context(|| format!("writing {}", out.display()))?;
    println!(
        "wrote {}: {} N={} M={} K={} T={} seed={}",
        out.display(),
        plan.ensemble,
        point.n,
        point.m,
        point.k,
        plan.t,
        problem.seed
    );
    Ok(())
}

fn solve(
    problem: &ProblemArgs,
    solver: &SolverArgs,
    input: Option<&PathBuf>,
    frames_out: Option<&PathBuf>,
    format: Format,
) -> Result<()> {
    let mut plan = problem.plan(solver.solver);
    solver.apply(&mut plan);
    let instance = match input {
        Some(path) => {
            let fixture = ProblemFixture::load(path)
                .with_context(|| format!("reading {}", path.display()))?;
            Instance::from_fixture(fixture)?
        }
        None => problem.instance(&plan)?.1,
    };
    let (n, m, k, t, beta) = dims(&instance);
    let start = Instant::now();
    let out = run_solver(solver.solver, &instance, &plan.options, beta)?;
    let runtime_s = start.elapsed().as_secs_f64();
    let x_true = instance.x_true();
    let nmse = tnmse_db(&out.x_hat, &x_true)?;
    if let Some(path) = frames_out {
        write_frame_nmse_csv(
            File::create(path)?,
            &frame_nmse_db(&out.x_hat, &x_true)?,
            nmse,
        )?;
    }
    let record = ResultRecord {
        solver: solver.solver,
        ensemble: plan.ensemble,
        param: problem.param,
        n,
        m,
        k,
        t,
        beta,
        snr_db: problem.snr_db,
        seed: problem.seed,
        nmse_db: Some(nmse),
        runtime_s,
        em_iters: out.em_iters,
        inner_iters_total: out.inner_iters_total,
        converged: out.converged,
    };
    let stdout = io::stdout();
    match format {
        Format::Json => {
            serde_json::to_writer_pretty(stdout.lock(), &record)?;
            println!();
        }
        Format::Csv | Format::Table => write_records_csv(stdout.lock(), &[record])?,
    }
    Ok(())
}

fn sweep(
    plan_path: &PathBuf,
    out: Option<PathBuf>,
    threads: Option<usize>,
    seeds: Option<usize>,
    summary_out: Option<&PathBuf>,
) -> Result<()> {
    let mut plan = ExperimentPlan::load(plan_path)
        .with_context(|| format!("reading plan {}", plan_path.display()))?;
    if out.is_some() {
        plan.output = out;
    }
    if threads.is_some() {
        plan.threads = threads;
    }
    if let Some(s) = seeds {
        plan.seeds = s;
    }
    let report = run_plan(&plan)?;
    if plan.output.is_none() {
        write_records_csv(io::stdout().lock(), &report.records)?;
    } else {
        eprint!("{}", format_summary(&report.summary));
    }
    if let Some(path) = summary_out {
        write_summary_csv(File::create(path)?, &report.summary)?;
    }
    Ok(())
}

fn report(results: &PathBuf, format: Format) -> Result<()> {
    let file = File::open(results).with_context(|| format!("reading {}", results.display()))?;
    let records = read_records_csv(file)?;
    if records.is_empty() {
        bail!("{} contains no records", results.display());
    }
    let summary = summarize(&records);
    let mut stdout = io::stdout().lock();
    match format {
        Format::Table => stdout.write_all(format_summary(&summary).as_bytes())?,
        Format::Csv => write_summary_csv(stdout, &summary)?,
        Format::Json => {
            serde_json::to_writer_pretty(&mut stdout, &summary)?;
            writeln!(stdout)?;
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Gen { problem, out } => gen(&problem, &out),
        Command::Solve {
            problem,
            solver,
            input,
            frames_out,
            format,
        } => solve(
            &problem,
            &solver,
            input.as_ref(),
            frames_out.as_ref(),
            format,
        ),
        Command::Sweep {
            plan,
            out,
            threads,
            seeds,
            summary_out,
        } => sweep(&plan, out, threads, seeds, summary_out.as_ref()),
        Command::Report { results, format } => report(&results, format),
    }
}
