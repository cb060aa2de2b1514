//! Measurement-matrix ensembles and synthetic SMV/MMV problem instances.
//!
//! Every generator is a pure function of its specification and seeds: the
//! same inputs always produce bit-identical outputs.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// The structured matrix families used to stress the solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    IidGaussian,
    /// Rows are AR(1) processes across columns with coefficient `rho`.
    ColumnCorrelated,
    /// `A = (1/N) H G` with inner dimension `R = round(param * N)`.
    LowRankProduct,
    /// `A = U diag(sigma) V^T` with geometric singular values spanning `kappa`.
    IllConditioned,
    /// Entries drawn from `N(mu, 1/N)`.
    NonzeroMean,
}

impl EnsembleKind {
    pub const ALL: [EnsembleKind; 5] = [
        EnsembleKind::IidGaussian,
        EnsembleKind::ColumnCorrelated,
        EnsembleKind::LowRankProduct,
        EnsembleKind::IllConditioned,
        EnsembleKind::NonzeroMean,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EnsembleKind::IidGaussian => "iid_gaussian",
            EnsembleKind::ColumnCorrelated => "column_correlated",
            EnsembleKind::LowRankProduct => "low_rank_product",
            EnsembleKind::IllConditioned => "ill_conditioned",
            EnsembleKind::NonzeroMean => "nonzero_mean",
        }
    }

    /// The parameter value at which the ensemble coincides with i.i.d. Gaussian
    /// (`None` for the low-rank family, whose `R < M` constraint excludes it).
    pub fn neutral_param(self) -> Option<f64> {
        match self {
            EnsembleKind::IidGaussian
            | EnsembleKind::ColumnCorrelated
            | EnsembleKind::NonzeroMean => Some(0.0),
            EnsembleKind::IllConditioned => Some(1.0),
            EnsembleKind::LowRankProduct => None,
        }
    }
}

impl fmt::Display for EnsembleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnsembleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnsembleKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| domain("kind", format!("unknown ensemble `{s}`")))
    }
}

/// Full description of one random measurement matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    pub rows: usize,
    pub cols: usize,
    /// `rho`, rank ratio `R/N`, `kappa` or `mu` depending on `kind`.
    #[serde(default)]
    pub param: f64,
    #[serde(default)]
    pub seed: u64,
}

impl EnsembleSpec {
    pub fn new(kind: EnsembleKind, rows: usize, cols: usize, param: f64, seed: u64) -> Self {
        Self {
            kind,
            rows,
            cols,
            param,
            seed,
        }
    }

    pub fn iid(rows: usize, cols: usize, seed: u64) -> Self {
        Self::new(EnsembleKind::IidGaussian, rows, cols, 0.0, seed)
    }

    /// Inner dimension of the low-rank product.
    pub fn low_rank_inner_dim(&self) -> usize {
        (self.param * self.cols as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 {
            return Err(domain("rows", "must be positive"));
        }
        if self.cols == 0 {
            return Err(domain("cols", "must be positive"));
        }
        if self.rows > self.cols {
            return Err(domain(
                "rows",
                format!("M = {} exceeds N = {}", self.rows, self.cols),
            ));
        }
        if !self.param.is_finite() {
            return Err(domain("param", "must be finite"));
        }
        match self.kind {
            EnsembleKind::IidGaussian | EnsembleKind::NonzeroMean => {}
            EnsembleKind::ColumnCorrelated => {
                if !(0.0..1.0).contains(&self.param) {
                    return Err(domain(
                        "param",
                        format!("rho = {} not in [0, 1)", self.param),
                    ));
                }
            }
            EnsembleKind::LowRankProduct => {
                let r = self.low_rank_inner_dim();
                if self.param <= 0.0 || r == 0 {
                    return Err(domain(
                        "param",
                        format!("rank ratio {} gives R = 0", self.param),
                    ));
                }
                if r >= self.rows {
                    return Err(domain(
                        "param",
                        format!(
                            "rank ratio {} gives R = {r} >= M = {}",
                            self.param, self.rows
                        ),
                    ));
                }
            }
            EnsembleKind::IllConditioned => {
                if self.param < 1.0 {
                    return Err(domain("param", format!("kappa = {} < 1", self.param)));
                }
            }
        }
        Ok(())
    }

    /// Serialize as a `key = value` config block.
    pub fn to_config_string(&self) -> String {
        toml::to_string(self).expect("ensemble spec is always serializable")
    }

    pub fn from_config_str(s: &str) -> Result<Self> {
        let spec: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> DMatrix<f64> {
    // Row-major draw order so the stream is independent of storage layout.
    let mut a = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let z: f64 = rng.sample(StandardNormal);
            a[(i, j)] = std * z;
        }
    }
    a
}

/// Draw a matrix from the ensemble described by `spec`.
pub fn generate_matrix(spec: &EnsembleSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let (m, n) = (spec.rows, spec.cols);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std = (1.0 / n as f64).sqrt();

    let a = match spec.kind {
        EnsembleKind::IidGaussian => gaussian_matrix(&mut rng, m, n, std),
        EnsembleKind::NonzeroMean => gaussian_matrix(&mut rng, m, n, std).add_scalar(spec.param),
        EnsembleKind::ColumnCorrelated => {
            let rho = spec.param;
            let innov = (1.0 - rho * rho).sqrt();
            let mut a = gaussian_matrix(&mut rng, m, n, std);
            for i in 0..m {
                for j in 1..n {
                    a[(i, j)] = rho * a[(i, j - 1)] + innov * a[(i, j)];
                }
            }
            a
        }
        EnsembleKind::LowRankProduct => {
            let r = spec.low_rank_inner_dim();
            let h = gaussian_matrix(&mut rng, m, r, 1.0);
            let g = gaussian_matrix(&mut rng, r, n, 1.0);
            (h * g) / n as f64
        }
        EnsembleKind::IllConditioned => {
            let base = gaussian_matrix(&mut rng, m, n, std);
            let svd = base.svd(true, true);
            let u = svd.u.expect("requested U");
            let v_t = svd.v_t.expect("requested V^T");
            let sigma = ill_conditioned_spectrum(m, spec.param);
            let mut us = u;
            for (j, s) in sigma.iter().enumerate() {
                us.column_mut(j).scale_mut(*s);
            }
            us * v_t
        }
    };
    Ok(a)
}

/// Geometric singular values with ratio `kappa^(1/(M-1))` between neighbours,
/// scaled so that the squared Frobenius norm equals `M`.
fn ill_conditioned_spectrum(m: usize, kappa: f64) -> Vec<f64> {
    if m == 1 {
        return vec![1.0];
    }
    let step = kappa.powf(-1.0 / (m as f64 - 1.0));
    let raw: Vec<f64> = (0..m).map(|i| step.powi(i as i32)).collect();
    let energy: f64 = raw.iter().map(|s| s * s).sum();
    let scale = (m as f64 / energy).sqrt();
    raw.into_iter().map(|s| s * scale).collect()
}

/// One single-measurement-vector instance `y = A x + e`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmvProblem {
    pub a: DMatrix<f64>,
    pub y: DVector<f64>,
    pub x_true: DVector<f64>,
    pub sigma2: f64,
    /// Sorted indices of the nonzeros of `x_true`.
    pub support: Vec<usize>,
}

/// `T` measurement vectors sharing one matrix and one support.
#[derive(Debug, Clone, PartialEq)]
pub struct MmvProblem {
    pub a: DMatrix<f64>,
    pub y: Vec<DVector<f64>>,
    pub x_true: Vec<DVector<f64>>,
    pub sigma2: f64,
    pub beta: f64,
    pub support: Vec<usize>,
    /// Row variances used to draw the signal (zero off the support).
    pub gamma_true: DVector<f64>,
}

impl MmvProblem {
    pub fn frames(&self) -> usize {
        self.y.len()
    }
}

fn snr_linear(snr_db: f64) -> Result<f64> {
    if !snr_db.is_finite() {
        return Err(domain(
            "snr_db",
            "must be finite (noiseless problems are not generated)",
        ));
    }
    Ok(10f64.powf(snr_db / 10.0))
}

fn draw_support(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut support = index::sample(rng, n, k).into_vec();
    support.sort_unstable();
    support
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(domain(
            "k",
            format!("need 0 < K <= N, got K = {k}, N = {n}"),
        ));
    }
    Ok(())
}

fn noise_vector(rng: &mut ChaCha8Rng, m: usize, sigma2: f64) -> DVector<f64> {
    let std = sigma2.sqrt();
    DVector::from_fn(m, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        std * z
    })
}

/// Draw an SMV instance with exactly `k` unit-variance Gaussian nonzeros and
/// noise calibrated so that `||Ax||^2 / (M sigma2)` equals the requested SNR.
pub fn generate_smv(
    spec: &EnsembleSpec,
    k: usize,
    snr_db: f64,
    signal_seed: u64,
) -> Result<SmvProblem> {
    check_k(k, spec.cols)?;
    let snr = snr_linear(snr_db)?;
    let a = generate_matrix(spec)?;
    let (m, n) = a.shape();

    let mut rng = ChaCha8Rng::seed_from_u64(signal_seed);
    let support = draw_support(&mut rng, n, k);
    let mut x_true = DVector::zeros(n);
    for &i in &support {
        x_true[i] = rng.sample(StandardNormal);
    }

    let ax = &a * &x_true;
    let sigma2 = ax.norm_squared() / (m as f64 * snr);
    if sigma2 <= 0.0 {
        return Err(domain(
            "k",
            "signal lies in the null space of A; SNR undefined",
        ));
    }
    let y = ax + noise_vector(&mut rng, m, sigma2);
    Ok(SmvProblem {
        a,
        y,
        x_true,
        sigma2,
        support,
    })
}

/// Draw an MMV instance whose nonzero rows are stationary AR(1) processes:
/// `x^(t) = beta x^(t-1) + sqrt(1 - beta^2) v^(t)` with `v ~ N(0, gamma_n)`.
///
/// `gamma_true` holds one variance per support row; `None` means all ones.
#[allow(clippy::too_many_arguments)]
pub fn generate_mmv(
    spec: &EnsembleSpec,
    k: usize,
    frames: usize,
    beta: f64,
    gamma_true: Option<&[f64]>,
    snr_db: f64,
    signal_seed: u64,
) -> Result<MmvProblem> {
    check_k(k, spec.cols)?;
    if frames == 0 {
        return Err(domain("t", "need at least one frame"));
    }
    if !(beta.abs() < 1.0) {
        return Err(domain(
            "beta",
            format!("|beta| = {} must be < 1", beta.abs()),
        ));
    }
    if let Some(g) = gamma_true {
        if g.len() != k {
            return Err(domain(
                "gamma_true",
                format!("expected {k} variances, got {}", g.len()),
            ));
        }
        if g.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(domain(
                "gamma_true",
                "variances must be positive and finite",
            ));
        }
    }
    let snr = snr_linear(snr_db)?;
    let a = generate_matrix(spec)?;
    let (m, n) = a.shape();

    let mut rng = ChaCha8Rng::seed_from_u64(signal_seed);
    let support = draw_support(&mut rng, n, k);
    let mut gamma = DVector::zeros(n);
    for (j, &i) in support.iter().enumerate() {
        gamma[i] = gamma_true.map_or(1.0, |g| g[j]);
    }

    let innov = (1.0 - beta * beta).sqrt();
    let mut x_true: Vec<DVector<f64>> = Vec::with_capacity(frames);
    for t in 0..frames {
        let mut x = DVector::zeros(n);
        for &i in &support {
            let v: f64 = rng.sample(StandardNormal);
            let v = v * gamma[i].sqrt();
            x[i] = if t == 0 {
                v
            } else {
                beta * x_true[t - 1][i] + innov * v
            };
        }
        x_true.push(x);
    }

    let clean: Vec<DVector<f64>> = x_true.iter().map(|x| &a * x).collect();
    let energy: f64 = clean.iter().map(|z| z.norm_squared()).sum();
    let sigma2 = energy / (frames as f64 * m as f64 * snr);
    if sigma2 <= 0.0 {
        return Err(domain(
            "k",
            "signal lies in the null space of A; SNR undefined",
        ));
    }
    let y = clean
        .into_iter()
        .map(|z| z + noise_vector(&mut rng, m, sigma2))
        .collect();

    Ok(MmvProblem {
        a,
        y,
        x_true,
        sigma2,
        beta,
        support,
        gamma_true: gamma,
    })
}
