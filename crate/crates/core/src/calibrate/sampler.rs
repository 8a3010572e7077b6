//! Adaptive Metropolis over `z = [ln θ, ln σ]`.
//!
//! Warmup adapts a global step size toward the target acceptance rate and
//! refreshes the proposal covariance from the warmup draws at each quarter.
//! Sampling then runs with the proposal frozen.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{log_likelihood, log_likelihood_grad, CalibrationError, TrajectoryDataset, PARAM_NAMES};
use crate::sim::rng::{derive_seed, stream, StreamId};

const DIM: usize = 6;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Prior over `ln θ` (multivariate normal) and `ln σ` (normal).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationPrior {
    pub mu0: [f64; 5],
    pub sigma0: [[f64; 5]; 5],
    pub mu_eps: f64,
    pub sigma1: f64,
}

impl Default for CalibrationPrior {
    fn default() -> Self {
        let mut sigma0 = [[0.0; 5]; 5];
        for (k, row) in sigma0.iter_mut().enumerate() {
            row[k] = 0.25;
        }
        Self {
            mu0: [15.0f64, 2.0, 1.5, 1.5, 2.0].map(f64::ln),
            sigma0,
            mu_eps: 0.3f64.ln(),
            sigma1: 0.5,
        }
    }
}

/// Cholesky factor and log-determinant of Σ0.
#[derive(Debug, Clone)]
struct PriorFactor {
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl CalibrationPrior {
    fn factor(&self) -> Result<PriorFactor, CalibrationError> {
        let m = DMatrix::from_fn(5, 5, |i, j| self.sigma0[i][j]);
        if self.mu0.iter().any(|x| !x.is_finite()) || m.iter().any(|x| !x.is_finite()) {
            return Err(CalibrationError::InvalidPrior("non-finite entries".into()));
        }
        if (0..5).any(|i| (0..i).any(|j| (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * (1.0 + m[(i, j)].abs()))) {
            return Err(CalibrationError::InvalidPrior("sigma0 is not symmetric".into()));
        }
        let chol = Cholesky::new(m).ok_or_else(|| CalibrationError::InvalidPrior("sigma0 is not positive definite".into()))?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(PriorFactor { chol, log_det })
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        self.factor()?;
        if !(self.sigma1 > 0.0 && self.sigma1.is_finite() && self.mu_eps.is_finite()) {
            return Err(CalibrationError::InvalidPrior("sigma1 must be positive and mu_eps finite".into()));
        }
        Ok(())
    }

    /// Prior standard deviations of each coordinate of z.
    pub fn scales(&self) -> [f64; DIM] {
        std::array::from_fn(|k| if k < 5 { self.sigma0[k][k].sqrt() } else { self.sigma1 })
    }

    /// Prior means of each coordinate of z.
    pub fn means(&self) -> [f64; DIM] {
        std::array::from_fn(|k| if k < 5 { self.mu0[k] } else { self.mu_eps })
    }
}

fn log_prior(z: &[f64; DIM], prior: &CalibrationPrior, f: &PriorFactor) -> (f64, [f64; DIM]) {
    let d = DVector::from_fn(5, |i, _| z[i] - prior.mu0[i]);
    let w = f.chol.solve(&d);
    let quad = d.dot(&w);
    let e = (z[5] - prior.mu_eps) / prior.sigma1;
    let lp = -0.5 * (quad + f.log_det + 5.0 * LN_2PI) - 0.5 * e * e - prior.sigma1.ln() - 0.5 * LN_2PI;
    let mut g = [0.0; DIM];
    for i in 0..5 {
        g[i] = -w[i];
    }
    g[5] = -e / prior.sigma1;
    (lp, g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Proposal {
    /// Gaussian random walk.
    RandomWalk,
    /// Gradient-informed Langevin proposal.
    Mala,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    #[serde(default = "default_target")]
    pub target_accept: f64,
    /// Coordinates of `[v0, s0, T, α, β, σ]` that move; fixed ones stay at
    /// the start value.
    #[serde(default = "default_free")]
    pub free: [bool; DIM],
    /// Start point on the natural scale; the prior mean when absent.
    #[serde(default)]
    pub init: Option<[f64; DIM]>,
    #[serde(default = "default_proposal")]
    pub proposal: Proposal,
    #[serde(default)]
    pub seed: u64,
}

fn default_chains() -> usize {
    4
}
fn default_warmup() -> usize {
    3000
}
fn default_samples() -> usize {
    2000
}
fn default_thin() -> usize {
    1
}
fn default_target() -> f64 {
    0.3
}
fn default_free() -> [bool; DIM] {
    [true; DIM]
}
fn default_proposal() -> Proposal {
    Proposal::RandomWalk
}

impl ChainConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            chains: default_chains(),
            warmup: default_warmup(),
            samples: default_samples(),
            thin: default_thin(),
            target_accept: default_target(),
            free: default_free(),
            init: None,
            proposal: default_proposal(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        let bad = |m: &str| Err(CalibrationError::InvalidChain(m.into()));
        if self.chains == 0 || self.samples == 0 || self.thin == 0 {
            return bad("chains, samples and thin must be at least 1");
        }
        if self.warmup < 8 {
            return bad("warmup must be at least 8 iterations");
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad("target_accept must lie in (0, 1)");
        }
        if !self.free.iter().any(|f| *f) {
            return bad("at least one parameter must be free");
        }
        if let Some(init) = self.init {
            if init.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return bad("init values must be positive");
            }
        }
        Ok(())
    }
}

/// Posterior mean, spread and quantiles of one coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub name: String,
    /// Natural-scale mean.
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    /// Log-scale mean and its Monte Carlo standard error.
    pub mean_ln: f64,
    pub mcse_ln: f64,
    pub rhat: f64,
    pub ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSample {
    /// Post-warmup draws of `[ln θ, ln σ]`, one list per chain.
    pub chains: Vec<Vec<[f64; DIM]>>,
    pub acceptance: Vec<f64>,
    pub acceptance_rate: f64,
    pub rhat: [f64; DIM],
    pub ess: [f64; DIM],
    pub free: [bool; DIM],
}

impl PosteriorSample {
    /// All draws on the natural scale, chain by chain.
    pub fn draws(&self) -> Vec<[f64; DIM]> {
        self.chains.iter().flatten().map(|z| z.map(f64::exp)).collect()
    }

    pub fn theta_draws(&self) -> Vec<[f64; 5]> {
        self.draws().into_iter().map(|d| [d[0], d[1], d[2], d[3], d[4]]).collect()
    }

    fn column(&self, k: usize) -> Vec<f64> {
        self.chains.iter().flatten().map(|z| z[k]).collect()
    }

    pub fn mean(&self) -> [f64; DIM] {
        std::array::from_fn(|k| {
            let c = self.column(k);
            c.iter().map(|z| z.exp()).sum::<f64>() / c.len() as f64
        })
    }

    pub fn mean_ln(&self) -> [f64; DIM] {
        std::array::from_fn(|k| {
            let c = self.column(k);
            c.iter().sum::<f64>() / c.len() as f64
        })
    }

    /// Monte Carlo standard error of the log-scale means.
    pub fn mcse_ln(&self) -> [f64; DIM] {
        std::array::from_fn(|k| {
            let c = self.column(k);
            let m = c.iter().sum::<f64>() / c.len() as f64;
            let var = c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (c.len() as f64 - 1.0).max(1.0);
            (var / self.ess[k].max(1.0)).sqrt()
        })
    }

    pub fn summaries(&self) -> Vec<PosteriorSummary> {
        let (mean_ln, mcse) = (self.mean_ln(), self.mcse_ln());
        (0..DIM)
            .map(|k| {
                let mut nat: Vec<f64> = self.column(k).into_iter().map(f64::exp).collect();
                nat.sort_by(f64::total_cmp);
                let n = nat.len();
                let m = nat.iter().sum::<f64>() / n as f64;
                let sd = (nat.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0).max(1.0)).sqrt();
                let q = |p: f64| nat[((p * (n - 1) as f64).round() as usize).min(n - 1)];
                PosteriorSummary {
                    name: PARAM_NAMES[k].into(),
                    mean: m,
                    sd,
                    q05: q(0.05),
                    q50: q(0.5),
                    q95: q(0.95),
                    mean_ln: mean_ln[k],
                    mcse_ln: mcse[k],
                    rhat: self.rhat[k],
                    ess: self.ess[k],
                }
            })
            .collect()
    }
}

/// Split-chain potential scale reduction factor. Returns 1 for a constant
/// coordinate.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            [&c[..h], &c[c.len() - h..]]
        })
        .filter(|h| h.len() >= 2)
        .collect();
    if halves.len() < 2 {
        return f64::NAN;
    }
    let n = halves[0].len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / h.len() as f64).collect();
    let grand = means.iter().sum::<f64>() / means.len() as f64;
    let m = halves.len() as f64;
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (h.len() as f64 - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return 1.0;
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Effective sample size from the chain-averaged autocorrelation, summed
/// over positive consecutive pairs.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    let m = chains.len();
    if n < 4 || m == 0 {
        return (n * m) as f64;
    }
    let means: Vec<f64> = chains.iter().map(|c| c[..n].iter().sum::<f64>() / n as f64).collect();
    let acov = |lag: usize| -> f64 {
        chains
            .iter()
            .zip(&means)
            .map(|(c, mu)| (0..n - lag).map(|i| (c[i] - mu) * (c[i + lag] - mu)).sum::<f64>() / n as f64)
            .sum::<f64>()
            / m as f64
    };
    let c0 = acov(0);
    if c0 <= 0.0 {
        return (n * m) as f64;
    }
    let mut tau = -1.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = (acov(lag) + acov(lag + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    ((n * m) as f64 / tau.max(1.0 / (n * m) as f64)).min((n * m) as f64 * 10.0)
}

struct Target<'a> {
    prior: &'a CalibrationPrior,
    factor: PriorFactor,
    data: &'a TrajectoryDataset,
    free: [bool; DIM],
}

impl Target<'_> {
    fn log_post(&self, z: &[f64; DIM]) -> f64 {
        let theta: [f64; 5] = std::array::from_fn(|k| z[k].exp());
        log_prior(z, self.prior, &self.factor).0 + log_likelihood(&theta, z[5].exp(), self.data)
    }

    /// Log posterior and its gradient over the free coordinates.
    fn log_post_grad(&self, z: &[f64; DIM]) -> (f64, DVector<f64>) {
        let theta: [f64; 5] = std::array::from_fn(|k| z[k].exp());
        let (lp, gp) = log_prior(z, self.prior, &self.factor);
        let (ll, gl) = log_likelihood_grad(&theta, z[5].exp(), self.data);
        let g: Vec<f64> = (0..DIM).filter(|&k| self.free[k]).map(|k| gp[k] + gl[k]).collect();
        (lp + ll, DVector::from_vec(g))
    }
}

fn set_free(z: &mut [f64; DIM], free: &[bool; DIM], x: &DVector<f64>) {
    let mut i = 0;
    for k in 0..DIM {
        if free[k] {
            z[k] = x[i];
            i += 1;
        }
    }
}

fn get_free(z: &[f64; DIM], free: &[bool; DIM]) -> DVector<f64> {
    DVector::from_iterator(free.iter().filter(|f| **f).count(), (0..DIM).filter(|&k| free[k]).map(|k| z[k]))
}

fn covariance(draws: &[DVector<f64>]) -> DMatrix<f64> {
    let d = draws[0].len();
    let n = draws.len() as f64;
    let mean = draws.iter().fold(DVector::zeros(d), |acc, x| acc + x) / n;
    let mut cov = DMatrix::zeros(d, d);
    for x in draws {
        let c = x - &mean;
        cov += &c * c.transpose();
    }
    cov / (n - 1.0).max(1.0)
}

struct ChainOut {
    draws: Vec<[f64; DIM]>,
    acceptance: f64,
}

fn run_chain(target: &Target, cfg: &ChainConfig, chain: usize, start: [f64; DIM]) -> Result<ChainOut, CalibrationError> {
    let mut rng = stream(derive_seed(cfg.seed, chain as u64), StreamId::Other(7));
    let free = cfg.free;
    let d = free.iter().filter(|f| **f).count();
    let scales = target.prior.scales();
    let mut z = start;
    // Over-dispersed start around the given point.
    for k in 0..DIM {
        if free[k] {
            let e: f64 = rng.sample(StandardNormal);
            z[k] += 0.1 * scales[k] * e;
        }
    }
    let mala = cfg.proposal == Proposal::Mala;
    let (mut lp, mut grad) = if mala {
        target.log_post_grad(&z)
    } else {
        (target.log_post(&z), DVector::zeros(d))
    };
    if !lp.is_finite() {
        return Err(CalibrationError::NonFiniteStart);
    }
    let base_step = |d: usize| if mala { 1.0 / (d as f64).powf(1.0 / 3.0) } else { 2.38 / (d as f64).sqrt() };
    let mut chol = DMatrix::from_diagonal(&DVector::from_iterator(
        d,
        (0..DIM).filter(|&k| free[k]).map(|k| 0.1 * scales[k]),
    ));
    let mut log_h = base_step(d).ln();
    let mut history: Vec<DVector<f64>> = Vec::with_capacity(cfg.warmup);
    let total = cfg.warmup + cfg.samples * cfg.thin;
    let mut draws = Vec::with_capacity(cfg.samples);
    let (mut accepted, mut sampled) = (0usize, 0usize);
    let mut since_update = 0usize;
    for it in 0..total {
        let h = log_h.exp();
        let x = get_free(&z, &free);
        let eps = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let drift = |g: &DVector<f64>| &chol * (chol.transpose() * g) * (0.5 * h * h);
        let y = if mala { &x + drift(&grad) + &chol * &eps * h } else { &x + &chol * &eps * h };
        let mut zp = z;
        set_free(&mut zp, &free, &y);
        let (lp_new, grad_new) = if mala {
            target.log_post_grad(&zp)
        } else {
            (target.log_post(&zp), DVector::zeros(0))
        };
        let mut log_alpha = lp_new - lp;
        if mala && lp_new.is_finite() {
            // Proposal densities in whitened coordinates.
            let l = chol.clone();
            let q = |from: &DVector<f64>, to: &DVector<f64>, g: &DVector<f64>| -> f64 {
                let r = to - from - drift(g);
                let w = l.solve_lower_triangular(&r).expect("proposal factor is triangular and nonsingular");
                -0.5 * w.norm_squared() / (h * h)
            };
            log_alpha += q(&y, &x, &grad_new) - q(&x, &y, &grad);
        }
        let alpha = if log_alpha.is_finite() { log_alpha.min(0.0).exp() } else { 0.0 };
        let u: f64 = rng.random();
        if u < alpha {
            z = zp;
            lp = lp_new;
            if mala {
                grad = grad_new;
            }
            if it >= cfg.warmup {
                accepted += 1;
            }
        }
        if it < cfg.warmup {
            let gamma = 1.0 / ((it + 1) as f64).powf(0.6);
            log_h += gamma * (alpha - cfg.target_accept) * 2.0;
            history.push(get_free(&z, &free));
            since_update += 1;
            let quarter = (cfg.warmup / 4).max(2);
            if since_update >= quarter && it + 1 < cfg.warmup {
                since_update = 0;
                let window = &history[history.len() / 2..];
                if window.len() > d + 1 {
                    let mut cov = covariance(window);
                    let jitter = 1e-10 + 1e-8 * cov.diagonal().max();
                    for i in 0..d {
                        cov[(i, i)] += jitter;
                    }
                    if let Some(c) = Cholesky::new(cov) {
                        chol = c.l();
                        log_h = base_step(d).ln();
                        if mala {
                            grad = target.log_post_grad(&z).1;
                        }
                    }
                }
            }
        } else {
            sampled += 1;
            if (it - cfg.warmup) % cfg.thin == cfg.thin - 1 {
                draws.push(z);
            }
        }
    }
    Ok(ChainOut {
        draws,
        acceptance: accepted as f64 / sampled.max(1) as f64,
    })
}

/// Draw from the posterior with independent chains run in parallel. The
/// result depends only on the inputs and `cfg.seed`.
pub fn sample_posterior(
    prior: &CalibrationPrior,
    data: &TrajectoryDataset,
    cfg: &ChainConfig,
) -> Result<PosteriorSample, CalibrationError> {
    prior.validate()?;
    cfg.validate()?;
    data.validate()?;
    let target = Target {
        prior,
        factor: prior.factor()?,
        data,
        free: cfg.free,
    };
    let start = match cfg.init {
        Some(init) => init.map(f64::ln),
        None => prior.means(),
    };
    if !target.log_post(&start).is_finite() {
        return Err(CalibrationError::NonFiniteStart);
    }
    let outs: Vec<ChainOut> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(&target, cfg, c, start))
        .collect::<Result<_, _>>()?;
    let chains: Vec<Vec<[f64; DIM]>> = outs.iter().map(|o| o.draws.clone()).collect();
    let acceptance: Vec<f64> = outs.iter().map(|o| o.acceptance).collect();
    let per_coord = |k: usize| -> Vec<Vec<f64>> { chains.iter().map(|c| c.iter().map(|z| z[k]).collect()).collect() };
    let rhat = std::array::from_fn(|k| if cfg.free[k] { split_rhat(&per_coord(k)) } else { 1.0 });
    let ess = std::array::from_fn(|k| effective_sample_size(&per_coord(k)));
    Ok(PosteriorSample {
        acceptance_rate: acceptance.iter().sum::<f64>() / acceptance.len() as f64,
        acceptance,
        chains,
        rhat,
        ess,
        free: cfg.free,
    })
}
