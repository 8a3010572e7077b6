//! Campaign specs and the paired baseline/policy runner.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{benefits, run_episode, BenefitRecord, ControllerSpec, EpisodeMetrics, EvalError};
use crate::context::{
    load_dataset, sample_context, split_systematicity, ContextVector, FeatureDistribution,
};
use crate::emissions::{coefficient_hash, EmissionCoefficients, DEFAULT_COEFFICIENTS};
use crate::env::{EpisodeSpec, RewardConfig};
use crate::sim::rng::{derive_seed, stream, StreamId};
use crate::sim::{DriverPopulation, SimConfig};

/// Where contexts come from. Paths are relative to the campaign file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ContextSource {
    /// Context dataset file.
    Dataset(PathBuf),
    /// Feature distribution file for procedural sampling.
    Procedural(PathBuf),
}

impl ContextSource {
    pub fn path(&self) -> &Path {
        match self {
            ContextSource::Dataset(p) | ContextSource::Procedural(p) => p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmdpSpec {
    pub name: String,
    pub source: ContextSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Protocol {
    /// Test contexts come from the training source itself. For datasets a
    /// seeded shuffle holds out `test_fraction` of the records.
    Iid {
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
    /// Test contexts come from a separate source.
    Ood { test: ContextSource },
    /// Test contexts lie inside a holdout region excluded from training.
    Systematicity { holdout: PathBuf },
}

fn default_test_fraction() -> f64 {
    0.2
}

/// Episode settings shared by every run of the campaign.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeOverrides {
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub drivers: DriverPopulation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSpec {
    pub name: String,
    /// Root seed for context sampling and dataset shuffles.
    pub seed: u64,
    pub cmdp: CmdpSpec,
    pub protocol: Protocol,
    pub controller: ControllerSpec,
    /// Test contexts to draw from procedural sources; caps dataset ones.
    #[serde(default)]
    pub contexts: Option<usize>,
    #[serde(default = "default_seeds")]
    pub seeds_per_context: u64,
    /// Histogram bin width in percentage points.
    #[serde(default = "default_bin_width")]
    pub bin_width: f64,
    /// Emission coefficient file; the shipped defaults when absent.
    #[serde(default)]
    pub coefficients: Option<PathBuf>,
    #[serde(default)]
    pub episode: EpisodeOverrides,
}

fn default_seeds() -> u64 {
    1
}

fn default_bin_width() -> f64 {
    5.0
}

/// A parsed campaign with its resolved inputs and content hash.
#[derive(Debug, Clone)]
pub struct Campaign {
    pub spec: CampaignSpec,
    pub base_dir: PathBuf,
    /// SHA-256 over the campaign text and every referenced file.
    pub hash: String,
    pub inputs: Vec<PathBuf>,
}

fn read(path: &Path) -> Result<String, EvalError> {
    std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

impl CampaignSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::InvalidCampaign(m.to_string()));
        if self.seeds_per_context == 0 {
            return bad("seeds_per_context must be at least 1");
        }
        if !(self.bin_width > 0.0 && self.bin_width.is_finite()) {
            return bad("bin_width must be positive");
        }
        if let Protocol::Iid { test_fraction } = self.protocol {
            if !(test_fraction > 0.0 && test_fraction <= 1.0) {
                return bad("protocol.test_fraction must lie in (0, 1]");
            }
        }
        if self.contexts == Some(0) {
            return bad("contexts must be at least 1");
        }
        self.episode
            .sim
            .validate()
            .map_err(|e| EvalError::InvalidCampaign(format!("episode.sim: {e}")))?;
        self.episode
            .reward
            .validate()
            .map_err(|e| EvalError::InvalidCampaign(format!("episode.reward: {e}")))
    }

    fn referenced(&self) -> Vec<&Path> {
        let mut out = vec![self.cmdp.source.path()];
        match &self.protocol {
            Protocol::Iid { .. } => {}
            Protocol::Ood { test } => out.push(test.path()),
            Protocol::Systematicity { holdout } => out.push(holdout.as_path()),
        }
        if let Some(c) = &self.coefficients {
            out.push(c.as_path());
        }
        out
    }
}

impl Campaign {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, EvalError> {
        let spec: CampaignSpec = toml::from_str(text)?;
        spec.validate()?;
        let inputs: Vec<PathBuf> = spec.referenced().into_iter().map(|p| base_dir.join(p)).collect();
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        for p in &inputs {
            h.update(read(p)?.as_bytes());
        }
        Ok(Self {
            spec,
            base_dir: base_dir.to_path_buf(),
            hash: hex::encode(h.finalize()),
            inputs,
        })
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&read(path)?, base)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    /// Coefficients and their file hash.
    pub fn coefficients(&self) -> Result<(EmissionCoefficients, String), EvalError> {
        let text = match &self.spec.coefficients {
            Some(p) => read(&self.resolve(p))?,
            None => DEFAULT_COEFFICIENTS.to_string(),
        };
        Ok((EmissionCoefficients::from_toml_str(&text)?, coefficient_hash(&text)))
    }

    /// Test contexts in evaluation order, plus draws that failed.
    pub fn test_contexts(&self) -> Result<(Vec<ContextVector>, Vec<SkippedRecord>), EvalError> {
        let spec = &self.spec;
        let mut rng = stream(spec.seed, StreamId::Other(1));
        let mut skipped = Vec::new();
        let mut draw = |n: usize, f: &mut dyn FnMut(&mut rand_chacha::ChaCha8Rng) -> Result<ContextVector, crate::context::ContextError>| {
            let mut out = Vec::new();
            for i in 0..n {
                match f(&mut rng) {
                    Ok(c) => out.push(c),
                    Err(e) => skipped.push(SkippedRecord {
                        context: format!("draw-{i}"),
                        approach: None,
                        reason: e.to_string(),
                    }),
                }
            }
            out
        };
        let n = spec.contexts.unwrap_or(1);
        let from_source = |s: &ContextSource, draw: &mut dyn FnMut(usize, &FeatureDistribution) -> Vec<ContextVector>| -> Result<Vec<ContextVector>, EvalError> {
            match s {
                ContextSource::Dataset(p) => Ok(load_dataset(&self.resolve(p))?),
                ContextSource::Procedural(p) => {
                    let dist = FeatureDistribution::load(&self.resolve(p))?;
                    dist.validate()?;
                    Ok(draw(n, &dist))
                }
            }
        };
        let contexts = match &spec.protocol {
            Protocol::Iid { test_fraction } => match &spec.cmdp.source {
                ContextSource::Dataset(p) => {
                    let mut all = load_dataset(&self.resolve(p))?;
                    all.shuffle(&mut stream(spec.seed, StreamId::Other(2)));
                    let take = ((all.len() as f64 * test_fraction).ceil() as usize).min(all.len());
                    all.truncate(take);
                    all
                }
                ContextSource::Procedural(_) => {
                    from_source(&spec.cmdp.source, &mut |n, d| draw(n, &mut |r| sample_context(d, r)))?
                }
            },
            Protocol::Ood { test } => from_source(test, &mut |n, d| draw(n, &mut |r| sample_context(d, r)))?,
            Protocol::Systematicity { holdout } => {
                let region = FeatureDistribution::load(&self.resolve(holdout))?;
                match &spec.cmdp.source {
                    ContextSource::Procedural(p) => {
                        let train = FeatureDistribution::load(&self.resolve(p))?;
                        let (_, test) = split_systematicity(&train, &region)?;
                        draw(n, &mut |r| test.sample(r))
                    }
                    ContextSource::Dataset(p) => load_dataset(&self.resolve(p))?
                        .into_iter()
                        .filter(|c| region.contains(c))
                        .collect(),
                }
            }
        };
        let mut contexts = contexts;
        if let (Some(cap), ContextSource::Dataset(_)) = (spec.contexts, &spec.cmdp.source) {
            contexts.truncate(cap);
        }
        Ok((contexts, skipped))
    }
}

/// Intersection-level outcome for one context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionRecord {
    pub context: String,
    /// Zeroed when the policy lost throughput.
    pub emission_benefit_pct: f64,
    pub raw_emission_benefit_pct: f64,
    pub per_step_emission_benefit_pct: f64,
    pub throughput_change_pct: f64,
    pub zeroed: bool,
    pub seeds: Vec<u64>,
}

/// A context or approach that produced no benefit record, and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRecord {
    pub context: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approach: Option<usize>,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_low: f64,
    pub bin_high: f64,
    pub count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub records: usize,
    pub mean_pct: f64,
    pub median_pct: f64,
    pub min_pct: f64,
    pub max_pct: f64,
    pub zeroed_fraction: f64,
    pub positive_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub campaign: String,
    pub campaign_hash: String,
    pub coefficient_hash: String,
    pub controller: ControllerSpec,
    pub bin_width: f64,
    pub records: Vec<BenefitRecord>,
    pub intersections: Vec<IntersectionRecord>,
    pub skipped: Vec<SkippedRecord>,
    /// Bins over the intersection-zeroed approach benefits.
    pub histogram: Vec<HistogramBin>,
    pub summary: Summary,
    /// Kernel steps simulated, baseline and policy runs together.
    pub simulated_steps: u64,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Histogram rows `bin_low,bin_high,count`.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_low,bin_high,count\n");
        for b in &self.histogram {
            out.push_str(&format!("{},{},{}\n", b.bin_low, b.bin_high, b.count));
        }
        out
    }
}

/// Contiguous bins `[k·w, (k+1)·w)` covering every value.
pub fn histogram(values: &[f64], width: f64) -> Vec<HistogramBin> {
    let keys: Vec<i64> = values.iter().map(|v| (v / width).floor() as i64).collect();
    let (Some(&lo), Some(&hi)) = (keys.iter().min(), keys.iter().max()) else {
        return Vec::new();
    };
    (lo..=hi)
        .map(|k| HistogramBin {
            bin_low: k as f64 * width,
            bin_high: (k + 1) as f64 * width,
            count: keys.iter().filter(|&&x| x == k).count() as u64,
        })
        .collect()
}

pub fn summarize(records: &[BenefitRecord]) -> Summary {
    if records.is_empty() {
        return Summary::default();
    }
    let mut v: Vec<f64> = records.iter().map(|r| r.emission_benefit_pct).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    Summary {
        records: n,
        mean_pct: v.iter().sum::<f64>() / n as f64,
        median_pct: median,
        min_pct: v[0],
        max_pct: v[n - 1],
        zeroed_fraction: records.iter().filter(|r| r.zeroed).count() as f64 / n as f64,
        positive_fraction: v.iter().filter(|x| **x > 0.0).count() as f64 / n as f64,
    }
}

struct Job {
    context: usize,
    seed: u64,
}

type JobOutcome = Result<(EpisodeMetrics, EpisodeMetrics), String>;

fn run_pair(spec: &EpisodeSpec, controller: &ControllerSpec, coeffs: &EmissionCoefficients) -> JobOutcome {
    let base = run_episode(spec, None, coeffs).map_err(|e| format!("baseline seed {}: {e}", spec.seed))?;
    let mut c = controller.build(spec.seed);
    let policy = run_episode(spec, Some(c.as_mut()), coeffs).map_err(|e| format!("policy seed {}: {e}", spec.seed))?;
    Ok((base, policy))
}

/// Run every (context, seed) pair on a pool of `workers` threads and
/// assemble the report in context order.
pub fn run_campaign(campaign: &Campaign, workers: usize) -> Result<EvalReport, EvalError> {
    let spec = &campaign.spec;
    let (coeffs, coefficient_hash) = campaign.coefficients()?;
    let (contexts, mut skipped) = campaign.test_contexts()?;
    let jobs: Vec<Job> = (0..contexts.len())
        .flat_map(|c| {
            (0..spec.seeds_per_context).map(move |k| Job { context: c, seed: k })
        })
        .collect();
    let make_spec = |ctx: &ContextVector, k: u64| EpisodeSpec {
        context: ctx.clone(),
        seed: derive_seed(ctx.seed, k),
        sim: spec.episode.sim.clone(),
        reward: spec.episode.reward.clone(),
        drivers: spec.episode.drivers.clone(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| EvalError::InvalidCampaign(format!("worker pool: {e}")))?;
    let outcomes: Vec<JobOutcome> = pool.install(|| {
        jobs.par_iter()
            .map(|j| {
                let ctx = &contexts[j.context];
                ctx.validate().map_err(|e| e.to_string())?;
                run_pair(&make_spec(ctx, j.seed), &spec.controller, &coeffs)
            })
            .collect()
    });

    let mut records = Vec::new();
    let mut intersections = Vec::new();
    let mut simulated_steps = 0;
    let per = spec.seeds_per_context as usize;
    for (ci, ctx) in contexts.iter().enumerate() {
        let slice = &outcomes[ci * per..(ci + 1) * per];
        let mut base = Vec::with_capacity(per);
        let mut policy = Vec::with_capacity(per);
        let mut failure = None;
        for o in slice {
            match o {
                Ok((b, p)) => {
                    simulated_steps += b.simulated_steps + p.simulated_steps;
                    base.push(b.clone());
                    policy.push(p.clone());
                }
                Err(e) => {
                    failure.get_or_insert_with(|| e.clone());
                }
            }
        }
        if let Some(reason) = failure {
            skipped.push(SkippedRecord { context: ctx.id.clone(), approach: None, reason });
            continue;
        }
        let seeds: Vec<u64> = (0..spec.seeds_per_context).map(|k| derive_seed(ctx.seed, k)).collect();
        let (b, p) = (
            EpisodeMetrics::pooled(&base).expect("at least one seed"),
            EpisodeMetrics::pooled(&policy).expect("at least one seed"),
        );
        match benefits(&ctx.id, &p, &b, &seeds) {
            Ok((inter, per_approach)) => {
                intersections.push(inter);
                for r in per_approach {
                    match r {
                        Ok(r) => records.push(r),
                        Err((a, e)) => skipped.push(SkippedRecord {
                            context: ctx.id.clone(),
                            approach: Some(a),
                            reason: e.to_string(),
                        }),
                    }
                }
            }
            Err(e) => skipped.push(SkippedRecord {
                context: ctx.id.clone(),
                approach: None,
                reason: e.to_string(),
            }),
        }
    }
    let values: Vec<f64> = records.iter().map(|r| r.emission_benefit_pct).collect();
    Ok(EvalReport {
        campaign: spec.name.clone(),
        campaign_hash: campaign.hash.clone(),
        coefficient_hash,
        controller: spec.controller.clone(),
        bin_width: spec.bin_width,
        histogram: histogram(&values, spec.bin_width),
        summary: summarize(&records),
        records,
        intersections,
        skipped,
        simulated_steps,
    })
}
