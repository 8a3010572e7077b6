//! Subcommand bodies. Each reads its config, writes outputs into the output
//! directory and finishes with the manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};

use ecozoo::calibrate::{fit_population, parse_class, synthetic_dataset, CalibrationPrior, ChainConfig, TrajectoryDataset};
use ecozoo::context::{load_dataset, optimize_signal_plan, sample_context, save_dataset, FeatureDistribution, PlanSearch, SearchGrid};
use ecozoo::emissions::{coefficient_hash, EmissionCoefficients, DEFAULT_COEFFICIENTS};
use ecozoo::env::{Env, EpisodeSpec, RewardConfig};
use ecozoo::eval::{episode_cost, Campaign, ControllerSpec, EpisodeMetrics};
use ecozoo::sim::rng::{stream, StreamId};
use ecozoo::sim::trace::TraceWriter;
use ecozoo::sim::{DriverPopulation, SimConfig};

use crate::manifest::Manifest;
use crate::{Common, Failure};

type Outcome = Result<(), Failure>;

fn workers(common: &Common) -> usize {
    common
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

/// Check the config exists, prepare the output directory and size the
/// global worker pool.
fn prepare(common: &Common) -> Result<usize, Failure> {
    if !common.config.is_file() {
        return Err(Failure::Usage(format!("config file {} not found", common.config.display())));
    }
    if common.out.exists() {
        let occupied = std::fs::read_dir(&common.out)
            .map_err(|e| Failure::Usage(format!("output {}: {e}", common.out.display())))?
            .next()
            .is_some();
        if occupied && !common.force {
            return Err(Failure::Usage(format!(
                "output directory {} is not empty; pass --force to overwrite",
                common.out.display()
            )));
        }
    }
    std::fs::create_dir_all(&common.out)
        .with_context(|| format!("creating {}", common.out.display()))?;
    let n = workers(common);
    // A second call in the same process keeps the first pool; harmless.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(n)
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn log(common: &Common, msg: impl AsRef<str>) {
    if common.verbose {
        eprintln!("{}", msg.as_ref());
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn generate(common: &Common, seed: u64, count: usize) -> Outcome {
    let started = Instant::now();
    let n_workers = prepare(common)?;
    let dist = FeatureDistribution::load(&common.config).context("loading the feature distribution")?;
    dist.validate()?;
    let mut rng = stream(seed, StreamId::Other(1));
    let contexts = (0..count)
        .map(|i| sample_context(&dist, &mut rng).with_context(|| format!("context {i}")))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let out = common.out.join("contexts.jsonl");
    save_dataset(&contexts, &out).context("writing contexts.jsonl")?;
    log(common, format!("wrote {count} contexts"));
    Manifest::new("generate", &common.config, Some(seed), n_workers)?.write(&common.out, &[out], started)?;
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SignalOptConfig {
    /// Context dataset whose plans are re-optimized.
    contexts: PathBuf,
    grid: SearchGrid,
}

#[derive(Debug, Serialize)]
struct PlanAudit<'a> {
    context: &'a str,
    certificate_holds: bool,
    search: &'a PlanSearch,
}

pub fn signal_opt(common: &Common, seed: u64) -> Outcome {
    let started = Instant::now();
    let n_workers = prepare(common)?;
    let cfg: SignalOptConfig = read_toml(&common.config)?;
    let grid = SearchGrid { seed, ..cfg.grid };
    let input = base_dir(&common.config).join(&cfg.contexts);
    let mut contexts = load_dataset(&input).with_context(|| format!("loading {}", input.display()))?;
    let mut searches = Vec::with_capacity(contexts.len());
    for ctx in &mut contexts {
        let search = optimize_signal_plan(&ctx.topology, &ctx.inflows, &grid).with_context(|| format!("context {}", ctx.id))?;
        log(common, format!("{}: candidate {} wins", ctx.id, search.best));
        ctx.plan = search.plan.clone();
        ctx.features = None;
        searches.push(search);
    }
    let audits: Vec<PlanAudit> = contexts
        .iter()
        .zip(&searches)
        .map(|(c, s)| PlanAudit {
            context: &c.id,
            certificate_holds: s.certificate_holds(),
            search: s,
        })
        .collect();
    let plans = common.out.join("plans.jsonl");
    let audit = common.out.join("audit.json");
    save_dataset(&contexts, &plans).context("writing plans.jsonl")?;
    write_json(&audit, &audits)?;
    let mut m = Manifest::new("signal-opt", &common.config, Some(seed), n_workers)?;
    m.input(&input)?;
    m.write(&common.out, &[plans, audit], started)?;
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    /// Context dataset.
    contexts: PathBuf,
    /// Record of the dataset to run.
    #[serde(default)]
    index: usize,
    /// Controller for the adopting vehicles; all-human when absent.
    #[serde(default)]
    controller: Option<ControllerSpec>,
    #[serde(default)]
    sim: SimConfig,
    #[serde(default)]
    reward: RewardConfig,
    /// Driver population file written by `calibrate`.
    #[serde(default)]
    drivers: Option<PathBuf>,
    #[serde(default)]
    coefficients: Option<PathBuf>,
    /// Travel-time weight of the episode cost.
    #[serde(default)]
    lambda: f64,
}

#[derive(Debug, Serialize)]
struct SimulateSummary<'a> {
    context: &'a str,
    seed: u64,
    controller: Option<&'a ControllerSpec>,
    lambda: f64,
    cost: f64,
    metrics: &'a EpisodeMetrics,
}

fn coefficients(path: Option<&Path>, m: &mut Manifest) -> anyhow::Result<EmissionCoefficients> {
    let text = match path {
        Some(p) => {
            m.input(p)?;
            std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?
        }
        None => DEFAULT_COEFFICIENTS.to_string(),
    };
    m.coefficient_hash = Some(coefficient_hash(&text));
    Ok(EmissionCoefficients::from_toml_str(&text)?)
}

pub fn simulate(common: &Common, seed: u64, trace: bool) -> Outcome {
    let started = Instant::now();
    let n_workers = prepare(common)?;
    let cfg: SimulateConfig = read_toml(&common.config)?;
    let base = base_dir(&common.config);
    let mut m = Manifest::new("simulate", &common.config, Some(seed), n_workers)?;
    let input = base.join(&cfg.contexts);
    m.input(&input)?;
    let contexts = load_dataset(&input).with_context(|| format!("loading {}", input.display()))?;
    let context = contexts
        .get(cfg.index)
        .ok_or_else(|| anyhow!("index {} out of range for {} contexts", cfg.index, contexts.len()))?
        .clone();
    let drivers = match &cfg.drivers {
        Some(p) => {
            let p = base.join(p);
            m.input(&p)?;
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<DriverPopulation>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => DriverPopulation::default(),
    };
    let coeffs = coefficients(cfg.coefficients.as_ref().map(|p| base.join(p)).as_deref(), &mut m)?;
    let spec = EpisodeSpec {
        context,
        seed,
        sim: cfg.sim,
        reward: cfg.reward,
        drivers,
    };
    let mut controller = cfg.controller.as_ref().map(|c| c.build(seed));
    let (mut env, mut obs) = Env::reset_with_control(spec, coeffs, controller.is_some())
        .with_context(|| format!("context {}", contexts[cfg.index].id))?;
    let trace_path = common.out.join("trace.csv");
    let mut writer = if trace {
        Some(TraceWriter::new(BufWriter::new(
            File::create(&trace_path).context("creating trace.csv")?,
        )))
    } else {
        None
    };
    if let Some(w) = writer.as_mut() {
        w.record(env.state())?;
    }
    let empty = BTreeMap::new();
    while !env.is_done() {
        let actions = match controller.as_mut() {
            Some(c) => c.act(&env, &obs)?,
            None => empty.clone(),
        };
        obs = env.step(&actions)?.observations;
        if let Some(w) = writer.as_mut() {
            w.record(env.state())?;
        }
    }
    let mut outputs = Vec::new();
    if let Some(w) = writer {
        w.finish()?;
        outputs.push(trace_path);
    }
    let metrics = EpisodeMetrics::from_env(&env);
    let summary = SimulateSummary {
        context: &env.spec().context.id,
        seed,
        controller: cfg.controller.as_ref(),
        lambda: cfg.lambda,
        cost: episode_cost(&metrics, cfg.lambda),
        metrics: &metrics,
    };
    let metrics_path = common.out.join("metrics.json");
    write_json(&metrics_path, &summary)?;
    outputs.push(metrics_path);
    log(common, format!("throughput {} emission {:.1} g", metrics.throughput, metrics.total_emission_g));
    m.write(&common.out, &outputs, started)?;
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Synthetic {
    theta: [f64; 5],
    sigma: f64,
    transitions: usize,
    #[serde(default = "default_dt")]
    dt: f64,
}

fn default_dt() -> f64 {
    0.5
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSource {
    /// `car` or `truck_bus`.
    class: String,
    /// Trace export; only rows of this class are used.
    #[serde(default)]
    trace: Option<PathBuf>,
    /// Transitions generated from known parameters.
    #[serde(default)]
    synthetic: Option<Synthetic>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrateConfig {
    #[serde(default)]
    prior: CalibrationPrior,
    #[serde(default = "default_chains")]
    chains: ChainConfig,
    #[serde(default)]
    data: Vec<DataSource>,
}

fn default_chains() -> ChainConfig {
    ChainConfig::new(0)
}

pub fn calibrate(common: &Common, seed: u64) -> Outcome {
    let started = Instant::now();
    let n_workers = prepare(common)?;
    let cfg: CalibrateConfig = read_toml(&common.config)?;
    let base = base_dir(&common.config);
    let mut m = Manifest::new("calibrate", &common.config, Some(seed), n_workers)?;
    let mut sets: BTreeMap<String, TrajectoryDataset> = BTreeMap::new();
    for (i, src) in cfg.data.iter().enumerate() {
        let class = parse_class(&src.class).with_context(|| format!("data[{i}].class"))?;
        let part = match (&src.trace, &src.synthetic) {
            (Some(p), None) => {
                let p = base.join(p);
                m.input(&p)?;
                TrajectoryDataset::load_trace(&p)
                    .with_context(|| format!("data[{i}].trace {}", p.display()))?
                    .of_class(class)
            }
            (None, Some(s)) => {
                let mut rng = stream(seed, StreamId::Other(100 + i as u64));
                synthetic_dataset(&s.theta, s.sigma, s.transitions, s.dt, class, &mut rng)
            }
            _ => return Err(anyhow!("data[{i}]: give exactly one of trace or synthetic").into()),
        };
        let entry = sets.entry(src.class.clone()).or_insert_with(|| TrajectoryDataset::empty(part.dt));
        if !entry.is_empty() && (entry.dt - part.dt).abs() > 1e-12 {
            return Err(anyhow!("data[{i}]: step length {} differs from {} for class {}", part.dt, entry.dt, src.class).into());
        }
        entry.dt = part.dt;
        entry.drivers.extend(part.drivers);
    }
    let chains = ChainConfig { seed, ..cfg.chains };
    let fit = fit_population(&sets, &cfg.prior, &chains)?;
    for c in &fit.classes {
        log(common, format!("{:?}: {} transitions, defaults used: {}", c.class, c.transitions, c.defaults_used));
    }
    let report = common.out.join("calibration.json");
    let drivers = common.out.join("drivers.json");
    write_json(&report, &fit.report())?;
    write_json(&drivers, &fit.driver_population())?;
    m.write(&common.out, &[report, drivers], started)?;
    Ok(())
}

pub fn evaluate(common: &Common, seed: Option<u64>, bins: Option<f64>) -> Outcome {
    let started = Instant::now();
    let n_workers = prepare(common)?;
    let mut campaign = Campaign::load(&common.config)?;
    if let Some(s) = seed {
        campaign.spec.seed = s;
    }
    if let Some(w) = bins {
        if !(w > 0.0 && w.is_finite()) {
            return Err(Failure::Usage(format!("--bins must be positive, got {w}")));
        }
        campaign.spec.bin_width = w;
    }
    let mut m = Manifest::new("evaluate", &common.config, Some(campaign.spec.seed), n_workers)?;
    for p in &campaign.inputs {
        m.input(p)?;
    }
    let report = ecozoo::eval::run_campaign(&campaign, n_workers)?;
    m.coefficient_hash = Some(report.coefficient_hash.clone());
    log(
        common,
        format!(
            "{} records, {} skipped, mean benefit {:.3}%",
            report.records.len(),
            report.skipped.len(),
            report.summary.mean_pct
        ),
    );
    let report_path = common.out.join("report.json");
    let hist_path = common.out.join("histogram.csv");
    std::fs::write(&report_path, report.to_json()).context("writing report.json")?;
    std::fs::write(&hist_path, report.histogram_csv()).context("writing histogram.csv")?;
    m.write(&common.out, &[report_path, hist_path], started)?;
    Ok(())
}
