//! Per-class posteriors and the driver population they induce.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{parse_class, sample_posterior, CalibrationError, CalibrationPrior, ChainConfig, PosteriorSample, PosteriorSummary, TrajectoryDataset};
use crate::sim::rng::derive_seed;
use crate::sim::{DriverModel, DriverPopulation, VehicleClass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFit {
    pub class: VehicleClass,
    pub transitions: usize,
    /// No data: the class keeps the shipped default driver model.
    pub defaults_used: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posterior: Option<PosteriorSample>,
    pub summary: Vec<PosteriorSummary>,
    pub acceptance_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationFit {
    pub prior: CalibrationPrior,
    pub chains: ChainConfig,
    pub classes: Vec<ClassFit>,
}

impl PopulationFit {
    /// Driver population drawing θ uniformly from each fitted class's
    /// posterior draws; classes without data keep the defaults.
    pub fn driver_population(&self) -> DriverPopulation {
        let mut pop = DriverPopulation::default();
        for c in &self.classes {
            let Some(post) = &c.posterior else { continue };
            let model = DriverModel::Empirical { draws: post.theta_draws() };
            match c.class {
                VehicleClass::Car => pop.car = model,
                VehicleClass::TruckBus => pop.truck_bus = model,
            }
        }
        pop
    }

    /// Report without the raw chains.
    pub fn report(&self) -> PopulationFit {
        PopulationFit {
            classes: self
                .classes
                .iter()
                .map(|c| ClassFit { posterior: None, ..c.clone() })
                .collect(),
            ..self.clone()
        }
    }
}

/// Fit one posterior per class label (`car`, `truck_bus`). Classes with no
/// transitions are reported with `defaults_used`.
pub fn fit_population(
    datasets: &BTreeMap<String, TrajectoryDataset>,
    prior: &CalibrationPrior,
    chains: &ChainConfig,
) -> Result<PopulationFit, CalibrationError> {
    let mut by_class: BTreeMap<VehicleClass, &TrajectoryDataset> = BTreeMap::new();
    for (label, data) in datasets {
        by_class.insert(parse_class(label)?, data);
    }
    let mut classes = Vec::new();
    for (k, class) in [VehicleClass::Car, VehicleClass::TruckBus].into_iter().enumerate() {
        let data = by_class.get(&class).filter(|d| !d.is_empty());
        let fit = match data {
            None => ClassFit {
                class,
                transitions: 0,
                defaults_used: true,
                posterior: None,
                summary: Vec::new(),
                acceptance_rate: None,
            },
            Some(d) => {
                let cfg = ChainConfig {
                    seed: derive_seed(chains.seed, k as u64),
                    ..chains.clone()
                };
                let post = sample_posterior(prior, d, &cfg)?;
                ClassFit {
                    class,
                    transitions: d.len(),
                    defaults_used: false,
                    summary: post.summaries(),
                    acceptance_rate: Some(post.acceptance_rate),
                    posterior: Some(post),
                }
            }
        };
        classes.push(fit);
    }
    Ok(PopulationFit {
        prior: prior.clone(),
        chains: chains.clone(),
        classes,
    })
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return (0.0, 1.0);
    }
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    // Kolmogorov survival function.
    let mut p = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-1.0f64).powi(k - 1) * (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_detects_shift_and_accepts_equal() {
        let a: Vec<f64> = (0..500).map(|i| i as f64 / 500.0).collect();
        let b: Vec<f64> = (0..400).map(|i| (i as f64 + 0.5) / 400.0).collect();
        assert!(ks_two_sample(&a, &b).1 > 0.5);
        let c: Vec<f64> = b.iter().map(|x| x + 0.3).collect();
        assert!(ks_two_sample(&a, &c).1 < 1e-6);
    }

    #[test]
    fn empty_class_uses_defaults() {
        let mut sets = BTreeMap::new();
        sets.insert("truck_bus".to_string(), TrajectoryDataset::empty(0.5));
        let cfg = ChainConfig { warmup: 40, samples: 20, chains: 2, ..ChainConfig::new(0) };
        let fit = fit_population(&sets, &CalibrationPrior::default(), &cfg).unwrap();
        assert!(fit.classes.iter().all(|c| c.defaults_used));
        assert_eq!(fit.driver_population(), DriverPopulation::default());
    }

    #[test]
    fn unknown_label_errors() {
        let mut sets = BTreeMap::new();
        sets.insert("tram".to_string(), TrajectoryDataset::empty(0.5));
        let cfg = ChainConfig::new(0);
        assert!(matches!(
            fit_population(&sets, &CalibrationPrior::default(), &cfg),
            Err(CalibrationError::UnknownClass(_))
        ));
    }
}
