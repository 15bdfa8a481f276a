use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Gamma, Normal};
use serde::{Deserialize, Serialize};

use super::{ClientData, Dataset};
use crate::error::{Error, Result};
use crate::seed::{self, stream};
use crate::Sample;

/// Synthetic non-IID population.
///
/// Each class has a global mean. Per class, clients are split evenly (at
/// random) across `styles` latent groups; a group shifts the class mean by an
/// offset of scale `jitter`, and each client adds its own offset of scale
/// `style_spread * jitter`. Samples are isotropic Gaussians of std
/// `noise_std` around the resulting client-class mean. Label proportions per
/// client come from a symmetric Dirichlet with parameter `concentration`
/// (`inf` gives uniform proportions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub clients: usize,
    pub classes: usize,
    pub feature_dim: usize,
    pub samples_per_client: usize,
    pub class_separation: f64,
    pub noise_std: f64,
    pub jitter: f64,
    pub styles: usize,
    pub style_spread: f64,
    pub concentration: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            clients: 20,
            classes: 6,
            feature_dim: 8,
            samples_per_client: 300,
            class_separation: 2.0,
            noise_std: 1.0,
            jitter: 3.0,
            styles: 3,
            style_spread: 0.05,
            concentration: 0.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && !v.is_nan() {
                Ok(())
            } else {
                Err(Error::Parameter(format!("{name} must be > 0, got {v}")))
            }
        };
        let non_negative = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Parameter(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        for (name, v) in [
            ("clients", self.clients),
            ("classes", self.classes),
            ("feature_dim", self.feature_dim),
            ("samples_per_client", self.samples_per_client),
            ("styles", self.styles),
        ] {
            if v == 0 {
                return Err(Error::Parameter(format!("{name} must be >= 1")));
            }
        }
        positive("noise_std", self.noise_std)?;
        positive("class_separation", self.class_separation)?;
        positive("concentration", self.concentration)?;
        non_negative("jitter", self.jitter)?;
        non_negative("style_spread", self.style_spread)?;
        Ok(())
    }
}

fn gaussian_vec(rng: &mut impl Rng, dim: usize, std: f64) -> Vec<f64> {
    if std == 0.0 {
        return vec![0.0; dim];
    }
    let normal = Normal::new(0.0, std).expect("finite std");
    (0..dim).map(|_| normal.sample(rng)).collect()
}

fn label_proportions(rng: &mut impl Rng, classes: usize, concentration: f64) -> Vec<f64> {
    if concentration.is_infinite() {
        return vec![1.0; classes];
    }
    let gamma = Gamma::new(concentration, 1.0).expect("positive shape");
    let draws: Vec<f64> = (0..classes).map(|_| gamma.sample(rng)).collect();
    if draws.iter().sum::<f64>() > 0.0 {
        draws
    } else {
        // Every draw underflowed; put all the mass on one class.
        let mut p = vec![0.0; classes];
        p[rng.random_range(0..classes)] = 1.0;
        p
    }
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let (dim, classes) = (cfg.feature_dim, cfg.classes);
    let mut rng = seed::rng(cfg.seed, &[stream::SYNTH]);

    let class_means: Vec<Vec<f64>> = (0..classes).map(|_| gaussian_vec(&mut rng, dim, cfg.class_separation)).collect();
    let style_offsets: Vec<Vec<Vec<f64>>> =
        (0..classes).map(|_| (0..cfg.styles).map(|_| gaussian_vec(&mut rng, dim, cfg.jitter)).collect()).collect();
    let style_of: Vec<Vec<usize>> = (0..classes)
        .map(|_| {
            let mut order: Vec<usize> = (0..cfg.clients).collect();
            order.shuffle(&mut rng);
            let mut style = vec![0; cfg.clients];
            for (rank, &client) in order.iter().enumerate() {
                style[client] = rank % cfg.styles;
            }
            style
        })
        .collect();

    let width = (cfg.clients - 1).to_string().len();
    let clients = (0..cfg.clients)
        .map(|u| {
            let mut rng = seed::rng(cfg.seed, &[stream::SYNTH, u as u64 + 1]);
            let means: Vec<Vec<f64>> = (0..classes)
                .map(|y| {
                    let own = gaussian_vec(&mut rng, dim, cfg.style_spread * cfg.jitter);
                    (0..dim).map(|d| class_means[y][d] + style_offsets[y][style_of[y][u]][d] + own[d]).collect()
                })
                .collect();
            let weights = label_proportions(&mut rng, classes, cfg.concentration);
            let pick = WeightedIndex::new(&weights).expect("non-negative weights with positive sum");
            let noise = Normal::new(0.0, cfg.noise_std).expect("finite std");
            let samples = (0..cfg.samples_per_client)
                .map(|_| {
                    let label = pick.sample(&mut rng);
                    let features = means[label].iter().map(|&m| m + noise.sample(&mut rng)).collect();
                    Sample::new(features, label)
                })
                .collect();
            ClientData { id: format!("c{u:0width$}"), samples }
        })
        .collect();
    Dataset::new(dim, classes, clients)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_counts_and_determinism() {
        let cfg = SynthConfig { clients: 5, samples_per_client: 37, ..Default::default() };
        let ds = generate_synthetic(&cfg).unwrap();
        assert!(ds.clients.iter().all(|c| c.samples.len() == 37));
        assert_eq!(ds, generate_synthetic(&cfg).unwrap());
        assert_ne!(ds, generate_synthetic(&SynthConfig { seed: 1, ..cfg }).unwrap());
    }

    #[test]
    fn homogeneous_limit() {
        let cfg = SynthConfig { jitter: 0.0, concentration: f64::INFINITY, samples_per_client: 600, ..Default::default() };
        let ds = generate_synthetic(&cfg).unwrap();
        for c in &ds.clients {
            let labels = c.labels();
            assert_eq!(labels.len(), cfg.classes);
            for y in labels {
                let n = c.samples.iter().filter(|s| s.label == y).count();
                assert!((50..=150).contains(&n), "class {y} has {n} samples");
            }
        }
    }

    #[test]
    fn skewed_labels_leave_gaps() {
        let missing = (0..50)
            .filter(|&s| {
                let ds = generate_synthetic(&SynthConfig { concentration: 0.1, seed: s, ..Default::default() }).unwrap();
                ds.clients.iter().any(|c| c.labels().len() < 6)
            })
            .count();
        assert!(missing as f64 / 50.0 >= 0.9);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(generate_synthetic(&SynthConfig { noise_std: 0.0, ..Default::default() }).is_err());
        assert!(generate_synthetic(&SynthConfig { concentration: 0.0, ..Default::default() }).is_err());
        assert!(generate_synthetic(&SynthConfig { clients: 0, ..Default::default() }).is_err());
    }
}
