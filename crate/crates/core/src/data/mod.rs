//! Datasets, CSV ingestion, synthetic non-IID generation, stratified splits
//! and the dynamic label-reintroduction schedule.

mod csv_io;
mod dynamic;
mod split;
mod synth;

pub use csv_io::{load_csv, read_csv, save_csv, write_csv};
pub use dynamic::{apply_dynamic, DynamicSchedule, AFFECTED_FRACTION};
pub use split::{stratified_split, ClientSplit, Split, TEST_FRACTION, VALIDATION_FRACTION};
pub use synth::{generate_synthetic, SynthConfig};

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::Sample;

#[derive(Debug, Clone, PartialEq)]
pub struct ClientData {
    pub id: String,
    pub samples: Vec<Sample>,
}

impl ClientData {
    pub fn labels(&self) -> BTreeSet<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

/// Per-client labeled samples over a shared feature space and label universe
/// `0..num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub clients: Vec<ClientData>,
}

impl Dataset {
    pub fn new(feature_dim: usize, num_classes: usize, clients: Vec<ClientData>) -> Result<Self> {
        let ds = Self { feature_dim, num_classes, clients };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut seen = BTreeSet::new();
        for c in &self.clients {
            if !seen.insert(c.id.as_str()) {
                return Err(Error::Parameter(format!("duplicate client id {:?}", c.id)));
            }
            if c.samples.is_empty() {
                return Err(Error::Parameter(format!("client {:?} has no samples", c.id)));
            }
            for s in &c.samples {
                if s.features.len() != self.feature_dim {
                    return Err(Error::InputShape { expected: self.feature_dim, actual: s.features.len() });
                }
                if s.label >= self.num_classes {
                    return Err(Error::Label { label: s.label, classes: self.num_classes });
                }
                if s.features.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Parameter(format!("client {:?} has a non-finite feature", c.id)));
                }
            }
        }
        Ok(())
    }

    pub fn label_universe(&self) -> Vec<usize> {
        (0..self.num_classes).collect()
    }

    pub fn client_index(&self, id: &str) -> Option<usize> {
        self.clients.iter().position(|c| c.id == id)
    }

    pub fn total_samples(&self) -> usize {
        self.clients.iter().map(|c| c.samples.len()).sum()
    }

    /// Zero-mean, unit-variance features over the whole dataset. Constant
    /// features are only centered.
    pub fn standardize(&mut self) {
        let n = self.total_samples() as f64;
        let mut mean = vec![0.0; self.feature_dim];
        let all = || self.clients.iter().flat_map(|c| &c.samples);
        for s in all() {
            mean.iter_mut().zip(&s.features).for_each(|(m, &x)| *m += x / n);
        }
        let mut var = vec![0.0; self.feature_dim];
        for s in all() {
            var.iter_mut().zip(s.features.iter().zip(&mean)).for_each(|(v, (&x, &m))| *v += (x - m) * (x - m) / n);
        }
        let std: Vec<f64> = var.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        for s in self.clients.iter_mut().flat_map(|c| &mut c.samples) {
            for ((x, &m), &sd) in s.features.iter_mut().zip(&mean).zip(&std) {
                *x = (*x - m) / sd;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardize_moments() {
        let mut ds = Dataset::new(
            2,
            2,
            vec![
                ClientData { id: "a".into(), samples: vec![Sample::new(vec![1.0, 5.0], 0), Sample::new(vec![3.0, 5.0], 1)] },
                ClientData { id: "b".into(), samples: vec![Sample::new(vec![5.0, 5.0], 0)] },
            ],
        )
        .unwrap();
        ds.standardize();
        let xs: Vec<f64> = ds.clients.iter().flat_map(|c| c.samples.iter().map(|s| s.features[0])).collect();
        let mean = xs.iter().sum::<f64>() / 3.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        assert!(ds.clients.iter().all(|c| c.samples.iter().all(|s| s.features[1] == 0.0)));
    }

    #[test]
    fn validation_errors() {
        let c = |id: &str, label| ClientData { id: id.into(), samples: vec![Sample::new(vec![0.0], label)] };
        assert!(Dataset::new(1, 2, vec![c("a", 0), c("a", 1)]).is_err());
        assert!(Dataset::new(1, 2, vec![c("a", 2)]).is_err());
        assert!(Dataset::new(2, 2, vec![c("a", 0)]).is_err());
        assert!(Dataset::new(1, 2, vec![]).is_err());
    }
}
