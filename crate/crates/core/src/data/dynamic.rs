use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};

use super::{ClientSplit, Dataset, Split};
use crate::error::{Error, Result};
use crate::seed::{self, stream};

pub const AFFECTED_FRACTION: f64 = 0.6;

/// Labels withheld from a subset of clients at the start and handed back one
/// per client every `period` rounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DynamicSchedule {
    pub period: usize,
    /// Client index to withheld labels, in reintroduction order.
    pub withheld: BTreeMap<usize, Vec<usize>>,
}

impl DynamicSchedule {
    /// Picks `round(affected_fraction * clients)` clients; each withholds
    /// `ceil((C - 1) / 2)` of its labels, always keeping at least one.
    pub fn build(dataset: &Dataset, affected_fraction: f64, period: usize, rng_seed: u64) -> Result<Self> {
        if period == 0 {
            return Err(Error::Parameter("reintroduction period must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&affected_fraction) {
            return Err(Error::Parameter(format!("affected fraction {affected_fraction} must be in [0, 1]")));
        }
        let n = dataset.clients.len();
        let mut rng = seed::rng(rng_seed, &[stream::SCHEDULE]);
        let count = ((affected_fraction * n as f64).round() as usize).min(n);
        let mut affected: Vec<usize> = index::sample(&mut rng, n, count).into_vec();
        affected.sort_unstable();
        let per_client = dataset.num_classes.saturating_sub(1).div_ceil(2);
        let withheld = affected
            .into_iter()
            .map(|c| {
                let mut labels: Vec<usize> = dataset.clients[c].labels().into_iter().collect();
                labels.shuffle(&mut rng);
                labels.truncate(per_client.min(labels.len().saturating_sub(1)));
                (c, labels)
            })
            .collect();
        Ok(Self { period, withheld })
    }

    /// Labels of `client` still hidden at `round`.
    pub fn hidden(&self, client: usize, round: usize) -> &[usize] {
        match self.withheld.get(&client) {
            Some(labels) => &labels[(round / self.period).min(labels.len())..],
            None => &[],
        }
    }

    /// Rounds at which at least one label comes back.
    pub fn reintroduction_rounds(&self) -> Vec<usize> {
        let longest = self.withheld.values().map(Vec::len).max().unwrap_or(0);
        (1..=longest).map(|k| k * self.period).collect()
    }
}

/// The split as seen at `round`: samples of still-hidden labels are removed
/// from every part of the affected clients' splits.
pub fn apply_dynamic(dataset: &Dataset, split: &Split, schedule: &DynamicSchedule, round: usize) -> Split {
    let clients = split
        .clients
        .iter()
        .enumerate()
        .map(|(c, s)| {
            let hidden = schedule.hidden(c, round);
            if hidden.is_empty() {
                return s.clone();
            }
            let visible = |idx: &Vec<usize>| -> Vec<usize> {
                idx.iter().copied().filter(|&i| !hidden.contains(&dataset.clients[c].samples[i].label)).collect()
            };
            ClientSplit { train: visible(&s.train), validation: visible(&s.validation), test: visible(&s.test) }
        })
        .collect();
    Split { clients }
}
