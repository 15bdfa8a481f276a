use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::Dataset;
use crate::error::{Error, Result};
use crate::seed::{self, stream};

pub const TEST_FRACTION: f64 = 0.30;
/// Share of each client's training data held out for per-class accuracy.
pub const VALIDATION_FRACTION: f64 = 0.10;

/// Sample indices into one client's sample list.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClientSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub clients: Vec<ClientSplit>,
}

/// Per client and class: `floor(test_fraction * n)` test samples (at least
/// one when the class has two or more), the rest for training, of which
/// about 10% (rounded, never the last training sample) go to validation.
/// Each client's shuffle is keyed by its id, not its position.
pub fn stratified_split(dataset: &Dataset, test_fraction: f64, rng_seed: u64) -> Result<Split> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Parameter(format!("test fraction {test_fraction} must be in [0, 1)")));
    }
    let clients = dataset
        .clients
        .iter()
        .map(|c| {
            let mut rng = seed::rng(rng_seed, &[stream::SPLIT, seed::hash_str(&c.id)]);
            let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, s) in c.samples.iter().enumerate() {
                by_class.entry(s.label).or_default().push(i);
            }
            let mut split = ClientSplit::default();
            for (_, mut idx) in by_class {
                idx.shuffle(&mut rng);
                let n = idx.len();
                let mut n_test = (test_fraction * n as f64).floor() as usize;
                if n >= 2 && test_fraction > 0.0 {
                    n_test = n_test.clamp(1, n - 1);
                }
                let n_train = n - n_test;
                let n_val = ((VALIDATION_FRACTION * n_train as f64).round() as usize).min(n_train.saturating_sub(1));
                split.test.extend_from_slice(&idx[..n_test]);
                split.validation.extend_from_slice(&idx[n_test..n_test + n_val]);
                split.train.extend_from_slice(&idx[n_test + n_val..]);
            }
            split.train.sort_unstable();
            split.validation.sort_unstable();
            split.test.sort_unstable();
            split
        })
        .collect();
    Ok(Split { clients })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, ClientData, SynthConfig};
    use crate::Sample;
    use proptest::prelude::*;

    fn client(id: &str, labels: &[usize]) -> ClientData {
        ClientData { id: id.into(), samples: labels.iter().map(|&l| Sample::new(vec![0.0], l)).collect() }
    }

    #[test]
    fn ten_per_class_is_seven_three() {
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let ds = Dataset::new(1, 2, vec![client("a", &labels)]).unwrap();
        let s = &stratified_split(&ds, TEST_FRACTION, 0).unwrap().clients[0];
        for y in 0..2 {
            let count = |idx: &[usize]| idx.iter().filter(|&&i| labels[i] == y).count();
            assert_eq!(count(&s.test), 3);
            assert_eq!(count(&s.train) + count(&s.validation), 7);
            assert_eq!(count(&s.validation), 1);
        }
    }

    #[test]
    fn singleton_class_goes_to_train() {
        let ds = Dataset::new(1, 2, vec![client("a", &[0, 0, 0, 1])]).unwrap();
        let s = &stratified_split(&ds, TEST_FRACTION, 0).unwrap().clients[0];
        assert!(s.train.contains(&3));
        assert!(!s.test.contains(&3));
    }

    #[test]
    fn independent_of_client_order() {
        let ds = generate_synthetic(&SynthConfig { clients: 4, samples_per_client: 40, ..Default::default() }).unwrap();
        let mut reversed = ds.clone();
        reversed.clients.reverse();
        let a = stratified_split(&ds, TEST_FRACTION, 3).unwrap();
        let b = stratified_split(&reversed, TEST_FRACTION, 3).unwrap();
        for (i, s) in a.clients.iter().enumerate() {
            assert_eq!(s, &b.clients[ds.clients.len() - 1 - i]);
        }
    }

    proptest! {
        #[test]
        fn disjoint_and_covering(labels in proptest::collection::vec(0usize..4, 1..60), s in 0u64..1000) {
            let ds = Dataset::new(1, 4, vec![client("x", &labels)]).unwrap();
            let sp = &stratified_split(&ds, TEST_FRACTION, s).unwrap().clients[0];
            let mut all: Vec<usize> = sp.train.iter().chain(&sp.validation).chain(&sp.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            prop_assert_eq!(sp, &stratified_split(&ds, TEST_FRACTION, s).unwrap().clients[0]);
        }
    }
}
