//! Class prototypes, prototype-based client similarity and collaborative
//! filtering of missing prototypes.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::Sample;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Computed,
    Predicted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prototype<T> {
    pub label: usize,
    pub vector: Vec<T>,
    pub provenance: Provenance,
}

/// One client's prototypes, at most one per label.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet<T> {
    pub client: usize,
    pub entries: BTreeMap<usize, Prototype<T>>,
}

impl<T: Scalar> PrototypeSet<T> {
    pub fn empty(client: usize) -> Self {
        Self { client, entries: BTreeMap::new() }
    }

    pub fn get(&self, label: usize) -> Option<&Prototype<T>> {
        self.entries.get(&label)
    }

    pub fn computed(&self, label: usize) -> Option<&[T]> {
        self.entries
            .get(&label)
            .filter(|p| p.provenance == Provenance::Computed)
            .map(|p| p.vector.as_slice())
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.keys().copied()
    }
}

/// Per-label mean of the feature vectors in `data`.
pub fn compute_prototypes<T: Scalar>(client: usize, data: &[Sample<T>]) -> Result<PrototypeSet<T>> {
    let dim = data.first().ok_or(Error::EmptyDataset)?.features.len();
    let mut sums: BTreeMap<usize, (Vec<T>, usize)> = BTreeMap::new();
    for s in data {
        if s.features.len() != dim {
            return Err(Error::InputShape { expected: dim, actual: s.features.len() });
        }
        let (sum, n) = sums.entry(s.label).or_insert_with(|| (vec![T::zero(); dim], 0));
        for (acc, &x) in sum.iter_mut().zip(&s.features) {
            *acc += x;
        }
        *n += 1;
    }
    let entries = sums
        .into_iter()
        .map(|(label, (sum, n))| {
            let n = T::lit(n as f64);
            let vector = sum.into_iter().map(|v| v / n).collect();
            (label, Prototype { label, vector, provenance: Provenance::Computed })
        })
        .collect();
    Ok(PrototypeSet { client, entries })
}

/// Cosine similarity; zero-norm vectors score 0.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> T {
    let dot: T = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na = a.iter().map(|&x| x * x).sum::<T>().sqrt();
    let nb = b.iter().map(|&x| x * x).sum::<T>().sqrt();
    if na == T::zero() || nb == T::zero() {
        return T::zero();
    }
    (dot / (na * nb)).max(-T::one()).min(T::one())
}

/// Mean cosine similarity over the labels for which both clients hold a
/// computed prototype; 0 when they share none.
pub fn client_similarity<T: Scalar>(a: &PrototypeSet<T>, b: &PrototypeSet<T>) -> T {
    let mut total = T::zero();
    let mut shared = 0usize;
    for (&label, pa) in &a.entries {
        if pa.provenance != Provenance::Computed {
            continue;
        }
        if let Some(pb) = b.computed(label) {
            total += cosine(&pa.vector, pb);
            shared += 1;
        }
    }
    if shared == 0 {
        T::zero()
    } else {
        total / T::lit(shared as f64)
    }
}

/// Outcome of [`predict_missing_prototypes`].
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionOutcome<T> {
    pub sets: Vec<PrototypeSet<T>>,
    /// `(client, label)` pairs no donor could fill.
    pub unfilled: Vec<(usize, usize)>,
    pub predicted: usize,
}

/// Fills every label of `label_universe` a client lacks with the
/// similarity-weighted mean of the prototypes held by its `n` most similar
/// donors (similarity > 0). Without a positive-similarity donor the plain
/// mean over all donors is used. Similarities use computed prototypes only.
pub fn predict_missing_prototypes<T: Scalar>(
    all: &[PrototypeSet<T>],
    label_universe: &[usize],
    n: usize,
) -> Result<PredictionOutcome<T>> {
    if n == 0 {
        return Err(Error::Parameter("neighbor count must be >= 1".into()));
    }
    let m = all.len();
    let mut sim = vec![T::zero(); m * m];
    for u in 0..m {
        for v in u..m {
            let s = client_similarity(&all[u], &all[v]);
            sim[u * m + v] = s;
            sim[v * m + u] = s;
        }
    }

    let mut sets = all.to_vec();
    let mut unfilled = Vec::new();
    let mut predicted = 0;
    for u in 0..m {
        for &label in label_universe {
            if all[u].entries.contains_key(&label) {
                continue;
            }
            let donors: Vec<usize> = (0..m).filter(|&v| v != u && all[v].computed(label).is_some()).collect();
            if donors.is_empty() {
                unfilled.push((all[u].client, label));
                continue;
            }
            let mut positive: Vec<usize> = donors.iter().copied().filter(|&v| sim[u * m + v] > T::zero()).collect();
            positive.sort_by(|&a, &b| {
                sim[u * m + b]
                    .partial_cmp(&sim[u * m + a])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(all[a].client.cmp(&all[b].client))
            });
            positive.truncate(n);

            let dim = all[donors[0]].computed(label).map_or(0, <[T]>::len);
            let mut vector = vec![T::zero(); dim];
            let weighted: Vec<(usize, T)> = if positive.is_empty() {
                donors.iter().map(|&v| (v, T::one())).collect()
            } else {
                positive.iter().map(|&v| (v, sim[u * m + v])).collect()
            };
            let total: T = weighted.iter().map(|&(_, w)| w).sum();
            for &(v, w) in &weighted {
                let p = all[v].computed(label).expect("donor holds label");
                for (acc, &x) in vector.iter_mut().zip(p) {
                    *acc += w * x;
                }
            }
            vector.iter_mut().for_each(|x| *x /= total);
            sets[u].entries.insert(label, Prototype { label, vector, provenance: Provenance::Predicted });
            predicted += 1;
        }
    }
    Ok(PredictionOutcome { sets, unfilled, predicted })
}
