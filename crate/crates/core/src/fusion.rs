//! Server-side fusion of cluster members' subnetworks into per-client model
//! updates.
//!
//! Fused matrices hold score-weighted subnetwork values, which sit on the
//! `weight x frequency` scale. When a client update is assembled, each fused
//! matrix is divided elementwise by the equally fused activation frequency to
//! return to weight scale, so a cluster of one hands a client back its own
//! weights.

use crate::error::{Error, Result};
use crate::nn::{DenseLayer, Matrix, Mlp};
use crate::subnetworks::{ActivationMask, DepthSetting, LayerMask, LayerUpdate, Subnetwork};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionStrategy {
    ClusterAvg,
    ClusterLeadership,
    #[default]
    OverlappingComponents,
}

/// What the server knows about one cluster member for a class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemberStats<T> {
    pub client: usize,
    /// Training samples of the class, `|D_y|`.
    pub support: usize,
    /// Validation accuracy on the class, in `[0, 1]`.
    pub accuracy: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientScore<T> {
    pub client: usize,
    pub label: usize,
    pub value: T,
}

/// Combined subnetwork of one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedSubnetwork<T> {
    pub label: usize,
    pub values: Vec<DenseLayer<T>>,
    /// Activation frequencies fused with the same weights as `values`.
    pub freq: Vec<DenseLayer<T>>,
    /// Elements the fused matrix carries information for.
    pub mask: ActivationMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate<T> {
    pub client: usize,
    /// One entry per covered layer; empty when the client joined no cluster.
    pub layers: Vec<LayerUpdate<T>>,
}

impl<T> ClientUpdate<T> {
    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNorms<T> {
    pub weights: T,
    pub biases: T,
}

/// Normalized member scores for one class cluster. Cluster AVG and
/// Overlapping score by support, Leadership by accuracy times support.
pub fn score_clients<T: Scalar>(label: usize, members: &[MemberStats<T>], strategy: FusionStrategy) -> Result<Vec<ClientScore<T>>> {
    if members.is_empty() {
        return Err(Error::Parameter("cannot score an empty cluster".into()));
    }
    let raw: Vec<T> = members
        .iter()
        .map(|m| {
            let support = T::lit(m.support as f64);
            match strategy {
                FusionStrategy::ClusterLeadership => m.accuracy.max(T::zero()) * support,
                _ => support,
            }
        })
        .collect();
    let total: T = raw.iter().copied().sum();
    let uniform = T::one() / T::lit(members.len() as f64);
    Ok(members
        .iter()
        .zip(raw)
        .map(|(m, r)| ClientScore { client: m.client, label, value: if total > T::zero() { r / total } else { uniform } })
        .collect())
}

fn check_members<T: Scalar>(members: &[&Subnetwork<T>], scores: &[ClientScore<T>]) -> Result<()> {
    let first = members.first().ok_or_else(|| Error::Parameter("cannot fuse an empty cluster".into()))?;
    if members.len() != scores.len() {
        return Err(Error::Shape(format!("{} members but {} scores", members.len(), scores.len())));
    }
    for m in members {
        if m.values.len() != first.values.len() || m.values.iter().zip(&first.values).any(|(a, b)| !a.same_shape(b)) {
            return Err(Error::Shape("cluster members' subnetworks differ in shape".into()));
        }
    }
    Ok(())
}

fn zeros_like<T: Scalar>(layers: &[DenseLayer<T>]) -> Vec<DenseLayer<T>> {
    layers.iter().map(|l| DenseLayer::zeros(l.in_dim(), l.out_dim())).collect()
}

/// `target += scale * src` on the elements where `keep` is set.
fn add_scaled<T: Scalar>(target: &mut DenseLayer<T>, src: &DenseLayer<T>, scale: T, keep: &LayerMask) {
    for ((t, &s), &k) in target.weights.as_mut_slice().iter_mut().zip(src.weights.as_slice()).zip(&keep.weights) {
        if k {
            *t += scale * s;
        }
    }
    for ((t, &s), &k) in target.biases.iter_mut().zip(&src.biases).zip(&keep.biases) {
        if k {
            *t += scale * s;
        }
    }
}

/// Score-weighted elementwise sum of the members' subnetwork values.
pub fn fuse_cluster_avg<T: Scalar>(members: &[&Subnetwork<T>], scores: &[ClientScore<T>]) -> Result<FusedSubnetwork<T>> {
    check_members(members, scores)?;
    let mut values = zeros_like(&members[0].values);
    let mut freq = zeros_like(&members[0].values);
    let mut mask = members[0].mask.clone();
    for (m, s) in members.iter().zip(scores) {
        for (l, keep) in m.mask.layers.iter().enumerate() {
            add_scaled(&mut values[l], &m.values[l], s.value, keep);
            add_scaled(&mut freq[l], &m.freq.layers[l], s.value, keep);
        }
        mask.union_with(&m.mask)?;
    }
    Ok(FusedSubnetwork { label: members[0].label, values, freq, mask })
}

/// The subnetwork of the highest-scoring member, verbatim. Ties go to the
/// lowest client id.
pub fn fuse_cluster_leadership<T: Scalar>(members: &[&Subnetwork<T>], scores: &[ClientScore<T>]) -> Result<FusedSubnetwork<T>> {
    check_members(members, scores)?;
    let mut leader = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        let best = &scores[leader];
        if s.value > best.value || (s.value == best.value && s.client < best.client) {
            leader = i;
        }
    }
    let m = members[leader];
    Ok(FusedSubnetwork { label: m.label, values: m.values.clone(), freq: m.freq.layers.clone(), mask: m.mask.clone() })
}

/// Score-weighted sum restricted to elements active in every member; zero
/// elsewhere. The returned mask is the intersection of member masks.
pub fn fuse_overlapping<T: Scalar>(members: &[&Subnetwork<T>], scores: &[ClientScore<T>]) -> Result<FusedSubnetwork<T>> {
    check_members(members, scores)?;
    let mut overlap = members[0].mask.clone();
    for m in &members[1..] {
        overlap.intersect_with(&m.mask)?;
    }
    let mut values = zeros_like(&members[0].values);
    let mut freq = zeros_like(&members[0].values);
    for (m, s) in members.iter().zip(scores) {
        for (l, keep) in overlap.layers.iter().enumerate() {
            add_scaled(&mut values[l], &m.values[l], s.value, keep);
            add_scaled(&mut freq[l], &m.freq.layers[l], s.value, keep);
        }
    }
    Ok(FusedSubnetwork { label: members[0].label, values, freq, mask: overlap })
}

pub fn fuse<T: Scalar>(strategy: FusionStrategy, members: &[&Subnetwork<T>], scores: &[ClientScore<T>]) -> Result<FusedSubnetwork<T>> {
    match strategy {
        FusionStrategy::ClusterAvg => fuse_cluster_avg(members, scores),
        FusionStrategy::ClusterLeadership => fuse_cluster_leadership(members, scores),
        FusionStrategy::OverlappingComponents => fuse_overlapping(members, scores),
    }
}

pub fn layer_norms<T: Scalar>(model: &Mlp<T>, covered: usize) -> Vec<LayerNorms<T>> {
    model
        .layers()
        .iter()
        .take(covered)
        .map(|l| LayerNorms {
            weights: l.weights.frobenius_norm(),
            biases: l.biases.iter().map(|&b| b * b).sum::<T>().sqrt(),
        })
        .collect()
}

/// Mean over the contributing clusters of `value / freq` at one element.
#[inline]
fn reconstructed_mean<T: Scalar>(contribs: impl Iterator<Item = (T, T)>) -> Option<T> {
    let mut sum = T::zero();
    let mut n = 0usize;
    for (v, f) in contribs {
        if f > T::zero() {
            sum += v / f;
            n += 1;
        }
    }
    (n > 0).then(|| sum / T::lit(n as f64))
}

/// Builds the update a client receives from the fused subnetworks of the
/// clusters it belongs to (one per class).
///
/// Cluster AVG and Leadership replace every element some cluster contributed
/// to with the average over those clusters, and retain the rest. Overlapping
/// Components blends the client's own weight with that average on elements
/// inside the client's own activation mask, then restores each layer's
/// pre-update norm with [`normalize_layers`].
pub fn assemble_client_update<T: Scalar>(
    client: usize,
    current: &Mlp<T>,
    own_mask: &ActivationMask,
    fused: &[&FusedSubnetwork<T>],
    strategy: FusionStrategy,
    depth: DepthSetting,
) -> Result<ClientUpdate<T>> {
    if fused.is_empty() {
        return Ok(ClientUpdate { client, layers: Vec::new() });
    }
    let covered = depth.covered_layers(current.num_layers())?;
    let shapes_ok = |layers: &[DenseLayer<T>]| {
        layers.len() == covered && layers.iter().zip(current.layers()).all(|(a, b)| a.same_shape(b))
    };
    if fused.iter().any(|f| !shapes_ok(&f.values) || !shapes_ok(&f.freq)) || own_mask.layers.len() != covered {
        return Err(Error::Shape("fused subnetworks do not match the client's covered layers".into()));
    }
    let overlapping = strategy == FusionStrategy::OverlappingComponents;

    let mut layers = Vec::with_capacity(covered);
    for (l, layer) in current.layers().iter().take(covered).enumerate() {
        let mut up = LayerUpdate {
            weights: layer.weights.clone(),
            biases: layer.biases.clone(),
            replace_weights: vec![false; layer.weights.as_slice().len()],
            replace_biases: vec![false; layer.biases.len()],
        };
        let own = &own_mask.layers[l];
        let w_slots = up.weights.as_mut_slice().iter_mut().zip(up.replace_weights.iter_mut()).zip(&own.weights);
        for (k, ((w, replace), &mine)) in w_slots.enumerate() {
            if overlapping && !mine {
                continue;
            }
            let contribs = fused.iter().map(|f| (f.values[l].weights.as_slice()[k], f.freq[l].weights.as_slice()[k]));
            if let Some(avg) = reconstructed_mean(contribs) {
                *w = if overlapping { (*w + avg) / T::lit(2.0) } else { avg };
                *replace = true;
            }
        }
        let b_slots = up.biases.iter_mut().zip(up.replace_biases.iter_mut()).zip(&own.biases);
        for (j, ((b, replace), &mine)) in b_slots.enumerate() {
            if overlapping && !mine {
                continue;
            }
            let contribs = fused.iter().map(|f| (f.values[l].biases[j], f.freq[l].biases[j]));
            if let Some(avg) = reconstructed_mean(contribs) {
                *b = if overlapping { (*b + avg) / T::lit(2.0) } else { avg };
                *replace = true;
            }
        }
        layers.push(up);
    }
    let update = ClientUpdate { client, layers };
    if overlapping {
        normalize_layers(update, &layer_norms(current, covered))
    } else {
        Ok(update)
    }
}

/// Rescales every touched layer so its weight matrix has the reference
/// Frobenius norm and its bias vector the reference Euclidean norm. The
/// update must carry the full post-update layer (retained elements at their
/// current values); rescaled layers become full replacements. Layers that
/// were not touched, or whose norm is zero, are left as they are.
pub fn normalize_layers<T: Scalar>(mut update: ClientUpdate<T>, reference: &[LayerNorms<T>]) -> Result<ClientUpdate<T>> {
    if update.layers.len() != reference.len() {
        return Err(Error::Shape(format!("{} layers but {} reference norms", update.layers.len(), reference.len())));
    }
    for (up, norms) in update.layers.iter_mut().zip(reference) {
        if up.replace_weights.iter().any(|&r| r) {
            let norm = up.weights.frobenius_norm();
            if norm > T::zero() && norms.weights > T::zero() {
                let scale = norms.weights / norm;
                up.weights.as_mut_slice().iter_mut().for_each(|w| *w *= scale);
                up.replace_weights.iter_mut().for_each(|r| *r = true);
            }
        }
        if up.replace_biases.iter().any(|&r| r) {
            let norm = up.biases.iter().map(|&b| b * b).sum::<T>().sqrt();
            if norm > T::zero() && norms.biases > T::zero() {
                let scale = norms.biases / norm;
                up.biases.iter_mut().for_each(|b| *b *= scale);
                up.replace_biases.iter_mut().for_each(|r| *r = true);
            }
        }
    }
    Ok(update)
}

/// Convenience for tests and tools: a frequency-one subnetwork carrying `layers`.
pub fn subnetwork_from_layers<T: Scalar>(label: usize, layers: Vec<DenseLayer<T>>, support: usize) -> Subnetwork<T> {
    let masks = layers
        .iter()
        .map(|l| LayerMask {
            rows: l.in_dim(),
            cols: l.out_dim(),
            weights: l.weights.as_slice().iter().map(|&w| w != T::zero()).collect(),
            biases: l.biases.iter().map(|&b| b != T::zero()).collect(),
        })
        .collect::<Vec<_>>();
    let freq = masks
        .iter()
        .map(|m| DenseLayer {
            weights: Matrix::from_vec(m.rows, m.cols, m.weights.iter().map(|&b| if b { T::one() } else { T::zero() }).collect())
                .expect("sized"),
            biases: m.biases.iter().map(|&b| if b { T::one() } else { T::zero() }).collect(),
        })
        .collect();
    Subnetwork {
        label,
        values: layers,
        mask: ActivationMask { layers: masks },
        freq: crate::subnetworks::FrequencyMask { layers: freq },
        support,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_by_two(values: [f64; 2]) -> Subnetwork<f64> {
        let layer = DenseLayer::new(Matrix::from_vec(1, 2, values.to_vec()).unwrap(), vec![0.0, 0.0]).unwrap();
        subnetwork_from_layers(0, vec![layer], 1)
    }

    fn scores(values: &[f64]) -> Vec<ClientScore<f64>> {
        values.iter().enumerate().map(|(i, &v)| ClientScore { client: i, label: 0, value: v }).collect()
    }

    #[test]
    fn scoring() {
        let m = |client, support, accuracy: f64| MemberStats { client, support, accuracy };
        let s = score_clients(0, &[m(0, 10, 1.0), m(1, 30, 1.0)], FusionStrategy::ClusterAvg).unwrap();
        assert_eq!(s.iter().map(|c| c.value).collect::<Vec<_>>(), vec![0.25, 0.75]);

        let s = score_clients(0, &[m(0, 10, 1.0), m(1, 40, 0.5)], FusionStrategy::ClusterLeadership).unwrap();
        assert!((s[0].value - 1.0 / 3.0).abs() < 1e-15);
        assert!((s[1].value - 2.0 / 3.0).abs() < 1e-15);

        let s = score_clients(0, &[m(5, 3, 0.2)], FusionStrategy::OverlappingComponents).unwrap();
        assert_eq!(s[0].value, 1.0);

        let s = score_clients(0, &[m(0, 0, 0.0), m(1, 0, 0.0)], FusionStrategy::ClusterAvg).unwrap();
        assert_eq!(s[0].value, 0.5);
        assert!(score_clients::<f64>(0, &[], FusionStrategy::ClusterAvg).is_err());
    }

    #[test]
    fn cluster_avg_examples() {
        let a = one_by_two([2.0, 0.0]);
        let b = one_by_two([4.0, 8.0]);
        let f = fuse_cluster_avg(&[&a], &scores(&[1.0])).unwrap();
        assert_eq!(f.values, a.values);
        let f = fuse_cluster_avg(&[&a, &b], &scores(&[0.5, 0.5])).unwrap();
        assert_eq!(f.values[0].weights.as_slice()[0], 3.0);
        let f = fuse_cluster_avg(&[&a, &b], &scores(&[0.25, 0.75])).unwrap();
        assert_eq!(f.values[0].weights.as_slice()[1], 6.0);
    }

    #[test]
    fn leadership_examples() {
        let a = one_by_two([1.0, 2.0]);
        let b = one_by_two([3.0, 4.0]);
        let f = fuse_cluster_leadership(&[&a, &b], &scores(&[0.2, 0.8])).unwrap();
        assert_eq!(f.values, b.values);
        let f = fuse_cluster_leadership(&[&a], &scores(&[1.0])).unwrap();
        assert_eq!(f.values, a.values);

        let tied = vec![ClientScore { client: 7, label: 0, value: 0.5 }, ClientScore { client: 3, label: 0, value: 0.5 }];
        let f = fuse_cluster_leadership(&[&a, &b], &tied).unwrap();
        assert_eq!(f.values, b.values);
    }

    #[test]
    fn overlapping_examples() {
        let a = one_by_two([3.0, 0.0]);
        let b = one_by_two([5.0, 0.0]);
        let f = fuse_overlapping(&[&a, &b], &scores(&[0.5, 0.5])).unwrap();
        assert_eq!(f.values[0].weights.as_slice(), &[4.0, 0.0]);
        assert_eq!(f.mask.layers[0].weights, vec![true, false]);

        let c = one_by_two([0.0, 1.0]);
        let f = fuse_overlapping(&[&a, &c], &scores(&[0.5, 0.5])).unwrap();
        assert_eq!(f.values[0].weights.as_slice(), &[0.0, 0.0]);
        assert_eq!(f.mask.count(), 0);
    }

    #[test]
    fn shape_mismatch() {
        let a = one_by_two([1.0, 1.0]);
        let layer = DenseLayer::new(Matrix::from_vec(2, 1, vec![1.0, 1.0]).unwrap(), vec![0.0]).unwrap();
        let b = subnetwork_from_layers(0, vec![layer], 1);
        assert!(fuse_cluster_avg(&[&a, &b], &scores(&[0.5, 0.5])).is_err());
        assert!(fuse_cluster_avg(&[&a], &scores(&[0.5, 0.5])).is_err());
    }

    fn model_1x2(w: [f64; 2]) -> Mlp<f64> {
        Mlp::new(vec![DenseLayer::new(Matrix::from_vec(1, 2, w.to_vec()).unwrap(), vec![0.0, 0.0]).unwrap()]).unwrap()
    }

    #[test]
    fn one_cluster_update_is_its_matrix() {
        let current = model_1x2([1.0, 1.0]);
        let f = fuse_cluster_avg(&[&one_by_two([5.0, 0.0])], &scores(&[1.0])).unwrap();
        let own = one_by_two([1.0, 1.0]).mask;
        let up = assemble_client_update(0, &current, &own, &[&f], FusionStrategy::ClusterAvg, DepthSetting::Full).unwrap();
        assert_eq!(up.layers[0].weights.as_slice(), &[5.0, 1.0]);
        assert_eq!(up.layers[0].replace_weights, vec![true, false]);
    }

    #[test]
    fn opposite_clusters_cancel() {
        let current = model_1x2([1.0, 1.0]);
        let mut p = fuse_cluster_avg(&[&one_by_two([2.0, -3.0])], &scores(&[1.0])).unwrap();
        let mut n = p.clone();
        p.label = 0;
        n.label = 1;
        n.values[0].weights = n.values[0].weights.map(|v| -v);
        let own = one_by_two([1.0, 1.0]).mask;
        let up = assemble_client_update(0, &current, &own, &[&p, &n], FusionStrategy::ClusterAvg, DepthSetting::Full).unwrap();
        assert_eq!(up.layers[0].weights.as_slice(), &[0.0, 0.0]);
        assert_eq!(up.layers[0].replace_weights, vec![true, true]);
    }

    #[test]
    fn overlapping_without_own_mask_changes_nothing() {
        let current = model_1x2([1.0, -2.0]);
        let f = fuse_overlapping(&[&one_by_two([3.0, 3.0])], &scores(&[1.0])).unwrap();
        let own = one_by_two([0.0, 0.0]).mask;
        let up =
            assemble_client_update(0, &current, &own, &[&f], FusionStrategy::OverlappingComponents, DepthSetting::Full)
                .unwrap();
        let applied = crate::subnetworks::apply_update(&current, &up.layers, DepthSetting::Full).unwrap();
        assert_eq!(applied, current);
    }

    #[test]
    fn no_clusters_no_update() {
        let current = model_1x2([1.0, 1.0]);
        let own = one_by_two([1.0, 1.0]).mask;
        let up = assemble_client_update(3, &current, &own, &[], FusionStrategy::ClusterAvg, DepthSetting::Full).unwrap();
        assert!(up.is_empty());
    }

    fn full_update(w: Vec<f64>, b: Vec<f64>) -> ClientUpdate<f64> {
        let layer = DenseLayer::new(Matrix::from_vec(1, w.len(), w).unwrap(), b).unwrap();
        ClientUpdate { client: 0, layers: vec![LayerUpdate::full(&layer)] }
    }

    #[test]
    fn normalization() {
        let norms = vec![LayerNorms { weights: 5.0, biases: 0.0 }];
        let up = normalize_layers(full_update(vec![3.0, 4.0], vec![0.0, 0.0]), &norms).unwrap();
        assert_eq!(up.layers[0].weights.as_slice(), &[3.0, 4.0]);

        let up = normalize_layers(full_update(vec![6.0, -8.0], vec![0.0, 0.0]), &norms).unwrap();
        assert_eq!(up.layers[0].weights.as_slice(), &[3.0, -4.0]);

        let norms = vec![LayerNorms { weights: 2.5, biases: 1.0 }];
        let up = normalize_layers(full_update(vec![0.3, -1.7], vec![2.0, 2.0]), &norms).unwrap();
        assert!((up.layers[0].weights.frobenius_norm() - 2.5).abs() < 1e-12);
        assert!((up.layers[0].biases.iter().map(|b| b * b).sum::<f64>().sqrt() - 1.0).abs() < 1e-12);
    }
}
