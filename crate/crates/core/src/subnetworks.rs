//! Activation mapping and class-level subnetwork extraction.
//!
//! A weight `(i, j)` of a ReLU layer counts as active for a sample when its
//! input component `i` is nonzero and its output unit `j` is positive. The
//! softmax output layer has no ReLU, so all of its units count as active.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::{DenseLayer, ForwardTrace, Matrix, Mlp, Sample};
use crate::Scalar;

/// How many leading layers take part in collaboration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthSetting {
    Full,
    /// Only the first `L` layers; the remaining head stays local.
    Partial(usize),
}

impl Default for DepthSetting {
    fn default() -> Self {
        DepthSetting::Partial(2)
    }
}

impl DepthSetting {
    /// Number of leading layers covered for a model with `total` layers.
    pub fn covered_layers(&self, total: usize) -> Result<usize> {
        match *self {
            DepthSetting::Full => Ok(total),
            DepthSetting::Partial(l) if l >= 1 && l < total => Ok(l),
            DepthSetting::Partial(l) => {
                Err(Error::Parameter(format!("partial depth {l} must be in [1, {total}) for a {total}-layer model")))
            }
        }
    }
}

/// Binary mask over one layer's weights and biases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerMask {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<bool>,
    pub biases: Vec<bool>,
}

impl LayerMask {
    pub fn new(rows: usize, cols: usize, value: bool) -> Self {
        Self { rows, cols, weights: vec![value; rows * cols], biases: vec![value; cols] }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.weights[r * self.cols + c]
    }

    pub fn count(&self) -> usize {
        self.weights.iter().chain(&self.biases).filter(|&&b| b).count()
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    fn combine(&mut self, other: &Self, f: impl Fn(bool, bool) -> bool) {
        for (a, &b) in self.weights.iter_mut().zip(&other.weights) {
            *a = f(*a, b);
        }
        for (a, &b) in self.biases.iter_mut().zip(&other.biases) {
            *a = f(*a, b);
        }
    }
}

/// Per-layer binary activation mask over the covered layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationMask {
    pub layers: Vec<LayerMask>,
}

impl ActivationMask {
    pub fn union_with(&mut self, other: &Self) -> Result<()> {
        self.check(other)?;
        self.layers.iter_mut().zip(&other.layers).for_each(|(a, b)| a.combine(b, |x, y| x | y));
        Ok(())
    }

    pub fn intersect_with(&mut self, other: &Self) -> Result<()> {
        self.check(other)?;
        self.layers.iter_mut().zip(&other.layers).for_each(|(a, b)| a.combine(b, |x, y| x & y));
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.layers.iter().map(LayerMask::count).sum()
    }

    fn check(&self, other: &Self) -> Result<()> {
        if self.layers.len() != other.layers.len()
            || self.layers.iter().zip(&other.layers).any(|(a, b)| !a.same_shape(b))
        {
            return Err(Error::Shape("activation masks cover different layers".into()));
        }
        Ok(())
    }
}

/// Per-layer activation frequencies in `[0, 1]`, stored in layer shape.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyMask<T> {
    pub layers: Vec<DenseLayer<T>>,
}

/// Class-level subnetwork: `values = weights ⊙ freq` over the covered layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Subnetwork<T> {
    pub label: usize,
    pub values: Vec<DenseLayer<T>>,
    pub mask: ActivationMask,
    pub freq: FrequencyMask<T>,
    /// Number of samples the subnetwork was averaged over.
    pub support: usize,
}

/// Replacement values for one covered layer. Elements whose replace flag is
/// unset keep the model's current value.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerUpdate<T> {
    pub weights: Matrix<T>,
    pub biases: Vec<T>,
    pub replace_weights: Vec<bool>,
    pub replace_biases: Vec<bool>,
}

impl<T: Scalar> LayerUpdate<T> {
    /// Update that replaces every element of `layer` with its current value.
    pub fn full(layer: &DenseLayer<T>) -> Self {
        Self {
            weights: layer.weights.clone(),
            biases: layer.biases.clone(),
            replace_weights: vec![true; layer.weights.as_slice().len()],
            replace_biases: vec![true; layer.biases.len()],
        }
    }
}

fn check_trace<T: Scalar>(model: &Mlp<T>, trace: &ForwardTrace<T>, covered: usize) -> Result<()> {
    if trace.inputs.len() < covered || trace.outputs.len() < covered {
        return Err(Error::Shape(format!("trace holds {} layers, need {covered}", trace.inputs.len())));
    }
    for (l, layer) in model.layers().iter().take(covered).enumerate() {
        if trace.inputs[l].len() != layer.in_dim() || trace.outputs[l].len() != layer.out_dim() {
            return Err(Error::Shape(format!("trace does not match layer {l}")));
        }
    }
    Ok(())
}

/// Active input indices and active output indices of layer `l`.
fn active_endpoints<T: Scalar>(trace: &ForwardTrace<T>, l: usize, is_output: bool) -> (Vec<usize>, Vec<usize>) {
    let inputs = trace.inputs[l].iter().enumerate().filter(|(_, &x)| x != T::zero()).map(|(i, _)| i).collect();
    let outputs = if is_output {
        (0..trace.outputs[l].len()).collect()
    } else {
        trace.outputs[l].iter().enumerate().filter(|(_, &y)| y > T::zero()).map(|(j, _)| j).collect()
    };
    (inputs, outputs)
}

/// Binary activation mask of one forward pass over the covered layers.
pub fn activation_map<T: Scalar>(model: &Mlp<T>, trace: &ForwardTrace<T>, depth: DepthSetting) -> Result<ActivationMask> {
    let covered = depth.covered_layers(model.num_layers())?;
    check_trace(model, trace, covered)?;
    let last = model.num_layers() - 1;
    let layers = model
        .layers()
        .iter()
        .take(covered)
        .enumerate()
        .map(|(l, layer)| {
            let mut mask = LayerMask::new(layer.in_dim(), layer.out_dim(), false);
            let (ins, outs) = active_endpoints(trace, l, l == last);
            for &j in &outs {
                mask.biases[j] = true;
            }
            for &i in &ins {
                for &j in &outs {
                    mask.weights[i * mask.cols + j] = true;
                }
            }
            mask
        })
        .collect();
    Ok(ActivationMask { layers })
}

struct Counts {
    weights: Vec<Vec<u32>>,
    biases: Vec<Vec<u32>>,
    samples: usize,
}

/// Per-class subnetworks of `model` over `data`.
pub fn extract_subnetworks<T: Scalar>(
    model: &Mlp<T>,
    data: &[Sample<T>],
    depth: DepthSetting,
) -> Result<BTreeMap<usize, Subnetwork<T>>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let covered = depth.covered_layers(model.num_layers())?;
    let last = model.num_layers() - 1;
    let layers = &model.layers()[..covered];

    let mut per_class: BTreeMap<usize, Counts> = BTreeMap::new();
    for s in data {
        let (_, trace) = model.forward_traced(&s.features)?;
        let counts = per_class.entry(s.label).or_insert_with(|| Counts {
            weights: layers.iter().map(|l| vec![0; l.in_dim() * l.out_dim()]).collect(),
            biases: layers.iter().map(|l| vec![0; l.out_dim()]).collect(),
            samples: 0,
        });
        counts.samples += 1;
        for (l, layer) in layers.iter().enumerate() {
            let (ins, outs) = active_endpoints(&trace, l, l == last);
            let cols = layer.out_dim();
            for &j in &outs {
                counts.biases[l][j] += 1;
            }
            for &i in &ins {
                let row = &mut counts.weights[l][i * cols..(i + 1) * cols];
                for &j in &outs {
                    row[j] += 1;
                }
            }
        }
    }

    per_class
        .into_iter()
        .map(|(label, counts)| {
            let n = T::lit(counts.samples as f64);
            let mut values = Vec::with_capacity(covered);
            let mut freqs = Vec::with_capacity(covered);
            let mut masks = Vec::with_capacity(covered);
            for (l, layer) in layers.iter().enumerate() {
                let (rows, cols) = layer.weights.shape();
                let fw: Vec<T> = counts.weights[l].iter().map(|&c| T::lit(f64::from(c)) / n).collect();
                let fb: Vec<T> = counts.biases[l].iter().map(|&c| T::lit(f64::from(c)) / n).collect();
                let vw = layer.weights.as_slice().iter().zip(&fw).map(|(&w, &f)| w * f).collect();
                let vb = layer.biases.iter().zip(&fb).map(|(&b, &f)| b * f).collect();
                masks.push(LayerMask {
                    rows,
                    cols,
                    weights: counts.weights[l].iter().map(|&c| c > 0).collect(),
                    biases: counts.biases[l].iter().map(|&c| c > 0).collect(),
                });
                values.push(DenseLayer { weights: Matrix::from_vec(rows, cols, vw)?, biases: vb });
                freqs.push(DenseLayer { weights: Matrix::from_vec(rows, cols, fw)?, biases: fb });
            }
            Ok((
                label,
                Subnetwork {
                    label,
                    values,
                    mask: ActivationMask { layers: masks },
                    freq: FrequencyMask { layers: freqs },
                    support: counts.samples,
                },
            ))
        })
        .collect()
}

/// Writes the flagged elements of `update` into the covered layers of a copy
/// of `model`. Layers past the covered depth are left untouched.
pub fn apply_update<T: Scalar>(model: &Mlp<T>, update: &[LayerUpdate<T>], depth: DepthSetting) -> Result<Mlp<T>> {
    let covered = depth.covered_layers(model.num_layers())?;
    if update.len() != covered {
        return Err(Error::Shape(format!("update has {} layers, depth covers {covered}", update.len())));
    }
    let mut out = model.clone();
    for (layer, up) in out.layers_mut().iter_mut().zip(update) {
        let n = layer.weights.as_slice().len();
        if up.weights.shape() != layer.weights.shape()
            || up.replace_weights.len() != n
            || up.biases.len() != layer.biases.len()
            || up.replace_biases.len() != layer.biases.len()
        {
            return Err(Error::Shape("update does not match layer shape".into()));
        }
        for ((w, &u), &r) in layer.weights.as_mut_slice().iter_mut().zip(up.weights.as_slice()).zip(&up.replace_weights) {
            if r {
                *w = u;
            }
        }
        for ((b, &u), &r) in layer.biases.iter_mut().zip(&up.biases).zip(&up.replace_biases) {
            if r {
                *b = u;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(rows: &[Vec<f64>], biases: Vec<f64>) -> DenseLayer<f64> {
        DenseLayer::new(Matrix::from_rows(rows).unwrap(), biases).unwrap()
    }

    /// 2-2-2 net whose hidden unit 0 copies x0 and unit 1 copies x1.
    fn passthrough() -> Mlp<f64> {
        Mlp::new(vec![
            layer(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]),
            layer(&[vec![0.5, -0.5], vec![-0.5, 0.5]], vec![0.1, 0.2]),
        ])
        .unwrap()
    }

    #[test]
    fn depth_bounds() {
        assert_eq!(DepthSetting::Full.covered_layers(3).unwrap(), 3);
        assert_eq!(DepthSetting::Partial(2).covered_layers(3).unwrap(), 2);
        assert!(DepthSetting::Partial(3).covered_layers(3).is_err());
        assert!(DepthSetting::Partial(0).covered_layers(3).is_err());
    }

    #[test]
    fn and_rule_by_hand() {
        // input [1, 0] -> hidden outputs [1, 0]
        let m = passthrough();
        let (_, trace) = m.forward_traced(&[1.0, 0.0]).unwrap();
        let mask = activation_map(&m, &trace, DepthSetting::Partial(1)).unwrap();
        assert_eq!(mask.layers[0].weights, vec![true, false, false, false]);
        assert_eq!(mask.layers[0].biases, vec![true, false]);
    }

    #[test]
    fn dead_hidden_layer_and_full_activation() {
        let m = passthrough();
        let (_, trace) = m.forward_traced(&[-1.0, -2.0]).unwrap();
        let mask = activation_map(&m, &trace, DepthSetting::Full).unwrap();
        assert_eq!(mask.layers[0].count(), 0);
        // Hidden output all zero, so no output-layer weight has a live input.
        assert!(mask.layers[1].weights.iter().all(|&b| !b));
        assert!(mask.layers[1].biases.iter().all(|&b| b));

        let (_, trace) = m.forward_traced(&[1.0, 2.0]).unwrap();
        let mask = activation_map(&m, &trace, DepthSetting::Full).unwrap();
        assert!(mask.layers.iter().all(|l| l.weights.iter().all(|&b| b)));
    }

    #[test]
    fn trace_mismatch_is_rejected() {
        let m = passthrough();
        let other = Mlp::<f64>::init(&[3, 4, 2], 0).unwrap();
        let (_, trace) = other.forward_traced(&[1.0, 1.0, 1.0]).unwrap();
        assert!(activation_map(&m, &trace, DepthSetting::Full).is_err());
    }

    #[test]
    fn single_sample_per_class_gives_binary_freq() {
        let m = Mlp::<f64>::init(&[3, 5, 4, 2], 3).unwrap();
        let data = vec![Sample::new(vec![0.5, -1.0, 2.0], 0), Sample::new(vec![1.0, 1.0, -0.3], 1)];
        let subs = extract_subnetworks(&m, &data, DepthSetting::Full).unwrap();
        for sub in subs.values() {
            assert_eq!(sub.support, 1);
            for (l, f) in sub.freq.layers.iter().enumerate() {
                assert!(f.weights.as_slice().iter().all(|&x| x == 0.0 || x == 1.0));
                for (k, (&v, &w)) in sub.values[l].weights.as_slice().iter().zip(m.layers()[l].weights.as_slice()).enumerate() {
                    assert_eq!(v, if sub.mask.layers[l].weights[k] { w } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn disjoint_neurons_average_to_half() {
        // Sample [1, 0] activates hidden 0, sample [0, 1] activates hidden 1.
        let m = passthrough();
        let data = vec![Sample::new(vec![1.0, 0.0], 0), Sample::new(vec![0.0, 1.0], 0)];
        let subs = extract_subnetworks(&m, &data, DepthSetting::Partial(1)).unwrap();
        let f = &subs[&0].freq.layers[0];
        assert_eq!(f.weights.as_slice(), &[0.5, 0.0, 0.0, 0.5]);
        assert_eq!(f.biases, vec![0.5, 0.5]);
        assert_eq!(subs[&0].values[0].weights.as_slice(), &[0.5, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn partial_depth_filters_layers() {
        let m = Mlp::<f64>::init(&[3, 5, 4, 2], 3).unwrap();
        let data = vec![Sample::new(vec![0.5, -1.0, 2.0], 0)];
        let subs = extract_subnetworks(&m, &data, DepthSetting::Partial(1)).unwrap();
        assert_eq!(subs[&0].values.len(), 1);
        assert_eq!(subs[&0].mask.layers.len(), 1);
        assert!(extract_subnetworks(&m, &[], DepthSetting::Full).is_err());
    }

    #[test]
    fn apply_update_rules() {
        let m = Mlp::<f64>::init(&[2, 3, 3, 2], 1).unwrap();
        let same: Vec<_> = m.layers()[..2].iter().map(LayerUpdate::full).collect();
        assert_eq!(apply_update(&m, &same, DepthSetting::Partial(2)).unwrap(), m);

        let mut up = same.clone();
        up[0].weights.as_mut_slice().iter_mut().for_each(|w| *w = 9.0);
        up[1].weights.as_mut_slice().iter_mut().for_each(|w| *w = 9.0);
        let out = apply_update(&m, &up, DepthSetting::Partial(2)).unwrap();
        assert_eq!(out.layers()[2], m.layers()[2]);
        assert!(out.layers()[0].weights.as_slice().iter().all(|&w| w == 9.0));
        assert!(apply_update(&m, &up[..1], DepthSetting::Partial(2)).is_err());
    }

    #[test]
    fn retained_elements_keep_old_values() {
        let m = Mlp::new(vec![layer(&[vec![1.0, 2.0], vec![3.0, 4.0]], vec![0.5, 0.5])]).unwrap();
        let up = LayerUpdate {
            weights: Matrix::from_rows(&[vec![0.0, 7.0], vec![0.0, 0.0]]).unwrap(),
            biases: vec![0.0, 0.0],
            replace_weights: vec![false, true, false, false],
            replace_biases: vec![false, false],
        };
        let out = apply_update(&m, &[up], DepthSetting::Full).unwrap();
        assert_eq!(out.layers()[0].weights.as_slice(), &[1.0, 7.0, 3.0, 4.0]);
        assert_eq!(out.layers()[0].biases, vec![0.5, 0.5]);
    }
}
