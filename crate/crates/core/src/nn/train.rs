use rand::seq::SliceRandom;

use super::{DenseLayer, Mlp, Sample};
use crate::error::{Error, Result};
use crate::seed;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.05, epochs: 1, batch_size: 32, rng_seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Parameter("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mean gradient of the cross-entropy loss; mirrors the model's layer shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<T> {
    pub layers: Vec<DenseLayer<T>>,
}

fn check_samples<T: Scalar>(model: &Mlp<T>, data: &[Sample<T>]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = model.output_dim();
    for s in data {
        if s.features.len() != model.input_dim() {
            return Err(Error::InputShape { expected: model.input_dim(), actual: s.features.len() });
        }
        if s.label >= classes {
            return Err(Error::Label { label: s.label, classes });
        }
    }
    Ok(())
}

/// `logsumexp(z) - z[label]`.
pub(crate) fn cross_entropy<T: Scalar>(logits: &[T], label: usize) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
    lse - logits[label]
}

pub fn mean_loss<T: Scalar>(model: &Mlp<T>, data: &[Sample<T>]) -> Result<T> {
    check_samples(model, data)?;
    let mut total = T::zero();
    for s in data {
        total += cross_entropy(&model.logits(&s.features)?, s.label);
    }
    Ok(total / T::lit(data.len() as f64))
}

/// Scratch buffers reused across the samples of a batch.
struct Backprop<T> {
    acts: Vec<Vec<T>>,
    delta: Vec<T>,
    next_delta: Vec<T>,
}

impl<T: Scalar> Backprop<T> {
    fn new(model: &Mlp<T>) -> Self {
        Self { acts: vec![Vec::new(); model.num_layers() + 1], delta: Vec::new(), next_delta: Vec::new() }
    }

    /// Adds one sample's loss gradient into `acc`.
    fn accumulate(&mut self, model: &Mlp<T>, sample: &Sample<T>, acc: &mut [DenseLayer<T>]) {
        let layers = model.layers();
        let last = layers.len() - 1;
        self.acts[0].clear();
        self.acts[0].extend_from_slice(&sample.features);
        for (l, layer) in layers.iter().enumerate() {
            let (head, tail) = self.acts.split_at_mut(l + 1);
            layer.affine(&head[l], &mut tail[0]);
            if l < last {
                for v in tail[0].iter_mut() {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
            }
        }
        // dL/dz at the output: softmax(z) - onehot(label)
        self.delta = super::softmax(&self.acts[last + 1]);
        self.delta[sample.label] -= T::one();

        for l in (0..=last).rev() {
            let input = &self.acts[l];
            let grad = &mut acc[l];
            for (g, &d) in grad.biases.iter_mut().zip(&self.delta) {
                *g += d;
            }
            for (i, &a) in input.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                for (g, &d) in grad.weights.row_mut(i).iter_mut().zip(&self.delta) {
                    *g += a * d;
                }
            }
            if l == 0 {
                break;
            }
            // Propagate through W_l and the ReLU of layer l-1 (whose output is `input`).
            let w = &layers[l].weights;
            self.next_delta.clear();
            for (i, &a) in input.iter().enumerate() {
                let v = if a > T::zero() {
                    w.row(i).iter().zip(&self.delta).map(|(&wij, &d)| wij * d).sum()
                } else {
                    T::zero()
                };
                self.next_delta.push(v);
            }
            std::mem::swap(&mut self.delta, &mut self.next_delta);
        }
    }
}

fn zero_like<T: Scalar>(model: &Mlp<T>) -> Vec<DenseLayer<T>> {
    model.layers().iter().map(|l| DenseLayer::zeros(l.in_dim(), l.out_dim())).collect()
}

fn batch_gradient<T: Scalar>(model: &Mlp<T>, batch: &[&Sample<T>], bp: &mut Backprop<T>) -> Vec<DenseLayer<T>> {
    let mut acc = zero_like(model);
    for s in batch {
        bp.accumulate(model, s, &mut acc);
    }
    let scale = T::one() / T::lit(batch.len() as f64);
    for layer in &mut acc {
        layer.weights.as_mut_slice().iter_mut().for_each(|g| *g *= scale);
        layer.biases.iter_mut().for_each(|g| *g *= scale);
    }
    acc
}

/// Mean cross-entropy gradient over `batch` by backpropagation.
pub fn gradient<T: Scalar>(model: &Mlp<T>, batch: &[Sample<T>]) -> Result<Gradient<T>> {
    check_samples(model, batch)?;
    let refs: Vec<&Sample<T>> = batch.iter().collect();
    let mut bp = Backprop::new(model);
    Ok(Gradient { layers: batch_gradient(model, &refs, &mut bp) })
}

/// Mini-batch SGD for `cfg.epochs` epochs, reshuffling every epoch from
/// `cfg.rng_seed`. Returns the trained copy.
pub fn train_sgd<T: Scalar>(model: &Mlp<T>, data: &[Sample<T>], cfg: &TrainConfig) -> Result<Mlp<T>> {
    cfg.validate()?;
    check_samples(model, data)?;
    let mut model = model.clone();
    let lr = T::lit(cfg.learning_rate);
    let mut rng = seed::rng(cfg.rng_seed, &[seed::stream::TRAIN]);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut bp = Backprop::new(&model);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample<T>> = chunk.iter().map(|&i| &data[i]).collect();
            let grad = batch_gradient(&model, &batch, &mut bp);
            for (layer, g) in model.layers_mut().iter_mut().zip(&grad) {
                for (w, &gw) in layer.weights.as_mut_slice().iter_mut().zip(g.weights.as_slice()) {
                    *w -= lr * gw;
                }
                for (b, &gb) in layer.biases.iter_mut().zip(&g.biases) {
                    *b -= lr * gb;
                }
            }
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(n: usize) -> Vec<Sample<f64>> {
        use rand::Rng;
        let mut rng = seed::rng(11, &[]);
        (0..n)
            .map(|i| {
                let label = i % 2;
                let c = if label == 0 { -2.0 } else { 2.0 };
                Sample::new(vec![c + rng.random_range(-1.0..1.0), c + rng.random_range(-1.0..1.0)], label)
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let m = Mlp::<f64>::init(&[2, 5, 2], 1).unwrap();
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 3, batch_size: 4, rng_seed: 9 };
        assert_eq!(train_sgd(&m, &blobs(20), &cfg).unwrap(), m);
    }

    #[test]
    fn separable_blobs_are_learned() {
        let data = blobs(200);
        let m = Mlp::<f64>::init(&[2, 8, 2], 5).unwrap();
        let cfg = TrainConfig { learning_rate: 0.05, epochs: 50, batch_size: 32, rng_seed: 5 };
        let before = mean_loss(&m, &data).unwrap();
        let trained = train_sgd(&m, &data, &cfg).unwrap();
        assert!(mean_loss(&trained, &data).unwrap() <= before);
        let correct = data.iter().filter(|s| trained.predict(&s.features).unwrap() == s.label).count();
        assert!(correct as f64 / data.len() as f64 >= 0.95);
    }

    #[test]
    fn same_seed_same_model() {
        let data = blobs(64);
        let m = Mlp::<f64>::init(&[2, 6, 2], 2).unwrap();
        let cfg = TrainConfig { learning_rate: 0.1, epochs: 4, batch_size: 8, rng_seed: 3 };
        assert_eq!(train_sgd(&m, &data, &cfg).unwrap(), train_sgd(&m, &data, &cfg).unwrap());
    }

    #[test]
    fn errors() {
        let m = Mlp::<f64>::init(&[2, 2], 0).unwrap();
        let cfg = TrainConfig::default();
        assert!(matches!(train_sgd(&m, &[], &cfg), Err(Error::EmptyDataset)));
        let bad = vec![Sample::new(vec![0.0, 0.0], 2)];
        assert!(matches!(train_sgd(&m, &bad, &cfg), Err(Error::Label { label: 2, classes: 2 })));
        assert!(matches!(gradient(&m, &[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn output_bias_gradient_sums_to_zero() {
        let m = Mlp::new(vec![DenseLayer::<f64>::zeros(2, 2)]).unwrap();
        let batch = vec![Sample::new(vec![1.0, 2.0], 0), Sample::new(vec![-1.0, 0.5], 1)];
        let g = gradient(&m, &batch).unwrap();
        assert!(g.layers[0].biases.iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn duplicated_batch_same_mean_gradient() {
        let m = Mlp::<f64>::init(&[3, 4, 2], 8).unwrap();
        let batch: Vec<_> = (0..5).map(|i| Sample::new(vec![i as f64 * 0.3, -0.2, 1.0 - i as f64 * 0.1], i % 2)).collect();
        let doubled: Vec<_> = batch.iter().flat_map(|s| [s.clone(), s.clone()]).collect();
        let a = gradient(&m, &batch).unwrap();
        let b = gradient(&m, &doubled).unwrap();
        for (la, lb) in a.layers.iter().zip(&b.layers) {
            for (x, y) in la.weights.as_slice().iter().zip(lb.weights.as_slice()) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gradient_shapes_mirror_model() {
        let m = Mlp::<f64>::init(&[3, 4, 2], 8).unwrap();
        let g = gradient(&m, &[Sample::new(vec![1.0, 1.0, 1.0], 1)]).unwrap();
        assert_eq!(g.layers[0].weights.shape(), (3, 4));
        assert_eq!(g.layers[1].biases.len(), 2);
    }
}
