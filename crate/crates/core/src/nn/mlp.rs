use rand::Rng;

use super::Matrix;
use crate::error::{Error, Result};
use crate::seed;
use crate::Scalar;

/// Fully connected layer; `weights` is `in_dim x out_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    pub weights: Matrix<T>,
    pub biases: Vec<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new(weights: Matrix<T>, biases: Vec<T>) -> Result<Self> {
        if biases.len() != weights.cols() {
            return Err(Error::Shape(format!(
                "bias length {} does not match {} outputs",
                biases.len(),
                weights.cols()
            )));
        }
        Ok(Self { weights, biases })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { weights: Matrix::zeros(in_dim, out_dim), biases: vec![T::zero(); out_dim] }
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.weights.shape() == other.weights.shape() && self.biases.len() == other.biases.len()
    }

    /// `out = x W + b`.
    pub(crate) fn affine(&self, x: &[T], out: &mut Vec<T>) {
        out.clear();
        out.extend_from_slice(&self.biases);
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.weights.row(i)) {
                *o += xi * w;
            }
        }
    }
}

/// Dense network with ReLU hidden activations and a softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    layers: Vec<DenseLayer<T>>,
}

/// Per-layer input and post-activation output recorded for one sample.
/// The last output is the softmax probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    pub inputs: Vec<Vec<T>>,
    pub outputs: Vec<Vec<T>>,
}

impl<T> ForwardTrace<T> {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Max-shifted softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl<T: Scalar> Mlp<T> {
    pub fn new(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("a network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer output {} does not feed next layer input {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        for layer in &layers {
            if layer.biases.len() != layer.out_dim() {
                return Err(Error::Shape("bias length does not match layer width".into()));
            }
            if !layer.weights.is_finite() || layer.biases.iter().any(|b| !b.is_finite()) {
                return Err(Error::Parameter("non-finite parameter".into()));
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-uniform weights, zero biases. `dims` lists every layer width,
    /// input first.
    pub fn init(dims: &[usize], rng_seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Parameter(format!("invalid layer widths {dims:?}")));
        }
        let mut rng = seed::rng(rng_seed, &[seed::stream::INIT]);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| T::lit(rng.random_range(-limit..limit))).collect();
                DenseLayer {
                    weights: Matrix::from_vec(fan_in, fan_out, data).expect("sized"),
                    biases: vec![T::zero(); fan_out],
                }
            })
            .collect();
        Ok(Self { layers })
    }

    #[inline]
    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    #[inline]
    pub fn layers_mut(&mut self) -> &mut [DenseLayer<T>] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<DenseLayer<T>> {
        self.layers
    }

    #[inline]
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.same_shape(b))
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::InputShape { expected: self.input_dim(), actual: x.len() });
        }
        Ok(())
    }

    /// Output logits. Both `forward` and `forward_traced` go through here so
    /// their probabilities are bit-identical.
    fn run(&self, x: &[T], mut trace: Option<&mut ForwardTrace<T>>) -> Vec<T> {
        let last = self.layers.len() - 1;
        let mut input = x.to_vec();
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.affine(&input, &mut out);
            if l < last {
                for v in out.iter_mut() {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
            }
            if let Some(t) = trace.as_deref_mut() {
                t.inputs.push(input.clone());
                if l < last {
                    t.outputs.push(out.clone());
                }
            }
            std::mem::swap(&mut input, &mut out);
        }
        input
    }

    pub fn logits(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        Ok(self.run(x, None))
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        Ok(softmax(&self.run(x, None)))
    }

    pub fn forward_traced(&self, x: &[T]) -> Result<(Vec<T>, ForwardTrace<T>)> {
        self.check_input(x)?;
        let mut trace = ForwardTrace {
            inputs: Vec::with_capacity(self.layers.len()),
            outputs: Vec::with_capacity(self.layers.len()),
        };
        let probs = softmax(&self.run(x, Some(&mut trace)));
        trace.outputs.push(probs.clone());
        Ok((probs, trace))
    }

    pub fn predict(&self, x: &[T]) -> Result<usize> {
        let logits = self.logits(x)?;
        Ok(argmax(&logits))
    }
}

/// Index of the largest value; first index wins ties.
pub(crate) fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
