use std::collections::BTreeMap;

use super::train::cross_entropy;
use super::{Mlp, Sample};
use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation<T> {
    /// Unweighted mean of per-class F1 over the classes present in the data.
    pub macro_f1: T,
    pub mean_loss: T,
    /// Recall per true class.
    pub per_class_accuracy: BTreeMap<usize, T>,
}

/// Scores `model` on `data`. A class present in the data but never predicted
/// contributes F1 = 0; classes absent from the data are left out.
pub fn evaluate<T: Scalar>(model: &Mlp<T>, data: &[Sample<T>]) -> Result<Evaluation<T>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = model.output_dim();
    let mut tp = vec![0usize; classes];
    let mut predicted = vec![0usize; classes];
    let mut actual = vec![0usize; classes];
    let mut loss = T::zero();
    for s in data {
        if s.label >= classes {
            return Err(Error::Label { label: s.label, classes });
        }
        let logits = model.logits(&s.features)?;
        let guess = super::mlp::argmax(&logits);
        loss += cross_entropy(&logits, s.label);
        predicted[guess] += 1;
        actual[s.label] += 1;
        if guess == s.label {
            tp[s.label] += 1;
        }
    }

    let mut f1_sum = T::zero();
    let mut per_class_accuracy = BTreeMap::new();
    for c in (0..classes).filter(|&c| actual[c] > 0) {
        let tp_c = tp[c] as f64;
        let f1 = if tp[c] == 0 { 0.0 } else { 2.0 * tp_c / (predicted[c] + actual[c]) as f64 };
        f1_sum += T::lit(f1);
        per_class_accuracy.insert(c, T::lit(tp_c / actual[c] as f64));
    }
    Ok(Evaluation {
        macro_f1: f1_sum / T::lit(per_class_accuracy.len() as f64),
        mean_loss: loss / T::lit(data.len() as f64),
        per_class_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{DenseLayer, Matrix};

    fn identity2() -> Mlp<f64> {
        let w = Matrix::from_rows(&[vec![10.0, 0.0], vec![0.0, 10.0]]).unwrap();
        Mlp::new(vec![DenseLayer::new(w, vec![0.0, 0.0]).unwrap()]).unwrap()
    }

    #[test]
    fn perfect_predictor() {
        let data = vec![Sample::new(vec![1.0, 0.0], 0), Sample::new(vec![0.0, 1.0], 1)];
        let e = evaluate(&identity2(), &data).unwrap();
        assert_eq!(e.macro_f1, 1.0);
        assert!(e.per_class_accuracy.values().all(|&a| a == 1.0));
    }

    #[test]
    fn constant_predictor_balanced_two_class() {
        // Bias forces class 0 everywhere.
        let m: Mlp<f64> = Mlp::new(vec![DenseLayer::new(Matrix::zeros(2, 2), vec![1.0, 0.0]).unwrap()]).unwrap();
        let data = vec![
            Sample::new(vec![1.0, 0.0], 0),
            Sample::new(vec![0.0, 1.0], 1),
            Sample::new(vec![1.0, 1.0], 0),
            Sample::new(vec![0.5, 1.0], 1),
        ];
        let e = evaluate(&m, &data).unwrap();
        assert!((e.macro_f1 - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(e.per_class_accuracy[&0], 1.0);
        assert_eq!(e.per_class_accuracy[&1], 0.0);
    }

    #[test]
    fn uniform_predictor_loss_is_ln_c() {
        let m = Mlp::new(vec![DenseLayer::<f64>::zeros(2, 5)]).unwrap();
        let data = vec![Sample::new(vec![1.0, 3.0], 4), Sample::new(vec![-1.0, 0.0], 1)];
        let e = evaluate(&m, &data).unwrap();
        assert!((e.mean_loss - 5f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn absent_classes_are_excluded() {
        let data = vec![Sample::new(vec![1.0, 0.0], 0)];
        let e = evaluate(&identity2(), &data).unwrap();
        assert_eq!(e.per_class_accuracy.len(), 1);
        assert_eq!(e.macro_f1, 1.0);
        assert!(matches!(evaluate(&identity2(), &[]), Err(Error::EmptyDataset)));
    }
}
