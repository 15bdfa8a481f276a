use std::collections::BTreeMap;

use serde::Serialize;

/// Mean with a normal-approximation 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, lower: f64::NAN, upper: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let half = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            1.96 * (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, lower: mean - half, upper: mean + half }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientMetrics {
    pub client_id: String,
    pub f1: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundReport {
    pub round: usize,
    /// Every client, in dataset order.
    pub clients: Vec<ClientMetrics>,
    pub f1: Interval,
    pub loss: Interval,
    pub participants: Vec<usize>,
    /// Clusters formed per class; empty for FedAvg.
    pub cluster_counts: BTreeMap<usize, usize>,
    pub predicted_prototypes: usize,
}

impl RoundReport {
    pub(crate) fn new(
        round: usize,
        clients: Vec<ClientMetrics>,
        participants: Vec<usize>,
        cluster_counts: BTreeMap<usize, usize>,
        predicted_prototypes: usize,
    ) -> Self {
        let f1: Vec<f64> = clients.iter().map(|c| c.f1).collect();
        let loss: Vec<f64> = clients.iter().map(|c| c.loss).collect();
        Self { round, f1: Interval::of(&f1), loss: Interval::of(&loss), clients, participants, cluster_counts, predicted_prototypes }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval() {
        let i = Interval::of(&[1.0, 3.0]);
        assert_eq!(i.mean, 2.0);
        let half = 1.96 * (2.0f64 / 2.0).sqrt();
        assert!((i.upper - 2.0 - half).abs() < 1e-12 && (2.0 - i.lower - half).abs() < 1e-12);
        assert_eq!(Interval::of(&[5.0]), Interval { mean: 5.0, lower: 5.0, upper: 5.0 });
    }
}
