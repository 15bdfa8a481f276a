//! Round orchestration: client sampling, local training, artifact exchange,
//! server-side aggregation, and the FedAvg baseline.
//!
//! All randomness is keyed by the run seed, the client index and the round,
//! so results do not depend on how client rounds are scheduled on threads.

mod client;
mod report;
mod server;

pub use client::{client_round, ClientArtifacts, ClientState};
pub use report::{ClientMetrics, Interval, RoundReport};
pub use server::{fedavg_round, run_experiment, server_round, sample_participants, weighted_average};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionStrategy;
use crate::nn::TrainConfig;
use crate::subnetworks::DepthSetting;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    FedSub,
    FedAvg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scenario {
    #[default]
    Static,
    /// Labels are withheld from some clients and handed back every `period` rounds.
    Dynamic { period: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub algorithm: Algorithm,
    pub rounds: usize,
    /// Participants per round; 0 means every client.
    pub clients_per_round: usize,
    pub strategy: FusionStrategy,
    pub depth: DepthSetting,
    pub neighbors: usize,
    pub k_max: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    /// Worker threads for client rounds; 0 uses the global pool.
    pub threads: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::FedSub,
            rounds: 300,
            clients_per_round: 0,
            strategy: FusionStrategy::OverlappingComponents,
            depth: DepthSetting::default(),
            neighbors: 3,
            k_max: 10,
            seed: 0,
            learning_rate: 0.05,
            epochs: 1,
            batch_size: 32,
            hidden: vec![128, 512],
            threads: 0,
        }
    }
}

impl ServerConfig {
    pub fn validate(&self, clients: usize) -> Result<()> {
        self.train_config(0).validate()?;
        if self.clients_per_round > clients {
            return Err(Error::Parameter(format!(
                "clients_per_round {} exceeds the {clients} available clients",
                self.clients_per_round
            )));
        }
        if self.neighbors == 0 {
            return Err(Error::Parameter("neighbors must be >= 1".into()));
        }
        if self.k_max < 2 {
            return Err(Error::Parameter("k_max must be >= 2".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Parameter("hidden layer widths must be >= 1".into()));
        }
        self.depth.covered_layers(self.hidden.len() + 1)?;
        Ok(())
    }

    /// Participants in a round of `clients` clients.
    pub fn participants(&self, clients: usize) -> usize {
        if self.clients_per_round == 0 {
            clients
        } else {
            self.clients_per_round.min(clients)
        }
    }

    pub fn train_config(&self, rng_seed: u64) -> TrainConfig {
        TrainConfig { learning_rate: self.learning_rate, epochs: self.epochs, batch_size: self.batch_size, rng_seed }
    }
}
