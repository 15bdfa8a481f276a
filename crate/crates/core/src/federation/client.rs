use std::collections::BTreeMap;

use super::ServerConfig;
use crate::error::{Error, Result};
use crate::nn::{evaluate, train_sgd, Evaluation};
use crate::prototypes::compute_prototypes;
use crate::seed::{self, stream};
use crate::subnetworks::{apply_update, extract_subnetworks, ActivationMask, LayerUpdate};
use crate::{Model, PrototypeSet, Sample, Subnetwork};

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    /// Position in the dataset; keys the client's random streams.
    pub index: usize,
    pub id: String,
    pub model: Model,
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Prototypes uploaded at the client's last participation.
    pub prototypes: Option<PrototypeSet>,
    /// Update waiting for the client's next participation.
    pub pending: Option<Vec<LayerUpdate<f64>>>,
}

impl ClientState {
    pub fn new(index: usize, id: impl Into<String>, model: Model) -> Self {
        Self {
            index,
            id: id.into(),
            model,
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
            prototypes: None,
            pending: None,
        }
    }

    /// Test metrics of the current model; falls back to the training set
    /// while the client has no test samples.
    pub fn evaluate(&self) -> Result<Evaluation<f64>> {
        let data = if self.test.is_empty() { &self.train } else { &self.test };
        evaluate(&self.model, data)
    }
}

/// What a participant uploads after its local round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientArtifacts {
    pub client: usize,
    pub prototypes: PrototypeSet,
    pub subnetworks: BTreeMap<usize, Subnetwork>,
    /// Training samples per class.
    pub support: BTreeMap<usize, usize>,
    /// Per-class accuracy on the validation slice (training samples of the
    /// class when the slice has none).
    pub accuracy: BTreeMap<usize, f64>,
    /// Union of the client's class activation masks.
    pub own_mask: ActivationMask,
}

/// One client-side round: apply the pending update, train locally, then
/// recompute prototypes and subnetworks on the new model.
pub fn client_round(state: &mut ClientState, cfg: &ServerConfig, round: usize) -> Result<ClientArtifacts> {
    if state.train.is_empty() {
        return Err(Error::Parameter(format!("client {:?} has no training samples", state.id)));
    }
    if let Some(update) = state.pending.take() {
        state.model = apply_update(&state.model, &update, cfg.depth)?;
    }
    let train_seed = seed::derive(cfg.seed, &[stream::TRAIN, state.index as u64, round as u64]);
    state.model = train_sgd(&state.model, &state.train, &cfg.train_config(train_seed))?;

    let prototypes = compute_prototypes(state.index, &state.train)?;
    state.prototypes = Some(prototypes.clone());
    let subnetworks = extract_subnetworks(&state.model, &state.train, cfg.depth)?;

    let mut support = BTreeMap::new();
    for s in &state.train {
        *support.entry(s.label).or_insert(0) += 1;
    }
    let accuracy = subnetworks
        .keys()
        .map(|&label| {
            let of_label = |set: &[Sample]| set.iter().filter(|s| s.label == label).cloned().collect::<Vec<_>>();
            let mut data = of_label(&state.validation);
            if data.is_empty() {
                data = of_label(&state.train);
            }
            let acc = evaluate(&state.model, &data)?.per_class_accuracy.get(&label).copied().unwrap_or(0.0);
            Ok((label, acc))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;

    let mut masks = subnetworks.values().map(|s| &s.mask);
    let mut own_mask = masks.next().expect("non-empty training set yields a subnetwork").clone();
    for m in masks {
        own_mask.union_with(m)?;
    }
    Ok(ClientArtifacts { client: state.index, prototypes, subnetworks, support, accuracy, own_mask })
}
