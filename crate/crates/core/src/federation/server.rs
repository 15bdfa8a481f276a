use std::collections::BTreeMap;

use rand::seq::index;
use rayon::prelude::*;

use super::{client_round, Algorithm, ClientArtifacts, ClientMetrics, ClientState, RoundReport, Scenario, ServerConfig};
use crate::clustering::select_clusters;
use crate::data::{apply_dynamic, stratified_split, Dataset, DynamicSchedule, Split, AFFECTED_FRACTION, TEST_FRACTION};
use crate::error::{Error, Result};
use crate::fusion::{assemble_client_update, fuse, score_clients, FusedSubnetwork, MemberStats};
use crate::nn::{train_sgd, DenseLayer, Matrix};
use crate::prototypes::predict_missing_prototypes;
use crate::seed::{self, stream};
use crate::{Model, Subnetwork};

/// Sorted indices of the clients taking part in `round`.
pub fn sample_participants(clients: usize, cfg: &ServerConfig, round: usize) -> Vec<usize> {
    let m = cfg.participants(clients);
    if m >= clients {
        return (0..clients).collect();
    }
    let mut rng = seed::rng(cfg.seed, &[stream::SAMPLE_CLIENTS, round as u64]);
    let mut picked = index::sample(&mut rng, clients, m).into_vec();
    picked.sort_unstable();
    picked
}

fn run_participants(
    clients: &mut [ClientState],
    participants: &[usize],
    run: impl Fn(&mut ClientState) -> Result<ClientArtifacts> + Sync,
) -> Result<Vec<ClientArtifacts>> {
    let mut chosen = vec![false; clients.len()];
    participants.iter().for_each(|&p| chosen[p] = true);
    clients.par_iter_mut().enumerate().filter(|(i, _)| chosen[*i]).map(|(_, c)| run(c)).collect()
}

fn evaluate_all(clients: &[ClientState]) -> Result<Vec<ClientMetrics>> {
    clients
        .par_iter()
        .map(|c| {
            let e = c.evaluate()?;
            Ok(ClientMetrics { client_id: c.id.clone(), f1: e.macro_f1, loss: e.mean_loss })
        })
        .collect()
}

/// One FedSub round: local rounds of the sampled clients, missing-prototype
/// prediction, per-class clustering, fusion, and update assembly. Updates are
/// stored on the clients and applied at their next participation. Every
/// client is evaluated on its current model.
pub fn server_round(clients: &mut [ClientState], cfg: &ServerConfig, round: usize) -> Result<RoundReport> {
    if clients.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let participants = sample_participants(clients.len(), cfg, round);
    let artifacts = run_participants(clients, &participants, |c| client_round(c, cfg, round))?;
    let classes = clients[0].model.output_dim();
    let universe: Vec<usize> = (0..classes).collect();

    let sets: Vec<_> = artifacts.iter().map(|a| a.prototypes.clone()).collect();
    let prediction = predict_missing_prototypes(&sets, &universe, cfg.neighbors)?;

    // Position in `artifacts` of each participant, keyed by client index.
    let slot: BTreeMap<usize, usize> = artifacts.iter().enumerate().map(|(i, a)| (a.client, i)).collect();
    let mut fused: Vec<FusedSubnetwork<f64>> = Vec::new();
    let mut received: Vec<Vec<usize>> = vec![Vec::new(); artifacts.len()];
    let mut cluster_counts = BTreeMap::new();
    for &label in &universe {
        let points: Vec<(usize, Vec<f64>)> = prediction
            .sets
            .iter()
            .filter_map(|s| s.get(label).map(|p| (s.client, p.vector.clone())))
            .collect();
        if points.is_empty() {
            continue;
        }
        let seed = seed::derive(cfg.seed, &[stream::CLUSTER, round as u64, label as u64]);
        let assignment = select_clusters(label, &points, cfg.k_max, seed)?;
        cluster_counts.insert(label, assignment.clusters.len());
        for cluster in &assignment.clusters {
            let holders: Vec<(&Subnetwork, MemberStats<f64>)> = cluster
                .iter()
                .filter_map(|c| {
                    let a = &artifacts[slot[c]];
                    let sub = a.subnetworks.get(&label)?;
                    let stats = MemberStats {
                        client: *c,
                        support: a.support.get(&label).copied().unwrap_or(0),
                        accuracy: a.accuracy.get(&label).copied().unwrap_or(0.0),
                    };
                    Some((sub, stats))
                })
                .collect();
            if holders.is_empty() {
                continue;
            }
            let stats: Vec<_> = holders.iter().map(|(_, s)| *s).collect();
            let subs: Vec<&Subnetwork> = holders.iter().map(|(s, _)| *s).collect();
            let scores = score_clients(label, &stats, cfg.strategy)?;
            fused.push(fuse(cfg.strategy, &subs, &scores)?);
            cluster.iter().for_each(|c| received[slot[c]].push(fused.len() - 1));
        }
    }

    let updates: Vec<_> = artifacts
        .par_iter()
        .zip(&received)
        .map(|(a, ids)| {
            let mine: Vec<&FusedSubnetwork<f64>> = ids.iter().map(|&i| &fused[i]).collect();
            assemble_client_update(a.client, &clients[a.client].model, &a.own_mask, &mine, cfg.strategy, cfg.depth)
        })
        .collect::<Result<_>>()?;
    for update in updates {
        if !update.is_empty() {
            clients[update.client].pending = Some(update.layers);
        }
    }

    Ok(RoundReport::new(round, evaluate_all(clients)?, participants, cluster_counts, prediction.predicted))
}

/// `sum_i w_i * model_i / sum_i w_i`, elementwise.
pub fn weighted_average(models: &[(&Model, f64)]) -> Result<Model> {
    let (first, _) = models.first().ok_or_else(|| Error::Parameter("cannot average zero models".into()))?;
    if models.iter().any(|(m, _)| !m.same_shape(first)) {
        return Err(Error::Shape("averaged models differ in shape".into()));
    }
    let total: f64 = models.iter().map(|(_, w)| w).sum();
    if total.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) || models.iter().any(|(_, w)| *w < 0.0) {
        return Err(Error::Parameter("averaging weights must be >= 0 with a positive sum".into()));
    }
    let layers = first
        .layers()
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let mut weights = vec![0.0; layer.weights.as_slice().len()];
            let mut biases = vec![0.0; layer.biases.len()];
            for (m, w) in models {
                let share = w / total;
                let src = &m.layers()[l];
                weights.iter_mut().zip(src.weights.as_slice()).for_each(|(a, &x)| *a += share * x);
                biases.iter_mut().zip(&src.biases).for_each(|(a, &x)| *a += share * x);
            }
            DenseLayer::new(Matrix::from_vec(layer.in_dim(), layer.out_dim(), weights)?, biases)
        })
        .collect::<Result<Vec<_>>>()?;
    Model::new(layers)
}

/// One FedAvg round: sampled clients train from the global model, which is
/// then replaced by their training-set-size-weighted average and handed to
/// every client.
pub fn fedavg_round(clients: &mut [ClientState], cfg: &ServerConfig, round: usize) -> Result<RoundReport> {
    if clients.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let participants = sample_participants(clients.len(), cfg, round);
    let global = clients[participants[0]].model.clone();
    let trained: Vec<(Model, f64)> = participants
        .par_iter()
        .map(|&p| {
            let c = &clients[p];
            let s = seed::derive(cfg.seed, &[stream::TRAIN, c.index as u64, round as u64]);
            Ok((train_sgd(&global, &c.train, &cfg.train_config(s))?, c.train.len() as f64))
        })
        .collect::<Result<_>>()?;
    let refs: Vec<(&Model, f64)> = trained.iter().map(|(m, w)| (m, *w)).collect();
    let global = weighted_average(&refs)?;
    clients.iter_mut().for_each(|c| c.model = global.clone());
    Ok(RoundReport::new(round, evaluate_all(clients)?, participants, BTreeMap::new(), 0))
}

fn load_view(clients: &mut [ClientState], dataset: &Dataset, split: &Split) {
    for (c, (state, view)) in clients.iter_mut().zip(&split.clients).enumerate() {
        let pick = |idx: &[usize]| idx.iter().map(|&i| dataset.clients[c].samples[i].clone()).collect();
        state.train = pick(&view.train);
        state.validation = pick(&view.validation);
        state.test = pick(&view.test);
    }
}

/// Runs `cfg.rounds` rounds of the configured algorithm on `dataset`. Every
/// client starts from the same initial model. Under the dynamic scenario the
/// clients' data views are refreshed at the start of every round.
pub fn run_experiment(dataset: &Dataset, scenario: Scenario, cfg: &ServerConfig) -> Result<Vec<RoundReport>> {
    dataset.validate()?;
    cfg.validate(dataset.clients.len())?;
    let split = stratified_split(dataset, TEST_FRACTION, seed::derive(cfg.seed, &[stream::SPLIT]))?;
    let schedule = match scenario {
        Scenario::Static => None,
        Scenario::Dynamic { period } => Some(DynamicSchedule::build(
            dataset,
            AFFECTED_FRACTION,
            period,
            seed::derive(cfg.seed, &[stream::SCHEDULE]),
        )?),
    };
    let dims: Vec<usize> =
        std::iter::once(dataset.feature_dim).chain(cfg.hidden.iter().copied()).chain([dataset.num_classes]).collect();
    let init = Model::init(&dims, seed::derive(cfg.seed, &[stream::INIT]))?;
    let mut clients: Vec<ClientState> =
        dataset.clients.iter().enumerate().map(|(i, c)| ClientState::new(i, c.id.clone(), init.clone())).collect();

    let body = |clients: &mut Vec<ClientState>| -> Result<Vec<RoundReport>> {
        let mut reports = Vec::with_capacity(cfg.rounds);
        for round in 0..cfg.rounds {
            match &schedule {
                Some(s) => load_view(clients, dataset, &apply_dynamic(dataset, &split, s, round)),
                None if round == 0 => load_view(clients, dataset, &split),
                None => {}
            }
            reports.push(match cfg.algorithm {
                Algorithm::FedSub => server_round(clients, cfg, round)?,
                Algorithm::FedAvg => fedavg_round(clients, cfg, round)?,
            });
        }
        Ok(reports)
    };
    if cfg.threads == 0 {
        body(&mut clients)
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::Parameter(format!("cannot build thread pool: {e}")))?;
        pool.install(|| body(&mut clients))
    }
}
