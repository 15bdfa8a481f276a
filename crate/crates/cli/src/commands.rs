use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use fedsub_core::clustering::{hopkins, hopkins_sample_size};
use fedsub_core::data::{save_csv, stratified_split, Dataset, TEST_FRACTION};
use fedsub_core::federation::{run_experiment, weighted_average, Interval, RoundReport};
use fedsub_core::nn::{evaluate, train_sgd};
use fedsub_core::prototypes::compute_prototypes;
use fedsub_core::seed::{self, stream};
use fedsub_core::{Model, Sample};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::CliError;

pub struct RunOutput {
    pub reports: Vec<RoundReport>,
    pub rounds_csv: PathBuf,
    pub summary_json: PathBuf,
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a ExperimentConfig,
    rounds: usize,
    clients: usize,
    /// Across clients, at the last round.
    final_f1: Option<Interval>,
    final_loss: Option<Interval>,
    /// Across clients, of each client's mean over rounds.
    mean_f1: Option<Interval>,
    mean_loss: Option<Interval>,
    per_round: Vec<RoundDiagnostics<'a>>,
}

#[derive(Serialize)]
struct RoundDiagnostics<'a> {
    round: usize,
    f1: Interval,
    loss: Interval,
    participants: usize,
    cluster_counts: &'a BTreeMap<usize, usize>,
    predicted_prototypes: usize,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// `round,client_id,f1,loss`, one row per client per round.
pub fn rounds_csv(reports: &[RoundReport]) -> Result<String, CliError> {
    let mut out = String::from("round,client_id,f1,loss\n");
    for r in reports {
        for c in &r.clients {
            if !c.f1.is_finite() || !c.loss.is_finite() {
                return Err(CliError::Runtime(format!("non-finite metric for client {} in round {}", c.client_id, r.round)));
            }
            writeln!(out, "{},{},{},{}", r.round, c.client_id, c.f1, c.loss).expect("writing to a String");
        }
    }
    Ok(out)
}

fn per_client_means(reports: &[RoundReport], pick: impl Fn(&fedsub_core::federation::ClientMetrics) -> f64) -> Option<Interval> {
    let first = reports.first()?;
    let means: Vec<f64> = (0..first.clients.len())
        .map(|i| reports.iter().map(|r| pick(&r.clients[i])).sum::<f64>() / reports.len() as f64)
        .collect();
    Some(Interval::of(&means))
}

/// Runs the configured experiment and writes `rounds.csv` and
/// `summary.json` under the output directory.
pub fn run(cfg: &ExperimentConfig, threads: usize) -> Result<RunOutput, CliError> {
    let dataset = cfg.dataset()?;
    let server = cfg.server(threads);
    server.validate(dataset.clients.len()).map_err(|e| CliError::Config(e.to_string()))?;
    let reports = run_experiment(&dataset, cfg.scenario(), &server)?;

    let csv = rounds_csv(&reports)?;
    let summary = Summary {
        config: cfg,
        rounds: reports.len(),
        clients: dataset.clients.len(),
        final_f1: reports.last().map(|r| r.f1),
        final_loss: reports.last().map(|r| r.loss),
        mean_f1: per_client_means(&reports, |c| c.f1),
        mean_loss: per_client_means(&reports, |c| c.loss),
        per_round: reports
            .iter()
            .map(|r| RoundDiagnostics {
                round: r.round,
                f1: r.f1,
                loss: r.loss,
                participants: r.participants.len(),
                cluster_counts: &r.cluster_counts,
                predicted_prototypes: r.predicted_prototypes,
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Runtime(e.to_string()))?;

    fs::create_dir_all(&cfg.output_dir).map_err(|e| io_err(&cfg.output_dir, e))?;
    let rounds_csv = cfg.output_dir.join("rounds.csv");
    let summary_json = cfg.output_dir.join("summary.json");
    fs::write(&rounds_csv, csv).map_err(|e| io_err(&rounds_csv, e))?;
    fs::write(&summary_json, json + "\n").map_err(|e| io_err(&summary_json, e))?;
    Ok(RunOutput { reports, rounds_csv, summary_json })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassTendency {
    pub label: usize,
    /// Clients holding the class.
    pub clients: usize,
    pub samples: usize,
    /// Absent when too few clients hold the class.
    pub hopkins: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyzeReport {
    pub classes: Vec<ClassTendency>,
}

/// Per-class Hopkins statistic over the clients' class prototypes.
pub fn analyze(dataset: &Dataset, rng_seed: u64) -> Result<AnalyzeReport, CliError> {
    let sets = dataset
        .clients
        .iter()
        .enumerate()
        .map(|(i, c)| compute_prototypes(i, &c.samples))
        .collect::<Result<Vec<_>, _>>()?;
    let classes = dataset
        .label_universe()
        .into_iter()
        .map(|label| {
            let points: Vec<Vec<f64>> = sets.iter().filter_map(|s| s.computed(label).map(<[f64]>::to_vec)).collect();
            let samples = dataset.clients.iter().flat_map(|c| &c.samples).filter(|s| s.label == label).count();
            let m = hopkins_sample_size(points.len());
            let h = if m == 0 {
                None
            } else {
                Some(hopkins(&points, m, seed::derive(rng_seed, &[stream::HOPKINS, label as u64]))?)
            };
            Ok(ClassTendency { label, clients: points.len(), samples, hopkins: h })
        })
        .collect::<Result<_, CliError>>()?;
    Ok(AnalyzeReport { classes })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergeRow {
    pub label: usize,
    pub a_on_a: Option<f64>,
    pub merged_on_a: Option<f64>,
    pub b_on_b: Option<f64>,
    pub merged_on_b: Option<f64>,
}

impl MergeRow {
    /// Largest relative accuracy loss of the merged model on either test set.
    pub fn worst_relative_drop(&self) -> Option<f64> {
        let drop = |before: Option<f64>, after: Option<f64>| match (before, after) {
            (Some(b), Some(a)) if b > 0.0 => Some((b - a) / b),
            _ => None,
        };
        [drop(self.a_on_a, self.merged_on_a), drop(self.b_on_b, self.merged_on_b)].into_iter().flatten().reduce(f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergeReport {
    pub a: String,
    pub b: String,
    pub rows: Vec<MergeRow>,
}

impl MergeReport {
    pub fn table(&self) -> String {
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
        let (a, b) = (&self.a, &self.b);
        let mut out = format!("{:<6} {:>12} {:>12} {:>12} {:>12}\n", "class", format!("{a}|{a}"), format!("{a}+{b}|{a}"), format!("{b}|{b}"), format!("{a}+{b}|{b}"));
        for r in &self.rows {
            writeln!(
                out,
                "{:<6} {:>12} {:>12} {:>12} {:>12}",
                r.label,
                cell(r.a_on_a),
                cell(r.merged_on_a),
                cell(r.b_on_b),
                cell(r.merged_on_b)
            )
            .expect("writing to a String");
        }
        out
    }
}

/// Trains clients `a` and `b` alone from the shared initial model for
/// `rounds * epochs` epochs, averages the two models, and reports per-class
/// test accuracy before and after averaging.
pub fn merge_test(dataset: &Dataset, cfg: &ExperimentConfig, a: &str, b: &str) -> Result<MergeReport, CliError> {
    let find = |id: &str| dataset.client_index(id).ok_or_else(|| CliError::Config(format!("unknown client id {id:?}")));
    let (ia, ib) = (find(a)?, find(b)?);
    let split = stratified_split(dataset, TEST_FRACTION, seed::derive(cfg.seed, &[stream::SPLIT]))?;
    let dims: Vec<usize> =
        std::iter::once(dataset.feature_dim).chain(cfg.hidden.iter().copied()).chain([dataset.num_classes]).collect();
    let init = Model::init(&dims, seed::derive(cfg.seed, &[stream::INIT]))?;
    let server = cfg.server(0);
    let parts = |c: usize| {
        let pick = |idx: &[usize]| -> Vec<Sample> { idx.iter().map(|&i| dataset.clients[c].samples[i].clone()).collect() };
        let s = &split.clients[c];
        let mut train = pick(&s.train);
        train.extend(pick(&s.validation));
        let test = if s.test.is_empty() { train.clone() } else { pick(&s.test) };
        (train, test)
    };
    let local = |c: usize, train: &[Sample]| -> Result<Model, CliError> {
        let mut tc = server.train_config(seed::derive(cfg.seed, &[stream::TRAIN, c as u64]));
        tc.epochs = cfg.epochs * cfg.rounds.max(1);
        Ok(train_sgd(&init, train, &tc)?)
    };
    let (train_a, test_a) = parts(ia);
    let (train_b, test_b) = parts(ib);
    let model_a = local(ia, &train_a)?;
    let model_b = local(ib, &train_b)?;
    let merged = weighted_average(&[(&model_a, 1.0), (&model_b, 1.0)])?;

    let acc = |m: &Model, data: &[Sample]| evaluate(m, data).map(|e| e.per_class_accuracy);
    let (aa, ma, bb, mb) = (acc(&model_a, &test_a)?, acc(&merged, &test_a)?, acc(&model_b, &test_b)?, acc(&merged, &test_b)?);
    let labels: std::collections::BTreeSet<usize> = aa.keys().chain(bb.keys()).copied().collect();
    let rows = labels
        .into_iter()
        .map(|label| MergeRow {
            label,
            a_on_a: aa.get(&label).copied(),
            merged_on_a: ma.get(&label).copied(),
            b_on_b: bb.get(&label).copied(),
            merged_on_b: mb.get(&label).copied(),
        })
        .collect();
    Ok(MergeReport { a: a.to_string(), b: b.to_string(), rows })
}

/// Writes the configured dataset, unstandardized, as CSV.
pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<Dataset, CliError> {
    let dataset = cfg.raw_dataset()?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    save_csv(&dataset, out)?;
    Ok(dataset)
}
