use std::path::{Path, PathBuf};

use fedsub_core::data::{generate_synthetic, load_csv, Dataset, SynthConfig};
use fedsub_core::federation::{Algorithm, Scenario, ServerConfig};
use fedsub_core::fusion::FusionStrategy;
use fedsub_core::subnetworks::DepthSetting;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    #[default]
    Static,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    ClusterAvg,
    Leadership,
    #[default]
    Overlapping,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthKind {
    Full,
    #[default]
    Partial,
}

/// Experiment description read from a TOML file. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub scenario: ScenarioKind,
    pub fusion: FusionKind,
    pub depth: DepthKind,
    /// Covered layers under partial depth.
    pub partial_layers: usize,
    pub rounds: usize,
    /// 0 means every client.
    pub clients_per_round: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub neighbors: usize,
    pub k_max: usize,
    pub reintroduction_period: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub output_dir: PathBuf,
    /// CSV dataset path, relative to the config file.
    pub csv: Option<PathBuf>,
    /// Label universe size for CSV data; inferred from the labels if absent.
    pub num_classes: Option<usize>,
    pub synthetic: Option<SynthConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let server = ServerConfig::default();
        Self {
            algorithm: server.algorithm,
            scenario: ScenarioKind::Static,
            fusion: FusionKind::Overlapping,
            depth: DepthKind::Partial,
            partial_layers: 2,
            rounds: server.rounds,
            clients_per_round: server.clients_per_round,
            epochs: server.epochs,
            learning_rate: server.learning_rate,
            batch_size: server.batch_size,
            neighbors: server.neighbors,
            k_max: server.k_max,
            reintroduction_period: 50,
            seed: server.seed,
            hidden: server.hidden,
            output_dir: PathBuf::from("out"),
            csv: None,
            num_classes: None,
            synthetic: None,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(describe_toml_error(text, &e)))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.output_dir = base.join(&cfg.output_dir);
        cfg.csv = cfg.csv.map(|p| base.join(p));
        Ok(cfg)
    }

    fn check(&self) -> Result<(), CliError> {
        let field = |name: &str, msg: String| Err(CliError::Config(format!("{name}: {msg}")));
        match (&self.csv, &self.synthetic) {
            (Some(_), Some(_)) => return field("csv", "set either `csv` or a [synthetic] table, not both".into()),
            (None, None) => return field("csv", "a dataset source is required: `csv` or a [synthetic] table".into()),
            (None, Some(_)) if self.num_classes.is_some() => {
                return field("num_classes", "only applies to csv data; use synthetic.classes".into())
            }
            _ => {}
        }
        if let Some(s) = &self.synthetic {
            s.validate().map_err(|e| CliError::Config(format!("synthetic: {e}")))?;
        }
        if self.scenario == ScenarioKind::Dynamic && self.reintroduction_period == 0 {
            return field("reintroduction_period", "must be >= 1".into());
        }
        if self.depth == DepthKind::Partial && !(1..=self.hidden.len()).contains(&self.partial_layers) {
            return field(
                "partial_layers",
                format!("must be in [1, {}] for {} hidden layers", self.hidden.len(), self.hidden.len()),
            );
        }
        self.server(0).train_config(0).validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.neighbors == 0 {
            return field("neighbors", "must be >= 1".into());
        }
        if self.k_max < 2 {
            return field("k_max", "must be >= 2".into());
        }
        if self.hidden.contains(&0) {
            return field("hidden", "layer widths must be >= 1".into());
        }
        Ok(())
    }

    pub fn scenario(&self) -> Scenario {
        match self.scenario {
            ScenarioKind::Static => Scenario::Static,
            ScenarioKind::Dynamic => Scenario::Dynamic { period: self.reintroduction_period },
        }
    }

    pub fn server(&self, threads: usize) -> ServerConfig {
        ServerConfig {
            algorithm: self.algorithm,
            rounds: self.rounds,
            clients_per_round: self.clients_per_round,
            strategy: match self.fusion {
                FusionKind::ClusterAvg => FusionStrategy::ClusterAvg,
                FusionKind::Leadership => FusionStrategy::ClusterLeadership,
                FusionKind::Overlapping => FusionStrategy::OverlappingComponents,
            },
            depth: match self.depth {
                DepthKind::Full => DepthSetting::Full,
                DepthKind::Partial => DepthSetting::Partial(self.partial_layers),
            },
            neighbors: self.neighbors,
            k_max: self.k_max,
            seed: self.seed,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            hidden: self.hidden.clone(),
            threads,
        }
    }

    /// The dataset as stored, before standardization.
    pub fn raw_dataset(&self) -> Result<Dataset, CliError> {
        match (&self.csv, &self.synthetic) {
            (Some(path), _) => Ok(load_csv(path, self.num_classes)?),
            (None, Some(s)) => Ok(generate_synthetic(s)?),
            (None, None) => Err(CliError::Config("csv: no dataset source".into())),
        }
    }

    /// The dataset with standardized features, as every experiment sees it.
    pub fn dataset(&self) -> Result<Dataset, CliError> {
        let mut ds = self.raw_dataset()?;
        ds.standardize();
        Ok(ds)
    }
}

/// Prefixes a TOML error with its line and, for `key = value` lines, the key.
fn describe_toml_error(text: &str, e: &toml::de::Error) -> String {
    let Some(span) = e.span() else { return e.message().to_string() };
    let line_no = text[..span.start.min(text.len())].matches('\n').count();
    let line = text.lines().nth(line_no).unwrap_or("");
    match line.split_once('=') {
        Some((key, _)) => format!("{} (line {}): {}", key.trim(), line_no + 1, e.message()),
        None => format!("line {}: {}", line_no + 1, e.message()),
    }
}

/// Worker threads from `FEDSUB_THREADS`; unset or 0 means automatic.
pub fn threads_from_env() -> Result<usize, CliError> {
    match std::env::var("FEDSUB_THREADS") {
        Ok(v) => v.trim().parse().map_err(|_| CliError::Config(format!("FEDSUB_THREADS: expected an integer, got {v:?}"))),
        Err(_) => Ok(0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "rounds = 1\n[synthetic]\nclients = 3\n";

    #[test]
    fn minimal_parses_with_defaults() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.rounds, 1);
        assert_eq!(cfg.hidden, vec![128, 512]);
        assert_eq!(cfg.synthetic.unwrap().clients, 3);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = ExperimentConfig::parse(&format!("roundz = 3\n{MINIMAL}")).unwrap_err();
        assert!(matches!(&err, CliError::Config(m) if m.contains("roundz")), "{err}");
        let err = ExperimentConfig::parse("[synthetic]\nclient = 3\n").unwrap_err();
        assert!(err.to_string().contains("client"), "{err}");
    }

    #[test]
    fn field_level_errors() {
        for (text, field) in [
            ("learning_rate = -1.0\n[synthetic]\n", "learning_rate"),
            ("partial_layers = 5\n[synthetic]\n", "partial_layers"),
            ("k_max = 1\n[synthetic]\n", "k_max"),
            ("rounds = 1\n", "csv"),
            ("fusion = \"mean\"\n[synthetic]\n", "fusion"),
            ("[synthetic]\nconcentration = 0.0\n", "concentration"),
        ] {
            let err = ExperimentConfig::parse(text).unwrap_err();
            assert!(err.to_string().contains(field), "{text:?} gave {err}");
        }
    }
}
