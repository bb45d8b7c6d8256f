//! Declarative experiment configuration.

use std::path::{Path, PathBuf};

use featx::eval::{Protocol, SelectionPolicy, SplitSpec};
use featx::experiment::{Method, MethodSettings, StreamConfig};
use featx::models::{BackboneVariant, GnnFlavor, Normalization};
use featx::ndiff::OptimizerKind;
use featx::train::Schedule;
use featx::{Error, Result};
use serde::Deserialize;

pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
pub const DEFAULT_RATIOS: [f64; 6] = [0.3, 0.4, 0.5, 0.6, 0.7, 0.8];

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub csv: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    /// Generated stream used instead of a CSV file.
    pub stream: Option<StreamConfig>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub protocol: Protocol,
    pub fractions: [f64; 3],
    pub fold_count: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        let spec = SplitSpec::default();
        SplitSection {
            protocol: spec.protocol,
            fractions: spec.fractions,
            fold_count: spec.fold_count,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Uci,
    Ctr,
    CtrDeepfm,
}

/// Optional overrides of the preset architecture and training settings.
#[derive(Debug, Clone, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SettingsSection {
    pub preset: Preset,
    pub hidden: Option<Vec<usize>>,
    pub batch_norm: Option<bool>,
    pub dropout: Option<f64>,
    pub gnn_layers: Option<usize>,
    pub gnn_flavor: Option<GnnFlavor>,
    pub self_loop: Option<bool>,
    pub normalization: Option<Normalization>,
    pub epochs: Option<usize>,
    pub folds: Option<usize>,
    pub k: Option<usize>,
    pub rho: Option<f64>,
    pub lr_backbone: Option<f64>,
    pub lr_gnn: Option<f64>,
    pub optimizer: Option<OptimizerKind>,
    pub schedule: Option<Schedule>,
    pub batch_size: Option<usize>,
    pub edge_budget: Option<usize>,
    pub eval_every: Option<usize>,
    pub selection: Option<SelectionPolicy>,
    pub knn_top_fraction: Option<f64>,
}

impl SettingsSection {
    /// Preset settings for a task with `classes` classes, with overrides applied.
    pub fn resolve(&self, classes: usize) -> Result<MethodSettings> {
        let mut s = match self.preset {
            Preset::Uci => MethodSettings::uci(classes),
            Preset::Ctr => MethodSettings::ctr(BackboneVariant::Plain),
            Preset::CtrDeepfm => MethodSettings::ctr(BackboneVariant::DeepFm),
        };
        if let Some(h) = &self.hidden {
            s.backbone.hidden = h.clone();
            s.gnn.width = s.backbone.width();
        }
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { $target = v; })*
            };
        }
        set! {
            batch_norm => s.backbone.batch_norm,
            dropout => s.backbone.dropout,
            gnn_layers => s.gnn.layers,
            gnn_flavor => s.gnn.flavor,
            self_loop => s.gnn.self_loop,
            normalization => s.gnn.normalization,
            epochs => s.train.epochs,
            folds => s.train.folds,
            rho => s.train.rho,
            lr_backbone => s.train.lr_backbone,
            lr_gnn => s.train.lr_gnn,
            optimizer => s.train.optimizer,
            schedule => s.train.schedule,
            edge_budget => s.train.edge_budget,
            selection => s.train.selection,
            knn_top_fraction => s.knn_top_fraction,
        }
        if self.k.is_some() {
            s.inductive_k = self.k;
        }
        if self.batch_size.is_some() {
            s.train.batch_size = self.batch_size;
        }
        if self.eval_every.is_some() {
            s.train.eval_every = self.eval_every;
        }
        s.backbone.validate()?;
        s.train.validate()?;
        Ok(s)
    }
}

/// Contents of an experiment file.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub dataset: String,
    pub output: PathBuf,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub methods: Option<Vec<Method>>,
    #[serde(default)]
    pub ratios: Option<Vec<f64>>,
    pub data: DataSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub settings: SettingsSection,
}

/// Where rows come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv { csv: PathBuf, schema: PathBuf },
    Stream(StreamConfig),
}

/// Validated configuration with paths resolved against the config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub output: PathBuf,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub ratios: Vec<f64>,
    pub source: DataSource,
    pub split: SplitSection,
    pub settings: SettingsSection,
}

/// Command-line values that win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seeds: Option<Vec<u64>>,
    pub methods: Option<Vec<Method>>,
    pub ratios: Option<Vec<f64>>,
    pub output: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub folds: Option<usize>,
    pub rho: Option<f64>,
    pub lr_backbone: Option<f64>,
    pub lr_gnn: Option<f64>,
}

fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn require_file(path: &Path) -> Result<()> {
    std::fs::metadata(path)
        .map(|_| ())
        .map_err(|e| Error::io(path, e))
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<ExperimentFile> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::invalid(format!("{}: line {line}: {}", origin.display(), e.message()))
        })
    }

    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_file(file, base, overrides)
    }

    pub fn from_file(file: ExperimentFile, base: &Path, overrides: &Overrides) -> Result<Self> {
        let source = match (file.data.csv, file.data.schema, file.data.stream) {
            (Some(csv), Some(schema), None) => {
                let (csv, schema) = (resolve_path(base, &csv), resolve_path(base, &schema));
                require_file(&csv)?;
                require_file(&schema)?;
                DataSource::Csv { csv, schema }
            }
            (None, None, Some(stream)) => DataSource::Stream(stream),
            _ => {
                return Err(Error::invalid(
                    "[data] needs either `csv` and `schema` or a `stream` table",
                ))
            }
        };
        let mut settings = file.settings;
        macro_rules! flag {
            ($($field:ident),*) => { $(if overrides.$field.is_some() { settings.$field = overrides.$field; })* };
        }
        flag!(epochs, folds, rho, lr_backbone, lr_gnn);
        let seeds = overrides
            .seeds
            .clone()
            .or(file.seeds)
            .unwrap_or_else(|| DEFAULT_SEEDS.to_vec());
        if seeds.is_empty() {
            return Err(Error::invalid("seeds must not be empty"));
        }
        let ratios = overrides
            .ratios
            .clone()
            .or(file.ratios)
            .unwrap_or_else(|| DEFAULT_RATIOS.to_vec());
        if ratios.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
            return Err(Error::invalid("observed ratios must lie in (0, 1]"));
        }
        let config = ExperimentConfig {
            dataset: file.dataset,
            output: overrides
                .output
                .clone()
                .unwrap_or_else(|| resolve_path(base, &file.output)),
            seeds,
            methods: overrides
                .methods
                .clone()
                .or(file.methods)
                .unwrap_or_else(Method::standard),
            ratios,
            source,
            split: file.split,
            settings,
        };
        if config.methods.is_empty() {
            return Err(Error::invalid("methods must not be empty"));
        }
        config.split_spec(config.ratios[0], config.seeds[0]).validate()?;
        Ok(config)
    }

    pub fn split_spec(&self, ratio: f64, seed: u64) -> SplitSpec {
        SplitSpec {
            protocol: self.split.protocol,
            fractions: self.split.fractions,
            observed_ratio: ratio,
            fold_count: self.split.fold_count,
            seed,
        }
    }

    pub fn results_path(&self) -> PathBuf {
        self.output.join("results.jsonl")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
dataset = "toy"
output = "out"
[data]
stream = { rows = 300 }
[split]
protocol = "chronological"
"#;

    #[test]
    fn defaults_fill_in() {
        let file = ExperimentConfig::parse(MINIMAL, Path::new("x.toml")).unwrap();
        let c = ExperimentConfig::from_file(file, Path::new("/base"), &Overrides::default()).unwrap();
        assert_eq!(c.seeds, DEFAULT_SEEDS);
        assert_eq!(c.methods, Method::standard());
        assert_eq!(c.output, PathBuf::from("/base/out"));
        match c.source {
            DataSource::Stream(s) => assert_eq!(s.rows, 300),
            other => panic!("unexpected source {other:?}"),
        }
    }

    #[test]
    fn flags_win() {
        let file = ExperimentConfig::parse(MINIMAL, Path::new("x.toml")).unwrap();
        let overrides = Overrides {
            seeds: Some(vec![9]),
            epochs: Some(3),
            ..Overrides::default()
        };
        let c = ExperimentConfig::from_file(file, Path::new("."), &overrides).unwrap();
        assert_eq!(c.seeds, vec![9]);
        assert_eq!(c.settings.resolve(2).unwrap().train.epochs, 3);
    }

    #[test]
    fn unknown_keys_report_line() {
        let err = ExperimentConfig::parse("dataset = \"a\"\nbogus = 1\n", Path::new("c.toml")).unwrap_err();
        assert!(err.to_string().contains("c.toml: line 2"), "{err}");
    }

    #[test]
    fn missing_schema_names_path() {
        let csv = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/gene/gene.csv");
        let text = format!("dataset = \"a\"\noutput = \"o\"\n[data]\ncsv = \"{csv}\"\nschema = \"/nonexistent/s.txt\"\n");
        let file = ExperimentConfig::parse(&text, Path::new("c.toml")).unwrap();
        let err = ExperimentConfig::from_file(file, Path::new("."), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/s.txt"), "{err}");
    }
}
