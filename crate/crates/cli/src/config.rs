use std::path::{Path, PathBuf};

use ldnn::conv::{Activation, LayerSpec, StackSpec};
use ldnn::data::{gen_two_moons, gen_two_spirals, load_csv, load_idx_limited, LabelColumn, MoonsParams, NormalizeMode};
use ldnn::{Dataset, InitMode, LossKind, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Where a dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Csv {
        path: PathBuf,
        #[serde(default)]
        label_column: LabelColumn,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
    },
    Moons {
        #[serde(default)]
        params: MoonsParams,
        #[serde(default)]
        seed: u64,
    },
    Spirals,
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset, CliError> {
        Ok(match self {
            DataSource::Csv { path, label_column } => load_csv(path, *label_column)?,
            DataSource::Idx { images, labels, limit } => load_idx_limited(images, labels, *limit)?,
            DataSource::Moons { params, seed } => gen_two_moons(params, *seed)?,
            DataSource::Spirals => gen_two_spirals(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Random,
    #[default]
    Kmeans,
    Farthest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LossArg {
    Quadratic,
    CrossEntropy,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Quadratic => LossKind::Quadratic,
            LossArg::CrossEntropy => LossKind::CrossEntropy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum NormalizeArg {
    None,
    Zscore,
    Whiten,
}

impl From<NormalizeArg> for NormalizeMode {
    fn from(n: NormalizeArg) -> Self {
        match n {
            NormalizeArg::None => NormalizeMode::None,
            NormalizeArg::Zscore => NormalizeMode::Zscore,
            NormalizeArg::Whiten => NormalizeMode::Whiten,
        }
    }
}

/// Convolutional front-end and head settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvSettings {
    pub stack: StackSpec,
    pub head_groups: usize,
    pub head_per_group: usize,
    pub head_init: InitKind,
    pub head_restarts: usize,
}

impl Default for ConvSettings {
    fn default() -> Self {
        let conv = |maps_out| LayerSpec::Conv {
            maps_out,
            kernel: 5,
            activation: Activation::Logistic,
        };
        ConvSettings {
            stack: StackSpec {
                input: [1, 28, 28],
                layers: vec![conv(8), LayerSpec::Pool { window: 2 }, conv(16), LayerSpec::Pool { window: 2 }],
            },
            head_groups: 4,
            head_per_group: 4,
            head_init: InitKind::Kmeans,
            head_restarts: 3,
        }
    }
}

impl ConvSettings {
    pub fn head_init_mode(&self) -> Result<InitMode, CliError> {
        init_mode(self.head_init, self.head_groups, self.head_per_group, self.head_restarts, None)
    }
}

fn init_mode(
    kind: InitKind,
    groups: usize,
    per_group: usize,
    restarts: usize,
    threshold: Option<f64>,
) -> Result<InitMode, CliError> {
    Ok(match kind {
        InitKind::Random => InitMode::Random { groups, per_group },
        InitKind::Kmeans => InitMode::Kmeans {
            groups,
            per_group,
            restarts,
        },
        InitKind::Farthest => InitMode::Farthest {
            threshold: threshold.ok_or_else(|| CliError::Usage("farthest init needs --threshold".into()))?,
        },
    })
}

/// Everything needed to reproduce a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: Option<DataSource>,
    pub test_data: Option<DataSource>,
    pub normalize: NormalizeMode,
    pub groups: usize,
    pub per_group: usize,
    pub init: InitKind,
    pub restarts: usize,
    pub threshold: Option<f64>,
    pub train: TrainConfig,
    /// Train the pairwise modular baseline instead of an LDNN.
    pub modn: bool,
    pub conv: Option<ConvSettings>,
    pub repetitions: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub history: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: None,
            test_data: None,
            normalize: NormalizeMode::None,
            groups: 3,
            per_group: 3,
            init: InitKind::Kmeans,
            restarts: 50,
            threshold: None,
            train: TrainConfig::default(),
            modn: false,
            conv: None,
            repetitions: 1,
            seed: 0,
            out: None,
            history: None,
        }
    }
}

impl ExperimentConfig {
    /// Defaults of the joint convolutional pipeline.
    pub fn conv_default() -> Self {
        ExperimentConfig {
            conv: Some(ConvSettings::default()),
            train: TrainConfig {
                epochs: 5,
                loss: LossKind::CrossEntropy,
                ..TrainConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        if cfg.train.seed != 0 && cfg.train.seed != cfg.seed {
            return Err(CliError::Usage(format!(
                "config sets train.seed = {} but seed = {}; set only seed",
                cfg.train.seed, cfg.seed
            )));
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn init_mode(&self) -> Result<InitMode, CliError> {
        init_mode(self.init, self.groups, self.per_group, self.restarts, self.threshold)
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Copies the run seed into the training section so dumps are consistent.
    pub fn settle(mut self) -> Self {
        self.train.seed = self.seed;
        self
    }
}
