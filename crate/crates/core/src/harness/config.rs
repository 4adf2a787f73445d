//! Versioned TOML experiment configuration.
//!
//! ```toml
//! version = 1
//! name = "cls-bits"
//! task = "cls"                 # seg | cls | asr
//! recipe = "bitwidth_sweep"    # bitwidth_sweep | parallel_sweep | bitwidth_parallel | small_model | suggestion
//! model_size = "full"          # full | small
//! bit_widths = [2, 4, 6, 8]
//! parallel = [2, 3]
//! seeds = [1, 2, 3]
//! workers = 1
//! output_dir = "out/cls-bits"
//!
//! [dataset]
//! train = 2000
//! image_size = 16
//!
//! [train]
//! epochs = 4
//! [train.optimizer]
//! learning_rate = 0.01
//!
//! [inq]
//! fractions = [0.5, 0.75, 0.875, 1.0]
//! epochs_per_step = 2
//! ```
//!
//! Every section and key except `version` and `task` may be omitted; missing
//! values take the per-task defaults of [`ExperimentConfig::for_task`].

use crate::error::{Error, Result};
use crate::inq::{InqConfig, InqSchedule, PartitionStrategy};
use crate::nncore::{OptimizerConfig, StepDrop};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Gland-style segmentation with a fully convolutional net.
    Seg,
    /// Image classification with a small CNN.
    Cls,
    /// Frame classification of feature sequences with a bidirectional RNN.
    Asr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelSize {
    #[default]
    Full,
    /// Half the channel widths and one fewer hidden dense layer.
    Small,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    #[default]
    BitwidthSweep,
    ParallelSweep,
    BitwidthParallel,
    SmallModel,
    Suggestion,
}

/// IDX files replacing the synthetic classification data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdxSource {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetParams {
    /// Data are generated from this seed, independently of the run seeds.
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Side of square images (seg, cls).
    pub image_size: usize,
    /// Classes (cls, asr).
    pub classes: usize,
    /// Std-dev of additive Gaussian pixel / feature noise.
    pub noise: f32,
    /// Fraction of training labels replaced by a random class (cls).
    pub label_noise: f64,
    /// Probability that a segmentation image holds no gland.
    pub empty_fraction: f64,
    pub seq_len: usize,
    pub features: usize,
    /// Probability that a frame keeps the previous frame's class (asr).
    pub stay_probability: f64,
    pub idx: Option<IdxSource>,
}

impl DatasetParams {
    pub fn for_task(task: Task) -> Self {
        let base = DatasetParams {
            seed: 2017,
            train: 1000,
            val: 200,
            test: 500,
            image_size: 16,
            classes: 10,
            noise: 0.3,
            label_noise: 0.0,
            empty_fraction: 0.0,
            seq_len: 20,
            features: 12,
            stay_probability: 0.8,
            idx: None,
        };
        match task {
            Task::Cls => base,
            Task::Seg => DatasetParams {
                train: 300,
                val: 50,
                test: 100,
                image_size: 24,
                classes: 2,
                noise: 0.15,
                empty_fraction: 0.3,
                ..base
            },
            Task::Asr => DatasetParams {
                train: 400,
                val: 100,
                test: 200,
                classes: 8,
                noise: 1.0,
                ..base
            },
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

impl Default for DatasetParams {
    fn default() -> Self {
        DatasetParams::for_task(Task::Cls)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            epochs: 4,
            batch_size: 32,
            optimizer: OptimizerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InqParams {
    pub fractions: Vec<f64>,
    pub epochs_per_step: usize,
    pub strategy: PartitionStrategy,
    pub max_level_override: Option<f32>,
    /// Retraining optimizer; the pretraining optimizer when absent.
    pub optimizer: Option<OptimizerConfig>,
}

impl Default for InqParams {
    fn default() -> Self {
        let s = InqSchedule::four_step();
        InqParams {
            fractions: s.fractions().to_vec(),
            epochs_per_step: s.epochs_per_step,
            strategy: PartitionStrategy::Magnitude,
            max_level_override: None,
            optimizer: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuggestionParams {
    /// Labeled samples drawn at random before the first iteration.
    pub seed_labeled: usize,
    pub uncertainty_take: usize,
    pub representative_take: usize,
    pub iterations: usize,
    pub ensemble_size: usize,
    pub quantize_suggestors: Option<u32>,
    pub retrain_every_iteration: bool,
    /// Training epochs for each suggestive ensemble member.
    pub suggestor_epochs: usize,
}

impl Default for SuggestionParams {
    fn default() -> Self {
        SuggestionParams {
            seed_labeled: 16,
            uncertainty_take: 16,
            representative_take: 8,
            iterations: 4,
            ensemble_size: 3,
            quantize_suggestors: None,
            retrain_every_iteration: true,
            suggestor_epochs: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub name: String,
    pub task: Task,
    #[serde(default)]
    pub recipe: Recipe,
    #[serde(default)]
    pub model_size: ModelSize,
    #[serde(default)]
    pub bit_widths: Vec<u32>,
    #[serde(default)]
    pub parallel: Vec<usize>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default)]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub dataset: Option<DatasetParams>,
    #[serde(default)]
    pub train: Option<TrainParams>,
    #[serde(default)]
    pub inq: InqParams,
    #[serde(default)]
    pub suggestion: SuggestionParams,
}

fn one() -> usize {
    1
}

/// Per-task default optimizers: segmentation steps its rate down by 10x
/// late in training, the other tasks use a slow per-step decay.
pub fn default_optimizer(task: Task) -> OptimizerConfig {
    match task {
        Task::Seg => OptimizerConfig {
            learning_rate: 5e-4,
            lr_decay: 0.0,
            momentum: 0.9,
            weight_decay: 0.0,
            step_drop: Some(StepDrop {
                at_step: 10_000,
                learning_rate: 5e-5,
            }),
        },
        Task::Cls | Task::Asr => OptimizerConfig::default(),
    }
}

impl ExperimentConfig {
    pub fn for_task(task: Task) -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            name: format!("{task:?}").to_lowercase(),
            task,
            recipe: Recipe::BitwidthSweep,
            model_size: ModelSize::Full,
            bit_widths: (2..=9).collect(),
            parallel: vec![2, 3, 4, 5, 6, 7],
            seeds: vec![1, 2, 3],
            workers: 1,
            output_dir: PathBuf::from("out"),
            dataset: Some(DatasetParams::for_task(task)),
            train: Some(TrainParams {
                optimizer: default_optimizer(task),
                ..TrainParams::default()
            }),
            inq: InqParams::default(),
            suggestion: SuggestionParams::default(),
        }
    }

    /// Fills task-dependent sections that the file left out.
    fn fill_defaults(mut self) -> Self {
        if self.dataset.is_none() {
            self.dataset = Some(DatasetParams::for_task(self.task));
        }
        if self.train.is_none() {
            self.train = Some(TrainParams {
                optimizer: default_optimizer(self.task),
                ..TrainParams::default()
            });
        }
        if self.seeds.is_empty() {
            self.seeds = vec![1, 2, 3];
        }
        if self.bit_widths.is_empty() {
            self.bit_widths = match self.recipe {
                Recipe::SmallModel => vec![4, 8],
                _ => (2..=9).collect(),
            };
        }
        if self.parallel.is_empty() {
            self.parallel = vec![2, 3, 4, 5, 6, 7];
        }
        self
    }

    pub fn dataset(&self) -> &DatasetParams {
        self.dataset.as_ref().expect("filled by from_toml / for_task")
    }

    pub fn dataset_mut(&mut self) -> &mut DatasetParams {
        self.dataset.get_or_insert_with(DatasetParams::default)
    }

    pub fn train(&self) -> &TrainParams {
        self.train.as_ref().expect("filled by from_toml / for_task")
    }

    pub fn train_mut(&mut self) -> &mut TrainParams {
        self.train.get_or_insert_with(TrainParams::default)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        let cfg = cfg.fill_defaults();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        ExperimentConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn schedule(&self) -> Result<InqSchedule> {
        InqSchedule::new(self.inq.fractions.clone(), self.inq.epochs_per_step)
    }

    pub fn inq_config(&self, bit_width: u32, seed: u64) -> Result<InqConfig> {
        Ok(InqConfig {
            bit_width,
            schedule: self.schedule()?,
            strategy: self.inq.strategy,
            optimizer: self.inq.optimizer.clone().unwrap_or_else(|| self.train().optimizer.clone()),
            batch_size: self.train().batch_size,
            max_level_override: self.inq.max_level_override,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("config version {} (supported: {CONFIG_VERSION})", self.version));
        }
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty".into());
        }
        if let Some(b) = self.bit_widths.iter().find(|b| !(2..=16).contains(*b)) {
            return bad(format!("bit width {b} outside 2..=16"));
        }
        if self.parallel.contains(&0) {
            return bad("parallel values must be >= 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be >= 1".into());
        }
        let d = self.dataset();
        if d.train == 0 || d.test == 0 {
            return bad("dataset needs train and test samples".into());
        }
        match self.task {
            Task::Seg | Task::Cls if d.image_size < 8 => return bad("image_size must be >= 8".into()),
            Task::Cls | Task::Asr if d.classes < 2 => return bad("need at least 2 classes".into()),
            Task::Cls if d.classes > 10 && d.idx.is_none() => {
                return bad("synthetic shapes provide at most 10 classes".into())
            }
            Task::Asr if d.seq_len == 0 || d.features == 0 => return bad("asr needs seq_len and features".into()),
            _ => {}
        }
        if self.task == Task::Seg && !d.image_size.is_multiple_of(2) {
            return bad("segmentation image_size must be even".into());
        }
        if self.train().batch_size == 0 {
            return bad("batch_size must be > 0".into());
        }
        self.train().optimizer.validate()?;
        if let Some(o) = &self.inq.optimizer {
            o.validate()?;
        }
        self.schedule()?;
        if self.recipe == Recipe::Suggestion {
            if self.task != Task::Seg {
                return bad("the suggestion recipe runs on the seg task".into());
            }
            let s = &self.suggestion;
            if s.representative_take == 0 || s.representative_take > s.uncertainty_take || s.iterations == 0 {
                return bad("suggestion needs 0 < representative_take <= uncertainty_take and iterations >= 1".into());
            }
            if s.ensemble_size < 2 {
                return bad("suggestive ensemble needs at least 2 members".into());
            }
            if s.seed_labeled == 0 || s.seed_labeled >= d.train {
                return bad("seed_labeled must be in 1..train".into());
            }
            if let Some(b) = s.quantize_suggestors {
                if !(2..=16).contains(&b) {
                    return bad(format!("quantize_suggestors {b} outside 2..=16"));
                }
            }
        }
        Ok(())
    }
}
