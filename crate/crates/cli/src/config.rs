//! TOML experiment configuration and its resolution into core configs.
//!
//! Relative paths are resolved against the directory holding the config file.
//! Every random choice derives from the top-level `seed`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use semidistill::corpus::{
    load_20newsgroup_roots, load_jsonl, resolve_newsgroup_roots, split, split_paper_counts,
    synth_generate, CategorySet, Dataset, DatasetKind, NewsgroupOptions, Split, SynthConfig,
};
use semidistill::distill::{DistillConfig, ModelConfig, DEFAULT_THRESHOLD};
use semidistill::features::VectorizerConfig;
use semidistill::losses::{LossKind, LossStrategy};
use semidistill::model::{Architecture, ModelSpec};
use semidistill::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::Usage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub teacher: ModelSection,
    #[serde(default)]
    pub student: ModelSection,
    #[serde(default)]
    pub distill: DistillSection,
    /// Strategies distilled in turn; all three when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategies: Option<Vec<LossKind>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Synth,
    Jsonl,
    Newsgroups,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SplitSpec {
    /// `"paper"`: 8,073 labeled, 805 test, the rest pooled.
    Preset(String),
    /// `[labeled, unlabeled, test]` fractions.
    Fractions([f64; 3]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: SourceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    /// A single labeled JSONL file to split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Pre-split JSONL partitions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labeled: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    /// Newsgroup corpus root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    #[serde(default = "yes")]
    pub strip_headers: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSpec>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchitectureKind {
    Linear,
    Mlp,
}

/// Optional overrides of a role's default model; unset fields keep the
/// teacher or student preset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture: Option<ArchitectureKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_ngrams: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub char_ngrams: Option<Vec<usize>>,
    #[serde(default)]
    pub train: TrainSection,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillSection {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "one")]
    pub temperature: f64,
    #[serde(default = "yes")]
    pub pre_fine_tune: bool,
    #[serde(default)]
    pub include_labeled: bool,
}

impl Default for DistillSection {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            temperature: 1.0,
            pre_fine_tune: true,
            include_labeled: false,
        }
    }
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn one() -> f64 {
    1.0
}

/// Independent seed streams derived from the experiment seed (splitmix64).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const TEACHER_INIT: u64 = 1;
pub const TEACHER_TRAIN: u64 = 2;
pub const STUDENT_INIT: u64 = 3;
pub const STUDENT_TRAIN: u64 = 4;

#[derive(Clone, Copy)]
pub enum Role {
    Teacher,
    Student,
}

impl TrainSection {
    pub fn apply(&self, base: TrainConfig) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            learning_rate: self.learning_rate.or(base.learning_rate),
            momentum: self.momentum.unwrap_or(base.momentum),
            weight_decay: self.weight_decay.unwrap_or(base.weight_decay),
            patience: self.patience.unwrap_or(base.patience),
            validation_fraction: self.validation_fraction.unwrap_or(base.validation_fraction),
            seed: base.seed,
        }
    }
}

impl ModelSection {
    /// Role preset with this section's overrides, seeded from `seed`.
    pub fn resolve(&self, role: Role, k: usize, seed: u64) -> ModelConfig {
        let (mut config, init, train) = match role {
            Role::Teacher => (ModelConfig::teacher(k), TEACHER_INIT, TEACHER_TRAIN),
            Role::Student => (ModelConfig::student(k), STUDENT_INIT, STUDENT_TRAIN),
        };
        if let Some(dim) = self.dimension {
            config.vectorizer = VectorizerConfig {
                dimension: dim,
                ..config.vectorizer
            };
        }
        if let Some(w) = &self.word_ngrams {
            config.vectorizer.word_ngrams = w.clone();
        }
        if let Some(c) = &self.char_ngrams {
            config.vectorizer.char_ngrams = c.clone();
        }
        let hidden = match (self.hidden, config.spec.architecture) {
            (Some(h), _) => h,
            (None, Architecture::Mlp { hidden }) => hidden,
            (None, Architecture::Linear) => 0,
        };
        let architecture = match self.architecture {
            Some(ArchitectureKind::Linear) => Architecture::Linear,
            Some(ArchitectureKind::Mlp) | None => Architecture::Mlp { hidden },
        };
        config.spec = ModelSpec {
            architecture,
            input_dim: config.vectorizer.dimension,
            k,
            init_scale: self.init_scale.unwrap_or(config.spec.init_scale),
            seed: derive_seed(seed, init),
        };
        config.train = self.train.apply(TrainConfig {
            seed: derive_seed(seed, train),
            ..TrainConfig::default()
        });
        config
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: Self =
            toml::from_str(&text).map_err(|e| Usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.data.rebase(base);
        if let Some(out) = &config.output {
            config.output = Some(base.join(out));
        }
        Ok(config)
    }

    pub fn strategies(&self) -> Result<Vec<LossStrategy>> {
        let kinds = self
            .strategies
            .clone()
            .unwrap_or_else(|| LossKind::ALL.to_vec());
        if kinds.is_empty() {
            return Err(Usage("strategies must not be empty".into()).into());
        }
        kinds
            .into_iter()
            .map(|k| {
                LossStrategy::with_temperature(k, self.distill.temperature)
                    .map_err(|e| Usage(e.to_string()).into())
            })
            .collect()
    }

    pub fn distill_config(&self, k: usize) -> Result<DistillConfig> {
        let strategies = self.strategies()?;
        let config = DistillConfig {
            threshold: self.distill.threshold,
            strategy: strategies[0],
            student: self.student.resolve(Role::Student, k, self.seed),
            pre_fine_tune: self.distill.pre_fine_tune,
            include_labeled: self.distill.include_labeled,
        };
        config.validate(k)?;
        Ok(config)
    }

    pub fn teacher_config(&self, k: usize) -> Result<ModelConfig> {
        let config = self.teacher.resolve(Role::Teacher, k, self.seed);
        config.validate(k)?;
        Ok(config)
    }
}

pub fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Usage(format!("input file {} does not exist", path.display())).into())
    }
}

impl DataConfig {
    fn rebase(&mut self, base: &Path) {
        for p in [
            &mut self.input,
            &mut self.labeled,
            &mut self.pool,
            &mut self.test,
            &mut self.root,
        ]
        .into_iter()
        .flatten()
        {
            *p = base.join(&*p);
        }
    }

    /// Loads or generates the corpus and returns the three partitions.
    pub fn partitions(&self, seed: u64) -> Result<Split> {
        match self.source {
            SourceKind::Synth => {
                let synth = SynthConfig {
                    seed,
                    ..self.synth.clone().unwrap_or_default()
                };
                let data = synth_generate(&synth)?;
                self.split(&data, seed, [0.3, 0.6, 0.1])
            }
            SourceKind::Jsonl => {
                if let Some(input) = &self.input {
                    require_file(input)?;
                    let categories = semidistill::corpus::infer_categories(input)?;
                    let data = load_jsonl(input, &categories)?;
                    return self.split(&data, seed, [0.3, 0.6, 0.1]);
                }
                let (Some(labeled), Some(pool), Some(test)) =
                    (&self.labeled, &self.pool, &self.test)
                else {
                    return Err(Usage(
                        "jsonl source needs either `input` or all of `labeled`, `pool`, `test`"
                            .into(),
                    )
                    .into());
                };
                for p in [labeled, pool, test] {
                    require_file(p)?;
                }
                let categories = semidistill::corpus::infer_categories(labeled)?;
                Ok(Split {
                    labeled: load_partition(labeled, &categories, DatasetKind::Labeled)?,
                    unlabeled: load_partition(pool, &categories, DatasetKind::Unlabeled)?,
                    test: load_partition(test, &categories, DatasetKind::Test)?,
                })
            }
            SourceKind::Newsgroups => {
                let root = self
                    .root
                    .as_ref()
                    .ok_or_else(|| Usage("newsgroups source needs `root`".into()))?;
                if !root.is_dir() {
                    return Err(Usage(format!(
                        "newsgroup root {} is not a directory",
                        root.display()
                    ))
                    .into());
                }
                let opts = NewsgroupOptions {
                    strip_headers: self.strip_headers,
                };
                let (data, report) = load_20newsgroup_roots(&resolve_newsgroup_roots(root), &opts)?;
                if !report.skipped.is_empty() {
                    log::warn!("skipped {} unreadable files", report.skipped.len());
                }
                match &self.split {
                    None => Ok(split_paper_counts(&data, seed)?),
                    Some(_) => self.split(&data, seed, [0.3, 0.6, 0.1]),
                }
            }
        }
    }

    fn split(&self, data: &Dataset, seed: u64, default: [f64; 3]) -> Result<Split> {
        match &self.split {
            Some(SplitSpec::Preset(name)) if name == "paper" => Ok(split_paper_counts(data, seed)?),
            Some(SplitSpec::Preset(name)) => Err(Usage(format!(
                "unknown split preset {name:?}; use \"paper\" or [labeled, unlabeled, test] fractions"
            ))
            .into()),
            Some(SplitSpec::Fractions(f)) => Ok(split(data, (f[0], f[1], f[2]), seed)?),
            None => Ok(split(data, (default[0], default[1], default[2]), seed)?),
        }
    }
}

/// Loads a JSONL partition and checks its labeling matches `kind`. An
/// unlabeled file with audit labels is fine for the pool.
pub fn load_partition(path: &Path, categories: &CategorySet, kind: DatasetKind) -> Result<Dataset> {
    require_file(path)?;
    let data =
        load_jsonl(path, categories).with_context(|| format!("loading {}", path.display()))?;
    let data = match (data.kind(), kind) {
        (DatasetKind::Labeled, DatasetKind::Test) => data.with_kind(DatasetKind::Test)?,
        (found, wanted) if found == wanted => data,
        _ if data.is_empty() => data.with_kind(kind)?,
        (found, wanted) => {
            return Err(Usage(format!(
                "{} holds {found:?} examples but a {wanted:?} partition is required",
                path.display()
            ))
            .into())
        }
    };
    Ok(data)
}
