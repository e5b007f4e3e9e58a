//! Weak labeling with a teacher, confidence filtering, and student
//! distillation, plus the end-to-end pipeline that ties them together.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{check_disjoint, CategorySet, Dataset, DatasetKind};
use crate::error::{Error, Result};
use crate::eval::{self, ConfusionMatrix, Metrics, StuartMaxwellResult};
use crate::features::{SparseVector, Vectorizer, VectorizerConfig};
use crate::losses::{LossKind, LossStrategy, Target};
use crate::model::{Classifier, LabelDistribution, ModelSpec, Network};
use crate::train::{self, TrainConfig, TrainHistory};

pub const DEFAULT_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakLabelRecord {
    pub id: String,
    pub probs: LabelDistribution,
    pub hard_label: usize,
    pub confidence: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakLabelStats {
    pub threshold: f64,
    pub pool_size: usize,
    pub accepted: usize,
    pub acceptance_rate: f64,
    pub per_category_accepted: Vec<usize>,
    /// Accepted records that carry an audit label.
    pub audited: usize,
    /// Weak-label accuracy on the audited accepted records.
    pub audit_accuracy: Option<f64>,
}

pub fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "threshold must lie in (0, 1], got {threshold}"
        )))
    }
}

/// Labels every pool example with the teacher's distribution; a record is
/// accepted when its confidence is at least `threshold`.
pub fn weak_label(
    teacher: &Classifier,
    pool: &Dataset,
    threshold: f64,
) -> Result<(Vec<WeakLabelRecord>, WeakLabelStats)> {
    check_threshold(threshold)?;
    if pool.kind() != DatasetKind::Unlabeled {
        return Err(Error::InvalidDataset(format!(
            "weak labeling needs an unlabeled pool, got a {:?} dataset",
            pool.kind()
        )));
    }
    check_categories(&teacher.categories, pool.categories())?;
    let dists = teacher.predict_proba_texts(pool.texts())?;
    let records: Vec<WeakLabelRecord> = pool
        .examples()
        .iter()
        .zip(dists)
        .map(|(ex, probs)| {
            let (hard_label, confidence) = probs.argmax();
            WeakLabelRecord {
                id: ex.id.clone(),
                probs,
                hard_label,
                confidence,
                accepted: confidence >= threshold,
            }
        })
        .collect();
    let audit: Vec<Option<usize>> = pool.examples().iter().map(|e| e.audit_label).collect();
    let stats = weak_label_stats(&records, &audit, teacher.categories.k(), threshold);
    Ok((records, stats))
}

/// Statistics over `records`; `audit[i]` is the optional gold label of
/// record `i`.
pub fn weak_label_stats(
    records: &[WeakLabelRecord],
    audit: &[Option<usize>],
    k: usize,
    threshold: f64,
) -> WeakLabelStats {
    let mut per_category_accepted = vec![0; k];
    let (mut audited, mut correct) = (0, 0);
    for (r, gold) in records
        .iter()
        .zip(audit.iter().chain(std::iter::repeat(&None)))
    {
        if !r.accepted {
            continue;
        }
        per_category_accepted[r.hard_label] += 1;
        if let Some(g) = gold {
            audited += 1;
            correct += usize::from(*g == r.hard_label);
        }
    }
    let accepted: usize = per_category_accepted.iter().sum();
    WeakLabelStats {
        threshold,
        pool_size: records.len(),
        accepted,
        acceptance_rate: if records.is_empty() {
            0.0
        } else {
            accepted as f64 / records.len() as f64
        },
        per_category_accepted,
        audited,
        audit_accuracy: (audited > 0).then(|| correct as f64 / audited as f64),
    }
}

/// Re-applies a threshold to existing records.
pub fn rethreshold(records: &[WeakLabelRecord], threshold: f64) -> Result<Vec<WeakLabelRecord>> {
    check_threshold(threshold)?;
    Ok(records
        .iter()
        .map(|r| WeakLabelRecord {
            accepted: r.confidence >= threshold,
            ..r.clone()
        })
        .collect())
}

/// Training targets from accepted records: the teacher argmax for hard-label
/// training, the full teacher distribution otherwise.
pub fn build_distill_set(
    records: &[WeakLabelRecord],
    strategy: &LossStrategy,
) -> Vec<(String, Target)> {
    records
        .iter()
        .filter(|r| r.accepted)
        .map(|r| {
            let target = if strategy.kind.uses_soft_targets() {
                Target::Soft(r.probs.clone())
            } else {
                Target::Hard(r.hard_label)
            };
            (r.id.clone(), target)
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct WeakLabelLine {
    id: String,
    probs: Vec<f64>,
    hard_label: String,
    confidence: f64,
    accepted: bool,
}

pub fn write_weak_labels<W: Write>(
    records: &[WeakLabelRecord],
    categories: &CategorySet,
    out: W,
) -> Result<()> {
    let mut out = BufWriter::new(out);
    for r in records {
        let line = WeakLabelLine {
            id: r.id.clone(),
            probs: r.probs.probs().to_vec(),
            hard_label: categories.name(r.hard_label).to_owned(),
            confidence: r.confidence,
            accepted: r.accepted,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")
            .map_err(|e| Error::io("<weak labels>", e))?;
    }
    out.flush().map_err(|e| Error::io("<weak labels>", e))
}

pub fn save_weak_labels(
    records: &[WeakLabelRecord],
    categories: &CategorySet,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_weak_labels(records, categories, file)
}

pub fn load_weak_labels(
    path: impl AsRef<Path>,
    categories: &CategorySet,
) -> Result<Vec<WeakLabelRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::MalformedLine {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let raw: WeakLabelLine =
            serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let hard_label =
            categories
                .index_of(&raw.hard_label)
                .ok_or_else(|| Error::UnknownLabel {
                    path: path.to_path_buf(),
                    line: n + 1,
                    label: raw.hard_label.clone(),
                })?;
        let probs = LabelDistribution::new(raw.probs).map_err(|e| malformed(e.to_string()))?;
        if probs.k() != categories.k() {
            return Err(malformed(format!(
                "{} probabilities for {} categories",
                probs.k(),
                categories.k()
            )));
        }
        records.push(WeakLabelRecord {
            id: raw.id,
            probs,
            hard_label,
            confidence: raw.confidence,
            accepted: raw.accepted,
        });
    }
    Ok(records)
}

fn check_categories(model: &CategorySet, data: &CategorySet) -> Result<()> {
    if model == data {
        Ok(())
    } else {
        Err(Error::InvalidCategories(format!(
            "model categories {:?} differ from dataset categories {:?}",
            model.names(),
            data.names()
        )))
    }
}

/// A model architecture together with its vectorizer and training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub spec: ModelSpec,
    pub vectorizer: VectorizerConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ModelConfig {
    pub fn teacher(k: usize) -> Self {
        Self {
            spec: ModelSpec::teacher(k),
            vectorizer: VectorizerConfig::with_dimension(VectorizerConfig::TEACHER_DIMENSION),
            train: TrainConfig::default(),
        }
    }

    pub fn student(k: usize) -> Self {
        Self {
            spec: ModelSpec::student(k),
            vectorizer: VectorizerConfig::with_dimension(VectorizerConfig::STUDENT_DIMENSION),
            train: TrainConfig::default(),
        }
    }

    /// Learning rate made explicit.
    pub fn resolved(&self) -> Self {
        Self {
            train: self.train.resolved(&self.spec.architecture),
            ..self.clone()
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        self.spec.validate()?;
        self.vectorizer.validate()?;
        self.train.validate()?;
        if self.spec.k != k {
            return Err(Error::InvalidConfig(format!(
                "model has {} outputs but the data has {k} categories",
                self.spec.k
            )));
        }
        if self.spec.input_dim != self.vectorizer.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input_dim,
                found: self.vectorizer.dimension,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    pub threshold: f64,
    pub strategy: LossStrategy,
    pub student: ModelConfig,
    /// Fine-tune the student on the labeled data before distillation.
    pub pre_fine_tune: bool,
    /// Add the labeled data to the distillation set.
    pub include_labeled: bool,
}

impl DistillConfig {
    pub fn new(k: usize, strategy: LossStrategy) -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            strategy,
            student: ModelConfig::student(k),
            pre_fine_tune: true,
            include_labeled: false,
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        check_threshold(self.threshold)?;
        self.strategy.validate()?;
        self.student.validate(k)
    }
}

/// Hard-label training pairs for a labeled dataset.
pub fn labeled_examples(
    vectorizer: &Vectorizer,
    data: &Dataset,
) -> Result<Vec<(SparseVector, Target)>> {
    let xs = vectorizer.transform_all(data.texts())?;
    Ok(xs
        .into_iter()
        .zip(data.labels()?)
        .map(|(x, y)| (x, Target::Hard(y)))
        .collect())
}

/// Fits a vectorizer on the labeled texts and trains a model from scratch on
/// the gold labels.
pub fn train_supervised(
    labeled: &Dataset,
    config: &ModelConfig,
) -> Result<(Classifier, TrainHistory)> {
    config.validate(labeled.categories().k())?;
    let vectorizer = Vectorizer::fit(config.vectorizer.clone(), labeled.texts())?;
    let data = labeled_examples(&vectorizer, labeled)?;
    let (network, history) = train::train(
        &config.spec,
        &data,
        &LossStrategy::new(LossKind::HardCe),
        &config.train,
    )?;
    Ok((
        Classifier::new(network, vectorizer, labeled.categories().clone())?,
        history,
    ))
}

/// Untrained student whose vectorizer is fitted on the labeled texts.
pub fn init_student(labeled: &Dataset, config: &ModelConfig) -> Result<Classifier> {
    config.validate(labeled.categories().k())?;
    let vectorizer = Vectorizer::fit(config.vectorizer.clone(), labeled.texts())?;
    Classifier::new(
        Network::init(&config.spec)?,
        vectorizer,
        labeled.categories().clone(),
    )
}

/// Continues training `model` on gold labels.
pub fn fine_tune_supervised(
    model: Classifier,
    labeled: &Dataset,
    config: &TrainConfig,
) -> Result<(Classifier, TrainHistory)> {
    check_categories(&model.categories, labeled.categories())?;
    let data = labeled_examples(&model.vectorizer, labeled)?;
    train::fine_tune_classifier(model, &data, &LossStrategy::new(LossKind::HardCe), config)
}

/// Trains `student` on the accepted weak labels of `pool` (and optionally on
/// `labeled`). Returns the model, its history and the distillation set size.
pub fn distill_student(
    student: Classifier,
    pool: &Dataset,
    records: &[WeakLabelRecord],
    strategy: &LossStrategy,
    config: &TrainConfig,
    labeled: Option<&Dataset>,
) -> Result<(Classifier, TrainHistory, usize)> {
    check_categories(&student.categories, pool.categories())?;
    let set = build_distill_set(records, strategy);
    let index: HashMap<&str, usize> = pool.ids().enumerate().map(|(i, id)| (id, i)).collect();
    let texts: Vec<&str> = set
        .iter()
        .map(|(id, _)| {
            index
                .get(id.as_str())
                .map(|&i| pool.examples()[i].text.as_str())
                .ok_or_else(|| {
                    Error::InvalidDataset(format!("weak label for unknown pool id {id:?}"))
                })
        })
        .collect::<Result<_>>()?;
    let xs = student.vectorizer.transform_all(texts)?;
    let mut data: Vec<(SparseVector, Target)> = xs
        .into_iter()
        .zip(set.into_iter().map(|(_, t)| t))
        .collect();
    let distill_size = data.len();
    if let Some(labeled) = labeled {
        check_categories(&student.categories, labeled.categories())?;
        let k = student.categories.k();
        for (x, t) in labeled_examples(&student.vectorizer, labeled)? {
            let t = match t {
                Target::Hard(y) if strategy.kind.uses_soft_targets() => {
                    Target::Soft(LabelDistribution::one_hot(k, y))
                }
                other => other,
            };
            data.push((x, t));
        }
    }
    if data.is_empty() {
        return Err(Error::InvalidDataset("distillation set is empty".into()));
    }
    let (model, history) = train::fine_tune_classifier(student, &data, strategy, config)?;
    Ok((model, history, distill_size))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub confusion: ConfusionMatrix,
    pub predictions: Vec<usize>,
}

pub fn evaluate_classifier(model: &Classifier, test: &Dataset) -> Result<Evaluation> {
    check_categories(&model.categories, test.categories())?;
    let predictions = model.predict_texts(test.texts())?;
    let golds = test.labels()?;
    let confusion = eval::confusion(&predictions, &golds, model.categories.k())?;
    Ok(Evaluation {
        metrics: eval::metrics(&confusion)?,
        confusion,
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionStats {
    pub size: usize,
    pub per_category: Vec<usize>,
}

impl PartitionStats {
    pub fn of(data: &Dataset) -> Self {
        Self {
            size: data.len(),
            per_category: data.label_counts(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub categories: CategorySet,
    pub labeled: PartitionStats,
    pub pool: PartitionStats,
    pub test: PartitionStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub name: String,
    pub spec: ModelSpec,
    pub param_count: usize,
    pub metrics: Metrics,
    pub confusion: ConfusionMatrix,
    /// Histories of the training runs that produced this model, in order.
    pub training: Vec<TrainHistory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistilledReport {
    pub strategy: LossStrategy,
    pub distill_set_size: usize,
    pub training_set_size: usize,
    pub model: ModelReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub model_a: String,
    pub model_b: String,
    pub test: StuartMaxwellResult,
    /// Human-readable p-value.
    pub p_value_display: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifests {
    pub labeled: Vec<String>,
    pub pool: Vec<String>,
    pub test: Vec<String>,
    /// Pool ids whose weak labels entered distillation.
    pub distill: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Timings {
    pub teacher_training_s: f64,
    pub weak_labeling_s: f64,
    pub student_fine_tune_s: f64,
    pub distillation_s: Vec<f64>,
    pub teacher_inference_per_example_s: f64,
    pub student_inference_per_example_s: f64,
    /// Teacher over student per-example inference time.
    pub inference_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub teacher_config: ModelConfig,
    pub distill_config: DistillConfig,
    pub strategies: Vec<LossStrategy>,
    pub dataset: DatasetStats,
    pub teacher: ModelReport,
    pub weak_labels: WeakLabelStats,
    pub plain_student: ModelReport,
    pub distilled: Vec<DistilledReport>,
    pub comparisons: Vec<ComparisonReport>,
    /// Why distillation stopped early, if it did. Steps up to the plain
    /// student are always reported.
    pub aborted: Option<String>,
    pub manifests: Manifests,
    pub timings: Timings,
}

impl PipelineReport {
    pub fn is_aborted(&self) -> bool {
        self.aborted.is_some()
    }

    pub fn distilled(&self, kind: LossKind) -> Option<&DistilledReport> {
        self.distilled.iter().find(|d| d.strategy.kind == kind)
    }

    pub fn comparison(&self, a: &str, b: &str) -> Option<&ComparisonReport> {
        self.comparisons
            .iter()
            .find(|c| c.model_a == a && c.model_b == b)
    }
}

/// Everything the pipeline produced.
pub struct PipelineRun {
    pub report: PipelineReport,
    pub teacher: Classifier,
    pub weak_labels: Vec<WeakLabelRecord>,
    pub plain_student: Classifier,
    pub students: Vec<(LossStrategy, Classifier)>,
}

pub const TEACHER: &str = "teacher";
pub const PLAIN_STUDENT: &str = "plain-student";

pub fn student_name(strategy: &LossStrategy) -> String {
    format!("student-{}", strategy.kind.name())
}

fn model_report(
    name: &str,
    model: &Classifier,
    evaluation: &Evaluation,
    training: Vec<TrainHistory>,
) -> ModelReport {
    ModelReport {
        name: name.to_owned(),
        spec: model.spec().clone(),
        param_count: model.param_count(),
        metrics: evaluation.metrics.clone(),
        confusion: evaluation.confusion.clone(),
        training,
    }
}

fn comparison(
    a: (&str, &Evaluation),
    b: (&str, &Evaluation),
    golds: &[usize],
    k: usize,
) -> Result<ComparisonReport> {
    let c = eval::compare_models(&a.1.predictions, &b.1.predictions, golds, k)?;
    Ok(ComparisonReport {
        model_a: a.0.to_owned(),
        model_b: b.0.to_owned(),
        p_value_display: c.test.p_value_display(),
        test: c.test,
    })
}

fn per_example_seconds(model: &Classifier, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Ok(0.0);
    }
    let start = Instant::now();
    let xs = model.vectorizer.transform_all(test.texts())?;
    let _: Vec<usize> = xs
        .par_iter()
        .map(|x| model.network.predict(x).map(|p| p.0))
        .collect::<Result<_>>()?;
    Ok(start.elapsed().as_secs_f64() / test.len() as f64)
}

/// Runs the pipeline with a single distillation strategy.
pub fn run_pipeline(
    labeled: &Dataset,
    pool: &Dataset,
    test: &Dataset,
    teacher: &ModelConfig,
    distill: &DistillConfig,
) -> Result<PipelineRun> {
    run_pipeline_strategies(labeled, pool, test, teacher, distill, &[distill.strategy])
}

/// Trains the teacher and weak-labels the pool once, then distills one
/// student per strategy, each starting from the same plain student.
pub fn run_pipeline_strategies(
    labeled: &Dataset,
    pool: &Dataset,
    test: &Dataset,
    teacher_config: &ModelConfig,
    distill: &DistillConfig,
    strategies: &[LossStrategy],
) -> Result<PipelineRun> {
    let categories = labeled.categories();
    let k = categories.k();
    for part in [pool, test] {
        check_categories(categories, part.categories())?;
    }
    for (part, kind) in [
        (labeled, DatasetKind::Labeled),
        (pool, DatasetKind::Unlabeled),
        (test, DatasetKind::Test),
    ] {
        if part.kind() != kind {
            return Err(Error::InvalidDataset(format!(
                "expected a {kind:?} partition, got {:?}",
                part.kind()
            )));
        }
    }
    if labeled.is_empty() || test.is_empty() {
        return Err(Error::InvalidDataset(
            "labeled and test partitions must be nonempty".into(),
        ));
    }
    check_disjoint(&[labeled, pool, test])?;
    teacher_config.validate(k)?;
    distill.validate(k)?;
    for s in strategies {
        s.validate()?;
    }
    let golds = test.labels()?;
    let mut timings = Timings::default();

    // (1) teacher on the labeled partition, (2) its test metrics.
    let start = Instant::now();
    let (teacher, teacher_history) = train_supervised(labeled, teacher_config)?;
    timings.teacher_training_s = start.elapsed().as_secs_f64();
    log::info!("teacher trained in {:.1}s", timings.teacher_training_s);
    let teacher_eval = evaluate_classifier(&teacher, test)?;

    // (3) weak labels.
    let start = Instant::now();
    let (records, weak_stats) = weak_label(&teacher, pool, distill.threshold)?;
    timings.weak_labeling_s = start.elapsed().as_secs_f64();
    log::info!(
        "weak labels: {} of {} accepted at {}",
        weak_stats.accepted,
        weak_stats.pool_size,
        distill.threshold
    );

    // (4) plain student.
    let start = Instant::now();
    let init = init_student(labeled, &distill.student)?;
    let (plain, plain_training) = if distill.pre_fine_tune {
        let (m, h) = fine_tune_supervised(init, labeled, &distill.student.train)?;
        (m, vec![h])
    } else {
        (init, Vec::new())
    };
    timings.student_fine_tune_s = start.elapsed().as_secs_f64();
    let plain_eval = evaluate_classifier(&plain, test)?;

    timings.teacher_inference_per_example_s = per_example_seconds(&teacher, test)?;
    timings.student_inference_per_example_s = per_example_seconds(&plain, test)?;
    timings.inference_ratio = if timings.student_inference_per_example_s > 0.0 {
        timings.teacher_inference_per_example_s / timings.student_inference_per_example_s
    } else {
        0.0
    };

    let mut comparisons = vec![comparison(
        (TEACHER, &teacher_eval),
        (PLAIN_STUDENT, &plain_eval),
        &golds,
        k,
    )?];
    let distill_ids: Vec<String> = records
        .iter()
        .filter(|r| r.accepted)
        .map(|r| r.id.clone())
        .collect();

    // (5) distillation, (6) evaluation, (7) comparisons.
    let mut distilled = Vec::new();
    let mut students = Vec::new();
    let mut aborted = None;
    if distill_ids.is_empty() {
        aborted = Some(format!(
            "empty distill set: no weak label reached confidence {}",
            distill.threshold
        ));
    } else {
        let extra = distill.include_labeled.then_some(labeled);
        for strategy in strategies {
            let start = Instant::now();
            let outcome = distill_student(
                plain.clone(),
                pool,
                &records,
                strategy,
                &distill.student.train,
                extra,
            );
            timings.distillation_s.push(start.elapsed().as_secs_f64());
            let (student, history, distill_size) = match outcome {
                Ok(v) => v,
                Err(e @ Error::NonFiniteLoss { .. }) => {
                    aborted = Some(format!("distillation with {} failed: {e}", strategy.kind));
                    break;
                }
                Err(e) => return Err(e),
            };
            let name = student_name(strategy);
            let student_eval = evaluate_classifier(&student, test)?;
            comparisons.push(comparison(
                (PLAIN_STUDENT, &plain_eval),
                (&name, &student_eval),
                &golds,
                k,
            )?);
            let mut training = plain_training.clone();
            training.push(history.clone());
            distilled.push(DistilledReport {
                strategy: *strategy,
                distill_set_size: distill_size,
                training_set_size: history.train_size + history.validation_size,
                model: model_report(&name, &student, &student_eval, training),
            });
            students.push((*strategy, student));
        }
    }

    let report = PipelineReport {
        teacher_config: teacher_config.resolved(),
        distill_config: DistillConfig {
            student: distill.student.resolved(),
            ..distill.clone()
        },
        strategies: strategies.to_vec(),
        dataset: DatasetStats {
            categories: categories.clone(),
            labeled: PartitionStats::of(labeled),
            pool: PartitionStats::of(pool),
            test: PartitionStats::of(test),
        },
        teacher: model_report(TEACHER, &teacher, &teacher_eval, vec![teacher_history]),
        weak_labels: weak_stats,
        plain_student: model_report(PLAIN_STUDENT, &plain, &plain_eval, plain_training),
        distilled,
        comparisons,
        aborted,
        manifests: Manifests {
            labeled: labeled.ids().map(str::to_owned).collect(),
            pool: pool.ids().map(str::to_owned).collect(),
            test: test.ids().map(str::to_owned).collect(),
            distill: distill_ids,
        },
        timings,
    };
    Ok(PipelineRun {
        report,
        teacher,
        weak_labels: records,
        plain_student: plain,
        students,
    })
}
