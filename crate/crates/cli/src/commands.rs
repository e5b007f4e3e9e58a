use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use semidistill::corpus::{
    infer_categories, load_20newsgroup_roots, load_jsonl, resolve_newsgroup_roots, save_jsonl,
    split, split_paper_counts, synth_generate, CategorySet, Dataset, DatasetKind, NewsgroupOptions,
    SynthConfig,
};
use semidistill::distill::{
    self, distill_student, evaluate_classifier, fine_tune_supervised, init_student,
    load_weak_labels, rethreshold, run_pipeline_strategies, save_weak_labels, student_name,
    train_supervised, weak_label, PipelineRun, PLAIN_STUDENT, TEACHER,
};
use semidistill::eval::compare_models;
use semidistill::losses::LossStrategy;
use semidistill::model::{self, Classifier};
use serde_json::json;

use crate::config::{
    load_partition, require_file, ArchitectureKind, ExperimentConfig, ModelSection, Role,
};
use crate::report::{self, EventLog, ExperimentReport};
use crate::{Aborted, Cli, Command, ModelOverrides, TrainArgs, Usage};

struct Ctx<'a> {
    cli: &'a Cli,
    config: Option<ExperimentConfig>,
}

impl Ctx<'_> {
    fn say(&self, text: impl AsRef<str>) {
        if !self.cli.quiet {
            println!("{}", text.as_ref());
        }
    }

    fn seed(&self) -> u64 {
        self.cli
            .seed
            .or(self.config.as_ref().map(|c| c.seed))
            .unwrap_or(0)
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let dir = self
            .cli
            .out
            .clone()
            .or_else(|| self.config.as_ref().and_then(|c| c.output.clone()))
            .unwrap_or_else(|| PathBuf::from("out"));
        report::ensure_dir(&dir)?;
        Ok(dir)
    }

    fn experiment(&self) -> Result<&ExperimentConfig> {
        self.config
            .as_ref()
            .ok_or_else(|| Usage("this command needs --config <experiment.toml>".into()).into())
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    // `synth` reads its own config format.
    let config = match (&cli.command, &cli.config) {
        (Command::Synth, _) | (_, None) => None,
        (_, Some(path)) => Some(ExperimentConfig::load(path)?),
    };
    let ctx = Ctx { cli, config };
    match &cli.command {
        Command::Synth => synth(&ctx),
        Command::Ingest(a) => ingest(&ctx, a),
        Command::TrainTeacher(a) => train_teacher(&ctx, a),
        Command::WeakLabel(a) => weak_label_cmd(&ctx, a),
        Command::FineTuneStudent(a) => fine_tune_student(&ctx, a),
        Command::Distill(a) => distill_cmd(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Compare(a) => compare(&ctx, a),
        Command::Pipeline(a) => pipeline(&ctx, a),
    }
}

fn synth(ctx: &Ctx) -> Result<()> {
    let mut config = match &ctx.cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Usage(format!("cannot read config {}: {e}", path.display())))?;
            toml::from_str::<SynthConfig>(&text)
                .map_err(|e| Usage(format!("config {}: {e}", path.display())))?
        }
        None => SynthConfig::default(),
    };
    if let Some(seed) = ctx.cli.seed {
        config.seed = seed;
    }
    let data = synth_generate(&config)?;
    let path = ctx.out_dir()?.join("synth.jsonl");
    save_jsonl(&data, &path)?;
    ctx.say(format!(
        "wrote {} examples ({} categories) to {}",
        data.len(),
        data.categories().k(),
        path.display()
    ));
    for (name, n) in data.categories().names().iter().zip(data.label_counts()) {
        ctx.say(format!("  {name:<24} {n}"));
    }
    Ok(())
}

fn parse_split(text: &str) -> Result<Option<[f64; 3]>> {
    if text == "paper" {
        return Ok(None);
    }
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| {
            Usage(format!(
                "--split must be `paper` or three comma-separated fractions, got {text:?}"
            ))
        })?;
    let arr: [f64; 3] = parts.try_into().map_err(|_| {
        Usage(format!(
            "--split needs exactly three fractions, got {text:?}"
        ))
    })?;
    Ok(Some(arr))
}

fn ingest(ctx: &Ctx, args: &crate::IngestArgs) -> Result<()> {
    let seed = ctx.seed();
    let (data, default_split) = match (&args.input, &args.newsgroups) {
        (Some(input), None) => {
            require_file(input)?;
            let categories = infer_categories(input)?;
            (load_jsonl(input, &categories)?, "0.3,0.6,0.1")
        }
        (None, Some(root)) => {
            if !root.is_dir() {
                return Err(Usage(format!("{} is not a directory", root.display())).into());
            }
            let opts = NewsgroupOptions {
                strip_headers: !args.keep_headers,
            };
            let (data, load) = load_20newsgroup_roots(&resolve_newsgroup_roots(root), &opts)?;
            ctx.say(format!(
                "read {} files, skipped {}",
                load.files_read,
                load.skipped.len()
            ));
            (data, "paper")
        }
        _ => {
            return Err(Usage("ingest needs exactly one of --input or --newsgroups".into()).into())
        }
    };
    let requested = if args.paper_counts {
        Some("paper")
    } else {
        args.split.as_deref()
    };
    let parts = match parse_split(requested.unwrap_or(default_split))? {
        None => split_paper_counts(&data, seed)?,
        Some(f) => split(&data, (f[0], f[1], f[2]), seed)?,
    };
    let dir = ctx.out_dir()?;
    for (name, part) in [
        ("labeled", &parts.labeled),
        ("pool", &parts.unlabeled),
        ("test", &parts.test),
    ] {
        let path = dir.join(format!("{name}.jsonl"));
        save_jsonl(part, &path)?;
        ctx.say(format!(
            "{name:<8} {:>7} examples -> {}",
            part.len(),
            path.display()
        ));
    }
    Ok(())
}

fn section_with(base: &ModelSection, o: &ModelOverrides) -> ModelSection {
    let mut s = base.clone();
    if let Some(a) = &o.architecture {
        s.architecture = Some(if a == "linear" {
            ArchitectureKind::Linear
        } else {
            ArchitectureKind::Mlp
        });
    }
    s.hidden = o.hidden.or(s.hidden);
    s.dimension = o.dimension.or(s.dimension);
    s.train.epochs = o.epochs.or(s.train.epochs);
    s.train.batch_size = o.batch_size.or(s.train.batch_size);
    s.train.learning_rate = o.learning_rate.or(s.train.learning_rate);
    s
}

/// Labeled and optional test partitions from flags, else from the config.
fn training_data(ctx: &Ctx, args: &TrainArgs) -> Result<(Dataset, Option<Dataset>)> {
    match &args.labeled {
        Some(labeled) => {
            require_file(labeled)?;
            let categories = infer_categories(labeled)?;
            let train = load_partition(labeled, &categories, DatasetKind::Labeled)?;
            let test = args
                .test
                .as_ref()
                .map(|t| load_partition(t, &categories, DatasetKind::Test))
                .transpose()?;
            Ok((train, test))
        }
        None => {
            let config = ctx
                .config
                .as_ref()
                .ok_or_else(|| Usage("give --labeled or a --config with a data section".into()))?;
            let parts = config.data.partitions(ctx.seed())?;
            Ok((parts.labeled, Some(parts.test)))
        }
    }
}

fn report_evaluation(
    ctx: &Ctx,
    dir: &Path,
    name: &str,
    model: &Classifier,
    test: &Dataset,
) -> Result<()> {
    let evaluation = evaluate_classifier(model, test)?;
    report::write_json(
        &dir.join(format!("{name}_metrics.json")),
        &evaluation.metrics,
    )?;
    report::write_confusion(dir, name, &evaluation.confusion, &model.categories)?;
    ctx.say(report::metrics_summary(
        name,
        model.param_count(),
        &evaluation.metrics,
    ));
    Ok(())
}

fn train_teacher(ctx: &Ctx, args: &TrainArgs) -> Result<()> {
    let (labeled, test) = training_data(ctx, args)?;
    let k = labeled.categories().k();
    let base = ctx
        .config
        .as_ref()
        .map(|c| c.teacher.clone())
        .unwrap_or_default();
    let config = section_with(&base, &args.model).resolve(Role::Teacher, k, ctx.seed());
    config.validate(k)?;
    let (teacher, history) = train_supervised(&labeled, &config)?;
    let dir = ctx.out_dir()?;
    model::save(&teacher, dir.join("teacher.model"))?;
    report::write_json(&dir.join("teacher_history.json"), &history)?;
    ctx.say(format!(
        "teacher: {} parameters, {} epochs (best {:?})",
        teacher.param_count(),
        history.epochs.len(),
        history.best_epoch
    ));
    if let Some(test) = test {
        report_evaluation(ctx, &dir, TEACHER, &teacher, &test)?;
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<Classifier> {
    require_file(path)?;
    model::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn weak_label_cmd(ctx: &Ctx, args: &crate::WeakLabelArgs) -> Result<()> {
    distill::check_threshold(args.threshold)?;
    let teacher = load_model(&args.model)?;
    require_file(&args.pool)?;
    let pool = load_jsonl(&args.pool, &teacher.categories)?;
    let (records, stats) = weak_label(&teacher, &pool, args.threshold)?;
    let dir = ctx.out_dir()?;
    save_weak_labels(&records, &teacher.categories, dir.join("weak_labels.jsonl"))?;
    report::write_json(&dir.join("weak_label_stats.json"), &stats)?;
    ctx.say(report::weak_label_line(&stats));
    Ok(())
}

fn fine_tune_student(ctx: &Ctx, args: &crate::FineTuneArgs) -> Result<()> {
    let (labeled, test) = training_data(ctx, &args.train)?;
    let k = labeled.categories().k();
    let base = ctx
        .config
        .as_ref()
        .map(|c| c.student.clone())
        .unwrap_or_default();
    let config = section_with(&base, &args.train.model).resolve(Role::Student, k, ctx.seed());
    let start = match &args.model {
        Some(path) => load_model(path)?,
        None => init_student(&labeled, &config)?,
    };
    let (student, history) = fine_tune_supervised(start, &labeled, &config.train)?;
    let dir = ctx.out_dir()?;
    model::save(&student, dir.join("student.model"))?;
    report::write_json(&dir.join("student_history.json"), &history)?;
    ctx.say(format!(
        "student: {} parameters, {} epochs (best {:?})",
        student.param_count(),
        history.epochs.len(),
        history.best_epoch
    ));
    if let Some(test) = test {
        report_evaluation(ctx, &dir, PLAIN_STUDENT, &student, &test)?;
    }
    Ok(())
}

fn distill_cmd(ctx: &Ctx, args: &crate::DistillArgs) -> Result<()> {
    let strategy = LossStrategy::with_temperature(args.strategy, args.temperature)?;
    let student = load_model(&args.student)?;
    let categories = student.categories.clone();
    require_file(&args.pool)?;
    let pool = load_jsonl(&args.pool, &categories)?;
    require_file(&args.weak_labels)?;
    let mut records = load_weak_labels(&args.weak_labels, &categories)?;
    if let Some(t) = args.threshold {
        records = rethreshold(&records, t)?;
    }
    let labeled = args
        .include_labeled
        .as_ref()
        .map(|p| load_partition(p, &categories, DatasetKind::Labeled))
        .transpose()?;
    let k = categories.k();
    let base = ctx
        .config
        .as_ref()
        .map(|c| c.student.clone())
        .unwrap_or_default();
    let overrides = ModelOverrides {
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        ..ModelOverrides::default()
    };
    let train = section_with(&base, &overrides)
        .resolve(Role::Student, k, ctx.seed())
        .train;
    let (model, history, size) = distill_student(
        student,
        &pool,
        &records,
        &strategy,
        &train,
        labeled.as_ref(),
    )?;
    let name = student_name(&strategy);
    let dir = ctx.out_dir()?;
    model::save(&model, dir.join(format!("{name}.model")))?;
    report::write_json(&dir.join(format!("{name}_history.json")), &history)?;
    ctx.say(format!(
        "{name}: distilled on {size} weak labels, {} epochs",
        history.epochs.len()
    ));
    if let Some(test) = &args.test {
        let test = load_partition(test, &categories, DatasetKind::Test)?;
        report_evaluation(ctx, &dir, &name, &model, &test)?;
    }
    Ok(())
}

fn evaluate(ctx: &Ctx, args: &crate::EvaluateArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let test = load_partition(&args.test, &model.categories, DatasetKind::Test)?;
    let name = args
        .model
        .file_stem()
        .map_or_else(|| "model".to_owned(), |s| s.to_string_lossy().into_owned());
    report_evaluation(ctx, &ctx.out_dir()?, &name, &model, &test)
}

fn compare(ctx: &Ctx, args: &crate::CompareArgs) -> Result<()> {
    let a = load_model(&args.model_a)?;
    let b = load_model(&args.model_b)?;
    if a.categories != b.categories {
        return Err(Usage(format!(
            "models disagree on categories: {:?} vs {:?}",
            a.categories.names(),
            b.categories.names()
        ))
        .into());
    }
    let test = load_partition(&args.test, &a.categories, DatasetKind::Test)?;
    let golds = test.labels()?;
    let pa = a.predict_texts(test.texts())?;
    let pb = b.predict_texts(test.texts())?;
    let result = compare_models(&pa, &pb, &golds, a.categories.k())?;
    let name = |p: &Path| {
        p.file_stem()
            .map_or_else(String::new, |s| s.to_string_lossy().into_owned())
    };
    let (na, nb) = (name(&args.model_a), name(&args.model_b));
    let dir = ctx.out_dir()?;
    report::write_json(
        &dir.join("comparison.json"),
        &json!({
            "model_a": args.model_a,
            "model_b": args.model_b,
            "test": args.test,
            "comparison": result,
            "p_value_display": result.test.p_value_display(),
        }),
    )?;
    ctx.say(report::comparison_summary(&na, &nb, &result));
    Ok(())
}

fn categories_of(run: &PipelineRun) -> &CategorySet {
    &run.teacher.categories
}

fn pipeline(ctx: &Ctx, args: &crate::PipelineArgs) -> Result<()> {
    let mut config = ctx.experiment()?.clone();
    if let Some(seed) = ctx.cli.seed {
        config.seed = seed;
    }
    // Synthetic data follows the experiment seed; echo the value actually used.
    if let Some(synth) = &mut config.data.synth {
        synth.seed = config.seed;
    }
    if !args.strategies.is_empty() {
        config.strategies = Some(args.strategies.clone());
    }
    if let Some(t) = args.threshold {
        config.distill.threshold = t;
    }
    let dir = ctx.out_dir()?;
    let mut events = EventLog::create(&dir.join(report::EVENTS_FILE))?;
    events.emit("start", json!({ "seed": config.seed }))?;

    let parts = config.data.partitions(config.seed)?;
    let k = parts.labeled.categories().k();
    events.emit(
        "data",
        json!({
            "labeled": parts.labeled.len(),
            "pool": parts.unlabeled.len(),
            "test": parts.test.len(),
            "categories": k,
        }),
    )?;
    let teacher = config.teacher_config(k)?;
    let distill = config.distill_config(k)?;
    let strategies = config.strategies()?;
    let run = run_pipeline_strategies(
        &parts.labeled,
        &parts.unlabeled,
        &parts.test,
        &teacher,
        &distill,
        &strategies,
    )?;
    let r = &run.report;

    events.emit(
        "teacher",
        json!({ "metrics": r.teacher.metrics, "elapsed_s": r.timings.teacher_training_s }),
    )?;
    events.emit(
        "weak_labels",
        json!({ "stats": r.weak_labels, "elapsed_s": r.timings.weak_labeling_s }),
    )?;
    events.emit(
        "plain_student",
        json!({ "metrics": r.plain_student.metrics, "elapsed_s": r.timings.student_fine_tune_s }),
    )?;
    for (d, secs) in r.distilled.iter().zip(&r.timings.distillation_s) {
        events.emit(
            "distilled",
            json!({ "strategy": d.strategy, "metrics": d.model.metrics, "elapsed_s": secs }),
        )?;
    }

    let categories = categories_of(&run);
    model::save(&run.teacher, dir.join("teacher.model"))?;
    model::save(
        &run.plain_student,
        dir.join(format!("{PLAIN_STUDENT}.model")),
    )?;
    for (s, m) in &run.students {
        model::save(m, dir.join(format!("{}.model", student_name(s))))?;
    }
    save_weak_labels(&run.weak_labels, categories, dir.join("weak_labels.jsonl"))?;
    for m in std::iter::once(&r.teacher)
        .chain(std::iter::once(&r.plain_student))
        .chain(r.distilled.iter().map(|d| &d.model))
    {
        report::write_confusion(&dir, &m.name, &m.confusion, categories)?;
    }

    // The echoed config omits the output location so reports from different
    // directories compare equal.
    let echo = ExperimentConfig {
        output: None,
        ..config.clone()
    };
    let body = ExperimentReport {
        format_version: report::REPORT_FORMAT_VERSION,
        seed: config.seed,
        config: &echo,
        pipeline: r,
    };
    report::write_json(&dir.join(report::REPORT_FILE), &body)?;
    let summary = report::summary(r);
    report::write_text(&dir.join(report::SUMMARY_FILE), &summary)?;
    ctx.say(&summary);
    events.emit("finish", json!({ "aborted": r.aborted }))?;
    match &r.aborted {
        Some(reason) => Err(Aborted(reason.clone()).into()),
        None => Ok(()),
    }
}
