//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Criteria that need the 20 Newsgroups corpus read it from the directory in
//! `SEMIDISTILL_20NG` and fail when it is not set. The process exits 0 so the
//! workspace test run stays green; set `SEMIDISTILL_ACCEPTANCE_STRICT=1` to
//! exit 1 on any failure.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semidistill::corpus::{
    load_20newsgroup_roots, resolve_newsgroup_roots, split, split_paper_counts, synth_generate,
    NewsgroupOptions, Split, SynthConfig,
};
use semidistill::distill::{
    evaluate_classifier, rethreshold, run_pipeline_strategies, student_name, train_supervised,
    DistillConfig, ModelConfig, PipelineRun, PLAIN_STUDENT,
};
use semidistill::eval::{
    chi_square_sf, format_p_value, stuart_maxwell, stuart_maxwell_dropping, PairedTable,
    SquareTable,
};
use semidistill::losses::{
    ce_hard, ce_soft, entropy, grad_logits, kl_div, LossKind, LossStrategy, Target,
};
use semidistill::model::{LabelDistribution, ModelSpec};
use semidistill::train::gradient_audit;
use serde_json::Value;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        pass,
        detail: detail.into(),
    })
}

fn random_distribution(rng: &mut ChaCha8Rng, k: usize) -> LabelDistribution {
    let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
    let sum: f64 = raw.iter().sum();
    LabelDistribution::new(raw.iter().map(|r| r / sum).collect()).unwrap()
}

fn loss_exactness() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for k in [2usize, 3, 10, 20] {
        let u = LabelDistribution::uniform(k);
        for y in 0..k {
            worst = worst.max((ce_hard(&u, y)? - (k as f64).ln()).abs());
        }
        worst = worst.max((ce_soft(&u, &u)? - (k as f64).ln()).abs());
        worst = worst.max(kl_div(&u, &u)?.abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let k = rng.random_range(2..=20);
        let p = random_distribution(&mut rng, k);
        let q = random_distribution(&mut rng, k);
        worst = worst.max(kl_div(&p, &p)?.abs());
        worst = worst.max((kl_div(&q, &p)? - (ce_soft(&p, &q)? - entropy(&q))).abs());
        let y = rng.random_range(0..k);
        worst =
            worst.max((ce_soft(&p, &LabelDistribution::one_hot(k, y))? - ce_hard(&p, y)?).abs());
    }
    outcome(
        worst <= 1e-12,
        format!("max deviation {worst:.2e} (tolerance 1e-12)"),
    )
}

fn gradient_checks() -> Result<Outcome> {
    let mut notes = Vec::new();
    let mut pass = true;
    for (name, spec, bound) in [
        ("linear", ModelSpec::linear(1 << 12, 20), 1e-6),
        ("mlp", ModelSpec::mlp(1 << 12, 32, 20), 1e-5),
    ] {
        for kind in LossKind::ALL {
            let audit = gradient_audit(&spec, &LossStrategy::new(kind), 100, 7)?;
            pass &= audit.max_relative_error <= bound;
            notes.push(format!(
                "{name}/{} {:.1e}",
                kind.name(),
                audit.max_relative_error
            ));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut gap: f64 = 0.0;
    for _ in 0..1000 {
        let k = rng.random_range(2..=20);
        let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-8.0..8.0)).collect();
        let target = Target::Soft(random_distribution(&mut rng, k));
        for t in [1.0, 2.0, 5.0] {
            let ce = grad_logits(
                &LossStrategy::with_temperature(LossKind::SoftCe, t)?,
                &logits,
                &target,
            )?;
            let kl = grad_logits(
                &LossStrategy::with_temperature(LossKind::SoftKl, t)?,
                &logits,
                &target,
            )?;
            gap = ce
                .iter()
                .zip(&kl)
                .fold(gap, |m, (a, b)| m.max((a - b).abs()));
        }
    }
    pass &= gap <= 1e-12;
    outcome(
        pass,
        format!(
            "max relative error {} (bounds mlp 1e-5, linear 1e-6); soft-ce vs soft-kl gap {gap:.1e}",
            notes.join(", ")
        ),
    )
}

fn paired(rows: Vec<Vec<u64>>) -> PairedTable {
    PairedTable(SquareTable::from_rows(&rows).unwrap())
}

/// High-precision reference tail probabilities `(x, dof, p)`.
const CHI_SQUARE_ORACLE: [(f64, u32, f64); 28] = [
    (0.5, 1, 0.479_500_122_186_953_5),
    (1.0, 1, 0.317_310_507_862_914_1),
    (3.84, 1, 0.050_043_521_248_705_103),
    (10.0, 1, 0.001_565_402_258_002_549_7),
    (25.0, 1, 5.733_031_437_583_878e-7),
    (0.1, 2, 0.951_229_424_500_714),
    (5.0, 3, 0.171_797_144_296_733_14),
    (7.0, 4, 0.135_888_225_400_433_25),
    (2.0, 5, 0.849_145_036_084_609_6),
    (15.0, 7, 0.035_999_404_763_428_78),
    (16.919, 9, 0.049_999_640_848_349_79),
    (30.0, 9, 0.000_438_721_770_979_479_5),
    (60.0, 9, 1.340_678_048_395_961_3e-9),
    (4.0, 10, 0.947_346_982_656_288_8),
    (9.0, 19, 0.973_479_395_146_533_2),
    (30.14, 19, 0.050_043_527_691_035_98),
    (50.0, 19, 0.000_131_061_164_793_162_95),
    (80.0, 19, 1.859_625_502_985_850_8e-9),
    (100.0, 30, 1.856_802_336_510_238_6e-9),
    (40.0, 50, 0.843_227_378_173_762_3),
    (0.001, 3, 0.999_991_592_080_941_9),
    (70.0, 20, 1.821_370_039_572_106_2e-7),
    (48.0, 1, 4.262_191_597_843_645e-12),
    (60.0, 4, 2.900_863_120_340_454e-12),
    (75.0, 9, 1.580_297_586_787_334e-12),
    (90.0, 19, 3.317_163_764_139_378e-11),
    (130.0, 40, 1.894_985_769_855_435_2e-11),
    (200.0, 100, 1.178_450_072_097_942_2e-8),
];

#[allow(clippy::needless_range_loop)]
fn stuart_maxwell_checks() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut notes = Vec::new();

    let mut symmetric: f64 = 0.0;
    for _ in 0..100 {
        let k = rng.random_range(2..=6);
        let mut rows = vec![vec![0u64; k]; k];
        for i in 0..k {
            rows[i][i] = rng.random_range(0..50);
            for j in i + 1..k {
                let v = rng.random_range(1..30);
                rows[i][j] = v;
                rows[j][i] = v;
            }
        }
        symmetric = symmetric.max(stuart_maxwell(&paired(rows))?.statistic.abs());
    }
    let symmetric_ok = symmetric == 0.0;
    notes.push(format!("symmetric max statistic {symmetric:.1e}"));

    let mut mcnemar: f64 = 0.0;
    let mut tables = 0;
    for a in [0u64, 7, 40] {
        for d in [0u64, 3, 25] {
            for b in 0..=40u64 {
                for c in 0..=40u64 {
                    if b + c == 0 {
                        continue;
                    }
                    let r = stuart_maxwell(&paired(vec![vec![a, b], vec![c, d]]))?;
                    let expected = (b as f64 - c as f64).powi(2) / (b + c) as f64;
                    mcnemar = mcnemar.max((r.statistic - expected).abs());
                    tables += 1;
                }
            }
        }
    }
    let mcnemar_ok = mcnemar <= 1e-12;
    notes.push(format!(
        "McNemar on {tables} tables max error {mcnemar:.1e}"
    ));

    let mut invariance: f64 = 0.0;
    for _ in 0..100 {
        let k = rng.random_range(3..=4);
        let rows: Vec<Vec<u64>> = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| {
                        if i == j {
                            rng.random_range(0..60)
                        } else {
                            rng.random_range(1..25)
                        }
                    })
                    .collect()
            })
            .collect();
        let t = paired(rows);
        let base = stuart_maxwell(&t)?.statistic;
        for drop in 0..k {
            let s = stuart_maxwell_dropping(&t, Some(drop))?.statistic;
            invariance = invariance.max((s - base).abs() / base.abs().max(1.0));
        }
    }
    let invariance_ok = invariance <= 1e-9;
    notes.push(format!("drop-category spread {invariance:.1e}"));

    let mut oracle: f64 = 0.0;
    for (x, dof, p) in CHI_SQUARE_ORACLE {
        oracle = oracle.max((chi_square_sf(x, dof)?.p_value - p).abs() / p);
    }
    let oracle_ok = oracle <= 1e-10;
    notes.push(format!("oracle max relative error {oracle:.1e}"));

    let tail = chi_square_sf(2185.71, 9)?;
    let display = format_p_value(Some(tail.p_value));
    let floor_ok = display == "< 2.2e-16";
    notes.push(format!(
        "p(2185.71, 9) {display} (ln p {:.1})",
        tail.ln_p_value
    ));

    outcome(
        symmetric_ok && mcnemar_ok && invariance_ok && oracle_ok && floor_ok,
        notes.join("; "),
    )
}

fn newsgroup_split() -> Result<Option<Split>> {
    let Some(root) = std::env::var_os("SEMIDISTILL_20NG") else {
        return Ok(None);
    };
    let opts = NewsgroupOptions {
        strip_headers: true,
    };
    let (data, _) = load_20newsgroup_roots(&resolve_newsgroup_roots(&root), &opts)
        .with_context(|| format!("loading 20 Newsgroups from {}", Path::new(&root).display()))?;
    Ok(Some(split_paper_counts(&data, 0)?))
}

fn default_pipeline(parts: &Split) -> Result<PipelineRun> {
    let k = parts.labeled.categories().k();
    let strategies = LossKind::ALL.map(LossStrategy::new);
    let mut teacher = ModelConfig::teacher(k);
    teacher.spec.seed = 1;
    teacher.train.seed = 2;
    let mut distill = DistillConfig::new(k, LossStrategy::new(LossKind::SoftKl));
    distill.student.spec.seed = 3;
    distill.student.train.seed = 4;
    Ok(run_pipeline_strategies(
        &parts.labeled,
        &parts.unlabeled,
        &parts.test,
        &teacher,
        &distill,
        &strategies,
    )?)
}

struct Directional {
    pass: bool,
    detail: String,
}

fn directional(run: &PipelineRun) -> Directional {
    let r = &run.report;
    let f1 = |name: &str| {
        r.distilled
            .iter()
            .find(|d| d.model.name == name)
            .map(|d| d.model.metrics.macro_f1)
    };
    let teacher = r.teacher.metrics.macro_f1;
    let plain = r.plain_student.metrics.macro_f1;
    let kl = f1(&student_name(&LossStrategy::new(LossKind::SoftKl)));
    let hard = f1(&student_name(&LossStrategy::new(LossKind::HardCe)));
    let p = r
        .comparison(
            PLAIN_STUDENT,
            &student_name(&LossStrategy::new(LossKind::SoftKl)),
        )
        .and_then(|c| c.test.p_value);
    let a = teacher > plain;
    let b = kl.is_some_and(|v| v >= plain + 0.02);
    let c = hard.is_some_and(|v| v >= plain);
    let d = p.is_some_and(|p| p < 0.05);
    let show = |v: Option<f64>| v.map_or("-".to_owned(), |v| format!("{v:.4}"));
    Directional {
        pass: a && b && c && d && r.aborted.is_none(),
        detail: format!(
            "teacher {teacher:.4} plain {plain:.4} soft-kl {} hard-ce {}; (a) {a} (b) {b} (c) {c} (d) {d} p {}",
            show(kl),
            show(hard),
            format_p_value(p),
        ),
    }
}

fn weak_label_mechanics(run: &PipelineRun) -> Directional {
    let stats = &run.report.weak_labels;
    let rate_ok = stats.acceptance_rate > 0.0 && stats.acceptance_rate < 1.0;
    let at_99 = rethreshold(&run.weak_labels, 0.99)
        .map_or(usize::MAX, |r| r.iter().filter(|w| w.accepted).count());
    let monotone = at_99 <= stats.accepted;
    let teacher_acc = run.report.teacher.metrics.accuracy;
    let audit_ok = stats.audit_accuracy.is_some_and(|a| a > teacher_acc);
    Directional {
        pass: rate_ok && monotone && audit_ok,
        detail: format!(
            "accepted {} of {} ({:.1}%), at 0.99 {at_99}, audit accuracy {} vs teacher accuracy {teacher_acc:.4}",
            stats.accepted,
            stats.pool_size,
            100.0 * stats.acceptance_rate,
            stats.audit_accuracy.map_or("-".to_owned(), |a| format!("{a:.4}")),
        ),
    }
}

/// The criterion 4 and 5 checks on the noisy synthetic corpus. Informational
/// only: it does not stand in for the newsgroup criteria.
fn synthetic_stand_in() {
    let start = Instant::now();
    let config = SynthConfig {
        examples_per_category: 1000,
        ..SynthConfig::default()
    };
    let run = synth_generate(&config)
        .and_then(|data| split(&data, (0.3, 0.6, 0.1), 0))
        .map_err(anyhow::Error::from)
        .and_then(|parts| default_pipeline(&parts));
    match run {
        Ok(run) => {
            let elapsed = start.elapsed();
            let dir = directional(&run);
            let wl = weak_label_mechanics(&run);
            println!(
                "INFO 4 synthetic stand-in ({}): {} [{elapsed:.2?}]",
                verdict(dir.pass),
                dir.detail
            );
            println!(
                "INFO 5 synthetic stand-in ({}): {}",
                verdict(wl.pass),
                wl.detail
            );
        }
        Err(e) => println!("INFO 4/5 synthetic stand-in failed: {e:#}"),
    }
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "would pass"
    } else {
        "would fail"
    }
}

fn capacity() -> Result<Outcome> {
    let teacher = ModelSpec::teacher(20).param_count();
    let student = ModelSpec::student(20).param_count();
    let ratio = teacher as f64 / student as f64;
    outcome(
        ratio >= 33.0,
        format!("teacher {teacher} / student {student} parameters = {ratio:.2} (needs >= 33)"),
    )
}

const DETERMINISM_CONFIG: &str = r#"
seed = 11

[data]
source = "synth"
synth = { examples_per_category = 200 }
split = [0.3, 0.6, 0.1]

[teacher]
dimension = 65536
hidden = 128
train = { batch_size = 16 }

[student]
train = { batch_size = 16 }
"#;

fn determinism() -> Result<Outcome> {
    let dir = tempfile::tempdir()?;
    let d = dir.path();
    fs::write(d.join("exp.toml"), DETERMINISM_CONFIG)?;
    for out in ["first", "second"] {
        let status = Command::new(env!("CARGO_BIN_EXE_semidistill"))
            .current_dir(d)
            .args(["--config", "exp.toml", "--out", out, "--quiet", "pipeline"])
            .status()?;
        ensure!(status.success(), "pipeline run {out} exited with {status}");
    }
    let report = |out: &str| -> Result<Value> {
        let mut v: Value =
            serde_json::from_str(&fs::read_to_string(d.join(out).join("report.json"))?)?;
        v["pipeline"]
            .as_object_mut()
            .context("pipeline object")?
            .remove("timings");
        Ok(v)
    };
    let same_report = report("first")? == report("second")?;
    let mut models = 0;
    let mut differing = Vec::new();
    for entry in fs::read_dir(d.join("first"))? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if name.ends_with(".model") || name.ends_with(".jsonl") && name != "events.jsonl" {
            models += usize::from(name.ends_with(".model"));
            if fs::read(d.join("first").join(&*name))? != fs::read(d.join("second").join(&*name))? {
                differing.push(name.into_owned());
            }
        }
    }
    outcome(
        same_report && differing.is_empty() && models == 5,
        format!("report identical: {same_report}; {models} model files, differing artifacts {differing:?}"),
    )
}

fn synthetic_teacher_accuracy(config: &SynthConfig, dimension: usize) -> Result<f64> {
    let data = synth_generate(config)?;
    let parts = split(&data, (0.6, 0.2, 0.2), 1)?;
    let mut teacher = ModelConfig::teacher(data.categories().k());
    teacher.vectorizer.dimension = dimension;
    teacher.spec.input_dim = dimension;
    teacher.spec.seed = 1;
    teacher.train.seed = 2;
    let (model, _) = train_supervised(&parts.labeled, &teacher)?;
    Ok(evaluate_classifier(&model, &parts.test)?.metrics.accuracy)
}

fn synthetic_end_to_end(noisy: &mut Option<f64>) -> Result<Outcome> {
    let mut notes = Vec::new();
    let mut pass = true;
    for (name, config, bound) in [
        ("separable", SynthConfig::separable(), 0.99),
        ("noisy", SynthConfig::default(), 0.85),
    ] {
        let accuracy = synthetic_teacher_accuracy(&config, 1 << 18)?;
        pass &= accuracy >= bound;
        if name == "noisy" {
            *noisy = Some(accuracy);
        }
        notes.push(format!(
            "{name} teacher accuracy {accuracy:.4} (needs >= {bound})"
        ));
    }
    outcome(pass, notes.join("; "))
}

/// Accuracy lost to hash collisions when the teacher's input shrinks from
/// 2^18 to 2^14. Reported only.
fn collision_smoke(full: Option<f64>) {
    match (full, synthetic_teacher_accuracy(&SynthConfig::default(), 1 << 14)) {
        (Some(full), Ok(small)) => println!(
            "INFO hashing collisions: noisy teacher accuracy {full:.4} at 2^18 inputs, {small:.4} at 2^14 (delta {:+.4})",
            small - full
        ),
        (None, _) => println!("INFO hashing collisions: skipped, no 2^18 accuracy"),
        (_, Err(e)) => println!("INFO hashing collisions: {e:#}"),
    }
}

struct Harness {
    failed: usize,
    passed: usize,
}

impl Harness {
    fn report(
        &mut self,
        id: &str,
        title: &str,
        budget: Option<Duration>,
        check: impl FnOnce() -> Result<Outcome>,
    ) {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let (mut pass, mut detail) = match result {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e:#}")),
        };
        if let Some(budget) = budget {
            if elapsed > budget {
                pass = false;
                detail.push_str(&format!("; over the {budget:?} budget"));
            }
        }
        self.record(id, title, pass, &format!("{detail} [{elapsed:.2?}]"));
    }

    fn record(&mut self, id: &str, title: &str, pass: bool, detail: &str) {
        if pass {
            self.passed += 1;
        } else {
            self.failed += 1;
        }
        println!(
            "{} {id} {title}: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
    }
}

fn main() {
    // libtest flags such as --nocapture are accepted and ignored.
    let mut h = Harness {
        failed: 0,
        passed: 0,
    };
    h.report(
        "1",
        "loss exactness",
        Some(Duration::from_secs(1)),
        loss_exactness,
    );
    h.report(
        "2",
        "gradient audit",
        Some(Duration::from_secs(30)),
        gradient_checks,
    );
    h.report(
        "3",
        "Stuart-Maxwell correctness",
        Some(Duration::from_secs(10)),
        stuart_maxwell_checks,
    );

    let start = Instant::now();
    match newsgroup_split() {
        Ok(Some(parts)) => match default_pipeline(&parts) {
            Ok(run) => {
                let elapsed = start.elapsed();
                let dir = directional(&run);
                let budget = Duration::from_secs(15 * 60);
                let within = elapsed <= budget;
                let detail = format!("{}; runtime {elapsed:.0?} (budget {budget:?})", dir.detail);
                h.record(
                    "4",
                    "directional reproduction on 20 Newsgroups",
                    dir.pass && within,
                    &detail,
                );
                let wl = weak_label_mechanics(&run);
                h.record(
                    "5",
                    "weak-label mechanics on 20 Newsgroups",
                    wl.pass,
                    &wl.detail,
                );
            }
            Err(e) => {
                h.record(
                    "4",
                    "directional reproduction on 20 Newsgroups",
                    false,
                    &format!("error: {e:#}"),
                );
                h.record(
                    "5",
                    "weak-label mechanics on 20 Newsgroups",
                    false,
                    &format!("error: {e:#}"),
                );
            }
        },
        Ok(None) => {
            let why = "corpus not available (set SEMIDISTILL_20NG to the 20news directory)";
            h.record("4", "directional reproduction on 20 Newsgroups", false, why);
            h.record("5", "weak-label mechanics on 20 Newsgroups", false, why);
            synthetic_stand_in();
        }
        Err(e) => {
            h.record(
                "4",
                "directional reproduction on 20 Newsgroups",
                false,
                &format!("error: {e:#}"),
            );
            h.record(
                "5",
                "weak-label mechanics on 20 Newsgroups",
                false,
                &format!("error: {e:#}"),
            );
        }
    }

    h.report("6", "capacity ratio", None, capacity);
    h.report("7", "pipeline determinism", None, determinism);
    let mut noisy = None;
    h.report(
        "8",
        "synthetic end-to-end",
        Some(Duration::from_secs(120)),
        || synthetic_end_to_end(&mut noisy),
    );
    collision_smoke(noisy);

    println!("acceptance: {} passed, {} failed", h.passed, h.failed);
    let strict = std::env::var("SEMIDISTILL_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && h.failed > 0 {
        std::process::exit(1);
    }
}
