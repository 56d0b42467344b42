use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use serde_json::{json, Value};

use fcrx_core::atlas::{build_pools, ingest_annotations, RegionMap};
use fcrx_core::eval::{read_corpus, run_assessment, split_dataset, toy_model_config, EvalRun, ToyWorld};
use fcrx_core::featurize::{EmbeddingStore, Featurizer, TextEncoder};
use fcrx_core::lexicon::{load_lexicon, Lexicon};
use fcrx_core::model::{ablate, evaluate, train, Checkpoint, Metrics, ModelConfig, Variant};
use fcrx_core::pipeline::{
    check_report, correct_report, explain, ground_truth_pairs, FcReport, HttpRewriter, OfflineReformer, Rewriter,
    ScoreMode,
};
use fcrx_core::synth::{generate_dataset, read_reports, read_samples, real_samples, samples_to_jsonl};

use crate::config::{parse_assignment, Config};
use crate::error::{io, CliError};
use crate::output::Output;
use crate::{
    AtlasCommand, CheckArgs, Cli, Command, CorrectArgs, DemoArgs, EvalCommand, FeatureArgs, LexiconCommand,
    ModelCommand, SynthCommand, TrainFlags,
};

struct Ctx {
    cfg: Config,
    lexicon: Lexicon,
    lexicon_path: Option<PathBuf>,
}

impl Ctx {
    fn seed(&self) -> u64 {
        self.cfg.seed
    }

    fn note_lexicon(&self, out: &mut Output) -> Result<(), CliError> {
        match &self.lexicon_path {
            Some(p) => out.input("lexicon", p),
            None => Ok(()),
        }
    }
}

fn flag_overrides(flags: &TrainFlags, into: &mut Vec<(String, Value)>) {
    if let Some(e) = flags.epochs {
        into.push(("model.epochs".into(), json!(e)));
    }
    if let Some(b) = flags.batch_size {
        into.push(("model.batch_size".into(), json!(b)));
    }
    if let Some(lr) = flags.max_lr {
        into.push(("model.max_lr".into(), json!(lr)));
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut overrides = Vec::new();
    for s in &cli.global.set {
        overrides.push(parse_assignment(s)?);
    }
    if let Some(seed) = cli.global.seed {
        overrides.push(("seed".into(), json!(seed)));
    }
    match &cli.command {
        Command::Model(ModelCommand::Train { flags, variant, .. }) => {
            flag_overrides(flags, &mut overrides);
            if let Some(v) = variant {
                overrides.push(("model.variant".into(), json!(v)));
            }
        }
        Command::Model(ModelCommand::Ablate { flags, .. }) | Command::Demo(DemoArgs { flags, .. }) => {
            flag_overrides(flags, &mut overrides)
        }
        _ => {}
    }
    let cfg = Config::load(cli.global.config.as_deref(), &overrides)?;
    let lexicon_path = cli.global.lexicon.clone().or_else(|| cfg.paths.lexicon.clone());
    let lexicon = match &lexicon_path {
        Some(p) => load_lexicon(existing(p, "lexicon")?)?,
        None => Lexicon::builtin(),
    };
    let ctx = Ctx { cfg, lexicon, lexicon_path };

    match cli.command {
        Command::Lexicon(LexiconCommand::Validate { path, out }) => lexicon_validate(&ctx, &path, out.as_deref()),
        Command::Atlas(AtlasCommand::Ingest { path, out }) => atlas_ingest(&ctx, path, &out),
        Command::Synth(SynthCommand::Generate { annotations, reports, out }) => {
            synth_generate(&ctx, annotations, reports, &out)
        }
        Command::Model(ModelCommand::Train { features, out, .. }) => model_train(&ctx, &features, out),
        Command::Model(ModelCommand::Eval { checkpoint, data, out }) => model_eval(&ctx, checkpoint, data, out),
        Command::Model(ModelCommand::Ablate { features, variant, out, .. }) => {
            model_ablate(&ctx, &features, &variant, out)
        }
        Command::Check(args) => check(&ctx, &args),
        Command::Correct(args) => correct(&ctx, &args),
        Command::Eval(EvalCommand::Run { corpus, checkpoint, atlas, out, require_rewriter }) => {
            eval_run(&ctx, corpus, checkpoint, atlas, out, require_rewriter)
        }
        Command::Demo(args) => demo(&ctx, &args),
    }
}

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

fn existing<'a>(p: &'a Path, what: &str) -> Result<&'a Path, CliError> {
    if p.exists() {
        Ok(p)
    } else {
        Err(CliError::Usage(format!("{what} path {} does not exist", p.display())))
    }
}

/// The flag if given, else the configured path; the file must exist.
fn input_path(flag: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    let p = flag
        .or_else(|| configured.clone())
        .ok_or_else(|| CliError::Usage(format!("missing --{what} (or paths.{} in the config)", what.replace('-', "_"))))?;
    existing(&p, what)?;
    Ok(p)
}

fn output_dir(flag: Option<PathBuf>, cfg: &Config, what: &str) -> Result<PathBuf, CliError> {
    flag.or_else(|| cfg.paths.output.clone())
        .ok_or_else(|| CliError::Usage(format!("missing --out for {what} (or paths.output in the config)")))
}

/// A closed stdout (say, piped into `head`) is not an error.
fn print_text(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    print_text(&serde_json::to_string_pretty(value).map_err(|e| CliError::Core(e.into()))?);
    Ok(())
}

fn rewriter(cfg: &Config, require: bool) -> Result<Box<dyn Rewriter>, CliError> {
    let env = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
    let required = require || cfg.rewriter.required;
    match cfg.rewriter.url.clone().or_else(|| env("FCRX_REWRITER_URL")) {
        None if required => Err(CliError::RewriterRequired("no rewriter URL configured".into())),
        None => Ok(Box::new(OfflineReformer)),
        Some(url) => Ok(Box::new(HttpRewriter {
            url,
            model: cfg.rewriter.model.clone().or_else(|| env("FCRX_REWRITER_MODEL")),
            key: env("FCRX_REWRITER_KEY"),
            timeout: Duration::from_secs(cfg.rewriter.timeout_secs),
            options: Value::Null,
        })),
    }
}

fn featurizer(ctx: &Ctx, args: &FeatureArgs, out: &mut Output) -> Result<Featurizer, CliError> {
    if let Some(p) = &args.featurizer_from {
        let ckpt = Checkpoint::load(existing(p, "featurizer-from")?)?;
        out.input("featurizer", p)?;
        return Ok(ckpt.featurizer);
    }
    let paths = &ctx.cfg.paths;
    let emb = input_path(args.embeddings.clone(), &paths.embeddings, "embeddings")?;
    let images = EmbeddingStore::load(&emb)?;
    out.input("embeddings", &emb)?;
    let f = &ctx.cfg.featurizer;
    let text = match args.finding_embeddings.clone().or_else(|| paths.finding_embeddings.clone()) {
        Some(p) => {
            let store = EmbeddingStore::load(existing(&p, "finding-embeddings")?)?;
            out.input("finding_embeddings", &p)?;
            let mut t = TextEncoder::seeded(store.dim, ctx.seed(), f.box_gain);
            t.store = Some(store);
            t
        }
        None => TextEncoder::seeded(f.text_dim, ctx.seed(), f.box_gain),
    };
    Ok(Featurizer { planted: None, images, text })
}

/// Headline numbers of a metrics block, without the ROC curve.
fn headline(m: &Metrics) -> Value {
    json!({
        "pairs": m.pairs,
        "accuracy": m.accuracy,
        "miou": m.miou,
        "miou_pairs": m.miou_pairs,
        "auc": m.auc,
        "reversal_mean_area": m.reversal_mean_area,
    })
}

fn assessment_summary(run: &EvalRun) -> Value {
    json!({
        "reports": run.reports.len(),
        "concordance_reports": run.concordance_reports,
        "mean_fc_ap": run.mean_fc_ap,
        "mean_fc_ag": run.mean_fc_ag,
        "concordance": run.concordance,
        "concordance_of_means": run.concordance_of_means,
        "mean_fc_original": run.mean_fc_original,
        "mean_fc_corrected": run.mean_fc_corrected,
        "mean_bleu_ag": run.mean_bleu_ag,
        "mean_bleu_cg": run.mean_bleu_cg,
        "improvement": run.improvement,
        "rewriter_failures": run.rewriter_failures,
    })
}

fn write_table(out: &mut Output, run: &EvalRun) -> Result<(), CliError> {
    let path = out.path("table.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| io(&path, e.into()))?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    w.write_record(["metric", "ag", "cg", "unavailable"]).map_err(|e| io(&path, e.into()))?;
    for row in &run.table {
        w.write_record([row.metric.clone(), fmt(row.ag), fmt(row.cg), row.unavailable.clone().unwrap_or_default()])
            .map_err(|e| io(&path, e.into()))?;
    }
    w.flush().map_err(|e| io(&path, e))?;
    out.record("table.csv");
    Ok(())
}

fn write_assessment(out: &mut Output, run: &EvalRun) -> Result<(), CliError> {
    out.write_json("eval.json", &json!({
        "corpus_id": run.corpus_id,
        "summary": assessment_summary(run),
        "table": run.table,
    }))?;
    out.write_jsonl("reports.jsonl", &run.reports)?;
    write_table(out, run)
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn lexicon_validate(ctx: &Ctx, path: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let lex = load_lexicon(existing(path, "lexicon")?)?;
    let summary = json!({
        "findings": lex.len(),
        "regions": lex.regions().len(),
        "negation_cues": lex.negation_cues().len(),
        "synonyms": lex.findings().iter().map(|f| f.synonyms.len()).sum::<usize>(),
    });
    if let Some(dir) = out {
        let mut o = Output::dir(dir, "lexicon validate")?;
        o.input("lexicon", path)?;
        o.write_json("lexicon.json", &summary)?;
        o.finish(ctx.cfg.effective(None), ctx.seed())?;
    }
    print_json(&summary)
}

fn atlas_ingest(ctx: &Ctx, path: Option<PathBuf>, out: &Path) -> Result<(), CliError> {
    let path = input_path(path, &ctx.cfg.paths.annotations, "annotations")?;
    let mut o = Output::beside(out, "atlas ingest")?;
    ctx.note_lexicon(&mut o)?;
    o.input("annotations", &path)?;
    let map = ingest_annotations(&path, &ctx.lexicon)?;
    map.save(out)?;
    o.record(&out.file_name().expect("checked by Output::beside").to_string_lossy());
    let summary = json!({ "images": map.len() });
    o.summary(summary.clone());
    o.finish(ctx.cfg.effective(None), ctx.seed())?;
    print_json(&summary)
}

fn synth_generate(
    ctx: &Ctx,
    annotations: Option<PathBuf>,
    reports: Option<PathBuf>,
    out: &Path,
) -> Result<(), CliError> {
    let paths = &ctx.cfg.paths;
    let ann = input_path(annotations, &paths.annotations, "annotations")?;
    let rep = input_path(reports, &paths.reports, "reports")?;
    let mut o = Output::beside(out, "synth generate")?;
    ctx.note_lexicon(&mut o)?;
    o.input("annotations", &ann)?;
    o.input("reports", &rep)?;
    let regions = ingest_annotations(&ann, &ctx.lexicon)?;
    let (reals, dropped) = real_samples(&read_reports(&rep)?, &regions, &ctx.lexicon)?;
    let pools = build_pools(&reals);
    let (samples, report) = generate_dataset(&reals, &pools, &ctx.cfg.synth, ctx.seed());
    let name = out.file_name().expect("checked by Output::beside").to_string_lossy().to_string();
    o.write_text(&name, &samples_to_jsonl(&samples)?)?;
    let summary = json!({ "samples": samples.len(), "unlocatable_dropped": dropped, "generation": report });
    o.summary(summary.clone());
    o.finish(ctx.cfg.effective(None), ctx.seed())?;
    print_json(&summary)
}

fn model_train(ctx: &Ctx, features: &FeatureArgs, out: Option<PathBuf>) -> Result<(), CliError> {
    let model = ctx.cfg.model(ModelConfig::default())?;
    let data = input_path(features.data.clone(), &ctx.cfg.paths.samples, "data")?;
    let dir = output_dir(out, &ctx.cfg, "model train")?;
    let mut o = Output::dir(&dir, "model train")?;
    o.input("data", &data)?;
    let feat = featurizer(ctx, features, &mut o)?;
    let samples = read_samples(&data)?;
    let s = &ctx.cfg.split;
    let split = split_dataset(&samples, s.ratios, s.folds, ctx.seed())?.swap_remove(s.fold);
    let ckpt = train(&split.train, feat, &model, ctx.seed())?;
    ckpt.save(o.path("checkpoint.json"))?;
    o.record("checkpoint.json");
    let val = evaluate(&ckpt, &split.val)?;
    let test = evaluate(&ckpt, &split.test)?;
    let ids = |v: &[fcrx_core::synth::Sample]| v.iter().map(|s| s.image_id.clone()).collect::<Vec<_>>();
    o.write_json("split.json", &json!({
        "fold": split.fold,
        "train": ids(&split.train),
        "val": ids(&split.val),
        "test": ids(&split.test),
    }))?;
    o.write_json("metrics.json", &json!({ "val": val, "test": test }))?;
    o.write_json("train_log.json", &ckpt.log)?;
    let summary = json!({ "variant": model.variant.name(), "val": headline(&val), "test": headline(&test) });
    o.summary(summary.clone());
    o.finish(ctx.cfg.effective(Some(&model)), ctx.seed())?;
    print_json(&summary)
}

fn model_eval(ctx: &Ctx, checkpoint: Option<PathBuf>, data: Option<PathBuf>, out: Option<PathBuf>) -> Result<(), CliError> {
    let ck = input_path(checkpoint, &ctx.cfg.paths.checkpoint, "checkpoint")?;
    let data = input_path(data, &ctx.cfg.paths.samples, "data")?;
    let dir = output_dir(out, &ctx.cfg, "model eval")?;
    let mut o = Output::dir(&dir, "model eval")?;
    o.input("checkpoint", &ck)?;
    o.input("data", &data)?;
    let ckpt = Checkpoint::load(&ck)?;
    let metrics = evaluate(&ckpt, &read_samples(&data)?)?;
    o.write_json("metrics.json", &metrics)?;
    let summary = headline(&metrics);
    o.summary(summary.clone());
    o.finish(ctx.cfg.effective(Some(&ckpt.config)), ckpt.seed)?;
    print_json(&summary)
}

fn model_ablate(ctx: &Ctx, features: &FeatureArgs, variants: &[String], out: Option<PathBuf>) -> Result<(), CliError> {
    let model = ctx.cfg.model(ModelConfig::default())?;
    let variants: Vec<Variant> = if variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        variants.iter().map(|v| v.parse()).collect::<Result<_, _>>()?
    };
    let data = input_path(features.data.clone(), &ctx.cfg.paths.samples, "data")?;
    let dir = output_dir(out, &ctx.cfg, "model ablate")?;
    let mut o = Output::dir(&dir, "model ablate")?;
    o.input("data", &data)?;
    let feat = featurizer(ctx, features, &mut o)?;
    let samples = read_samples(&data)?;
    let s = &ctx.cfg.split;
    let split = split_dataset(&samples, s.ratios, s.folds, ctx.seed())?.swap_remove(s.fold);
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for v in variants {
        eprintln!("training {}", v.name());
        let m = ablate(&split.train, &split.test, &feat, &model, v, ctx.seed())?;
        summary.push(json!({ "variant": v.name(), "test": headline(&m) }));
        rows.push(json!({ "variant": v.name(), "metrics": m }));
    }
    o.write_json("ablation.json", &rows)?;
    o.summary(json!(summary));
    o.finish(ctx.cfg.effective(Some(&model)), ctx.seed())?;
    print_json(&summary)
}

struct Checked {
    ckpt: Checkpoint,
    regions: RegionMap,
    text: String,
    fc: FcReport,
    reference: Option<Vec<fcrx_core::pipeline::GroundTruthPair>>,
}

fn check_inputs(ctx: &Ctx, a: &CheckArgs, o: &mut Output) -> Result<Checked, CliError> {
    let ck = input_path(a.checkpoint.clone(), &ctx.cfg.paths.checkpoint, "checkpoint")?;
    let atlas = input_path(a.atlas.clone(), &ctx.cfg.paths.atlas, "atlas")?;
    let report = existing(&a.report, "report")?;
    ctx.note_lexicon(o)?;
    o.input("checkpoint", &ck)?;
    o.input("atlas", &atlas)?;
    o.input("report", report)?;
    let ckpt = Checkpoint::load(&ck)?;
    let regions = RegionMap::load(&atlas)?;
    let text = std::fs::read_to_string(report).map_err(|e| io(report, e))?;
    let fc = check_report(&text, &a.image, &ckpt, &ctx.lexicon, &regions)?;
    let reference = match &a.reference {
        Some(p) => {
            o.input("reference", existing(p, "reference")?)?;
            let g = std::fs::read_to_string(p).map_err(|e| io(p, e))?;
            Some(ground_truth_pairs(&g, &a.image, &ctx.lexicon, &regions)?)
        }
        None => None,
    };
    Ok(Checked { ckpt, regions, text, fc, reference })
}

fn check(ctx: &Ctx, a: &CheckArgs) -> Result<(), CliError> {
    let dir = output_dir(a.out.clone(), &ctx.cfg, "check")?;
    let mut o = Output::dir(&dir, "check")?;
    let c = check_inputs(ctx, a, &mut o)?;
    o.write_json("fc_report.json", &c.fc)?;
    o.write_json("explanation.json", &explain(&c.fc, c.reference.as_deref()))?;
    let summary = json!({
        "image_id": c.fc.image_id,
        "findings": c.fc.records.len(),
        "flagged": c.fc.flagged().map(|r| r.label.clone()).collect::<Vec<_>>(),
        "fc_score": c.fc.fc_score,
    });
    o.summary(summary.clone());
    o.finish(ctx.cfg.effective(Some(&c.ckpt.config)), c.ckpt.seed)?;
    print_json(&summary)
}

fn correct(ctx: &Ctx, a: &CorrectArgs) -> Result<(), CliError> {
    let rw = rewriter(&ctx.cfg, a.require_rewriter)?;
    let dir = output_dir(a.check.out.clone(), &ctx.cfg, "correct")?;
    let mut o = Output::dir(&dir, "correct")?;
    let mut c = check_inputs(ctx, &a.check, &mut o)?;
    let correction = correct_report(&c.text, &c.fc, rw.as_ref());
    if (a.require_rewriter || ctx.cfg.rewriter.required) && !correction.rewriter_failures.is_empty() {
        return Err(CliError::RewriterRequired(correction.rewriter_failures.join("; ")));
    }
    c.fc.corrected_text = Some(correction.text.clone());
    c.fc.diagnostics.rewriter = Some(rw.name());
    c.fc.diagnostics.rewriter_failures = correction.rewriter_failures.clone();
    let after = check_report(&correction.text, &a.check.image, &c.ckpt, &ctx.lexicon, &c.regions)?;
    o.write_text("corrected.txt", &correction.text)?;
    o.write_json("correction.json", &json!({
        "original": c.text,
        "corrected": correction.text,
        "edits": correction.edits,
        "rewriter_failures": correction.rewriter_failures,
        "fc_score_before": c.fc.fc_score,
        "fc_score_after": after.fc_score,
    }))?;
    o.write_json("fc_report.json", &c.fc)?;
    o.write_json("explanation.json", &explain(&c.fc, c.reference.as_deref()))?;
    let summary = json!({
        "image_id": c.fc.image_id,
        "edited_sentences": correction.edits.len(),
        "fc_score_before": c.fc.fc_score,
        "fc_score_after": after.fc_score,
        "rewriter": rw.name(),
    });
    o.summary(summary.clone());
    o.finish(ctx.cfg.effective(Some(&c.ckpt.config)), c.ckpt.seed)?;
    print_text(&correction.text);
    Ok(())
}

fn eval_run(
    ctx: &Ctx,
    corpus: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    atlas: Option<PathBuf>,
    out: Option<PathBuf>,
    require: bool,
) -> Result<(), CliError> {
    let rw = rewriter(&ctx.cfg, require)?;
    let corpus = input_path(corpus, &ctx.cfg.paths.corpus, "corpus")?;
    let ck = input_path(checkpoint, &ctx.cfg.paths.checkpoint, "checkpoint")?;
    let atlas = input_path(atlas, &ctx.cfg.paths.atlas, "atlas")?;
    let dir = output_dir(out, &ctx.cfg, "eval run")?;
    let mut o = Output::dir(&dir, "eval run")?;
    ctx.note_lexicon(&mut o)?;
    o.input("corpus", &corpus)?;
    o.input("checkpoint", &ck)?;
    o.input("atlas", &atlas)?;
    let ckpt = Checkpoint::load(&ck)?;
    let regions = RegionMap::load(&atlas)?;
    let records = read_corpus(&corpus)?;
    let id = corpus.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
    let run = run_assessment(&id, &records, &ckpt, &ctx.lexicon, &regions, rw.as_ref(), ScoreMode::Fraction)?;
    if (require || ctx.cfg.rewriter.required) && run.rewriter_failures > 0 {
        return Err(CliError::RewriterRequired(format!("{} rewrite requests failed", run.rewriter_failures)));
    }
    write_assessment(&mut o, &run)?;
    let summary = assessment_summary(&run);
    o.summary(summary.clone());
    o.finish(ctx.cfg.effective(Some(&ckpt.config)), ckpt.seed)?;
    print_json(&summary)
}

fn demo(ctx: &Ctx, a: &DemoArgs) -> Result<(), CliError> {
    let seed = ctx.seed();
    let model = ctx.cfg.model(toy_model_config())?;
    let rw = rewriter(&ctx.cfg, false)?;
    let dir = a.out.clone().or_else(|| ctx.cfg.paths.output.clone()).unwrap_or_else(|| PathBuf::from(format!("demo-{seed}")));
    let mut o = Output::dir(&dir, "demo")?;

    eprintln!("building toy world (seed {seed})");
    let world = ToyWorld::build(&ctx.cfg.toy, seed)?;
    o.write_jsonl("data/annotations.jsonl", &world.corpus.annotations)?;
    o.write_jsonl("data/reports.jsonl", &world.corpus.reports())?;
    o.write_jsonl("data/corpus.jsonl", &world.corpus.corpus())?;
    o.write_jsonl("data/test_corpus.jsonl", &world.test_corpus())?;
    o.write_jsonl("data/truth.jsonl", &world.corpus.images)?;
    o.write_text("data/samples.jsonl", &samples_to_jsonl(&world.samples)?)?;
    world.regions.save(o.path("data/atlas.json"))?;
    o.record("data/atlas.json");
    world.featurizer.images.save(o.path("data/embeddings.jsonl"))?;
    o.record("data/embeddings.jsonl");

    let train_set = world.train_samples();
    eprintln!("training {} on {} images for {} epochs", model.variant.name(), train_set.len(), model.epochs);
    let ckpt = train(&train_set, world.featurizer.clone(), &model, seed)?;
    ckpt.save(o.path("checkpoint.json"))?;
    o.record("checkpoint.json");
    o.write_json("train_log.json", &ckpt.log)?;
    let val = evaluate(&ckpt, &world.val_samples())?;
    let test = evaluate(&ckpt, &world.test_samples())?;

    eprintln!("checking and correcting {} test reports", world.split.test.len());
    let corpus = world.test_corpus();
    let run = run_assessment("toy-test", &corpus, &ckpt, &world.lexicon, &world.regions, rw.as_ref(), ScoreMode::Fraction)?;
    write_assessment(&mut o, &run)?;
    let mut explanations = Vec::with_capacity(corpus.len());
    for (rec, assessed) in corpus.iter().zip(&run.reports) {
        let mut fc = check_report(&rec.automated_report, &rec.image_id, &ckpt, &world.lexicon, &world.regions)?;
        fc.corrected_text = Some(assessed.corrected.clone());
        let gt = ground_truth_pairs(&rec.ground_truth_report, &rec.image_id, &world.lexicon, &world.regions)?;
        explanations.push(explain(&fc, Some(&gt)));
    }
    o.write_jsonl("explanations.jsonl", &explanations)?;

    let metrics = json!({
        "seed": seed,
        "images": world.corpus.images.len(),
        "findings": world.corpus.finding_names().len(),
        "generation": world.generation,
        "split": { "train": world.split.train.len(), "val": world.split.val.len(), "test": world.split.test.len() },
        "variant": model.variant.name(),
        "val": headline(&val),
        "test": headline(&test),
        "assessment": assessment_summary(&run),
    });
    o.write_json("metrics.json", &metrics)?;
    o.summary(json!({ "test": headline(&test), "assessment": assessment_summary(&run) }));
    o.finish(ctx.cfg.effective(Some(&model)), seed)?;
    print_json(&metrics)
}
