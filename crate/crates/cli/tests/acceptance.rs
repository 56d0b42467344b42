//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Exits 0 after printing every line so the workspace test run stays usable;
//! set `FCRX_ACCEPTANCE_STRICT=1` to exit 1 when any criterion fails.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng as _;

use fcrx_core::atlas::{build_pools, RegionMap};
use fcrx_core::bbox::{giou, iou, BBox};
use fcrx_core::eval::{run_assessment, split_dataset, toy_model_config, ToyWorld, ToyWorldConfig};
use fcrx_core::lexicon::{extract_ffl, parse_ffl, serialize_ffl, split_sentences, Lexicon, Polarity};
use fcrx_core::model::{evaluate, train, Checkpoint, Metrics, ModelConfig, Variant};
use fcrx_core::nn::{giou_loss, regression_loss, relu, relu_backward, sigmoid, sigmoid_backward, supcon_loss, Linear};
use fcrx_core::pipeline::{
    check_report, correct_report, fc_score, fc_score_items, reform, FcRecord, FcReport, OfflineReformer, ScoreItem,
    ScoreMode,
};
use fcrx_core::rng::{seeded, Rng};
use fcrx_core::synth::{real_samples, relocate, reverse, substitute, Finding, FlPair};
use fcrx_core::toy::{generate, ToyConfig};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// 1. gradients
// ---------------------------------------------------------------------------

const H: f64 = 1e-5;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

fn numeric(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.to_vec();
            p[i] += H;
            let up = f(&p);
            p[i] -= 2.0 * H;
            (up - f(&p)) / (2.0 * H)
        })
        .collect()
}

fn worst(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic.iter().zip(numeric).map(|(a, n)| rel_err(*a, *n)).fold(0.0, f64::max)
}

fn randv(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Box pair with every kink of L1, intersection and hull well away.
fn box_pair(rng: &mut Rng, overlap: bool) -> ([f64; 4], [f64; 4]) {
    loop {
        let mut b = || -> [f64; 4] {
            [rng.random_range(0.05..0.6), rng.random_range(0.05..0.6), rng.random_range(0.1..0.35), rng.random_range(0.1..0.35)]
        };
        let (p, g) = (b(), b());
        let gap = 1e-3;
        let edges = [p[0] - g[0], p[1] - g[1], p[0] + p[2] - g[0] - g[2], p[1] + p[3] - g[1] - g[3]];
        let apart_coords = (0..4).all(|i| (p[i] - g[i]).abs() > gap) && edges.iter().all(|e| e.abs() > gap);
        let iw = (p[0] + p[2]).min(g[0] + g[2]) - p[0].max(g[0]);
        let ih = (p[1] + p[3]).min(g[1] + g[3]) - p[1].max(g[1]);
        let ok = if overlap { iw > gap && ih > gap } else { iw < -gap || ih < -gap };
        if apart_coords && ok {
            return (p, g);
        }
    }
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(101);
    let mut errs: Vec<(&str, f64, usize)> = Vec::new();

    let mut e = 0.0f64;
    for point in 0..10 {
        let d = 6;
        let (r, f) = (1 + point % 3, 1 + point % 4);
        let tau = [0.07, 0.5, 1.0][point % 3];
        let x = randv(d * (1 + r + f), &mut rng);
        let loss = |x: &[f64]| {
            let v: Vec<&[f64]> = x.chunks(d).collect();
            supcon_loss(v[0], &v[1..1 + r], &v[1 + r..], tau, false).unwrap().loss
        };
        let v: Vec<&[f64]> = x.chunks(d).collect();
        let g = supcon_loss(v[0], &v[1..1 + r], &v[1 + r..], tau, false).unwrap();
        let mut analytic = g.d_image.clone();
        g.d_real.iter().chain(&g.d_fake).for_each(|z| analytic.extend(z));
        e = e.max(worst(&analytic, &numeric(&x, loss)));
    }
    errs.push(("supcon", e, 10));

    let mut e = 0.0f64;
    for k in 0..12 {
        let (p, g) = box_pair(&mut rng, k % 3 != 0);
        let y = [p[0], p[1], p[2], p[3], rng.random_range(0.05..0.95)];
        let yg = [g[0], g[1], g[2], g[3], f64::from(u8::from(k % 2 == 0))];
        let (_, analytic) = regression_loss(&y, &yg).unwrap();
        let num = numeric(&y, |x| regression_loss(&[x[0], x[1], x[2], x[3], x[4]], &yg).unwrap().0.total());
        e = e.max(worst(&analytic, &num));
        // The GIoU term is 1 - GIoU.
        let (lg, _) = giou_loss(&p, &g);
        let hand = 1.0 - giou(&BBox::from_array(p), &BBox::from_array(g));
        if (lg - hand).abs() > 1e-12 {
            return Err(format!("giou term {lg} vs 1-GIoU {hand}"));
        }
    }
    errs.push(("regression", e, 12));

    let (mut el, mut er, mut es) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..10 {
        let (i, o) = (5, 3);
        let mut lin = Linear::init(i, o, true, &mut rng);
        let x = randv(i, &mut rng);
        let w = randv(o, &mut rng);
        let dx = lin.backward(&x, &w).unwrap();
        let fx = |x: &[f64]| lin.forward(x).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        el = el.max(worst(&dx, &numeric(&x, fx)));
        let gw = lin.weight.grad().unwrap().to_vec();
        let fw = |p: &[f64]| {
            let mut l = lin.clone();
            l.weight.data_mut().copy_from_slice(p);
            l.forward(&x).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        el = el.max(worst(&gw, &numeric(lin.weight.data(), fw)));
        let gb = lin.bias.as_ref().unwrap().grad().unwrap().to_vec();
        let fb = |p: &[f64]| {
            let mut l = lin.clone();
            l.bias.as_mut().unwrap().data_mut().copy_from_slice(p);
            l.forward(&x).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        el = el.max(worst(&gb, &numeric(lin.bias.as_ref().unwrap().data(), fb)));

        let z: Vec<f64> = randv(6, &mut rng).iter().map(|v| if v.abs() < 0.01 { 0.5 } else { *v }).collect();
        let dy = randv(6, &mut rng);
        let weighted = |v: Vec<f64>| v.iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>();
        er = er.max(worst(&relu_backward(&z, &dy), &numeric(&z, |x| weighted(relu(x)))));
        es = es.max(worst(&sigmoid_backward(&sigmoid(&z), &dy), &numeric(&z, |x| weighted(sigmoid(x)))));
    }
    errs.push(("linear", el, 10));
    errs.push(("relu", er, 10));
    errs.push(("sigmoid", es, 10));

    let elapsed = start.elapsed();
    let detail = errs.iter().map(|(n, e, k)| format!("{n} {e:.1e} ({k} pts)")).collect::<Vec<_>>().join(", ");
    check(
        errs.iter().all(|(_, e, _)| *e < 1e-4) && elapsed < Duration::from_secs(30),
        format!("{detail}; {:.2}s", elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------------------
// 2. anchors
// ---------------------------------------------------------------------------

fn anchors() -> Outcome {
    let z = [0.6, 0.8];
    let same = supcon_loss(&z, &[&[1.0, 0.0]], &[&[1.0, 0.0]], 0.07, false).unwrap().loss;
    let a = BBox { x: 0.0, y: 0.0, w: 0.2, h: 0.2 };
    let b = BBox { x: 0.8, y: 0.8, w: 0.2, h: 0.2 };
    // Hull is the unit square, union 0.08, intersection 0.
    let hand = 0.0 - (1.0 - 0.08) / 1.0;
    let g = giou(&a, &b);
    let (zero_loss, zero_grad) = giou_loss(&[0.0; 4], &[0.0; 4]);
    check(
        same == 0.0 && (g - hand).abs() <= 1e-9 && zero_loss == 0.0 && zero_grad == [0.0; 4],
        format!("supcon equal-similarity {same}, giou {g} (hand {hand}), both-zero loss {zero_loss}"),
    )
}

// ---------------------------------------------------------------------------
// 3. perturbations
// ---------------------------------------------------------------------------

fn perturbations(lex: &Lexicon) -> Outcome {
    let original = FlPair::real(Finding::new(Polarity::Yes, "edema"), BBox { x: 0.14, y: 0.13, w: 0.72, h: 0.56 });
    let r = reverse(&original, 0);
    let reversal_ok = r.finding == Finding::new(Polarity::No, "edema") && r.location == BBox::ZERO && !r.real;

    let corpus = generate(&ToyConfig::default(), 11);
    let regions = RegionMap::from_records(&corpus.annotations, lex).map_err(|e| e.to_string())?;
    let (samples, _) = real_samples(&corpus.reports(), &regions, lex).map_err(|e| e.to_string())?;
    let pools = build_pools(&samples);
    let present: Vec<(usize, usize)> = samples
        .iter()
        .enumerate()
        .flat_map(|(si, s)| {
            s.real_pairs.iter().enumerate().filter(|(_, p)| p.finding.polarity == Polarity::Yes).map(move |(pi, _)| (si, pi))
        })
        .collect();
    let in_pool = |name: &str, b: &BBox| {
        pools.get(name).iter().any(|p| p.to_array().map(f64::to_bits) == b.to_array().map(f64::to_bits))
    };
    let mut rng = seeded(1000);
    let (mut violations, mut relocated, mut substituted) = (0, 0, 0);
    for _ in 0..1000 {
        let (si, pi) = present[rng.random_range(0..present.len())];
        let s = &samples[si];
        let pair = &s.real_pairs[pi];
        if let Ok(f) = relocate(pair, pi, &pools, 0.5, &mut rng) {
            relocated += 1;
            let in_sample = s.real_pairs.iter().any(|r| r.finding == f.finding && r.location == f.location);
            if !in_pool(&f.finding.name, &f.location) || in_sample || iou(&f.location, &pair.location) > 0.5 || f.real {
                violations += 1;
            }
        }
        let names = s.real_names();
        if let Ok(f) = substitute(pair, pi, &names, &pools, &mut rng) {
            substituted += 1;
            if names.contains(f.finding.name.as_str()) || !in_pool(&f.finding.name, &f.location) || f.real {
                violations += 1;
            }
        }
    }
    check(
        reversal_ok && violations == 0 && relocated > 0 && substituted > 0,
        format!(
            "reversal -> {}|{} {:?} E={}; {relocated} relocations, {substituted} substitutions, {violations} violations",
            r.finding.polarity,
            r.finding.name,
            r.location.to_array(),
            u8::from(r.real)
        ),
    )
}

// ---------------------------------------------------------------------------
// 4, 5, 7, 8: toy world
// ---------------------------------------------------------------------------

struct Trained {
    world: ToyWorld,
    ckpt: Checkpoint,
    test: Metrics,
    elapsed: Duration,
}

fn train_toy(seed: u64, variant: Variant) -> Result<Trained, String> {
    let start = Instant::now();
    let world = ToyWorld::build(&ToyWorldConfig::default(), seed).map_err(|e| e.to_string())?;
    let config = ModelConfig { variant, ..toy_model_config() };
    let ckpt = train(&world.train_samples(), world.featurizer.clone(), &config, seed).map_err(|e| e.to_string())?;
    let test = evaluate(&ckpt, &world.test_samples()).map_err(|e| e.to_string())?;
    Ok(Trained { world, ckpt, test, elapsed: start.elapsed() })
}

fn toy_training(first: &Trained, repeat: &Metrics) -> Outcome {
    let c = toy_model_config();
    let w = &first.world;
    let m = &first.test;
    check(
        w.corpus.images.len() == 500
            && w.corpus.finding_names().len() == 12
            && c.epochs == 100
            && c.batch_size == 32
            && m.accuracy >= 0.90
            && m.miou >= 0.45
            && first.elapsed < Duration::from_secs(600)
            && m == repeat,
        format!(
            "{} images, {} findings, {} epochs, batch {}: accuracy {:.4}, mIoU {:.4} over {} boxes, {:.1}s, repeat identical {}",
            w.corpus.images.len(),
            w.corpus.finding_names().len(),
            c.epochs,
            c.batch_size,
            m.accuracy,
            m.miou,
            m.miou_pairs,
            first.elapsed.as_secs_f64(),
            m == repeat
        ),
    )
}

fn ablation(comb: &[(u64, Metrics)]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (seed, c) in comb {
        let frozen = train_toy(*seed, Variant::FrozenEncoder)?.test;
        let bce = train_toy(*seed, Variant::BceEncoder)?.test;
        let dm = c.miou - frozen.miou;
        let da = c.accuracy - bce.accuracy;
        ok &= dm > 0.0 && da > 0.0;
        parts.push(format!("seed {seed}: mIoU comb-frozen {dm:+.4}, acc comb-bce {da:+.4}"));
    }
    check(ok, parts.join("; "))
}

fn fc_oracle() -> Outcome {
    fn cell_iou(a: &BBox, b: &BBox) -> f64 {
        match (a.is_zero(), b.is_zero()) {
            (true, true) => return 1.0,
            (true, false) | (false, true) => return 0.0,
            _ => {}
        }
        let mut xs = [a.x, a.x + a.w, b.x, b.x + b.w];
        let mut ys = [a.y, a.y + a.h, b.y, b.y + b.h];
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        let inside = |r: &BBox, x: f64, y: f64| x > r.x && x < r.x + r.w && y > r.y && y < r.y + r.h;
        let (mut inter, mut union) = (0.0, 0.0);
        for i in 0..3 {
            for j in 0..3 {
                let (cx, cy) = ((xs[i] + xs[i + 1]) / 2.0, (ys[j] + ys[j + 1]) / 2.0);
                let area = (xs[i + 1] - xs[i]) * (ys[j + 1] - ys[j]);
                let (ia, ib) = (inside(a, cx, cy), inside(b, cx, cy));
                if ia && ib {
                    inter += area;
                }
                if ia || ib {
                    union += area;
                }
            }
        }
        inter / union
    }
    let lex = Lexicon::builtin();
    let pattern = parse_ffl("yes|edema", &lex).map_err(|e| e.to_string())?;
    let mut rng = seeded(6);
    let random_box = |rng: &mut Rng| {
        if rng.random_bool(0.2) {
            BBox::ZERO
        } else {
            BBox { x: rng.random_range(0.0..0.8), y: rng.random_range(0.0..0.8), w: rng.random_range(0.01..0.2), h: rng.random_range(0.01..0.2) }
        }
    };
    let mut diff: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..12);
        let records: Vec<FcRecord> = (0..n)
            .map(|_| {
                let indicated = random_box(&mut rng);
                let predicted = if rng.random_bool(0.2) { indicated } else { random_box(&mut rng) };
                FcRecord {
                    pattern: pattern.clone(),
                    label: "yes|edema".into(),
                    sentence: None,
                    spans: vec![],
                    indicated,
                    predicted,
                    raw_predicted: predicted,
                    verdict: rng.random_bool(0.6),
                    e_hat: 0.5,
                }
            })
            .collect();
        let real = records.iter().filter(|r| r.verdict).count() as f64 / n as f64;
        let overlap = records.iter().map(|r| cell_iou(&r.indicated, &r.predicted) / 2.0).sum::<f64>() / n as f64;
        let got = fc_score(&records, ScoreMode::Fraction).ok_or("no score")?;
        diff = diff.max((got - 0.5 * (real + overlap)).abs());
    }
    let b = BBox { x: 0.2, y: 0.3, w: 0.4, h: 0.1 };
    let perfect = fc_score_items(&[ScoreItem { verdict: true, indicated: b, reference: b }; 4], ScoreMode::Fraction);
    check(diff <= 1e-9 && perfect == Some(0.75), format!("max abs diff {diff:.1e} over 1000 sets, perfect case {perfect:?}"))
}

fn assessment(t: &Trained) -> Result<(Outcome, Outcome), String> {
    let w = &t.world;
    let corpus = w.test_corpus();
    let run = run_assessment("toy-test", &corpus, &t.ckpt, &w.lexicon, &w.regions, &OfflineReformer, ScoreMode::Fraction)
        .map_err(|e| e.to_string())?;
    let conc = check(
        run.concordance <= 0.05,
        format!(
            "mean |FC(A,P)-FC(A,G)| {:.4} over {} reports (means {:.4} vs {:.4})",
            run.concordance, run.concordance_reports, run.mean_fc_ap, run.mean_fc_ag
        ),
    );

    // Unflagged sentences must appear unchanged and in order.
    let mut broken = 0;
    for (rec, assessed) in corpus.iter().zip(&run.reports) {
        let fc: FcReport = check_report(&rec.automated_report, &rec.image_id, &t.ckpt, &w.lexicon, &w.regions)
            .map_err(|e| e.to_string())?;
        let flagged: BTreeSet<usize> = fc.flagged().flat_map(|r| r.spans.iter().map(|s| s.sentence)).collect();
        let mut from = 0;
        for (i, s) in split_sentences(&rec.automated_report).iter().enumerate() {
            if flagged.contains(&i) {
                continue;
            }
            let text = &rec.automated_report[s.start..s.end];
            match assessed.corrected[from..].find(text) {
                Some(at) => from += at + text.len(),
                None => broken += 1,
            }
        }
    }
    let improved = check(
        run.mean_bleu_cg > run.mean_bleu_ag && run.mean_fc_corrected >= run.mean_fc_original && broken == 0,
        format!(
            "BLEU {:.4} -> {:.4}, fc {:.4} -> {:.4}, {broken} unflagged sentences altered",
            run.mean_bleu_ag, run.mean_bleu_cg, run.mean_fc_original, run.mean_fc_corrected
        ),
    );
    Ok((conc, improved))
}

// ---------------------------------------------------------------------------
// 9. correction mechanics
// ---------------------------------------------------------------------------

fn flagged_clause_removal(lex: &Lexicon) -> Outcome {
    let text = "Left-sided pleural effusion found and the right atelectasis still remains.";
    let patterns = extract_ffl(text, lex);
    let effusion = patterns.iter().find(|p| p.finding == "pleural effusion").ok_or("effusion not extracted")?;
    let record = FcRecord {
        label: effusion.to_string(),
        sentence: effusion.sentence(),
        spans: effusion.spans.clone(),
        pattern: effusion.clone(),
        indicated: BBox::ZERO,
        predicted: BBox::ZERO,
        raw_predicted: BBox::ZERO,
        verdict: false,
        e_hat: 0.1,
    };
    let fc = FcReport { image_id: "t2".into(), records: vec![record], fc_score: None, corrected_text: None, diagnostics: Default::default() };
    let out = correct_report(text, &fc, &OfflineReformer);
    let fragment = out.edits.first().map(|e| e.fragment.clone()).unwrap_or_default();
    let reformed = reform(&fragment);
    let capital = reformed.chars().next().is_some_and(char::is_uppercase);
    check(
        !fragment.contains("Left-sided pleural effusion found")
            && fragment.contains("atelectasis still remains")
            && capital
            && reformed.ends_with('.')
            && reformed.contains("atelectasis still remains")
            && out.text == reformed,
        format!("fragment {fragment:?} -> {reformed:?}"),
    )
}

// ---------------------------------------------------------------------------
// 10. reproducibility
// ---------------------------------------------------------------------------

fn run_demo(dir: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_fcrx"))
        .args(["demo", "--seed", "7", "--out"])
        .arg(dir)
        .env_remove("FCRX_REWRITER_URL")
        .env_remove("FCRX_REWRITER_MODEL")
        .env_remove("FCRX_REWRITER_KEY")
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null())
        .status()
        .map_err(|e| e.to_string())?;
    if status.success() {
        Ok(())
    } else {
        Err(format!("demo exited with {status}"))
    }
}

fn reproducibility(t: &Trained, lex: &Lexicon) -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = tmp.path().join("ckpt.json");
    t.ckpt.save(&path).map_err(|e| e.to_string())?;
    let back = Checkpoint::load(&path).map_err(|e| e.to_string())?;
    let mut mismatched = 0;
    for s in t.world.test_samples() {
        for p in s.pairs() {
            let a = t.ckpt.predict(&s.image_id, &p.finding, p.location).map_err(|e| e.to_string())?;
            let b = back.predict(&s.image_id, &p.finding, p.location).map_err(|e| e.to_string())?;
            if a.e_hat.to_bits() != b.e_hat.to_bits() || a.bbox.to_array().map(f64::to_bits) != b.bbox.to_array().map(f64::to_bits) {
                mismatched += 1;
            }
        }
    }

    let mut ffl_bad = 0;
    for img in &t.world.corpus.images {
        for p in extract_ffl(&img.automated_report, lex) {
            let text = serialize_ffl(&p);
            match parse_ffl(&text, lex) {
                Ok(q) if serialize_ffl(&q) == text && q.polarity == p.polarity && q.finding == p.finding && q.anatomy == p.anatomy => {}
                _ => ffl_bad += 1,
            }
        }
    }

    let items: Vec<usize> = (0..500).collect();
    let a = split_dataset(&items, [0.7, 0.1, 0.2], 10, 7).map_err(|e| e.to_string())?;
    let b = split_dataset(&items, [0.7, 0.1, 0.2], 10, 7).map_err(|e| e.to_string())?;
    let partitions = a == b
        && a.iter().all(|s| {
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            all == items
        });

    let (d1, d2) = (tmp.path().join("demo-a"), tmp.path().join("demo-b"));
    run_demo(&d1)?;
    run_demo(&d2)?;
    let mut differing = Vec::new();
    for f in ["metrics.json", "eval.json", "table.csv"] {
        let x = std::fs::read(d1.join(f)).map_err(|e| format!("{f}: {e}"))?;
        let y = std::fs::read(d2.join(f)).map_err(|e| format!("{f}: {e}"))?;
        if x != y {
            differing.push(f);
        }
    }
    check(
        mismatched == 0 && ffl_bad == 0 && partitions && differing.is_empty(),
        format!(
            "{mismatched} prediction mismatches after reload, {ffl_bad} FFL round-trip failures, partitions {partitions}, demo twice: differing files {differing:?}"
        ),
    )
}

fn main() {
    let lex = Lexicon::builtin();
    let mut results: Vec<(u8, Outcome)> = Vec::new();
    let mut report = |id: u8, outcome: Outcome| {
        match &outcome {
            Ok(d) => println!("criterion {id:2}: PASS  {d}"),
            Err(d) => println!("criterion {id:2}: FAIL  {d}"),
        }
        results.push((id, outcome));
    };

    report(1, gradients());
    report(2, anchors());
    report(3, perturbations(&lex));

    let seven = train_toy(7, Variant::Comb);
    let comb: Vec<Result<Trained, String>> = vec![train_toy(7, Variant::Comb), train_toy(8, Variant::Comb), train_toy(9, Variant::Comb)];
    match (&seven, &comb[0]) {
        (Ok(a), Ok(b)) => report(4, toy_training(a, &b.test)),
        (Err(e), _) | (_, Err(e)) => report(4, Err(e.clone())),
    }
    let comb_metrics: Result<Vec<(u64, Metrics)>, String> =
        comb.iter().zip([7, 8, 9]).map(|(t, s)| t.as_ref().map(|t| (s, t.test.clone())).map_err(Clone::clone)).collect();
    report(5, comb_metrics.and_then(|m| ablation(&m)));
    report(6, fc_oracle());
    match seven.as_ref().map_err(Clone::clone).and_then(assessment) {
        Ok((conc, improved)) => {
            report(7, conc);
            report(8, improved);
        }
        Err(e) => {
            report(7, Err(e.clone()));
            report(8, Err(e));
        }
    }
    report(9, flagged_clause_removal(&lex));
    report(10, seven.as_ref().map_err(Clone::clone).and_then(|t| reproducibility(t, &lex)));

    let failed: Vec<u8> = results.iter().filter(|(_, o)| o.is_err()).map(|(id, _)| *id).collect();
    println!("acceptance: {} passed, {} failed {failed:?}", results.len() - failed.len(), failed.len());
    if !failed.is_empty() && std::env::var("FCRX_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
