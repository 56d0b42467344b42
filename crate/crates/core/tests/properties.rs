use std::collections::BTreeSet;
use std::sync::OnceLock;

use proptest::prelude::*;
use rand::Rng as _;

use fcrx_core::atlas::{build_pools, RegionMap};
use fcrx_core::bbox::{iou, BBox};
use fcrx_core::eval::{bleu, split_dataset, toy_model_config, ToyWorld, ToyWorldConfig};
use fcrx_core::lexicon::{extract_ffl, parse_ffl, serialize_ffl, FflPattern, FindingType, Lexicon, Polarity};
use fcrx_core::model::{train, Checkpoint};
use fcrx_core::pipeline::{correct_report, fc_score, FcRecord, FcReport, OfflineReformer, ScoreMode};
use fcrx_core::rng::seeded;
use fcrx_core::synth::{real_samples, relocate, substitute};
use fcrx_core::toy::{generate, ToyConfig};

fn lex() -> &'static Lexicon {
    static LEX: OnceLock<Lexicon> = OnceLock::new();
    LEX.get_or_init(Lexicon::builtin)
}

fn arb_box() -> impl Strategy<Value = BBox> {
    prop_oneof![
        1 => Just(BBox::ZERO),
        5 => (0.0..0.8f64, 0.0..0.8f64, 0.01..0.2f64, 0.01..0.2f64).prop_map(|(x, y, w, h)| BBox { x, y, w, h }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ffl_serialization_round_trips(fi in 0usize..1000, ri in proptest::option::of(0usize..1000), ti in 0usize..4, yes: bool) {
        let findings: Vec<&str> = lex().finding_names().collect();
        let regions: Vec<&str> = lex().region_names().collect();
        let kinds = [FindingType::Finding, FindingType::Disease, FindingType::Device, FindingType::Technical];
        let p = FflPattern {
            kind: kinds[ti],
            polarity: if yes { Polarity::Yes } else { Polarity::No },
            finding: findings[fi % findings.len()].to_string(),
            anatomy: ri.map(|r| regions[r % regions.len()].to_string()),
            spans: Vec::new(),
        };
        let text = serialize_ffl(&p);
        let back = parse_ffl(&text, lex()).unwrap();
        prop_assert_eq!(&back, &p);
        prop_assert_eq!(serialize_ffl(&back), text);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        let v = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn bleu_is_bounded_and_one_on_identity(c in proptest::collection::vec(0usize..6, 0..20), r in proptest::collection::vec(0usize..6, 1..20)) {
        let words = ["no", "effusion", "left", "lung", ",", "."];
        let cand = c.iter().map(|i| words[*i]).collect::<Vec<_>>().join(" ");
        let refr = r.iter().map(|i| words[*i]).collect::<Vec<_>>().join(" ");
        let v = bleu(&cand, &refr, 4);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(bleu(&refr, &refr, 4), 1.0);
    }

    #[test]
    fn splits_are_seeded_partitions(n in 0usize..300, folds in 1usize..12, seed: u64) {
        let items: Vec<usize> = (0..n).collect();
        let splits = split_dataset(&items, [0.7, 0.1, 0.2], folds, seed).unwrap();
        prop_assert_eq!(splits.len(), folds);
        prop_assert_eq!(&splits, &split_dataset(&items, [0.7, 0.1, 0.2], folds, seed).unwrap());
        for s in &splits {
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            prop_assert_eq!(all.len(), n);
            all.sort_unstable();
            prop_assert_eq!(&all, &items);
        }
    }

    #[test]
    fn correction_leaves_unflagged_sentences_byte_identical(
        picks in proptest::collection::vec(0usize..7, 1..7),
        flags in proptest::collection::vec(any::<bool>(), 16),
    ) {
        let pool = [
            "There is a small left pleural effusion.",
            "No pneumothorax.",
            "Heart size is normal.",
            "Mild atelectasis at the right base, and small effusion.",
            "The osseous structures are intact.",
            "Left-sided pleural effusion found, atelectasis still remains.",
            "Cardiomegaly  is   present;",
        ];
        let report = picks.iter().map(|i| pool[*i]).collect::<Vec<_>>().join(" ");
        let records: Vec<FcRecord> = extract_ffl(&report, lex())
            .into_iter()
            .enumerate()
            .map(|(i, p)| FcRecord {
                label: p.to_string(),
                sentence: p.sentence(),
                spans: p.spans.clone(),
                pattern: p,
                indicated: BBox::ZERO,
                predicted: BBox::ZERO,
                raw_predicted: BBox::ZERO,
                verdict: flags[i % flags.len()],
                e_hat: 0.5,
            })
            .collect();
        let flagged: BTreeSet<usize> = records.iter().filter(|r| !r.verdict).flat_map(|r| r.spans.iter().map(|s| s.sentence)).collect();
        let fc = FcReport { image_id: "x".into(), records, fc_score: None, corrected_text: None, diagnostics: Default::default() };
        let out = correct_report(&report, &fc, &OfflineReformer).text;
        if flagged.is_empty() {
            prop_assert_eq!(&out, &report);
        }
        let sentences = fcrx_core::lexicon::split_sentences(&report);
        let mut from = 0;
        for (i, s) in sentences.iter().enumerate() {
            if flagged.contains(&i) {
                continue;
            }
            let text = &report[s.start..s.end];
            let at = out[from..].find(text);
            prop_assert!(at.is_some(), "sentence {} {:?} missing from {:?}", i, text, out);
            from += at.unwrap() + text.len();
        }
    }
}

/// IoU by enumerating the cells of the grid spanned by both boxes' edges.
fn cell_iou(a: &BBox, b: &BBox) -> f64 {
    match (a.is_zero(), b.is_zero()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut xs = vec![a.x, a.x + a.w, b.x, b.x + b.w];
    let mut ys = vec![a.y, a.y + a.h, b.y, b.y + b.h];
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

#[test]
fn fc_score_matches_cell_enumeration_on_random_sets() {
    let mut rng = seeded(2024);
    let random_box = |rng: &mut fcrx_core::rng::Rng| {
        if rng.random_bool(0.2) {
            BBox::ZERO
        } else {
            BBox { x: rng.random_range(0.0..0.8), y: rng.random_range(0.0..0.8), w: rng.random_range(0.01..0.2), h: rng.random_range(0.01..0.2) }
        }
    };
    let pattern = parse_ffl("yes|edema", lex()).unwrap();
    let mut worst: f64 = 0.0;
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
        let oracle = 0.5 * (real + overlap);
        worst = worst.max((fc_score(&records, ScoreMode::Fraction).unwrap() - oracle).abs());
    }
    assert!(worst <= 1e-9, "max abs diff {worst}");
}

#[test]
fn perturbations_respect_pools_over_1000_draws() {
    let corpus = generate(&ToyConfig::default(), 11);
    let regions = RegionMap::from_records(&corpus.annotations, lex()).unwrap();
    let (samples, _) = real_samples(&corpus.reports(), &regions, lex()).unwrap();
    let pools = build_pools(&samples);
    let present: Vec<(usize, usize)> = samples
        .iter()
        .enumerate()
        .flat_map(|(si, s)| s.real_pairs.iter().enumerate().filter(|(_, p)| p.finding.polarity == Polarity::Yes).map(move |(pi, _)| (si, pi)))
        .collect();
    let mut rng = seeded(99);
    let in_pool = |name: &str, b: &BBox| pools.get(name).iter().any(|p| p.to_array().map(f64::to_bits) == b.to_array().map(f64::to_bits));
    let (mut violations, mut relocated, mut substituted) = (0, 0, 0);
    for _ in 0..1000 {
        let (si, pi) = present[rng.random_range(0..present.len())];
        let s = &samples[si];
        let pair = &s.real_pairs[pi];
        if let Ok(f) = relocate(pair, pi, &pools, 0.5, &mut rng) {
            relocated += 1;
            let collides = s.real_pairs.iter().any(|r| r.finding == f.finding && r.location == f.location);
            if !in_pool(&f.finding.name, &f.location) || iou(&f.location, &pair.location) > 0.5 || collides || f.real {
                violations += 1;
            }
        }
        let names = s.real_names();
        if let Ok(f) = substitute(pair, pi, &names, &pools, &mut rng) {
            substituted += 1;
            if names.contains(f.finding.name.as_str()) || !in_pool(&f.finding.name, &f.location) || f.finding.polarity != Polarity::Yes {
                violations += 1;
            }
        }
    }
    assert_eq!(violations, 0);
    assert!(relocated > 900 && substituted > 900, "{relocated} relocations, {substituted} substitutions");
}

#[test]
fn checkpoint_round_trip_predicts_bit_identically() {
    let config = ToyWorldConfig { toy: ToyConfig { n_images: 40, ..Default::default() }, ..Default::default() };
    let world = ToyWorld::build(&config, 5).unwrap();
    let model = fcrx_core::model::ModelConfig { epochs: 2, ..toy_model_config() };
    let ckpt = train(&world.train_samples(), world.featurizer.clone(), &model, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    for (name, same) in [
        ("config", back.config == ckpt.config),
        ("featurizer", back.featurizer == ckpt.featurizer),
        ("params", back.params == ckpt.params),
        ("optimizer", back.optimizer == ckpt.optimizer),
        ("log", back.log == ckpt.log),
        ("scalars", (back.step, back.total_steps, back.rng_word_pos) == (ckpt.step, ckpt.total_steps, ckpt.rng_word_pos)),
    ] {
        assert!(same, "{name} differs after reload");
    }
    assert!(back == ckpt);
    assert_eq!(back.to_json().unwrap(), ckpt.to_json().unwrap());
    for s in world.test_samples() {
        for p in s.pairs() {
            let a = ckpt.predict(&s.image_id, &p.finding, p.location).unwrap();
            let b = back.predict(&s.image_id, &p.finding, p.location).unwrap();
            assert_eq!(a.e_hat.to_bits(), b.e_hat.to_bits());
            assert_eq!(a.bbox.to_array().map(f64::to_bits), b.bbox.to_array().map(f64::to_bits));
        }
    }
}
