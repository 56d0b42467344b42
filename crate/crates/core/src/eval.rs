//! Report quality metrics, dataset splits, the assessment runner, and the
//! toy world used for end-to-end runs.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::atlas::{build_pools, read_jsonl, write_jsonl, RegionMap};
use crate::error::{Error, Result};
use crate::featurize::{Featurizer, PlantedSignal, TextEncoder};
use crate::lexicon::Lexicon;
use crate::model::{Checkpoint, ModelConfig};
use crate::pipeline::{
    check_report, correct_report, fc_score_against_ground_truth, ground_truth_pairs, Rewriter, ScoreMode,
};
use crate::rng::stream;
use crate::synth::{generate_dataset, real_samples, GenerationReport, Sample, SynthConfig};
use crate::toy::{generate, CorpusRecord, ToyConfig, ToyCorpus};

// ---------------------------------------------------------------------------
// BLEU
// ---------------------------------------------------------------------------

/// Lowercased alphanumeric runs; every other non-space character is a token
/// of its own.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for g in tokens.windows(n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

/// Sentence-level BLEU with clipped precisions and a brevity penalty. For
/// `n >= 2`, an order with no matches counts as `1 / (total + 1)`.
pub fn bleu(candidate: &str, reference: &str, max_n: usize) -> f64 {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    if c.is_empty() || r.is_empty() || max_n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cand = ngram_counts(&c, n);
        let refc = ngram_counts(&r, n);
        let total: usize = cand.values().sum();
        let matched: usize = cand.iter().map(|(g, k)| (*k).min(refc.get(g).copied().unwrap_or(0))).sum();
        let p = if matched > 0 {
            matched as f64 / total as f64
        } else if n == 1 {
            return 0.0;
        } else {
            1.0 / (total as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let (cl, rl) = (c.len() as f64, r.len() as f64);
    let bp = if cl > rl { 1.0 } else { (1.0 - rl / cl).exp() };
    bp * (log_sum / max_n as f64).exp()
}

/// A report metric that needs an external model; always reports itself as
/// unavailable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalMetric {
    pub name: String,
}

impl ExternalMetric {
    pub fn score(&self, _candidate: &str, _reference: &str) -> Result<f64> {
        Err(Error::ExternalMetric(self.name.clone()))
    }
}

pub fn external_metrics() -> Vec<ExternalMetric> {
    ["chexbert", "radgraph"].into_iter().map(|name| ExternalMetric { name: name.into() }).collect()
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split<T> {
    pub fold: usize,
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// One train/val/test partition per fold. Items are shuffled once by `seed`;
/// fold `k` rotates the shuffled order by `k * n / folds` before cutting.
pub fn split_dataset<T: Clone>(items: &[T], ratios: [f64; 3], folds: usize, seed: u64) -> Result<Vec<Split<T>>> {
    if folds == 0 || ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument("ratios must be non-negative and sum to 1; folds must be positive".into()));
    }
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, "split"));
    let n_train = (ratios[0] * n as f64).round() as usize;
    let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    Ok((0..folds)
        .map(|k| {
            let mut rotated = order.clone();
            rotated.rotate_left(if n == 0 { 0 } else { k * n / folds % n });
            let pick = |ix: &[usize]| ix.iter().map(|&i| items[i].clone()).collect::<Vec<T>>();
            Split {
                fold: k,
                train: pick(&rotated[..n_train]),
                val: pick(&rotated[n_train..n_train + n_val]),
                test: pick(&rotated[n_train + n_val..]),
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Assessment
// ---------------------------------------------------------------------------

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusRecord>> {
    read_jsonl(path)
}

pub fn write_corpus(path: impl AsRef<Path>, records: &[CorpusRecord]) -> Result<()> {
    write_jsonl(path, records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportAssessment {
    pub image_id: String,
    pub automated: String,
    pub corrected: String,
    pub ground_truth: String,
    pub findings: usize,
    pub flagged: usize,
    pub fc_ap: Option<f64>,
    pub fc_ag: Option<f64>,
    pub fc_corrected: Option<f64>,
    pub bleu_ag: f64,
    pub bleu_cg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub ag: Option<f64>,
    pub cg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unavailable: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub corpus_id: String,
    pub reports: Vec<ReportAssessment>,
    pub table: Vec<MetricRow>,
    pub mean_fc_ap: f64,
    pub mean_fc_ag: f64,
    pub mean_fc_original: f64,
    pub mean_fc_corrected: f64,
    pub mean_bleu_ag: f64,
    pub mean_bleu_cg: f64,
    /// Mean over reports of `|FC(A,P) - FC(A,G)|`, where both are defined.
    pub concordance: f64,
    /// `|mean FC(A,P) - mean FC(A,G)|` over the same reports.
    pub concordance_of_means: f64,
    pub concordance_reports: usize,
    /// Mean relative change from `(A,G)` to `(C,G)` over available metrics.
    pub improvement: f64,
    pub rewriter_failures: usize,
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Scores, corrects and re-scores every automated report in `corpus`.
pub fn run_assessment(
    corpus_id: &str,
    corpus: &[CorpusRecord],
    ckpt: &Checkpoint,
    lexicon: &Lexicon,
    regions: &RegionMap,
    rewriter: &dyn Rewriter,
    mode: ScoreMode,
) -> Result<EvalRun> {
    let mut reports = Vec::with_capacity(corpus.len());
    let mut failures = 0;
    for rec in corpus {
        let mut fc = check_report(&rec.automated_report, &rec.image_id, ckpt, lexicon, regions)?;
        let gt = ground_truth_pairs(&rec.ground_truth_report, &rec.image_id, lexicon, regions)?;
        let fc_ap = crate::pipeline::fc_score(&fc.records, mode);
        let fc_ag = fc_score_against_ground_truth(&fc.records, &gt, mode);
        let correction = correct_report(&rec.automated_report, &fc, rewriter);
        failures += correction.rewriter_failures.len();
        fc.corrected_text = Some(correction.text.clone());
        let after = check_report(&correction.text, &rec.image_id, ckpt, lexicon, regions)?;
        reports.push(ReportAssessment {
            image_id: rec.image_id.clone(),
            automated: rec.automated_report.clone(),
            corrected: correction.text.clone(),
            ground_truth: rec.ground_truth_report.clone(),
            findings: fc.records.len(),
            flagged: fc.flagged().count(),
            fc_ap,
            fc_ag,
            fc_corrected: crate::pipeline::fc_score(&after.records, mode),
            bleu_ag: bleu(&rec.automated_report, &rec.ground_truth_report, 4),
            bleu_cg: bleu(&correction.text, &rec.ground_truth_report, 4),
        });
    }
    let both: Vec<(f64, f64)> = reports.iter().filter_map(|r| Some((r.fc_ap?, r.fc_ag?))).collect();
    let mean_bleu_ag = mean(reports.iter().map(|r| r.bleu_ag));
    let mean_bleu_cg = mean(reports.iter().map(|r| r.bleu_cg));
    let scored: Vec<(f64, f64)> = reports.iter().filter_map(|r| Some((r.fc_ap?, r.fc_corrected?))).collect();

    let mut table = vec![
        MetricRow { metric: "bleu".into(), ag: Some(mean_bleu_ag), cg: Some(mean_bleu_cg), unavailable: None },
        MetricRow {
            metric: "fc_score_ap".into(),
            ag: Some(mean(reports.iter().filter_map(|r| r.fc_ap))),
            cg: None,
            unavailable: None,
        },
        MetricRow {
            metric: "fc_score_ag".into(),
            ag: Some(mean(reports.iter().filter_map(|r| r.fc_ag))),
            cg: None,
            unavailable: None,
        },
    ];
    for m in external_metrics() {
        let err = m.score("", "").err().map(|e| e.to_string());
        table.push(MetricRow { metric: m.name, ag: None, cg: None, unavailable: err });
    }
    let gains: Vec<f64> = table
        .iter()
        .filter_map(|row| match (row.ag, row.cg) {
            (Some(a), Some(c)) if a > 0.0 => Some((c - a) / a),
            _ => None,
        })
        .collect();

    Ok(EvalRun {
        corpus_id: corpus_id.to_string(),
        mean_fc_ap: mean(both.iter().map(|b| b.0)),
        mean_fc_ag: mean(both.iter().map(|b| b.1)),
        mean_fc_original: mean(scored.iter().map(|s| s.0)),
        mean_fc_corrected: mean(scored.iter().map(|s| s.1)),
        mean_bleu_ag,
        mean_bleu_cg,
        concordance: mean(both.iter().map(|(p, g)| (p - g).abs())),
        concordance_of_means: (mean(both.iter().map(|b| b.0)) - mean(both.iter().map(|b| b.1))).abs(),
        concordance_reports: both.len(),
        improvement: mean(gains),
        rewriter_failures: failures,
        reports,
        table,
    })
}

// ---------------------------------------------------------------------------
// Toy world
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyWorldConfig {
    pub toy: ToyConfig,
    pub synth: SynthConfig,
    pub image_dim: usize,
    pub text_dim: usize,
    pub slot_gain: f64,
    pub noise: f64,
    pub nuisance_dim: usize,
    pub nuisance_scale: f64,
    pub box_gain: f64,
    pub grid: usize,
    pub occupancy: usize,
    pub ratios: [f64; 3],
    pub folds: usize,
    pub fold: usize,
}

impl Default for ToyWorldConfig {
    fn default() -> Self {
        ToyWorldConfig {
            toy: ToyConfig::default(),
            synth: SynthConfig::default(),
            image_dim: 156,
            text_dim: 156,
            slot_gain: 1.0,
            noise: 0.0,
            nuisance_dim: 0,
            nuisance_scale: 1.0,
            box_gain: 1.0,
            grid: 0,
            occupancy: 6,
            ratios: [0.7, 0.1, 0.2],
            folds: 10,
            fold: 0,
        }
    }
}

/// Model settings sized for the toy world.
pub fn toy_model_config() -> ModelConfig {
    ModelConfig {
        proj_dim: 64,
        hidden: vec![128, 64],
        max_lr: 0.01,
        dropout: 0.0,
        normalize_regressor_input: false,
        ..ModelConfig::default()
    }
}

/// Everything an end-to-end toy run needs, built from one seed.
#[derive(Debug, Clone)]
pub struct ToyWorld {
    pub corpus: ToyCorpus,
    pub lexicon: Lexicon,
    pub regions: RegionMap,
    /// Real pairs from the ground-truth reports plus generated fakes.
    pub samples: Vec<Sample>,
    pub generation: GenerationReport,
    pub featurizer: Featurizer,
    pub split: Split<usize>,
}

impl ToyWorld {
    pub fn build(config: &ToyWorldConfig, seed: u64) -> Result<Self> {
        let lexicon = Lexicon::builtin();
        let corpus = generate(&config.toy, seed);
        let regions = RegionMap::from_records(&corpus.annotations, &lexicon)?;
        let (reals, _) = real_samples(&corpus.reports(), &regions, &lexicon)?;
        let pools = build_pools(&reals);
        let (samples, generation) = generate_dataset(&reals, &pools, &config.synth, seed);
        let planted = PlantedSignal {
            seed,
            image_dim: config.image_dim,
            findings: PlantedSignal::vocabulary(&reals),
            slot_gain: config.slot_gain,
            noise: config.noise,
            nuisance_dim: config.nuisance_dim,
            nuisance_scale: config.nuisance_scale,
            grid: config.grid,
            occupancy: config.occupancy,
        };
        let images = planted.embed_samples(&reals);
        let text = TextEncoder::slotted(config.text_dim, seed, config.box_gain, planted.findings.clone(), config.grid, config.occupancy);
        let featurizer = Featurizer { planted: Some(planted), images, text };
        let index: Vec<usize> = (0..samples.len()).collect();
        let splits = split_dataset(&index, config.ratios, config.folds, seed)?;
        let split = splits
            .into_iter()
            .nth(config.fold)
            .ok_or_else(|| Error::InvalidArgument(format!("fold {} of {}", config.fold, config.folds)))?;
        Ok(ToyWorld { corpus, lexicon, regions, samples, generation, featurizer, split })
    }

    fn pick(&self, ix: &[usize]) -> Vec<Sample> {
        ix.iter().map(|&i| self.samples[i].clone()).collect()
    }

    pub fn train_samples(&self) -> Vec<Sample> {
        self.pick(&self.split.train)
    }

    pub fn val_samples(&self) -> Vec<Sample> {
        self.pick(&self.split.val)
    }

    pub fn test_samples(&self) -> Vec<Sample> {
        self.pick(&self.split.test)
    }

    /// Automated/ground-truth report pairs of the test images.
    pub fn test_corpus(&self) -> Vec<CorpusRecord> {
        let all = self.corpus.corpus();
        self.split.test.iter().map(|&i| all[i].clone()).collect()
    }
}
