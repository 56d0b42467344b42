//! Report-level inference: extract findings, locate them, ask the model, score
//! the report and rewrite the sentences carrying flagged findings.

use std::collections::BTreeSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::atlas::{indicated_location, RegionMap};
use crate::bbox::{iou, BBox};
use crate::error::{Error, Result};
use crate::lexicon::{extract_ffl_with_diagnostics, split_sentences, FflPattern, Lexicon, Polarity, Sentence, WordSpan};
use crate::model::Checkpoint;
use crate::synth::Finding;

/// Predicted boxes smaller than this in both sides are read as "no location".
pub const SNAP_BELOW: f64 = 0.05;

pub const REWRITE_PROMPT: &str = "Please make this a well-formed sentence";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcRecord {
    pub pattern: FflPattern,
    pub label: String,
    pub sentence: Option<usize>,
    pub spans: Vec<WordSpan>,
    /// Where the report puts the finding.
    pub indicated: BBox,
    /// Where the model puts it, after snapping tiny boxes to zero.
    pub predicted: BBox,
    pub raw_predicted: BBox,
    pub verdict: bool,
    pub e_hat: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub skipped_candidates: usize,
    /// Patterns whose anatomy is not annotated for the image.
    pub unlocatable: Vec<String>,
    pub snapped: usize,
    pub rewriter: Option<String>,
    pub rewriter_failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcReport {
    pub image_id: String,
    pub records: Vec<FcRecord>,
    /// `None` when nothing was extracted.
    pub fc_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_text: Option<String>,
    pub diagnostics: Diagnostics,
}

impl FcReport {
    pub fn flagged(&self) -> impl Iterator<Item = &FcRecord> {
        self.records.iter().filter(|r| !r.verdict)
    }
}

/// How the first term of the score is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Fraction of records judged real.
    #[default]
    Fraction,
    /// Real count over the sum of verdicts: 1 if any record is real, else 0.
    Literal,
}

/// One scored item: verdict, indicated box, reference box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreItem {
    pub verdict: bool,
    pub indicated: BBox,
    pub reference: BBox,
}

/// Half the real fraction plus half the mean of `IoU / 2`. `None` if empty.
pub fn fc_score_items(items: &[ScoreItem], mode: ScoreMode) -> Option<f64> {
    if items.is_empty() {
        return None;
    }
    let n = items.len() as f64;
    let real = items.iter().filter(|i| i.verdict).count() as f64;
    let first = match mode {
        ScoreMode::Fraction => real / n,
        ScoreMode::Literal => {
            if real > 0.0 {
                1.0
            } else {
                0.0
            }
        }
    };
    let overlap: f64 = items.iter().map(|i| iou(&i.indicated, &i.reference) / 2.0).sum::<f64>() / n;
    Some(0.5 * (first + overlap))
}

pub fn fc_score(records: &[FcRecord], mode: ScoreMode) -> Option<f64> {
    let items: Vec<ScoreItem> =
        records.iter().map(|r| ScoreItem { verdict: r.verdict, indicated: r.indicated, reference: r.predicted }).collect();
    fc_score_items(&items, mode)
}

/// Tiny predicted boxes mean "nowhere".
pub fn snap(b: BBox) -> BBox {
    if b.w < SNAP_BELOW && b.h < SNAP_BELOW {
        BBox::ZERO
    } else {
        b
    }
}

/// Extracts, locates and verifies every finding of `report`.
pub fn check_report(
    report: &str,
    image_id: &str,
    ckpt: &Checkpoint,
    lexicon: &Lexicon,
    regions: &RegionMap,
) -> Result<FcReport> {
    let (patterns, extract) = extract_ffl_with_diagnostics(report, lexicon);
    let mut diagnostics = Diagnostics { skipped_candidates: extract.skipped_candidates, ..Default::default() };
    let mut queries = Vec::with_capacity(patterns.len());
    for p in &patterns {
        let loc = indicated_location(p, image_id, regions, lexicon)?;
        if loc.is_unlocatable() {
            diagnostics.unlocatable.push(p.to_string());
        }
        queries.push((Finding::new(p.polarity, p.finding.clone()), loc.bbox()));
    }
    let preds = ckpt.predict_many(image_id, &queries)?;
    let mut records = Vec::with_capacity(patterns.len());
    for ((p, (_, indicated)), pred) in patterns.into_iter().zip(queries).zip(preds) {
        let predicted = snap(pred.bbox);
        if predicted != pred.bbox {
            diagnostics.snapped += 1;
        }
        records.push(FcRecord {
            label: p.to_string(),
            sentence: p.sentence(),
            spans: p.spans.clone(),
            pattern: p,
            indicated,
            predicted,
            raw_predicted: pred.bbox,
            verdict: pred.verdict(),
            e_hat: pred.e_hat,
        });
    }
    let fc_score = fc_score(&records, ScoreMode::Fraction);
    Ok(FcReport { image_id: image_id.to_string(), records, fc_score, corrected_text: None, diagnostics })
}

/// A ground-truth finding with its location in the image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthPair {
    pub pattern: FflPattern,
    pub bbox: BBox,
}

/// Ground-truth pairs of a reference report.
pub fn ground_truth_pairs(
    report: &str,
    image_id: &str,
    lexicon: &Lexicon,
    regions: &RegionMap,
) -> Result<Vec<GroundTruthPair>> {
    let (patterns, _) = extract_ffl_with_diagnostics(report, lexicon);
    patterns
        .into_iter()
        .map(|p| {
            let bbox = indicated_location(&p, image_id, regions, lexicon)?.bbox();
            Ok(GroundTruthPair { pattern: p, bbox })
        })
        .collect()
}

/// Same polarity and finding; anatomy only compared when both sides name one.
pub fn matches_ground_truth(a: &FflPattern, g: &FflPattern) -> bool {
    a.polarity == g.polarity
        && a.finding == g.finding
        && match (&a.anatomy, &g.anatomy) {
            (Some(x), Some(y)) => x == y,
            _ => true,
        }
}

/// The score with the model replaced by the reference report.
///
/// A record is real when some ground-truth finding matches it. Its reference
/// box is the matched finding's box; for unmatched present findings that the
/// reference places elsewhere it is the reference box of that finding, and
/// otherwise the zero box. `None` when no record matches the reference.
pub fn fc_score_against_ground_truth(records: &[FcRecord], gt: &[GroundTruthPair], mode: ScoreMode) -> Option<f64> {
    let items = ground_truth_items(records, gt);
    if !items.iter().any(|i| i.verdict) {
        return None;
    }
    fc_score_items(&items, mode)
}

pub fn ground_truth_items(records: &[FcRecord], gt: &[GroundTruthPair]) -> Vec<ScoreItem> {
    records
        .iter()
        .map(|r| {
            let a = &r.pattern;
            let matched = gt.iter().find(|g| matches_ground_truth(a, &g.pattern));
            let reference = match matched {
                Some(g) => g.bbox,
                None if a.polarity == Polarity::Yes => {
                    let boxes: Vec<&BBox> = gt
                        .iter()
                        .filter(|g| g.pattern.polarity == Polarity::Yes && g.pattern.finding == a.finding)
                        .map(|g| &g.bbox)
                        .collect();
                    if boxes.is_empty() {
                        BBox::ZERO
                    } else {
                        BBox::union_all(boxes)
                    }
                }
                None => BBox::ZERO,
            };
            ScoreItem { verdict: matched.is_some(), indicated: r.indicated, reference }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Correction
// ---------------------------------------------------------------------------

/// One request, one reply.
pub trait Rewriter {
    fn name(&self) -> String;
    fn rewrite(&self, prompt: &str, fragment: &str) -> Result<String>;
}

const CONJUNCTIONS: &[&str] = &["and", "or", "but", "with", "while", "whereas", "although", "though", "nor", "also"];

/// Function words that do not make a fragment worth keeping on their own.
const FUNCTION_WORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "with", "while", "whereas", "although", "though", "nor", "also", "is",
    "are", "was", "were", "be", "been", "of", "in", "on", "at", "to", "there", "this", "that", "which", "as", "for",
    "by", "seen", "noted", "found", "present", "no", "not", "without", "any", "still", "sided",
];

/// Deterministic stand-in for a language model: trims dangling conjunctions
/// and commas at both ends, capitalizes, and ends with a period.
#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineReformer;

impl Rewriter for OfflineReformer {
    fn name(&self) -> String {
        "offline".to_string()
    }

    fn rewrite(&self, _prompt: &str, fragment: &str) -> Result<String> {
        Ok(reform(fragment))
    }
}

pub fn reform(fragment: &str) -> String {
    let is_punct = |c: char| matches!(c, ',' | ';' | ':' | '.' | '-') || c.is_whitespace();
    let mut words: Vec<&str> = fragment.split_whitespace().collect();
    loop {
        let before = words.len();
        while let Some(w) = words.first() {
            let bare = w.trim_matches(is_punct);
            if bare.is_empty() || CONJUNCTIONS.contains(&bare.to_lowercase().as_str()) {
                words.remove(0);
            } else {
                break;
            }
        }
        while let Some(w) = words.last() {
            let bare = w.trim_matches(is_punct);
            if bare.is_empty() || CONJUNCTIONS.contains(&bare.to_lowercase().as_str()) {
                words.pop();
            } else {
                break;
            }
        }
        if words.len() == before {
            break;
        }
    }
    let mut text = words.join(" ");
    let trimmed = text.trim_start_matches(is_punct).trim_end_matches(is_punct).to_string();
    text = trimmed;
    if text.is_empty() {
        return text;
    }
    let mut chars = text.chars();
    let first = chars.next().map(|c| c.to_uppercase().collect::<String>()).unwrap_or_default();
    format!("{first}{}.", chars.as_str())
}

/// Sends `{model, prompt, fragment}` as JSON and reads `{text}` back.
#[derive(Debug, Clone)]
pub struct HttpRewriter {
    pub url: String,
    pub model: Option<String>,
    pub key: Option<String>,
    pub timeout: Duration,
    /// Passed through untouched (temperature and the like).
    pub options: serde_json::Value,
}

#[derive(Serialize)]
struct RewriteRequest<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
    prompt: &'a str,
    fragment: &'a str,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    options: &'a serde_json::Value,
}

#[derive(Deserialize)]
struct RewriteReply {
    text: String,
}

impl HttpRewriter {
    /// From `FCRX_REWRITER_URL`, `FCRX_REWRITER_MODEL`, `FCRX_REWRITER_KEY`.
    /// `None` when no URL is set.
    pub fn from_env() -> Option<Self> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        Some(HttpRewriter {
            url: var("FCRX_REWRITER_URL")?,
            model: var("FCRX_REWRITER_MODEL"),
            key: var("FCRX_REWRITER_KEY"),
            timeout: Duration::from_secs(60),
            options: serde_json::Value::Null,
        })
    }
}

impl Rewriter for HttpRewriter {
    fn name(&self) -> String {
        format!("http:{}", self.url)
    }

    fn rewrite(&self, prompt: &str, fragment: &str) -> Result<String> {
        let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(self.timeout)).build().into();
        let body = RewriteRequest { model: self.model.as_deref(), prompt, fragment, options: &self.options };
        let mut req = agent.post(&self.url);
        if let Some(k) = &self.key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| Error::Rewriter(e.to_string()))?;
        let reply: RewriteReply = resp.body_mut().read_json().map_err(|e| Error::Rewriter(e.to_string()))?;
        let text = reply.text.trim().to_string();
        if text.is_empty() {
            return Err(Error::Rewriter("empty reply".into()));
        }
        Ok(text)
    }
}

/// What correction did to one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceEdit {
    pub sentence: usize,
    pub original: String,
    pub fragment: String,
    /// `None` when the sentence was dropped.
    pub replacement: Option<String>,
    pub rewriter: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub text: String,
    pub edits: Vec<SentenceEdit>,
    pub rewriter_failures: Vec<String>,
}

/// Text of `sentence` with the given word indices removed. Kept words that
/// were adjacent keep their original separator; a removed run leaves the
/// separator that preceded it.
pub fn remove_words(text: &str, sentence: &Sentence, removed: &BTreeSet<usize>) -> String {
    let words = &sentence.words;
    let mut out = String::new();
    let mut prev: Option<usize> = None;
    for (i, w) in words.iter().enumerate() {
        if removed.contains(&i) {
            continue;
        }
        if let Some(p) = prev {
            if p + 1 == i {
                out.push_str(&text[words[p].end..w.start]);
            } else {
                let gap = &text[words[p].end..words[p + 1].start];
                out.push_str(if gap.trim().is_empty() { " " } else { gap });
            }
        }
        out.push_str(&text[w.start..w.end]);
        prev = Some(i);
    }
    out
}

fn has_content(fragment: &str) -> bool {
    fragment
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .any(|w| !FUNCTION_WORDS.contains(&w.to_lowercase().as_str()))
}

/// Rewrites every sentence holding a flagged finding; other sentences are
/// left byte for byte. Falls back to [`OfflineReformer`] if `rewriter` fails.
pub fn correct_report(report: &str, fc: &FcReport, rewriter: &dyn Rewriter) -> Correction {
    let sentences = split_sentences(report);
    let mut flagged: std::collections::BTreeMap<usize, BTreeSet<usize>> = Default::default();
    for r in fc.flagged() {
        for s in &r.spans {
            flagged.entry(s.sentence).or_default().extend(s.start..s.end);
        }
    }
    let mut out = String::new();
    let mut cursor = 0;
    let mut edits = Vec::new();
    let mut failures = Vec::new();
    for (si, removed) in &flagged {
        let Some(sentence) = sentences.get(*si) else { continue };
        let fragment = remove_words(report, sentence, removed);
        let (replacement, used) = if has_content(&fragment) {
            match rewriter.rewrite(REWRITE_PROMPT, &fragment) {
                Ok(t) => (Some(t), rewriter.name()),
                Err(e) => {
                    failures.push(format!("sentence {si}: {e}"));
                    (Some(reform(&fragment)), OfflineReformer.name())
                }
            }
        } else {
            (None, String::new())
        };
        out.push_str(&report[cursor..sentence.start]);
        cursor = sentence.end;
        match &replacement {
            Some(t) if !t.is_empty() => out.push_str(t),
            _ => {
                // Dropped: also swallow the whitespace that followed it.
                let rest = &report[cursor..];
                cursor += rest.len() - rest.trim_start().len();
                if cursor == report.len() {
                    let kept = out.trim_end().len();
                    out.truncate(kept);
                }
            }
        }
        edits.push(SentenceEdit {
            sentence: *si,
            original: report[sentence.start..sentence.end].to_string(),
            fragment,
            replacement: replacement.filter(|t| !t.is_empty()),
            rewriter: used,
        });
    }
    out.push_str(&report[cursor..]);
    Correction { text: out, edits, rewriter_failures: failures }
}

// ---------------------------------------------------------------------------
// Explanation artifact
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub role: String,
    pub color: String,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainedRecord {
    pub label: String,
    pub sentence: Option<usize>,
    pub verdict: String,
    pub e_hat: f64,
    pub overlays: Vec<Overlay>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub image_id: String,
    pub fc_score: Option<f64>,
    pub records: Vec<ExplainedRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_text: Option<String>,
    pub diagnostics: Diagnostics,
}

/// Geometry for drawing: predicted in green, ground truth in red, indicated
/// in yellow.
pub fn explain(fc: &FcReport, gt: Option<&[GroundTruthPair]>) -> Explanation {
    let gt_items = gt.map(|g| ground_truth_items(&fc.records, g));
    let records = fc
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut overlays = vec![
                Overlay { role: "indicated".into(), color: "yellow".into(), bbox: r.indicated },
                Overlay { role: "predicted".into(), color: "green".into(), bbox: r.predicted },
            ];
            if let Some(items) = &gt_items {
                overlays.push(Overlay { role: "ground_truth".into(), color: "red".into(), bbox: items[i].reference });
            }
            ExplainedRecord {
                label: r.label.clone(),
                sentence: r.sentence,
                verdict: if r.verdict { "real" } else { "fake" }.to_string(),
                e_hat: r.e_hat,
                overlays,
            }
        })
        .collect();
    Explanation {
        image_id: fc.image_id.clone(),
        fc_score: fc.fc_score,
        records,
        corrected_text: fc.corrected_text.clone(),
        diagnostics: fc.diagnostics.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex() -> Lexicon {
        Lexicon::builtin()
    }

    fn record(label: &str, sentence_words: &[(usize, usize, usize)], verdict: bool) -> FcRecord {
        let pattern = crate::lexicon::parse_ffl(label, &lex()).unwrap();
        let spans: Vec<WordSpan> =
            sentence_words.iter().map(|&(sentence, start, end)| WordSpan { sentence, start, end }).collect();
        FcRecord {
            pattern: FflPattern { spans: spans.clone(), ..pattern },
            label: label.to_string(),
            sentence: spans.first().map(|s| s.sentence),
            spans,
            indicated: BBox::ZERO,
            predicted: BBox::ZERO,
            raw_predicted: BBox::ZERO,
            verdict,
            e_hat: if verdict { 0.9 } else { 0.1 },
        }
    }

    fn report_with(records: Vec<FcRecord>) -> FcReport {
        FcReport { image_id: "a".into(), records, fc_score: None, corrected_text: None, diagnostics: Default::default() }
    }

    #[test]
    fn perfect_report_scores_three_quarters() {
        let b = BBox { x: 0.1, y: 0.1, w: 0.3, h: 0.3 };
        let items = vec![ScoreItem { verdict: true, indicated: b, reference: b }; 3];
        assert_eq!(fc_score_items(&items, ScoreMode::Fraction), Some(0.75));
        let zero = vec![ScoreItem { verdict: true, indicated: BBox::ZERO, reference: BBox::ZERO }];
        assert_eq!(fc_score_items(&zero, ScoreMode::Fraction), Some(0.75));
        let far = BBox { x: 0.6, y: 0.6, w: 0.3, h: 0.3 };
        let bad = vec![ScoreItem { verdict: false, indicated: b, reference: far }; 2];
        assert_eq!(fc_score_items(&bad, ScoreMode::Fraction), Some(0.0));
        assert_eq!(fc_score_items(&[], ScoreMode::Fraction), None);
    }

    #[test]
    fn literal_mode_saturates() {
        let b = BBox { x: 0.1, y: 0.1, w: 0.3, h: 0.3 };
        let items = vec![
            ScoreItem { verdict: true, indicated: b, reference: b },
            ScoreItem { verdict: false, indicated: b, reference: b },
        ];
        assert_eq!(fc_score_items(&items, ScoreMode::Literal), Some(0.75));
        assert_eq!(fc_score_items(&items, ScoreMode::Fraction), Some(0.5 * (0.5 + 0.5)));
    }

    #[test]
    fn flagged_clause_leaves_its_neighbour() {
        let text = "Left-sided pleural effusion found and the right atelectasis still remains.";
        let patterns = crate::lexicon::extract_ffl(text, &lex());
        let effusion = patterns.iter().find(|p| p.finding == "pleural effusion").unwrap();
        let spans: Vec<(usize, usize, usize)> = effusion.spans.iter().map(|s| (s.sentence, s.start, s.end)).collect();
        let fc = report_with(vec![record("yes|pleural effusion|left lung", &spans, false)]);
        let out = correct_report(text, &fc, &OfflineReformer);
        assert_eq!(out.edits[0].fragment, "and the right atelectasis still remains");
        assert_eq!(out.text, "The right atelectasis still remains.");
    }

    #[test]
    fn untouched_sentences_survive() {
        let text = "Heart size is normal.  No pneumothorax. There is a nodule in the left upper lung zone.";
        let patterns = crate::lexicon::extract_ffl(text, &lex());
        let spans: Vec<(usize, usize, usize)> =
            patterns.iter().find(|p| p.finding == "nodule").unwrap().spans.iter().map(|s| (s.sentence, s.start, s.end)).collect();
        let fc = report_with(vec![record("yes|nodule|left upper lung zone", &spans, false)]);
        let out = correct_report(text, &fc, &OfflineReformer);
        assert_eq!(out.text, "Heart size is normal.  No pneumothorax.");
        assert_eq!(out.edits[0].replacement, None);
        let none = report_with(vec![record("yes|nodule|left upper lung zone", &spans, true)]);
        assert_eq!(correct_report(text, &none, &OfflineReformer).text, text);
    }

    struct Broken;
    impl Rewriter for Broken {
        fn name(&self) -> String {
            "broken".into()
        }
        fn rewrite(&self, _: &str, _: &str) -> Result<String> {
            Err(Error::Rewriter("down".into()))
        }
    }

    #[test]
    fn failing_rewriter_falls_back() {
        let text = "Left-sided pleural effusion found and the right atelectasis still remains.";
        let fc = report_with(vec![record("yes|pleural effusion|left lung", &[(0, 0, 5)], false)]);
        let out = correct_report(text, &fc, &Broken);
        assert_eq!(out.text, "The right atelectasis still remains.");
        assert_eq!(out.rewriter_failures.len(), 1);
        assert_eq!(out.edits[0].rewriter, "offline");
    }

    #[test]
    fn reformer_cleans_edges() {
        assert_eq!(reform(", and the right atelectasis still remains, or"), "The right atelectasis still remains.");
        assert_eq!(reform("and"), "");
        assert_eq!(reform("no edema, or pneumothorax"), "No edema, or pneumothorax.");
    }

    #[test]
    fn ground_truth_matching_ignores_missing_anatomy() {
        let l = lex();
        let a = crate::lexicon::parse_ffl("yes|pleural effusion", &l).unwrap();
        let g = crate::lexicon::parse_ffl("yes|pleural effusion|left lung", &l).unwrap();
        let h = crate::lexicon::parse_ffl("yes|pleural effusion|right lung", &l).unwrap();
        assert!(matches_ground_truth(&a, &g));
        assert!(!matches_ground_truth(&g, &h));
        let n = crate::lexicon::parse_ffl("no|pleural effusion", &l).unwrap();
        assert!(!matches_ground_truth(&n, &g));
    }
}
