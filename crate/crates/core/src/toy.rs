//! A synthetic radiology world: per-image region layouts, ground-truth
//! reports, and automated reports with planted errors.
//!
//! Everything is drawn from `stream(seed, image_id)`, so one image's content
//! does not depend on how many images are generated.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::atlas::{AnnotationRecord, RegionBox};
use crate::bbox::BBox;
use crate::rng::{stream, Rng};
use crate::synth::ReportRecord;

/// Box of the patient's right-side region (image left); the left side mirrors it.
const LATERAL_LAYOUT: &[(&str, [f64; 4])] = &[
    ("lung", [0.08, 0.12, 0.38, 0.62]),
    ("upper lung zone", [0.10, 0.14, 0.34, 0.18]),
    ("mid lung zone", [0.09, 0.32, 0.36, 0.18]),
    ("lower lung zone", [0.08, 0.50, 0.37, 0.22]),
    ("hilar structures", [0.30, 0.33, 0.12, 0.14]),
    ("apical zone", [0.14, 0.10, 0.22, 0.09]),
    ("costophrenic angle", [0.07, 0.66, 0.10, 0.09]),
    ("hemidiaphragm", [0.10, 0.68, 0.34, 0.06]),
    ("clavicle", [0.12, 0.07, 0.30, 0.07]),
    ("cardiophrenic angle", [0.36, 0.62, 0.08, 0.08]),
    ("upper abdomen", [0.08, 0.76, 0.36, 0.16]),
];

const MIDLINE_LAYOUT: &[(&str, [f64; 4])] = &[
    ("trachea", [0.46, 0.05, 0.08, 0.22]),
    ("carina", [0.46, 0.26, 0.08, 0.05]),
    ("aortic arch", [0.50, 0.22, 0.12, 0.08]),
    ("upper mediastinum", [0.40, 0.10, 0.20, 0.18]),
    ("mediastinum", [0.38, 0.10, 0.26, 0.55]),
    ("svc", [0.40, 0.20, 0.07, 0.15]),
    ("cardiac silhouette", [0.36, 0.40, 0.38, 0.28]),
    ("left cardiac silhouette", [0.52, 0.40, 0.22, 0.28]),
    ("right cardiac silhouette", [0.36, 0.40, 0.16, 0.28]),
    ("cavoatrial junction", [0.40, 0.38, 0.06, 0.05]),
    ("right atrium", [0.36, 0.44, 0.14, 0.18]),
    ("descending aorta", [0.52, 0.28, 0.06, 0.40]),
    ("abdomen", [0.10, 0.78, 0.80, 0.20]),
    ("spine", [0.46, 0.05, 0.08, 0.90]),
];

/// Finding, the phrasings used in reports, and the lateral bases it occurs in.
struct ToyFinding {
    name: &'static str,
    phrases: &'static [&'static str],
    bases: &'static [&'static str],
}

const FINDINGS: &[ToyFinding] = &[
    ToyFinding { name: "pleural effusion", phrases: &["pleural effusion", "effusion"], bases: &["costophrenic angle", "lower lung zone"] },
    ToyFinding { name: "atelectasis", phrases: &["atelectasis", "subsegmental atelectasis"], bases: &["lower lung zone", "mid lung zone"] },
    ToyFinding { name: "consolidation", phrases: &["consolidation", "focal consolidation", "airspace consolidation"], bases: &["lower lung zone", "mid lung zone", "upper lung zone"] },
    ToyFinding { name: "nodule", phrases: &["nodule", "pulmonary nodule"], bases: &["upper lung zone", "mid lung zone", "hilar structures"] },
    ToyFinding { name: "pneumothorax", phrases: &["pneumothorax"], bases: &["apical zone", "upper lung zone"] },
    ToyFinding { name: "edema", phrases: &["edema", "pulmonary edema"], bases: &["lung"] },
    ToyFinding { name: "lung opacity", phrases: &["opacity", "airspace opacity"], bases: &["lower lung zone", "mid lung zone", "upper lung zone"] },
    ToyFinding { name: "pleural thickening", phrases: &["pleural thickening"], bases: &["apical zone", "costophrenic angle"] },
    ToyFinding { name: "clavicle fracture", phrases: &["clavicle fracture", "clavicular fracture"], bases: &["clavicle"] },
    ToyFinding { name: "calcification", phrases: &["calcification", "calcified granuloma"], bases: &["hilar structures", "upper lung zone"] },
    ToyFinding { name: "lung cyst", phrases: &["lung cyst", "cyst"], bases: &["upper lung zone", "lower lung zone"] },
    ToyFinding { name: "infiltration", phrases: &["infiltrate", "infiltration"], bases: &["mid lung zone", "lower lung zone"] },
];

const FILLERS: &[&str] = &[
    "Comparison is made to the prior radiograph.",
    "The osseous structures are intact.",
    "The visualized soft tissues are unremarkable.",
    "The patient is rotated slightly.",
];

pub const MAX_FINDINGS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToySide {
    Left,
    Right,
    Bilateral,
}

impl ToySide {
    fn word(self) -> &'static str {
        match self {
            ToySide::Left => "left",
            ToySide::Right => "right",
            ToySide::Bilateral => "bilateral",
        }
    }

    fn opposite(self) -> ToySide {
        match self {
            ToySide::Left => ToySide::Right,
            ToySide::Right => ToySide::Left,
            ToySide::Bilateral => ToySide::Bilateral,
        }
    }
}

/// Where a finding sits: a side plus a lateral base region.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Site {
    pub side: ToySide,
    pub base: String,
}

impl Site {
    /// The anatomy string the extractor produces for this site.
    pub fn anatomy(&self) -> String {
        format!("{} {}", self.side.word(), self.base)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub n_images: usize,
    pub n_findings: usize,
    pub max_present: usize,
    pub max_negated: usize,
    /// Weights of reports carrying 0, 1, 2, ... planted errors.
    pub error_count_weights: Vec<f64>,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig { n_images: 500, n_findings: 12, max_present: 3, max_negated: 5, error_count_weights: vec![0.2, 0.5, 0.3] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// A present finding reported as absent.
    ReversedPresent,
    /// An absent finding reported as present somewhere.
    ReversedAbsent,
    /// A present finding reported at the wrong site.
    Relocated,
    /// A finding the image does not have, inserted at some site.
    Substituted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedError {
    pub kind: ErrorKind,
    /// The wrong pattern as the automated report states it (`N|C|A` or `N|C`).
    pub pattern: String,
}

/// Ground truth of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyImage {
    pub image_id: String,
    pub present: Vec<(String, Site)>,
    pub negated: Vec<String>,
    pub ground_truth_report: String,
    pub automated_report: String,
    pub errors: Vec<PlantedError>,
}

impl ToyImage {
    /// Patterns the ground-truth report states, sorted, as `N|C|A` strings.
    pub fn truth_patterns(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .present
            .iter()
            .map(|(f, s)| format!("yes|{f}|{}", s.anatomy()))
            .chain(self.negated.iter().map(|f| format!("no|{f}")))
            .collect();
        v.sort();
        v
    }
}

/// Corpus line for assessment: `{image_id, automated_report, ground_truth_report}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub image_id: String,
    pub automated_report: String,
    pub ground_truth_report: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyCorpus {
    pub images: Vec<ToyImage>,
    pub annotations: Vec<AnnotationRecord>,
}

impl ToyCorpus {
    pub fn reports(&self) -> Vec<ReportRecord> {
        self.images
            .iter()
            .map(|i| ReportRecord { image_id: i.image_id.clone(), report: i.ground_truth_report.clone() })
            .collect()
    }

    pub fn corpus(&self) -> Vec<CorpusRecord> {
        self.images
            .iter()
            .map(|i| CorpusRecord {
                image_id: i.image_id.clone(),
                automated_report: i.automated_report.clone(),
                ground_truth_report: i.ground_truth_report.clone(),
            })
            .collect()
    }

    pub fn finding_names(&self) -> BTreeSet<&str> {
        self.images.iter().flat_map(|i| i.present.iter().map(|(f, _)| f.as_str())).collect()
    }
}

pub fn image_id(i: usize) -> String {
    format!("toy-{i:04}")
}

fn mirror(b: [f64; 4]) -> [f64; 4] {
    [1.0 - b[0] - b[2], b[1], b[2], b[3]]
}

/// Region boxes for one image in pixels, with global shift/scale and a little
/// per-region jitter.
fn layout(rng: &mut Rng) -> (f64, f64, Vec<RegionBox>) {
    let width = f64::from(rng.random_range(2000u32..=3000));
    let height = f64::from(rng.random_range(2000u32..=3000));
    let (dx, dy) = (rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01));
    let scale = rng.random_range(0.99..1.01);
    let mut place = |name: String, b: [f64; 4]| {
        let j = |rng: &mut Rng| rng.random_range(-0.002..0.002);
        let x = 0.5 + (b[0] - 0.5) * scale + dx + j(rng);
        let y = 0.5 + (b[1] - 0.5) * scale + dy + j(rng);
        let n = BBox { x, y, w: b[2] * scale, h: b[3] * scale }.clamped();
        let px = |v: f64, d: f64| (v * d * 10.0).floor() / 10.0;
        RegionBox { name, x: px(n.x, width), y: px(n.y, height), w: px(n.w, width), h: px(n.h, height) }
    };
    let mut regions = Vec::new();
    for (base, b) in LATERAL_LAYOUT {
        regions.push(place(format!("right {base}"), *b));
        regions.push(place(format!("left {base}"), mirror(*b)));
    }
    for (name, b) in MIDLINE_LAYOUT {
        regions.push(place((*name).to_string(), *b));
    }
    (width, height, regions)
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map_or_else(String::new, |f| f.to_uppercase().collect::<String>() + c.as_str())
}

fn present_sentence(f: &ToyFinding, site: &Site, rng: &mut Rng) -> String {
    let phrase = *f.phrases.choose(rng).expect("phrases");
    if site.side == ToySide::Bilateral {
        return format!("Bilateral {phrase}.");
    }
    let side = site.side.word();
    if site.base == "lung" {
        return match rng.random_range(0..2) {
            0 => format!("{}-sided {phrase} is noted.", capitalize(side)),
            _ => format!("There is {phrase} in the {side} lung."),
        };
    }
    match rng.random_range(0..3) {
        0 => format!("There is {phrase} in the {side} {}.", site.base),
        1 => format!("{} is seen in the {side} {}.", capitalize(phrase), site.base),
        _ => format!("{} {} {phrase}.", capitalize(side), site.base),
    }
}

fn negated_sentence(names: &[&ToyFinding], rng: &mut Rng) -> String {
    let phrases: Vec<&str> = names.iter().map(|f| *f.phrases.choose(rng).expect("phrases")).collect();
    let list = match phrases.len() {
        1 => phrases[0].to_string(),
        n => format!("{} or {}", phrases[..n - 1].join(", "), phrases[n - 1]),
    };
    match rng.random_range(0..3) {
        0 => format!("No {list}."),
        1 => format!("There is no {list}."),
        _ => format!("Negative for {list}."),
    }
}

fn random_site(f: &ToyFinding, rng: &mut Rng) -> Site {
    let base = (*f.bases.choose(rng).expect("bases")).to_string();
    let side = if base == "lung" && rng.random_bool(0.15) {
        ToySide::Bilateral
    } else if rng.random_bool(0.5) {
        ToySide::Left
    } else {
        ToySide::Right
    };
    Site { side, base }
}

/// A site of `f` that does not overlap `from` much: the mirrored site, or for
/// bilateral findings a single side.
fn moved_site(f: &ToyFinding, from: &Site, rng: &mut Rng) -> Site {
    match from.side {
        ToySide::Bilateral => Site { side: ToySide::Left, base: from.base.clone() },
        side => {
            let base = (*f.bases.choose(rng).expect("bases")).to_string();
            Site { side: side.opposite(), base }
        }
    }
}

fn finding(name: &str) -> &'static ToyFinding {
    FINDINGS.iter().find(|f| f.name == name).expect("toy finding")
}

fn weighted_index(weights: &[f64], rng: &mut Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random_range(0.0..total.max(f64::MIN_POSITIVE));
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len().saturating_sub(1)
}

enum Line {
    Present(usize),
    Negated(Vec<String>),
    Text(String),
}

fn image(id: &str, config: &ToyConfig, seed: u64) -> (ToyImage, AnnotationRecord) {
    let mut rng = stream(seed, id);
    let (width, height, regions) = layout(&mut rng);
    let vocab: Vec<&ToyFinding> = FINDINGS.iter().take(config.n_findings.min(MAX_FINDINGS)).collect();

    let mut shuffled = vocab.clone();
    shuffled.shuffle(&mut rng);
    let n_present = rng.random_range(1..=config.max_present.max(1)).min(shuffled.len());
    let n_negated = rng.random_range(0..=config.max_negated).min(shuffled.len() - n_present);
    let present: Vec<(String, Site)> =
        shuffled[..n_present].iter().map(|f| (f.name.to_string(), random_site(f, &mut rng))).collect();
    let negated: Vec<String> = shuffled[n_present..n_present + n_negated].iter().map(|f| f.name.to_string()).collect();
    let unmentioned: Vec<&ToyFinding> = shuffled[n_present + n_negated..].to_vec();

    let mut lines: Vec<Line> = (0..present.len()).map(Line::Present).collect();
    if !negated.is_empty() {
        lines.push(Line::Negated(negated.clone()));
    }
    for _ in 0..rng.random_range(0..=2) {
        lines.push(Line::Text((*FILLERS.choose(&mut rng).expect("fillers")).to_string()));
    }
    let render = |lines: &[Line], present: &[(String, Site)], rng: &mut Rng| -> String {
        lines
            .iter()
            .map(|l| match l {
                Line::Present(i) => present_sentence(finding(&present[*i].0), &present[*i].1, rng),
                Line::Negated(names) => {
                    let fs: Vec<&ToyFinding> = names.iter().map(|n| finding(n)).collect();
                    negated_sentence(&fs, rng)
                }
                Line::Text(t) => t.clone(),
            })
            .collect::<Vec<_>>()
            .join(" ")
    };
    // Phrasing draws come from a separate stream so the automated report can
    // reuse the exact wording of untouched sentences.
    let phrasing_seed: u64 = rng.random();
    let mut phrasing = stream(phrasing_seed, "phrasing");
    let ground_truth_report = render(&lines, &present, &mut phrasing);

    // Planted errors operate on a copy of the truth.
    let mut a_present = present.clone();
    let mut a_negated = negated.clone();
    let mut extra: Vec<(String, Site)> = Vec::new();
    let mut errors = Vec::new();
    let n_errors = weighted_index(&config.error_count_weights, &mut rng);
    let mut touched: BTreeSet<String> = BTreeSet::new();
    let mut absent_pool: Vec<&ToyFinding> = unmentioned.clone();
    for _ in 0..n_errors {
        let kind = match rng.random_range(0..4) {
            0 => ErrorKind::ReversedPresent,
            1 => ErrorKind::ReversedAbsent,
            2 => ErrorKind::Relocated,
            _ => ErrorKind::Substituted,
        };
        let untouched: Vec<usize> = (0..a_present.len()).filter(|&i| !a_present[i].0.is_empty() && !touched.contains(&a_present[i].0)).collect();
        match kind {
            ErrorKind::ReversedPresent | ErrorKind::Relocated => {
                let Some(&i) = untouched.choose(&mut rng) else { continue };
                let name = a_present[i].0.clone();
                touched.insert(name.clone());
                if kind == ErrorKind::Relocated {
                    let site = moved_site(finding(&name), &a_present[i].1, &mut rng);
                    errors.push(PlantedError { kind, pattern: format!("yes|{name}|{}", site.anatomy()) });
                    a_present[i].1 = site;
                } else {
                    errors.push(PlantedError { kind, pattern: format!("no|{name}") });
                    a_present[i].0.clear();
                    a_negated.push(name);
                }
            }
            ErrorKind::ReversedAbsent => {
                let cands: Vec<String> =
                    a_negated.iter().filter(|n| !touched.contains(*n) && negated.contains(n)).cloned().collect();
                let Some(name) = cands.choose(&mut rng).cloned() else { continue };
                touched.insert(name.clone());
                a_negated.retain(|n| n != &name);
                let site = random_site(finding(&name), &mut rng);
                errors.push(PlantedError { kind, pattern: format!("yes|{name}|{}", site.anatomy()) });
                extra.push((name, site));
            }
            ErrorKind::Substituted => {
                if absent_pool.is_empty() {
                    continue;
                }
                let f = absent_pool.remove(rng.random_range(0..absent_pool.len()));
                let site = random_site(f, &mut rng);
                errors.push(PlantedError { kind, pattern: format!("yes|{}|{}", f.name, site.anatomy()) });
                touched.insert(f.name.to_string());
                extra.push((f.name.to_string(), site));
            }
        }
    }

    // Re-render: untouched sentences keep their wording because the phrasing
    // stream is replayed in the same order.
    let mut phrasing = stream(phrasing_seed, "phrasing");
    let mut parts: Vec<String> = Vec::new();
    for l in &lines {
        match l {
            Line::Present(i) => {
                let s = present_sentence(finding(&present[*i].0), &present[*i].1, &mut phrasing);
                let (name, site) = &a_present[*i];
                if name.is_empty() {
                    continue;
                }
                if site != &present[*i].1 {
                    let mut alt = stream(phrasing_seed, &format!("moved:{name}"));
                    parts.push(present_sentence(finding(name), site, &mut alt));
                } else {
                    parts.push(s);
                }
            }
            Line::Negated(names) => {
                let fs: Vec<&ToyFinding> = names.iter().map(|n| finding(n)).collect();
                let s = negated_sentence(&fs, &mut phrasing);
                if names.iter().all(|n| a_negated.contains(n)) && a_negated.len() == names.len() {
                    parts.push(s);
                } else {
                    let kept: Vec<&ToyFinding> = a_negated.iter().map(|n| finding(n)).collect();
                    if !kept.is_empty() {
                        let mut alt = stream(phrasing_seed, "negated");
                        parts.push(negated_sentence(&kept, &mut alt));
                    }
                }
            }
            Line::Text(t) => parts.push(t.clone()),
        }
    }
    if negated.is_empty() && !a_negated.is_empty() {
        let kept: Vec<&ToyFinding> = a_negated.iter().map(|n| finding(n)).collect();
        let mut alt = stream(phrasing_seed, "negated");
        parts.push(negated_sentence(&kept, &mut alt));
    }
    for (name, site) in &extra {
        let mut alt = stream(phrasing_seed, &format!("extra:{name}"));
        let s = present_sentence(finding(name), site, &mut alt);
        let at = rng.random_range(0..=parts.len());
        parts.insert(at, s);
    }
    let automated_report = parts.join(" ");

    let toy = ToyImage {
        image_id: id.to_string(),
        present,
        negated,
        ground_truth_report,
        automated_report,
        errors,
    };
    let annotation = AnnotationRecord { image_id: id.to_string(), width: Some(width), height: Some(height), regions };
    (toy, annotation)
}

pub fn generate(config: &ToyConfig, seed: u64) -> ToyCorpus {
    let (images, annotations) = (0..config.n_images).map(|i| image(&image_id(i), config, seed)).unzip();
    ToyCorpus { images, annotations }
}
