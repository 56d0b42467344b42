//! Labeled real/fake finding-location pairs.
//!
//! Each real pair of a sample spawns fakes by three perturbations:
//! polarity reversal, relocation to another pooled box of the same finding,
//! and substitution by a finding the sample does not report, placed at a
//! pooled box of that finding.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::atlas::{indicated_location, read_jsonl, write_jsonl, LocationPool, RegionMap};
use crate::bbox::{iou, BBox};
use crate::error::{Error, Result};
use crate::lexicon::{extract_ffl, Lexicon, Polarity};
use crate::rng::{stream, Rng};

/// Polarity plus canonical finding name. The type tag is not carried here.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Finding {
    pub polarity: Polarity,
    pub name: String,
}

impl Finding {
    pub fn new(polarity: Polarity, name: impl Into<String>) -> Self {
        Finding { polarity, name: name.into() }
    }
}

impl std::fmt::Display for Finding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}|{}", self.polarity, self.name)
    }
}

/// How a pair came about. `source` indexes the sample's real pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Reversal { source: usize },
    Relocation { source: usize },
    Substitution { source: usize },
}

impl Provenance {
    pub fn source(&self) -> Option<usize> {
        match *self {
            Provenance::Real => None,
            Provenance::Reversal { source }
            | Provenance::Relocation { source }
            | Provenance::Substitution { source } => Some(source),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlPair {
    pub finding: Finding,
    pub location: BBox,
    /// Veracity bit: true only for unmodified ground-truth pairs.
    pub real: bool,
    pub provenance: Provenance,
}

impl FlPair {
    pub fn real(finding: Finding, location: BBox) -> Self {
        FlPair { finding, location, real: true, provenance: Provenance::Real }
    }

    fn key(&self) -> (Polarity, &str, [u64; 4]) {
        let b = self.location.to_array().map(f64::to_bits);
        (self.finding.polarity, self.finding.name.as_str(), b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image_id: String,
    pub real_pairs: Vec<FlPair>,
    pub fake_pairs: Vec<FlPair>,
}

impl Sample {
    /// A sample of real pairs, deduplicated by (polarity, name, box).
    pub fn new(image_id: impl Into<String>, reals: Vec<FlPair>) -> Self {
        let mut seen = BTreeSet::new();
        let real_pairs = reals
            .into_iter()
            .filter(|p| seen.insert((p.finding.polarity, p.finding.name.clone(), p.location.to_array().map(f64::to_bits))))
            .collect();
        Sample { image_id: image_id.into(), real_pairs, fake_pairs: Vec::new() }
    }

    pub fn real_names(&self) -> BTreeSet<&str> {
        self.real_pairs.iter().map(|p| p.finding.name.as_str()).collect()
    }

    pub fn pairs(&self) -> impl Iterator<Item = &FlPair> {
        self.real_pairs.iter().chain(&self.fake_pairs)
    }

    /// Present real pairs; these define what the image shows.
    pub fn present(&self) -> impl Iterator<Item = &FlPair> {
        self.real_pairs.iter().filter(|p| p.finding.polarity == Polarity::Yes)
    }

    /// Ground-truth location of the finding a pair claims: the source box for
    /// relocations and present reals, the zero box otherwise.
    pub fn grounded_location(&self, pair: &FlPair) -> BBox {
        match pair.provenance {
            Provenance::Real => pair.location,
            Provenance::Relocation { source } => self.real_pairs[source].location,
            Provenance::Reversal { .. } | Provenance::Substitution { .. } => BBox::ZERO,
        }
    }
}

// ---------------------------------------------------------------------------
// Wire format: one sample per line.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRecord {
    pub n: Polarity,
    pub c: String,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub e: u8,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub image_id: String,
    pub pairs: Vec<PairRecord>,
}

impl From<&Sample> for SampleRecord {
    fn from(s: &Sample) -> Self {
        SampleRecord {
            image_id: s.image_id.clone(),
            pairs: s
                .pairs()
                .map(|p| PairRecord {
                    n: p.finding.polarity,
                    c: p.finding.name.clone(),
                    x: p.location.x,
                    y: p.location.y,
                    w: p.location.w,
                    h: p.location.h,
                    e: u8::from(p.real),
                    provenance: p.provenance,
                })
                .collect(),
        }
    }
}

impl TryFrom<SampleRecord> for Sample {
    type Error = Error;

    fn try_from(r: SampleRecord) -> Result<Self> {
        let mut s = Sample { image_id: r.image_id, real_pairs: Vec::new(), fake_pairs: Vec::new() };
        for p in r.pairs {
            let location = BBox { x: p.x, y: p.y, w: p.w, h: p.h };
            location.validate()?;
            let pair = FlPair {
                finding: Finding::new(p.n, p.c),
                location,
                real: p.e == 1,
                provenance: p.provenance,
            };
            match (pair.real, pair.provenance) {
                (true, Provenance::Real) => s.real_pairs.push(pair),
                (false, Provenance::Real) | (true, _) => {
                    return Err(Error::InvalidArgument(format!(
                        "pair {} in '{}' has e={} but provenance {:?}",
                        pair.finding, s.image_id, p.e, pair.provenance
                    )))
                }
                (false, _) => s.fake_pairs.push(pair),
            }
        }
        for f in &s.fake_pairs {
            if f.provenance.source().is_some_and(|i| i >= s.real_pairs.len()) {
                return Err(Error::InvalidArgument(format!("dangling provenance in '{}'", s.image_id)));
            }
        }
        Ok(s)
    }
}

pub fn write_samples(path: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    let records: Vec<SampleRecord> = samples.iter().map(SampleRecord::from).collect();
    write_jsonl(path, &records)
}

pub fn read_samples(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    read_jsonl::<SampleRecord>(path)?.into_iter().map(Sample::try_from).collect()
}

pub fn samples_to_jsonl(samples: &[Sample]) -> Result<String> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(&SampleRecord::from(s))?);
        out.push('\n');
    }
    Ok(out)
}

/// A ground-truth report line: `{image_id, report}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRecord {
    pub image_id: String,
    pub report: String,
}

pub fn read_reports(path: impl AsRef<Path>) -> Result<Vec<ReportRecord>> {
    read_jsonl(path)
}

pub fn write_reports(path: impl AsRef<Path>, reports: &[ReportRecord]) -> Result<()> {
    write_jsonl(path, reports)
}

/// Real pairs from reports: extract patterns, then locate them in the image.
/// Present findings that cannot be located are dropped and counted.
pub fn real_samples(
    reports: &[ReportRecord],
    regions: &RegionMap,
    lexicon: &Lexicon,
) -> Result<(Vec<Sample>, usize)> {
    let mut dropped = 0;
    let mut samples = Vec::with_capacity(reports.len());
    for r in reports {
        let mut reals = Vec::new();
        for p in extract_ffl(&r.report, lexicon) {
            let loc = indicated_location(&p, &r.image_id, regions, lexicon)?;
            if p.polarity == Polarity::Yes && loc.bbox().is_zero() {
                dropped += 1;
                continue;
            }
            reals.push(FlPair::real(Finding::new(p.polarity, p.finding), loc.bbox()));
        }
        samples.push(Sample::new(r.image_id.clone(), reals));
    }
    Ok((samples, dropped))
}

// ---------------------------------------------------------------------------
// Perturbations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Skip {
    /// Relocation and substitution apply to present findings only.
    NotPresent,
    PoolTooSmall,
    NoAdmissibleBox,
    NoCandidateFinding,
    CollidesWithReal,
}

/// Flips polarity; the location becomes the zero box.
pub fn reverse(pair: &FlPair, source: usize) -> FlPair {
    FlPair {
        finding: Finding::new(pair.finding.polarity.flipped(), pair.finding.name.clone()),
        location: BBox::ZERO,
        real: false,
        provenance: Provenance::Reversal { source },
    }
}

/// Moves a present finding to a pooled box overlapping the original by at most `max_iou`.
pub fn relocate(
    pair: &FlPair,
    source: usize,
    pool: &LocationPool,
    max_iou: f64,
    rng: &mut Rng,
) -> std::result::Result<FlPair, Skip> {
    if pair.finding.polarity != Polarity::Yes {
        return Err(Skip::NotPresent);
    }
    let boxes = pool.get(&pair.finding.name);
    let distinct: BTreeSet<[u64; 4]> = boxes.iter().map(|b| b.to_array().map(f64::to_bits)).collect();
    if distinct.len() < 2 {
        return Err(Skip::PoolTooSmall);
    }
    let admissible: Vec<&BBox> = boxes.iter().filter(|b| iou(b, &pair.location) <= max_iou).collect();
    let location = **admissible.choose(rng).ok_or(Skip::NoAdmissibleBox)?;
    Ok(FlPair {
        finding: pair.finding.clone(),
        location,
        real: false,
        provenance: Provenance::Relocation { source },
    })
}

/// Replaces a present finding with one the sample does not report, at a pooled box of it.
pub fn substitute(
    pair: &FlPair,
    source: usize,
    sample_names: &BTreeSet<&str>,
    pool: &LocationPool,
    rng: &mut Rng,
) -> std::result::Result<FlPair, Skip> {
    if pair.finding.polarity != Polarity::Yes {
        return Err(Skip::NotPresent);
    }
    let candidates: Vec<&str> = pool.findings().filter(|f| !sample_names.contains(f)).collect();
    let name = *candidates.choose(rng).ok_or(Skip::NoCandidateFinding)?;
    let location = *pool.get(name).choose(rng).ok_or(Skip::NoCandidateFinding)?;
    Ok(FlPair {
        finding: Finding::new(Polarity::Yes, name),
        location,
        real: false,
        provenance: Provenance::Substitution { source },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_relocate: usize,
    pub n_substitute: usize,
    /// Relocation candidates overlapping the original above this IoU are excluded.
    pub relocate_max_iou: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { n_relocate: 2, n_substitute: 1, relocate_max_iou: 0.5 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub reals: usize,
    pub reversals: usize,
    pub relocations: usize,
    pub substitutions: usize,
    /// Reversals of absent findings (present claim at the zero box).
    pub absent_reversals: usize,
    pub skipped: BTreeMap<String, usize>,
}

impl GenerationReport {
    pub fn fakes(&self) -> usize {
        self.reversals + self.relocations + self.substitutions
    }

    pub fn skipped_total(&self) -> usize {
        self.skipped.values().sum()
    }

    fn skip(&mut self, kind: &str, why: Skip) {
        let key = format!("{kind}:{}", serde_json::to_value(why).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default());
        *self.skipped.entry(key).or_default() += 1;
    }
}

/// Appends fakes to every sample. Each sample draws from its own stream
/// derived from `(seed, image_id)`, so output does not depend on sample order.
pub fn generate_dataset(
    samples: &[Sample],
    pools: &LocationPool,
    config: &SynthConfig,
    seed: u64,
) -> (Vec<Sample>, GenerationReport) {
    let mut report = GenerationReport::default();
    let out = samples
        .iter()
        .map(|s| {
            let mut rng = stream(seed, &s.image_id);
            let names = s.real_names();
            let real_keys: BTreeSet<_> = s.real_pairs.iter().map(FlPair::key).collect();
            let mut fakes = Vec::new();
            let push = |fake: FlPair, kind: &str, report: &mut GenerationReport, fakes: &mut Vec<FlPair>| {
                if real_keys.contains(&fake.key()) {
                    report.skip(kind, Skip::CollidesWithReal);
                    return false;
                }
                fakes.push(fake);
                true
            };
            for (i, pair) in s.real_pairs.iter().enumerate() {
                report.reals += 1;
                let rev = reverse(pair, i);
                let absent = pair.finding.polarity == Polarity::No;
                if push(rev, "reversal", &mut report, &mut fakes) {
                    report.reversals += 1;
                    report.absent_reversals += usize::from(absent);
                }
                for _ in 0..config.n_relocate {
                    match relocate(pair, i, pools, config.relocate_max_iou, &mut rng) {
                        Ok(f) => {
                            if push(f, "relocation", &mut report, &mut fakes) {
                                report.relocations += 1;
                            }
                        }
                        Err(why) => report.skip("relocation", why),
                    }
                }
                for _ in 0..config.n_substitute {
                    match substitute(pair, i, &names, pools, &mut rng) {
                        Ok(f) => {
                            if push(f, "substitution", &mut report, &mut fakes) {
                                report.substitutions += 1;
                            }
                        }
                        Err(why) => report.skip("substitution", why),
                    }
                }
            }
            Sample { image_id: s.image_id.clone(), real_pairs: s.real_pairs.clone(), fake_pairs: fakes }
        })
        .collect();
    (out, report)
}
