//! Finding lexicon and rule-based extraction of structured finding patterns.
//!
//! A pattern is `type | polarity | core finding | anatomy` together with the
//! word spans of the sentence that produced it. Extraction is deterministic:
//!
//! 1. sentences split on `.`, `;`, `!`, `?` (a period followed by a digit is
//!    not a boundary);
//! 2. words are alphanumeric runs, case-folded, so hyphens act as spaces;
//! 3. lexicon phrases are matched longest-first at every position;
//! 4. a sentence is cut into segments at commas and conjunctions; anatomy and
//!    laterality attach to findings in the same segment;
//! 5. a negation cue governs every finding that follows it until a scope
//!    terminator (`but`, `however`, ...), an assertion cue, or sentence end,
//!    so enumerations like "no A, B or C" negate all three.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BUILTIN_LEXICON: &str = include_str!("../../../data/lexicon.json");

/// Words that separate clauses for anatomy attachment.
const SEGMENT_BREAKS: &[&str] = &[
    "and", "or", "but", "with", "however", "although", "though", "while", "whereas", "which",
    "except", "nor", "versus",
];

/// Words that close a negation scope.
const SCOPE_TERMINATORS: &[&str] = &[
    "but", "however", "although", "though", "while", "whereas", "which", "except", "there",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Yes,
    No,
}

impl Polarity {
    pub fn flipped(self) -> Self {
        match self {
            Polarity::Yes => Polarity::No,
            Polarity::No => Polarity::Yes,
        }
    }

    pub fn is_present(self) -> bool {
        self == Polarity::Yes
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::Yes => "yes",
            Polarity::No => "no",
        })
    }
}

impl FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "yes" => Ok(Polarity::Yes),
            "no" => Ok(Polarity::No),
            other => Err(Error::BadPolarity(other.to_string())),
        }
    }
}

/// The finding type tag. `Finding` is the default and is elided when serialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FindingType {
    #[default]
    Finding,
    Disease,
    Device,
    Technical,
}

impl fmt::Display for FindingType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FindingType::Finding => "finding",
            FindingType::Disease => "disease",
            FindingType::Device => "device",
            FindingType::Technical => "technical",
        })
    }
}

impl FromStr for FindingType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "finding" => Ok(FindingType::Finding),
            "disease" => Ok(FindingType::Disease),
            "device" => Ok(FindingType::Device),
            "technical" => Ok(FindingType::Technical),
            other => Err(Error::BadPattern(format!("unknown finding type '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
    Bilateral,
}

/// Word range `[start, end)` within sentence `sentence`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WordSpan {
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FflPattern {
    pub kind: FindingType,
    pub polarity: Polarity,
    pub finding: String,
    pub anatomy: Option<String>,
    #[serde(default)]
    pub spans: Vec<WordSpan>,
}

impl FflPattern {
    /// Equality on everything but spans.
    pub fn same_label(&self, other: &FflPattern) -> bool {
        self.kind == other.kind
            && self.polarity == other.polarity
            && self.finding == other.finding
            && self.anatomy == other.anatomy
    }

    pub fn sentence(&self) -> Option<usize> {
        self.spans.first().map(|s| s.sentence)
    }
}

/// `T|N|C|A`, with `T` elided when it is the default tag and `A` elided when absent.
impl fmt::Display for FflPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.kind != FindingType::default() {
            write!(f, "{}|", self.kind)?;
        }
        write!(f, "{}|{}", self.polarity, self.finding)?;
        if let Some(a) = &self.anatomy {
            write!(f, "|{a}")?;
        }
        Ok(())
    }
}

pub fn serialize_ffl(p: &FflPattern) -> String {
    p.to_string()
}

/// Parses `N|C`, `T|N|C`, `N|C|A` or `T|N|C|A`. Spans come back empty.
pub fn parse_ffl(s: &str, lexicon: &Lexicon) -> Result<FflPattern> {
    let fields: Vec<&str> = s.split('|').map(str::trim).collect();
    let (kind, polarity, finding, anatomy) = match fields.as_slice() {
        [n, c] => (None, *n, *c, None),
        [first, second, third] => {
            if first.parse::<Polarity>().is_ok() {
                (None, *first, *second, Some(*third))
            } else {
                (Some(*first), *second, *third, None)
            }
        }
        [t, n, c, a] => (Some(*t), *n, *c, Some(*a)),
        _ => return Err(Error::BadPattern(s.to_string())),
    };
    let kind = kind.map(FindingType::from_str).transpose()?.unwrap_or_default();
    let polarity = polarity.parse()?;
    if !lexicon.is_canonical_finding(finding) {
        return Err(Error::UnknownFinding(finding.to_string()));
    }
    let anatomy = match anatomy {
        Some(a) if lexicon.anatomy_regions(a).is_none() => {
            return Err(Error::UnknownRegion {
                region: a.to_string(),
                record: s.to_string(),
            })
        }
        other => other.map(str::to_string),
    };
    Ok(FflPattern {
        kind,
        polarity,
        finding: finding.to_string(),
        anatomy,
        spans: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// Lexicon file
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FindingEntry {
    pub canonical: String,
    #[serde(rename = "type", default)]
    pub kind: FindingType,
    #[serde(default)]
    pub synonyms: Vec<String>,
    /// Regions used as the indicated location when a report names no anatomy.
    #[serde(default)]
    pub default_regions: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionEntry {
    pub canonical: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
    /// Member of a left/right pair; the canonical name starts with the side.
    #[serde(default)]
    pub lateralized: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LateralityMarkers {
    pub left: Vec<String>,
    pub right: Vec<String>,
    pub bilateral: Vec<String>,
}

impl Default for LateralityMarkers {
    fn default() -> Self {
        let v = |s: &[&str]| s.iter().map(|x| x.to_string()).collect();
        LateralityMarkers {
            left: v(&["left", "left sided"]),
            right: v(&["right", "right sided"]),
            bilateral: v(&["bilateral", "both"]),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LexiconFile {
    #[serde(default)]
    version: Option<u32>,
    findings: Vec<FindingEntry>,
    regions: Vec<RegionEntry>,
    negations: Vec<String>,
    #[serde(default)]
    assertions: Vec<String>,
    #[serde(default)]
    laterality: Option<LateralityMarkers>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum PhraseKind {
    Finding(usize),
    Region(usize),
    RegionBase(String),
    Side(Side),
    Negation,
    Assertion,
}

impl PhraseKind {
    fn priority(&self) -> u8 {
        match self {
            PhraseKind::Finding(_) => 0,
            PhraseKind::Region(_) => 1,
            PhraseKind::RegionBase(_) => 2,
            PhraseKind::Side(_) => 3,
            PhraseKind::Negation => 4,
            PhraseKind::Assertion => 5,
        }
    }
}

/// Validated, immutable finding vocabulary.
#[derive(Debug, Clone)]
pub struct Lexicon {
    findings: Vec<FindingEntry>,
    regions: Vec<RegionEntry>,
    negations: Vec<String>,
    assertions: Vec<String>,
    laterality: LateralityMarkers,
    phrases: HashMap<Vec<String>, PhraseKind>,
    max_phrase_len: usize,
    finding_index: HashMap<String, usize>,
    region_index: HashMap<String, usize>,
    /// base name -> (left canonical, right canonical)
    bases: BTreeMap<String, (Option<usize>, Option<usize>)>,
}

pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Lexicon> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Lexicon::from_json_str(&text).map_err(|e| match e {
        Error::Json(j) => Error::parse(path, j.line(), j),
        other => other,
    })
}

/// Lower-cases and splits a phrase into words; any non-alphanumeric character separates words.
pub fn normalize_phrase(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn side_prefix(name: &str) -> Option<(Side, &str)> {
    if let Some(rest) = name.strip_prefix("left ") {
        Some((Side::Left, rest))
    } else {
        name.strip_prefix("right ").map(|rest| (Side::Right, rest))
    }
}

impl Lexicon {
    /// The lexicon shipped with this crate.
    pub fn builtin() -> Lexicon {
        Lexicon::from_json_str(BUILTIN_LEXICON).expect("bundled lexicon is valid")
    }

    pub fn from_json_str(text: &str) -> Result<Lexicon> {
        let file: LexiconFile = serde_json::from_str(text)?;
        Lexicon::from_parts(
            file.findings,
            file.regions,
            file.negations,
            file.assertions,
            file.laterality.unwrap_or_default(),
        )
    }

    fn from_parts(
        findings: Vec<FindingEntry>,
        regions: Vec<RegionEntry>,
        negations: Vec<String>,
        assertions: Vec<String>,
        laterality: LateralityMarkers,
    ) -> Result<Lexicon> {
        let mut lex = Lexicon {
            findings,
            regions,
            negations,
            assertions,
            laterality,
            phrases: HashMap::new(),
            max_phrase_len: 0,
            finding_index: HashMap::new(),
            region_index: HashMap::new(),
            bases: BTreeMap::new(),
        };
        lex.index()?;
        Ok(lex)
    }

    fn index(&mut self) -> Result<()> {
        // Owner label per phrase, used for duplicate diagnostics.
        let mut owners: HashMap<Vec<String>, String> = HashMap::new();
        let mut phrases: HashMap<Vec<String>, PhraseKind> = HashMap::new();

        let mut claim = |phrase: &str, kind: PhraseKind, owner: &str| -> Result<()> {
            let words = normalize_phrase(phrase);
            if words.is_empty() {
                return Err(Error::InvalidLexicon(format!("empty phrase under '{owner}'")));
            }
            match phrases.get(&words) {
                Some(existing) if *existing == kind => Ok(()),
                Some(existing) => {
                    let vocab = |k: &PhraseKind| k.priority() <= 2;
                    if vocab(existing) && vocab(&kind) {
                        Err(Error::DuplicateSynonym {
                            phrase: words.join(" "),
                            first: owners[&words].clone(),
                            second: owner.to_string(),
                        })
                    } else {
                        // Cue words may shadow each other; keep the higher-priority reading.
                        if kind.priority() < existing.priority() {
                            owners.insert(words.clone(), owner.to_string());
                            phrases.insert(words, kind);
                        }
                        Ok(())
                    }
                }
                None => {
                    owners.insert(words.clone(), owner.to_string());
                    phrases.insert(words, kind);
                    Ok(())
                }
            }
        };

        for (i, f) in self.findings.iter().enumerate() {
            let canonical = f.canonical.trim();
            if canonical.is_empty() || canonical.contains('|') {
                return Err(Error::InvalidLexicon(format!("bad finding name '{}'", f.canonical)));
            }
            if self.finding_index.insert(canonical.to_string(), i).is_some() {
                return Err(Error::InvalidLexicon(format!("duplicate finding '{canonical}'")));
            }
            claim(canonical, PhraseKind::Finding(i), canonical)?;
            for s in &f.synonyms {
                claim(s, PhraseKind::Finding(i), canonical)?;
            }
        }

        for (i, r) in self.regions.iter().enumerate() {
            let canonical = r.canonical.trim();
            if self.region_index.insert(canonical.to_string(), i).is_some() {
                return Err(Error::InvalidLexicon(format!("duplicate region '{canonical}'")));
            }
            claim(canonical, PhraseKind::Region(i), canonical)?;
            if r.lateralized {
                let (side, base) = side_prefix(canonical).ok_or_else(|| {
                    Error::InvalidLexicon(format!(
                        "lateralized region '{canonical}' must start with left/right"
                    ))
                })?;
                let slot = self.bases.entry(base.to_string()).or_default();
                match side {
                    Side::Left => slot.0 = Some(i),
                    _ => slot.1 = Some(i),
                }
                claim(base, PhraseKind::RegionBase(base.to_string()), base)?;
            }
            for s in &r.synonyms {
                if !r.lateralized {
                    claim(s, PhraseKind::Region(i), canonical)?;
                    continue;
                }
                let base = side_prefix(canonical).map(|(_, b)| b.to_string()).unwrap_or_default();
                match side_prefix(s.trim()) {
                    Some((_, stripped)) => {
                        claim(s, PhraseKind::Region(i), canonical)?;
                        claim(stripped, PhraseKind::RegionBase(base.clone()), &base)?;
                    }
                    None => claim(s, PhraseKind::RegionBase(base.clone()), &base)?,
                }
            }
        }

        let markers = [
            (Side::Left, &self.laterality.left),
            (Side::Right, &self.laterality.right),
            (Side::Bilateral, &self.laterality.bilateral),
        ];
        for (side, list) in markers {
            for m in list {
                claim(m, PhraseKind::Side(side), "laterality")?;
            }
        }
        for n in &self.negations {
            claim(n, PhraseKind::Negation, "negation")?;
        }
        for a in &self.assertions {
            claim(a, PhraseKind::Assertion, "assertion")?;
        }

        for f in &self.findings {
            for r in &f.default_regions {
                if !self.region_index.contains_key(r) {
                    return Err(Error::InvalidLexicon(format!(
                        "finding '{}' defaults to unknown region '{r}'",
                        f.canonical
                    )));
                }
            }
        }
        for (base, (l, r)) in &self.bases {
            if l.is_none() || r.is_none() {
                return Err(Error::InvalidLexicon(format!(
                    "lateralized region '{base}' lacks a left/right partner"
                )));
            }
        }

        self.max_phrase_len = phrases.keys().map(Vec::len).max().unwrap_or(0);
        self.phrases = phrases;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.findings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn findings(&self) -> &[FindingEntry] {
        &self.findings
    }

    pub fn regions(&self) -> &[RegionEntry] {
        &self.regions
    }

    pub fn negation_cues(&self) -> &[String] {
        &self.negations
    }

    pub fn finding_names(&self) -> impl Iterator<Item = &str> {
        self.findings.iter().map(|f| f.canonical.as_str())
    }

    pub fn region_names(&self) -> impl Iterator<Item = &str> {
        self.regions.iter().map(|r| r.canonical.as_str())
    }

    pub fn is_canonical_finding(&self, name: &str) -> bool {
        self.finding_index.contains_key(name)
    }

    pub fn is_region(&self, name: &str) -> bool {
        self.region_index.contains_key(name)
    }

    pub fn finding(&self, name: &str) -> Option<&FindingEntry> {
        self.finding_index.get(name).map(|&i| &self.findings[i])
    }

    /// Canonical finding name for a surface phrase, if the lexicon knows it.
    pub fn canonical_finding(&self, phrase: &str) -> Option<&str> {
        match self.phrases.get(&normalize_phrase(phrase)) {
            Some(PhraseKind::Finding(i)) => Some(&self.findings[*i].canonical),
            _ => None,
        }
    }

    pub fn is_negation_cue(&self, phrase: &str) -> bool {
        matches!(self.phrases.get(&normalize_phrase(phrase)), Some(PhraseKind::Negation))
    }

    /// Whether a phrase is any lexicon term (finding, anatomy, laterality or cue).
    pub fn knows_phrase(&self, phrase: &str) -> bool {
        self.phrases.contains_key(&normalize_phrase(phrase))
    }

    /// Regions covered by an anatomy string: a canonical region, a side-free
    /// base (both sides) or `bilateral <base>`.
    pub fn anatomy_regions(&self, anatomy: &str) -> Option<Vec<&str>> {
        if let Some(&i) = self.region_index.get(anatomy) {
            return Some(vec![self.regions[i].canonical.as_str()]);
        }
        let base = anatomy.strip_prefix("bilateral ").unwrap_or(anatomy);
        let (l, r) = self.bases.get(base)?;
        Some(vec![
            self.regions[l.expect("validated")].canonical.as_str(),
            self.regions[r.expect("validated")].canonical.as_str(),
        ])
    }

    fn side_of_region(&self, i: usize) -> Option<(Side, String)> {
        let r = &self.regions[i];
        if !r.lateralized {
            return None;
        }
        side_prefix(&r.canonical).map(|(s, b)| (s, b.to_string()))
    }

    fn sided_name(&self, base: &str, side: Option<Side>) -> String {
        let (l, r) = self.bases[base];
        match side {
            Some(Side::Left) => self.regions[l.unwrap()].canonical.clone(),
            Some(Side::Right) => self.regions[r.unwrap()].canonical.clone(),
            Some(Side::Bilateral) => format!("bilateral {base}"),
            None => base.to_string(),
        }
    }

    fn match_at(&self, words: &[Word], at: usize) -> Option<(usize, &PhraseKind)> {
        let longest = self.max_phrase_len.min(words.len() - at);
        (1..=longest).rev().find_map(|len| {
            let key: Vec<String> = words[at..at + len].iter().map(|w| w.norm.clone()).collect();
            self.phrases.get(&key).map(|k| (len, k))
        })
    }
}

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

/// A word with byte offsets into the original text.
#[derive(Debug, Clone, PartialEq)]
pub struct Word {
    pub start: usize,
    pub end: usize,
    pub norm: String,
    /// A comma (or colon, or bracket) separates this word from the previous one.
    pub comma_before: bool,
}

/// A sentence with byte range `[start, end)`, terminator included.
#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    pub start: usize,
    pub end: usize,
    pub words: Vec<Word>,
}

/// Splits text into sentences of words. Sentences without words are dropped.
pub fn split_sentences(text: &str) -> Vec<Sentence> {
    let mut sentences = Vec::new();
    let mut words: Vec<Word> = Vec::new();
    let mut sent_start: Option<usize> = None;
    let mut word_start: Option<usize> = None;
    let mut pending_break = false;
    let chars: Vec<(usize, char)> = text.char_indices().collect();

    let flush_word = |words: &mut Vec<Word>, ws: &mut Option<usize>, end: usize, brk: &mut bool| {
        if let Some(s) = ws.take() {
            words.push(Word {
                start: s,
                end,
                norm: text[s..end].to_lowercase(),
                comma_before: std::mem::take(brk),
            });
        }
    };

    for (k, &(i, c)) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            if word_start.is_none() {
                word_start = Some(i);
            }
            sent_start.get_or_insert(i);
            continue;
        }
        flush_word(&mut words, &mut word_start, i, &mut pending_break);
        let next = chars.get(k + 1).map(|&(_, n)| n);
        let terminal = match c {
            ';' | '!' | '?' | '\n' => true,
            '.' => !next.is_some_and(|n| n.is_ascii_digit()),
            _ => false,
        };
        if matches!(c, ',' | ':' | '(' | ')') {
            pending_break = true;
        }
        if !c.is_whitespace() {
            sent_start.get_or_insert(i);
        }
        if terminal {
            if let Some(s) = sent_start.take() {
                let end = i + c.len_utf8();
                if words.is_empty() {
                    continue;
                }
                let end = if c == '\n' { i } else { end };
                sentences.push(Sentence {
                    start: s,
                    end,
                    words: std::mem::take(&mut words),
                });
            }
            pending_break = false;
        }
    }
    flush_word(&mut words, &mut word_start, text.len(), &mut pending_break);
    if let Some(s) = sent_start {
        if !words.is_empty() {
            let end = text.trim_end().len().max(s);
            sentences.push(Sentence { start: s, end, words });
        }
    }
    sentences
}

// ---------------------------------------------------------------------------
// Extraction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractDiagnostics {
    /// Lexicon phrases (anatomy, laterality, cues) that did not attach to any finding.
    pub skipped_candidates: usize,
}

#[derive(Debug, Clone)]
struct Mention {
    kind: PhraseKind,
    start: usize,
    end: usize,
    segment: usize,
}

pub fn extract_ffl(text: &str, lexicon: &Lexicon) -> Vec<FflPattern> {
    extract_ffl_with_diagnostics(text, lexicon).0
}

pub fn extract_ffl_with_diagnostics(text: &str, lexicon: &Lexicon) -> (Vec<FflPattern>, ExtractDiagnostics) {
    let mut patterns = Vec::new();
    let mut diag = ExtractDiagnostics::default();
    for (si, sentence) in split_sentences(text).iter().enumerate() {
        extract_sentence(si, &sentence.words, lexicon, &mut patterns, &mut diag);
    }
    (patterns, diag)
}

fn extract_sentence(
    si: usize,
    words: &[Word],
    lexicon: &Lexicon,
    out: &mut Vec<FflPattern>,
    diag: &mut ExtractDiagnostics,
) {
    // Longest-first phrase matching; unmatched words may be segment breaks.
    let mut mentions: Vec<Mention> = Vec::new();
    let mut segment = 0usize;
    let mut breakers: Vec<usize> = Vec::new();
    let mut at = 0;
    while at < words.len() {
        if words[at].comma_before && at > 0 {
            segment += 1;
        }
        match lexicon.match_at(words, at) {
            Some((len, kind)) => {
                mentions.push(Mention {
                    kind: kind.clone(),
                    start: at,
                    end: at + len,
                    segment,
                });
                at += len;
            }
            None => {
                let w = words[at].norm.as_str();
                if SEGMENT_BREAKS.contains(&w) {
                    segment += 1;
                }
                if SCOPE_TERMINATORS.contains(&w) {
                    breakers.push(at);
                }
                at += 1;
            }
        }
    }

    let findings: Vec<usize> = (0..mentions.len())
        .filter(|&i| matches!(mentions[i].kind, PhraseKind::Finding(_)))
        .collect();

    // Negation scopes: cue -> findings it governs.
    let mut governed: HashMap<usize, usize> = HashMap::new();
    let mut cue_targets: HashMap<usize, Vec<usize>> = HashMap::new();
    for (ci, cue) in mentions.iter().enumerate() {
        if cue.kind != PhraseKind::Negation {
            continue;
        }
        let scope_end = mentions[ci + 1..]
            .iter()
            .filter(|m| matches!(m.kind, PhraseKind::Negation | PhraseKind::Assertion))
            .map(|m| m.start)
            .chain(breakers.iter().copied().filter(|&b| b > cue.start))
            .min()
            .unwrap_or(words.len());
        let targets: Vec<usize> = findings
            .iter()
            .copied()
            .filter(|&fi| mentions[fi].start >= cue.end && mentions[fi].start < scope_end)
            .collect();
        for &fi in &targets {
            governed.insert(fi, ci);
        }
        cue_targets.insert(ci, targets);
    }

    let mut used = vec![false; mentions.len()];
    for &fi in &findings {
        used[fi] = true;
        let f = &mentions[fi];
        let PhraseKind::Finding(entry_idx) = f.kind else { unreachable!() };
        let entry = &lexicon.findings[entry_idx];
        let seg = f.segment;
        let dist = |m: &Mention| {
            if m.start >= f.end {
                m.start - f.end
            } else {
                f.start - m.end.min(f.start)
            }
        };
        let nearest = |pred: &dyn Fn(&PhraseKind) -> bool| {
            mentions
                .iter()
                .enumerate()
                .filter(|(_, m)| m.segment == seg && pred(&m.kind))
                .min_by_key(|(_, m)| dist(m))
                .map(|(i, _)| i)
        };
        let region = nearest(&|k| matches!(k, PhraseKind::Region(_) | PhraseKind::RegionBase(_)));
        let side = nearest(&|k| matches!(k, PhraseKind::Side(_)));
        let side_val = side.map(|i| match mentions[i].kind {
            PhraseKind::Side(s) => s,
            _ => unreachable!(),
        });

        let mut spans = vec![(f.start, f.end)];
        let mut anatomy = None;
        match region.map(|i| (i, &mentions[i].kind)) {
            Some((ri, PhraseKind::Region(idx))) => {
                anatomy = Some(lexicon.regions[*idx].canonical.clone());
                spans.push((mentions[ri].start, mentions[ri].end));
                used[ri] = true;
                // A side marker adjacent to a sided region ("left sided ... left lung") is redundant.
                if let (Some(si_), Some((rs, _))) = (side, lexicon.side_of_region(*idx)) {
                    if Some(rs) == side_val {
                        spans.push((mentions[si_].start, mentions[si_].end));
                        used[si_] = true;
                    }
                }
            }
            Some((ri, PhraseKind::RegionBase(base))) => {
                anatomy = Some(lexicon.sided_name(base, side_val));
                spans.push((mentions[ri].start, mentions[ri].end));
                used[ri] = true;
                if let Some(s) = side {
                    spans.push((mentions[s].start, mentions[s].end));
                    used[s] = true;
                }
            }
            _ => {
                if let (Some(s), Some(sv)) = (side, side_val) {
                    if let Some(a) = default_anatomy_for_side(lexicon, entry, sv) {
                        anatomy = Some(a);
                        spans.push((mentions[s].start, mentions[s].end));
                        used[s] = true;
                    }
                }
            }
        }

        let alone_in_segment = findings.iter().filter(|&&o| mentions[o].segment == seg).count() == 1;
        if alone_in_segment {
            for (ai, m) in mentions.iter().enumerate() {
                if m.segment == seg && m.kind == PhraseKind::Assertion {
                    spans.push((m.start, m.end));
                    used[ai] = true;
                }
            }
        }

        let polarity = match governed.get(&fi) {
            Some(&ci) => {
                if cue_targets[&ci].len() == 1 {
                    spans.push((mentions[ci].start, mentions[ci].end));
                }
                used[ci] = true;
                Polarity::No
            }
            None => Polarity::Yes,
        };

        spans.sort();
        out.push(FflPattern {
            kind: entry.kind,
            polarity,
            finding: entry.canonical.clone(),
            anatomy,
            spans: spans
                .into_iter()
                .map(|(start, end)| WordSpan { sentence: si, start, end })
                .collect(),
        });
    }

    diag.skipped_candidates += mentions
        .iter()
        .zip(&used)
        .filter(|(m, u)| !**u && !matches!(m.kind, PhraseKind::Finding(_)))
        .count();
}

/// Resolves a bare laterality marker against the finding's default regions.
fn default_anatomy_for_side(lexicon: &Lexicon, entry: &FindingEntry, side: Side) -> Option<String> {
    let sided: Vec<(Side, String)> = entry
        .default_regions
        .iter()
        .filter_map(|r| lexicon.region_index.get(r))
        .filter_map(|&i| lexicon.side_of_region(i))
        .collect();
    let base = &sided.first()?.1;
    if !sided.iter().all(|(_, b)| b == base) {
        return None;
    }
    Some(lexicon.sided_name(base, Some(side)))
}
