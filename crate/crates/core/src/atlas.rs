//! Per-image anatomical region boxes, indicated locations and location pools.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::lexicon::{FflPattern, Lexicon, Polarity};
use crate::synth::Sample;

/// One annotation line: pixel boxes plus image size. Without `width`/`height`
/// the boxes are taken to be normalized already.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<f64>,
    pub regions: Vec<RegionBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionBox {
    pub name: String,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// image id -> region name -> normalized box.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionMap {
    images: BTreeMap<String, BTreeMap<String, BBox>>,
}

impl RegionMap {
    pub fn from_records(records: &[AnnotationRecord], lexicon: &Lexicon) -> Result<Self> {
        let mut images: BTreeMap<String, BTreeMap<String, BBox>> = BTreeMap::new();
        for rec in records {
            let (w, h) = (rec.width.unwrap_or(1.0), rec.height.unwrap_or(1.0));
            let entry = images.entry(rec.image_id.clone()).or_default();
            for r in &rec.regions {
                let name = r.name.trim().to_lowercase();
                let record = format!("image '{}' region '{}'", rec.image_id, r.name);
                if !lexicon.is_region(&name) {
                    return Err(Error::UnknownRegion { region: r.name.clone(), record });
                }
                let b = BBox::from_pixels(r.x, r.y, r.w, r.h, w, h).map_err(|e| Error::BoxOutOfRange {
                    record,
                    detail: e.to_string(),
                })?;
                entry.insert(name, b);
            }
        }
        Ok(RegionMap { images })
    }

    pub fn get(&self, image_id: &str, region: &str) -> Option<BBox> {
        self.images.get(image_id)?.get(region).copied()
    }

    pub fn contains_image(&self, image_id: &str) -> bool {
        self.images.contains_key(image_id)
    }

    pub fn image_ids(&self) -> impl Iterator<Item = &str> {
        self.images.keys().map(String::as_str)
    }

    pub fn regions(&self, image_id: &str) -> Option<&BTreeMap<String, BBox>> {
        self.images.get(image_id)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>> {
    read_jsonl(path)
}

pub fn ingest_annotations(path: impl AsRef<Path>, lexicon: &Lexicon) -> Result<RegionMap> {
    RegionMap::from_records(&read_annotations(path)?, lexicon)
}

pub(crate) fn read_jsonl<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e))?);
    }
    Ok(out)
}

pub(crate) fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item)?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Where a report places a finding in a given image.
#[derive(Debug, Clone, PartialEq)]
pub enum Indicated {
    Located(BBox),
    /// None of the named regions is annotated for the image.
    Unlocatable { wanted: Vec<String> },
}

impl Indicated {
    /// The box used downstream; unlocatable degrades to the zero box.
    pub fn bbox(&self) -> BBox {
        match self {
            Indicated::Located(b) => *b,
            Indicated::Unlocatable { .. } => BBox::ZERO,
        }
    }

    pub fn is_unlocatable(&self) -> bool {
        matches!(self, Indicated::Unlocatable { .. })
    }
}

/// Looks up the box a pattern's anatomy refers to.
///
/// Absent findings sit at the zero box. Findings without anatomy use the
/// union of the finding's default regions. Multi-region anatomy
/// (`bilateral lung`, bare `lung`) resolves to the union of the parts that
/// are annotated for the image.
pub fn indicated_location(
    pattern: &FflPattern,
    image_id: &str,
    regions: &RegionMap,
    lexicon: &Lexicon,
) -> Result<Indicated> {
    let Some(boxes) = regions.regions(image_id) else {
        return Err(Error::UnknownImage(image_id.to_string()));
    };
    if pattern.polarity == Polarity::No {
        return Ok(Indicated::Located(BBox::ZERO));
    }
    let wanted: Vec<String> = match &pattern.anatomy {
        Some(a) => lexicon
            .anatomy_regions(a)
            .ok_or_else(|| Error::UnknownRegion {
                region: a.clone(),
                record: pattern.to_string(),
            })?
            .into_iter()
            .map(str::to_string)
            .collect(),
        None => lexicon
            .finding(&pattern.finding)
            .map(|f| f.default_regions.clone())
            .unwrap_or_default(),
    };
    let found: Vec<&BBox> = wanted.iter().filter_map(|r| boxes.get(r)).collect();
    if found.is_empty() {
        return Ok(Indicated::Unlocatable { wanted });
    }
    Ok(Indicated::Located(BBox::union_all(found)))
}

/// Finding name -> every real box of that finding across the dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LocationPool {
    pools: BTreeMap<String, Vec<BBox>>,
}

impl LocationPool {
    pub fn get(&self, finding: &str) -> &[BBox] {
        self.pools.get(finding).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Findings with a non-empty pool, sorted.
    pub fn findings(&self) -> impl Iterator<Item = &str> {
        self.pools.iter().filter(|(_, v)| !v.is_empty()).map(|(k, _)| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.pools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pools.is_empty()
    }
}

/// Collects the multiset of real present-finding boxes per finding.
pub fn build_pools(samples: &[Sample]) -> LocationPool {
    let mut pools: BTreeMap<String, Vec<BBox>> = BTreeMap::new();
    for s in samples {
        for p in &s.real_pairs {
            if p.finding.polarity == Polarity::Yes && !p.location.is_zero() {
                pools.entry(p.finding.name.clone()).or_default().push(p.location);
            }
        }
    }
    LocationPool { pools }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::parse_ffl;
    use crate::synth::{FlPair, Finding};

    fn record(id: &str, regions: &[(&str, [f64; 4])], dims: Option<(f64, f64)>) -> AnnotationRecord {
        AnnotationRecord {
            image_id: id.into(),
            width: dims.map(|d| d.0),
            height: dims.map(|d| d.1),
            regions: regions
                .iter()
                .map(|(n, b)| RegionBox { name: n.to_string(), x: b[0], y: b[1], w: b[2], h: b[3] })
                .collect(),
        }
    }

    fn map() -> RegionMap {
        RegionMap::from_records(
            &[record(
                "a",
                &[("left lung", [0.1, 0.1, 0.3, 0.6]), ("right lung", [0.55, 0.15, 0.3, 0.5])],
                None,
            )],
            &Lexicon::builtin(),
        )
        .unwrap()
    }

    #[test]
    fn identity_lookup() {
        assert_eq!(map().get("a", "left lung"), Some(BBox { x: 0.1, y: 0.1, w: 0.3, h: 0.6 }));
    }

    #[test]
    fn pixel_records_are_normalized() {
        let m = RegionMap::from_records(
            &[record("p", &[("trachea", [1200.0, 300.0, 200.0, 600.0])], Some((2400.0, 3000.0)))],
            &Lexicon::builtin(),
        )
        .unwrap();
        let b = m.get("p", "trachea").unwrap();
        assert!((b.x - 0.5).abs() < 1e-12 && (b.y - 0.1).abs() < 1e-12);
        assert!((b.w - 1.0 / 12.0).abs() < 1e-12 && (b.h - 0.2).abs() < 1e-12);
    }

    #[test]
    fn unknown_region_and_range_errors() {
        let l = Lexicon::builtin();
        let bad = RegionMap::from_records(&[record("a", &[("flux capacitor", [0.0, 0.0, 0.1, 0.1])], None)], &l);
        assert!(matches!(bad, Err(Error::UnknownRegion { .. })));
        let out = RegionMap::from_records(&[record("a", &[("trachea", [0.9, 0.0, 0.3, 0.1])], None)], &l);
        assert!(matches!(out, Err(Error::BoxOutOfRange { .. })));
    }

    #[test]
    fn indicated_locations() {
        let l = Lexicon::builtin();
        let m = map();
        let p = parse_ffl("yes|pleural effusion|left lung", &l).unwrap();
        assert_eq!(indicated_location(&p, "a", &m, &l).unwrap().bbox(), m.get("a", "left lung").unwrap());
        let p = parse_ffl("no|pneumothorax", &l).unwrap();
        assert_eq!(indicated_location(&p, "a", &m, &l).unwrap(), Indicated::Located(BBox::ZERO));
        // Hand-computed union of (0.1,0.1,0.3,0.6) and (0.55,0.15,0.3,0.5): x 0.1..0.85, y 0.1..0.7.
        let p = parse_ffl("yes|edema", &l).unwrap();
        let u = indicated_location(&p, "a", &m, &l).unwrap().bbox();
        assert!((u.x - 0.1).abs() < 1e-12 && (u.y - 0.1).abs() < 1e-12);
        assert!((u.w - 0.75).abs() < 1e-12 && (u.h - 0.6).abs() < 1e-12);
        let p = parse_ffl("yes|cardiomegaly", &l).unwrap();
        let r = indicated_location(&p, "a", &m, &l).unwrap();
        assert!(r.is_unlocatable());
        assert_eq!(r.bbox(), BBox::ZERO);
        assert!(matches!(indicated_location(&p, "zzz", &m, &l), Err(Error::UnknownImage(_))));
    }

    fn pair(n: Polarity, c: &str, b: BBox) -> FlPair {
        FlPair::real(Finding { polarity: n, name: c.into() }, b)
    }

    #[test]
    fn pools_are_multisets_of_present_boxes() {
        let b1 = BBox { x: 0.1, y: 0.1, w: 0.2, h: 0.2 };
        let b2 = BBox { x: 0.5, y: 0.5, w: 0.2, h: 0.2 };
        let s1 = Sample::new("1", vec![pair(Polarity::Yes, "edema", b1), pair(Polarity::No, "pneumothorax", BBox::ZERO)]);
        let s2 = Sample::new("2", vec![pair(Polarity::Yes, "edema", b2)]);
        let pool = build_pools(&[s1.clone()]);
        assert_eq!(pool.get("edema"), &[b1]);
        let pool = build_pools(&[s1, s2]);
        assert_eq!(pool.get("edema"), &[b1, b2]);
        assert!(pool.get("pneumothorax").is_empty());
    }
}
