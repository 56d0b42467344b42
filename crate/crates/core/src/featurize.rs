//! Image and finding featurizers feeding the projection layers.
//!
//! Images come from an [`EmbeddingStore`], either loaded from disk or built by
//! the [`PlantedSignal`] generator, which encodes the image's true findings and
//! boxes plus seeded noise. Finding vectors are a per-`(N, C)` base vector
//! plus a fixed linear encoding of the claimed box.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::atlas::{read_jsonl, write_jsonl};
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::lexicon::Polarity;
use crate::rng::stream;
use crate::synth::{Finding, Sample};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingStore {
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingRecord {
    id: String,
    vector: Vec<f64>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore { dim, vectors: BTreeMap::new() }
    }

    pub fn insert(&mut self, id: impl Into<String>, v: Vec<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::ShapeMismatch { left: vec![self.dim], right: vec![v.len()] });
        }
        self.vectors.insert(id.into(), v);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&[f64]> {
        self.vectors.get(id).map(Vec::as_slice).ok_or_else(|| Error::MissingEmbedding(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.vectors.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// JSON lines `{id, vector}`; all vectors must share one length.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let records: Vec<EmbeddingRecord> = read_jsonl(path)?;
        let dim = records.first().map_or(0, |r| r.vector.len());
        let mut store = EmbeddingStore::new(dim);
        for (i, r) in records.into_iter().enumerate() {
            store.insert(r.id, r.vector).map_err(|e| Error::parse(path, i + 1, e))?;
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let records: Vec<EmbeddingRecord> =
            self.vectors.iter().map(|(id, v)| EmbeddingRecord { id: id.clone(), vector: v.clone() }).collect();
        write_jsonl(path, &records)
    }
}

fn normal(rng: &mut crate::rng::Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian_vec(n: usize, scale: f64, rng: &mut crate::rng::Rng) -> Vec<f64> {
    (0..n).map(|_| scale * normal(rng)).collect()
}

/// Row-major `rows x cols` matrix whose columns are orthonormal when
/// `rows >= cols` (Gram-Schmidt on Gaussian columns); otherwise its rows are.
fn orthonormal(rows: usize, cols: usize, rng: &mut crate::rng::Rng) -> Vec<f64> {
    let (n, len) = if rows >= cols { (cols, rows) } else { (rows, cols) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v = gaussian_vec(len, 1.0, rng);
        for _ in 0..2 {
            for b in &basis {
                let d = crate::nn::dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
        }
        let norm = crate::nn::dot(&v, &v).sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let mut m = vec![0.0; rows * cols];
    for (i, b) in basis.iter().enumerate() {
        for (j, x) in b.iter().enumerate() {
            let (r, c) = if rows >= cols { (j, i) } else { (i, j) };
            m[r * cols + c] = *x;
        }
    }
    m
}

/// Values per finding in the slot layout: present flag, absent flag, each
/// box coordinate `v` as the pair `(v, 1 - v)`, then a `grid x grid`
/// coverage map of the box.
pub fn slot_width(grid: usize) -> usize {
    10 + grid * grid
}

/// A finding's slot: flags `[1, 0]` then the coded box when present at `b`;
/// `[0, 1, 0, ..]` when absent.
pub fn slot_values(present_at: Option<BBox>, grid: usize) -> Vec<f64> {
    let mut v = vec![0.0; slot_width(grid)];
    match present_at {
        Some(b) => {
            v[0] = 1.0;
            for (i, c) in b.to_array().into_iter().enumerate() {
                v[2 + 2 * i] = c;
                v[3 + 2 * i] = 1.0 - c;
            }
            if grid > 0 {
                v[10..].copy_from_slice(&coverage(&b, grid));
            }
        }
        None => v[1] = 1.0,
    }
    v
}

/// Fraction of each cell of a `grid x grid` partition of the unit square
/// covered by `b`, row-major.
pub fn coverage(b: &BBox, grid: usize) -> Vec<f64> {
    let cell = 1.0 / grid as f64;
    let mut out = Vec::with_capacity(grid * grid);
    for r in 0..grid {
        for c in 0..grid {
            let cb = BBox { x: c as f64 * cell, y: r as f64 * cell, w: cell, h: cell };
            out.push(b.intersection_area(&cb) / (cell * cell));
        }
    }
    out
}

/// Synthetic image embeddings carrying each image's true findings.
///
/// The latent has one [`slot_values`] block per vocabulary finding (present
/// findings carry their box; several boxes of one finding are merged),
/// scaled by `slot_gain`, followed by `nuisance_dim` dimensions of unrelated
/// per-image content. Gaussian noise is added and the latent is mapped to
/// `image_dim` by a fixed random matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSignal {
    pub seed: u64,
    pub image_dim: usize,
    pub findings: Vec<String>,
    pub slot_gain: f64,
    pub noise: f64,
    pub nuisance_dim: usize,
    pub nuisance_scale: f64,
    #[serde(default)]
    pub grid: usize,
    /// Side of the finding-independent map of covered cells after the slots.
    #[serde(default)]
    pub occupancy: usize,
}

impl PlantedSignal {
    fn signal_dim(&self) -> usize {
        slot_width(self.grid) * self.findings.len() + self.occupancy * self.occupancy
    }

    pub fn latent_dim(&self) -> usize {
        self.signal_dim() + self.nuisance_dim
    }

    fn mixing(&self) -> Vec<f64> {
        orthonormal(self.image_dim, self.latent_dim(), &mut stream(self.seed, "image-mixing"))
    }

    fn latent(&self, image_id: &str, present: &[(&str, BBox)]) -> Vec<f64> {
        let mut rng = stream(self.seed, image_id);
        let slots = self.signal_dim();
        let mut z = vec![0.0; self.latent_dim()];
        let mut boxes: BTreeMap<usize, BBox> = BTreeMap::new();
        for (name, b) in present {
            if let Ok(k) = self.findings.binary_search_by(|f| f.as_str().cmp(name)) {
                let merged = boxes.get(&k).map_or(*b, |old| BBox::union_all([old, b]));
                boxes.insert(k, merged);
            }
        }
        let width = slot_width(self.grid);
        for k in 0..self.findings.len() {
            let slot = slot_values(boxes.get(&k).copied(), self.grid);
            for (j, v) in slot.iter().enumerate() {
                z[width * k + j] = self.slot_gain * v;
            }
        }
        if self.occupancy > 0 {
            let base = width * self.findings.len();
            let mut covered = vec![0.0; self.occupancy * self.occupancy];
            for b in boxes.values() {
                covered.iter_mut().zip(coverage(b, self.occupancy)).for_each(|(c, v)| *c += v);
            }
            for (g, c) in covered.into_iter().enumerate() {
                z[base + g] = self.slot_gain * c.min(1.0);
            }
        }
        for (i, v) in z.iter_mut().enumerate() {
            let sd = if i < slots { self.noise } else { self.nuisance_scale };
            *v += sd * normal(&mut rng);
        }
        z
    }

    pub fn image_vector(&self, image_id: &str, present: &[(&str, BBox)]) -> Vec<f64> {
        self.image_vector_with(&self.mixing(), image_id, present)
    }

    fn image_vector_with(&self, mixing: &[f64], image_id: &str, present: &[(&str, BBox)]) -> Vec<f64> {
        let z = self.latent(image_id, present);
        let d = z.len();
        (0..self.image_dim).map(|o| crate::nn::dot(&mixing[o * d..(o + 1) * d], &z)).collect()
    }

    /// One vector per sample, from the sample's present real pairs.
    pub fn embed_samples(&self, samples: &[Sample]) -> EmbeddingStore {
        let mixing = self.mixing();
        let mut store = EmbeddingStore::new(self.image_dim);
        for s in samples {
            let present: Vec<(&str, BBox)> = s.present().map(|p| (p.finding.name.as_str(), p.location)).collect();
            store.vectors.insert(s.image_id.clone(), self.image_vector_with(&mixing, &s.image_id, &present));
        }
        store
    }

    /// Sorted finding vocabulary of the present real pairs in `samples`.
    pub fn vocabulary(samples: &[Sample]) -> Vec<String> {
        let set: std::collections::BTreeSet<&str> =
            samples.iter().flat_map(|s| s.present().map(|p| p.finding.name.as_str())).collect();
        set.into_iter().map(String::from).collect()
    }
}

/// Finding vectors.
///
/// Findings in `vocabulary` are written into the same slot layout as
/// [`PlantedSignal`] (one filled slot, box scaled by `box_gain`) and mixed by
/// the encoder's own random matrix. Other findings get a base vector per
/// `(N, C)`, seeded or read from a store keyed `"yes|edema"`, plus
/// `box_gain * G [x, y, w, h]` for a fixed random `G`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEncoder {
    pub dim: usize,
    pub seed: u64,
    pub box_gain: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vocabulary: Vec<String>,
    /// Side of the coverage map in each slot.
    #[serde(default)]
    pub grid: usize,
    /// Side of the claimed-box coverage map after the slots.
    #[serde(default)]
    pub occupancy: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub store: Option<EmbeddingStore>,
    #[serde(skip)]
    matrices: MatrixCache,
}

/// Lazily built mixing matrices; never part of equality or serialization.
#[derive(Debug, Clone, Default)]
struct MatrixCache {
    slot: OnceLock<Vec<f64>>,
    boxes: OnceLock<Vec<f64>>,
}

impl PartialEq for MatrixCache {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl TextEncoder {
    pub fn seeded(dim: usize, seed: u64, box_gain: f64) -> Self {
        TextEncoder {
            dim,
            seed,
            box_gain,
            vocabulary: Vec::new(),
            grid: 0,
            occupancy: 0,
            store: None,
            matrices: MatrixCache::default(),
        }
    }

    /// Slot-layout encoder over a sorted vocabulary.
    pub fn slotted(dim: usize, seed: u64, box_gain: f64, vocabulary: Vec<String>, grid: usize, occupancy: usize) -> Self {
        TextEncoder { dim, seed, box_gain, vocabulary, grid, occupancy, store: None, matrices: MatrixCache::default() }
    }

    fn slot_latent_dim(&self) -> usize {
        slot_width(self.grid) * self.vocabulary.len() + self.occupancy * self.occupancy
    }

    fn box_matrix(&self) -> &[f64] {
        self.matrices.boxes.get_or_init(|| {
            gaussian_vec(self.dim * 4, 1.0 / (self.dim as f64).sqrt(), &mut stream(self.seed, "box-encoding"))
        })
    }

    fn slot_matrix(&self) -> &[f64] {
        self.matrices
            .slot
            .get_or_init(|| orthonormal(self.dim, self.slot_latent_dim(), &mut stream(self.seed, "text-mixing")))
    }

    pub fn base(&self, finding: &Finding) -> Result<Vec<f64>> {
        let key = finding.to_string();
        match &self.store {
            Some(store) => {
                let v = store.get(&key)?;
                if v.len() != self.dim {
                    return Err(Error::ShapeMismatch { left: vec![self.dim], right: vec![v.len()] });
                }
                Ok(v.to_vec())
            }
            None => {
                let mut rng = stream(self.seed, &format!("finding:{key}"));
                Ok(gaussian_vec(self.dim, 1.0 / (self.dim as f64).sqrt(), &mut rng))
            }
        }
    }

    pub fn encode(&self, finding: &Finding, claimed: BBox) -> Result<Vec<f64>> {
        if self.store.is_none() {
            if let Ok(k) = self.vocabulary.binary_search(&finding.name) {
                let latent = self.slot_latent_dim();
                let mut z = vec![0.0; latent];
                let slot = match finding.polarity {
                    Polarity::Yes => slot_values(Some(claimed), self.grid),
                    Polarity::No => slot_values(None, self.grid),
                };
                let width = slot.len();
                for (j, v) in slot.iter().enumerate() {
                    z[width * k + j] = if j < 2 { *v } else { self.box_gain * v };
                }
                if self.occupancy > 0 && finding.polarity == Polarity::Yes {
                    let base = width * self.vocabulary.len();
                    for (g, c) in coverage(&claimed, self.occupancy).into_iter().enumerate() {
                        z[base + g] = self.box_gain * c;
                    }
                }
                let m = self.slot_matrix();
                return Ok((0..self.dim).map(|o| crate::nn::dot(&m[o * latent..(o + 1) * latent], &z)).collect());
            }
        }
        let mut v = self.base(finding)?;
        let g = self.box_matrix();
        let b = claimed.to_array();
        for (o, out) in v.iter_mut().enumerate() {
            *out += self.box_gain * crate::nn::dot(&g[o * 4..o * 4 + 4], &b);
        }
        Ok(v)
    }
}

/// Everything needed to turn `(image_id, finding, claimed box)` into the two
/// model inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planted: Option<PlantedSignal>,
    pub images: EmbeddingStore,
    pub text: TextEncoder,
}

impl Featurizer {
    pub fn image_dim(&self) -> usize {
        self.images.dim
    }

    pub fn text_dim(&self) -> usize {
        self.text.dim
    }

    pub fn image(&self, image_id: &str) -> Result<&[f64]> {
        self.images.get(image_id)
    }

    pub fn finding(&self, finding: &Finding, claimed: BBox) -> Result<Vec<f64>> {
        self.text.encode(finding, claimed)
    }

    /// Row-major `proj_dim x image_dim` and `proj_dim x text_dim` projection
    /// weights that map planted image vectors and slot-layout finding vectors
    /// into one shared space, the way a pretrained image-text encoder pair
    /// would. `None` unless both sides use the same slot layout.
    pub fn aligned_projections(&self, proj_dim: usize) -> Option<(Vec<f64>, Vec<f64>)> {
        let planted = self.planted.as_ref()?;
        let text = &self.text;
        if text.store.is_some()
            || text.vocabulary.is_empty()
            || text.vocabulary != planted.findings
            || text.grid != planted.grid
            || text.occupancy != planted.occupancy
            || planted.image_dim != self.images.dim
        {
            return None;
        }
        let latent = planted.latent_dim();
        let slots = text.slot_latent_dim();
        let q = orthonormal(proj_dim, latent, &mut stream(planted.seed, "shared-projection"));
        let compose = |mixing: &[f64], out_dim: usize, width: usize| {
            let mut w = vec![0.0; proj_dim * out_dim];
            for p in 0..proj_dim {
                let qr = &q[p * latent..p * latent + width];
                for o in 0..out_dim {
                    w[p * out_dim + o] = crate::nn::dot(qr, &mixing[o * width..(o + 1) * width]);
                }
            }
            w
        };
        Some((compose(&planted.mixing(), self.images.dim, latent), compose(&text.slot_matrix(), text.dim, slots)))
    }
}
