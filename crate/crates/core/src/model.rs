//! The fact-checking network: two bias-free projections with L2
//! normalization, a contrastive head over the normalized embeddings, and an
//! MLP regressor on their concatenation emitting `(x, y, w, h, E)` through a
//! sigmoid.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bbox::{iou, BBox};
use crate::error::{Error, Result};
use crate::featurize::Featurizer;
use crate::nn::{
    self, bce, box_loss, dropout, dropout_backward, l2_normalize, l2_normalize_backward, pair_bce_loss,
    regression_loss, relu, relu_backward, sigmoid, sigmoid_backward, supcon_loss, AdamW, CosineSchedule, Linear,
    RegressionTerms, Tensor,
};
use crate::rng::{stream, Rng};
use crate::synth::{Finding, FlPair, Provenance, Sample};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Joint training of the contrastive encoder loss and the 5-output regressor.
    Comb,
    /// Encoder trained with BCE on pair realness instead of the contrastive loss.
    BceEncoder,
    /// Projections frozen at initialization; only the regressor trains.
    FrozenEncoder,
    /// Separate box head (L1 + GIoU + MSE) and classification head (BCE).
    DualHead,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Comb, Variant::BceEncoder, Variant::FrozenEncoder, Variant::DualHead];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Comb => "comb",
            Variant::BceEncoder => "bce_encoder",
            Variant::FrozenEncoder => "frozen_encoder",
            Variant::DualHead => "dual_head",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant '{s}'")))
    }
}

/// What the box outputs are trained toward for each pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxTarget {
    /// Where the claimed finding actually is in the image: the real box for
    /// real pairs and relocations, the zero box for reversals and substitutions.
    Grounded,
    /// The pair's own (claimed) box.
    Claimed,
}

impl BoxTarget {
    pub fn target(self, sample: &Sample, pair: &FlPair) -> BBox {
        match self {
            BoxTarget::Grounded => sample.grounded_location(pair),
            BoxTarget::Claimed => pair.location,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub proj_dim: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub tau: f64,
    /// Put the positive term in its own contrastive denominator.
    pub include_positive: bool,
    pub contrastive_weight: f64,
    /// Epochs of encoder-loss-only training before the joint phase.
    pub contrastive_warmup_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_lr: f64,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    pub variant: Variant,
    pub box_target: BoxTarget,
    /// Start the projections from the featurizer's aligned weights when it has them.
    pub pretrained_projections: bool,
    /// Feed the regressor unit-length embeddings rather than raw projections.
    pub normalize_regressor_input: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            proj_dim: 512,
            hidden: vec![512, 256],
            dropout: 0.1,
            tau: 0.07,
            include_positive: false,
            contrastive_weight: 1.0,
            contrastive_warmup_epochs: 0,
            epochs: 100,
            batch_size: 32,
            max_lr: 1e-5,
            warmup_steps: 50,
            weight_decay: 0.01,
            variant: Variant::Comb,
            box_target: BoxTarget::Claimed,
            pretrained_projections: true,
            normalize_regressor_input: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("{what} must be positive")));
        if self.proj_dim == 0 || self.hidden.iter().any(|h| *h == 0) {
            return bad("layer widths");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size");
        }
        if !(self.tau > 0.0) || !(self.max_lr > 0.0) || !self.max_lr.is_finite() {
            return bad("tau and max_lr");
        }
        if !(0.0..1.0).contains(&self.dropout) || self.weight_decay < 0.0 || self.contrastive_weight < 0.0 {
            return Err(Error::InvalidArgument("dropout, weight decay or loss weight out of range".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// An MLP whose outputs fill `offset..offset + width` of the 5-vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub layers: Vec<Linear>,
    pub offset: usize,
}

struct HeadCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    masks: Vec<Vec<f64>>,
    out: Vec<f64>,
}

impl Head {
    fn init(input: usize, hidden: &[usize], outputs: usize, offset: usize, rng: &mut Rng) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(outputs);
        let layers = dims.windows(2).map(|w| Linear::init(w[0], w[1], true, rng)).collect();
        Head { layers, offset }
    }

    fn width(&self) -> usize {
        self.layers.last().map_or(0, Linear::output_dim)
    }

    fn forward(&self, u: &[f64], p: f64, train: bool, rng: &mut Rng) -> Result<HeadCache> {
        let n = self.layers.len();
        let mut cache = HeadCache { inputs: Vec::with_capacity(n), pre: Vec::new(), masks: Vec::new(), out: Vec::new() };
        let mut x = u.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let y = layer.forward(&x)?;
            cache.inputs.push(x);
            if i + 1 == n {
                cache.out = sigmoid(&y);
                break;
            }
            let (d, mask) = dropout(&relu(&y), p, train, rng)?;
            cache.pre.push(y);
            cache.masks.push(mask);
            x = d;
        }
        Ok(cache)
    }

    /// `d_out` is with respect to the sigmoid outputs; returns `dL/du`.
    fn backward(&mut self, cache: &HeadCache, d_out: &[f64]) -> Result<Vec<f64>> {
        let mut g = sigmoid_backward(&cache.out, d_out);
        for i in (0..self.layers.len()).rev() {
            g = self.layers[i].backward(&cache.inputs[i], &g)?;
            if i > 0 {
                g = relu_backward(&cache.pre[i - 1], &dropout_backward(&cache.masks[i - 1], &g));
            }
        }
        Ok(g)
    }
}

/// A projection output before and after unit normalization.
struct Embedding {
    raw: Vec<f64>,
    unit: Vec<f64>,
    norm: f64,
}

impl Embedding {
    fn regressor_input(&self, normalized: bool) -> &[f64] {
        if normalized {
            &self.unit
        } else {
            &self.raw
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcParams {
    pub image_proj: Linear,
    pub text_proj: Linear,
    pub heads: Vec<Head>,
}

impl FcParams {
    pub fn init(image_dim: usize, text_dim: usize, config: &ModelConfig, seed: u64) -> Self {
        let mut rng = stream(seed, "init");
        let image_proj = Linear::init(image_dim, config.proj_dim, false, &mut rng);
        let text_proj = Linear::init(text_dim, config.proj_dim, false, &mut rng);
        let u = 2 * config.proj_dim;
        let heads = match config.variant {
            Variant::DualHead => vec![
                Head::init(u, &config.hidden, 4, 0, &mut rng),
                Head::init(u, &config.hidden, 1, 4, &mut rng),
            ],
            _ => vec![Head::init(u, &config.hidden, 5, 0, &mut rng)],
        };
        FcParams { image_proj, text_proj, heads }
    }

    pub fn regressor_params(&self) -> usize {
        self.heads.iter().flat_map(|h| &h.layers).map(Linear::num_params).sum()
    }

    pub fn encoder_params(&self) -> usize {
        self.image_proj.num_params() + self.text_proj.num_params()
    }

    pub fn tensors_mut(&mut self, with_encoder: bool) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        if with_encoder {
            v.extend(self.image_proj.params_mut());
            v.extend(self.text_proj.params_mut());
        }
        for h in &mut self.heads {
            for l in &mut h.layers {
                v.extend(l.params_mut());
            }
        }
        v
    }

    pub fn zero_grad(&mut self) {
        self.tensors_mut(true).into_iter().for_each(Tensor::zero_grad);
    }

    fn is_finite(&self) -> bool {
        let mut all = vec![&self.image_proj, &self.text_proj];
        all.extend(self.heads.iter().flat_map(|h| &h.layers));
        all.iter().all(|l| l.params().iter().all(|t| t.is_finite()))
    }

    fn embed(&self, proj: &Linear, x: &[f64]) -> Result<Embedding> {
        let raw = proj.forward(x)?;
        let (unit, norm) = l2_normalize(&raw);
        Ok(Embedding { raw, unit, norm })
    }

    fn regress(&self, zi: &[f64], zt: &[f64], p: f64, train: bool, rng: &mut Rng) -> Result<(Vec<HeadCache>, [f64; 5])> {
        let u: Vec<f64> = zi.iter().chain(zt).copied().collect();
        let mut y = [0.0; 5];
        let mut caches = Vec::with_capacity(self.heads.len());
        for h in &self.heads {
            let c = h.forward(&u, p, train, rng)?;
            y[h.offset..h.offset + h.width()].copy_from_slice(&c.out);
            caches.push(c);
        }
        Ok((caches, y))
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub encoder_loss: f64,
    pub regression_loss: f64,
    pub terms: RegressionTerms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub seed: u64,
    pub config: ModelConfig,
    pub featurizer: Featurizer,
    pub params: FcParams,
    pub optimizer: AdamW,
    pub step: u64,
    pub total_steps: u64,
    /// Position of the training stream after the last step.
    pub rng_word_pos: u128,
    pub log: Vec<EpochLog>,
}

struct PreparedPair {
    text: Vec<f64>,
    target: [f64; 5],
    real: bool,
}

struct PreparedSample<'a> {
    image: &'a [f64],
    pairs: Vec<PreparedPair>,
}

fn prepare<'a>(featurizer: &'a Featurizer, samples: &[Sample], target: BoxTarget) -> Result<Vec<PreparedSample<'a>>> {
    samples
        .iter()
        .map(|s| {
            let pairs = s
                .pairs()
                .map(|p| {
                    Ok(PreparedPair {
                        text: featurizer.finding(&p.finding, p.location)?,
                        target: nn::target_vector(target.target(s, p), p.real),
                        real: p.real,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(PreparedSample { image: featurizer.image(&s.image_id)?, pairs })
        })
        .collect()
}

#[derive(Default)]
struct StepStats {
    encoder: f64,
    encoder_n: usize,
    regression: f64,
    terms: RegressionTerms,
    pairs: usize,
}

/// Forward and backward for one sample; gradients are scaled by `weight`.
fn sample_step(
    params: &mut FcParams,
    config: &ModelConfig,
    s: &PreparedSample,
    weight: f64,
    joint: bool,
    rng: &mut Rng,
    stats: &mut StepStats,
) -> Result<()> {
    let train_encoder = config.variant != Variant::FrozenEncoder;
    let normalized = config.normalize_regressor_input;
    let ei = params.embed(&params.image_proj, s.image)?;
    let texts: Vec<Embedding> = s.pairs.iter().map(|p| params.embed(&params.text_proj, &p.text)).collect::<Result<_>>()?;
    let proj = ei.raw.len();
    // Gradients with respect to the unit and raw embeddings.
    let mut du_i = vec![0.0; proj];
    let mut dr_i = vec![0.0; proj];
    let mut du_t: Vec<Vec<f64>> = vec![vec![0.0; proj]; texts.len()];
    let mut dr_t: Vec<Vec<f64>> = vec![vec![0.0; proj]; texts.len()];

    let reals: Vec<usize> = (0..s.pairs.len()).filter(|&i| s.pairs[i].real).collect();
    let fakes: Vec<usize> = (0..s.pairs.len()).filter(|&i| !s.pairs[i].real).collect();
    if train_encoder && !reals.is_empty() && !fakes.is_empty() {
        let zr: Vec<&[f64]> = reals.iter().map(|&i| texts[i].unit.as_slice()).collect();
        let zf: Vec<&[f64]> = fakes.iter().map(|&i| texts[i].unit.as_slice()).collect();
        let g = match config.variant {
            Variant::BceEncoder => pair_bce_loss(&ei.unit, &zr, &zf, config.tau)?,
            _ => supcon_loss(&ei.unit, &zr, &zf, config.tau, config.include_positive)?,
        };
        stats.encoder += g.loss;
        stats.encoder_n += 1;
        let w = weight * config.contrastive_weight;
        du_i.iter_mut().zip(&g.d_image).for_each(|(a, b)| *a += w * b);
        for (k, &i) in reals.iter().enumerate() {
            du_t[i].iter_mut().zip(&g.d_real[k]).for_each(|(a, b)| *a += w * b);
        }
        for (k, &i) in fakes.iter().enumerate() {
            du_t[i].iter_mut().zip(&g.d_fake[k]).for_each(|(a, b)| *a += w * b);
        }
    }

    if joint && !s.pairs.is_empty() {
        let w = weight / s.pairs.len() as f64;
        let zi = ei.regressor_input(normalized);
        for (i, p) in s.pairs.iter().enumerate() {
            let (caches, y) = params.regress(zi, texts[i].regressor_input(normalized), config.dropout, true, rng)?;
            let (terms, dy) = pair_loss(config.variant, &y, &p.target)?;
            stats.regression += terms.total();
            stats.terms.l1 += terms.l1;
            stats.terms.giou += terms.giou;
            stats.terms.mse += terms.mse;
            stats.terms.bce += terms.bce;
            stats.pairs += 1;
            let (gi, gt) = if normalized { (&mut du_i, &mut du_t[i]) } else { (&mut dr_i, &mut dr_t[i]) };
            for (h, c) in params.heads.iter_mut().zip(&caches) {
                let d_out: Vec<f64> = dy[h.offset..h.offset + h.width()].iter().map(|g| g * w).collect();
                let du = h.backward(c, &d_out)?;
                gi.iter_mut().zip(&du[..proj]).for_each(|(a, b)| *a += b);
                gt.iter_mut().zip(&du[proj..]).for_each(|(a, b)| *a += b);
            }
        }
    }

    if train_encoder {
        let mut gi = l2_normalize_backward(&ei.unit, ei.norm, &du_i);
        gi.iter_mut().zip(&dr_i).for_each(|(a, b)| *a += b);
        params.image_proj.accumulate(s.image, &gi);
        for (i, p) in s.pairs.iter().enumerate() {
            let mut gt = l2_normalize_backward(&texts[i].unit, texts[i].norm, &du_t[i]);
            gt.iter_mut().zip(&dr_t[i]).for_each(|(a, b)| *a += b);
            params.text_proj.accumulate(&p.text, &gt);
        }
    }
    Ok(())
}

/// A saturated sigmoid reads exactly 0 or 1 in floating point; keep it inside
/// (0, 1) so the cross-entropy term stays defined. NaN means training diverged.
fn open_unit(p: f64) -> Result<f64> {
    if !p.is_finite() {
        return Err(Error::Numerical(format!("veracity output {p}")));
    }
    Ok(p.clamp(1e-12, 1.0 - 1e-12))
}

/// Loss and gradient with respect to the assembled 5 outputs.
fn pair_loss(variant: Variant, y: &[f64; 5], target: &[f64; 5]) -> Result<(RegressionTerms, [f64; 5])> {
    let mut y = *y;
    y[4] = open_unit(y[4])?;
    let y = &y;
    match variant {
        Variant::DualHead => {
            let (mut t, gb) = box_loss(&[y[0], y[1], y[2], y[3]], &[target[0], target[1], target[2], target[3]]);
            let (l, ge) = bce(y[4], target[4])?;
            t.bce = l;
            Ok((t, [gb[0], gb[1], gb[2], gb[3], ge]))
        }
        _ => regression_loss(y, target),
    }
}

/// Loss of one sample with gradients accumulated into `params`, using the
/// training objective of `config` (dropout is applied if configured).
pub fn sample_loss(
    params: &mut FcParams,
    featurizer: &Featurizer,
    config: &ModelConfig,
    sample: &Sample,
    rng: &mut Rng,
) -> Result<f64> {
    let prepared = prepare(featurizer, std::slice::from_ref(sample), config.box_target)?;
    let mut stats = StepStats::default();
    sample_step(params, config, &prepared[0], 1.0, true, rng, &mut stats)?;
    Ok(config.contrastive_weight * stats.encoder + stats.regression / stats.pairs.max(1) as f64)
}

/// Trains from scratch. Deterministic in `(samples, featurizer, config, seed)`.
pub fn train(samples: &[Sample], featurizer: Featurizer, config: &ModelConfig, seed: u64) -> Result<Checkpoint> {
    config.validate()?;
    if samples.is_empty() || samples.iter().all(|s| s.real_pairs.is_empty() && s.fake_pairs.is_empty()) {
        return Err(Error::EmptyDataset);
    }
    let mut params = FcParams::init(featurizer.image_dim(), featurizer.text_dim(), config, seed);
    // The frozen variant stands for a generic encoder, so it keeps its random projections.
    if config.pretrained_projections && config.variant != Variant::FrozenEncoder {
        if let Some((wi, wt)) = featurizer.aligned_projections(config.proj_dim) {
            params.image_proj.weight = Tensor::from_vec(&[config.proj_dim, featurizer.image_dim()], wi)?;
            params.text_proj.weight = Tensor::from_vec(&[config.proj_dim, featurizer.text_dim()], wt)?;
        }
    }
    let batches = samples.len().div_ceil(config.batch_size) as u64;
    let mut ckpt = Checkpoint {
        format_version: CHECKPOINT_VERSION,
        seed,
        config: config.clone(),
        featurizer,
        params,
        optimizer: AdamW::new(config.weight_decay),
        step: 0,
        total_steps: batches * config.epochs as u64,
        rng_word_pos: 0,
        log: Vec::new(),
    };
    let prepared = prepare(&ckpt.featurizer, samples, config.box_target)?;
    let schedule = CosineSchedule { max_lr: config.max_lr, warmup_steps: config.warmup_steps, total_steps: ckpt.total_steps };
    let mut rng = Rng::seed_from_u64(crate::rng::stream_seed(seed, "train"));
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let with_encoder = config.variant != Variant::FrozenEncoder;
    let mut params = ckpt.params.clone();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let joint = epoch >= config.contrastive_warmup_epochs;
        let mut stats = StepStats::default();
        let mut lr = 0.0;
        for batch in order.chunks(config.batch_size) {
            params.zero_grad();
            let weight = 1.0 / batch.len() as f64;
            for &i in batch {
                sample_step(&mut params, config, &prepared[i], weight, joint, &mut rng, &mut stats)?;
            }
            lr = schedule.lr(ckpt.step);
            ckpt.optimizer.step(&mut params.tensors_mut(with_encoder), lr)?;
            ckpt.step += 1;
        }
        let log = EpochLog {
            epoch,
            lr,
            encoder_loss: stats.encoder / stats.encoder_n.max(1) as f64,
            regression_loss: stats.regression / stats.pairs.max(1) as f64,
            terms: RegressionTerms {
                l1: stats.terms.l1 / stats.pairs.max(1) as f64,
                giou: stats.terms.giou / stats.pairs.max(1) as f64,
                mse: stats.terms.mse / stats.pairs.max(1) as f64,
                bce: stats.terms.bce / stats.pairs.max(1) as f64,
            },
        };
        if !(log.encoder_loss.is_finite() && log.regression_loss.is_finite()) || !params.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss or parameters at epoch {epoch}")));
        }
        ckpt.log.push(log);
    }
    ckpt.params = params;
    ckpt.rng_word_pos = rng.get_word_pos();
    Ok(ckpt)
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Probability that the pair is real.
    pub e_hat: f64,
    pub bbox: BBox,
}

impl Prediction {
    pub fn verdict(&self) -> bool {
        self.e_hat >= 0.5
    }
}

impl Checkpoint {
    /// Predicted realness and location for a finding claimed at `claimed`.
    pub fn predict(&self, image_id: &str, finding: &Finding, claimed: BBox) -> Result<Prediction> {
        let image = self.featurizer.image(image_id)?;
        let ei = self.params.embed(&self.params.image_proj, image)?;
        self.predict_embedded(&ei, finding, claimed)
    }

    /// Predictions for several findings of one image, projecting the image once.
    pub fn predict_many(&self, image_id: &str, queries: &[(Finding, BBox)]) -> Result<Vec<Prediction>> {
        let image = self.featurizer.image(image_id)?;
        let ei = self.params.embed(&self.params.image_proj, image)?;
        queries.iter().map(|(f, b)| self.predict_embedded(&ei, f, *b)).collect()
    }

    fn predict_embedded(&self, ei: &Embedding, finding: &Finding, claimed: BBox) -> Result<Prediction> {
        let text = self.featurizer.finding(finding, claimed)?;
        let et = self.params.embed(&self.params.text_proj, &text)?;
        let normalized = self.config.normalize_regressor_input;
        // Dropout is off, so the stream is never drawn from.
        let mut unused = Rng::seed_from_u64(0);
        let (_, y) = self.params.regress(ei.regressor_input(normalized), et.regressor_input(normalized), 0.0, false, &mut unused)?;
        Ok(Prediction { e_hat: y[4], bbox: BBox { x: y[0], y: y[1], w: y[2], h: y[3] } })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} (expected {CHECKPOINT_VERSION})",
                ckpt.format_version
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Checkpoint::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// SHA-256 of the serialized checkpoint, hex encoded.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_json()?.as_bytes()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub pairs: usize,
    pub accuracy: f64,
    /// Mean IoU over pairs whose target box is non-zero.
    pub miou: f64,
    pub miou_pairs: usize,
    /// Pairs left out of the mIoU because their target box is zero.
    pub miou_excluded: usize,
    pub auc: f64,
    pub roc: Vec<RocPoint>,
    /// Mean predicted box area on reversal fakes.
    pub reversal_mean_area: f64,
}

/// One scored pair: `(score, label)` for ROC and `(pred, target)` for IoU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub e_hat: f64,
    pub real: bool,
    pub pred: BBox,
    pub target: BBox,
    pub reversal: bool,
}

pub fn evaluate(ckpt: &Checkpoint, samples: &[Sample]) -> Result<Metrics> {
    let mut scored = Vec::new();
    for s in samples {
        let queries: Vec<(Finding, BBox)> = s.pairs().map(|p| (p.finding.clone(), p.location)).collect();
        let preds = ckpt.predict_many(&s.image_id, &queries)?;
        for (p, pred) in s.pairs().zip(preds) {
            scored.push(Scored {
                e_hat: pred.e_hat,
                real: p.real,
                pred: pred.bbox,
                target: ckpt.config.box_target.target(s, p),
                reversal: matches!(p.provenance, Provenance::Reversal { .. }),
            });
        }
    }
    Ok(metrics_from_scored(&scored))
}

pub fn metrics_from_scored(scored: &[Scored]) -> Metrics {
    let n = scored.len();
    let correct = scored.iter().filter(|s| (s.e_hat >= 0.5) == s.real).count();
    let located: Vec<&Scored> = scored.iter().filter(|s| !s.target.is_zero()).collect();
    let miou = if located.is_empty() {
        0.0
    } else {
        located.iter().map(|s| iou(&s.pred, &s.target)).sum::<f64>() / located.len() as f64
    };
    let rev: Vec<f64> = scored.iter().filter(|s| s.reversal).map(|s| s.pred.area()).collect();
    let (roc, auc) = roc_curve(scored);
    Metrics {
        pairs: n,
        accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        miou,
        miou_pairs: located.len(),
        miou_excluded: n - located.len(),
        auc,
        roc,
        reversal_mean_area: if rev.is_empty() { 0.0 } else { rev.iter().sum::<f64>() / rev.len() as f64 },
    }
}

/// ROC from sweeping the threshold down through the distinct scores, with
/// trapezoidal AUC.
fn roc_curve(scored: &[Scored]) -> (Vec<RocPoint>, f64) {
    let pos = scored.iter().filter(|s| s.real).count() as f64;
    let neg = scored.len() as f64 - pos;
    let mut sorted: Vec<&Scored> = scored.iter().collect();
    sorted.sort_by(|a, b| b.e_hat.total_cmp(&a.e_hat));
    let rate = |k: f64, of: f64| if of == 0.0 { 0.0 } else { k / of };
    let mut roc = vec![RocPoint { threshold: f64::MAX, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].e_hat;
        while i < sorted.len() && sorted[i].e_hat == t {
            if sorted[i].real {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        roc.push(RocPoint { threshold: t, fpr: rate(fp, neg), tpr: rate(tp, pos) });
    }
    let auc = roc.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0).sum();
    (roc, auc)
}

/// Trains the given variant on `train_set` and evaluates on `test_set`.
pub fn ablate(
    train_set: &[Sample],
    test_set: &[Sample],
    featurizer: &Featurizer,
    config: &ModelConfig,
    variant: Variant,
    seed: u64,
) -> Result<Metrics> {
    let config = ModelConfig { variant, ..config.clone() };
    let ckpt = train(train_set, featurizer.clone(), &config, seed)?;
    evaluate(&ckpt, test_set)
}
