//! Small dense numerical core with hand-written backward passes.
//!
//! Everything works on single vectors (`&[f64]`); batching is a loop in the
//! caller with gradients accumulated in a fixed order.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    #[serde(skip)]
    grad: Option<Vec<f64>>,
}

/// Gradient buffers are scratch space and do not take part in equality.
impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n], grad: None }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch { left: shape.to_vec(), right: vec![data.len()] });
        }
        Ok(Tensor { shape: shape.to_vec(), data, grad: None })
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(shape: &[usize], bound: f64, rng: &mut Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        Tensor { shape: shape.to_vec(), data, grad: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated as zeros on first use.
    pub fn grad_mut(&mut self) -> &mut [f64] {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![0.0; n])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(0.0);
        }
    }

    pub fn scale_grad(&mut self, k: f64) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::ShapeMismatch { left: vec![expected], right: vec![got] })
    }
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

/// `y = W x (+ b)` with `W` stored row-major as `[out, in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    /// Uniform init with bound `1/sqrt(in)`.
    pub fn init(input: usize, output: usize, bias: bool, rng: &mut Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = Tensor::uniform(&[output, input], bound, rng);
        let bias = bias.then(|| Tensor::uniform(&[output], bound, rng));
        Linear { weight, bias }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Tensor::len)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (out, inp) = (self.output_dim(), self.input_dim());
        if x.len() != inp {
            return Err(Error::ShapeMismatch { left: self.weight.shape().to_vec(), right: vec![x.len()] });
        }
        let w = self.weight.data();
        let mut y: Vec<f64> = (0..out).map(|o| dot(&w[o * inp..(o + 1) * inp], x)).collect();
        if let Some(b) = &self.bias {
            y.iter_mut().zip(b.data()).for_each(|(v, b)| *v += b);
        }
        Ok(y)
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: &[f64], dy: &[f64]) -> Result<Vec<f64>> {
        let dx = self.backward_input(x, dy)?;
        self.accumulate(x, dy);
        Ok(dx)
    }

    /// Gradient with respect to the input only (parameters untouched).
    pub fn backward_input(&self, x: &[f64], dy: &[f64]) -> Result<Vec<f64>> {
        let (out, inp) = (self.output_dim(), self.input_dim());
        check_len(inp, x.len())?;
        check_len(out, dy.len())?;
        let w = self.weight.data();
        let mut dx = vec![0.0; inp];
        for (o, &g) in dy.iter().enumerate() {
            if g != 0.0 {
                axpy(g, &w[o * inp..(o + 1) * inp], &mut dx);
            }
        }
        Ok(dx)
    }

    /// Adds `dy x^T` to the weight gradient and `dy` to the bias gradient.
    pub fn accumulate(&mut self, x: &[f64], dy: &[f64]) {
        let inp = self.input_dim();
        let gw = self.weight.grad_mut();
        for (o, &g) in dy.iter().enumerate() {
            if g != 0.0 {
                axpy(g, x, &mut gw[o * inp..(o + 1) * inp]);
            }
        }
        if let Some(b) = self.bias.as_mut() {
            b.grad_mut().iter_mut().zip(dy).for_each(|(gb, g)| *gb += g);
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.weight];
        if let Some(b) = self.bias.as_mut() {
            v.push(b);
        }
        v
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.weight];
        if let Some(b) = self.bias.as_ref() {
            v.push(b);
        }
        v
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

/// Uses the pre-activation `x`; the gradient at 0 is taken as 0.
pub fn relu_backward(x: &[f64], dy: &[f64]) -> Vec<f64> {
    x.iter().zip(dy).map(|(x, g)| if *x > 0.0 { *g } else { 0.0 }).collect()
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| sigmoid_scalar(*v)).collect()
}

/// Uses the output `y = sigmoid(x)`.
pub fn sigmoid_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    y.iter().zip(dy).map(|(y, g)| g * y * (1.0 - y)).collect()
}

/// Inverted dropout. Returns the output and the per-element scale applied,
/// which is also the backward multiplier. Identity when `train` is false.
pub fn dropout(x: &[f64], p: f64, train: bool, rng: &mut Rng) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("dropout probability {p} outside [0, 1)")));
    }
    if !train || p == 0.0 {
        return Ok((x.to_vec(), vec![1.0; x.len()]));
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = x.iter().map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
    Ok((x.iter().zip(&mask).map(|(v, m)| v * m).collect(), mask))
}

pub fn dropout_backward(mask: &[f64], dy: &[f64]) -> Vec<f64> {
    mask.iter().zip(dy).map(|(m, g)| m * g).collect()
}

/// Floor on the norm so the zero vector maps to zero instead of NaN.
const NORM_FLOOR: f64 = 1e-12;

/// Returns `x / |x|` and `|x|`.
pub fn l2_normalize(x: &[f64]) -> (Vec<f64>, f64) {
    let n = dot(x, x).sqrt().max(NORM_FLOOR);
    (x.iter().map(|v| v / n).collect(), n)
}

/// `dx = (dy - y (y . dy)) / |x|` for `y = x / |x|`.
pub fn l2_normalize_backward(y: &[f64], norm: f64, dy: &[f64]) -> Vec<f64> {
    let yd = dot(y, dy);
    y.iter().zip(dy).map(|(y, g)| (g - y * yd) / norm).collect()
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    let (na, nb) = (dot(a, a).sqrt().max(NORM_FLOOR), dot(b, b).sqrt().max(NORM_FLOOR));
    Ok(dot(a, b) / (na * nb))
}

/// Gradients of `cos(a, b)` with respect to `a` and `b`.
pub fn cosine_similarity_backward(a: &[f64], b: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len(a.len(), b.len())?;
    let (ua, na) = l2_normalize(a);
    let (ub, nb) = l2_normalize(b);
    Ok((l2_normalize_backward(&ua, na, &ub), l2_normalize_backward(&ub, nb, &ua)))
}

// ---------------------------------------------------------------------------
// Contrastive loss
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SupConGrad {
    pub loss: f64,
    pub d_image: Vec<f64>,
    pub d_real: Vec<Vec<f64>>,
    pub d_fake: Vec<Vec<f64>>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Multi-positive cross-modal contrastive loss for one image:
///
/// `L = -(1/R) sum_r log( exp(s_r/tau) / sum_f exp(s_f/tau) )`, `s = z_image . z`.
///
/// With `include_positive` the positive term is added to its own denominator.
/// Inputs are expected to be unit vectors already.
pub fn supcon_loss(
    z_image: &[f64],
    z_real: &[&[f64]],
    z_fake: &[&[f64]],
    tau: f64,
    include_positive: bool,
) -> Result<SupConGrad> {
    if z_fake.is_empty() {
        return Err(Error::EmptyFakeSet);
    }
    if z_real.is_empty() {
        return Err(Error::EmptyRealSet);
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    let d = z_image.len();
    for z in z_real.iter().chain(z_fake) {
        check_len(d, z.len())?;
    }
    let s_real: Vec<f64> = z_real.iter().map(|z| dot(z_image, z) / tau).collect();
    let s_fake: Vec<f64> = z_fake.iter().map(|z| dot(z_image, z) / tau).collect();
    let r = z_real.len() as f64;

    // Gradients with respect to the scaled similarities s/tau.
    let mut g_real = vec![0.0; s_real.len()];
    let mut g_fake = vec![0.0; s_fake.len()];
    let mut loss = 0.0;
    if include_positive {
        let mut logits = s_fake.clone();
        logits.push(0.0);
        for (i, &sr) in s_real.iter().enumerate() {
            *logits.last_mut().expect("pushed") = sr;
            let lse = log_sum_exp(&logits);
            loss += lse - sr;
            g_real[i] += ((sr - lse).exp() - 1.0) / r;
            for (g, sf) in g_fake.iter_mut().zip(&s_fake) {
                *g += (sf - lse).exp() / r;
            }
        }
    } else {
        let lse = log_sum_exp(&s_fake);
        loss = lse * r - s_real.iter().sum::<f64>();
        g_real.fill(-1.0 / r);
        for (g, sf) in g_fake.iter_mut().zip(&s_fake) {
            *g = (sf - lse).exp();
        }
    }
    loss /= r;

    let mut d_image = vec![0.0; d];
    let scale = |g: f64, z: &[f64]| z.iter().map(|v| g / tau * v).collect::<Vec<f64>>();
    for (g, z) in g_real.iter().zip(z_real).chain(g_fake.iter().zip(z_fake)) {
        axpy(g / tau, z, &mut d_image);
    }
    Ok(SupConGrad {
        loss,
        d_image,
        d_real: g_real.iter().map(|g| scale(*g, z_image)).collect(),
        d_fake: g_fake.iter().map(|g| scale(*g, z_image)).collect(),
    })
}

/// Binary cross-entropy of `sigmoid(s/tau)` against pair realness, averaged
/// over all pairs; the encoder loss of the `bce_encoder` variant.
pub fn pair_bce_loss(z_image: &[f64], z_real: &[&[f64]], z_fake: &[&[f64]], tau: f64) -> Result<SupConGrad> {
    let n = (z_real.len() + z_fake.len()) as f64;
    if n == 0.0 {
        return Err(Error::EmptyRealSet);
    }
    let d = z_image.len();
    let mut loss = 0.0;
    let mut d_image = vec![0.0; d];
    let mut grads = |zs: &[&[f64]], target: f64, loss: &mut f64| -> Result<Vec<Vec<f64>>> {
        zs.iter()
            .map(|z| {
                check_len(d, z.len())?;
                let logit = dot(z_image, z) / tau;
                // Stable BCE with logits.
                *loss += logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p();
                let g = (sigmoid_scalar(logit) - target) / (n * tau);
                axpy(g, z, &mut d_image);
                Ok(z_image.iter().map(|v| g * v).collect())
            })
            .collect()
    };
    let d_real = grads(z_real, 1.0, &mut loss)?;
    let d_fake = grads(z_fake, 0.0, &mut loss)?;
    Ok(SupConGrad { loss: loss / n, d_image, d_real, d_fake })
}

// ---------------------------------------------------------------------------
// Regression loss
// ---------------------------------------------------------------------------

/// Smallest probability BCE will take a log of.
const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RegressionTerms {
    pub l1: f64,
    pub giou: f64,
    pub mse: f64,
    pub bce: f64,
}

impl RegressionTerms {
    pub fn total(&self) -> f64 {
        self.l1 + self.giou + self.mse + self.bce
    }
}

/// `1 - GIoU(pred, target)` and its gradient with respect to the predicted
/// `(x, y, w, h)`. Zero, with zero gradient, when both boxes have zero area.
pub fn giou_loss(pred: &[f64; 4], target: &[f64; 4]) -> (f64, [f64; 4]) {
    let [x, y, w, h] = *pred;
    let [gx, gy, gw, gh] = *target;
    let a = w * h;
    let g = gw * gh;
    if a <= 0.0 && g <= 0.0 {
        return (0.0, [0.0; 4]);
    }
    let (x2, y2, gx2, gy2) = (x + w, y + h, gx + gw, gy + gh);
    let iw = x2.min(gx2) - x.max(gx);
    let ih = y2.min(gy2) - y.max(gy);
    let (iw, ih, overlap) = if iw > 0.0 && ih > 0.0 { (iw, ih, true) } else { (0.0, 0.0, false) };
    let inter = iw * ih;
    let union = a + g - inter;
    let cw = x2.max(gx2) - x.min(gx);
    let ch = y2.max(gy2) - y.min(gy);
    let hull = cw * ch;
    let loss = 2.0 - inter / union - union / hull;

    let d_inter = -1.0 / union - inter / (union * union) + 1.0 / hull;
    let d_area = inter / (union * union) - 1.0 / hull;
    let d_hull = union / (hull * hull);
    let ind = |b: bool| if b { 1.0 } else { 0.0 };

    // Intersection extents: d(iw)/dx, d(iw)/dw; same pattern on y.
    let (diw_dx, diw_dw) = if overlap { (ind(x2 < gx2) - ind(x > gx), ind(x2 < gx2)) } else { (0.0, 0.0) };
    let (dih_dy, dih_dh) = if overlap { (ind(y2 < gy2) - ind(y > gy), ind(y2 < gy2)) } else { (0.0, 0.0) };
    let (dcw_dx, dcw_dw) = (ind(x2 > gx2) - ind(x < gx), ind(x2 > gx2));
    let (dch_dy, dch_dh) = (ind(y2 > gy2) - ind(y < gy), ind(y2 > gy2));

    let grad = [
        d_inter * ih * diw_dx + d_hull * ch * dcw_dx,
        d_inter * iw * dih_dy + d_hull * cw * dch_dy,
        d_inter * ih * diw_dw + d_area * h + d_hull * ch * dcw_dw,
        d_inter * iw * dih_dh + d_area * w + d_hull * cw * dch_dh,
    ];
    (loss, grad)
}

/// Binary cross-entropy of a probability against a `{0, 1}` target, and its
/// derivative with respect to the probability.
pub fn bce(p: f64, target: f64) -> Result<(f64, f64)> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::ProbabilityOutOfRange(p));
    }
    let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let loss = -(target * pc.ln() + (1.0 - target) * (1.0 - pc).ln());
    let grad = -target / pc + (1.0 - target) / (1.0 - pc);
    Ok((loss, grad))
}

/// Box terms only: L1 over the 4 coordinates, `1 - GIoU`, and the mean squared
/// error over `mse_len` outputs (the caller adds the 5th element when used).
fn box_terms(y: &[f64; 4], yg: &[f64; 4], mse_len: f64, grad: &mut [f64]) -> (f64, f64, f64) {
    let mut l1 = 0.0;
    let mut mse = 0.0;
    for i in 0..4 {
        let d = y[i] - yg[i];
        l1 += d.abs();
        mse += d * d / mse_len;
        grad[i] += d.signum() * f64::from(u8::from(d != 0.0)) + 2.0 * d / mse_len;
    }
    let (lg, gg) = giou_loss(y, yg);
    for i in 0..4 {
        grad[i] += gg[i];
    }
    (l1, lg, mse)
}

/// Combined regression loss on the 5-vector `(x, y, w, h, E)`:
/// L1 on the box + `(1 - GIoU)` + MSE over all five outputs + BCE on E.
pub fn regression_loss(y: &[f64; 5], yg: &[f64; 5]) -> Result<(RegressionTerms, [f64; 5])> {
    let mut grad = [0.0; 5];
    let b = [y[0], y[1], y[2], y[3]];
    let bg = [yg[0], yg[1], yg[2], yg[3]];
    let (l1, giou, mut mse) = box_terms(&b, &bg, 5.0, &mut grad);
    let de = y[4] - yg[4];
    mse += de * de / 5.0;
    grad[4] += 2.0 * de / 5.0;
    let (bce_v, bce_g) = bce(y[4], yg[4])?;
    grad[4] += bce_g;
    Ok((RegressionTerms { l1, giou, mse, bce: bce_v }, grad))
}

/// Box-only loss for a separate box head: L1 + `(1 - GIoU)` + MSE over 4.
pub fn box_loss(y: &[f64; 4], yg: &[f64; 4]) -> (RegressionTerms, [f64; 4]) {
    let mut grad = [0.0; 4];
    let (l1, giou, mse) = box_terms(y, yg, 4.0, &mut grad);
    (RegressionTerms { l1, giou, mse, bce: 0.0 }, grad)
}

pub fn target_vector(b: BBox, real: bool) -> [f64; 5] {
    [b.x, b.y, b.w, b.h, if real { 1.0 } else { 0.0 }]
}

// ---------------------------------------------------------------------------
// Optimizer and schedule
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub max_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl CosineSchedule {
    /// Rate for the 0-based update `step`: linear warmup reaching `max_lr` on
    /// update `warmup_steps - 1`, then cosine decay toward 0 at `total_steps`.
    pub fn lr(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.max_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        if step >= self.total_steps {
            return 0.0;
        }
        let span = (self.total_steps - self.warmup_steps) as f64;
        let t = (step - self.warmup_steps) as f64 / span;
        0.5 * self.max_lr * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, m: Vec::new(), v: Vec::new() }
    }

    /// One update of every parameter from its gradient buffer (missing buffers
    /// count as zero). The parameter list must keep the same order and shapes
    /// between calls.
    pub fn step(&mut self, params: &mut [&mut Tensor], lr: f64) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::ShapeMismatch { left: vec![self.m.len()], right: vec![params.len()] });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            check_len(self.m[i].len(), p.len())?;
            let grad = p.grad.clone().unwrap_or_else(|| vec![0.0; p.len()]);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.data.iter_mut().enumerate() {
                let g = grad[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *w -= lr * (mh / (vh.sqrt() + self.eps) + self.weight_decay * *w);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn activations() {
        assert_eq!(relu(&[-1.0, 2.0]), vec![0.0, 2.0]);
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        let x = [0.3, -1.2, 4.0];
        let (y, mask) = dropout(&x, 0.0, true, &mut seeded(0)).unwrap();
        assert_eq!(y, x.to_vec());
        assert_eq!(mask, vec![1.0; 3]);
        let (y, _) = dropout(&x, 0.5, false, &mut seeded(0)).unwrap();
        assert_eq!(y, x.to_vec());
        assert!(dropout(&x, 1.0, true, &mut seeded(0)).is_err());
    }

    #[test]
    fn supcon_anchors() {
        let img = [1.0, 0.0];
        let same = [0.6, 0.8];
        let out = supcon_loss(&img, &[&same], &[&same], 0.07, false).unwrap();
        assert_eq!(out.loss, 0.0);
        let pos = [1.0, 0.0];
        let neg = [0.0, 1.0];
        let out = supcon_loss(&img, &[&pos], &[&neg], 1.0, false).unwrap();
        assert!((out.loss + 1.0).abs() < 1e-15);
        assert!(matches!(supcon_loss(&img, &[&pos], &[], 1.0, false), Err(Error::EmptyFakeSet)));
    }

    #[test]
    fn regression_anchors() {
        let (t, _) = regression_loss(&[0.0, 0.0, 0.2, 0.2, 0.5], &[0.8, 0.8, 0.2, 0.2, 1.0]).unwrap();
        assert!((t.giou - 1.92).abs() < 1e-9);
        let (t, _) = regression_loss(&[0.0, 0.0, 0.0, 0.0, 0.3], &[0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!((t.l1, t.giou), (0.0, 0.0));
        assert!((t.total() - (0.09 / 5.0 - 0.7f64.ln())).abs() < 1e-12);
        let b = [0.2, 0.3, 0.4, 0.5, 1.0 - 1e-9];
        let (t, _) = regression_loss(&b, &[0.2, 0.3, 0.4, 0.5, 1.0]).unwrap();
        assert!(t.total() < 1e-8);
        assert!(regression_loss(&[0.1, 0.1, 0.1, 0.1, 1.0], &[0.0; 5]).is_err());
    }

    #[test]
    fn schedule_endpoints() {
        let s = CosineSchedule { max_lr: 1e-5, warmup_steps: 50, total_steps: 250 };
        assert_eq!(s.lr(0), 1e-5 / 50.0);
        assert_eq!(s.lr(49), 1e-5);
        assert_eq!(s.lr(50), 1e-5);
        assert!(s.lr(249) > 0.0);
        assert!((s.lr(150) - 5e-6).abs() < 1e-20);
        assert_eq!(s.lr(250), 0.0);
    }

    #[test]
    fn adamw_decay_and_descent() {
        let mut p = Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap();
        let mut opt = AdamW::new(0.0);
        opt.step(&mut [&mut p], 0.1).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);

        let mut opt = AdamW::new(0.5);
        opt.step(&mut [&mut p], 0.1).unwrap();
        assert_eq!(p.data(), &[1.0 * (1.0 - 0.05), -2.0 * (1.0 - 0.05)]);

        let mut x = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let mut opt = AdamW::new(0.0);
        x.grad_mut()[0] = 2.0 * x.data()[0];
        opt.step(&mut [&mut x], 0.01).unwrap();
        assert!(x.data()[0] < 1.0 && x.data()[0] > 0.0);
    }

    #[test]
    fn linear_shape_error_names_shapes() {
        let l = Linear::init(3, 2, true, &mut seeded(1));
        match l.forward(&[1.0, 2.0]) {
            Err(Error::ShapeMismatch { left, right }) => assert_eq!((left, right), (vec![2, 3], vec![2])),
            other => panic!("{other:?}"),
        }
    }
}
