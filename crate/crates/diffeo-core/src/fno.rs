//! Self-contained Fourier Neural Operator: lifting, spectral-convolution
//! layers, projection, relative-L2 loss, exact reverse-mode gradients for
//! this fixed architecture, and a deterministic training loop.
//!
//! Grids are vertex-centered with the two boundary rows duplicated for a
//! periodic field, so all transforms run over the (R-1)x(R-1) core. Spectral
//! coefficients are Fourier-series coefficients (forward FFT scaled by
//! 1/n^2), which makes the spectral path resolution-transferable: a model
//! trained at resolution R evaluates unchanged at any resolution whose core
//! holds the retained modes.

use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::GridSample;
use crate::seed;

type C64 = Complex<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Gelu,
    Tanh,
    /// Identity; used for analytic tests and band-limited configurations.
    Linear,
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "gelu" => Ok(Activation::Gelu),
            "tanh" => Ok(Activation::Tanh),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Gelu => {
                let c = (2.0 / std::f64::consts::PI).sqrt();
                0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
            }
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }

    fn deriv(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let c = (2.0 / std::f64::consts::PI).sqrt();
                let w = c * (x + 0.044715 * x * x * x);
                let t = w.tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x)
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FnoConfig {
    pub n_layers: usize,
    /// Channel width d_v.
    pub width: usize,
    /// Retained modes (k_x, k_y).
    pub modes: (usize, usize),
    /// Hidden width of the projection head Q.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    pub activation: Activation,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

fn default_hidden() -> usize {
    128
}

impl Default for FnoConfig {
    fn default() -> Self {
        FnoConfig {
            n_layers: 6,
            width: 32,
            modes: (12, 12),
            hidden: 128,
            activation: Activation::Gelu,
            lr: 1e-3,
            batch_size: 32,
            epochs: 800,
            seed: 7,
        }
    }
}

impl FnoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.width == 0 || self.hidden == 0 {
            return Err(Error::Config("layers, width, hidden must be positive".into()));
        }
        if self.modes.0 == 0 || self.modes.1 == 0 {
            return Err(Error::Config("retained modes must be positive".into()));
        }
        if !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::Config("lr and batch size must be positive".into()));
        }
        Ok(())
    }

    /// Retained frequencies as resolution-independent signed pairs, in the
    /// canonical storage order: the nonnegative-k_y block row-major, then the
    /// negative-k_y block (k_x > 0 only; k_x = 0 rows there are Hermitian
    /// mirrors of the first block and would double-count).
    pub fn retained(&self) -> Vec<(usize, i64)> {
        let (kx, ky) = self.modes;
        let mut out = Vec::with_capacity(kx * ky + kx.saturating_sub(1) * ky);
        for x in 0..kx {
            for y in 0..ky {
                out.push((x, y as i64));
            }
        }
        for x in 1..kx {
            for y in 1..=ky {
                out.push((x, -(y as i64)));
            }
        }
        out
    }
}

/// Per-channel input normalization, estimated on the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl NormStats {
    pub fn identity() -> Self {
        NormStats { mean: [0.0; 3], std: [1.0; 3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

fn build_layout(cfg: &FnoConfig) -> Vec<ParamEntry> {
    let dv = cfg.width;
    let h = cfg.hidden;
    let s = cfg.retained().len();
    let mut layout = Vec::new();
    let mut offset = 0;
    let mut push = |layout: &mut Vec<ParamEntry>, name: String, shape: Vec<usize>| {
        let len: usize = shape.iter().product();
        layout.push(ParamEntry { name, shape, offset, len });
        offset += len;
    };
    push(&mut layout, "p_w".into(), vec![dv, 3]);
    push(&mut layout, "p_b".into(), vec![dv]);
    for l in 0..cfg.n_layers {
        push(&mut layout, format!("layer{l}_w"), vec![dv, dv]);
        push(&mut layout, format!("layer{l}_b"), vec![dv]);
        push(&mut layout, format!("layer{l}_spec_re"), vec![s, dv, dv]);
        push(&mut layout, format!("layer{l}_spec_im"), vec![s, dv, dv]);
    }
    push(&mut layout, "q1_w".into(), vec![h, dv]);
    push(&mut layout, "q1_b".into(), vec![h]);
    push(&mut layout, "q2_w".into(), vec![h, h]);
    push(&mut layout, "q2_b".into(), vec![h]);
    push(&mut layout, "q3_w".into(), vec![1, h]);
    push(&mut layout, "q3_b".into(), vec![1]);
    layout
}

#[derive(Debug, Clone, PartialEq)]
pub struct FnoModel {
    pub config: FnoConfig,
    pub layout: Vec<ParamEntry>,
    pub params: Vec<f64>,
    pub norm: NormStats,
}

impl FnoModel {
    /// Fresh model with seeded initialization (sub-stream "init").
    pub fn new(config: FnoConfig, norm: NormStats) -> Result<FnoModel> {
        config.validate()?;
        let layout = build_layout(&config);
        let n_params = layout.iter().map(|e| e.len).sum();
        let mut model = FnoModel { config, layout, params: vec![0.0; n_params], norm };
        let mut rng = seed::rng(model.config.seed, "init", 0);
        let dv = model.config.width;
        let spec_scale = 1.0 / (dv * dv) as f64;
        for entry in model.layout.clone() {
            let slice = &mut model.params[entry.offset..entry.offset + entry.len];
            if entry.name.contains("spec") {
                for v in slice.iter_mut() {
                    *v = rng.gen_range(0.0..spec_scale);
                }
            } else if entry.name.ends_with("_b") {
                // biases start at zero
            } else {
                let fan_in = *entry.shape.last().unwrap() as f64;
                let s = 1.0 / fan_in.sqrt();
                for v in slice.iter_mut() {
                    *v = rng.gen_range(-s..s);
                }
            }
        }
        Ok(model)
    }

    pub fn entry(&self, name: &str) -> &ParamEntry {
        self.layout
            .iter()
            .find(|e| e.name == name)
            .unwrap_or_else(|| panic!("no parameter tensor named {name}"))
    }

    pub fn slice(&self, name: &str) -> &[f64] {
        let e = self.entry(name);
        &self.params[e.offset..e.offset + e.len]
    }

    pub fn slice_mut(&mut self, name: &str) -> &mut [f64] {
        let e = self.entry(name).clone();
        &mut self.params[e.offset..e.offset + e.len]
    }
}

/// One labeled grid sample flattened for training: three input channels
/// (a, x^pS_x, x^pS_y) and the solution target, all row-major R x R.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub res: usize,
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

pub fn input_from_grid(grid: &GridSample) -> Result<Vec<f64>> {
    let (rx, ry) = grid.resolution;
    if rx != ry {
        return Err(Error::ShapeMismatch(format!("grid must be square, got {rx}x{ry}")));
    }
    let rr = rx * ry;
    let mut input = Vec::with_capacity(3 * rr);
    input.extend_from_slice(&grid.param_field);
    input.extend(grid.physics_points.iter().map(|p| p[0]));
    input.extend(grid.physics_points.iter().map(|p| p[1]));
    if input.len() != 3 * rr {
        return Err(Error::ShapeMismatch("grid fields do not match resolution".into()));
    }
    Ok(input)
}

pub fn training_pair(grid: &GridSample) -> Result<TrainSample> {
    let target = grid
        .solution_field
        .clone()
        .ok_or_else(|| Error::ShapeMismatch("sample has no solution field".into()))?;
    Ok(TrainSample { res: grid.resolution.0, input: input_from_grid(grid)?, target })
}

pub fn compute_norm(samples: &[TrainSample]) -> NormStats {
    let mut mean = [0.0; 3];
    let mut var = [0.0; 3];
    let mut count = 0usize;
    for s in samples {
        let rr = s.res * s.res;
        count += rr;
        for c in 0..3 {
            for &v in &s.input[c * rr..(c + 1) * rr] {
                mean[c] += v;
            }
        }
    }
    for m in &mut mean {
        *m /= count.max(1) as f64;
    }
    for s in samples {
        let rr = s.res * s.res;
        for c in 0..3 {
            for &v in &s.input[c * rr..(c + 1) * rr] {
                var[c] += (v - mean[c]) * (v - mean[c]);
            }
        }
    }
    let mut std = [0.0; 3];
    for c in 0..3 {
        std[c] = (var[c] / count.max(1) as f64).sqrt().max(1e-12);
    }
    NormStats { mean, std }
}

/// Relative L2 of one sample: ||truth - pred|| / ||truth||.
pub fn relative_l2(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "relative_l2: {} vs {} entries",
            pred.len(),
            truth.len()
        )));
    }
    let tn = truth.iter().map(|v| v * v).sum::<f64>().sqrt();
    if tn < 1e-14 {
        return Err(Error::ZeroTruthNorm(0));
    }
    let en = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        .sqrt();
    Ok(en / tn)
}

/// Gradient of relative_l2 with respect to pred, scaled by `weight`.
fn relative_l2_grad(pred: &[f64], truth: &[f64], weight: f64) -> Vec<f64> {
    let tn = truth.iter().map(|v| v * v).sum::<f64>().sqrt();
    let en = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        .sqrt();
    if en == 0.0 || tn == 0.0 {
        return vec![0.0; pred.len()];
    }
    pred.iter()
        .zip(truth)
        .map(|(p, t)| weight * (p - t) / (en * tn))
        .collect()
}

/// Planned 1D transforms for one core size; 2D transforms run rows then
/// columns in place.
pub struct Fft2 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(n: usize) -> Fft2 {
        let mut planner = FftPlanner::new();
        Fft2 { n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }

    fn apply(&self, fft: &Arc<dyn Fft<f64>>, a: &mut [C64]) {
        let n = self.n;
        for row in a.chunks_exact_mut(n) {
            fft.process(row);
        }
        transpose(a, n);
        for row in a.chunks_exact_mut(n) {
            fft.process(row);
        }
        transpose(a, n);
    }

    /// Unscaled forward transform (kernel e^{-2 pi i k x / n}).
    pub fn forward(&self, a: &mut [C64]) {
        self.apply(&self.fwd.clone(), a);
    }

    /// Unscaled inverse transform (kernel e^{+2 pi i k x / n}).
    pub fn inverse(&self, a: &mut [C64]) {
        self.apply(&self.inv.clone(), a);
    }
}

fn transpose(a: &mut [C64], n: usize) {
    for i in 0..n {
        for j in i + 1..n {
            a.swap(i * n + j, j * n + i);
        }
    }
}

struct LayerCache {
    /// Layer input, width x R x R.
    u: Vec<f64>,
    /// Pre-activation, width x R x R.
    v: Vec<f64>,
    /// Series coefficients of the input core, width x n x n.
    z: Vec<C64>,
}

struct ForwardCache {
    x_norm: Vec<f64>,
    layers: Vec<LayerCache>,
    q1_pre: Vec<f64>,
    q2_pre: Vec<f64>,
    /// Output of the final Fourier layer (input to Q).
    q_in: Vec<f64>,
}

fn check_finite(data: &[f64], what: &str) -> Result<()> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(())
}

/// Map a signed retained frequency to its array index in an n x n spectrum.
fn freq_index(kx: usize, ky: i64, n: usize) -> (usize, usize) {
    let ky = if ky >= 0 { ky as usize } else { (n as i64 + ky) as usize };
    (kx, ky)
}

fn spectral_forward(
    model: &FnoModel,
    l: usize,
    u: &[f64],
    res: usize,
    fft: &Fft2,
    v: &mut [f64],
) -> Vec<C64> {
    let dv = model.config.width;
    let n = res - 1;
    let nn = n * n;
    let rr = res * res;
    let retained = model.config.retained();
    let ns = retained.len();

    // Series coefficients of each input channel's periodic core.
    let mut z = vec![C64::new(0.0, 0.0); dv * nn];
    let scale = 1.0 / nn as f64;
    for c in 0..dv {
        let plane = &mut z[c * nn..(c + 1) * nn];
        for j in 0..n {
            for i in 0..n {
                plane[j * n + i] = C64::new(u[c * rr + j * res + i], 0.0);
            }
        }
        fft.forward(plane);
        for w in plane.iter_mut() {
            *w *= scale;
        }
    }

    // Filter: yhat_o(k) = sum_c P_oc(k) z_c(k) at retained modes.
    let sre = model.slice(&format!("layer{l}_spec_re"));
    let sim = model.slice(&format!("layer{l}_spec_im"));
    let mut yhat = vec![C64::new(0.0, 0.0); ns * dv];
    for (si, &(kx, kys)) in retained.iter().enumerate() {
        let (fx, fy) = freq_index(kx, kys, n);
        let k = fy * n + fx;
        for o in 0..dv {
            let mut acc = C64::new(0.0, 0.0);
            let base = (si * dv + o) * dv;
            for c in 0..dv {
                let p = C64::new(sre[base + c], sim[base + c]);
                acc += p * z[c * nn + k];
            }
            yhat[si * dv + o] = acc;
        }
    }

    // Hermitian-symmetric synthesis per output channel; written into the
    // pre-activation with the duplicated boundary row/column wrapped.
    let mut spectrum = vec![C64::new(0.0, 0.0); nn];
    for o in 0..dv {
        spectrum.iter_mut().for_each(|w| *w = C64::new(0.0, 0.0));
        for (si, &(kx, kys)) in retained.iter().enumerate() {
            let (fx, fy) = freq_index(kx, kys, n);
            let val = yhat[si * dv + o];
            spectrum[fy * n + fx] += val;
            let (mx, my) = ((n - fx) % n, (n - fy) % n);
            if (mx, my) != (fx, fy) {
                spectrum[my * n + mx] += val.conj();
            }
        }
        fft.inverse(&mut spectrum);
        for j in 0..res {
            for i in 0..res {
                v[o * rr + j * res + i] += spectrum[(j % n) * n + (i % n)].re;
            }
        }
    }
    z
}

fn layer_forward(
    model: &FnoModel,
    l: usize,
    u: &[f64],
    res: usize,
    fft: &Fft2,
) -> (Vec<f64>, Vec<C64>) {
    let dv = model.config.width;
    let rr = res * res;
    let w = model.slice(&format!("layer{l}_w"));
    let b = model.slice(&format!("layer{l}_b"));
    let mut v = vec![0.0; dv * rr];
    for o in 0..dv {
        let vo = &mut v[o * rr..(o + 1) * rr];
        vo.iter_mut().for_each(|x| *x = b[o]);
        for c in 0..dv {
            let wc = w[o * dv + c];
            if wc == 0.0 {
                continue;
            }
            let uc = &u[c * rr..(c + 1) * rr];
            for (x, ucp) in vo.iter_mut().zip(uc) {
                *x += wc * ucp;
            }
        }
    }
    let z = spectral_forward(model, l, u, res, fft, &mut v);
    (v, z)
}

fn forward_cached(
    model: &FnoModel,
    input: &[f64],
    res: usize,
    fft: &Fft2,
) -> Result<(Vec<f64>, ForwardCache)> {
    let dv = model.config.width;
    let h = model.config.hidden;
    let rr = res * res;
    let act = model.config.activation;
    if input.len() != 3 * rr {
        return Err(Error::ShapeMismatch(format!(
            "input has {} values, expected 3 x {res} x {res}",
            input.len()
        )));
    }
    let n = res - 1;
    let (kx, ky) = model.config.modes;
    if 2 * kx > n || 2 * ky > n {
        return Err(Error::ShapeMismatch(format!(
            "modes ({kx}, {ky}) exceed half the core size {n}"
        )));
    }
    check_finite(input, "input")?;

    let mut x_norm = vec![0.0; 3 * rr];
    for c in 0..3 {
        let (m, s) = (model.norm.mean[c], model.norm.std[c]);
        for p in 0..rr {
            x_norm[c * rr + p] = (input[c * rr + p] - m) / s;
        }
    }

    // Lift P: 3 -> d_v, pointwise affine.
    let pw = model.slice("p_w");
    let pb = model.slice("p_b");
    let mut u = vec![0.0; dv * rr];
    for o in 0..dv {
        for p in 0..rr {
            let mut acc = pb[o];
            for c in 0..3 {
                acc += pw[o * 3 + c] * x_norm[c * rr + p];
            }
            u[o * rr + p] = acc;
        }
    }

    let mut layers = Vec::with_capacity(model.config.n_layers);
    for l in 0..model.config.n_layers {
        let (v, z) = layer_forward(model, l, &u, res, fft);
        check_finite(&v, &format!("fourier layer {l}"))?;
        let last = l + 1 == model.config.n_layers;
        let next = if last { v.clone() } else { v.iter().map(|&x| act.apply(x)).collect() };
        layers.push(LayerCache { u, v, z });
        u = next;
    }

    // Projection Q: d_v -> hidden -> hidden -> 1.
    let q1w = model.slice("q1_w");
    let q1b = model.slice("q1_b");
    let q2w = model.slice("q2_w");
    let q2b = model.slice("q2_b");
    let q3w = model.slice("q3_w");
    let q3b = model.slice("q3_b");
    let mut q1_pre = vec![0.0; h * rr];
    for o in 0..h {
        for p in 0..rr {
            let mut acc = q1b[o];
            for c in 0..dv {
                acc += q1w[o * dv + c] * u[c * rr + p];
            }
            q1_pre[o * rr + p] = acc;
        }
    }
    let h1: Vec<f64> = q1_pre.iter().map(|&x| act.apply(x)).collect();
    let mut q2_pre = vec![0.0; h * rr];
    for o in 0..h {
        for p in 0..rr {
            let mut acc = q2b[o];
            for c in 0..h {
                acc += q2w[o * h + c] * h1[c * rr + p];
            }
            q2_pre[o * rr + p] = acc;
        }
    }
    let h2: Vec<f64> = q2_pre.iter().map(|&x| act.apply(x)).collect();
    let mut y = vec![0.0; rr];
    for p in 0..rr {
        let mut acc = q3b[0];
        for c in 0..h {
            acc += q3w[c] * h2[c * rr + p];
        }
        y[p] = acc;
    }
    check_finite(&y, "projection output")?;
    Ok((y, ForwardCache { x_norm, layers, q1_pre, q2_pre, q_in: u }))
}

/// Evaluate the model on one input tensor (3 x R x R, channel-major).
pub fn forward(model: &FnoModel, input: &[f64], res: usize) -> Result<Vec<f64>> {
    let fft = Fft2::new(res - 1);
    forward_cached(model, input, res, &fft).map(|(y, _)| y)
}

fn spectral_backward(
    model: &FnoModel,
    l: usize,
    cache: &LayerCache,
    dv_pre: &[f64],
    res: usize,
    fft: &Fft2,
    grads: &mut [f64],
    du: &mut [f64],
) {
    let dv = model.config.width;
    let n = res - 1;
    let nn = n * n;
    let rr = res * res;
    let retained = model.config.retained();
    let ns = retained.len();

    // Adjoint of the periodic wrap + Re(IFFT): fold the duplicated boundary
    // back onto the core, then run an unscaled forward transform.
    let mut dyhat = vec![C64::new(0.0, 0.0); ns * dv];
    let mut g = vec![C64::new(0.0, 0.0); nn];
    for o in 0..dv {
        g.iter_mut().for_each(|w| *w = C64::new(0.0, 0.0));
        for j in 0..res {
            for i in 0..res {
                g[(j % n) * n + (i % n)].re += dv_pre[o * rr + j * res + i];
            }
        }
        fft.forward(&mut g);
        for (si, &(kx, kys)) in retained.iter().enumerate() {
            let (fx, fy) = freq_index(kx, kys, n);
            let mut d = g[fy * n + fx];
            let (mx, my) = ((n - fx) % n, (n - fy) % n);
            if (mx, my) != (fx, fy) {
                d += g[my * n + mx].conj();
            }
            dyhat[si * dv + o] = d;
        }
    }

    // Adjoint of the filter: dP = dyhat conj(z), dz = conj(P) dyhat.
    let e_re = model.entry(&format!("layer{l}_spec_re")).clone();
    let e_im = model.entry(&format!("layer{l}_spec_im")).clone();
    let sre_off = e_re.offset;
    let sim_off = e_im.offset;
    let mut dz = vec![C64::new(0.0, 0.0); dv * nn];
    for (si, &(kx, kys)) in retained.iter().enumerate() {
        let (fx, fy) = freq_index(kx, kys, n);
        let k = fy * n + fx;
        for o in 0..dv {
            let dy = dyhat[si * dv + o];
            let base = (si * dv + o) * dv;
            for c in 0..dv {
                let zc = cache.z[c * nn + k];
                let dp = dy * zc.conj();
                grads[sre_off + base + c] += dp.re;
                grads[sim_off + base + c] += dp.im;
                let p = C64::new(
                    model.params[sre_off + base + c],
                    model.params[sim_off + base + c],
                );
                dz[c * nn + k] += p.conj() * dy;
            }
        }
    }

    // Adjoint of the scaled forward transform: du_core = Re(IFFT(dz)) / n^2.
    let scale = 1.0 / nn as f64;
    for c in 0..dv {
        let plane = &mut dz[c * nn..(c + 1) * nn];
        fft.inverse(plane);
        for j in 0..n {
            for i in 0..n {
                du[c * rr + j * res + i] += plane[j * n + i].re * scale;
            }
        }
    }
}

/// Accumulate gradients of every parameter for one sample, given the loss
/// gradient with respect to the output. Returns nothing; `grads` has the
/// same flat layout as `model.params`.
fn backward_cached(
    model: &FnoModel,
    cache: &ForwardCache,
    d_out: &[f64],
    res: usize,
    fft: &Fft2,
    grads: &mut [f64],
) {
    let dv = model.config.width;
    let h = model.config.hidden;
    let rr = res * res;
    let act = model.config.activation;

    // Q backward.
    let h2: Vec<f64> = cache.q2_pre.iter().map(|&x| act.apply(x)).collect();
    let h1: Vec<f64> = cache.q1_pre.iter().map(|&x| act.apply(x)).collect();
    let q3w_e = model.entry("q3_w").clone();
    let q3b_e = model.entry("q3_b").clone();
    let mut dh2 = vec![0.0; h * rr];
    for p in 0..rr {
        let d = d_out[p];
        grads[q3b_e.offset] += d;
        for c in 0..h {
            grads[q3w_e.offset + c] += d * h2[c * rr + p];
            dh2[c * rr + p] += model.params[q3w_e.offset + c] * d;
        }
    }
    let dq2_pre: Vec<f64> = dh2
        .iter()
        .zip(&cache.q2_pre)
        .map(|(d, &x)| d * act.deriv(x))
        .collect();
    let q2w_e = model.entry("q2_w").clone();
    let q2b_e = model.entry("q2_b").clone();
    let mut dh1 = vec![0.0; h * rr];
    for o in 0..h {
        let mut db = 0.0;
        for p in 0..rr {
            let d = dq2_pre[o * rr + p];
            db += d;
            for c in 0..h {
                grads[q2w_e.offset + o * h + c] += d * h1[c * rr + p];
                dh1[c * rr + p] += model.params[q2w_e.offset + o * h + c] * d;
            }
        }
        grads[q2b_e.offset + o] += db;
    }
    let dq1_pre: Vec<f64> = dh1
        .iter()
        .zip(&cache.q1_pre)
        .map(|(d, &x)| d * act.deriv(x))
        .collect();
    let q1w_e = model.entry("q1_w").clone();
    let q1b_e = model.entry("q1_b").clone();
    let mut du = vec![0.0; dv * rr];
    for o in 0..h {
        let mut db = 0.0;
        for p in 0..rr {
            let d = dq1_pre[o * rr + p];
            db += d;
            for c in 0..dv {
                grads[q1w_e.offset + o * dv + c] += d * cache.q_in[c * rr + p];
                du[c * rr + p] += model.params[q1w_e.offset + o * dv + c] * d;
            }
        }
        grads[q1b_e.offset + o] += db;
    }

    // Fourier layers, last to first.
    for l in (0..model.config.n_layers).rev() {
        let lc = &cache.layers[l];
        let last = l + 1 == model.config.n_layers;
        let dv_pre: Vec<f64> = if last {
            du.clone()
        } else {
            du.iter().zip(&lc.v).map(|(d, &x)| d * act.deriv(x)).collect()
        };
        let w_e = model.entry(&format!("layer{l}_w")).clone();
        let b_e = model.entry(&format!("layer{l}_b")).clone();
        let mut du_next = vec![0.0; dv * rr];
        for o in 0..dv {
            let mut db = 0.0;
            for p in 0..rr {
                let d = dv_pre[o * rr + p];
                db += d;
            }
            grads[b_e.offset + o] += db;
            for c in 0..dv {
                let mut dw = 0.0;
                let wv = model.params[w_e.offset + o * dv + c];
                for p in 0..rr {
                    let d = dv_pre[o * rr + p];
                    dw += d * lc.u[c * rr + p];
                    du_next[c * rr + p] += wv * d;
                }
                grads[w_e.offset + o * dv + c] += dw;
            }
        }
        spectral_backward(model, l, lc, &dv_pre, res, fft, grads, &mut du_next);
        du = du_next;
    }

    // Lift backward (input gradients are not needed).
    let pw_e = model.entry("p_w").clone();
    let pb_e = model.entry("p_b").clone();
    for o in 0..dv {
        let mut db = 0.0;
        for p in 0..rr {
            let d = du[o * rr + p];
            db += d;
            for c in 0..3 {
                grads[pw_e.offset + o * 3 + c] += d * cache.x_norm[c * rr + p];
            }
        }
        grads[pb_e.offset + o] += db;
    }
}

/// Loss and parameter gradients of relative_l2 on one sample.
pub fn loss_and_grads(model: &FnoModel, sample: &TrainSample, weight: f64) -> Result<(f64, Vec<f64>)> {
    let fft = Fft2::new(sample.res - 1);
    let (pred, cache) = forward_cached(model, &sample.input, sample.res, &fft)?;
    let loss = relative_l2(&pred, &sample.target)?;
    let d_out = relative_l2_grad(&pred, &sample.target, weight);
    let mut grads = vec![0.0; model.params.len()];
    backward_cached(model, &cache, &d_out, sample.res, &fft, &mut grads);
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

pub fn write_log_csv(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "epoch,train_loss,val_loss,lr,wall_ms")?;
    for row in log {
        writeln!(
            out,
            "{},{:.12e},{:.12e},{:.12e},{}",
            row.epoch, row.train_loss, row.val_loss, row.lr, row.wall_ms
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Adam state carried across epochs (and through checkpoints for resume).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> AdamState {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }
}

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Learning rate halves every this many epochs.
const LR_DECAY_EPOCHS: usize = 250;

fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_B1.powi(t);
    let bc2 = 1.0 - ADAM_B2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = ADAM_B1 * state.m[i] + (1.0 - ADAM_B1) * g;
        state.v[i] = ADAM_B2 * state.v[i] + (1.0 - ADAM_B2) * g * g;
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        params[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
    }
}

/// Mean relative L2 over a sample set.
pub fn mean_relative_l2(model: &FnoModel, samples: &[TrainSample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let fft = Fft2::new(samples[0].res - 1);
    let mut total = 0.0;
    for s in samples {
        let (pred, _) = forward_cached(model, &s.input, s.res, &fft)?;
        total += relative_l2(&pred, &s.target)?;
    }
    Ok(total / samples.len() as f64)
}

/// Train (or continue training) by mini-batch Adam on the relative-L2 loss.
/// Deterministic given the config seed: shuffling uses the "shuffle" seed
/// stream and gradients accumulate in sample order within each batch.
pub fn train(
    config: &FnoConfig,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    resume: Option<(FnoModel, AdamState, usize)>,
) -> Result<(FnoModel, AdamState, Vec<EpochLog>)> {
    config.validate()?;
    // Samples with a near-zero truth norm cannot enter the relative loss.
    let usable: Vec<&TrainSample> = train_set
        .iter()
        .filter(|s| s.target.iter().map(|v| v * v).sum::<f64>().sqrt() >= 1e-14)
        .collect();
    if usable.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let res = usable[0].res;
    for s in &usable {
        if s.res != res {
            return Err(Error::ShapeMismatch("mixed resolutions in training set".into()));
        }
    }

    let (mut model, mut adam, start_epoch) = match resume {
        Some((m, a, e)) => (m, a, e),
        None => {
            let norm = compute_norm(train_set);
            let model = FnoModel::new(config.clone(), norm)?;
            let n = model.params.len();
            (model, AdamState::new(n), 0)
        }
    };

    let fft = Fft2::new(res - 1);
    let mut log = Vec::new();
    let mut grads = vec![0.0; model.params.len()];
    for epoch in start_epoch..config.epochs {
        let t0 = std::time::Instant::now();
        let lr = config.lr * 0.5f64.powi((epoch / LR_DECAY_EPOCHS) as i32);

        let mut order: Vec<usize> = (0..usable.len()).collect();
        let mut rng = seed::rng(config.seed, "shuffle", epoch as u64);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }

        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let weight = 1.0 / batch.len() as f64;
            for &idx in batch {
                let s = usable[idx];
                let (pred, cache) = forward_cached(&model, &s.input, res, &fft)?;
                let loss = relative_l2(&pred, &s.target)?;
                epoch_loss += loss;
                let d_out = relative_l2_grad(&pred, &s.target, weight);
                backward_cached(&model, &cache, &d_out, res, &fft, &mut grads);
            }
            check_finite(&grads, "gradients").map_err(|_| Error::Diverged {
                epoch,
                loss: f64::NAN,
            })?;
            adam_step(&mut model.params, &grads, &mut adam, lr);
        }
        let train_loss = epoch_loss / usable.len() as f64;
        if !train_loss.is_finite() || train_loss > 1e6 {
            return Err(Error::Diverged { epoch, loss: train_loss });
        }
        let val_loss = mean_relative_l2(&model, val_set)?;
        log.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            lr,
            wall_ms: t0.elapsed().as_millis() as u64,
        });
    }
    Ok((model, adam, log))
}

/// Forward on a grid sample; the returned values pair index-for-index with
/// `grid.physics_points`, realizing u on the physics domain.
pub fn predict_physics(model: &FnoModel, grid: &GridSample) -> Result<Vec<f64>> {
    let input = input_from_grid(grid)?;
    forward(model, &input, grid.resolution.0)
}

/// Per-sample relative L2 of model predictions against labeled grids.
pub fn evaluate(model: &FnoModel, grids: &[GridSample]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(grids.len());
    for g in grids {
        let truth = g
            .solution_field
            .as_ref()
            .ok_or_else(|| Error::ShapeMismatch("evaluation sample lacks labels".into()))?;
        let pred = predict_physics(model, g)?;
        out.push(relative_l2(&pred, truth)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointHeader {
    config: FnoConfig,
    norm: NormStats,
    epoch: usize,
    adam_step: u64,
    manifest: Vec<ParamEntry>,
}

/// Checkpoint: one JSON header line, then raw little-endian f64 blocks in
/// manifest order (parameters, then Adam moments).
pub fn save_checkpoint(
    path: &Path,
    model: &FnoModel,
    adam: &AdamState,
    epoch: usize,
) -> Result<()> {
    let n = model.params.len();
    let mut manifest = model.layout.clone();
    manifest.push(ParamEntry { name: "adam_m".into(), shape: vec![n], offset: n, len: n });
    manifest.push(ParamEntry { name: "adam_v".into(), shape: vec![n], offset: 2 * n, len: n });
    let header = CheckpointHeader {
        config: model.config.clone(),
        norm: model.norm.clone(),
        epoch,
        adam_step: adam.step,
        manifest,
    };
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for block in [&model.params, &adam.m, &adam.v] {
        for &v in block.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(FnoModel, AdamState, usize)> {
    let mut file = std::fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("checkpoint has no header line".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl])?;
    let layout = build_layout(&header.config);
    let n: usize = layout.iter().map(|e| e.len).sum();
    let body = &bytes[nl + 1..];
    if body.len() != 8 * 3 * n {
        return Err(Error::Format(format!(
            "checkpoint body has {} bytes, expected {}",
            body.len(),
            8 * 3 * n
        )));
    }
    let read_block = |start: usize| -> Vec<f64> {
        body[8 * start..8 * (start + n)]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let model = FnoModel {
        config: header.config,
        layout,
        params: read_block(0),
        norm: header.norm,
    };
    let adam = AdamState { m: read_block(n), v: read_block(2 * n), step: header.adam_step };
    Ok((model, adam, header.epoch))
}
