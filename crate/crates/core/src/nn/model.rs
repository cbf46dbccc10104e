//! Depthwise-separable CNN over acoustic maps.
//!
//! Three conv blocks (conv → BN → ELU → 2×2 pool), a final separable conv without
//! pooling, a 1×1 projection, and a two-layer dense head with BN between layers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{self, BatchNormCache, Dims, BN_MOMENTUM};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::geometry::{DEFAULT_AZIMUTHS, DEFAULT_ELEVATIONS};

/// Network hyper-shape. Input maps are `in_bands × height × width` with height
/// running over azimuth and width over elevation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub in_bands: usize,
    pub height: usize,
    pub width: usize,
    pub block_channels: Vec<usize>,
    pub block_kernels: Vec<usize>,
    pub final_kernel: usize,
    pub projection_channels: usize,
    pub hidden: usize,
    pub n_classes: usize,
}

impl Architecture {
    /// The standard network for `in_bands` bands on a 91×41 grid.
    pub fn stock(in_bands: usize) -> Self {
        Self::for_input(in_bands, DEFAULT_AZIMUTHS, DEFAULT_ELEVATIONS)
    }

    /// Standard channel widths on an arbitrary grid.
    pub fn for_input(in_bands: usize, height: usize, width: usize) -> Self {
        Self {
            in_bands,
            height,
            width,
            block_channels: vec![8, 16, 32],
            block_kernels: vec![5, 3, 3],
            final_kernel: 3,
            projection_channels: 2,
            hidden: 32,
            n_classes: 2,
        }
    }

    /// Small variant for finite-difference checks.
    pub fn reduced(in_bands: usize) -> Self {
        Self {
            in_bands,
            height: 8,
            width: 12,
            block_channels: vec![3, 4, 4],
            block_kernels: vec![3, 3, 3],
            final_kernel: 3,
            projection_channels: 2,
            hidden: 4,
            n_classes: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("architecture: {m}")));
        if self.in_bands == 0 || self.hidden == 0 || self.projection_channels == 0 || self.n_classes < 2 {
            return bad("sizes must be positive and n_classes ≥ 2");
        }
        if self.block_channels.is_empty()
            || self.block_channels.len() != self.block_kernels.len()
            || self.block_channels.contains(&0)
        {
            return bad("block channels and kernels must be nonempty, equal length, positive");
        }
        if self.block_kernels.iter().chain([&self.final_kernel]).any(|k| k % 2 == 0) {
            return bad("kernel sizes must be odd");
        }
        let (h, w) = self.pooled_dims();
        if h == 0 || w == 0 {
            return bad(&format!("{}×{} input vanishes after pooling", self.height, self.width));
        }
        Ok(())
    }

    /// Spatial size after all pooling stages.
    pub fn pooled_dims(&self) -> (usize, usize) {
        let n = self.block_channels.len() as u32;
        (self.height >> n, self.width >> n)
    }

    /// Input length of the first dense layer.
    pub fn flatten_dim(&self) -> usize {
        let (h, w) = self.pooled_dims();
        self.projection_channels * h * w
    }

    pub fn input_len(&self) -> usize {
        self.in_bands * self.height * self.width
    }

    fn last_channels(&self) -> usize {
        *self.block_channels.last().expect("validated")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

impl<T: Real> BatchNorm<T> {
    fn new(c: usize) -> Self {
        Self {
            gain: Tensor::filled(&[c], T::one()),
            bias: Tensor::zeros(&[c]),
            running_mean: Tensor::zeros(&[c]),
            running_var: Tensor::filled(&[c], T::one()),
        }
    }

    fn zeros(c: usize) -> Self {
        Self {
            gain: Tensor::zeros(&[c]),
            bias: Tensor::zeros(&[c]),
            running_mean: Tensor::zeros(&[c]),
            running_var: Tensor::zeros(&[c]),
        }
    }
}

/// Depthwise `k×k` (no bias), pointwise `c_in → c_out` with bias, then batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableConv<T> {
    pub kernel_size: usize,
    pub depthwise: Tensor<T>,
    pub pointwise: Tensor<T>,
    pub bias: Tensor<T>,
    pub bn: BatchNorm<T>,
}

impl<T: Real> SeparableConv<T> {
    fn zeros(c_in: usize, c_out: usize, k: usize) -> Self {
        Self {
            kernel_size: k,
            depthwise: Tensor::zeros(&[c_in, k, k]),
            pointwise: Tensor::zeros(&[c_out, c_in]),
            bias: Tensor::zeros(&[c_out]),
            bn: BatchNorm::zeros(c_out),
        }
    }

    fn c_out(&self) -> usize {
        self.pointwise.shape()[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub arch: Architecture,
    pub blocks: Vec<SeparableConv<T>>,
    pub final_conv: SeparableConv<T>,
    pub projection_weight: Tensor<T>,
    pub projection_bias: Tensor<T>,
    pub fc1_weight: Tensor<T>,
    pub fc1_bias: Tensor<T>,
    pub fc1_bn: BatchNorm<T>,
    pub out_weight: Tensor<T>,
    pub out_bias: Tensor<T>,
}

fn uniform_fill<T: Real>(t: &mut Tensor<T>, fan_in: usize, rng: &mut impl Rng) {
    let bound = (6.0 / fan_in as f64).sqrt();
    for v in t.data_mut() {
        *v = T::lit(rng.gen_range(-bound..bound));
    }
}

fn push_conv<'a, T>(prefix: String, c: &'a SeparableConv<T>, out: &mut Vec<(String, &'a Tensor<T>)>) {
    out.push((format!("{prefix}.depthwise"), &c.depthwise));
    out.push((format!("{prefix}.pointwise"), &c.pointwise));
    out.push((format!("{prefix}.bias"), &c.bias));
    out.push((format!("{prefix}.bn.gain"), &c.bn.gain));
    out.push((format!("{prefix}.bn.bias"), &c.bn.bias));
    out.push((format!("{prefix}.bn.running_mean"), &c.bn.running_mean));
    out.push((format!("{prefix}.bn.running_var"), &c.bn.running_var));
}

fn is_running_stat(name: &str) -> bool {
    name.ends_with("running_mean") || name.ends_with("running_var")
}

impl<T: Real> ModelParams<T> {
    /// All-zero tensors (also the layout of a gradient).
    pub fn zeros(arch: &Architecture) -> Result<Self> {
        arch.validate()?;
        let mut blocks = Vec::new();
        let mut c_in = arch.in_bands;
        for (&c, &k) in arch.block_channels.iter().zip(&arch.block_kernels) {
            blocks.push(SeparableConv::zeros(c_in, c, k));
            c_in = c;
        }
        let p = arch.projection_channels;
        Ok(Self {
            arch: arch.clone(),
            blocks,
            final_conv: SeparableConv::zeros(c_in, c_in, arch.final_kernel),
            projection_weight: Tensor::zeros(&[p, c_in]),
            projection_bias: Tensor::zeros(&[p]),
            fc1_weight: Tensor::zeros(&[arch.hidden, arch.flatten_dim()]),
            fc1_bias: Tensor::zeros(&[arch.hidden]),
            fc1_bn: BatchNorm::zeros(arch.hidden),
            out_weight: Tensor::zeros(&[arch.n_classes, arch.hidden]),
            out_bias: Tensor::zeros(&[arch.n_classes]),
        })
    }

    /// He-uniform weights, zero biases, identity batch norms.
    pub fn init(arch: &Architecture, rng: &mut impl Rng) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        for conv in p.blocks.iter_mut().chain([&mut p.final_conv]) {
            let k = conv.kernel_size;
            let c_in = conv.depthwise.shape()[0];
            uniform_fill(&mut conv.depthwise, k * k, rng);
            uniform_fill(&mut conv.pointwise, c_in, rng);
            conv.bn = BatchNorm::new(conv.c_out());
        }
        uniform_fill(&mut p.projection_weight, arch.last_channels(), rng);
        uniform_fill(&mut p.fc1_weight, arch.flatten_dim(), rng);
        p.fc1_bn = BatchNorm::new(arch.hidden);
        uniform_fill(&mut p.out_weight, arch.hidden, rng);
        Ok(p)
    }

    /// Every tensor with a stable dotted name, in serialization order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            push_conv(format!("block{}", i + 1), b, &mut out);
        }
        push_conv("final".into(), &self.final_conv, &mut out);
        out.push(("projection.weight".into(), &self.projection_weight));
        out.push(("projection.bias".into(), &self.projection_bias));
        out.push(("fc1.weight".into(), &self.fc1_weight));
        out.push(("fc1.bias".into(), &self.fc1_bias));
        out.push(("fc1.bn.gain".into(), &self.fc1_bn.gain));
        out.push(("fc1.bn.bias".into(), &self.fc1_bn.bias));
        out.push(("fc1.bn.running_mean".into(), &self.fc1_bn.running_mean));
        out.push(("fc1.bn.running_var".into(), &self.fc1_bn.running_var));
        out.push(("output.weight".into(), &self.out_weight));
        out.push(("output.bias".into(), &self.out_bias));
        out
    }

    /// Mutable view in the same order as [`Self::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = Vec::new();
        for c in self.blocks.iter_mut().chain([&mut self.final_conv]) {
            out.push(&mut c.depthwise);
            out.push(&mut c.pointwise);
            out.push(&mut c.bias);
            out.push(&mut c.bn.gain);
            out.push(&mut c.bn.bias);
            out.push(&mut c.bn.running_mean);
            out.push(&mut c.bn.running_var);
        }
        out.push(&mut self.projection_weight);
        out.push(&mut self.projection_bias);
        out.push(&mut self.fc1_weight);
        out.push(&mut self.fc1_bias);
        out.push(&mut self.fc1_bn.gain);
        out.push(&mut self.fc1_bn.bias);
        out.push(&mut self.fc1_bn.running_mean);
        out.push(&mut self.fc1_bn.running_var);
        out.push(&mut self.out_weight);
        out.push(&mut self.out_bias);
        out
    }

    /// Per entry of [`Self::named_tensors`], whether it is trainable.
    pub fn trainable_mask(&self) -> Vec<bool> {
        self.named_tensors().iter().map(|(n, _)| !is_running_stat(n)).collect()
    }

    /// Number of trainable scalars (batch-norm running statistics excluded).
    pub fn parameter_count(&self) -> usize {
        self.named_tensors()
            .iter()
            .filter(|(n, _)| !is_running_stat(n))
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::zeros(&self.arch).expect("validated architecture");
        for ((_, src), dst) in self.named_tensors().into_iter().zip(out.tensors_mut()) {
            *dst = src.cast();
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.data().iter().all(|v| v.is_finite()))
    }

    /// Exponential moving update of every batch norm from a training pass.
    pub fn update_running_stats(&mut self, pass: &ForwardPass<T>) {
        let m = T::lit(BN_MOMENTUM);
        let keep = T::one() - m;
        let mut bns: Vec<&mut BatchNorm<T>> = self.blocks.iter_mut().map(|b| &mut b.bn).collect();
        bns.push(&mut self.final_conv.bn);
        bns.push(&mut self.fc1_bn);
        for (bn, cache) in bns.into_iter().zip(pass.bn_caches()) {
            let Some(cache) = cache else { continue };
            for (r, &b) in bn.running_mean.data_mut().iter_mut().zip(&cache.batch_mean) {
                *r = keep * *r + m * b;
            }
            for (r, &b) in bn.running_var.data_mut().iter_mut().zip(&cache.batch_var_unbiased) {
                *r = keep * *r + m * b;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
struct ConvCache<T> {
    d_in: Dims,
    input: Vec<T>,
    dw_out: Vec<T>,
    bn: Option<BatchNormCache<T>>,
    act: Vec<T>,
    pool: Option<Vec<usize>>,
}

/// Logits plus everything backpropagation needs.
#[derive(Debug, Clone)]
pub struct ForwardPass<T> {
    pub logits: Vec<T>,
    pub batch: usize,
    mode: Mode,
    convs: Vec<ConvCache<T>>,
    flat: Vec<T>,
    fc1_bn: Option<BatchNormCache<T>>,
    hidden_act: Vec<T>,
}

impl<T: Real> ForwardPass<T> {
    fn bn_caches(&self) -> Vec<Option<&BatchNormCache<T>>> {
        let mut v: Vec<_> = self.convs.iter().map(|c| c.bn.as_ref()).collect();
        v.push(self.fc1_bn.as_ref());
        v
    }
}

fn conv_stage<T: Real>(
    x: Vec<T>,
    d: Dims,
    conv: &SeparableConv<T>,
    mode: Mode,
    pool: bool,
) -> (Vec<T>, Dims, ConvCache<T>) {
    let k = conv.kernel_size;
    let c_out = conv.c_out();
    let dw_out = layers::depthwise_forward(&x, d, conv.depthwise.data(), k);
    let pw = layers::pointwise_forward(&dw_out, d, conv.pointwise.data(), conv.bias.data(), c_out);
    let d_mid = d.with_channels(c_out);
    let (normed, bn) = bn_forward(&pw, d_mid, &conv.bn, mode);
    let act = layers::elu(&normed);
    let (out, d_out, pool_idx) = if pool {
        let (y, idx, od) = layers::max_pool2x2(&act, d_mid);
        (y, od, Some(idx))
    } else {
        (act.clone(), d_mid, None)
    };
    let cache = ConvCache {
        d_in: d,
        input: x,
        dw_out,
        bn,
        act,
        pool: pool_idx,
    };
    (out, d_out, cache)
}

fn bn_forward<T: Real>(x: &[T], d: Dims, bn: &BatchNorm<T>, mode: Mode) -> (Vec<T>, Option<BatchNormCache<T>>) {
    match mode {
        Mode::Train => {
            let (y, c) = layers::batch_norm_train(x, d, bn.gain.data(), bn.bias.data());
            (y, Some(c))
        }
        Mode::Eval => (
            layers::batch_norm_eval(
                x,
                d,
                bn.gain.data(),
                bn.bias.data(),
                bn.running_mean.data(),
                bn.running_var.data(),
            ),
            None,
        ),
    }
}

fn conv_stage_backward<T: Real>(cache: &ConvCache<T>, conv: &SeparableConv<T>, grad: &mut SeparableConv<T>, dy: &[T]) -> Vec<T> {
    let c_out = conv.c_out();
    let d_mid = cache.d_in.with_channels(c_out);
    let d_act = match &cache.pool {
        Some(idx) => layers::max_pool2x2_backward(idx, cache.act.len(), dy),
        None => dy.to_vec(),
    };
    let d_norm = layers::elu_backward(&cache.act, &d_act);
    let bn_cache = cache.bn.as_ref().expect("training pass");
    let d_pw = layers::batch_norm_backward(
        bn_cache,
        d_mid,
        conv.bn.gain.data(),
        &d_norm,
        grad.bn.gain.data_mut(),
        grad.bn.bias.data_mut(),
    );
    let d_dw = layers::pointwise_backward(
        &cache.dw_out,
        cache.d_in,
        conv.pointwise.data(),
        c_out,
        &d_pw,
        grad.pointwise.data_mut(),
        grad.bias.data_mut(),
    );
    layers::depthwise_backward(
        &cache.input,
        cache.d_in,
        conv.depthwise.data(),
        conv.kernel_size,
        &d_dw,
        grad.depthwise.data_mut(),
    )
}

/// Runs the network on `batch` maps laid out `[b][band][az][el]`.
pub fn forward<T: Real>(params: &ModelParams<T>, x: &[T], batch: usize, mode: Mode) -> Result<ForwardPass<T>> {
    let arch = &params.arch;
    if batch == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if x.len() != batch * arch.input_len() {
        return Err(Error::Shape(format!(
            "expected {batch} maps of {}×{}×{} ({} values), got {} values",
            arch.in_bands,
            arch.height,
            arch.width,
            batch * arch.input_len(),
            x.len()
        )));
    }
    let mut d = Dims {
        batch,
        channels: arch.in_bands,
        height: arch.height,
        width: arch.width,
    };
    let mut h = x.to_vec();
    let mut convs = Vec::with_capacity(params.blocks.len() + 1);
    for block in &params.blocks {
        let (y, od, c) = conv_stage(h, d, block, mode, true);
        convs.push(c);
        h = y;
        d = od;
    }
    let (y, od, c) = conv_stage(h, d, &params.final_conv, mode, false);
    convs.push(c);
    d = od;
    let p = arch.projection_channels;
    let flat = layers::pointwise_forward(&y, d, params.projection_weight.data(), params.projection_bias.data(), p);
    let n_flat = arch.flatten_dim();
    let z = layers::dense_forward(&flat, batch, params.fc1_weight.data(), params.fc1_bias.data(), n_flat, arch.hidden);
    let dh = Dims {
        batch,
        channels: arch.hidden,
        height: 1,
        width: 1,
    };
    let (zn, fc1_bn) = bn_forward(&z, dh, &params.fc1_bn, mode);
    let hidden_act = layers::elu(&zn);
    let logits = layers::dense_forward(
        &hidden_act,
        batch,
        params.out_weight.data(),
        params.out_bias.data(),
        arch.hidden,
        arch.n_classes,
    );
    if cfg!(debug_assertions) && logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite logits".into()));
    }
    Ok(ForwardPass {
        logits,
        batch,
        mode,
        convs,
        flat,
        fc1_bn,
        hidden_act,
    })
}

/// Parameter gradients for upstream `dlogits` (`batch × n_classes`) of a training pass.
pub fn backward<T: Real>(params: &ModelParams<T>, pass: &ForwardPass<T>, dlogits: &[T]) -> Result<ModelParams<T>> {
    if pass.mode != Mode::Train {
        return Err(Error::InvalidInput("backward needs a training-mode forward pass".into()));
    }
    let arch = &params.arch;
    let b = pass.batch;
    if dlogits.len() != b * arch.n_classes {
        return Err(Error::Shape(format!("dlogits has {} values, expected {}", dlogits.len(), b * arch.n_classes)));
    }
    let mut g = ModelParams::<T>::zeros(arch)?;
    let d_hidden = layers::dense_backward(
        &pass.hidden_act,
        b,
        params.out_weight.data(),
        arch.hidden,
        arch.n_classes,
        dlogits,
        g.out_weight.data_mut(),
        g.out_bias.data_mut(),
    );
    let d_zn = layers::elu_backward(&pass.hidden_act, &d_hidden);
    let dh = Dims {
        batch: b,
        channels: arch.hidden,
        height: 1,
        width: 1,
    };
    let d_z = layers::batch_norm_backward(
        pass.fc1_bn.as_ref().expect("training pass"),
        dh,
        params.fc1_bn.gain.data(),
        &d_zn,
        g.fc1_bn.gain.data_mut(),
        g.fc1_bn.bias.data_mut(),
    );
    let n_flat = arch.flatten_dim();
    let d_flat = layers::dense_backward(
        &pass.flat,
        b,
        params.fc1_weight.data(),
        n_flat,
        arch.hidden,
        &d_z,
        g.fc1_weight.data_mut(),
        g.fc1_bias.data_mut(),
    );
    let final_cache = pass.convs.last().expect("final conv");
    let final_d = final_cache.d_in.with_channels(params.final_conv.c_out());
    let mut dy = layers::pointwise_backward(
        &final_cache.act,
        final_d,
        params.projection_weight.data(),
        arch.projection_channels,
        &d_flat,
        g.projection_weight.data_mut(),
        g.projection_bias.data_mut(),
    );
    dy = conv_stage_backward(final_cache, &params.final_conv, &mut g.final_conv, &dy);
    for (i, block) in params.blocks.iter().enumerate().rev() {
        dy = conv_stage_backward(&pass.convs[i], block, &mut g.blocks[i], &dy);
    }
    Ok(g)
}

pub fn softmax<T: Real>(logits: &[T], n_classes: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(n_classes) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let e: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
        let s: T = e.iter().copied().sum();
        out.extend(e.into_iter().map(|v| v / s));
    }
    out
}

/// Mean cross-entropy of soft `targets` against `softmax(logits)`, and its gradient
/// with respect to the logits.
pub fn softmax_cross_entropy<T: Real>(logits: &[T], targets: &[T], n_classes: usize) -> Result<(T, Vec<T>)> {
    if logits.len() != targets.len() || logits.is_empty() || logits.len() % n_classes != 0 {
        return Err(Error::Shape(format!(
            "logits ({}) and targets ({}) must be equal nonzero multiples of {n_classes}",
            logits.len(),
            targets.len()
        )));
    }
    let b = T::from_usize(logits.len() / n_classes).expect("batch");
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (row, t) in logits.chunks(n_classes).zip(targets.chunks(n_classes)) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        for (&z, &y) in row.iter().zip(t) {
            if y != T::zero() {
                loss -= y * (z - lse);
            }
            grad.push(((z - lse).exp() - y) / b);
        }
    }
    Ok((loss / b, grad))
}

/// Index of the class treated as "genuine" when turning logits into a score.
pub const GENUINE_CLASS: usize = 1;

/// Probability of the genuine class for each map in the batch (eval mode).
pub fn predict_scores<T: Real>(params: &ModelParams<T>, x: &[T], batch: usize) -> Result<Vec<f64>> {
    let pass = forward(params, x, batch, Mode::Eval)?;
    let k = params.arch.n_classes;
    Ok(softmax(&pass.logits, k)
        .chunks(k)
        .map(|p| p[GENUINE_CLASS].to_f64().expect("finite"))
        .collect())
}

pub fn predict_score<T: Real>(params: &ModelParams<T>, map: &[T]) -> Result<f64> {
    Ok(predict_scores(params, map, 1)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stock_parameter_count() {
        let p = ModelParams::<f32>::zeros(&Architecture::stock(4)).unwrap();
        assert_eq!(p.arch.flatten_dim(), 110);
        assert_eq!(p.parameter_count(), 6312);
        let base = ModelParams::<f32>::zeros(&Architecture::stock(1)).unwrap().parameter_count();
        for k in 1..=8 {
            let n = ModelParams::<f32>::zeros(&Architecture::stock(k)).unwrap().parameter_count();
            assert!((5500..=7000).contains(&n), "K={k}: {n}");
            // block-1 depthwise (25 per band) and pointwise (8 per band) grow with K
            assert_eq!(n - base, (k - 1) * (25 + 8));
        }
    }

    #[test]
    fn zero_affine_gives_zero_logits() {
        let arch = Architecture::stock(4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ModelParams::<f64>::init(&arch, &mut rng).unwrap();
        let x = vec![0.0; 2 * arch.input_len()];
        let pass = forward(&p, &x, 2, Mode::Eval).unwrap();
        assert!(pass.logits.iter().all(|&v| v == 0.0));

        p.out_bias.data_mut().copy_from_slice(&[0.3, -0.2]);
        let pass = forward(&p, &x, 2, Mode::Eval).unwrap();
        assert_eq!(pass.logits, vec![0.3, -0.2, 0.3, -0.2]);
    }

    #[test]
    fn identical_rows_identical_logits() {
        let arch = Architecture::stock(4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = ModelParams::<f32>::init(&arch, &mut rng).unwrap();
        let one: Vec<f32> = (0..arch.input_len()).map(|_| rng.gen()).collect();
        let x = [one.clone(), one].concat();
        let pass = forward(&p, &x, 2, Mode::Eval).unwrap();
        assert_eq!(pass.logits[..2], pass.logits[2..]);
    }

    #[test]
    fn wrong_input_size_rejected() {
        let p = ModelParams::<f32>::zeros(&Architecture::stock(4)).unwrap();
        let x = vec![0.0; 4 * 90 * 41];
        assert!(matches!(forward(&p, &x, 1, Mode::Eval), Err(Error::Shape(_))));
        assert!(forward(&p, &[], 0, Mode::Eval).is_err());
    }

    #[test]
    fn cross_entropy_values() {
        let (l, _) = softmax_cross_entropy(&[0.0f64, 0.0], &[1.0, 0.0], 2).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let (l, _) = softmax_cross_entropy(&[500.0f64, -500.0], &[1.0, 0.0], 2).unwrap();
        assert!(l.abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits: Vec<f64> = (0..8).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut targets = Vec::new();
        for _ in 0..4 {
            let l: f64 = rng.gen();
            targets.extend([l, 1.0 - l]);
        }
        let (_, g) = softmax_cross_entropy(&logits, &targets, 2).unwrap();
        let h = 1e-6;
        for i in 0..8 {
            let mut up = logits.clone();
            up[i] += h;
            let mut dn = logits.clone();
            dn[i] -= h;
            let num = (softmax_cross_entropy(&up, &targets, 2).unwrap().0 - softmax_cross_entropy(&dn, &targets, 2).unwrap().0) / (2.0 * h);
            let rel = (num - g[i]).abs() / num.abs().max(g[i].abs()).max(1e-8);
            assert!(rel < 1e-6, "{i}: {num} vs {}", g[i]);
        }
    }

    #[test]
    fn score_properties() {
        let p = softmax(&[0.0f64, 0.0], 2);
        assert_eq!(p[GENUINE_CLASS], 0.5);
        let mut last = 0.0;
        for z in [-3.0f64, -1.0, 0.0, 0.5, 4.0] {
            let s = softmax(&[0.0, z], 2)[GENUINE_CLASS];
            assert!(s > last);
            last = s;
        }
    }

    #[test]
    fn batch_and_single_scores_agree() {
        let arch = Architecture::stock(4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = ModelParams::<f32>::init(&arch, &mut rng).unwrap();
        let x: Vec<f32> = (0..3 * arch.input_len()).map(|_| rng.gen()).collect();
        let batch = predict_scores(&p, &x, 3).unwrap();
        for (i, s) in batch.iter().enumerate() {
            let single = predict_score(&p, &x[i * arch.input_len()..(i + 1) * arch.input_len()]).unwrap();
            assert!((single - s).abs() < 1e-6);
            assert!((0.0..=1.0).contains(s));
        }
    }

    #[test]
    fn named_tensors_align_with_mut_view() {
        let arch = Architecture::reduced(2);
        let mut p = ModelParams::<f64>::zeros(&arch).unwrap();
        let shapes: Vec<Vec<usize>> = p.named_tensors().iter().map(|(_, t)| t.shape().to_vec()).collect();
        let mut_shapes: Vec<Vec<usize>> = p.tensors_mut().iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(shapes, mut_shapes);
        let names: Vec<String> = p.named_tensors().into_iter().map(|(n, _)| n).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
    }

    #[test]
    fn running_stats_move_toward_batch() {
        let arch = Architecture::reduced(1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = ModelParams::<f64>::init(&arch, &mut rng).unwrap();
        let x: Vec<f64> = (0..4 * arch.input_len()).map(|_| rng.gen()).collect();
        let pass = forward(&p, &x, 4, Mode::Train).unwrap();
        let mean = pass.convs[0].bn.as_ref().unwrap().batch_mean[0];
        p.update_running_stats(&pass);
        assert!((p.blocks[0].bn.running_mean.data()[0] - 0.1 * mean).abs() < 1e-15);
    }
}
