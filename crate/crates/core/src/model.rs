//! The tracking network: nine densely connected dilated-convolution blocks
//! feeding three per-formant regression heads.
//!
//! Block i receives the concatenation of the raw features and every earlier
//! block's output, then applies conv(dilation dᵢ) → masked batch norm → GLU
//! → channel dropout. The heads read the concatenation of all block outputs
//! and regress one value per frame each. Heads work in units of
//! `target_scale` Hz (1000 by default, i.e. kHz) so the MAE loss sees O(1)
//! targets; `forward` returns predictions already scaled back to Hz.
//!
//! Masked-out input frames are zeroed before the first block. Together with
//! masked batch-norm statistics and the masked loss this makes the training
//! objective exactly independent of whatever values padding or silence
//! frames carry.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::{write_atomic, ByteReader};
use crate::nn::gradcheck::{
    max_rel_err, numeric_grad, GradcheckEntry, GRAD_H, TOL_GENERAL, TOL_LINEAR,
};
use crate::nn::ops::{
    batch_norm_masked, batch_norm_masked_backward, channel_dropout, channel_dropout_backward,
    dense_td, dense_td_backward, dilated_conv1d_same, dilated_conv1d_same_backward, glu,
    glu_backward, Activation, BnRunning, BnStats, GluCache, Phase, BN_EPS,
};
use crate::nn::{concat_channels, concat_channels_backward, Mask, Tensor3};
use crate::util::stream_seed;

pub const WEIGHTS_MAGIC: &[u8; 8] = b"FTRKWGTS";

/// Where the regression heads read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadInput {
    /// Concatenation of all block outputs (9 × 64 = 576 channels).
    ConcatAllBlocks,
    /// Only the final block's output.
    LastBlock,
}

impl HeadInput {
    fn as_str(self) -> &'static str {
        match self {
            HeadInput::ConcatAllBlocks => "concat_all_blocks",
            HeadInput::LastBlock => "last_block",
        }
    }
}

/// Architecture hyperparameters. The defaults are the tracking network:
/// nine 64-channel blocks with dilations 1,2,4,1,2,4,1,2,4 over 350-dim
/// features, 256-unit head hidden layers, and kHz-scaled targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_blocks: usize,
    pub dilations: Vec<usize>,
    pub channels: usize,
    pub kernel: usize,
    pub head_width: usize,
    pub input_dim: usize,
    pub dropout_p: f64,
    /// Raw features join every block's concatenated input (not only the
    /// first block's).
    pub include_input_in_dense: bool,
    pub head_input: HeadInput,
    /// Hz represented by one unit of head output.
    pub target_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_blocks: 9,
            dilations: vec![1, 2, 4, 1, 2, 4, 1, 2, 4],
            channels: 64,
            kernel: 3,
            head_width: 256,
            input_dim: 350,
            dropout_p: 0.1,
            include_input_in_dense: true,
            head_input: HeadInput::ConcatAllBlocks,
            target_scale: 1000.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 {
            return Err(Error::InvalidParam("model needs at least one block".into()));
        }
        if self.dilations.len() != self.n_blocks {
            return Err(Error::InvalidParam(format!(
                "{} dilations for {} blocks",
                self.dilations.len(),
                self.n_blocks
            )));
        }
        if self.dilations.iter().any(|&d| d == 0) {
            return Err(Error::InvalidParam("dilations must be >= 1".into()));
        }
        if self.kernel != 3 {
            return Err(Error::InvalidParam(format!(
                "kernel size {} unsupported (the engine implements k = 3)",
                self.kernel
            )));
        }
        if self.channels == 0 || self.head_width == 0 || self.input_dim == 0 {
            return Err(Error::InvalidParam("zero-sized layer in config".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidParam(format!(
                "dropout_p {} outside [0, 1)",
                self.dropout_p
            )));
        }
        if !(self.target_scale > 0.0) {
            return Err(Error::InvalidParam("target_scale must be positive".into()));
        }
        Ok(())
    }

    /// Input channels of block `i` (0-based). The first block always reads
    /// the raw features; later blocks prepend them only when
    /// `include_input_in_dense` is set.
    pub fn block_in_channels(&self, i: usize) -> usize {
        if i == 0 {
            self.input_dim
        } else if self.include_input_in_dense {
            self.input_dim + i * self.channels
        } else {
            i * self.channels
        }
    }

    /// Channel count the heads read.
    pub fn head_in_channels(&self) -> usize {
        match self.head_input {
            HeadInput::ConcatAllBlocks => self.n_blocks * self.channels,
            HeadInput::LastBlock => self.channels,
        }
    }

    /// Frames to each side of t that can influence the output at t:
    /// (k−1)/2 · Σ dᵢ.
    pub fn receptive_radius(&self) -> usize {
        self.dilations.iter().sum()
    }

    /// Serializes as `key = value` lines, keys named after the fields.
    pub fn to_text(&self) -> String {
        let dil: Vec<String> = self.dilations.iter().map(|d| d.to_string()).collect();
        let mut s = String::new();
        let _ = writeln!(s, "n_blocks = {}", self.n_blocks);
        let _ = writeln!(s, "dilations = {}", dil.join(","));
        let _ = writeln!(s, "channels = {}", self.channels);
        let _ = writeln!(s, "kernel = {}", self.kernel);
        let _ = writeln!(s, "head_width = {}", self.head_width);
        let _ = writeln!(s, "input_dim = {}", self.input_dim);
        let _ = writeln!(s, "dropout_p = {}", self.dropout_p);
        let _ = writeln!(s, "include_input_in_dense = {}", self.include_input_in_dense);
        let _ = writeln!(s, "head_input = {}", self.head_input.as_str());
        let _ = writeln!(s, "target_scale = {}", self.target_scale);
        s
    }

    /// Parses the `key = value` form; keys may appear in any order, missing
    /// keys keep their defaults, unknown or repeated keys are rejected.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("config line {}: no '='", lineno + 1)))?;
            let key = key.trim();
            let value = value.trim();
            if seen.contains(&key) {
                return Err(Error::Parse(format!("config key {key} repeated")));
            }
            match key {
                "n_blocks" => cfg.n_blocks = parse_num(key, value)?,
                "dilations" => {
                    cfg.dilations = value
                        .split(',')
                        .map(|p| parse_num(key, p.trim()))
                        .collect::<Result<_>>()?;
                }
                "channels" => cfg.channels = parse_num(key, value)?,
                "kernel" => cfg.kernel = parse_num(key, value)?,
                "head_width" => cfg.head_width = parse_num(key, value)?,
                "input_dim" => cfg.input_dim = parse_num(key, value)?,
                "dropout_p" => cfg.dropout_p = parse_num(key, value)?,
                "include_input_in_dense" => {
                    cfg.include_input_in_dense = match value {
                        "true" => true,
                        "false" => false,
                        _ => return Err(Error::Parse(format!("{key}: expected true/false"))),
                    }
                }
                "head_input" => {
                    cfg.head_input = match value {
                        "concat_all_blocks" => HeadInput::ConcatAllBlocks,
                        "last_block" => HeadInput::LastBlock,
                        _ => {
                            return Err(Error::Parse(format!(
                                "head_input: unknown variant {value}"
                            )))
                        }
                    }
                }
                "target_scale" => cfg.target_scale = parse_num(key, value)?,
                _ => return Err(Error::Parse(format!("unknown config key {key}"))),
            }
            // the map above borrows `key` from `text`, which outlives `seen`
            seen.push(key);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Parse(format!("config key {key}: bad value {value:?}")))
}

/// Parameters of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub conv_w: Vec<f64>, // channels × c_in × 3
    pub conv_b: Vec<f64>,
    pub bn_gamma: Vec<f64>,
    pub bn_beta: Vec<f64>,
    pub bn_running: BnRunning,
    pub glu_w: Vec<f64>, // channels × channels, (C_in, C_out) layout
    pub glu_b: Vec<f64>,
    pub glu_v: Vec<f64>,
    pub glu_c: Vec<f64>,
}

/// Parameters of one regression head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub w1: Vec<f64>, // head_in × head_width
    pub b1: Vec<f64>,
    pub w2: Vec<f64>, // head_width × 1
    pub b2: Vec<f64>,
}

/// Full parameter set plus the config that shapes it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub blocks: Vec<BlockWeights>,
    pub heads: [HeadWeights; 3],
}

/// Gradients mirroring the trainable tensors of [`ModelWeights`] (running
/// BN statistics are not trained), plus the gradient w.r.t. the input
/// features, which the masking and gradient checks inspect.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub blocks: Vec<BlockGrads>,
    pub heads: [HeadGrads; 3],
    pub input: Tensor3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrads {
    pub conv_w: Vec<f64>,
    pub conv_b: Vec<f64>,
    pub bn_gamma: Vec<f64>,
    pub bn_beta: Vec<f64>,
    pub glu_w: Vec<f64>,
    pub glu_b: Vec<f64>,
    pub glu_v: Vec<f64>,
    pub glu_c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ModelWeights {
    /// Trainable tensors in canonical order (the same order `build` draws
    /// them and the weight file stores them).
    pub fn trainable(&self) -> Vec<(String, &Vec<f64>)> {
        let mut out = Vec::new();
        for (i, bw) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.conv.w"), &bw.conv_w));
            out.push((format!("block{i}.conv.b"), &bw.conv_b));
            out.push((format!("block{i}.bn.gamma"), &bw.bn_gamma));
            out.push((format!("block{i}.bn.beta"), &bw.bn_beta));
            out.push((format!("block{i}.glu.w"), &bw.glu_w));
            out.push((format!("block{i}.glu.b"), &bw.glu_b));
            out.push((format!("block{i}.glu.v"), &bw.glu_v));
            out.push((format!("block{i}.glu.c"), &bw.glu_c));
        }
        for (k, hw) in self.heads.iter().enumerate() {
            out.push((format!("head{k}.dense1.w"), &hw.w1));
            out.push((format!("head{k}.dense1.b"), &hw.b1));
            out.push((format!("head{k}.dense2.w"), &hw.w2));
            out.push((format!("head{k}.dense2.b"), &hw.b2));
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut out: Vec<(String, &mut Vec<f64>)> = Vec::new();
        for (i, bw) in self.blocks.iter_mut().enumerate() {
            let BlockWeights { conv_w, conv_b, bn_gamma, bn_beta, glu_w, glu_b, glu_v, glu_c, .. } =
                bw;
            out.push((format!("block{i}.conv.w"), conv_w));
            out.push((format!("block{i}.conv.b"), conv_b));
            out.push((format!("block{i}.bn.gamma"), bn_gamma));
            out.push((format!("block{i}.bn.beta"), bn_beta));
            out.push((format!("block{i}.glu.w"), glu_w));
            out.push((format!("block{i}.glu.b"), glu_b));
            out.push((format!("block{i}.glu.v"), glu_v));
            out.push((format!("block{i}.glu.c"), glu_c));
        }
        for (k, hw) in self.heads.iter_mut().enumerate() {
            let HeadWeights { w1, b1, w2, b2 } = hw;
            out.push((format!("head{k}.dense1.w"), w1));
            out.push((format!("head{k}.dense1.b"), b1));
            out.push((format!("head{k}.dense2.w"), w2));
            out.push((format!("head{k}.dense2.b"), b2));
        }
        out
    }
}

impl ModelGrads {
    /// Same order as [`ModelWeights::trainable`].
    pub fn trainable(&self) -> Vec<(String, &Vec<f64>)> {
        let mut out = Vec::new();
        for (i, bg) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.conv.w"), &bg.conv_w));
            out.push((format!("block{i}.conv.b"), &bg.conv_b));
            out.push((format!("block{i}.bn.gamma"), &bg.bn_gamma));
            out.push((format!("block{i}.bn.beta"), &bg.bn_beta));
            out.push((format!("block{i}.glu.w"), &bg.glu_w));
            out.push((format!("block{i}.glu.b"), &bg.glu_b));
            out.push((format!("block{i}.glu.v"), &bg.glu_v));
            out.push((format!("block{i}.glu.c"), &bg.glu_c));
        }
        for (k, hg) in self.heads.iter().enumerate() {
            out.push((format!("head{k}.dense1.w"), &hg.w1));
            out.push((format!("head{k}.dense1.b"), &hg.b1));
            out.push((format!("head{k}.dense2.w"), &hg.w2));
            out.push((format!("head{k}.dense2.b"), &hg.b2));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

fn glorot(rng: &mut ChaCha8Rng, n: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-a..a)).collect()
}

/// Builds a freshly initialized model: Glorot-uniform weight matrices
/// (conv fans count the kernel taps), zero biases, identity batch norm.
/// Only weight matrices consume random draws, in canonical tensor order,
/// so the result is bitwise deterministic in `seed`.
pub fn build(config: &ModelConfig, seed: u64) -> Result<ModelWeights> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, "init", 0));
    let c = config.channels;
    let mut blocks = Vec::with_capacity(config.n_blocks);
    for i in 0..config.n_blocks {
        let c_in = config.block_in_channels(i);
        blocks.push(BlockWeights {
            conv_w: glorot(&mut rng, c * c_in * 3, c_in * config.kernel, c * config.kernel),
            conv_b: vec![0.0; c],
            bn_gamma: vec![1.0; c],
            bn_beta: vec![0.0; c],
            bn_running: BnRunning::identity(c),
            glu_w: glorot(&mut rng, c * c, c, c),
            glu_b: vec![0.0; c],
            glu_v: glorot(&mut rng, c * c, c, c),
            glu_c: vec![0.0; c],
        });
    }
    let head_in = config.head_in_channels();
    let heads = std::array::from_fn(|_| HeadWeights {
        w1: glorot(&mut rng, head_in * config.head_width, head_in, config.head_width),
        b1: vec![0.0; config.head_width],
        w2: glorot(&mut rng, config.head_width, config.head_width, 1),
        b2: vec![0.0; 1],
    });
    Ok(ModelWeights { config: config.clone(), blocks, heads })
}

// ---------------------------------------------------------------------------
// forward / backward
// ---------------------------------------------------------------------------

/// Activations retained between the forward and backward passes. Block
/// inputs and the head input are re-concatenated on demand instead of being
/// cached; everything else is stored.
pub struct ForwardCache {
    /// Input with masked frames zeroed; this is what block 0 consumed.
    pub x: Tensor3,
    pub conv_out: Vec<Tensor3>,
    pub bn_stats: Vec<BnStats>,
    pub bn_out: Vec<Tensor3>,
    pub glu_cache: Vec<GluCache>,
    /// Block outputs (after dropout).
    pub h: Vec<Tensor3>,
    pub drop_keep: Vec<Vec<bool>>,
    pub head_hidden: [Tensor3; 3],
    /// Raw head outputs in `target_scale` units (predictions ÷ scale).
    pub head_raw: [Tensor3; 3],
}

fn block_input<'a>(
    cache_x: &'a Tensor3,
    h: &'a [Tensor3],
    config: &ModelConfig,
    i: usize,
) -> Result<Tensor3> {
    let mut parts: Vec<&Tensor3> = Vec::with_capacity(i + 1);
    if i == 0 || config.include_input_in_dense {
        parts.push(cache_x);
    }
    parts.extend(h[..i].iter());
    concat_channels(&parts)
}

fn head_input(cache: &ForwardCache, config: &ModelConfig) -> Result<Tensor3> {
    match config.head_input {
        HeadInput::ConcatAllBlocks => {
            let parts: Vec<&Tensor3> = cache.h.iter().collect();
            concat_channels(&parts)
        }
        HeadInput::LastBlock => Ok(cache.h[config.n_blocks - 1].clone()),
    }
}

/// Runs the network. Returns the three formant predictions in Hz (B×T×1
/// each) plus the cache for [`backward`]. Dropout draws its per-block
/// channel masks from `stream_seed(dropout_seed, "dropout", block)`; the
/// infer phase ignores the seed and uses running BN statistics.
pub fn forward(
    weights: &ModelWeights,
    x: &Tensor3,
    mask: &Mask,
    phase: Phase,
    dropout_seed: u64,
) -> Result<([Tensor3; 3], ForwardCache)> {
    let config = &weights.config;
    if x.c != config.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "input has {} channels, model expects {}",
            x.c, config.input_dim
        )));
    }
    if mask.b != x.b || mask.t != x.t {
        return Err(Error::ShapeMismatch("mask does not match input grid".into()));
    }

    let mut xz = x.clone();
    for b in 0..x.b {
        for t in 0..x.t {
            if !mask.get(b, t) {
                xz.frame_mut(b, t).fill(0.0);
            }
        }
    }

    let n = config.n_blocks;
    let mut cache = ForwardCache {
        x: xz,
        conv_out: Vec::with_capacity(n),
        bn_stats: Vec::with_capacity(n),
        bn_out: Vec::with_capacity(n),
        glu_cache: Vec::with_capacity(n),
        h: Vec::with_capacity(n),
        drop_keep: Vec::with_capacity(n),
        head_hidden: [Tensor3::zeros(0, 0, 0), Tensor3::zeros(0, 0, 0), Tensor3::zeros(0, 0, 0)],
        head_raw: [Tensor3::zeros(0, 0, 0), Tensor3::zeros(0, 0, 0), Tensor3::zeros(0, 0, 0)],
    };

    for i in 0..n {
        let bw = &weights.blocks[i];
        let input = block_input(&cache.x, &cache.h, config, i)?;
        let conv =
            dilated_conv1d_same(&input, &bw.conv_w, &bw.conv_b, config.channels, config.dilations[i])?;
        let (bn, stats) = batch_norm_masked(
            &conv,
            mask,
            &bw.bn_gamma,
            &bw.bn_beta,
            &bw.bn_running,
            phase,
            BN_EPS,
        )?;
        let (g, gcache) = glu(&bn, &bw.glu_w, &bw.glu_b, &bw.glu_v, &bw.glu_c)?;
        let (h, keep) = channel_dropout(
            &g,
            config.dropout_p,
            phase,
            stream_seed(dropout_seed, "dropout", i as u64),
        )?;
        cache.conv_out.push(conv);
        cache.bn_stats.push(stats);
        cache.bn_out.push(bn);
        cache.glu_cache.push(gcache);
        cache.h.push(h);
        cache.drop_keep.push(keep);
    }

    let hin = head_input(&cache, config)?;
    let mut preds: Vec<Tensor3> = Vec::with_capacity(3);
    for k in 0..3 {
        let hw = &weights.heads[k];
        let hidden = dense_td(&hin, &hw.w1, &hw.b1, Activation::Relu)?;
        let raw = dense_td(&hidden, &hw.w2, &hw.b2, Activation::Linear)?;
        cache.head_hidden[k] = hidden;
        let mut scaled = raw.clone();
        for v in scaled.data.iter_mut() {
            *v *= config.target_scale;
        }
        cache.head_raw[k] = raw;
        preds.push(scaled);
    }
    Ok((preds.try_into().map_err(|_| Error::ShapeMismatch("three heads".into()))?, cache))
}

/// Backpropagates `d_raw` (gradients w.r.t. the raw, unscaled head outputs
/// in [`ForwardCache::head_raw`]) through the whole network.
pub fn backward(
    weights: &ModelWeights,
    cache: &ForwardCache,
    mask: &Mask,
    d_raw: [&Tensor3; 3],
    phase: Phase,
) -> Result<ModelGrads> {
    let config = &weights.config;
    let n = config.n_blocks;
    let hin = head_input(cache, config)?;

    let mut d_hin = Tensor3::zeros(hin.b, hin.t, hin.c);
    let mut head_grads: Vec<HeadGrads> = Vec::with_capacity(3);
    for k in 0..3 {
        let hw = &weights.heads[k];
        let (d_hidden, dw2, db2) = dense_td_backward(
            &cache.head_hidden[k],
            &hw.w2,
            Activation::Linear,
            &cache.head_raw[k],
            d_raw[k],
        )?;
        let (d_in, dw1, db1) = dense_td_backward(
            &hin,
            &hw.w1,
            Activation::Relu,
            &cache.head_hidden[k],
            &d_hidden,
        )?;
        for (a, b) in d_hin.data.iter_mut().zip(&d_in.data) {
            *a += b;
        }
        head_grads.push(HeadGrads { w1: dw1, b1: db1, w2: dw2, b2: db2 });
    }

    // gradient w.r.t. each block output, accumulated from every consumer
    let mut d_h: Vec<Tensor3> =
        (0..n).map(|_| Tensor3::zeros(hin.b, hin.t, config.channels)).collect();
    match config.head_input {
        HeadInput::ConcatAllBlocks => {
            let parts = concat_channels_backward(&d_hin, &vec![config.channels; n])?;
            for (i, p) in parts.into_iter().enumerate() {
                d_h[i] = p;
            }
        }
        HeadInput::LastBlock => d_h[n - 1] = d_hin,
    }

    let mut block_grads: Vec<Option<BlockGrads>> = (0..n).map(|_| None).collect();
    let mut d_input = Tensor3::zeros(cache.x.b, cache.x.t, cache.x.c);
    for i in (0..n).rev() {
        let bw = &weights.blocks[i];
        let d_glu_out =
            channel_dropout_backward(&d_h[i], &cache.drop_keep[i], config.dropout_p, phase)?;
        let (d_bn_out, glu_dw, glu_db, glu_dv, glu_dc) =
            glu_backward(&cache.bn_out[i], &bw.glu_w, &bw.glu_v, &cache.glu_cache[i], &d_glu_out)?;
        let (d_conv_out, d_gamma, d_beta) = batch_norm_masked_backward(
            &cache.conv_out[i],
            mask,
            &bw.bn_gamma,
            &cache.bn_stats[i],
            phase,
            BN_EPS,
            &d_bn_out,
        )?;
        let input = block_input(&cache.x, &cache.h, config, i)?;
        let (d_in, conv_dw, conv_db) = dilated_conv1d_same_backward(
            &input,
            &bw.conv_w,
            config.channels,
            config.dilations[i],
            &d_conv_out,
        )?;
        // route the concatenated input gradient back to its sources
        let mut sizes = Vec::new();
        let feeds_input = i == 0 || config.include_input_in_dense;
        if feeds_input {
            sizes.push(config.input_dim);
        }
        sizes.extend(std::iter::repeat(config.channels).take(i));
        let mut parts = concat_channels_backward(&d_in, &sizes)?.into_iter();
        if feeds_input {
            let px = parts.next().expect("input part");
            for (a, b) in d_input.data.iter_mut().zip(&px.data) {
                *a += b;
            }
        }
        for (j, p) in parts.enumerate() {
            for (a, b) in d_h[j].data.iter_mut().zip(&p.data) {
                *a += b;
            }
        }
        block_grads[i] = Some(BlockGrads {
            conv_w: conv_dw,
            conv_b: conv_db,
            bn_gamma: d_gamma,
            bn_beta: d_beta,
            glu_w: glu_dw,
            glu_b: glu_db,
            glu_v: glu_dv,
            glu_c: glu_dc,
        });
    }

    // the forward zeroes masked input frames, so the gradient w.r.t. the
    // original input vanishes there
    for bi in 0..d_input.b {
        for t in 0..d_input.t {
            if !mask.get(bi, t) {
                d_input.frame_mut(bi, t).fill(0.0);
            }
        }
    }

    Ok(ModelGrads {
        blocks: block_grads.into_iter().map(|g| g.expect("all blocks visited")).collect(),
        heads: head_grads.try_into().map_err(|_| Error::ShapeMismatch("three heads".into()))?,
        input: d_input,
    })
}

/// Runs inference over one utterance's normalized features and returns the
/// per-frame F1/F2/F3 predictions in Hz. Degenerate (masked) frames still
/// receive predictions, but their zeroed features carry no information.
pub fn predict_utterance(
    weights: &ModelWeights,
    features: &crate::dsp::FeatureMatrix,
) -> Result<Vec<[f64; 3]>> {
    let t = features.frames;
    let x = Tensor3::from_vec(features.values.clone(), 1, t, weights.config.input_dim)?;
    let mut mask = Mask::full(1, t);
    for (i, &m) in features.mask.iter().enumerate() {
        mask.set(0, i, m);
    }
    let (preds, _) = forward(weights, &x, &mask, Phase::Infer, 0)?;
    Ok((0..t)
        .map(|i| [preds[0].at(0, i, 0), preds[1].at(0, i, 0), preds[2].at(0, i, 0)])
        .collect())
}

// ---------------------------------------------------------------------------
// gradient check
// ---------------------------------------------------------------------------

/// Probe loss for the network-wide gradient check: a fixed random weighting
/// of the raw head outputs, Σₖ Σ rₖ·rawₖ. Smooth (unlike a MAE probe, whose
/// sign pattern can cancel a bias gradient exactly) and, with the weights
/// zeroed on masked frames, reading only what a real loss would read.
fn probe_loss(
    w: &ModelWeights,
    x: &Tensor3,
    mask: &Mask,
    r: [&Tensor3; 3],
    phase: Phase,
) -> Result<f64> {
    let (_, cache) = forward(w, x, mask, phase, 0)?;
    let mut acc = 0.0;
    for k in 0..3 {
        acc += cache.head_raw[k].data.iter().zip(&r[k].data).map(|(y, w)| y * w).sum::<f64>();
    }
    Ok(acc)
}

/// Checks the whole network's analytic gradients against central finite
/// differences and reports one row per phase and tensor (plus the input).
///
/// Weights, input, mask and probe derive from `seed`; batch-norm running
/// statistics are set non-identity so the infer phase is non-trivial. Rows
/// for the head output layers, in which the probe loss is exactly linear,
/// carry [`TOL_LINEAR`]; convolution biases in train phase are exactly flat
/// directions (batch norm subtracts the per-channel mean right after the
/// convolution) and are reported as `flat` rows bounding the gradient
/// magnitude itself.
pub fn gradcheck_network(
    config: &ModelConfig,
    b: usize,
    t: usize,
    seed: u64,
) -> Result<Vec<GradcheckEntry>> {
    if config.dropout_p != 0.0 {
        return Err(Error::InvalidParam(
            "gradcheck requires dropout_p = 0: a dropped channel would be a flat direction".into(),
        ));
    }
    let mut w = build(config, seed)?;
    for blk in &mut w.blocks {
        for c in 0..blk.bn_running.mean.len() {
            blk.bn_running.mean[c] = 0.05 * (c as f64 + 1.0);
            blk.bn_running.var[c] = 1.0 + 0.2 * c as f64;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, "gradcheck", 0));
    let mut rand_tensor = |b: usize, t: usize, c: usize| -> Tensor3 {
        let data = (0..b * t * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor3 { data, b, t, c }
    };
    let x = rand_tensor(b, t, config.input_dim);
    let mut mask = Mask::full(b, t);
    mask.set(0, t - 1, false);
    mask.set(b - 1, 0, false);
    // like any real loss, the probe reads only valid frames
    let mut probe = [rand_tensor(b, t, 1), rand_tensor(b, t, 1), rand_tensor(b, t, 1)];
    for r in &mut probe {
        for bi in 0..b {
            for ti in 0..t {
                if !mask.get(bi, ti) {
                    r.frame_mut(bi, ti).fill(0.0);
                }
            }
        }
    }
    let tg = [&probe[0], &probe[1], &probe[2]];

    let mut rows = Vec::new();
    for phase in [Phase::Train, Phase::Infer] {
        let tag = format!("{phase:?}").to_lowercase();
        let (_, cache) = forward(&w, &x, &mask, phase, 0)?;
        let grads = backward(&w, &cache, &mask, tg, phase)?;

        let ni = numeric_grad(
            |v| {
                let xt = Tensor3::from_vec(v.to_vec(), x.b, x.t, x.c).unwrap();
                probe_loss(&w, &xt, &mask, tg, phase).unwrap()
            },
            &x.data,
            GRAD_H,
        );
        rows.push(GradcheckEntry {
            name: format!("{tag}/input"),
            value: max_rel_err(&grads.input.data, &ni),
            bound: TOL_GENERAL,
            flat: false,
        });

        let names: Vec<String> = w.trainable().iter().map(|(n, _)| n.clone()).collect();
        for name in names {
            let orig = w
                .trainable()
                .iter()
                .find(|(n, _)| n == &name)
                .map(|(_, v)| (*v).clone())
                .unwrap();
            let analytic = grads
                .trainable()
                .iter()
                .find(|(n, _)| n == &name)
                .map(|(_, v)| (*v).clone())
                .unwrap();
            let numeric = numeric_grad(
                |v| {
                    let mut wt = w.clone();
                    for (n, slot) in wt.trainable_mut() {
                        if n == name {
                            slot.copy_from_slice(v);
                        }
                    }
                    probe_loss(&wt, &x, &mask, tg, phase).unwrap()
                },
                &orig,
                GRAD_H,
            );
            let row = if phase == Phase::Train && name.ends_with("conv.b") {
                let worst = analytic
                    .iter()
                    .chain(&numeric)
                    .fold(0.0f64, |m, v| m.max(v.abs()));
                GradcheckEntry { name: format!("{tag}/{name}"), value: worst, bound: 1e-8, flat: true }
            } else {
                let bound = if name.contains("dense2") { TOL_LINEAR } else { TOL_GENERAL };
                GradcheckEntry {
                    name: format!("{tag}/{name}"),
                    value: max_rel_err(&analytic, &numeric),
                    bound,
                    flat: false,
                }
            };
            rows.push(row);
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

/// Tensor names and shapes in file order, derived from the config. The
/// running BN statistics are stored alongside the trainable tensors.
pub fn tensor_table(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let c = config.channels;
    let mut out = Vec::new();
    for i in 0..config.n_blocks {
        let c_in = config.block_in_channels(i);
        out.push((format!("block{i}.conv.w"), vec![c, c_in, 3]));
        out.push((format!("block{i}.conv.b"), vec![c]));
        out.push((format!("block{i}.bn.gamma"), vec![c]));
        out.push((format!("block{i}.bn.beta"), vec![c]));
        out.push((format!("block{i}.bn.running_mean"), vec![c]));
        out.push((format!("block{i}.bn.running_var"), vec![c]));
        out.push((format!("block{i}.glu.w"), vec![c, c]));
        out.push((format!("block{i}.glu.b"), vec![c]));
        out.push((format!("block{i}.glu.v"), vec![c, c]));
        out.push((format!("block{i}.glu.c"), vec![c]));
    }
    let head_in = config.head_in_channels();
    for k in 0..3 {
        out.push((format!("head{k}.dense1.w"), vec![head_in, config.head_width]));
        out.push((format!("head{k}.dense1.b"), vec![config.head_width]));
        out.push((format!("head{k}.dense2.w"), vec![config.head_width, 1]));
        out.push((format!("head{k}.dense2.b"), vec![1]));
    }
    out
}

fn all_tensors(weights: &ModelWeights) -> Vec<(String, &Vec<f64>)> {
    let mut out = Vec::new();
    for (i, bw) in weights.blocks.iter().enumerate() {
        out.push((format!("block{i}.conv.w"), &bw.conv_w));
        out.push((format!("block{i}.conv.b"), &bw.conv_b));
        out.push((format!("block{i}.bn.gamma"), &bw.bn_gamma));
        out.push((format!("block{i}.bn.beta"), &bw.bn_beta));
        out.push((format!("block{i}.bn.running_mean"), &bw.bn_running.mean));
        out.push((format!("block{i}.bn.running_var"), &bw.bn_running.var));
        out.push((format!("block{i}.glu.w"), &bw.glu_w));
        out.push((format!("block{i}.glu.b"), &bw.glu_b));
        out.push((format!("block{i}.glu.v"), &bw.glu_v));
        out.push((format!("block{i}.glu.c"), &bw.glu_c));
    }
    for (k, hw) in weights.heads.iter().enumerate() {
        out.push((format!("head{k}.dense1.w"), &hw.w1));
        out.push((format!("head{k}.dense1.b"), &hw.b1));
        out.push((format!("head{k}.dense2.w"), &hw.w2));
        out.push((format!("head{k}.dense2.b"), &hw.b2));
    }
    out
}

/// Writes the weight file: 16-byte header, config text, tensor directory
/// (name, shape, byte offset into the data section), then all values as
/// little-endian f64 in directory order.
pub fn save(weights: &ModelWeights, path: &Path) -> Result<()> {
    weights.config.validate()?;
    let mut out = Vec::new();
    crate::io::push_header(&mut out, WEIGHTS_MAGIC);
    let cfg = weights.config.to_text();
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());

    let tensors = all_tensors(weights);
    let table = tensor_table(&weights.config);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for ((name, values), (tname, shape)) in tensors.iter().zip(&table) {
        debug_assert_eq!(name, tname);
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(Error::WeightShapeMismatch {
                tensor: name.clone(),
                expected: shape.clone(),
                found: vec![values.len()],
            });
        }
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += (values.len() * 8) as u64;
    }
    out.extend_from_slice(&offset.to_le_bytes());
    for (_, values) in &tensors {
        for v in values.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &out)
}

/// Reads a weight file written by [`save`], verifying every tensor's name,
/// shape and offset against the config embedded in the header.
pub fn load(path: &Path) -> Result<ModelWeights> {
    let bytes = std::fs::read(path)?;
    let mut r = ByteReader::new(&bytes);
    r.header(WEIGHTS_MAGIC)?;
    let cfg_len = r.u32()? as usize;
    let cfg_text = std::str::from_utf8(r.take(cfg_len)?)
        .map_err(|_| Error::Parse("weight header config is not UTF-8".into()))?;
    let config = ModelConfig::from_text(cfg_text)?;

    let table = tensor_table(&config);
    let n_tensors = r.u32()? as usize;
    if n_tensors != table.len() {
        return Err(Error::Parse(format!(
            "weight file lists {n_tensors} tensors, config implies {}",
            table.len()
        )));
    }
    let mut expected_offset = 0u64;
    for (name, shape) in &table {
        let name_len = r.u32()? as usize;
        let found_name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Parse("tensor name is not UTF-8".into()))?;
        if found_name != name {
            return Err(Error::Parse(format!(
                "tensor {found_name} out of order (expected {name})"
            )));
        }
        let ndim = r.u32()? as usize;
        let mut found_shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            found_shape.push(r.u32()? as usize);
        }
        if &found_shape != shape {
            return Err(Error::WeightShapeMismatch {
                tensor: name.clone(),
                expected: shape.clone(),
                found: found_shape,
            });
        }
        let offset = r.u64()?;
        if offset != expected_offset {
            return Err(Error::Parse(format!(
                "tensor {name} at offset {offset}, expected {expected_offset}"
            )));
        }
        expected_offset += (shape.iter().product::<usize>() * 8) as u64;
    }
    let data_bytes = r.u64()?;
    if data_bytes != expected_offset {
        return Err(Error::Parse(format!(
            "data section declares {data_bytes} bytes, directory implies {expected_offset}"
        )));
    }
    if (r.remaining() as u64) < data_bytes {
        return Err(Error::TruncatedFile {
            needed: (bytes.len() - r.remaining()) as u64 + data_bytes,
            found: bytes.len() as u64,
        });
    }

    let mut values: Vec<Vec<f64>> = Vec::with_capacity(table.len());
    for (_, shape) in &table {
        let n: usize = shape.iter().product();
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(r.f64()?);
        }
        values.push(v);
    }
    if r.remaining() != 0 {
        return Err(Error::Parse(format!(
            "{} trailing bytes after weight data",
            r.remaining()
        )));
    }

    let mut it = values.into_iter();
    let mut next = || it.next().expect("values match table length");
    let mut blocks = Vec::with_capacity(config.n_blocks);
    for _ in 0..config.n_blocks {
        blocks.push(BlockWeights {
            conv_w: next(),
            conv_b: next(),
            bn_gamma: next(),
            bn_beta: next(),
            bn_running: BnRunning { mean: next(), var: next() },
            glu_w: next(),
            glu_b: next(),
            glu_v: next(),
            glu_c: next(),
        });
    }
    let heads = std::array::from_fn(|_| HeadWeights {
        w1: next(),
        b1: next(),
        w2: next(),
        b2: next(),
    });
    Ok(ModelWeights { config, blocks, heads })
}
