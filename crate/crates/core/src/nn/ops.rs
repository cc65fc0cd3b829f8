//! Layer operators: forward passes and hand-written gradients.
//!
//! Conventions shared by every op:
//! - activations are [`Tensor3`] (batch × time × channels, channels fastest);
//! - conv weights are (C_out, C_in, 3) flattened row-major, tap index 0/1/2
//!   meaning offsets −d/0/+d;
//! - dense and GLU weights are (C_in, C_out) flattened row-major and applied
//!   as `y = x·W + b` with `x` a row vector;
//! - backward passes return gradients in the same layouts as the inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Mask, Tensor3};
use crate::util::{axpy, dot};

/// Batch-norm variance floor guard; added to the variance before the square
/// root in both phases.
pub const BN_EPS: f64 = 1e-5;

/// Running-statistics momentum: `running ← 0.99·running + 0.01·batch`.
pub const BN_MOMENTUM: f64 = 0.99;

/// Whether an op is running inside the training loop (batch statistics,
/// active dropout) or at inference time (running statistics, no dropout).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Infer,
}

/// Head activation for [`dense_td`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
}

// ---------------------------------------------------------------------------
// dilated convolution
// ---------------------------------------------------------------------------

fn conv_check(x: &Tensor3, w: &[f64], b: &[f64], c_out: usize, dilation: usize) -> Result<()> {
    if dilation == 0 {
        return Err(Error::InvalidParam("conv dilation must be >= 1".into()));
    }
    if c_out == 0 || w.len() != c_out * x.c * 3 {
        return Err(Error::ShapeMismatch(format!(
            "conv weights: {} values, expected {c_out}x{}x3",
            w.len(),
            x.c
        )));
    }
    if b.len() != c_out {
        return Err(Error::ShapeMismatch(format!(
            "conv bias: {} values, expected {c_out}",
            b.len()
        )));
    }
    Ok(())
}

/// Repacks (C_out, C_in, 3) weights into three contiguous C_out×C_in tap
/// planes so the inner loop is a plain dot product.
fn pack_taps(w: &[f64], c_out: usize, c_in: usize) -> [Vec<f64>; 3] {
    let mut planes = [
        vec![0.0; c_out * c_in],
        vec![0.0; c_out * c_in],
        vec![0.0; c_out * c_in],
    ];
    for o in 0..c_out {
        for c in 0..c_in {
            for (j, plane) in planes.iter_mut().enumerate() {
                plane[o * c_in + c] = w[(o * c_in + c) * 3 + j];
            }
        }
    }
    planes
}

/// Non-causal dilated 1-D convolution with symmetric zero padding ("same"
/// output length): `y[t,o] = b[o] + Σ_j Σ_c W[o,c,j+1]·x[t+j·d,c]` with
/// `j ∈ {−1,0,+1}` and out-of-range taps reading zero.
pub fn dilated_conv1d_same(
    x: &Tensor3,
    w: &[f64],
    b: &[f64],
    c_out: usize,
    dilation: usize,
) -> Result<Tensor3> {
    conv_check(x, w, b, c_out, dilation)?;
    let planes = pack_taps(w, c_out, x.c);
    let c_in = x.c;
    let mut y = Tensor3::zeros(x.b, x.t, c_out);
    for bi in 0..x.b {
        for t in 0..x.t {
            let yi = (bi * x.t + t) * c_out;
            y.data[yi..yi + c_out].copy_from_slice(b);
            for (j, plane) in planes.iter().enumerate() {
                let ts = t as isize + (j as isize - 1) * dilation as isize;
                if ts < 0 || ts >= x.t as isize {
                    continue;
                }
                let xf = x.frame(bi, ts as usize);
                for o in 0..c_out {
                    y.data[yi + o] += dot(&plane[o * c_in..(o + 1) * c_in], xf);
                }
            }
        }
    }
    Ok(y)
}

/// Gradients of [`dilated_conv1d_same`] w.r.t. input, weights and bias.
pub fn dilated_conv1d_same_backward(
    x: &Tensor3,
    w: &[f64],
    c_out: usize,
    dilation: usize,
    dy: &Tensor3,
) -> Result<(Tensor3, Vec<f64>, Vec<f64>)> {
    let bias = vec![0.0; c_out];
    conv_check(x, w, &bias, c_out, dilation)?;
    if dy.b != x.b || dy.t != x.t || dy.c != c_out {
        return Err(Error::ShapeMismatch(format!(
            "conv backward: dy is {}x{}x{}, expected {}x{}x{c_out}",
            dy.b, dy.t, dy.c, x.b, x.t
        )));
    }
    let planes = pack_taps(w, c_out, x.c);
    let c_in = x.c;
    let mut dx = Tensor3::zeros(x.b, x.t, c_in);
    let mut dplanes = [
        vec![0.0; c_out * c_in],
        vec![0.0; c_out * c_in],
        vec![0.0; c_out * c_in],
    ];
    let mut db = vec![0.0; c_out];
    for bi in 0..x.b {
        for t in 0..x.t {
            let dyf: Vec<f64> = dy.frame(bi, t).to_vec();
            for o in 0..c_out {
                db[o] += dyf[o];
            }
            for j in 0..3usize {
                let ts = t as isize + (j as isize - 1) * dilation as isize;
                if ts < 0 || ts >= x.t as isize {
                    continue;
                }
                let xf: Vec<f64> = x.frame(bi, ts as usize).to_vec();
                let dxf = dx.frame_mut(bi, ts as usize);
                for o in 0..c_out {
                    let g = dyf[o];
                    if g != 0.0 {
                        axpy(g, &planes[j][o * c_in..(o + 1) * c_in], dxf);
                        axpy(g, &xf, &mut dplanes[j][o * c_in..(o + 1) * c_in]);
                    }
                }
            }
        }
    }
    let mut dw = vec![0.0; c_out * c_in * 3];
    for o in 0..c_out {
        for c in 0..c_in {
            for (j, dplane) in dplanes.iter().enumerate() {
                dw[(o * c_in + c) * 3 + j] = dplane[o * c_in + c];
            }
        }
    }
    Ok((dx, dw, db))
}

// ---------------------------------------------------------------------------
// masked batch normalization
// ---------------------------------------------------------------------------

/// Per-channel running estimates carried between training steps.
#[derive(Debug, Clone, PartialEq)]
pub struct BnRunning {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnRunning {
    /// Fresh state: zero mean, unit variance.
    pub fn identity(channels: usize) -> Self {
        BnRunning { mean: vec![0.0; channels], var: vec![1.0; channels] }
    }
}

/// The statistics a batch-norm forward actually normalized with; needed by
/// the backward pass and by the running-stat update. `count` is the number
/// of valid frames behind the estimate (0 in infer phase, where the values
/// are copies of the running estimates).
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

fn bn_check(x: &Tensor3, mask: &Mask, gamma: &[f64], beta: &[f64]) -> Result<()> {
    if mask.b != x.b || mask.t != x.t {
        return Err(Error::ShapeMismatch(format!(
            "batch norm: mask is {}x{}, input is {}x{}",
            mask.b, mask.t, x.b, x.t
        )));
    }
    if gamma.len() != x.c || beta.len() != x.c {
        return Err(Error::ShapeMismatch(format!(
            "batch norm: gamma/beta have {}/{} values, expected {}",
            gamma.len(),
            beta.len(),
            x.c
        )));
    }
    Ok(())
}

/// Batch normalization over (batch, time) per channel. In the train phase
/// the mean and biased variance are computed over valid positions only, but
/// every position is normalized with them; the infer phase normalizes with
/// the running estimates. Masked-out frames therefore never influence any
/// statistic, yet still produce finite outputs.
pub fn batch_norm_masked(
    x: &Tensor3,
    mask: &Mask,
    gamma: &[f64],
    beta: &[f64],
    running: &BnRunning,
    phase: Phase,
    eps: f64,
) -> Result<(Tensor3, BnStats)> {
    bn_check(x, mask, gamma, beta)?;
    if running.mean.len() != x.c || running.var.len() != x.c {
        return Err(Error::ShapeMismatch(format!(
            "batch norm: running stats have {} channels, expected {}",
            running.mean.len(),
            x.c
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidParam("batch norm eps must be positive".into()));
    }
    let stats = match phase {
        Phase::Train => {
            let n = mask.valid_count();
            if n == 0 {
                return Err(Error::NoValidFrames);
            }
            if n < 2 {
                return Err(Error::InvalidParam(
                    "batch norm needs at least 2 valid frames to estimate variance".into(),
                ));
            }
            let mut mean = vec![0.0; x.c];
            let mut var = vec![0.0; x.c];
            for bi in 0..x.b {
                for t in 0..x.t {
                    if mask.get(bi, t) {
                        for (m, &v) in mean.iter_mut().zip(x.frame(bi, t)) {
                            *m += v;
                        }
                    }
                }
            }
            for m in mean.iter_mut() {
                *m /= n as f64;
            }
            for bi in 0..x.b {
                for t in 0..x.t {
                    if mask.get(bi, t) {
                        let xf = x.frame(bi, t);
                        for c in 0..x.c {
                            let d = xf[c] - mean[c];
                            var[c] += d * d;
                        }
                    }
                }
            }
            for v in var.iter_mut() {
                *v /= n as f64;
            }
            BnStats { mean, var, count: n }
        }
        Phase::Infer => BnStats { mean: running.mean.clone(), var: running.var.clone(), count: 0 },
    };
    let inv_s: Vec<f64> = stats.var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
    let mut y = Tensor3::zeros(x.b, x.t, x.c);
    for i in 0..x.data.len() {
        let c = i % x.c;
        y.data[i] = gamma[c] * (x.data[i] - stats.mean[c]) * inv_s[c] + beta[c];
    }
    Ok((y, stats))
}

/// Folds batch statistics into the running estimates:
/// `running ← momentum·running + (1−momentum)·batch`.
pub fn bn_update_running(running: &mut BnRunning, stats: &BnStats, momentum: f64) {
    for c in 0..running.mean.len() {
        running.mean[c] = momentum * running.mean[c] + (1.0 - momentum) * stats.mean[c];
        running.var[c] = momentum * running.var[c] + (1.0 - momentum) * stats.var[c];
    }
}

/// Gradients of [`batch_norm_masked`]. In the train phase the batch mean and
/// variance are functions of the valid inputs, so valid positions receive the
/// usual two correction terms; masked positions only see the direct path.
/// The correction sums run over all positions because every output was
/// normalized with the shared statistics.
pub fn batch_norm_masked_backward(
    x: &Tensor3,
    mask: &Mask,
    gamma: &[f64],
    stats: &BnStats,
    phase: Phase,
    eps: f64,
    dy: &Tensor3,
) -> Result<(Tensor3, Vec<f64>, Vec<f64>)> {
    bn_check(x, mask, gamma, gamma)?;
    if dy.b != x.b || dy.t != x.t || dy.c != x.c {
        return Err(Error::ShapeMismatch("batch norm backward: dy shape".into()));
    }
    let inv_s: Vec<f64> = stats.var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
    let mut dgamma = vec![0.0; x.c];
    let mut dbeta = vec![0.0; x.c];
    // s1[c] = Σ dy, s2[c] = Σ dy·x̂ over all positions
    for i in 0..x.data.len() {
        let c = i % x.c;
        let xhat = (x.data[i] - stats.mean[c]) * inv_s[c];
        dgamma[c] += dy.data[i] * xhat;
        dbeta[c] += dy.data[i];
    }
    let mut dx = Tensor3::zeros(x.b, x.t, x.c);
    match phase {
        Phase::Train => {
            let n = stats.count as f64;
            if stats.count < 2 {
                return Err(Error::InvalidParam(
                    "batch norm backward requires train-phase statistics".into(),
                ));
            }
            for bi in 0..x.b {
                for t in 0..x.t {
                    let valid = mask.get(bi, t);
                    let base = (bi * x.t + t) * x.c;
                    for c in 0..x.c {
                        let i = base + c;
                        let g = gamma[c] * inv_s[c];
                        dx.data[i] = if valid {
                            let xhat = (x.data[i] - stats.mean[c]) * inv_s[c];
                            g * (dy.data[i] - dbeta[c] / n - xhat * dgamma[c] / n)
                        } else {
                            g * dy.data[i]
                        };
                    }
                }
            }
        }
        Phase::Infer => {
            // running statistics are constants w.r.t. the batch
            for i in 0..x.data.len() {
                let c = i % x.c;
                dx.data[i] = gamma[c] * inv_s[c] * dy.data[i];
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}

// ---------------------------------------------------------------------------
// gated linear unit
// ---------------------------------------------------------------------------

/// Forward intermediates the GLU backward pass reuses.
#[derive(Debug, Clone)]
pub struct GluCache {
    /// Linear path `x·W + b`.
    pub lin: Tensor3,
    /// Gate values `σ(x·V + c)`.
    pub gate: Tensor3,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn transpose_w(w: &[f64], c_in: usize, c_out: usize) -> Vec<f64> {
    let mut wt = vec![0.0; w.len()];
    for ci in 0..c_in {
        for co in 0..c_out {
            wt[co * c_in + ci] = w[ci * c_out + co];
        }
    }
    wt
}

fn dense_shapes(x: &Tensor3, w: &[f64], b: &[f64], what: &str) -> Result<usize> {
    if x.c == 0 || w.len() % x.c != 0 || w.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {} weight values do not factor as {}xC_out",
            w.len(),
            x.c
        )));
    }
    let c_out = w.len() / x.c;
    if b.len() != c_out {
        return Err(Error::ShapeMismatch(format!(
            "{what}: bias has {} values, expected {c_out}",
            b.len()
        )));
    }
    Ok(c_out)
}

/// Gated linear unit applied per frame: `y = (x·W + b) ⊙ σ(x·V + c)`.
/// `w` and `v` are (C_in, C_out); the network uses them square.
pub fn glu(
    x: &Tensor3,
    w: &[f64],
    b: &[f64],
    v: &[f64],
    c: &[f64],
) -> Result<(Tensor3, GluCache)> {
    let c_out = dense_shapes(x, w, b, "glu linear path")?;
    let c_out_gate = dense_shapes(x, v, c, "glu gate path")?;
    if c_out != c_out_gate {
        return Err(Error::ShapeMismatch(format!(
            "glu: linear path maps to {c_out} channels but gate maps to {c_out_gate}"
        )));
    }
    let wt = transpose_w(w, x.c, c_out);
    let vt = transpose_w(v, x.c, c_out);
    let mut lin = Tensor3::zeros(x.b, x.t, c_out);
    let mut gate = Tensor3::zeros(x.b, x.t, c_out);
    let mut y = Tensor3::zeros(x.b, x.t, c_out);
    for bi in 0..x.b {
        for t in 0..x.t {
            let xf = x.frame(bi, t);
            let base = (bi * x.t + t) * c_out;
            for o in 0..c_out {
                let l = b[o] + dot(&wt[o * x.c..(o + 1) * x.c], xf);
                let g = sigmoid(c[o] + dot(&vt[o * x.c..(o + 1) * x.c], xf));
                lin.data[base + o] = l;
                gate.data[base + o] = g;
                y.data[base + o] = l * g;
            }
        }
    }
    Ok((y, GluCache { lin, gate }))
}

/// Gradients of [`glu`] w.r.t. input and all four parameter tensors,
/// returned as (dx, dw, db, dv, dc).
pub fn glu_backward(
    x: &Tensor3,
    w: &[f64],
    v: &[f64],
    cache: &GluCache,
    dy: &Tensor3,
) -> Result<(Tensor3, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let c_out = cache.lin.c;
    if w.len() != x.c * c_out || v.len() != x.c * c_out {
        return Err(Error::ShapeMismatch("glu backward: weight shapes".into()));
    }
    if dy.b != x.b || dy.t != x.t || dy.c != c_out {
        return Err(Error::ShapeMismatch("glu backward: dy shape".into()));
    }
    let mut dx = Tensor3::zeros(x.b, x.t, x.c);
    let mut dw = vec![0.0; w.len()];
    let mut dv = vec![0.0; v.len()];
    let mut db = vec![0.0; c_out];
    let mut dc = vec![0.0; c_out];
    let mut dlin = vec![0.0; c_out];
    let mut dgate_pre = vec![0.0; c_out];
    for bi in 0..x.b {
        for t in 0..x.t {
            let base = (bi * x.t + t) * c_out;
            for o in 0..c_out {
                let g = cache.gate.data[base + o];
                let l = cache.lin.data[base + o];
                let d = dy.data[base + o];
                dlin[o] = d * g;
                dgate_pre[o] = d * l * g * (1.0 - g);
                db[o] += dlin[o];
                dc[o] += dgate_pre[o];
            }
            let xf = x.frame(bi, t);
            for ci in 0..x.c {
                let xv = xf[ci];
                if xv != 0.0 {
                    axpy(xv, &dlin, &mut dw[ci * c_out..(ci + 1) * c_out]);
                    axpy(xv, &dgate_pre, &mut dv[ci * c_out..(ci + 1) * c_out]);
                }
            }
            let dxf = dx.frame_mut(bi, t);
            for ci in 0..x.c {
                dxf[ci] = dot(&w[ci * c_out..(ci + 1) * c_out], &dlin)
                    + dot(&v[ci * c_out..(ci + 1) * c_out], &dgate_pre);
            }
        }
    }
    Ok((dx, dw, db, dv, dc))
}

// ---------------------------------------------------------------------------
// spatial (channel) dropout
// ---------------------------------------------------------------------------

/// Spatial dropout: each (batch, channel) pair is dropped across all time
/// steps with probability `p`; survivors are scaled by 1/(1−p). The keep
/// decisions are drawn in (batch, channel) order from a ChaCha8 stream, so
/// a given seed always drops the same channels. Infer phase is the identity.
/// Returns the output and the keep flags (batch-major, length B·C).
pub fn channel_dropout(
    x: &Tensor3,
    p: f64,
    phase: Phase,
    seed: u64,
) -> Result<(Tensor3, Vec<bool>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidParam(format!("dropout probability {p} outside [0, 1)")));
    }
    if phase == Phase::Infer {
        return Ok((x.clone(), vec![true; x.b * x.c]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep: Vec<bool> = (0..x.b * x.c).map(|_| rng.gen::<f64>() >= p).collect();
    let scale = 1.0 / (1.0 - p);
    let mut y = Tensor3::zeros(x.b, x.t, x.c);
    for bi in 0..x.b {
        for t in 0..x.t {
            let base = (bi * x.t + t) * x.c;
            for c in 0..x.c {
                if keep[bi * x.c + c] {
                    y.data[base + c] = x.data[base + c] * scale;
                }
            }
        }
    }
    Ok((y, keep))
}

/// Gradient of [`channel_dropout`] given the keep flags from the forward.
pub fn channel_dropout_backward(
    dy: &Tensor3,
    keep: &[bool],
    p: f64,
    phase: Phase,
) -> Result<Tensor3> {
    if phase == Phase::Infer {
        return Ok(dy.clone());
    }
    if keep.len() != dy.b * dy.c {
        return Err(Error::ShapeMismatch("dropout backward: keep flags".into()));
    }
    let scale = 1.0 / (1.0 - p);
    let mut dx = Tensor3::zeros(dy.b, dy.t, dy.c);
    for bi in 0..dy.b {
        for t in 0..dy.t {
            let base = (bi * dy.t + t) * dy.c;
            for c in 0..dy.c {
                if keep[bi * dy.c + c] {
                    dx.data[base + c] = dy.data[base + c] * scale;
                }
            }
        }
    }
    Ok(dx)
}

// ---------------------------------------------------------------------------
// time-distributed dense
// ---------------------------------------------------------------------------

/// Applies the same affine map (plus optional ReLU) to every frame:
/// `y[t] = act(x[t]·W + b)` with `W` of shape (C_in, C_out).
pub fn dense_td(x: &Tensor3, w: &[f64], b: &[f64], act: Activation) -> Result<Tensor3> {
    let c_out = dense_shapes(x, w, b, "dense_td")?;
    let wt = transpose_w(w, x.c, c_out);
    let mut y = Tensor3::zeros(x.b, x.t, c_out);
    for bi in 0..x.b {
        for t in 0..x.t {
            let xf = x.frame(bi, t);
            let base = (bi * x.t + t) * c_out;
            for o in 0..c_out {
                let pre = b[o] + dot(&wt[o * x.c..(o + 1) * x.c], xf);
                y.data[base + o] = match act {
                    Activation::Linear => pre,
                    Activation::Relu => pre.max(0.0),
                };
            }
        }
    }
    Ok(y)
}

/// Gradients of [`dense_td`], returned as (dx, dw, db). `y` is the forward
/// output: for ReLU the active set is recovered from `y > 0` (the gradient
/// at exactly zero pre-activation is taken as zero).
pub fn dense_td_backward(
    x: &Tensor3,
    w: &[f64],
    act: Activation,
    y: &Tensor3,
    dy: &Tensor3,
) -> Result<(Tensor3, Vec<f64>, Vec<f64>)> {
    let c_out = y.c;
    if w.len() != x.c * c_out {
        return Err(Error::ShapeMismatch("dense backward: weight shape".into()));
    }
    if dy.b != x.b || dy.t != x.t || dy.c != c_out || y.b != x.b || y.t != x.t {
        return Err(Error::ShapeMismatch("dense backward: dy/y shape".into()));
    }
    let mut dx = Tensor3::zeros(x.b, x.t, x.c);
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; c_out];
    let mut dpre = vec![0.0; c_out];
    for bi in 0..x.b {
        for t in 0..x.t {
            let base = (bi * x.t + t) * c_out;
            for o in 0..c_out {
                let pass = match act {
                    Activation::Linear => true,
                    Activation::Relu => y.data[base + o] > 0.0,
                };
                dpre[o] = if pass { dy.data[base + o] } else { 0.0 };
                db[o] += dpre[o];
            }
            let xf = x.frame(bi, t);
            for ci in 0..x.c {
                if xf[ci] != 0.0 {
                    axpy(xf[ci], &dpre, &mut dw[ci * c_out..(ci + 1) * c_out]);
                }
            }
            let dxf = dx.frame_mut(bi, t);
            for ci in 0..x.c {
                dxf[ci] = dot(&w[ci * c_out..(ci + 1) * c_out], &dpre);
            }
        }
    }
    Ok((dx, dw, db))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(seed: u64, b: usize, t: usize, c: usize) -> Tensor3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..b * t * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor3 { data, b, t, c }
    }

    fn random_vec(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Identity kernel: W[o,c,1] = δ(o,c), all other taps zero.
    fn identity_kernel(c: usize) -> Vec<f64> {
        let mut w = vec![0.0; c * c * 3];
        for o in 0..c {
            w[(o * c + o) * 3 + 1] = 1.0;
        }
        w
    }

    #[test]
    fn conv_center_tap_identity_any_dilation() {
        let x = random_tensor(11, 2, 9, 5);
        for &d in &[1usize, 2, 4, 7] {
            let y = dilated_conv1d_same(&x, &identity_kernel(5), &vec![0.0; 5], 5, d).unwrap();
            assert_eq!(y, x, "dilation {d}");
        }
    }

    #[test]
    fn conv_impulse_lands_at_plus_minus_dilation() {
        // single input channel, impulse at t=10; all three taps weigh 1
        let mut x = Tensor3::zeros(1, 21, 1);
        x.data[10] = 1.0;
        let w = vec![1.0, 1.0, 1.0];
        let y = dilated_conv1d_same(&x, &w, &[0.0], 1, 4).unwrap();
        for t in 0..21 {
            let want = if t == 6 || t == 10 || t == 14 { 1.0 } else { 0.0 };
            assert_eq!(y.at(0, t, 0), want, "t={t}");
        }
    }

    #[test]
    fn conv_zero_pads_symmetrically() {
        // all-ones input, summing kernel, d=2: edges lose one or two taps
        let x = Tensor3::from_vec(vec![1.0; 5], 1, 5, 1).unwrap();
        let y = dilated_conv1d_same(&x, &[1.0, 1.0, 1.0], &[0.0], 1, 2).unwrap();
        assert_eq!(y.data, vec![2.0, 2.0, 3.0, 2.0, 2.0]);
    }

    #[test]
    fn conv_matches_naive_direct_convolution() {
        let x = random_tensor(12, 2, 12, 4);
        let w = random_vec(13, 3 * 4 * 3);
        let b = random_vec(14, 3);
        let y = dilated_conv1d_same(&x, &w, &b, 3, 1).unwrap();
        // independent arrangement: loop over output positions directly
        for bi in 0..2 {
            for t in 0..12i64 {
                for o in 0..3usize {
                    let mut want = b[o];
                    for j in -1i64..=1 {
                        let ts = t + j;
                        if (0..12).contains(&ts) {
                            for c in 0..4usize {
                                want += w[(o * 4 + c) * 3 + (j + 1) as usize]
                                    * x.at(bi, ts as usize, c);
                            }
                        }
                    }
                    let got = y.at(bi, t as usize, o);
                    assert!((got - want).abs() < 1e-12, "b={bi} t={t} o={o}");
                }
            }
        }
    }

    #[test]
    fn conv_output_keeps_input_length() {
        let x = random_tensor(15, 3, 31, 6);
        let w = random_vec(16, 8 * 6 * 3);
        let y = dilated_conv1d_same(&x, &w, &vec![0.0; 8], 8, 4).unwrap();
        assert_eq!((y.b, y.t, y.c), (3, 31, 8));
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let x = random_tensor(17, 1, 4, 2);
        assert!(matches!(
            dilated_conv1d_same(&x, &[1.0; 11], &[0.0; 2], 2, 1),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            dilated_conv1d_same(&x, &[1.0; 12], &[0.0; 3], 2, 1),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            dilated_conv1d_same(&x, &[1.0; 12], &[0.0; 2], 2, 0),
            Err(Error::InvalidParam(_))
        ));
    }

    #[test]
    fn bn_constant_input_maps_to_beta() {
        let x = Tensor3::from_vec(vec![7.5; 2 * 6 * 3], 2, 6, 3).unwrap();
        let mut mask = Mask::full(2, 6);
        mask.set(1, 5, false);
        let gamma = vec![2.0, 3.0, 4.0];
        let beta = vec![-1.0, 0.5, 9.0];
        let running = BnRunning::identity(3);
        let (y, stats) =
            batch_norm_masked(&x, &mask, &gamma, &beta, &running, Phase::Train, BN_EPS).unwrap();
        assert_eq!(stats.count, 11);
        for bi in 0..2 {
            for t in 0..6 {
                for c in 0..3 {
                    assert!((y.at(bi, t, c) - beta[c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn bn_train_output_has_unit_moments_over_valid_frames() {
        let x = random_tensor(18, 3, 20, 4);
        let mut mask = Mask::full(3, 20);
        for t in 14..20 {
            mask.set(2, t, false);
        }
        let running = BnRunning::identity(4);
        let (y, stats) = batch_norm_masked(
            &x,
            &mask,
            &vec![1.0; 4],
            &vec![0.0; 4],
            &running,
            Phase::Train,
            BN_EPS,
        )
        .unwrap();
        let n = stats.count as f64;
        for c in 0..4 {
            let mut mean = 0.0;
            let mut sq = 0.0;
            for bi in 0..3 {
                for t in 0..20 {
                    if mask.get(bi, t) {
                        mean += y.at(bi, t, c);
                        sq += y.at(bi, t, c) * y.at(bi, t, c);
                    }
                }
            }
            mean /= n;
            let var = sq / n - mean * mean;
            // exact target: var/(var+eps), not exactly 1 because of eps
            let want = stats.var[c] / (stats.var[c] + BN_EPS);
            assert!(mean.abs() < 1e-10, "channel {c} mean {mean}");
            assert!((var - want).abs() < 1e-10, "channel {c} var {var} want {want}");
        }
    }

    #[test]
    fn bn_masked_frames_cannot_influence_valid_outputs() {
        let x = random_tensor(19, 2, 10, 3);
        let mut mask = Mask::full(2, 10);
        mask.set(0, 0, false);
        mask.set(1, 9, false);
        mask.set(1, 4, false);
        let gamma = random_vec(20, 3);
        let beta = random_vec(21, 3);
        let running = BnRunning::identity(3);
        let (y1, _) =
            batch_norm_masked(&x, &mask, &gamma, &beta, &running, Phase::Train, BN_EPS).unwrap();
        let mut poked = x.clone();
        poked.frame_mut(0, 0).copy_from_slice(&[1e6, -3e7, 42.0]);
        poked.frame_mut(1, 9).copy_from_slice(&[-9e5, 7e6, -1.0]);
        poked.frame_mut(1, 4).copy_from_slice(&[3e8, 2e2, 5e5]);
        let (y2, _) =
            batch_norm_masked(&poked, &mask, &gamma, &beta, &running, Phase::Train, BN_EPS)
                .unwrap();
        for bi in 0..2 {
            for t in 0..10 {
                if mask.get(bi, t) {
                    for c in 0..3 {
                        assert_eq!(y1.at(bi, t, c), y2.at(bi, t, c));
                    }
                }
            }
        }
    }

    #[test]
    fn bn_infer_uses_running_stats_and_ignores_batch() {
        let x = random_tensor(22, 1, 5, 2);
        let running = BnRunning { mean: vec![0.3, -0.4], var: vec![2.0, 0.5] };
        let gamma = vec![1.5, 0.7];
        let beta = vec![0.1, -0.2];
        let mask = Mask::full(1, 5);
        let (y, stats) =
            batch_norm_masked(&x, &mask, &gamma, &beta, &running, Phase::Infer, BN_EPS).unwrap();
        assert_eq!(stats.count, 0);
        for t in 0..5 {
            for c in 0..2 {
                let want = gamma[c] * (x.at(0, t, c) - running.mean[c])
                    / (running.var[c] + BN_EPS).sqrt()
                    + beta[c];
                assert!((y.at(0, t, c) - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn bn_running_update_uses_momentum_099() {
        let mut running = BnRunning { mean: vec![1.0], var: vec![4.0] };
        let stats = BnStats { mean: vec![3.0], var: vec![2.0], count: 10 };
        bn_update_running(&mut running, &stats, BN_MOMENTUM);
        assert!((running.mean[0] - (0.99 * 1.0 + 0.01 * 3.0)).abs() < 1e-15);
        assert!((running.var[0] - (0.99 * 4.0 + 0.01 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn bn_rejects_empty_and_singleton_masks_in_train() {
        let x = random_tensor(23, 1, 4, 2);
        let running = BnRunning::identity(2);
        let empty = Mask::empty(1, 4);
        assert!(matches!(
            batch_norm_masked(&x, &empty, &[1.0; 2], &[0.0; 2], &running, Phase::Train, BN_EPS),
            Err(Error::NoValidFrames)
        ));
        let mut one = Mask::empty(1, 4);
        one.set(0, 2, true);
        assert!(matches!(
            batch_norm_masked(&x, &one, &[1.0; 2], &[0.0; 2], &running, Phase::Train, BN_EPS),
            Err(Error::InvalidParam(_))
        ));
        // infer phase has no such requirement
        assert!(batch_norm_masked(
            &x,
            &empty,
            &[1.0; 2],
            &[0.0; 2],
            &running,
            Phase::Infer,
            BN_EPS
        )
        .is_ok());
    }

    #[test]
    fn glu_zero_gate_params_halve_the_linear_path() {
        let x = random_tensor(24, 2, 6, 4);
        let w = random_vec(25, 16);
        let b = random_vec(26, 4);
        let (y, _) = glu(&x, &w, &b, &vec![0.0; 16], &vec![0.0; 4]).unwrap();
        let lin = dense_td(&x, &w, &b, Activation::Linear).unwrap();
        for i in 0..y.data.len() {
            assert!((y.data[i] - 0.5 * lin.data[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn glu_saturated_gate_is_open_or_closed() {
        let x = random_tensor(27, 1, 5, 3);
        let w = random_vec(28, 9);
        let b = random_vec(29, 3);
        let lin = dense_td(&x, &w, &b, Activation::Linear).unwrap();
        // gate bias +40: sigmoid ≈ 1, the linear path passes through
        let (open, _) = glu(&x, &w, &b, &vec![0.0; 9], &vec![40.0; 3]).unwrap();
        for i in 0..open.data.len() {
            assert!((open.data[i] - lin.data[i]).abs() < 1e-12);
        }
        // gate bias −40: sigmoid ≈ 0, everything is blocked
        let (closed, _) = glu(&x, &w, &b, &vec![0.0; 9], &vec![-40.0; 3]).unwrap();
        for &v in &closed.data {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn glu_matches_dense_times_sigmoid_oracle() {
        let x = random_tensor(30, 2, 7, 5);
        let w = random_vec(31, 25);
        let b = random_vec(32, 5);
        let v = random_vec(33, 25);
        let c = random_vec(34, 5);
        let (y, cache) = glu(&x, &w, &b, &v, &c).unwrap();
        let lin = dense_td(&x, &w, &b, Activation::Linear).unwrap();
        let pre = dense_td(&x, &v, &c, Activation::Linear).unwrap();
        for i in 0..y.data.len() {
            let want = lin.data[i] * sigmoid(pre.data[i]);
            assert!((y.data[i] - want).abs() < 1e-12);
            assert!((cache.lin.data[i] - lin.data[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn dense_matches_nalgebra_oracle() {
        let x = random_tensor(35, 2, 6, 7);
        let w = random_vec(36, 7 * 4);
        let b = random_vec(37, 4);
        let y = dense_td(&x, &w, &b, Activation::Linear).unwrap();
        let wm = nalgebra::DMatrix::from_row_slice(7, 4, &w);
        for bi in 0..2 {
            for t in 0..6 {
                let xm = nalgebra::DMatrix::from_row_slice(1, 7, x.frame(bi, t));
                let prod = &xm * &wm;
                for o in 0..4 {
                    let want = prod[(0, o)] + b[o];
                    assert!((y.at(bi, t, o) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn dense_relu_clamps_negatives() {
        let x = Tensor3::from_vec(vec![1.0, -2.0], 1, 2, 1).unwrap();
        let y = dense_td(&x, &[3.0], &[0.5], Activation::Relu).unwrap();
        assert_eq!(y.data, vec![3.5, 0.0]);
    }

    #[test]
    fn dropout_identity_when_p_zero_or_inferring() {
        let x = random_tensor(38, 2, 5, 6);
        let (y, keep) = channel_dropout(&x, 0.0, Phase::Train, 99).unwrap();
        assert_eq!(y, x);
        assert!(keep.iter().all(|&k| k));
        let (y, _) = channel_dropout(&x, 0.9, Phase::Infer, 99).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn dropout_zeroes_whole_channels_and_rescales_the_rest() {
        let x = random_tensor(39, 2, 8, 32);
        let p = 0.4;
        let (y, keep) = channel_dropout(&x, p, Phase::Train, 7).unwrap();
        assert!(!keep.iter().all(|&k| k), "seed 7 should drop something at p=0.4");
        for bi in 0..2 {
            for c in 0..32 {
                for t in 0..8 {
                    let want = if keep[bi * 32 + c] { x.at(bi, t, c) / (1.0 - p) } else { 0.0 };
                    assert_eq!(y.at(bi, t, c), want);
                }
            }
        }
        // same seed, same pattern
        let (y2, keep2) = channel_dropout(&x, p, Phase::Train, 7).unwrap();
        assert_eq!(keep, keep2);
        assert_eq!(y, y2);
    }

    #[test]
    fn dropout_rate_concentrates_around_p() {
        let x = Tensor3::zeros(1, 1, 10_000);
        let (_, keep) = channel_dropout(&x, 0.5, Phase::Train, 123).unwrap();
        let dropped = keep.iter().filter(|&&k| !k).count() as f64 / 10_000.0;
        assert!((dropped - 0.5).abs() < 0.02, "dropped fraction {dropped}");
    }

    #[test]
    fn dropout_rejects_p_of_one() {
        let x = Tensor3::zeros(1, 1, 4);
        assert!(matches!(
            channel_dropout(&x, 1.0, Phase::Train, 0),
            Err(Error::InvalidParam(_))
        ));
        assert!(matches!(
            channel_dropout(&x, -0.1, Phase::Train, 0),
            Err(Error::InvalidParam(_))
        ));
    }

    #[test]
    fn dropout_backward_mirrors_forward_scaling() {
        let x = random_tensor(40, 2, 4, 8);
        let p = 0.25;
        let (_, keep) = channel_dropout(&x, p, Phase::Train, 11).unwrap();
        let dy = random_tensor(41, 2, 4, 8);
        let dx = channel_dropout_backward(&dy, &keep, p, Phase::Train).unwrap();
        for bi in 0..2 {
            for t in 0..4 {
                for c in 0..8 {
                    let want =
                        if keep[bi * 8 + c] { dy.at(bi, t, c) * (1.0 / (1.0 - p)) } else { 0.0 };
                    assert_eq!(dx.at(bi, t, c), want);
                }
            }
        }
    }
}
