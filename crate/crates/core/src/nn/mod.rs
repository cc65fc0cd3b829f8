//! Minimal tensor and layer engine for the tracking network.
//!
//! Exactly the operators the network needs, each with a forward pass and a
//! hand-written backward pass verified against central finite differences
//! (see [`gradcheck`]). Everything is double precision and deterministic:
//! loops run in one canonical order (batch, then time, then channel), so
//! repeated runs are bitwise identical.
//!
//! Ops are pure functions. Backward passes take whatever forward inputs
//! they need explicitly instead of hiding caches in layer objects; the
//! model keeps activations alive between the two passes.

pub mod gradcheck;
pub mod ops;

use crate::error::{Error, Result};

/// Batch × time × channels array, row-major with channels fastest, so one
/// (batch, time) frame is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub data: Vec<f64>,
    pub b: usize,
    pub t: usize,
    pub c: usize,
}

impl Tensor3 {
    pub fn zeros(b: usize, t: usize, c: usize) -> Self {
        Tensor3 { data: vec![0.0; b * t * c], b, t, c }
    }

    pub fn from_vec(data: Vec<f64>, b: usize, t: usize, c: usize) -> Result<Self> {
        if data.len() != b * t * c {
            return Err(Error::ShapeMismatch(format!(
                "{} values cannot fill a {b}x{t}x{c} tensor",
                data.len()
            )));
        }
        Ok(Tensor3 { data, b, t, c })
    }

    #[inline]
    pub fn idx(&self, b: usize, t: usize, c: usize) -> usize {
        (b * self.t + t) * self.c + c
    }

    #[inline]
    pub fn at(&self, b: usize, t: usize, c: usize) -> f64 {
        self.data[self.idx(b, t, c)]
    }

    /// Contiguous channel slice of one (batch, time) position.
    #[inline]
    pub fn frame(&self, b: usize, t: usize) -> &[f64] {
        let i = (b * self.t + t) * self.c;
        &self.data[i..i + self.c]
    }

    #[inline]
    pub fn frame_mut(&mut self, b: usize, t: usize) -> &mut [f64] {
        let i = (b * self.t + t) * self.c;
        &mut self.data[i..i + self.c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Batch × time validity flags (true = frame participates in statistics
/// and loss). The mask is a general boolean grid: besides the zero-padding
/// suffix, leading and trailing silence frames are masked out too, so ops
/// must not assume valid frames are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub data: Vec<bool>,
    pub b: usize,
    pub t: usize,
}

impl Mask {
    pub fn full(b: usize, t: usize) -> Self {
        Mask { data: vec![true; b * t], b, t }
    }

    pub fn empty(b: usize, t: usize) -> Self {
        Mask { data: vec![false; b * t], b, t }
    }

    #[inline]
    pub fn get(&self, b: usize, t: usize) -> bool {
        self.data[b * self.t + t]
    }

    #[inline]
    pub fn set(&mut self, b: usize, t: usize, v: bool) {
        self.data[b * self.t + t] = v;
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }

    /// Last valid time index across the whole batch, if any frame is valid.
    pub fn last_valid_t(&self) -> Option<usize> {
        (0..self.t).rev().find(|&t| (0..self.b).any(|b| self.get(b, t)))
    }
}

fn check_same_bt(a: &Tensor3, b: &Tensor3, what: &str) -> Result<()> {
    if a.b != b.b || a.t != b.t {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {}x{} vs {}x{} (batch x time)",
            a.b, a.t, b.b, b.t
        )));
    }
    Ok(())
}

/// Concatenates tensors along the channel axis, order preserved.
pub fn concat_channels(xs: &[&Tensor3]) -> Result<Tensor3> {
    let first = xs.first().ok_or_else(|| Error::ShapeMismatch("concat of no tensors".into()))?;
    for x in xs {
        check_same_bt(first, x, "concat_channels")?;
    }
    let c_total: usize = xs.iter().map(|x| x.c).sum();
    let mut y = Tensor3::zeros(first.b, first.t, c_total);
    for b in 0..first.b {
        for t in 0..first.t {
            let out = y.frame_mut(b, t);
            let mut at = 0;
            for x in xs {
                out[at..at + x.c].copy_from_slice(x.frame(b, t));
                at += x.c;
            }
        }
    }
    Ok(y)
}

/// Splits the gradient of a concatenation back into per-input gradients.
pub fn concat_channels_backward(dy: &Tensor3, channel_sizes: &[usize]) -> Result<Vec<Tensor3>> {
    let c_total: usize = channel_sizes.iter().sum();
    if c_total != dy.c {
        return Err(Error::ShapeMismatch(format!(
            "concat backward: gradient has {} channels, inputs sum to {c_total}",
            dy.c
        )));
    }
    let mut grads: Vec<Tensor3> =
        channel_sizes.iter().map(|&c| Tensor3::zeros(dy.b, dy.t, c)).collect();
    for b in 0..dy.b {
        for t in 0..dy.t {
            let src = dy.frame(b, t);
            let mut at = 0;
            for g in grads.iter_mut() {
                let c = g.c;
                g.frame_mut(b, t).copy_from_slice(&src[at..at + c]);
                at += c;
            }
        }
    }
    Ok(grads)
}

/// Mean absolute error over valid frames; `pred` and `target` are B×T
/// planes (single-channel tensors). Returns the loss and the valid count.
pub fn masked_mae(pred: &Tensor3, target: &Tensor3, mask: &Mask) -> Result<(f64, usize)> {
    check_plane(pred, mask, "masked_mae pred")?;
    check_plane(target, mask, "masked_mae target")?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for b in 0..pred.b {
        for t in 0..pred.t {
            if mask.get(b, t) {
                sum += (pred.at(b, t, 0) - target.at(b, t, 0)).abs();
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::NoValidFrames);
    }
    Ok((sum / n as f64, n))
}

/// Gradient of [`masked_mae`] w.r.t. `pred`: sign(pred−target)/N on valid
/// frames, zero elsewhere (sign(0) = 0, the usual subgradient choice).
pub fn masked_mae_backward(pred: &Tensor3, target: &Tensor3, mask: &Mask) -> Result<Tensor3> {
    check_plane(pred, mask, "masked_mae pred")?;
    check_plane(target, mask, "masked_mae target")?;
    let n = mask.valid_count();
    if n == 0 {
        return Err(Error::NoValidFrames);
    }
    let scale = 1.0 / n as f64;
    let mut dx = Tensor3::zeros(pred.b, pred.t, 1);
    for b in 0..pred.b {
        for t in 0..pred.t {
            if mask.get(b, t) {
                let d = pred.at(b, t, 0) - target.at(b, t, 0);
                let i = dx.idx(b, t, 0);
                dx.data[i] = if d > 0.0 {
                    scale
                } else if d < 0.0 {
                    -scale
                } else {
                    0.0
                };
            }
        }
    }
    Ok(dx)
}

fn check_plane(x: &Tensor3, mask: &Mask, what: &str) -> Result<()> {
    if x.c != 1 || x.b != mask.b || x.t != mask.t {
        return Err(Error::ShapeMismatch(format!(
            "{what}: expected {}x{}x1 plane, found {}x{}x{}",
            mask.b, mask.t, x.b, x.t, x.c
        )));
    }
    Ok(())
}

/// Weighted sum of three per-formant masked MAEs (Eq. 1 of the loss).
pub fn combined_loss(
    preds: [&Tensor3; 3],
    targets: [&Tensor3; 3],
    mask: &Mask,
    weights: [f64; 3],
) -> Result<f64> {
    if weights.iter().any(|&w| w < 0.0) {
        return Err(Error::InvalidParam("loss weights must be non-negative".into()));
    }
    let mut total = 0.0;
    for k in 0..3 {
        total += weights[k] * masked_mae(preds[k], targets[k], mask)?.0;
    }
    Ok(total)
}

/// Gradients of [`combined_loss`] w.r.t. the three predictions.
pub fn combined_loss_backward(
    preds: [&Tensor3; 3],
    targets: [&Tensor3; 3],
    mask: &Mask,
    weights: [f64; 3],
) -> Result<[Tensor3; 3]> {
    let mut out = Vec::with_capacity(3);
    for k in 0..3 {
        let mut g = masked_mae_backward(preds[k], targets[k], mask)?;
        for v in g.data.iter_mut() {
            *v *= weights[k];
        }
        out.push(g);
    }
    Ok(out.try_into().expect("three gradients"))
}

/// Default loss weights α = β = γ = 1/3.
pub const LOSS_WEIGHTS: [f64; 3] = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
