//! Acoustic front-end: pre-emphasis, framing and windowing.
//!
//! The analysis chain mirrors a conventional LPC front-end: remove the DC
//! component, apply the pre-emphasis filter `H(z) = 1 - 0.97 z^-1`, slice
//! the signal into overlapping 30 ms frames every 10 ms and taper each
//! frame with a Hamming window. Feature extraction on the windowed frames
//! lives in [`features`], the LPC machinery in [`lpc`].

pub mod features;
pub mod lpc;

use crate::error::{Error, Result};

pub use features::{FeatureMatrix, NormStats, FEATURE_DIM};

/// Mono audio, nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        AudioClip { samples, sample_rate }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Analysis framing parameters. Defaults to 30 ms Hamming windows with a
/// 10 ms shift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSpec {
    pub window_ms: f64,
    pub hop_ms: f64,
}

impl Default for FrameSpec {
    fn default() -> Self {
        FrameSpec { window_ms: 30.0, hop_ms: 10.0 }
    }
}

impl FrameSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.hop_ms > 0.0 && self.window_ms >= self.hop_ms) {
            return Err(Error::InvalidParam(format!(
                "frame spec requires window_ms >= hop_ms > 0, got window {} hop {}",
                self.window_ms, self.hop_ms
            )));
        }
        Ok(())
    }

    /// Window length in samples at the given rate.
    pub fn window_len(&self, sample_rate: u32) -> usize {
        (self.window_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    /// Hop length in samples at the given rate.
    pub fn hop_len(&self, sample_rate: u32) -> usize {
        (self.hop_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    /// Number of full analysis frames in a clip of `samples` samples.
    pub fn frame_count(&self, samples: usize, sample_rate: u32) -> usize {
        let win = self.window_len(sample_rate);
        let hop = self.hop_len(sample_rate);
        if samples < win {
            0
        } else {
            (samples - win) / hop + 1
        }
    }
}

/// Default pre-emphasis coefficient.
pub const PREEMPHASIS_COEF: f64 = 0.97;

/// First-order pre-emphasis `y[n] = x[n] - coef * x[n-1]` with `y[0] = x[0]`.
///
/// When `remove_dc` is set the clip mean is subtracted first; that is the
/// normal configuration, the flag exists so linearity of the difference
/// equation itself can be tested in isolation.
pub fn preemphasize(samples: &[f64], coef: f64, remove_dc: bool) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptySignal);
    }
    let mean = if remove_dc {
        samples.iter().sum::<f64>() / samples.len() as f64
    } else {
        0.0
    };
    let mut out = Vec::with_capacity(samples.len());
    out.push(samples[0] - mean);
    for n in 1..samples.len() {
        out.push((samples[n] - mean) - coef * (samples[n - 1] - mean));
    }
    Ok(out)
}

/// Symmetric Hamming window `w[n] = 0.54 - 0.46 cos(2 pi n / (N - 1))`.
pub fn hamming(len: usize) -> Vec<f64> {
    assert!(len >= 2, "window needs at least two points");
    let denom = (len - 1) as f64;
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / denom).cos())
        .collect()
}

/// Slices a clip into overlapping frames and applies the Hamming taper.
///
/// Frame `t` covers samples `[t*hop, t*hop + win)`; only full windows are
/// produced. Returns the frames as rows of a `T x win` matrix.
pub fn frame_and_window(clip: &AudioClip, spec: &FrameSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let win = spec.window_len(clip.sample_rate);
    let hop = spec.hop_len(clip.sample_rate);
    if clip.samples.len() < win {
        return Err(Error::ClipTooShort { samples: clip.samples.len(), window: win });
    }
    let window = hamming(win);
    let frames = spec.frame_count(clip.samples.len(), clip.sample_rate);
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let start = t * hop;
        let frame: Vec<f64> = clip.samples[start..start + win]
            .iter()
            .zip(&window)
            .map(|(x, w)| x * w)
            .collect();
        out.push(frame);
    }
    Ok(out)
}
