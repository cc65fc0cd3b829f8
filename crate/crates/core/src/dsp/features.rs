//! Per-frame acoustic features and their normalization.
//!
//! Each valid frame yields a 350-dimensional vector:
//!
//! - columns 0..300: LPC cepstra, 30 coefficients for every analysis order
//!   8..=17, concatenated in ascending order;
//! - columns 300..350: the first 50 coefficients of the frame's real
//!   cepstrum, a raw-spectral complement to the model-based LPCCs.
//!
//! Silent frames produce an all-zero row and are flagged invalid in the
//! mask instead of erroring; downstream training and evaluation skip them.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dsp::lpc::{autocorr, levinson, lpc_to_cepstrum};
use crate::dsp::{frame_and_window, preemphasize, AudioClip, FrameSpec, PREEMPHASIS_COEF};
use crate::error::{Error, Result};

/// LPCC analysis orders.
pub const LPCC_ORDERS: std::ops::RangeInclusive<usize> = 8..=17;
/// Cepstral coefficients kept per order.
pub const LPCC_PER_ORDER: usize = 30;
/// Real-cepstrum coefficients kept.
pub const CEPSTRUM_DIM: usize = 50;
/// Total feature dimension.
pub const FEATURE_DIM: usize = 350;

/// Log floor applied to the magnitude spectrum before taking the log.
const LOG_FLOOR: f64 = 1e-10;

/// Per-frame feature rows plus a validity mask.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    /// Row-major `T x FEATURE_DIM`.
    pub values: Vec<f64>,
    /// One flag per frame; false marks degenerate (silent) frames.
    pub mask: Vec<bool>,
    pub frames: usize,
}

impl FeatureMatrix {
    pub fn new(frames: usize) -> Self {
        FeatureMatrix { values: vec![0.0; frames * FEATURE_DIM], mask: vec![false; frames], frames }
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * FEATURE_DIM..(t + 1) * FEATURE_DIM]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.values[t * FEATURE_DIM..(t + 1) * FEATURE_DIM]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// The 300-dimensional LPCC stack for one windowed frame, or `None` for a
/// degenerate frame (no signal energy).
pub fn extract_lpcc_stack(frame: &[f64]) -> Result<Option<Vec<f64>>> {
    let max_order = *LPCC_ORDERS.end();
    if frame.len() <= max_order {
        return Err(Error::ClipTooShort { samples: frame.len(), window: max_order + 1 });
    }
    let r = autocorr(frame, max_order);
    if !(r[0] > 0.0) {
        return Ok(None);
    }
    let mut out = Vec::with_capacity(LPCC_ORDERS.count() * LPCC_PER_ORDER);
    for p in LPCC_ORDERS {
        let sol = levinson(&r, p)?;
        out.extend(lpc_to_cepstrum(&sol.coeffs, LPCC_PER_ORDER));
    }
    Ok(Some(out))
}

/// Real-cepstrum extractor; holds the FFT plans for one frame length.
pub struct CepstrumExtractor {
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
    ifft: std::sync::Arc<dyn rustfft::Fft<f64>>,
    len: usize,
}

impl CepstrumExtractor {
    pub fn new(frame_len: usize) -> Self {
        let mut planner = FftPlanner::new();
        CepstrumExtractor {
            fft: planner.plan_fft_forward(frame_len),
            ifft: planner.plan_fft_inverse(frame_len),
            len: frame_len,
        }
    }

    /// First `CEPSTRUM_DIM` coefficients (c_1..c_50) of the real cepstrum:
    /// the inverse DFT of `log(|DFT(frame)| + 1e-10)`.
    pub fn extract(&self, frame: &[f64]) -> Vec<f64> {
        assert_eq!(frame.len(), self.len, "frame length differs from plan");
        let mut buf: Vec<Complex64> = frame.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fft.process(&mut buf);
        for v in buf.iter_mut() {
            *v = Complex64::new((v.norm() + LOG_FLOOR).ln(), 0.0);
        }
        self.ifft.process(&mut buf);
        let scale = 1.0 / self.len as f64;
        (1..=CEPSTRUM_DIM).map(|n| buf[n].re * scale).collect()
    }
}

/// Runs the whole front-end on a clip: DC removal, pre-emphasis, framing,
/// windowing and per-frame feature extraction.
pub fn extract_features(clip: &AudioClip, spec: &FrameSpec) -> Result<FeatureMatrix> {
    let emphasized = preemphasize(&clip.samples, PREEMPHASIS_COEF, true)?;
    let clip = AudioClip::new(emphasized, clip.sample_rate);
    let frames = frame_and_window(&clip, spec)?;
    let cepstrum = CepstrumExtractor::new(spec.window_len(clip.sample_rate));
    let mut out = FeatureMatrix::new(frames.len());
    for (t, frame) in frames.iter().enumerate() {
        match extract_lpcc_stack(frame)? {
            Some(lpcc) => {
                let row = out.row_mut(t);
                row[..lpcc.len()].copy_from_slice(&lpcc);
                row[lpcc.len()..].copy_from_slice(&cepstrum.extract(frame));
                out.mask[t] = true;
            }
            None => {
                // silent frame: zero features, masked out
                out.mask[t] = false;
            }
        }
    }
    debug_assert!(out.is_finite());
    Ok(out)
}

/// Per-dimension mean and standard deviation fitted over valid frames.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Smallest admitted standard deviation; zero-variance dimensions are
/// floored here rather than erroring.
pub const STD_FLOOR: f64 = 1e-8;

/// Fits z-score statistics over the valid frames of a feature set.
pub fn fit_norm(features: &[FeatureMatrix]) -> Result<NormStats> {
    let mut count = 0usize;
    let mut mean = vec![0.0; FEATURE_DIM];
    for fm in features {
        for t in 0..fm.frames {
            if fm.mask[t] {
                count += 1;
                crate::util::axpy(1.0, fm.row(t), &mut mean);
            }
        }
    }
    if count == 0 {
        return Err(Error::NoValidFrames);
    }
    for m in mean.iter_mut() {
        *m /= count as f64;
    }
    let mut var = vec![0.0; FEATURE_DIM];
    for fm in features {
        for t in 0..fm.frames {
            if fm.mask[t] {
                for (d, (&x, v)) in fm.row(t).iter().zip(var.iter_mut()).enumerate() {
                    let diff = x - mean[d];
                    *v += diff * diff;
                }
            }
        }
    }
    let std = var.iter().map(|v| (v / count as f64).sqrt().max(STD_FLOOR)).collect();
    Ok(NormStats { mean, std })
}

/// Applies z-score normalization in place. Masked-out rows stay zero.
pub fn apply_norm(features: &mut FeatureMatrix, stats: &NormStats) {
    assert_eq!(stats.mean.len(), FEATURE_DIM);
    for t in 0..features.frames {
        if !features.mask[t] {
            continue;
        }
        for (d, x) in features.row_mut(t).iter_mut().enumerate() {
            *x = (*x - stats.mean[d]) / stats.std[d];
        }
    }
}
