//! Synthetic utterances with exactly known formant ground truth.
//!
//! Audio is produced by driving an impulse-train/noise source through a
//! cascade of three second-order resonators whose center frequencies follow
//! a prescribed trajectory. Because the resonator poles are placed exactly
//! at the requested (F, B), the ground-truth track is correct by
//! construction rather than re-measured.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::AudioClip;
use crate::error::{Error, Result};
use crate::io::{write_label_csv, write_manifest, write_wav, ManifestEntry};
use crate::track::{FormantTrack, TrackFrame};
use crate::util::stream_seed;

/// Corpus sample rate.
pub const SAMPLE_RATE: u32 = 16000;
/// Silence pad at each end of every utterance, in seconds.
pub const PAD_S: f64 = 0.05;
/// Hop of the label grid, in seconds.
const HOP_S: f64 = 0.01;
/// Default source noise fraction; keeps frames from being perfectly
/// periodic, which degenerates LPC analysis.
pub const NOISE_MIX: f64 = 0.05;
/// Margin kept below Nyquist by every trajectory.
const NYQUIST_MARGIN_HZ: f64 = 50.0;

/// How a formant moves from its start to its end value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    Linear,
    /// Half-cosine ease: slow at both ends, fastest mid-trajectory.
    Sinusoidal,
}

/// One formant's trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormantSpec {
    pub start_hz: f64,
    pub end_hz: f64,
    pub bandwidth_hz: f64,
    pub interp: Interp,
}

impl FormantSpec {
    /// Value at normalized position u in [0, 1].
    fn at(&self, u: f64) -> f64 {
        let w = match self.interp {
            Interp::Linear => u,
            Interp::Sinusoidal => (1.0 - (std::f64::consts::PI * u).cos()) / 2.0,
        };
        self.start_hz + (self.end_hz - self.start_hz) * w
    }
}

/// Full description of one synthetic utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    pub formants: [FormantSpec; 3],
    pub f0_start_hz: f64,
    pub f0_end_hz: f64,
    /// Voiced-span duration in seconds; quantized to the 10 ms hop grid.
    pub duration_s: f64,
    pub noise_mix: f64,
    pub seed: u64,
    /// When set, the voiced span alternates vowel segments ("V") with
    /// fricative-like noise segments ("s") of this length, to exercise
    /// consonant-vowel transition evaluation.
    pub alt_segment_s: Option<f64>,
}

impl TrajectorySpec {
    /// Formant `slot` (0-based) at time `t` seconds into the voiced span.
    pub fn formant_at(&self, slot: usize, t: f64) -> f64 {
        let dur = self.voiced_hops() as f64 * HOP_S;
        self.formants[slot].at((t / dur).clamp(0.0, 1.0))
    }

    fn f0_at(&self, t: f64) -> f64 {
        let dur = self.voiced_hops() as f64 * HOP_S;
        let u = (t / dur).clamp(0.0, 1.0);
        self.f0_start_hz + (self.f0_end_hz - self.f0_start_hz) * u
    }

    /// Voiced-span length in 10 ms hops.
    fn voiced_hops(&self) -> usize {
        (self.duration_s * 100.0).round() as usize
    }

    /// Phone label for time `t` into the voiced span.
    fn label_at(&self, t: f64) -> &'static str {
        match self.alt_segment_s {
            Some(seg) if (t / seg) as usize % 2 == 1 => "s",
            _ => "V",
        }
    }

    /// Checks ranges plus the ordering invariant
    /// `0 < F1(t) + margin <= F2(t)` (and so on up to Nyquist) on a dense
    /// time grid; interpolation curves can dip between endpoints, so
    /// endpoint checks alone are not enough.
    pub fn validate(&self, fs: u32, ordering_margin_hz: f64) -> Result<()> {
        if self.voiced_hops() == 0 {
            return Err(Error::InvalidParam(format!(
                "duration {} s rounds to an empty voiced span",
                self.duration_s
            )));
        }
        if !(0.0..1.0).contains(&self.noise_mix) {
            return Err(Error::InvalidParam(format!("noise_mix {} outside [0,1)", self.noise_mix)));
        }
        for (i, f) in self.formants.iter().enumerate() {
            if f.bandwidth_hz <= 0.0 {
                return Err(Error::InvalidParam(format!("bandwidth of formant {} not positive", i + 1)));
            }
        }
        if self.f0_start_hz <= 0.0 || self.f0_end_hz <= 0.0 {
            return Err(Error::InvalidParam("f0 must be positive".into()));
        }
        let dur = self.voiced_hops() as f64 * HOP_S;
        let steps = (dur * 1000.0).ceil() as usize; // 1 ms grid
        for k in 0..=steps {
            let t = dur * k as f64 / steps as f64;
            let f = [self.formant_at(0, t), self.formant_at(1, t), self.formant_at(2, t)];
            let ok = f[0] > 0.0
                && f[0] + ordering_margin_hz <= f[1]
                && f[1] + ordering_margin_hz <= f[2]
                && f[2] < fs as f64 / 2.0 - NYQUIST_MARGIN_HZ;
            if !ok {
                return Err(Error::InvalidParam(format!(
                    "formant ordering violated at t={t:.3}s: ({:.0}, {:.0}, {:.0}) Hz",
                    f[0], f[1], f[2]
                )));
            }
        }
        Ok(())
    }
}

/// A generated clip and its exact ground-truth track.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthUtterance {
    pub clip: AudioClip,
    pub track: FormantTrack,
}

/// Filters `x` through one second-order resonator with fixed parameters.
pub fn resonator(x: &[f64], f_hz: f64, b_hz: f64, fs: u32) -> Result<Vec<f64>> {
    if !(f_hz > 0.0 && f_hz < fs as f64 / 2.0) {
        return Err(Error::InvalidParam(format!("resonator frequency {f_hz} outside (0, fs/2)")));
    }
    if b_hz <= 0.0 {
        return Err(Error::InvalidParam(format!("resonator bandwidth {b_hz} not positive")));
    }
    let t = 1.0 / fs as f64;
    let r = (-std::f64::consts::PI * b_hz * t).exp();
    let b1 = 2.0 * r * (2.0 * std::f64::consts::PI * f_hz * t).cos();
    let b2 = -r * r;
    let a = 1.0 - b1 - b2;
    let mut y = Vec::with_capacity(x.len());
    let mut y1 = 0.0;
    let mut y2 = 0.0;
    for &xn in x {
        let yn = a * xn + b1 * y1 + b2 * y2;
        y2 = y1;
        y1 = yn;
        y.push(yn);
    }
    Ok(y)
}

/// Renders a trajectory spec into audio plus its ground-truth track.
///
/// The source is an impulse train at the (gliding) f0 mixed with uniform
/// noise, or pure attenuated noise inside "s" segments. Both ends carry
/// 50 ms of digital silence; the resonators ring freely into the trailing
/// pad. Output is peak-normalized to 0.5.
pub fn synthesize(spec: &TrajectorySpec, fs: u32) -> Result<SynthUtterance> {
    spec.validate(fs, 0.0)?;
    let hop = (HOP_S * fs as f64).round() as usize;
    let pad_hops = (PAD_S / HOP_S).round() as usize;
    let pad = pad_hops * hop;
    let voiced_hops = spec.voiced_hops();
    let voiced = voiced_hops * hop;
    let total = voiced + 2 * pad;

    // source signal over the voiced span
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut x = vec![0.0; total];
    let mut phase = 1.0_f64; // fires a pulse on the first voiced sample
    for n in 0..voiced {
        let t = n as f64 / fs as f64;
        // one draw per sample regardless of segment type keeps the rng
        // stream independent of the segment layout
        let noise: f64 = rng.gen_range(-1.0..1.0);
        phase += spec.f0_at(t) / fs as f64;
        let pulse = if phase >= 1.0 {
            phase -= 1.0;
            1.0
        } else {
            0.0
        };
        x[pad + n] = if spec.label_at(t) == "s" {
            0.15 * noise
        } else {
            (1.0 - spec.noise_mix) * pulse + spec.noise_mix * noise
        };
    }

    // time-varying resonator cascade over the whole padded signal
    let ts = 1.0 / fs as f64;
    for slot in 0..3 {
        let r = (-std::f64::consts::PI * spec.formants[slot].bandwidth_hz * ts).exp();
        let b2 = -r * r;
        let mut y1 = 0.0;
        let mut y2 = 0.0;
        for (n, v) in x.iter_mut().enumerate() {
            let t = (n as f64 - pad as f64) * ts;
            let f = spec.formant_at(slot, t);
            let b1 = 2.0 * r * (2.0 * std::f64::consts::PI * f * ts).cos();
            let a = 1.0 - b1 - b2;
            let yn = a * *v + b1 * y1 + b2 * y2;
            y2 = y1;
            y1 = yn;
            *v = yn;
        }
    }

    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let scale = 0.5 / peak;
        for v in x.iter_mut() {
            *v *= scale;
        }
    }

    // ground truth on the 10 ms label grid, sampled at frame centers
    let n_label = total / hop;
    let mut frames = Vec::with_capacity(n_label);
    for i in 0..n_label {
        if i < pad_hops || i >= pad_hops + voiced_hops {
            let mut fr = TrackFrame::undefined();
            fr.phone_label = "sil".into();
            frames.push(fr);
        } else {
            let t = (i as f64 + 0.5 - pad_hops as f64) * HOP_S;
            frames.push(TrackFrame {
                f: [spec.formant_at(0, t), spec.formant_at(1, t), spec.formant_at(2, t)],
                phone_label: spec.label_at(t).into(),
                is_speech: true,
            });
        }
    }

    Ok(SynthUtterance {
        clip: AudioClip::new(x, fs),
        track: FormantTrack::new(frames),
    })
}

/// Documented draw ranges for [`make_corpus`].
pub mod ranges {
    pub const F1_HZ: (f64, f64) = (250.0, 900.0);
    pub const F2_HZ: (f64, f64) = (800.0, 2500.0);
    pub const F3_HZ: (f64, f64) = (1800.0, 3200.0);
    pub const B1_HZ: (f64, f64) = (40.0, 120.0);
    pub const B2_HZ: (f64, f64) = (60.0, 160.0);
    pub const B3_HZ: (f64, f64) = (80.0, 200.0);
    pub const F0_HZ: (f64, f64) = (80.0, 250.0);
    pub const DURATION_S: (f64, f64) = (0.5, 3.0);
    /// Minimum F2−F1 and F3−F2 gap along the whole trajectory.
    pub const ORDERING_MARGIN_HZ: f64 = 200.0;
}

/// Maximum frames per utterance accepted by the trainer.
pub const MAX_FRAMES: usize = 710;

/// Paths of the three manifests written by [`make_corpus`].
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifests {
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
}

/// Generates a train/val/test corpus under `out_dir`.
///
/// Layout: `wav/utt_<split><index>.wav`, `labels/utt_<split><index>.csv`,
/// plus `train.manifest`, `val.manifest`, `test.manifest` with paths
/// relative to `out_dir`. Per-utterance seeds derive from disjoint labeled
/// streams of `seed`, so splits are decorrelated and the corpus is
/// reproducible byte for byte. Every fourth utterance alternates vowel and
/// fricative-like segments to provide CV/VC transitions.
pub fn make_corpus(
    n_train: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<CorpusManifests> {
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::InvalidParam("corpus split counts must all be >= 1".into()));
    }
    std::fs::create_dir_all(out_dir.join("wav"))?;
    std::fs::create_dir_all(out_dir.join("labels"))?;

    let mut manifests = Vec::new();
    for (split, count) in [("train", n_train), ("val", n_val), ("test", n_test)] {
        let mut entries = Vec::with_capacity(count);
        for i in 0..count {
            let useed = stream_seed(seed, &format!("corpus/{split}"), i as u64);
            let mut spec = draw_spec(useed);
            if i % 4 == 3 {
                spec.alt_segment_s = Some(0.3);
            }
            let utt = synthesize(&spec, SAMPLE_RATE)?;
            debug_assert!(utt.track.len() <= MAX_FRAMES);
            let wav_rel = PathBuf::from(format!("wav/utt_{split}{i:04}.wav"));
            let lab_rel = PathBuf::from(format!("labels/utt_{split}{i:04}.csv"));
            write_wav(&out_dir.join(&wav_rel), &utt.clip)?;
            write_label_csv(&out_dir.join(&lab_rel), &utt.track)?;
            entries.push(ManifestEntry { audio_path: wav_rel, labels_path: lab_rel });
        }
        let manifest = out_dir.join(format!("{split}.manifest"));
        write_manifest(&manifest, &entries)?;
        manifests.push(manifest);
    }
    let mut it = manifests.into_iter();
    Ok(CorpusManifests {
        train: it.next().unwrap(),
        val: it.next().unwrap(),
        test: it.next().unwrap(),
    })
}

/// Rejection-samples a valid trajectory from the documented ranges.
fn draw_spec(seed: u64) -> TrajectorySpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |lo_hi: (f64, f64)| rng.gen_range(lo_hi.0..lo_hi.1);
    loop {
        let dur = pick(ranges::DURATION_S);
        let mut formants = [FormantSpec {
            start_hz: 0.0,
            end_hz: 0.0,
            bandwidth_hz: 0.0,
            interp: Interp::Linear,
        }; 3];
        for (slot, (f_range, b_range)) in [
            (ranges::F1_HZ, ranges::B1_HZ),
            (ranges::F2_HZ, ranges::B2_HZ),
            (ranges::F3_HZ, ranges::B3_HZ),
        ]
        .into_iter()
        .enumerate()
        {
            formants[slot] = FormantSpec {
                start_hz: pick(f_range),
                end_hz: pick(f_range),
                bandwidth_hz: pick(b_range),
                interp: if pick((0.0, 1.0)) < 0.5 { Interp::Linear } else { Interp::Sinusoidal },
            };
        }
        let spec = TrajectorySpec {
            formants,
            f0_start_hz: pick(ranges::F0_HZ),
            f0_end_hz: pick(ranges::F0_HZ),
            duration_s: dur,
            noise_mix: NOISE_MIX,
            seed: pick((0.0, 1.0)).to_bits(),
            alt_segment_s: None,
        };
        let frames = spec.voiced_hops() + 2 * (PAD_S / HOP_S).round() as usize;
        if frames <= MAX_FRAMES
            && spec.validate(SAMPLE_RATE, ranges::ORDERING_MARGIN_HZ).is_ok()
        {
            return spec;
        }
    }
}
