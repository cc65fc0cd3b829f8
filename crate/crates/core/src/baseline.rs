//! Classical LPC formant tracker: per-frame linear prediction, polynomial
//! root finding, and pole-to-formant mapping.
//!
//! This is the comparison baseline for the network tracker and doubles as a
//! sanity oracle on synthetic audio where the true resonances are known.

use num_complex::Complex64;

use crate::dsp::lpc::{autocorr, levinson};
use crate::dsp::{frame_and_window, preemphasize, AudioClip, FrameSpec, PREEMPHASIS_COEF};
use crate::error::{Error, Result};
use crate::track::{FormantTrack, TrackFrame};

/// Default residual tolerance for root finding.
pub const ROOT_TOL: f64 = 1e-8;
/// Iteration cap for Durand-Kerner.
const MAX_ROOT_ITERS: usize = 500;

/// One admissible LPC pole expressed as a resonance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormantCandidate {
    pub frequency_hz: f64,
    pub bandwidth_hz: f64,
}

/// Finds all complex roots of `coeffs[0] + coeffs[1] z + ... + coeffs[n] z^n`
/// by Durand-Kerner simultaneous iteration.
///
/// Success guarantees `|P(root)| / max|coeff| < tol` for every root.
pub fn poly_roots(coeffs: &[Complex64], tol: f64) -> Result<Vec<Complex64>> {
    let n = coeffs.len().saturating_sub(1);
    if n < 1 {
        return Err(Error::InvalidParam("polynomial degree must be >= 1".into()));
    }
    let lead = coeffs[n];
    if lead.norm() == 0.0 {
        return Err(Error::InvalidParam("leading polynomial coefficient is zero".into()));
    }
    let monic: Vec<Complex64> = coeffs.iter().map(|c| c / lead).collect();
    let max_coeff = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
    // the contract's residual scale, translated to monic evaluations
    let admit = tol * max_coeff / lead.norm();

    // initial iterates on a circle at the Cauchy root bound, angles offset
    // by an irrational constant so no iterate starts on the real axis
    let ratio = monic[..n].iter().map(|c| c.norm()).fold(0.0, f64::max);
    let radius = (1.0 + ratio).max(1.0);
    let offset = 0.5_f64 * std::f64::consts::SQRT_2;
    let mut z: Vec<Complex64> = (0..n)
        .map(|j| Complex64::from_polar(radius, 2.0 * std::f64::consts::PI * j as f64 / n as f64 + offset))
        .collect();

    let mut best = z.clone();
    let mut best_resid = f64::INFINITY;
    let mut iterations = 0;
    for _ in 0..MAX_ROOT_ITERS {
        iterations += 1;
        let mut sweep_resid = 0.0_f64;
        let mut max_step = 0.0_f64;
        for i in 0..n {
            let p = eval_monic(&monic, z[i]);
            sweep_resid = sweep_resid.max(p.norm());
            let mut denom = Complex64::new(1.0, 0.0);
            for j in 0..n {
                if j != i {
                    denom *= z[i] - z[j];
                }
            }
            if denom.norm() < 1e-300 {
                // collided iterates: nudge apart instead of dividing by ~0
                z[i] += Complex64::from_polar(1e-6 * radius, offset + i as f64);
                continue;
            }
            let step = p / denom;
            max_step = max_step.max(step.norm());
            z[i] -= step;
        }
        if sweep_resid < best_resid {
            best_resid = sweep_resid;
            best.copy_from_slice(&z);
        }
        // iterate well past the admission threshold (quadratic near the
        // solution, so the extra sweeps are cheap) for oracle-grade roots
        if sweep_resid < admit * 1e-4 || max_step < 1e-13 * radius {
            break;
        }
    }

    let final_resid = z.iter().map(|&r| eval_monic(&monic, r).norm()).fold(0.0, f64::max);
    if final_resid < admit {
        Ok(z)
    } else {
        let (resid, iterate) = if final_resid.is_finite() && final_resid <= best_resid {
            (final_resid, &z)
        } else {
            (best_resid, &best)
        };
        Err(Error::RootsDidNotConverge {
            residual: resid * lead.norm() / max_coeff,
            iterations,
            best: iterate.iter().map(|r| (r.re, r.im)).collect(),
        })
    }
}

/// Convenience wrapper for real coefficient vectors.
pub fn poly_roots_real(coeffs: &[f64], tol: f64) -> Result<Vec<Complex64>> {
    let cplx: Vec<Complex64> = coeffs.iter().map(|&c| Complex64::new(c, 0.0)).collect();
    poly_roots(&cplx, tol)
}

fn eval_monic(monic: &[Complex64], z: Complex64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for c in monic.iter().rev() {
        acc = acc * z + c;
    }
    acc
}

/// Poles of `A(z) = 1 + a_1 z^{-1} + ... + a_p z^{-p}` in the z plane,
/// i.e. roots of `z^p + a_1 z^{p-1} + ... + a_p`.
pub fn lpc_poles(a: &[f64], tol: f64) -> Result<Vec<Complex64>> {
    let p = a.len();
    let mut coeffs = Vec::with_capacity(p + 1);
    for k in 0..p {
        coeffs.push(Complex64::new(a[p - 1 - k], 0.0));
    }
    coeffs.push(Complex64::new(1.0, 0.0));
    poly_roots(&coeffs, tol)
}

/// Maps upper-half-plane poles to (frequency, bandwidth) candidates,
/// ascending in frequency. Each conjugate pair yields one candidate; real
/// poles yield none.
pub fn roots_to_candidates(roots: &[Complex64], sample_rate: u32) -> Vec<FormantCandidate> {
    let fs = sample_rate as f64;
    let mut out: Vec<FormantCandidate> = roots
        .iter()
        .filter(|r| r.im > 0.0)
        .map(|r| {
            // roots of a clamped-stable A(z) lie inside the unit circle;
            // cap the modulus so rounding can never produce bandwidth <= 0
            let modulus = r.norm().min(1.0 - 1e-12);
            FormantCandidate {
                frequency_hz: fs / (2.0 * std::f64::consts::PI) * r.im.atan2(r.re),
                bandwidth_hz: -fs / std::f64::consts::PI * modulus.ln(),
            }
        })
        .collect();
    out.sort_by(|a, b| a.frequency_hz.total_cmp(&b.frequency_hz));
    out
}

/// Configuration for [`track_baseline`].
#[derive(Debug, Clone)]
pub struct BaselineConfig {
    /// LPC analysis order.
    pub order: usize,
    /// Candidates at or above this bandwidth are rejected.
    pub max_bandwidth_hz: f64,
    /// Lower edge of the admissible frequency band.
    pub min_freq_hz: f64,
    /// Margin below Nyquist excluded from the admissible band.
    pub top_margin_hz: f64,
    /// Apply a 3-frame median filter to each formant slot.
    pub median_filter: bool,
    /// Pre-emphasis coefficient; 0 disables the filter.
    pub preemphasis: f64,
    pub frame: FrameSpec,
    pub root_tol: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            order: 12,
            max_bandwidth_hz: 400.0,
            min_freq_hz: 90.0,
            top_margin_hz: 50.0,
            median_filter: false,
            preemphasis: PREEMPHASIS_COEF,
            frame: FrameSpec::default(),
            root_tol: ROOT_TOL,
        }
    }
}

/// Runs the classical tracker over a clip frame by frame.
///
/// Frames whose LPC analysis degenerates (no energy) or whose root search
/// stalls are reported as undefined rather than failing the utterance.
pub fn track_baseline(clip: &AudioClip, cfg: &BaselineConfig) -> Result<FormantTrack> {
    if cfg.order < 2 {
        return Err(Error::InvalidParam(format!("LPC order {} is too small to carry a resonance", cfg.order)));
    }
    cfg.frame.validate()?;
    let fs = clip.sample_rate as f64;
    let f_lo = cfg.min_freq_hz;
    let f_hi = fs / 2.0 - cfg.top_margin_hz;

    let emphasized = preemphasize(&clip.samples, cfg.preemphasis, true)?;
    let frames = frame_and_window(&AudioClip::new(emphasized, clip.sample_rate), &cfg.frame)?;

    let mut track = Vec::with_capacity(frames.len());
    for frame in &frames {
        let r = autocorr(frame, cfg.order);
        if !(r[0] > 0.0) {
            track.push(TrackFrame::undefined());
            continue;
        }
        let sol = levinson(&r, cfg.order)?;
        let roots = match lpc_poles(&sol.coeffs, cfg.root_tol) {
            Ok(roots) => roots,
            // a stalled root search on one marginal frame should not kill
            // the whole utterance; report the frame as undefined
            Err(Error::RootsDidNotConverge { .. }) => {
                track.push(TrackFrame::undefined());
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut fr = TrackFrame::undefined();
        let mut slot = 0;
        for cand in roots_to_candidates(&roots, clip.sample_rate) {
            if cand.bandwidth_hz < cfg.max_bandwidth_hz
                && cand.frequency_hz > f_lo
                && cand.frequency_hz < f_hi
            {
                if slot < 3 {
                    fr.f[slot] = cand.frequency_hz;
                    slot += 1;
                }
            }
        }
        fr.is_speech = slot > 0;
        track.push(fr);
    }
    if cfg.median_filter {
        median3(&mut track);
    }
    Ok(FormantTrack::new(track))
}

/// In-place 3-frame median per formant slot with edge replication. Treats
/// undefined (0) like any other value, so isolated dropouts and isolated
/// spikes are both repaired.
fn median3(frames: &mut [TrackFrame]) {
    if frames.len() < 3 {
        return;
    }
    for slot in 0..3 {
        let vals: Vec<f64> = frames.iter().map(|fr| fr.f[slot]).collect();
        for (i, fr) in frames.iter_mut().enumerate() {
            let a = vals[i.saturating_sub(1)];
            let b = vals[i];
            let c = vals[(i + 1).min(vals.len() - 1)];
            fr.f[slot] = a.max(b).min(a.min(b).max(c));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() < tol
    }

    /// Greedy nearest-neighbour multiset match.
    fn assert_multiset_close(a: &[Complex64], b: &[Complex64], tol: f64) {
        assert_eq!(a.len(), b.len());
        let mut pool: Vec<Complex64> = b.to_vec();
        for &ra in a {
            let (idx, dist) = pool
                .iter()
                .enumerate()
                .map(|(i, rb)| (i, (ra - rb).norm()))
                .min_by(|x, y| x.1.total_cmp(&y.1))
                .unwrap();
            assert!(dist < tol, "no partner for {ra} within {tol} (closest {dist:.3e})");
            pool.swap_remove(idx);
        }
    }

    #[test]
    fn roots_of_z2_plus_1() {
        let roots = poly_roots_real(&[1.0, 0.0, 1.0], 1e-8).unwrap();
        let want = [Complex64::new(0.0, 1.0), Complex64::new(0.0, -1.0)];
        assert_multiset_close(&roots, &want, 1e-9);
    }

    #[test]
    fn roots_of_constructed_factorization() {
        // (z - 0.5)(z - 2) = z^2 - 2.5 z + 1
        let roots = poly_roots_real(&[1.0, -2.5, 1.0], 1e-8).unwrap();
        let want = [Complex64::new(0.5, 0.0), Complex64::new(2.0, 0.0)];
        assert_multiset_close(&roots, &want, 1e-9);
    }

    #[test]
    fn degree_zero_and_zero_lead_are_rejected() {
        assert!(matches!(poly_roots_real(&[1.0], 1e-8), Err(Error::InvalidParam(_))));
        assert!(matches!(poly_roots_real(&[1.0, 2.0, 0.0], 1e-8), Err(Error::InvalidParam(_))));
    }

    #[test]
    fn random_degree12_matches_companion_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for case in 0..20 {
            let mut coeffs: Vec<f64> = (0..13).map(|_| rng.gen_range(-1.0..1.0)).collect();
            coeffs[12] = rng.gen_range(0.5..1.5);
            let roots = poly_roots_real(&coeffs, 1e-8).unwrap();
            assert_eq!(roots.len(), 12);

            let max_coeff = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
            for &r in &roots {
                let mut p = Complex64::new(0.0, 0.0);
                for &c in coeffs.iter().rev() {
                    p = p * r + c;
                }
                assert!(p.norm() < 1e-8 * max_coeff, "case {case}: residual {:.3e}", p.norm());
            }

            let oracle = companion_eigenvalues(&coeffs);
            assert_multiset_close(&roots, &oracle, 1e-6);
        }
    }

    #[test]
    fn roots_invariant_under_polynomial_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut coeffs: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        coeffs[8] = 1.0;
        let scaled: Vec<f64> = coeffs.iter().map(|c| c * -37.25).collect();
        let a = poly_roots_real(&coeffs, 1e-8).unwrap();
        let b = poly_roots_real(&scaled, 1e-8).unwrap();
        assert_multiset_close(&a, &b, 1e-6);
    }

    #[test]
    fn candidate_formula_matches_hand_computation() {
        let fs = 16000;
        let pole = Complex64::from_polar(0.95, 2.0 * std::f64::consts::PI * 500.0 / 16000.0);
        let cands = roots_to_candidates(&[pole, pole.conj()], fs);
        assert_eq!(cands.len(), 1, "conjugate pair yields one candidate");
        assert!(approx(cands[0].frequency_hz, 500.0, 1e-9));
        let want_b = -(16000.0 / std::f64::consts::PI) * 0.95f64.ln();
        assert!(approx(cands[0].bandwidth_hz, want_b, 1e-9));
        assert!(approx(cands[0].bandwidth_hz, 261.23, 0.01));
    }

    #[test]
    fn real_poles_are_excluded() {
        let roots = [Complex64::new(0.9, 0.0), Complex64::new(-0.4, 0.0)];
        assert!(roots_to_candidates(&roots, 16000).is_empty());
    }

    #[test]
    fn candidates_sorted_ascending() {
        let roots = [
            Complex64::from_polar(0.9, 1.9),
            Complex64::from_polar(0.95, 0.3),
            Complex64::from_polar(0.8, 1.1),
        ];
        let cands = roots_to_candidates(&roots, 16000);
        assert_eq!(cands.len(), 3);
        assert!(cands[0].frequency_hz < cands[1].frequency_hz);
        assert!(cands[1].frequency_hz < cands[2].frequency_hz);
    }

    /// Direct-form resonator cascade, written out locally so the tracker is
    /// checked against an independent construction of the signal.
    /// Pulse train at 160 Hz through a resonator cascade. No noise and an
    /// f0 whose harmonics sample the resonances cleanly: the per-frame
    /// tolerance below measures tracker bias, not excitation luck.
    fn cascade_vowel(formants: &[(f64, f64)], fs: f64, len: usize) -> Vec<f64> {
        let period = (fs / 160.0).round() as usize;
        let mut x: Vec<f64> =
            (0..len).map(|n| if n % period == 0 { 1.0 } else { 0.0 }).collect();
        for &(f, b) in formants {
            let t = 1.0 / fs;
            let b1 = 2.0 * (-std::f64::consts::PI * b * t).exp()
                * (2.0 * std::f64::consts::PI * f * t).cos();
            let b2 = -(-2.0 * std::f64::consts::PI * b * t).exp();
            let a = 1.0 - b1 - b2;
            let mut y1 = 0.0;
            let mut y2 = 0.0;
            for v in x.iter_mut() {
                let y = a * *v + b1 * y1 + b2 * y2;
                y2 = y1;
                y1 = y;
                *v = y;
            }
        }
        x
    }

    #[test]
    fn steady_vowel_tracked_within_30hz() {
        let targets = [(500.0, 60.0), (1500.0, 90.0), (2500.0, 120.0)];
        let clip = AudioClip::new(cascade_vowel(&targets, 16000.0, 16000), 16000);
        let track = track_baseline(&clip, &BaselineConfig::default()).unwrap();
        assert_eq!(track.len(), 98);
        assert!(track.ordering_ok());
        for i in 5..93 {
            let fr = &track.frames[i];
            for (slot, &(f, _)) in targets.iter().enumerate() {
                assert!(fr.f[slot] > 0.0, "frame {i} slot {slot} undefined");
                assert!(
                    approx(fr.f[slot], f, 30.0),
                    "frame {i}: F{} = {:.1} vs {f}",
                    slot + 1,
                    fr.f[slot]
                );
            }
        }
    }

    #[test]
    fn silence_clip_is_all_undefined() {
        let clip = AudioClip::new(vec![0.0; 8000], 16000);
        let track = track_baseline(&clip, &BaselineConfig::default()).unwrap();
        assert!(track.frames.iter().all(|fr| fr.f == [0.0; 3] && !fr.is_speech));
    }

    #[test]
    fn two_resonance_signal_leaves_f3_undefined() {
        let targets = [(500.0, 60.0), (1500.0, 90.0)];
        let clip = AudioClip::new(cascade_vowel(&targets, 16000.0, 16000), 16000);
        // order 5 fits at most two conjugate pairs, so a third candidate
        // cannot exist by construction
        let cfg = BaselineConfig { order: 5, ..BaselineConfig::default() };
        let track = track_baseline(&clip, &cfg).unwrap();
        for (i, fr) in track.frames.iter().enumerate().take(93).skip(5) {
            assert_eq!(fr.f[2], 0.0, "frame {i} grew an F3");
            assert!(fr.f[0] > 0.0, "frame {i} lost F1");
        }
    }

    #[test]
    fn median_filter_repairs_isolated_dropout() {
        let mut frames = vec![TrackFrame::undefined(); 5];
        for fr in frames.iter_mut() {
            fr.f = [500.0, 1500.0, 2500.0];
        }
        frames[2].f[0] = 0.0;
        median3(&mut frames);
        assert_eq!(frames[2].f[0], 500.0);
        assert_eq!(frames[0].f, [500.0, 1500.0, 2500.0]);
    }

    #[test]
    fn tracker_is_deterministic() {
        let clip = AudioClip::new(cascade_vowel(&[(700.0, 80.0)], 16000.0, 8000), 16000);
        let a = track_baseline(&clip, &BaselineConfig::default()).unwrap();
        let b = track_baseline(&clip, &BaselineConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    /// Companion-matrix eigenvalue oracle (ascending coefficients).
    fn companion_eigenvalues(coeffs: &[f64]) -> Vec<Complex64> {
        let n = coeffs.len() - 1;
        let lead = coeffs[n];
        let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 1..n {
            m[(i, i - 1)] = 1.0;
        }
        for i in 0..n {
            m[(i, n - 1)] = -coeffs[i] / lead;
        }
        m.complex_eigenvalues().iter().map(|e| Complex64::new(e.re, e.im)).collect()
    }
}
