//! Formant track container shared by the baseline tracker, the network
//! decoder, the evaluator and the corpus generator.
//!
//! Tracks live on the 10 ms analysis grid: frame `i` is centered at
//! `i*hop + hop/2` seconds. A formant value of `0.0` means "undefined at
//! this frame" (e.g. silence, or too few admissible LPC poles).

/// One frame of a formant track.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackFrame {
    /// First three formants in Hz; 0 = undefined.
    pub f: [f64; 3],
    /// Phone annotation; empty when the producer has none.
    pub phone_label: String,
    pub is_speech: bool,
}

impl TrackFrame {
    pub fn undefined() -> Self {
        TrackFrame { f: [0.0; 3], phone_label: String::new(), is_speech: false }
    }
}

/// Per-utterance formant track on the 10 ms grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FormantTrack {
    pub frames: Vec<TrackFrame>,
    /// Hop between frames in seconds.
    pub hop_s: f64,
}

impl FormantTrack {
    pub fn new(frames: Vec<TrackFrame>) -> Self {
        FormantTrack { frames, hop_s: 0.01 }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Center time of frame `i` in seconds.
    pub fn time_s(&self, i: usize) -> f64 {
        i as f64 * self.hop_s + self.hop_s / 2.0
    }

    /// Wraps network predictions (one [F1,F2,F3] per feature frame) as a
    /// track on the label grid. Feature frame `i` is centered on label
    /// frame `i+1` (windowing trims one frame at each end), so the result
    /// pads one undefined frame before and after and has length T+2.
    pub fn from_predictions(preds: &[[f64; 3]]) -> Self {
        let mut frames = Vec::with_capacity(preds.len() + 2);
        frames.push(TrackFrame::undefined());
        frames.extend(preds.iter().map(|&f| TrackFrame {
            f,
            phone_label: String::new(),
            is_speech: true,
        }));
        frames.push(TrackFrame::undefined());
        FormantTrack::new(frames)
    }

    /// Checks the ordering invariant 0 < F1 < F2 < F3 over slots that are
    /// defined at each frame (undefined slots are skipped).
    pub fn ordering_ok(&self) -> bool {
        self.frames.iter().all(|fr| {
            let defined: Vec<f64> = fr.f.iter().copied().filter(|&v| v > 0.0).collect();
            defined.windows(2).all(|w| w[0] < w[1])
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_centers_on_10ms_grid() {
        let t = FormantTrack::new(vec![TrackFrame::undefined(); 3]);
        assert!((t.time_s(0) - 0.005).abs() < 1e-15);
        assert!((t.time_s(2) - 0.025).abs() < 1e-15);
    }

    #[test]
    fn prediction_track_sits_on_the_label_grid() {
        let t = FormantTrack::from_predictions(&[[500.0, 1500.0, 2500.0]; 3]);
        assert_eq!(t.len(), 5);
        assert_eq!(t.frames[0], TrackFrame::undefined());
        assert_eq!(t.frames[4], TrackFrame::undefined());
        assert_eq!(t.frames[1].f, [500.0, 1500.0, 2500.0]);
        assert!(t.frames[1].is_speech);
        // prediction for feature frame 0 lands at label-frame center 0.015 s
        assert!((t.time_s(1) - 0.015).abs() < 1e-15);
    }

    #[test]
    fn ordering_check_skips_undefined_slots() {
        let mut good = TrackFrame::undefined();
        good.f = [500.0, 0.0, 2500.0];
        let mut bad = TrackFrame::undefined();
        bad.f = [1500.0, 500.0, 0.0];
        assert!(FormantTrack::new(vec![good]).ordering_ok());
        assert!(!FormantTrack::new(vec![bad]).ordering_ok());
    }
}
