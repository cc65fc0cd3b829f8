//! Evaluation protocol: MAE/MAPE per formant over speech frames, broken
//! down by broad phone class and by consonant-vowel transition regions.
//!
//! References arrive on the 10 ms label grid; predictions live on the
//! 30 ms/10 ms analysis grid, which is two frames shorter (one at each
//! end). [`align_pair`] smooths the reference over each 30 ms span and
//! lines the two grids up before any metric is computed.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::track::{FormantTrack, TrackFrame};

/// Broad phone classes of the per-class error tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PhoneClass {
    Vowel,
    Semivowel,
    Nasal,
    Fricative,
    Affricate,
    Stop,
    /// Silence and non-speech; never enters class tables.
    Other,
}

impl PhoneClass {
    pub const TABLE: [PhoneClass; 6] = [
        PhoneClass::Vowel,
        PhoneClass::Semivowel,
        PhoneClass::Nasal,
        PhoneClass::Fricative,
        PhoneClass::Affricate,
        PhoneClass::Stop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PhoneClass::Vowel => "vowel",
            PhoneClass::Semivowel => "semivowel",
            PhoneClass::Nasal => "nasal",
            PhoneClass::Fricative => "fricative",
            PhoneClass::Affricate => "affricate",
            PhoneClass::Stop => "stop",
            PhoneClass::Other => "other",
        }
    }

    fn from_name(name: &str) -> Option<PhoneClass> {
        Some(match name {
            "vowel" => PhoneClass::Vowel,
            "semivowel" => PhoneClass::Semivowel,
            "nasal" => PhoneClass::Nasal,
            "fricative" => PhoneClass::Fricative,
            "affricate" => PhoneClass::Affricate,
            "stop" => PhoneClass::Stop,
            "other" => PhoneClass::Other,
            _ => return None,
        })
    }

    /// Consonant classes for transition detection.
    pub fn is_consonant(self) -> bool {
        matches!(
            self,
            PhoneClass::Semivowel
                | PhoneClass::Nasal
                | PhoneClass::Fricative
                | PhoneClass::Affricate
                | PhoneClass::Stop
        )
    }
}

/// Phone-label-to-class mapping, loaded from an editable text file.
#[derive(Debug, Clone)]
pub struct PhoneClassMap {
    map: BTreeMap<String, PhoneClass>,
}

impl PhoneClassMap {
    /// Parses "<phone> <class>" lines. A '#' at the start of a line or
    /// after whitespace begins a comment; a '#' inside a token does not,
    /// so the TIMIT silence phone `h#` survives.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut cut = line.len();
            for (i, _) in line.match_indices('#') {
                if i == 0 || line.as_bytes()[i - 1].is_ascii_whitespace() {
                    cut = i;
                    break;
                }
            }
            let line = line[..cut].trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let (phone, class) = (it.next(), it.next());
            let extra = it.next();
            let parsed = match (phone, class, extra) {
                (Some(p), Some(c), None) => PhoneClass::from_name(c).map(|c| (p, c)),
                _ => None,
            };
            let (phone, class) = parsed.ok_or_else(|| {
                Error::Parse(format!("classmap line {}: expected \"<phone> <class>\"", lineno + 1))
            })?;
            map.insert(phone.to_string(), class);
        }
        Ok(PhoneClassMap { map })
    }

    /// The TIMIT mapping shipped with the crate.
    pub fn default_map() -> Self {
        PhoneClassMap::parse(include_str!("../data/timit_classes.txt"))
            .expect("bundled classmap must parse")
    }

    pub fn class_of(&self, label: &str) -> Option<PhoneClass> {
        self.map.get(label).copied()
    }
}

/// Smooths a 10 ms reference track to the 30 ms analysis windows: frame t
/// becomes the mean of frames {t-1, t, t+1} (clamped at the edges), with
/// the center frame's label and speech flag.
///
/// Undefined values (0) are skipped in each mean; a slot with no defined
/// value in its window stays undefined.
pub fn align_labels_30ms(track: &FormantTrack) -> FormantTrack {
    let n = track.len();
    let mut frames = Vec::with_capacity(n);
    for t in 0..n {
        let mut fr = TrackFrame {
            f: [0.0; 3],
            phone_label: track.frames[t].phone_label.clone(),
            is_speech: track.frames[t].is_speech,
        };
        for slot in 0..3 {
            let mut sum = 0.0;
            let mut cnt = 0;
            for j in [t.saturating_sub(1), t, (t + 1).min(n - 1)] {
                let v = track.frames[j].f[slot];
                if v > 0.0 {
                    sum += v;
                    cnt += 1;
                }
            }
            if cnt > 0 {
                fr.f[slot] = sum / cnt as f64;
            }
        }
        frames.push(fr);
    }
    FormantTrack { frames, hop_s: track.hop_s }
}

/// Aligns a prediction track with a reference track.
///
/// A reference of the same length is taken to be on the prediction's own
/// grid already and is compared frame for frame, so a prediction identical
/// to its reference scores exactly zero. A reference two frames longer is
/// on the raw 10 ms label grid (the standard framing arithmetic trims one
/// frame at each end): it is smoothed to the 30 ms analysis windows and
/// sliced to the prediction's span. Anything else is a shape error.
pub fn align_pair(pred: &FormantTrack, reference: &FormantTrack) -> Result<(FormantTrack, FormantTrack)> {
    let t = pred.len();
    if reference.len() == t {
        return Ok((pred.clone(), reference.clone()));
    }
    if reference.len() != t + 2 {
        return Err(Error::ShapeMismatch(format!(
            "prediction has {t} frames but reference has {} (expected {t} or {})",
            reference.len(),
            t + 2
        )));
    }
    let smoothed = align_labels_30ms(reference);
    let frames = smoothed.frames[1..1 + t].to_vec();
    Ok((pred.clone(), FormantTrack { frames, hop_s: smoothed.hop_s }))
}

/// Mean absolute error in Hz over frames where `sel` holds and the
/// reference is defined. Returns the error and the frame count, or `None`
/// for an empty selection (reported as an absent row, never as 0).
pub fn mae(pred: &[f64], reference: &[f64], sel: &[bool]) -> Option<(f64, usize)> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((&p, &r), &s) in pred.iter().zip(reference).zip(sel) {
        if s && r > 0.0 {
            sum += (p - r).abs();
            n += 1;
        }
    }
    (n > 0).then(|| (sum / n as f64, n))
}

/// Mean absolute percent error over the same selection rule as [`mae`].
pub fn mape(pred: &[f64], reference: &[f64], sel: &[bool]) -> Option<(f64, usize)> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((&p, &r), &s) in pred.iter().zip(reference).zip(sel) {
        if s && r > 0.0 {
            sum += (p - r).abs() / r;
            n += 1;
        }
    }
    (n > 0).then(|| (100.0 * sum / n as f64, n))
}

/// Per-frame class labels. Frames flagged as non-speech are `Other`
/// regardless of label; any unmapped label aborts with the full list.
pub fn classify_frames(track: &FormantTrack, map: &PhoneClassMap) -> Result<Vec<PhoneClass>> {
    let mut unmapped = Vec::new();
    let mut classes = Vec::with_capacity(track.len());
    for fr in &track.frames {
        if !fr.is_speech {
            classes.push(PhoneClass::Other);
            continue;
        }
        match map.class_of(&fr.phone_label) {
            Some(c) => classes.push(c),
            None => {
                if !unmapped.contains(&fr.phone_label) {
                    unmapped.push(fr.phone_label.clone());
                }
                classes.push(PhoneClass::Other);
            }
        }
    }
    if unmapped.is_empty() {
        Ok(classes)
    } else {
        unmapped.sort();
        Err(Error::UnmappedPhones(unmapped))
    }
}

/// Selects frames near consonant-to-vowel (CV) and vowel-to-consonant (VC)
/// boundaries; returns `(cv, vc)` masks.
///
/// A boundary is an adjacent in-speech frame pair whose classes switch
/// between a consonant class and vowel. For `window >= 1` the selection is
/// the `window` frames on each side of the boundary, `{b-window+1 ..= b+window}`
/// for a boundary between frames b and b+1; `window = 0` degenerates to
/// exactly the two frames touching the boundary. Selected frames are
/// always within speech.
pub fn transition_regions(classes: &[PhoneClass], window: usize) -> (Vec<bool>, Vec<bool>) {
    let n = classes.len();
    let mut cv = vec![false; n];
    let mut vc = vec![false; n];
    for b in 0..n.saturating_sub(1) {
        let (left, right) = (classes[b], classes[b + 1]);
        let mask = if left.is_consonant() && right == PhoneClass::Vowel {
            &mut cv
        } else if left == PhoneClass::Vowel && right.is_consonant() {
            &mut vc
        } else {
            continue;
        };
        let (lo, hi) = if window == 0 {
            (b, b + 1)
        } else {
            ((b + 1).saturating_sub(window), b + window)
        };
        for t in lo..=hi.min(n - 1) {
            if classes[t] != PhoneClass::Other {
                mask[t] = true;
            }
        }
    }
    (cv, vc)
}

/// One report row.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub scope: String,
    pub region: String,
    pub formant: String,
    pub mae_hz: f64,
    pub mape_pct: f64,
    pub frames: usize,
}

/// MAE/MAPE tables keyed by (scope, region, formant).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn get(&self, scope: &str, region: &str, formant: &str) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.scope == scope && r.region == region && r.formant == formant)
    }

    /// CSV with header `scope,region,formant,mae_hz,mape_pct,frames`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scope,region,formant,mae_hz,mape_pct,frames\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.scope, r.region, r.formant, r.mae_hz, r.mape_pct, r.frames
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    /// Fixed-width table for terminal output.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<11} {:<11} {:<8} {:>9} {:>9} {:>8}\n",
            "scope", "region", "formant", "mae_hz", "mape_pct", "frames"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<11} {:<11} {:<8} {:>9.2} {:>9.2} {:>8}\n",
                r.scope, r.region, r.formant, r.mae_hz, r.mape_pct, r.frames
            ));
        }
        out
    }
}

/// Evaluation options.
#[derive(Debug, Clone)]
pub struct EvalConfig {
    /// Frames selected on each side of a transition boundary.
    pub transition_window: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { transition_window: 3 }
    }
}

/// Evaluates one prediction/reference pair; see [`evaluate_pairs`].
pub fn evaluate(
    pred: &FormantTrack,
    reference: &FormantTrack,
    map: &PhoneClassMap,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    evaluate_pairs(std::slice::from_ref(&(pred.clone(), reference.clone())), map, cfg)
}

/// Per-frame plot data for one aligned pair, for external plotting:
/// `frame,ref_f1,pred_f1,ref_f2,pred_f2,ref_f3,pred_f3`, one row per frame,
/// undefined values written as 0.
pub fn plot_data_csv(pred: &FormantTrack, reference: &FormantTrack) -> Result<String> {
    let (p, r) = align_pair(pred, reference)?;
    let mut out = String::from("frame,ref_f1,pred_f1,ref_f2,pred_f2,ref_f3,pred_f3\n");
    for (i, (pf, rf)) in p.frames.iter().zip(&r.frames).enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            i, rf.f[0], pf.f[0], rf.f[1], pf.f[1], rf.f[2], pf.f[2]
        ));
    }
    Ok(out)
}

/// Evaluates a corpus of (prediction, reference) pairs pooled frame-wise.
///
/// Emits, per formant and pooled "overall": the overall speech-frame row,
/// one row per phone class present, and CV/VC transition rows. Empty
/// selections produce no row. "Speech frames" are frames that are flagged
/// as speech and classed into one of the six table classes, so the class
/// rows partition the overall row exactly.
pub fn evaluate_pairs(
    pairs: &[(FormantTrack, FormantTrack)],
    map: &PhoneClassMap,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    // pool aligned frames across utterances
    let mut pred = [Vec::new(), Vec::new(), Vec::new()];
    let mut reference = [Vec::new(), Vec::new(), Vec::new()];
    let mut classes: Vec<PhoneClass> = Vec::new();
    let mut cv = Vec::new();
    let mut vc = Vec::new();
    for (p, r) in pairs {
        let (p, r) = align_pair(p, r)?;
        let cls = classify_frames(&r, map)?;
        let (ucv, uvc) = transition_regions(&cls, cfg.transition_window);
        for slot in 0..3 {
            pred[slot].extend(p.frames.iter().map(|fr| fr.f[slot]));
            reference[slot].extend(r.frames.iter().map(|fr| fr.f[slot]));
        }
        classes.extend(cls);
        cv.extend(ucv);
        vc.extend(uvc);
    }

    let speech: Vec<bool> = classes.iter().map(|c| *c != PhoneClass::Other).collect();
    let mut report = EvalReport::default();
    let mut emit = |scope: &str, region: &str, sel: &[bool]| {
        for slot in 0..3 {
            if let (Some((m, n)), Some((p, _))) = (
                mae(&pred[slot], &reference[slot], sel),
                mape(&pred[slot], &reference[slot], sel),
            ) {
                report.rows.push(EvalRow {
                    scope: scope.into(),
                    region: region.into(),
                    formant: format!("F{}", slot + 1),
                    mae_hz: m,
                    mape_pct: p,
                    frames: n,
                });
            }
        }
        // pooled across the three formants' selected frames
        let pooled_pred: Vec<f64> = pred.iter().flat_map(|v| v.iter().copied()).collect();
        let pooled_ref: Vec<f64> = reference.iter().flat_map(|v| v.iter().copied()).collect();
        let pooled_sel: Vec<bool> = std::iter::repeat(sel).take(3).flatten().copied().collect();
        if let (Some((m, n)), Some((p, _))) = (
            mae(&pooled_pred, &pooled_ref, &pooled_sel),
            mape(&pooled_pred, &pooled_ref, &pooled_sel),
        ) {
            report.rows.push(EvalRow {
                scope: scope.into(),
                region: region.into(),
                formant: "overall".into(),
                mae_hz: m,
                mape_pct: p,
                frames: n,
            });
        }
    };

    emit("overall", "speech", &speech);
    for class in PhoneClass::TABLE {
        let sel: Vec<bool> = classes.iter().map(|c| *c == class).collect();
        emit("class", class.name(), &sel);
    }
    emit("transition", "CV", &cv);
    emit("transition", "VC", &vc);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn track_from(f1: &[f64], labels: &[&str], speech: &[bool]) -> FormantTrack {
        let frames = f1
            .iter()
            .zip(labels)
            .zip(speech)
            .map(|((&v, &l), &s)| TrackFrame {
                f: [v, if v > 0.0 { v + 1000.0 } else { 0.0 }, if v > 0.0 { v + 2000.0 } else { 0.0 }],
                phone_label: l.to_string(),
                is_speech: s,
            })
            .collect();
        FormantTrack::new(frames)
    }

    #[test]
    fn align_constant_track_unchanged() {
        let t = track_from(&[500.0; 5], &["aa"; 5], &[true; 5]);
        let a = align_labels_30ms(&t);
        assert_eq!(a, t);
    }

    #[test]
    fn align_means_and_edge_clamping() {
        let t = track_from(&[400.0, 500.0, 600.0], &["aa"; 3], &[true; 3]);
        let a = align_labels_30ms(&t);
        assert!((a.frames[1].f[0] - 500.0).abs() < 1e-12);
        assert!((a.frames[0].f[0] - (400.0 + 400.0 + 500.0) / 3.0).abs() < 1e-9);
        assert!((a.frames[2].f[0] - (500.0 + 600.0 + 600.0) / 3.0).abs() < 1e-9);
    }

    #[test]
    fn align_skips_undefined_neighbours() {
        let t = track_from(&[0.0, 500.0, 600.0], &["sil", "aa", "aa"], &[false, true, true]);
        let a = align_labels_30ms(&t);
        assert!((a.frames[1].f[0] - 550.0).abs() < 1e-12, "undefined neighbour must be skipped");
        assert_eq!(a.frames[0].phone_label, "sil");
        assert!(!a.frames[0].is_speech);
    }

    #[test]
    fn align_pair_handles_grid_offset() {
        let reference = track_from(&[400.0, 500.0, 600.0, 700.0, 800.0], &["aa"; 5], &[true; 5]);
        let pred = track_from(&[501.0, 601.0, 701.0], &["", "", ""], &[true; 3]);
        let (p, r) = align_pair(&pred, &reference).unwrap();
        assert_eq!(p.len(), r.len());
        // pred frame 0 spans label frames {0,1,2}
        assert!((r.frames[0].f[0] - 500.0).abs() < 1e-12);
        assert!((r.frames[2].f[0] - 700.0).abs() < 1e-12);

        let bad = track_from(&[1.0; 7], &["aa"; 7], &[true; 7]);
        assert!(matches!(align_pair(&pred, &bad), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn same_grid_reference_is_compared_raw() {
        // equal lengths mean same grid: no smoothing, so a prediction that
        // equals the reference file scores exactly zero everywhere
        let map = PhoneClassMap::default_map();
        let reference = track_from(
            &[0.0, 500.0, 520.0, 540.0, 560.0, 0.0],
            &["sil", "aa", "aa", "s", "aa", "sil"],
            &[false, true, true, true, true, false],
        );
        let (_, r) = align_pair(&reference, &reference).unwrap();
        assert_eq!(r, reference);
        let report = evaluate(&reference, &reference, &map, &EvalConfig::default()).unwrap();
        assert!(!report.rows.is_empty());
        assert!(report.rows.iter().all(|row| row.mae_hz == 0.0 && row.mape_pct == 0.0));
    }

    #[test]
    fn mae_mape_basic_examples() {
        let sel = vec![true; 4];
        let reference = vec![500.0, 600.0, 700.0, 800.0];
        let same = mae(&reference, &reference, &sel).unwrap();
        assert_eq!(same, (0.0, 4));
        let shifted: Vec<f64> = reference.iter().map(|v| v + 50.0).collect();
        assert!((mae(&shifted, &reference, &sel).unwrap().0 - 50.0).abs() < 1e-12);
        assert!((mape(&[550.0], &[500.0], &[true]).unwrap().0 - 10.0).abs() < 1e-12);
        assert_eq!(mape(&reference, &reference, &sel).unwrap().0, 0.0);
    }

    #[test]
    fn mae_excludes_undefined_reference_and_reports_absent() {
        let sel = vec![true, true, true];
        let reference = vec![500.0, 0.0, 700.0];
        let pred = vec![510.0, 999.0, 690.0];
        assert_eq!(mae(&pred, &reference, &sel).unwrap(), (10.0, 2));
        assert_eq!(mae(&pred, &[0.0, 0.0, 0.0], &sel), None);
        assert_eq!(mae(&pred, &reference, &[false; 3]), None);
    }

    #[test]
    fn mae_matches_loop_oracle_and_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let n = 257;
        let reference: Vec<f64> = (0..n).map(|_| rng.gen_range(100.0..3000.0)).collect();
        let pred: Vec<f64> = reference.iter().map(|v| v + rng.gen_range(-80.0..80.0)).collect();
        let sel: Vec<bool> = (0..n).map(|_| rng.gen_range(0.0..1.0) > 0.3).collect();

        let (mut sum, mut cnt) = (0.0, 0);
        for i in 0..n {
            if sel[i] {
                sum += (pred[i] - reference[i]).abs();
                cnt += 1;
            }
        }
        let (got, gn) = mae(&pred, &reference, &sel).unwrap();
        assert_eq!(gn, cnt);
        assert!((got - sum / cnt as f64).abs() < 1e-12);
        assert!(got >= 0.0);

        // permutation invariance
        let perm: Vec<usize> = {
            let mut idx: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                let j = rng.gen_range(0..=i);
                idx.swap(i, j);
            }
            idx
        };
        let pp: Vec<f64> = perm.iter().map(|&i| pred[i]).collect();
        let rp: Vec<f64> = perm.iter().map(|&i| reference[i]).collect();
        let sp: Vec<bool> = perm.iter().map(|&i| sel[i]).collect();
        assert!((mae(&pp, &rp, &sp).unwrap().0 - got).abs() < 1e-12);
    }

    #[test]
    fn default_map_covers_spec_examples() {
        let map = PhoneClassMap::default_map();
        assert_eq!(map.class_of("iy"), Some(PhoneClass::Vowel));
        assert_eq!(map.class_of("s"), Some(PhoneClass::Fricative));
        assert_eq!(map.class_of("jh"), Some(PhoneClass::Affricate));
        assert_eq!(map.class_of("sil"), Some(PhoneClass::Other));
        assert_eq!(map.class_of("V"), Some(PhoneClass::Vowel));
        assert_eq!(map.class_of("xyz"), None);
    }

    #[test]
    fn classmap_parser_rejects_malformed_lines() {
        assert!(PhoneClassMap::parse("aa vowel\n# comment\n\ns fricative").is_ok());
        assert!(matches!(PhoneClassMap::parse("aa notaclass"), Err(Error::Parse(_))));
        assert!(matches!(PhoneClassMap::parse("aa vowel extra"), Err(Error::Parse(_))));
    }

    #[test]
    fn classify_silence_override_and_partition() {
        let map = PhoneClassMap::default_map();
        let t = track_from(
            &[0.0, 500.0, 500.0, 500.0, 0.0],
            &["aa", "aa", "s", "jh", "aa"],
            &[false, true, true, true, false],
        );
        let classes = classify_frames(&t, &map).unwrap();
        assert_eq!(classes[0], PhoneClass::Other, "silence flag wins over label");
        assert_eq!(classes[1], PhoneClass::Vowel);
        assert_eq!(classes[2], PhoneClass::Fricative);
        assert_eq!(classes[3], PhoneClass::Affricate);
        assert_eq!(classes.len(), t.len());
    }

    #[test]
    fn classify_lists_all_unmapped_labels() {
        let map = PhoneClassMap::default_map();
        let t = track_from(&[500.0; 3], &["zz", "aa", "qq"], &[true; 3]);
        match classify_frames(&t, &map) {
            Err(Error::UnmappedPhones(labels)) => assert_eq!(labels, vec!["qq", "zz"]),
            other => panic!("expected UnmappedPhones, got {other:?}"),
        }
    }

    #[test]
    fn transition_window3_matches_contract_example() {
        use PhoneClass::*;
        let mut classes = vec![Stop; 10];
        classes.extend(vec![Vowel; 10]);
        let (cv, vc) = transition_regions(&classes, 3);
        assert!(!vc.iter().any(|&b| b));
        let want: Vec<usize> = (7..=12).collect();
        let got: Vec<usize> = cv.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn transition_window0_selects_adjacent_pair() {
        use PhoneClass::*;
        let classes = [Vowel, Vowel, Fricative, Fricative];
        let (cv, vc) = transition_regions(&classes, 0);
        assert!(!cv.iter().any(|&b| b));
        let got: Vec<usize> = vc.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
        assert_eq!(got, vec![1, 2]);
    }

    #[test]
    fn transition_none_for_uniform_speech_and_stays_in_speech() {
        use PhoneClass::*;
        let (cv, vc) = transition_regions(&[Vowel; 20], 3);
        assert!(!cv.iter().chain(vc.iter()).any(|&b| b));

        // boundary right after silence: selection must not leak into Other
        let classes = [Other, Other, Stop, Vowel, Vowel, Other];
        let (cv, _) = transition_regions(&classes, 3);
        let got: Vec<usize> = cv.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
        assert_eq!(got, vec![2, 3, 4], "Other frames excluded even inside the window");
    }

    #[test]
    fn evaluate_exact_prediction_is_all_zero() {
        let map = PhoneClassMap::default_map();
        let reference = track_from(
            &[0.0, 500.0, 520.0, 540.0, 560.0, 580.0, 0.0],
            &["sil", "aa", "aa", "s", "s", "aa", "sil"],
            &[false, true, true, true, true, true, false],
        );
        let aligned = align_labels_30ms(&reference);
        let pred = FormantTrack {
            frames: aligned.frames[1..6].to_vec(),
            hop_s: aligned.hop_s,
        };
        let report = evaluate(&pred, &reference, &map, &EvalConfig::default()).unwrap();
        assert!(!report.rows.is_empty());
        for row in &report.rows {
            assert_eq!(row.mae_hz, 0.0, "row {row:?}");
            assert_eq!(row.mape_pct, 0.0);
        }
        // partition: overall count equals the sum of class counts, per formant
        for formant in ["F1", "F2", "F3", "overall"] {
            let overall = report.get("overall", "speech", formant).unwrap().frames;
            let class_sum: usize = report
                .rows
                .iter()
                .filter(|r| r.scope == "class" && r.formant == formant)
                .map(|r| r.frames)
                .sum();
            assert_eq!(overall, class_sum);
        }
        // transitions exist: s|aa boundaries present
        assert!(report.get("transition", "CV", "F1").is_some());
        assert!(report.get("transition", "VC", "F1").is_some());
    }

    #[test]
    fn evaluate_overall_equals_count_weighted_class_mean() {
        let map = PhoneClassMap::default_map();
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let n = 200;
        let labels: Vec<&str> = (0..n)
            .map(|_| ["aa", "s", "n", "jh", "k", "l"][rng.gen_range(0..6)])
            .collect();
        let f1: Vec<f64> = (0..n).map(|_| rng.gen_range(300.0..900.0)).collect();
        let speech: Vec<bool> = (0..n).map(|i| i >= 3 && i < n - 3).collect();
        let reference = track_from(&f1, &labels, &speech);
        let mut pred = align_labels_30ms(&reference);
        for fr in pred.frames.iter_mut() {
            for v in fr.f.iter_mut() {
                if *v > 0.0 {
                    *v += rng.gen_range(-60.0..60.0);
                }
            }
        }
        let report = evaluate(&pred, &reference, &map, &EvalConfig::default()).unwrap();
        let overall = report.get("overall", "speech", "F2").unwrap();
        let (mut acc, mut cnt) = (0.0, 0usize);
        for r in report.rows.iter().filter(|r| r.scope == "class" && r.formant == "F2") {
            acc += r.mae_hz * r.frames as f64;
            cnt += r.frames;
        }
        assert_eq!(cnt, overall.frames);
        assert!((overall.mae_hz - acc / cnt as f64).abs() < 1e-9);
    }

    #[test]
    fn report_csv_shape() {
        let map = PhoneClassMap::default_map();
        let reference = track_from(&[500.0; 8], &["aa"; 8], &[true; 8]);
        let report = evaluate(&align_labels_30ms(&reference), &reference, &map, &EvalConfig::default())
            .unwrap();
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "scope,region,formant,mae_hz,mape_pct,frames");
        assert_eq!(csv.lines().count(), report.rows.len() + 1);
        // all-vowel: exactly overall + vowel class rows, 4 formants each
        assert_eq!(report.rows.len(), 8);
        let table = report.table();
        assert!(table.contains("vowel"));
    }

    #[test]
    fn plot_data_pairs_reference_and_prediction_per_frame() {
        let reference = track_from(&[500.0, 510.0, 520.0, 530.0], &["aa"; 4], &[true; 4]);
        let mut pred = align_labels_30ms(&reference);
        for fr in pred.frames.iter_mut() {
            fr.f[0] += 5.0;
        }
        let csv = plot_data_csv(&pred, &reference).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "frame,ref_f1,pred_f1,ref_f2,pred_f2,ref_f3,pred_f3");
        assert_eq!(lines.len(), 5);
        // row 1 = frame 1: smoothed reference mean(500,510,520) and its +5 shift
        assert_eq!(lines[2], "1,510,515,1510,1510,2510,2510");
    }
}
