//! File formats: WAV audio, label/track CSVs, corpus manifests, the binary
//! feature cache and normalization statistics.
//!
//! All binary formats are little-endian with an 8-byte magic followed by a
//! `u32` format version and four reserved zero bytes (16-byte header total).
//! CSV files carry a fixed header row; floats are written with Rust's
//! shortest round-trip formatting, so read-back is value-exact.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::dsp::{FeatureMatrix, NormStats, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::track::{FormantTrack, TrackFrame};

pub const FEATURE_MAGIC: &[u8; 8] = b"FTRKFEAT";
pub const NORM_MAGIC: &[u8; 8] = b"FTRKNORM";
pub const FORMAT_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// low-level byte plumbing, shared with the weights format in `model`
// ---------------------------------------------------------------------------

/// Cursor over a byte buffer that reports truncation as a typed error.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::TruncatedFile {
                needed: (self.pos + n) as u64,
                found: self.buf.len() as u64,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    /// Checks the 16-byte header (magic + version + reserved).
    pub fn header(&mut self, magic: &'static [u8; 8]) -> Result<()> {
        if self.take(8)? != magic {
            return Err(Error::BadMagic {
                expected: std::str::from_utf8(magic).unwrap_or("binary magic"),
            });
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch { found: version, supported: FORMAT_VERSION });
        }
        self.take(4)?;
        Ok(())
    }
}

pub(crate) fn push_header(out: &mut Vec<u8>, magic: &[u8; 8]) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&[0u8; 4]);
}

/// Writes a file through a temporary sibling and an atomic rename, so a
/// crash mid-write cannot leave a half-written artifact at `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// WAV (RIFF, PCM 16-bit, mono)
// ---------------------------------------------------------------------------

use crate::dsp::AudioClip;

/// Reads a PCM 16-bit mono WAV file. Samples are scaled to [-1, 1) by
/// 1/32768; the sample rate is returned as found (callers enforce 16 kHz).
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let bytes = fs::read(path)?;
    let mut r = ByteReader::new(&bytes);
    if r.take(4)? != b"RIFF" {
        return Err(Error::UnsupportedWav("missing RIFF header".into()));
    }
    r.take(4)?; // RIFF size, trusted from chunk walk instead
    if r.take(4)? != b"WAVE" {
        return Err(Error::UnsupportedWav("missing WAVE form type".into()));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while r.remaining() >= 8 {
        let id: [u8; 4] = r.take(4)?.try_into().unwrap();
        let size = r.u32()? as usize;
        let chunk = r.take(size)?;
        if size % 2 == 1 && r.remaining() > 0 {
            r.take(1)?; // chunks are word-aligned
        }
        match &id {
            b"fmt " => {
                if chunk.len() < 16 {
                    return Err(Error::UnsupportedWav("fmt chunk too short".into()));
                }
                let format = u16::from_le_bytes(chunk[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(chunk[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(chunk[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(chunk[14..16].try_into().unwrap());
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => data = Some(chunk),
            _ => {}
        }
    }
    let (format, channels, rate, bits) =
        fmt.ok_or_else(|| Error::UnsupportedWav("no fmt chunk".into()))?;
    if format != 1 {
        return Err(Error::UnsupportedWav(format!("audio format {format}, only PCM (1) supported")));
    }
    if channels != 1 {
        return Err(Error::UnsupportedWav(format!("{channels} channels, only mono supported")));
    }
    if bits != 16 {
        return Err(Error::UnsupportedWav(format!("{bits}-bit samples, only 16-bit supported")));
    }
    let data = data.ok_or_else(|| Error::UnsupportedWav("no data chunk".into()))?;
    let samples = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
        .collect();
    Ok(AudioClip::new(samples, rate))
}

/// Writes a PCM 16-bit mono WAV file; samples are clamped to [-1, 1] and
/// scaled by 32767.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let n = clip.samples.len();
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &clip.samples {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    write_atomic(path, &out)
}

// ---------------------------------------------------------------------------
// CSV track and label files
// ---------------------------------------------------------------------------

/// Header of the prediction-track CSV format.
pub const TRACK_HEADER: [&str; 5] = ["frame_index", "time_s", "f1_hz", "f2_hz", "f3_hz"];
/// Header of the label CSV format (track columns plus annotations).
pub const LABEL_HEADER: [&str; 7] =
    ["frame_index", "time_s", "f1_hz", "f2_hz", "f3_hz", "phone_label", "is_speech"];

fn check_header(got: &csv::StringRecord, want: &[&str], path: &Path) -> Result<()> {
    if got.len() != want.len() || got.iter().zip(want).any(|(g, w)| g != *w) {
        return Err(Error::Parse(format!(
            "{}: expected header {:?}, found {:?}",
            path.display(),
            want.join(","),
            got.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

fn field_f64(rec: &csv::StringRecord, idx: usize, row: usize, path: &Path) -> Result<f64> {
    rec.get(idx)
        .and_then(|s| s.trim().parse::<f64>().ok())
        .filter(|v| v.is_finite())
        .ok_or_else(|| {
            Error::Parse(format!(
                "{}: row {row}: column {} is not a finite number",
                path.display(),
                idx + 1
            ))
        })
}

fn field_index(rec: &csv::StringRecord, row: usize, path: &Path) -> Result<()> {
    let got = rec
        .get(0)
        .and_then(|s| s.trim().parse::<usize>().ok())
        .ok_or_else(|| Error::Parse(format!("{}: row {row}: bad frame_index", path.display())))?;
    if got != row {
        return Err(Error::Parse(format!(
            "{}: row {row}: frame_index {got} out of order",
            path.display()
        )));
    }
    Ok(())
}

/// Writes the prediction-track format: `frame_index,time_s,f1_hz,f2_hz,f3_hz`.
pub fn write_track_csv(path: &Path, track: &FormantTrack) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRACK_HEADER).map_err(csv_err)?;
    for (i, fr) in track.frames.iter().enumerate() {
        w.write_record([
            i.to_string(),
            track.time_s(i).to_string(),
            fr.f[0].to_string(),
            fr.f[1].to_string(),
            fr.f[2].to_string(),
        ])
        .map_err(csv_err)?;
    }
    write_atomic(path, &w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
}

/// Reads the prediction-track format back. Frames have no labels; a frame
/// is flagged as speech when any formant is defined.
pub fn read_track_csv(path: &Path) -> Result<FormantTrack> {
    let bytes = fs::read(path)?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    check_header(r.headers().map_err(csv_err)?, &TRACK_HEADER, path)?;
    let mut frames = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        field_index(&rec, row, path)?;
        let mut fr = TrackFrame::undefined();
        for slot in 0..3 {
            fr.f[slot] = field_f64(&rec, 2 + slot, row, path)?;
        }
        fr.is_speech = fr.f.iter().any(|&v| v > 0.0);
        frames.push(fr);
    }
    Ok(FormantTrack::new(frames))
}

/// Writes the label format used for training and evaluation references:
/// `frame_index,time_s,f1_hz,f2_hz,f3_hz,phone_label,is_speech`.
pub fn write_label_csv(path: &Path, track: &FormantTrack) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(LABEL_HEADER).map_err(csv_err)?;
    for (i, fr) in track.frames.iter().enumerate() {
        w.write_record([
            i.to_string(),
            track.time_s(i).to_string(),
            fr.f[0].to_string(),
            fr.f[1].to_string(),
            fr.f[2].to_string(),
            fr.phone_label.clone(),
            (fr.is_speech as u8).to_string(),
        ])
        .map_err(csv_err)?;
    }
    write_atomic(path, &w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
}

/// Reads the label format.
pub fn read_label_csv(path: &Path) -> Result<FormantTrack> {
    let bytes = fs::read(path)?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    check_header(r.headers().map_err(csv_err)?, &LABEL_HEADER, path)?;
    let mut frames = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        field_index(&rec, row, path)?;
        let mut fr = TrackFrame::undefined();
        for slot in 0..3 {
            fr.f[slot] = field_f64(&rec, 2 + slot, row, path)?;
        }
        fr.phone_label = rec.get(5).unwrap_or("").trim().to_string();
        fr.is_speech = match rec.get(6).map(str::trim) {
            Some("0") => false,
            Some("1") => true,
            other => {
                return Err(Error::Parse(format!(
                    "{}: row {row}: is_speech must be 0 or 1, found {:?}",
                    path.display(),
                    other.unwrap_or("")
                )))
            }
        };
        frames.push(fr);
    }
    Ok(FormantTrack::new(frames))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

// ---------------------------------------------------------------------------
// corpus manifests
// ---------------------------------------------------------------------------

/// One utterance entry of a corpus manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub audio_path: PathBuf,
    pub labels_path: PathBuf,
}

const MANIFEST_HEADER: [&str; 2] = ["audio_path", "labels_path"];

/// Writes a manifest; paths are stored as given (normally relative to the
/// manifest's directory).
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(MANIFEST_HEADER).map_err(csv_err)?;
    for e in entries {
        w.write_record([
            e.audio_path.to_string_lossy().into_owned(),
            e.labels_path.to_string_lossy().into_owned(),
        ])
        .map_err(csv_err)?;
    }
    write_atomic(path, &w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
}

/// Reads a manifest, resolving relative entries against the manifest's own
/// directory so a corpus can be moved as a unit.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let base = path.parent().unwrap_or(Path::new(""));
    let resolve = |s: &str| -> PathBuf {
        let p = PathBuf::from(s.trim());
        if p.is_absolute() {
            p
        } else {
            base.join(p)
        }
    };
    let bytes = fs::read(path)?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    check_header(r.headers().map_err(csv_err)?, &MANIFEST_HEADER, path)?;
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 2 || rec.get(0).unwrap_or("").trim().is_empty() {
            return Err(Error::Parse(format!("{}: row {row}: malformed entry", path.display())));
        }
        out.push(ManifestEntry {
            audio_path: resolve(rec.get(0).unwrap()),
            labels_path: resolve(rec.get(1).unwrap()),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// feature cache
// ---------------------------------------------------------------------------

/// Writes the per-utterance feature cache: header, `T` as u32, row-major
/// `T x 350` f32 values, then `T` mask bytes. The cache narrows to f32.
pub fn write_feature_cache(path: &Path, fm: &FeatureMatrix) -> Result<()> {
    let mut out = Vec::with_capacity(16 + 4 + fm.values.len() * 4 + fm.frames);
    push_header(&mut out, FEATURE_MAGIC);
    out.extend_from_slice(&(fm.frames as u32).to_le_bytes());
    for &v in &fm.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.extend(fm.mask.iter().map(|&m| m as u8));
    write_atomic(path, &out)
}

/// Reads a feature cache back (values widen to f64).
pub fn read_feature_cache(path: &Path) -> Result<FeatureMatrix> {
    let bytes = fs::read(path)?;
    let mut r = ByteReader::new(&bytes);
    r.header(FEATURE_MAGIC)?;
    let frames = r.u32()? as usize;
    let mut fm = FeatureMatrix::new(frames);
    for v in fm.values.iter_mut() {
        *v = r.f32()? as f64;
    }
    for (i, m) in r.take(frames)?.iter().enumerate() {
        fm.mask[i] = match m {
            0 => false,
            1 => true,
            other => {
                return Err(Error::Parse(format!(
                    "{}: mask byte {i} is {other}, expected 0 or 1",
                    path.display()
                )))
            }
        };
    }
    if r.remaining() != 0 {
        return Err(Error::Parse(format!(
            "{}: {} trailing bytes after feature data",
            path.display(),
            r.remaining()
        )));
    }
    Ok(fm)
}

// ---------------------------------------------------------------------------
// normalization statistics
// ---------------------------------------------------------------------------

/// Writes normalization statistics (f64, value-exact round trip).
pub fn write_norm_stats(path: &Path, stats: &NormStats) -> Result<()> {
    let mut out = Vec::with_capacity(16 + 4 + FEATURE_DIM * 16);
    push_header(&mut out, NORM_MAGIC);
    out.extend_from_slice(&(stats.mean.len() as u32).to_le_bytes());
    for &m in &stats.mean {
        out.extend_from_slice(&m.to_le_bytes());
    }
    for &s in &stats.std {
        out.extend_from_slice(&s.to_le_bytes());
    }
    write_atomic(path, &out)
}

/// Reads normalization statistics.
pub fn read_norm_stats(path: &Path) -> Result<NormStats> {
    let bytes = fs::read(path)?;
    let mut r = ByteReader::new(&bytes);
    r.header(NORM_MAGIC)?;
    let dim = r.u32()? as usize;
    if dim != FEATURE_DIM {
        return Err(Error::Parse(format!(
            "{}: stats dimension {dim}, expected {FEATURE_DIM}",
            path.display()
        )));
    }
    let mut stats = NormStats { mean: vec![0.0; dim], std: vec![0.0; dim] };
    for m in stats.mean.iter_mut() {
        *m = r.f64()?;
    }
    for s in stats.std.iter_mut() {
        *s = r.f64()?;
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_track() -> FormantTrack {
        let mut frames = Vec::new();
        for i in 0..5 {
            frames.push(TrackFrame {
                f: [400.0 + i as f64, 1400.0 + i as f64 * 0.5, 2400.125],
                phone_label: if i < 2 { "sil".into() } else { "aa".into() },
                is_speech: i >= 2,
            });
        }
        frames[0].f = [0.0; 3];
        FormantTrack::new(frames)
    }

    #[test]
    fn wav_round_trip_is_exact_on_the_i16_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let samples: Vec<f64> =
            (0..1009).map(|_| rng.gen_range(-32768i32..32768) as f64 / 32768.0).collect();
        write_wav(&path, &AudioClip::new(samples.clone(), 16000)).unwrap();
        let clip = read_wav(&path).unwrap();
        assert_eq!(clip.sample_rate, 16000);
        assert_eq!(clip.samples.len(), samples.len());
        for (got, want) in clip.samples.iter().zip(&samples) {
            // write scales by 32767, read by 1/32768: one LSB of slack
            assert!((got - want).abs() <= 2.0 / 32768.0, "{got} vs {want}");
        }
    }

    #[test]
    fn wav_rejects_stereo_and_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        write_wav(&path, &AudioClip::new(vec![0.1; 64], 16000)).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[22] = 2; // channel count
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_wav(&path), Err(Error::UnsupportedWav(_))));

        fs::write(&path, b"not a wav at all").unwrap();
        assert!(matches!(read_wav(&path), Err(Error::UnsupportedWav(_))));
    }

    #[test]
    fn wav_reports_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cut.wav");
        write_wav(&path, &AudioClip::new(vec![0.5; 256], 16000)).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..100]).unwrap();
        assert!(matches!(read_wav(&path), Err(Error::TruncatedFile { .. })));
    }

    #[test]
    fn track_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let track = sample_track();
        write_track_csv(&path, &track).unwrap();
        let back = read_track_csv(&path).unwrap();
        assert_eq!(back.len(), track.len());
        for (a, b) in back.frames.iter().zip(&track.frames) {
            assert_eq!(a.f, b.f);
        }
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("frame_index,time_s,f1_hz,f2_hz,f3_hz\n"));
    }

    #[test]
    fn label_csv_round_trip_preserves_labels_and_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.csv");
        let track = sample_track();
        write_label_csv(&path, &track).unwrap();
        let back = read_label_csv(&path).unwrap();
        assert_eq!(back, track);
    }

    #[test]
    fn label_csv_rejects_bad_speech_flag_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.csv");
        fs::write(
            &path,
            "frame_index,time_s,f1_hz,f2_hz,f3_hz,phone_label,is_speech\n0,0.005,1,2,3,aa,yes\n",
        )
        .unwrap();
        assert!(matches!(read_label_csv(&path), Err(Error::Parse(_))));
        fs::write(&path, "frame,oops\n").unwrap();
        assert!(matches!(read_label_csv(&path), Err(Error::Parse(_))));
    }

    #[test]
    fn manifest_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.manifest");
        let entries = vec![
            ManifestEntry {
                audio_path: PathBuf::from("wav/utt0.wav"),
                labels_path: PathBuf::from("labels/utt0.csv"),
            },
            ManifestEntry {
                audio_path: PathBuf::from("/abs/utt1.wav"),
                labels_path: PathBuf::from("/abs/utt1.csv"),
            },
        ];
        write_manifest(&path, &entries).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back[0].audio_path, dir.path().join("wav/utt0.wav"));
        assert_eq!(back[1].audio_path, PathBuf::from("/abs/utt1.wav"));
    }

    #[test]
    fn feature_cache_round_trip_and_error_classes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let mut fm = FeatureMatrix::new(7);
        for t in 0..7 {
            fm.mask[t] = t % 3 != 0;
            for v in fm.row_mut(t).iter_mut() {
                // stay on the f32 grid so the round trip is exact
                *v = rng.gen_range(-8.0f32..8.0) as f64;
            }
        }
        write_feature_cache(&path, &fm).unwrap();
        let back = read_feature_cache(&path).unwrap();
        assert_eq!(back.frames, fm.frames);
        assert_eq!(back.mask, fm.mask);
        assert_eq!(back.values, fm.values);

        let good = fs::read(&path).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(matches!(read_feature_cache(&path), Err(Error::BadMagic { .. })));

        let mut bad = good.clone();
        bad[8] = 99;
        fs::write(&path, &bad).unwrap();
        assert!(matches!(read_feature_cache(&path), Err(Error::VersionMismatch { found: 99, .. })));

        fs::write(&path, &good[..good.len() - 3]).unwrap();
        assert!(matches!(read_feature_cache(&path), Err(Error::TruncatedFile { .. })));

        let mut bad = good.clone();
        bad.push(0);
        fs::write(&path, &bad).unwrap();
        assert!(matches!(read_feature_cache(&path), Err(Error::Parse(_))));
    }

    #[test]
    fn norm_stats_round_trip_is_value_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.bin");
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let stats = NormStats {
            mean: (0..FEATURE_DIM).map(|_| rng.gen_range(-3.0..3.0)).collect(),
            std: (0..FEATURE_DIM).map(|_| rng.gen_range(1e-8..4.0)).collect(),
        };
        write_norm_stats(&path, &stats).unwrap();
        assert_eq!(read_norm_stats(&path).unwrap(), stats);
    }
}
