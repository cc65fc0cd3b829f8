//! Training loop: Adam, the two-step learning-rate schedule, utterance
//! batching with padding and masking, and best-validation checkpoint
//! selection.
//!
//! Everything is deterministic in `TrainConfig::seed`: the per-epoch
//! shuffle, the per-batch dropout streams and the parameter initialization
//! all derive from it, so two runs with the same seed produce bitwise
//! identical weights and records.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::features::{apply_norm, extract_features};
use crate::dsp::{FeatureMatrix, FrameSpec, NormStats, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::io::{read_label_csv, read_manifest, read_wav};
use crate::model::{backward, build, forward, ModelConfig, ModelGrads, ModelWeights};
use crate::nn::ops::{bn_update_running, Phase, BN_MOMENTUM};
use crate::nn::{masked_mae_backward, Mask, Tensor3};
use crate::track::FormantTrack;
use crate::util::stream_seed;

/// Optimization hyperparameters. Defaults follow the training recipe:
/// lr 0.001 dropping to 0.0005 after epoch 50, at most 100 epochs, batches
/// of 4 utterances padded to at most 710 frames, Adam(0.9, 0.999, 1e-7).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr_initial: f64,
    pub lr_after_epoch50: f64,
    pub max_epochs: usize,
    pub batch_utterances: usize,
    pub max_frames: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub loss_weights: [f64; 3],
    /// Optional global-norm gradient clip; `None` (the default) disables it.
    pub clip_global_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_initial: 0.001,
            lr_after_epoch50: 0.0005,
            max_epochs: 100,
            batch_utterances: 4,
            max_frames: 710,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            seed: 0,
            loss_weights: [1.0 / 3.0; 3],
            clip_global_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_initial > 0.0) || !(self.lr_after_epoch50 > 0.0) {
            return Err(Error::InvalidParam("learning rates must be positive".into()));
        }
        if self.max_epochs == 0 || self.batch_utterances == 0 || self.max_frames == 0 {
            return Err(Error::InvalidParam(
                "epochs, batch size and max frames must be at least 1".into(),
            ));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidParam(format!("{name} must be in [0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParam("adam epsilon must be positive".into()));
        }
        if self.loss_weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidParam("loss weights must be non-negative".into()));
        }
        if let Some(c) = self.clip_global_norm {
            if !(c > 0.0) {
                return Err(Error::InvalidParam("clip norm must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Learning rate for a 1-based epoch index: the initial rate through epoch
/// 50, then the reduced rate from epoch 51 on (a single step, not a decay).
pub fn lr_schedule(cfg: &TrainConfig, epoch: usize) -> f64 {
    debug_assert!(epoch >= 1, "epochs are 1-based");
    if epoch <= 50 {
        cfg.lr_initial
    } else {
        cfg.lr_after_epoch50
    }
}

// ---------------------------------------------------------------------------
// training data
// ---------------------------------------------------------------------------

/// One utterance ready for the trainer: normalized features plus per-frame
/// targets (Hz) and speech flags on the feature grid.
#[derive(Debug, Clone)]
pub struct TrainUtterance {
    pub features: FeatureMatrix,
    /// Per formant, one Hz value per feature frame (0 = undefined).
    pub targets: [Vec<f64>; 3],
    pub is_speech: Vec<bool>,
}

impl TrainUtterance {
    /// Pairs features with a reference track. The label grid carries one
    /// leading and one trailing frame beyond the feature grid (windowing
    /// trims a frame at each end), so tracks of length T+2 map to feature
    /// frame i via label frame i+1; length-T tracks map directly.
    pub fn from_track(features: FeatureMatrix, track: &FormantTrack) -> Result<Self> {
        let t = features.frames;
        let offset = if track.len() == t + 2 {
            1
        } else if track.len() == t {
            0
        } else {
            return Err(Error::ShapeMismatch(format!(
                "track has {} frames, features have {t} (expected {t} or {})",
                track.len(),
                t + 2
            )));
        };
        let mut targets = [vec![0.0; t], vec![0.0; t], vec![0.0; t]];
        let mut is_speech = vec![false; t];
        for i in 0..t {
            let fr = &track.frames[i + offset];
            for k in 0..3 {
                targets[k][i] = fr.f[k];
            }
            is_speech[i] = fr.is_speech;
        }
        Ok(TrainUtterance { features, targets, is_speech })
    }

    pub fn frames(&self) -> usize {
        self.features.frames
    }

    /// A frame participates in training when its features are usable, the
    /// labels call it speech, and all three reference formants are defined.
    pub fn valid_flags(&self) -> Vec<bool> {
        (0..self.frames())
            .map(|i| {
                self.features.mask[i]
                    && self.is_speech[i]
                    && self.targets.iter().all(|f| f[i] > 0.0)
            })
            .collect()
    }
}

/// Reads every manifest entry into its reference track and unnormalized
/// features. `expected_rate` rejects audio at any other sample rate;
/// `None` accepts anything (window sizes derive from milliseconds).
pub fn load_manifest_features(
    manifest: &Path,
    spec: &FrameSpec,
    expected_rate: Option<u32>,
) -> Result<Vec<(FeatureMatrix, FormantTrack)>> {
    let entries = read_manifest(manifest)?;
    if entries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut out = Vec::with_capacity(entries.len());
    for e in &entries {
        let clip = read_wav(&e.audio_path)?;
        if let Some(rate) = expected_rate {
            if clip.sample_rate != rate {
                return Err(Error::SampleRateMismatch { found: clip.sample_rate, expected: rate });
            }
        }
        let features = extract_features(&clip, spec)?;
        let track = read_label_csv(&e.labels_path)?;
        out.push((features, track));
    }
    Ok(out)
}

/// Normalizes extracted features in place and pairs each with its track.
pub fn into_train_utterances(
    pairs: Vec<(FeatureMatrix, FormantTrack)>,
    stats: &NormStats,
) -> Result<Vec<TrainUtterance>> {
    pairs
        .into_iter()
        .map(|(mut fm, track)| {
            apply_norm(&mut fm, stats);
            TrainUtterance::from_track(fm, &track)
        })
        .collect()
}

/// A padded batch of utterances.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor3,
    /// Per-formant target planes in Hz, zero at invalid frames.
    pub targets: [Tensor3; 3],
    pub mask: Mask,
    /// Indices into the utterance list this batch was assembled from.
    pub utterances: Vec<usize>,
}

impl Batch {
    /// Packs the selected utterances into B×`pad_to`×`input_dim` tensors,
    /// zero-padding features and targets and masking out padding, non-speech
    /// frames and frames with undefined reference formants. The first
    /// `input_dim` feature columns feed the network; the full 350 in normal
    /// use, fewer only for scaled-down test models.
    pub fn assemble(
        utts: &[TrainUtterance],
        indices: &[usize],
        pad_to: usize,
        input_dim: usize,
    ) -> Result<Batch> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if input_dim > FEATURE_DIM {
            return Err(Error::ShapeMismatch(format!(
                "model wants {input_dim} input channels, features provide {FEATURE_DIM}"
            )));
        }
        let b = indices.len();
        let mut x = Tensor3::zeros(b, pad_to, input_dim);
        let mut targets =
            [Tensor3::zeros(b, pad_to, 1), Tensor3::zeros(b, pad_to, 1), Tensor3::zeros(b, pad_to, 1)];
        let mut mask = Mask::empty(b, pad_to);
        for (bi, &ui) in indices.iter().enumerate() {
            let u = &utts[ui];
            let valid = u.valid_flags();
            for t in 0..u.frames().min(pad_to) {
                x.frame_mut(bi, t).copy_from_slice(&u.features.row(t)[..input_dim]);
                for k in 0..3 {
                    let idx = targets[k].idx(bi, t, 0);
                    targets[k].data[idx] = u.targets[k][t];
                }
                mask.set(bi, t, valid[t]);
            }
        }
        Ok(Batch { x, targets, mask, utterances: indices.to_vec() })
    }
}

/// Frames actually worth computing for a group of utterances: everything
/// past the last valid frame plus the receptive radius is provably inert
/// (padding features are zero, batch statistics and the loss are masked),
/// so batches are padded to this length instead of the full maximum. The
/// equivalence is bitwise and covered by a test.
fn effective_frames(
    utts: &[TrainUtterance],
    indices: &[usize],
    radius: usize,
    max_frames: usize,
) -> usize {
    let mut last_valid = 0usize;
    for &ui in indices {
        let valid = utts[ui].valid_flags();
        if let Some(lv) = (0..valid.len()).rev().find(|&i| valid[i]) {
            last_valid = last_valid.max(lv + 1);
        }
    }
    (last_valid + radius).clamp(1, max_frames)
}

/// Splits utterances into shuffled batches for one epoch. The shuffle is
/// drawn from `stream_seed(cfg.seed, "shuffle", epoch)`; batches keep the
/// shuffled order and the tail batch may be short.
pub fn make_batches(
    utts: &[TrainUtterance],
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    epoch: usize,
) -> Result<Vec<Batch>> {
    if utts.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for u in utts {
        if u.frames() > cfg.max_frames {
            return Err(Error::UtteranceTooLong { frames: u.frames(), max: cfg.max_frames });
        }
    }
    let mut order: Vec<usize> = (0..utts.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, "shuffle", epoch as u64));
    order.shuffle(&mut rng);
    chunk_batches(utts, &order, cfg, model_cfg)
}

/// Deterministic, unshuffled batches (validation and evaluation).
pub fn make_batches_in_order(
    utts: &[TrainUtterance],
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
) -> Result<Vec<Batch>> {
    if utts.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let order: Vec<usize> = (0..utts.len()).collect();
    chunk_batches(utts, &order, cfg, model_cfg)
}

fn chunk_batches(
    utts: &[TrainUtterance],
    order: &[usize],
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
) -> Result<Vec<Batch>> {
    order
        .chunks(cfg.batch_utterances)
        .map(|idxs| {
            let pad = effective_frames(utts, idxs, model_cfg.receptive_radius() + 1, cfg.max_frames);
            Batch::assemble(utts, idxs, pad, model_cfg.input_dim)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// First and second moment estimates, one pair per trainable tensor in
/// canonical order, plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(weights: &ModelWeights) -> Self {
        let shapes: Vec<usize> = weights.trainable().iter().map(|(_, w)| w.len()).collect();
        AdamState {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }
}

/// One Adam update: `m ← β₁m + (1−β₁)g`, `v ← β₂v + (1−β₂)g²`, bias-corrected
/// `m̂, v̂`, then `θ ← θ − lr·m̂/(√v̂ + ε)`. Rejects non-finite gradients with
/// the offending tensor's name.
pub fn adam_step(
    weights: &mut ModelWeights,
    grads: &ModelGrads,
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    let grad_list = grads.trainable();
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (slot, (name, theta)) in weights.trainable_mut().into_iter().enumerate() {
        let (gname, g) = &grad_list[slot];
        debug_assert_eq!(&name, gname);
        if theta.len() != g.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam: {name} has {} weights but {} gradients",
                theta.len(),
                g.len()
            )));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGrad { tensor: name });
        }
        let m = &mut state.m[slot];
        let v = &mut state.v[slot];
        for i in 0..theta.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            theta[i] -= lr * mhat / (vhat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

/// Scales all gradients by `c/‖g‖` when the global norm exceeds `c`.
fn clip_gradients(grads: &mut ModelGrads, c: f64) {
    let mut sq = 0.0;
    for (_, g) in grads.trainable() {
        for &x in g {
            sq += x * x;
        }
    }
    let norm = sq.sqrt();
    if norm > c {
        let scale = c / norm;
        for bg in grads.blocks.iter_mut() {
            for g in [
                &mut bg.conv_w,
                &mut bg.conv_b,
                &mut bg.bn_gamma,
                &mut bg.bn_beta,
                &mut bg.glu_w,
                &mut bg.glu_b,
                &mut bg.glu_v,
                &mut bg.glu_c,
            ] {
                for x in g.iter_mut() {
                    *x *= scale;
                }
            }
        }
        for hg in grads.heads.iter_mut() {
            for g in [&mut hg.w1, &mut hg.b1, &mut hg.w2, &mut hg.b2] {
                for x in g.iter_mut() {
                    *x *= scale;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// the loop
// ---------------------------------------------------------------------------

/// One epoch's bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub epoch: usize,
    /// Pooled combined loss over the epoch's training frames, in
    /// target-scale units (kHz by default).
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

/// Writes records as CSV: `epoch,train_loss,val_loss,lr,seconds`.
pub fn write_records(path: &Path, records: &[TrainRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["epoch", "train_loss", "val_loss", "lr", "seconds"]).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_loss.to_string(),
            r.lr.to_string(),
            r.seconds.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("csv: {e}"))
}

/// Result of [`train`]: the best-validation weights, the per-epoch record,
/// and which epoch the weights came from.
pub struct TrainOutcome {
    pub weights: ModelWeights,
    pub records: Vec<TrainRecord>,
    pub best_epoch: usize,
}

/// Per-formant absolute-error sums and counts, pooled across batches so an
/// epoch's loss does not depend on how utterances were grouped.
#[derive(Default)]
struct LossPool {
    sum: [f64; 3],
    n: [usize; 3],
}

impl LossPool {
    fn add(&mut self, raw: &[Tensor3; 3], batch: &Batch, scale: f64) {
        for k in 0..3 {
            for b in 0..batch.mask.b {
                for t in 0..batch.mask.t {
                    if batch.mask.get(b, t) {
                        let target = batch.targets[k].at(b, t, 0) / scale;
                        self.sum[k] += (raw[k].at(b, t, 0) - target).abs();
                        self.n[k] += 1;
                    }
                }
            }
        }
    }

    fn combined(&self, weights: [f64; 3]) -> Result<f64> {
        let mut total = 0.0;
        for k in 0..3 {
            if self.n[k] == 0 {
                return Err(Error::NoValidFrames);
            }
            total += weights[k] * self.sum[k] / self.n[k] as f64;
        }
        Ok(total)
    }
}

/// Scaled target planes for the loss (Hz → target-scale units).
fn scaled_targets(batch: &Batch, scale: f64) -> [Tensor3; 3] {
    let mut out = batch.targets.clone();
    for plane in out.iter_mut() {
        for v in plane.data.iter_mut() {
            *v /= scale;
        }
    }
    out
}

/// Validation loss in infer mode (running BN statistics, no dropout).
pub fn validation_loss(
    weights: &ModelWeights,
    val: &[TrainUtterance],
    cfg: &TrainConfig,
) -> Result<f64> {
    let batches = make_batches_in_order(val, cfg, &weights.config)?;
    let mut pool = LossPool::default();
    for batch in &batches {
        let (_, cache) = forward(weights, &batch.x, &batch.mask, Phase::Infer, 0)?;
        pool.add(&cache.head_raw, batch, weights.config.target_scale);
    }
    pool.combined(cfg.loss_weights)
}

/// Trains from scratch and returns the weights of the epoch with the lowest
/// validation loss. Fully reproducible from `cfg.seed`.
///
/// `on_epoch` sees each finished epoch's record; returning `false` stops
/// training early (the best weights seen so far are still returned).
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    train_set: &[TrainUtterance],
    val_set: &[TrainUtterance],
    mut on_epoch: impl FnMut(&TrainRecord) -> bool,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut weights = build(model_cfg, cfg.seed)?;
    let mut adam = AdamState::new(&weights);
    let scale = model_cfg.target_scale;
    let mut best: Option<(f64, usize, ModelWeights)> = None;
    let mut records = Vec::with_capacity(cfg.max_epochs);

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let lr = lr_schedule(cfg, epoch);
        let batches = make_batches(train_set, cfg, model_cfg, epoch)?;
        let mut pool = LossPool::default();
        for (bi, batch) in batches.iter().enumerate() {
            let dropout_seed =
                stream_seed(cfg.seed, "dropout", ((epoch as u64) << 32) | bi as u64);
            let (_, cache) = forward(&weights, &batch.x, &batch.mask, Phase::Train, dropout_seed)?;
            for (block, stats) in weights.blocks.iter_mut().zip(&cache.bn_stats) {
                bn_update_running(&mut block.bn_running, stats, BN_MOMENTUM);
            }

            let targets = scaled_targets(batch, scale);
            pool.add(&cache.head_raw, batch, scale);
            let mut batch_loss = 0.0;
            let mut d_raw: Vec<Tensor3> = Vec::with_capacity(3);
            for k in 0..3 {
                let (l, _) = crate::nn::masked_mae(&cache.head_raw[k], &targets[k], &batch.mask)?;
                batch_loss += cfg.loss_weights[k] * l;
                let mut g = masked_mae_backward(&cache.head_raw[k], &targets[k], &batch.mask)?;
                for v in g.data.iter_mut() {
                    *v *= cfg.loss_weights[k];
                }
                d_raw.push(g);
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            let mut grads =
                backward(&weights, &cache, &batch.mask, [&d_raw[0], &d_raw[1], &d_raw[2]], Phase::Train)?;
            if let Some(c) = cfg.clip_global_norm {
                clip_gradients(&mut grads, c);
            }
            adam_step(&mut weights, &grads, &mut adam, lr, cfg)?;
        }

        let train_loss = pool.combined(cfg.loss_weights)?;
        let val_loss = validation_loss(&weights, val_set, cfg)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: usize::MAX });
        }
        if best.as_ref().map_or(true, |(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, weights.clone()));
        }
        let record = TrainRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        let keep_going = on_epoch(&record);
        records.push(record);
        if !keep_going {
            break;
        }
    }

    let (_, best_epoch, best_weights) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { weights: best_weights, records, best_epoch })
}
