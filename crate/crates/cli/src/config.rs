//! The shared run-configuration file: one `key = value` document holding
//! both architecture and optimization settings, so an experiment is
//! reproducible from a single artifact. Command line flags override
//! individual keys after the file is parsed.

use formant_tracker::dsp::FrameSpec;
use formant_tracker::model::ModelConfig;
use formant_tracker::train::TrainConfig;
use formant_tracker::{Error, Result};

/// Keys understood by [`ModelConfig::from_text`]; everything else in a run
/// config must be an optimization key.
const MODEL_KEYS: [&str; 10] = [
    "n_blocks",
    "dilations",
    "channels",
    "kernel",
    "head_width",
    "input_dim",
    "dropout_p",
    "include_input_in_dense",
    "head_input",
    "target_scale",
];

/// Architecture, optimization and framing settings for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub frame: FrameSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            frame: FrameSpec::default(),
        }
    }
}

impl RunConfig {
    /// Parses a combined `key = value` document. Keys may appear in any
    /// order, missing keys keep their defaults, unknown or repeated keys
    /// are rejected. `#` starts a comment line.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut model_lines = String::new();
        let mut train = TrainConfig::default();
        let mut frame = FrameSpec::default();
        let mut seen: Vec<String> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("config line {}: no '='", lineno + 1)))?;
            let key = key.trim();
            let value = value.trim();
            if seen.iter().any(|s| s == key) {
                return Err(Error::Parse(format!("config key {key} repeated")));
            }
            seen.push(key.to_string());
            if MODEL_KEYS.contains(&key) {
                model_lines.push_str(line);
                model_lines.push('\n');
                continue;
            }
            match key {
                "lr_initial" => train.lr_initial = num(key, value)?,
                "lr_after_epoch50" => train.lr_after_epoch50 = num(key, value)?,
                "max_epochs" => train.max_epochs = num(key, value)?,
                "batch_utterances" => train.batch_utterances = num(key, value)?,
                "max_frames" => train.max_frames = num(key, value)?,
                "beta1" => train.beta1 = num(key, value)?,
                "beta2" => train.beta2 = num(key, value)?,
                "epsilon" => train.epsilon = num(key, value)?,
                "seed" => train.seed = num(key, value)?,
                "loss_weights" => {
                    let parts: Vec<f64> = value
                        .split(',')
                        .map(|p| num(key, p.trim()))
                        .collect::<Result<_>>()?;
                    train.loss_weights = parts.try_into().map_err(|_| {
                        Error::Parse("loss_weights: expected three comma-separated values".into())
                    })?;
                }
                "clip_global_norm" => {
                    train.clip_global_norm =
                        if value == "none" { None } else { Some(num(key, value)?) };
                }
                "window_ms" => frame.window_ms = num(key, value)?,
                "hop_ms" => frame.hop_ms = num(key, value)?,
                _ => return Err(Error::Parse(format!("unknown config key {key}"))),
            }
        }
        let model = ModelConfig::from_text(&model_lines)?;
        train.validate()?;
        frame.validate()?;
        Ok(RunConfig { model, train, frame })
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Parse(format!("config key {key}: bad value {value:?}")))
}
