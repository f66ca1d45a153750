//! Run configuration: flat key=value text body (or a JSON object as an
//! alternative), full CLI-flag overrides, strict validation, and an exact
//! snapshot round trip.

use binet_core::dte::{ClampMode, EstimatorMode};
use binet_core::error::{BinetError, Result};
use binet_core::model::{Binarizer, TrainConfig};
use std::path::PathBuf;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: String,
    pub dataset: String,
    pub data_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub epochs: usize,
    pub lr0: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub batch_size: usize,
    pub seed: u64,
    pub estimator: EstimatorMode,
    pub clamp_mode: ClampMode,
    pub binarizer: Binarizer,
    pub epsilon: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub delta: f64,
    pub augment: bool,
    /// Save checkpoints/epoch_k.bin every k epochs; 0 keeps only the final.
    pub checkpoint_every: usize,
    /// Synthetic dataset knobs.
    pub synth_train: usize,
    pub synth_test: usize,
    pub noise: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: "desk-cnn".into(),
            dataset: "synth-digits".into(),
            data_path: None,
            out_dir: PathBuf::from("runs/default"),
            epochs: 400,
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 128,
            seed: 0,
            estimator: EstimatorMode::Dte,
            clamp_mode: ClampMode::Literal,
            binarizer: Binarizer::Imb,
            epsilon: 0.1,
            t_min: 0.1,
            t_max: 10.0,
            delta: 0.1,
            augment: false,
            checkpoint_every: 0,
            synth_train: 4000,
            synth_test: 1000,
            noise: 0.2,
        }
    }
}

fn bad(key: &str, value: &str, what: &str) -> BinetError {
    BinetError::InvalidArgument(format!("config key {key}={value}: expected {what}"))
}

impl RunConfig {
    /// Apply one key=value assignment. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "model" => self.model = value.to_string(),
            "dataset" => self.dataset = value.to_string(),
            "data_path" => {
                self.data_path =
                    if value.is_empty() { None } else { Some(PathBuf::from(value)) }
            }
            "out_dir" => self.out_dir = PathBuf::from(value),
            "epochs" => self.epochs = value.parse().map_err(|_| bad(key, value, "integer"))?,
            "lr0" => self.lr0 = value.parse().map_err(|_| bad(key, value, "real"))?,
            "momentum" => {
                self.momentum = value.parse().map_err(|_| bad(key, value, "real"))?
            }
            "weight_decay" => {
                self.weight_decay = value.parse().map_err(|_| bad(key, value, "real"))?
            }
            "batch_size" => {
                self.batch_size = value.parse().map_err(|_| bad(key, value, "integer"))?
            }
            "seed" => self.seed = value.parse().map_err(|_| bad(key, value, "integer"))?,
            "estimator" => self.estimator = EstimatorMode::parse(value)?,
            "clamp_mode" => self.clamp_mode = ClampMode::parse(value)?,
            "binarizer" => self.binarizer = Binarizer::parse(value)?,
            "epsilon" => self.epsilon = value.parse().map_err(|_| bad(key, value, "real"))?,
            "t_min" => self.t_min = value.parse().map_err(|_| bad(key, value, "real"))?,
            "t_max" => self.t_max = value.parse().map_err(|_| bad(key, value, "real"))?,
            "delta" => self.delta = value.parse().map_err(|_| bad(key, value, "real"))?,
            "augment" => {
                self.augment = value.parse().map_err(|_| bad(key, value, "true|false"))?
            }
            "checkpoint_every" => {
                self.checkpoint_every =
                    value.parse().map_err(|_| bad(key, value, "integer"))?
            }
            "synth_train" => {
                self.synth_train = value.parse().map_err(|_| bad(key, value, "integer"))?
            }
            "synth_test" => {
                self.synth_test = value.parse().map_err(|_| bad(key, value, "integer"))?
            }
            "noise" => self.noise = value.parse().map_err(|_| bad(key, value, "real"))?,
            _ => {
                return Err(BinetError::InvalidArgument(format!(
                    "unknown config key {key:?}"
                )))
            }
        }
        Ok(())
    }

    /// Parse a config body: flat key=value lines with '#' comments, or a
    /// JSON object if the first non-space character is '{'.
    pub fn parse(body: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply_body(body)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_body(&mut self, body: &str) -> Result<()> {
        if body.trim_start().starts_with('{') {
            let value: serde_json::Value = serde_json::from_str(body).map_err(|e| {
                BinetError::InvalidArgument(format!("config is not valid JSON: {e}"))
            })?;
            let obj = value.as_object().ok_or_else(|| {
                BinetError::InvalidArgument("JSON config must be an object".into())
            })?;
            for (key, val) in obj {
                let as_text = match val {
                    serde_json::Value::String(s) => s.clone(),
                    serde_json::Value::Bool(b) => b.to_string(),
                    serde_json::Value::Number(n) => n.to_string(),
                    other => {
                        return Err(BinetError::InvalidArgument(format!(
                            "config key {key:?} has unsupported JSON value {other}"
                        )))
                    }
                };
                self.set(key, &as_text)?;
            }
            return Ok(());
        }
        for (lineno, raw) in body.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                BinetError::InvalidArgument(format!(
                    "config line {}: expected key=value, got {line:?}",
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.to_train_config().validate()?;
        if self.synth_train == 0 || self.synth_test == 0 {
            return Err(BinetError::InvalidArgument("synthetic split sizes must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(BinetError::InvalidArgument("noise must be in [0,1]".into()));
        }
        Ok(())
    }

    /// Serialize as the canonical key=value snapshot; `parse` of the output
    /// reproduces the config exactly.
    pub fn snapshot(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        put("model", self.model.clone());
        put("dataset", self.dataset.clone());
        put(
            "data_path",
            self.data_path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        );
        put("out_dir", self.out_dir.display().to_string());
        put("epochs", self.epochs.to_string());
        put("lr0", format!("{:?}", self.lr0));
        put("momentum", format!("{:?}", self.momentum));
        put("weight_decay", format!("{:?}", self.weight_decay));
        put("batch_size", self.batch_size.to_string());
        put("seed", self.seed.to_string());
        put("estimator", self.estimator.as_str().to_string());
        put("clamp_mode", self.clamp_mode.as_str().to_string());
        put("binarizer", self.binarizer.as_str().to_string());
        put("epsilon", format!("{:?}", self.epsilon));
        put("t_min", format!("{:?}", self.t_min));
        put("t_max", format!("{:?}", self.t_max));
        put("delta", format!("{:?}", self.delta));
        put("augment", self.augment.to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        put("synth_train", self.synth_train.to_string());
        put("synth_test", self.synth_test.to_string());
        put("noise", format!("{:?}", self.noise));
        s
    }

    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr0: self.lr0,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            seed: self.seed,
            estimator: self.estimator,
            clamp_mode: self.clamp_mode,
            epsilon: self.epsilon,
            t_min: self.t_min,
            t_max: self.t_max,
            delta: self.delta,
            augment: self.augment,
        }
    }
}
