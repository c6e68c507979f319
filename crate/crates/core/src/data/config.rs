//! `key = value` configuration files covering model, training and synthetic-data settings.

use std::path::Path;

use toml::{Table, Value};

use super::SynthConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// All tunable settings. Keys absent from a file keep their defaults.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Settings {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

fn float(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(Error::validation(format!("config key `{key}` expects a number"))),
    }
}

fn uint(key: &str, v: &Value) -> Result<u64> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(Error::validation(format!("config key `{key}` expects a non-negative integer"))),
    }
}

fn usize_of(key: &str, v: &Value) -> Result<usize> {
    uint(key, v).map(|u| u as usize)
}

fn list<T>(key: &str, v: &Value, item: impl Fn(&str, &Value) -> Result<T>) -> Result<Vec<T>> {
    match v {
        Value::Array(a) => a.iter().map(|x| item(key, x)).collect(),
        _ => Err(Error::validation(format!("config key `{key}` expects an array"))),
    }
}

impl Settings {
    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::validation(format!("config: {}", e.message())))?;
        let mut s = Self::default();
        for (key, v) in &table {
            s.set(key, v)?;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate()
    }

    /// Sets the seed for both training and data generation.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.synth.seed = seed;
        self
    }

    fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        let (m, t, y) = (&mut self.model, &mut self.train, &mut self.synth);
        match key {
            "embed_dim" => m.embed_dim = usize_of(key, v)?,
            "lstm_hidden" => m.lstm_hidden = usize_of(key, v)?,
            "lstm_layers" => m.lstm_layers = usize_of(key, v)?,
            "attn_hidden" => m.attn_hidden = usize_of(key, v)?,
            "fc_dims" => m.fc_dims = list(key, v, usize_of)?,
            "dropout" => m.dropout = float(key, v)?,
            "max_seq_len" => m.max_seq_len = usize_of(key, v)?,

            "lr" => t.lr = float(key, v)?,
            "weight_decay" => t.weight_decay = float(key, v)?,
            "class_weights" => {
                let w = list(key, v, float)?;
                t.class_weights = w
                    .try_into()
                    .map_err(|_| Error::validation("config key `class_weights` expects two numbers"))?;
            }
            "warmup_epochs" => t.warmup_epochs = usize_of(key, v)?,
            "max_epochs" => t.max_epochs = usize_of(key, v)?,
            "patience" => t.patience = usize_of(key, v)?,
            "clip_norm" => t.clip_norm = float(key, v)?,
            "batch_size" => t.batch_size = usize_of(key, v)?,
            "val_fraction" => t.val_fraction = float(key, v)?,
            "seed" => {
                let seed = uint(key, v)?;
                t.seed = seed;
                y.seed = seed;
            }

            "n_records" => y.n_records = usize_of(key, v)?,
            "class1_fraction" => y.class1_fraction = float(key, v)?,
            "class0_mean" => y.class0.mean = float(key, v)?,
            "class0_std" => y.class0.std = float(key, v)?,
            "class0_burst_amplitude" => y.class0.burst_amplitude = float(key, v)?,
            "class0_burst_width" => y.class0.burst_width = usize_of(key, v)?,
            "class1_mean" => y.class1.mean = float(key, v)?,
            "class1_std" => y.class1.std = float(key, v)?,
            "class1_burst_amplitude" => y.class1.burst_amplitude = float(key, v)?,
            "class1_burst_width" => y.class1.burst_width = usize_of(key, v)?,
            "min_len" => y.min_len = usize_of(key, v)?,
            "max_len" => y.max_len = usize_of(key, v)?,
            "test_fraction" => y.test_fraction = float(key, v)?,
            "dataset" => {
                y.dataset = v
                    .as_str()
                    .ok_or_else(|| Error::validation("config key `dataset` expects a string"))?
                    .to_string()
            }
            other => return Err(Error::validation(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }
}
