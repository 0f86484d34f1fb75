//! Flat `key=value` hyperparameter configuration.
//!
//! Resolution order is: explicit override > config file > profile default.
//! The profile itself may be chosen by either source.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::matching::{Objective, Temperatures};
use crate::model::ModelConfig;
use crate::params::Dims;
use crate::training::{StageSchedule, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    Flickr,
    Coco,
}

impl Profile {
    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Flickr => "flickr",
            Profile::Coco => "coco",
        }
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flickr" => Ok(Profile::Flickr),
            "coco" => Ok(Profile::Coco),
            other => Err(Error::Config(format!(
                "unknown profile {other:?} (expected flickr or coco)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub profile: Profile,
    pub lambda1: f64,
    pub lambda2: f64,
    pub beta_w: f64,
    pub beta_o: f64,
    pub gamma: f64,
    pub d: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Joint embedding width.
    pub h: usize,
    /// Word embedding width.
    pub q: usize,
    /// Expected objects per image.
    pub k: usize,
    pub epochs: usize,
    pub seed: u64,
    pub objective: Objective,
    pub schedule: StageSchedule,
    pub clip_norm: Option<f64>,
}

pub const KEYS: &[&str] = &[
    "profile",
    "lambda1",
    "lambda2",
    "beta_w",
    "beta_o",
    "gamma",
    "d",
    "lr",
    "batch_size",
    "h",
    "q",
    "k",
    "epochs",
    "seed",
    "objective",
    "schedule",
    "clip_norm",
];

impl Config {
    pub fn defaults(profile: Profile) -> Self {
        let (beta_o, lr) = match profile {
            Profile::Flickr => (0.3, 0.0002),
            Profile::Coco => (0.0, 0.0005),
        };
        Self {
            profile,
            lambda1: 9.0,
            lambda2: 4.0,
            beta_w: 0.3,
            beta_o,
            gamma: 0.2,
            d: 10,
            lr,
            batch_size: 128,
            h: 1024,
            q: 300,
            k: 36,
            epochs: 30,
            seed: 0,
            objective: Objective::Ensemble,
            schedule: StageSchedule::MultiStage,
            clip_norm: Some(2.0),
        }
    }

    /// Builds a config from an optional file body and ordered overrides.
    pub fn resolve(file: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let file_entries = match file {
            Some(text) => parse_entries(text)?,
            None => Vec::new(),
        };
        let profile_from = |entries: &[(String, String)]| {
            entries
                .iter()
                .rev()
                .find(|(k, _)| k == "profile")
                .map(|(_, v)| v.clone())
        };
        let profile = match profile_from(overrides).or_else(|| profile_from(&file_entries)) {
            Some(p) => p.parse()?,
            None => Profile::Flickr,
        };
        let mut cfg = Config::defaults(profile);
        for (k, v) in file_entries.iter().chain(overrides) {
            if k != "profile" {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
        }
        match key {
            "profile" => self.profile = value.parse()?,
            "lambda1" => self.lambda1 = num(key, value)?,
            "lambda2" => self.lambda2 = num(key, value)?,
            "beta_w" => self.beta_w = num(key, value)?,
            "beta_o" => self.beta_o = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "d" => self.d = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "h" => self.h = num(key, value)?,
            "q" => self.q = num(key, value)?,
            "k" => self.k = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "objective" => self.objective = value.parse()?,
            "schedule" => self.schedule = value.parse()?,
            "clip_norm" => {
                self.clip_norm = match value {
                    "none" | "off" => None,
                    v => Some(num(key, v)?),
                }
            }
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.temperatures().validate()?;
        if self.h == 0 || self.q == 0 || self.k == 0 {
            return Err(Error::Config("h, q and k must be positive".into()));
        }
        self.train_config().validate()
    }

    pub fn temperatures(&self) -> Temperatures {
        Temperatures {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            beta_w: self.beta_w,
            beta_o: self.beta_o,
        }
    }

    pub fn model_config(&self, vocab: usize, image_features: usize) -> ModelConfig {
        ModelConfig {
            dims: Dims {
                vocab,
                image_features,
                word_dim: self.q,
                hidden: self.h,
            },
            temps: self.temperatures(),
            objective: self.objective,
            rve: self.schedule.final_rve(self.epochs),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            gamma: self.gamma,
            negatives: self.d,
            learning_rate: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            clip_norm: self.clip_norm,
            schedule: self.schedule,
        }
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "profile" => self.profile.as_str().to_string(),
            "lambda1" => self.lambda1.to_string(),
            "lambda2" => self.lambda2.to_string(),
            "beta_w" => self.beta_w.to_string(),
            "beta_o" => self.beta_o.to_string(),
            "gamma" => self.gamma.to_string(),
            "d" => self.d.to_string(),
            "lr" => self.lr.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "h" => self.h.to_string(),
            "q" => self.q.to_string(),
            "k" => self.k.to_string(),
            "epochs" => self.epochs.to_string(),
            "seed" => self.seed.to_string(),
            "objective" => self.objective.as_str().to_string(),
            "schedule" => self.schedule.as_str().to_string(),
            "clip_norm" => self.clip_norm.map_or("none".to_string(), |c| c.to_string()),
            _ => return None,
        })
    }

    /// Every key, one `key=value` per line; [`Config::resolve`] reads it back
    /// exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key}={}", self.get(key).expect("known key"));
        }
        out
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_entries(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected key=value, got {line:?}",
                n + 1
            )));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
