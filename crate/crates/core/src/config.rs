//! Flat `key=value` run configuration.
//!
//! Blank lines and `#` comments are ignored; every key must be known. A run
//! writes its fully resolved config (`RunConfig::to_text`) next to its outputs.

use std::path::PathBuf;

use crate::adversarial::AttackConfig;
use crate::data::InputScaling;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::optim::SgdConfig;

/// Splits `key=value` lines; values may themselves contain `=`.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", no + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub sgd: SgdConfig,
    pub batch_size: usize,
    /// Directory holding the four standard MNIST files.
    pub data_dir: PathBuf,
    pub input_scaling: InputScaling,
    /// Use only the first N training / validation samples (0 = all).
    pub train_limit: usize,
    pub val_limit: usize,
    pub output_dir: PathBuf,
    /// Validation accuracy for the time-to-accuracy metric.
    pub target_acc: f64,
    pub attack: AttackConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            sgd: SgdConfig::default(),
            batch_size: 50,
            data_dir: PathBuf::from("data/mnist"),
            input_scaling: InputScaling::default(),
            train_limit: 0,
            val_limit: 0,
            output_dir: PathBuf::from("runs/default"),
            target_acc: 0.98,
            attack: AttackConfig::default(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("`{key}` = `{value}`: {e}")))
}

impl RunConfig {
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        if self.model.apply(key, value)? {
            return Ok(());
        }
        match key {
            "lr" => self.sgd.lr = parse_num(key, value)?,
            "momentum" => self.sgd.momentum = parse_num(key, value)?,
            "weight_decay" => self.sgd.weight_decay = parse_num(key, value)?,
            "decay_hyper" => self.sgd.decay_hyper = parse_num(key, value)?,
            "gamma" => self.sgd.gamma = parse_num(key, value)?,
            "epochs" => self.sgd.max_epochs = parse_num(key, value)?,
            "milestones" => {
                self.sgd.milestones = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_num(key, s))
                    .collect::<Result<_>>()?
            }
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "input_scaling" => self.input_scaling = value.parse()?,
            "train_limit" => self.train_limit = parse_num(key, value)?,
            "val_limit" => self.val_limit = parse_num(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "target_acc" => self.target_acc = parse_num(key, value)?,
            "attack_epsilon" => self.attack.epsilon = parse_num(key, value)?,
            "attack_samples" => self.attack.sample_count = parse_num(key, value)?,
            "attack_seed" => self.attack.seed = parse_num(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Defaults overridden by every line of `text`.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_key_values(text)? {
            cfg.apply(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides (e.g. from the command line).
    pub fn with_overrides<S: AsRef<str>>(mut self, overrides: &[S]) -> Result<Self> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            self.apply(k.trim(), v.trim())?;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.sgd.validate()?;
        self.model
            .kernel1
            .validate()
            .and(self.model.kernel2.validate())
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.target_acc) {
            return Err(Error::Config(format!(
                "target_acc must be in [0, 1], got {}",
                self.target_acc
            )));
        }
        self.attack.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let milestones: Vec<String> = self.sgd.milestones.iter().map(ToString::to_string).collect();
        format!(
            "# model\n{model}\
             # optimizer\nlr={lr}\nmomentum={mom}\nweight_decay={wd}\ndecay_hyper={dh}\ngamma={gamma}\n\
             milestones={ms}\nepochs={epochs}\nbatch_size={bs}\n\
             # data\ndata_dir={data}\ninput_scaling={scaling}\ntrain_limit={tl}\nval_limit={vl}\n\
             # run\noutput_dir={out}\ntarget_acc={target}\n\
             # attack\nattack_epsilon={eps}\nattack_samples={samples}\nattack_seed={aseed}\n",
            model = self.model.to_text(),
            lr = self.sgd.lr,
            mom = self.sgd.momentum,
            wd = self.sgd.weight_decay,
            dh = self.sgd.decay_hyper,
            gamma = self.sgd.gamma,
            ms = milestones.join(","),
            epochs = self.sgd.max_epochs,
            bs = self.batch_size,
            data = self.data_dir.display(),
            scaling = self.input_scaling,
            tl = self.train_limit,
            vl = self.val_limit,
            out = self.output_dir.display(),
            target = self.target_acc,
            eps = self.attack.epsilon,
            samples = self.attack.sample_count,
            aseed = self.attack.seed,
        )
    }
}
