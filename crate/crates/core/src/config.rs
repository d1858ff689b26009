//! Run configuration: a flat `key = value` text format. Unknown keys are
//! hard errors so typos cannot silently fall back to defaults.

use crate::error::{Error, Result};
use crate::model::{LossKind, ModelConfig};
use crate::training::TrainConfig;

/// Missingness scheme applied to the dataset before training/evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MissingScheme {
    None,
    Point,
    Block,
}

impl MissingScheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            MissingScheme::None => "none",
            MissingScheme::Point => "point",
            MissingScheme::Block => "block",
        }
    }
}

impl std::str::FromStr for MissingScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(MissingScheme::None),
            "point" => Ok(MissingScheme::Point),
            "block" => Ok(MissingScheme::Block),
            other => Err(Error::Config(format!("unknown missing scheme {other:?}"))),
        }
    }
}

/// Everything a run needs. Defaults follow the experimental protocol:
/// 12-step look-back and horizon, Adam at 1e-3, 30 epochs, 6/2/2 split,
/// Gumbel temperature 0.05.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub tau: usize,
    pub upsilon: usize,
    pub d: usize,
    pub m_hyperedges: usize,
    pub k_patches: usize,
    pub p_hops: usize,
    pub hgat_heads: usize,
    pub hgat_layers: usize,
    pub hgt_heads: usize,
    pub hgt_layers: usize,
    pub dropout: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub split: [f64; 3],
    pub loss: LossKind,
    pub seed: u64,
    pub missing: MissingScheme,
    pub missing_ratio: f64,
    pub failure_prob: f64,
    pub spatial: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            tau: 12,
            upsilon: 12,
            d: 16,
            m_hyperedges: 8,
            k_patches: 4,
            p_hops: 2,
            hgat_heads: 4,
            hgat_layers: 1,
            hgt_heads: 4,
            hgt_layers: 2,
            dropout: 0.1,
            gamma: 0.05,
            batch_size: 32,
            lr: 1e-3,
            epochs: 30,
            split: [0.6, 0.2, 0.2],
            loss: LossKind::Mae,
            seed: 0,
            missing: MissingScheme::None,
            missing_ratio: 0.0,
            failure_prob: 0.0015,
            spatial: true,
        }
    }
}

impl RunConfig {
    /// Parse the flat text format, starting from defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value', got {raw:?}", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value {v:?} for key {key}")))
        }
        match key {
            "tau" => self.tau = num(key, value)?,
            "upsilon" => self.upsilon = num(key, value)?,
            "d" => self.d = num(key, value)?,
            "m_hyperedges" => self.m_hyperedges = num(key, value)?,
            "k_patches" => self.k_patches = num(key, value)?,
            "p_hops" => self.p_hops = num(key, value)?,
            "hgat_heads" => self.hgat_heads = num(key, value)?,
            "hgat_layers" => self.hgat_layers = num(key, value)?,
            "hgt_heads" => self.hgt_heads = num(key, value)?,
            "hgt_layers" => self.hgt_layers = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "split" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(Error::Config(format!(
                        "split wants three comma-separated ratios, got {value:?}"
                    )));
                }
                for (i, p) in parts.iter().enumerate() {
                    self.split[i] = num("split", p)?;
                }
            }
            "loss" => self.loss = value.parse()?,
            "seed" => self.seed = num(key, value)?,
            "missing" => self.missing = value.parse()?,
            "missing_ratio" => self.missing_ratio = num(key, value)?,
            "failure_prob" => self.failure_prob = num(key, value)?,
            "spatial" => {
                self.spatial = match value {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(Error::Config(format!("bad value {other:?} for key spatial")))
                    }
                }
            }
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Serialize back to the flat text format (round-trips with `parse`).
    pub fn to_text(&self) -> String {
        format!(
            "tau = {}\nupsilon = {}\nd = {}\nm_hyperedges = {}\nk_patches = {}\np_hops = {}\n\
             hgat_heads = {}\nhgat_layers = {}\nhgt_heads = {}\nhgt_layers = {}\n\
             dropout = {}\ngamma = {}\nbatch_size = {}\nlr = {}\nepochs = {}\n\
             split = {},{},{}\nloss = {}\nseed = {}\nmissing = {}\nmissing_ratio = {}\n\
             failure_prob = {}\nspatial = {}\n",
            self.tau,
            self.upsilon,
            self.d,
            self.m_hyperedges,
            self.k_patches,
            self.p_hops,
            self.hgat_heads,
            self.hgat_layers,
            self.hgt_heads,
            self.hgt_layers,
            self.dropout,
            self.gamma,
            self.batch_size,
            self.lr,
            self.epochs,
            self.split[0],
            self.split[1],
            self.split[2],
            self.loss.as_str(),
            self.seed,
            self.missing.as_str(),
            self.missing_ratio,
            self.failure_prob,
            self.spatial,
        )
    }

    /// Architecture slice of the config, bound to a node count.
    pub fn model_config(&self, n_nodes: usize) -> ModelConfig {
        ModelConfig {
            n_nodes,
            tau: self.tau,
            upsilon: self.upsilon,
            d: self.d,
            m_hyperedges: self.m_hyperedges,
            k_patches: self.k_patches,
            p_hops: self.p_hops,
            hgat_heads: self.hgat_heads,
            hgat_layers: self.hgat_layers,
            hgt_heads: self.hgt_heads,
            hgt_layers: self.hgt_layers,
            dropout: self.dropout,
            gamma: self.gamma,
            hard_sampling: true,
            ln_eps: 1e-5,
            loss_kind: self.loss,
            spatial: self.spatial,
        }
    }

    /// Optimization slice of the config.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            ..TrainConfig::default()
        }
    }
}
