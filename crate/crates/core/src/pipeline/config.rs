//! Flat `key = value` run configuration.
//!
//! ```text
//! # comments and blank lines are ignored
//! paradigm = ar
//! beta = 0.1
//! schedule = 0.4, 0.6, 0.8, 1.0, 1.2
//! ```
//!
//! Unknown or repeated keys are errors. Keys not given take the paradigm's
//! defaults, so `paradigm` is resolved first wherever it appears.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::dpo::default_beta;
use crate::error::{Error, Result};
use crate::pairgen::DEFAULT_GAP_THRESHOLD;
use crate::toymodels::{
    Paradigm, SamplingHyper, DEFAULT_DURATION_SCALES, DEFAULT_FM_STEPS, DEFAULT_MGM_STEPS, DEFAULT_TEMPERATURES,
    DEFAULT_TOP_K, DEFAULT_TOP_P,
};

pub const DEFAULT_LR_AR_MGM: f64 = 5e-6;
pub const DEFAULT_LR_FM: f64 = 8e-6;
pub const DEFAULT_WARMUP: u64 = 4000;
pub const DEFAULT_EPOCHS: usize = 1;
pub const DEFAULT_BATCH_SIZE: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub paradigm: Paradigm,
    pub beta: f64,
    pub base_lr: f64,
    pub warmup: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub gap_threshold: f64,
    /// Temperatures (AR, MGM) or duration scales (FM), one per sample.
    pub schedule: Vec<f64>,
}

pub fn default_lr(paradigm: Paradigm) -> f64 {
    match paradigm {
        Paradigm::Fm => DEFAULT_LR_FM,
        Paradigm::Ar | Paradigm::Mgm => DEFAULT_LR_AR_MGM,
    }
}

const KEYS: [&str; 9] = [
    "paradigm",
    "beta",
    "base_lr",
    "warmup",
    "epochs",
    "batch_size",
    "seed",
    "gap_threshold",
    "schedule",
];

impl RunConfig {
    pub fn defaults(paradigm: Paradigm) -> Self {
        let schedule = match paradigm {
            Paradigm::Fm => DEFAULT_DURATION_SCALES.to_vec(),
            Paradigm::Ar | Paradigm::Mgm => DEFAULT_TEMPERATURES.to_vec(),
        };
        Self {
            paradigm,
            beta: default_beta(paradigm),
            base_lr: default_lr(paradigm),
            warmup: DEFAULT_WARMUP,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
            gap_threshold: DEFAULT_GAP_THRESHOLD,
            schedule,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config { line: 0, message: m.into() });
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive");
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be positive");
        }
        if self.warmup == 0 || self.epochs == 0 || self.batch_size == 0 {
            return bad("warmup, epochs and batch_size must be positive");
        }
        if !(self.gap_threshold >= 0.0 && self.gap_threshold.is_finite()) {
            return bad("gap_threshold must be non-negative");
        }
        if self.schedule.is_empty() || self.schedule.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad("schedule entries must be positive");
        }
        Ok(())
    }

    /// The schedule as sampling hyperparameters for this paradigm.
    pub fn sampling_schedule(&self) -> Vec<SamplingHyper> {
        self.schedule
            .iter()
            .map(|&v| match self.paradigm {
                Paradigm::Ar => SamplingHyper::Ar {
                    temperature: v,
                    top_k: DEFAULT_TOP_K,
                    top_p: DEFAULT_TOP_P,
                },
                Paradigm::Fm => SamplingHyper::Fm {
                    duration_scale: v,
                    steps: DEFAULT_FM_STEPS,
                },
                Paradigm::Mgm => SamplingHyper::Mgm {
                    temperature: v,
                    steps: DEFAULT_MGM_STEPS,
                },
            })
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                message: "expected `key = value`".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config {
                    line,
                    message: format!("unknown key `{key}`"),
                });
            }
            if values.insert(key, (line, value)).is_some() {
                return Err(Error::Config {
                    line,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }
        let paradigm = match values.get("paradigm") {
            Some(&(line, v)) => Paradigm::parse(v).ok_or_else(|| Error::Config {
                line,
                message: format!("unknown paradigm `{v}`"),
            })?,
            None => Paradigm::Ar,
        };
        let mut c = Self::defaults(paradigm);
        for (&key, &(line, v)) in &values {
            let err = |what: &str| Error::Config {
                line,
                message: format!("`{key}`: expected {what}, got `{v}`"),
            };
            let float = || v.parse::<f64>().map_err(|_| err("a number"));
            let int = || v.parse::<u64>().map_err(|_| err("a non-negative integer"));
            match key {
                "paradigm" => {}
                "beta" => c.beta = float()?,
                "base_lr" => c.base_lr = float()?,
                "warmup" => c.warmup = int()?,
                "epochs" => c.epochs = int()? as usize,
                "batch_size" => c.batch_size = int()? as usize,
                "seed" => c.seed = int()?,
                "gap_threshold" => c.gap_threshold = float()?,
                "schedule" => {
                    c.schedule = v
                        .split(',')
                        .map(|s| s.trim().parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| err("comma-separated numbers"))?
                }
                _ => unreachable!("key list checked above"),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Text form accepted by [`RunConfig::parse`]; floats use Rust's shortest
    /// round-trip representation.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let sched: Vec<String> = self.schedule.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(s, "paradigm = {}", self.paradigm.as_str());
        let _ = writeln!(s, "beta = {:?}", self.beta);
        let _ = writeln!(s, "base_lr = {:?}", self.base_lr);
        let _ = writeln!(s, "warmup = {}", self.warmup);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "gap_threshold = {:?}", self.gap_threshold);
        let _ = writeln!(s, "schedule = {}", sched.join(", "));
        s
    }
}
