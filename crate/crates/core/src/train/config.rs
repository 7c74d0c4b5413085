use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs at which the learning rate is multiplied by `lr_decay_factor`.
    pub lr_milestones: Vec<usize>,
    pub lr_decay_factor: f64,
    pub folds: usize,
    pub seed: u64,
    /// Worker threads; folds of a cross-validation run concurrently up to
    /// this many at a time.
    pub threads: usize,
    /// Soft dice smoothing constant.
    pub dice_smooth: f64,
    /// Stop after this many optimizer steps (0 = no cap).
    pub max_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-4,
            batch_size: 32,
            epochs: 100,
            lr_milestones: vec![25, 180],
            lr_decay_factor: 0.1,
            folds: 4,
            seed: 0,
            threads: 1,
            dice_smooth: 1.0,
            max_steps: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.lr_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return fail(format!("lr_milestones must be strictly increasing, got {:?}", self.lr_milestones));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return fail(format!("lr_decay_factor must lie in (0, 1], got {}", self.lr_decay_factor));
        }
        if self.folds < 2 {
            return fail(format!("folds must be at least 2, got {}", self.folds));
        }
        if self.threads == 0 {
            return fail("threads must be at least 1".into());
        }
        if !(self.dice_smooth >= 0.0) {
            return fail(format!("dice_smooth must be non-negative, got {}", self.dice_smooth));
        }
        Ok(())
    }

    /// `base · factor^(number of milestones ≤ epoch)`
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.lr_milestones.iter().filter(|&&m| m <= epoch).count();
        self.learning_rate * self.lr_decay_factor.powi(passed as i32)
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let milestones = self.lr_milestones.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("learning_rate".into(), format!("{}", self.learning_rate)),
            ("batch_size".into(), self.batch_size.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("lr_milestones".into(), milestones),
            ("lr_decay_factor".into(), format!("{}", self.lr_decay_factor)),
            ("folds".into(), self.folds.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("threads".into(), self.threads.to_string()),
            ("dice_smooth".into(), format!("{}", self.dice_smooth)),
            ("max_steps".into(), self.max_steps.to_string()),
        ]
    }

    /// Apply one `key = value` setting; `Ok(false)` for a key that is not a
    /// training key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "learning_rate" => self.learning_rate = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "lr_milestones" => {
                self.lr_milestones = if value.trim().is_empty() {
                    Vec::new()
                } else {
                    value.split(',').map(|s| num(key, s)).collect::<Result<_>>()?
                }
            }
            "lr_decay_factor" => self.lr_decay_factor = num(key, value)?,
            "folds" => self.folds = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "threads" => self.threads = num(key, value)?,
            "dice_smooth" => self.dice_smooth = num(key, value)?,
            "max_steps" => self.max_steps = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}
