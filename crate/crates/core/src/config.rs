use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where the message coordinate starts before the first infection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageInit {
    /// Initial embedding of the cascade's first infected user.
    Root,
    /// Mean of all initial user embeddings.
    Mean,
}

/// How cascade timestamps map onto system time in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rescale {
    /// `t / t_max`
    Max,
    /// `(t - t_first) / (t_max - t_first)`
    Offset,
}

/// Rule deciding when a trajectory meets the message.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encounter {
    /// Grid point of minimum distance, earliest on ties.
    Argmin,
    /// First grid point within the radius; falls back to the argmin.
    Threshold(f64),
}

impl std::str::FromStr for Encounter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "argmin" {
            return Ok(Encounter::Argmin);
        }
        match s.strip_prefix("threshold:").map(str::parse::<f64>) {
            Some(Ok(r)) if r >= 0.0 => Ok(Encounter::Threshold(r)),
            _ => Err(Error::validation(format!("unknown encounter rule {s:?} (argmin | threshold:<r>)"))),
        }
    }
}

impl std::str::FromStr for MessageInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "root" => Ok(MessageInit::Root),
            "mean" => Ok(MessageInit::Mean),
            _ => Err(Error::validation(format!("unknown m0 rule {s:?} (root | mean)"))),
        }
    }
}

impl std::str::FromStr for Rescale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Rescale::Max),
            "offset" => Ok(Rescale::Offset),
            _ => Err(Error::validation(format!("unknown rescale rule {s:?} (max | offset)"))),
        }
    }
}

/// Every hyperparameter of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Embedding dimension.
    pub dim: usize,
    /// Time-encoding dimension.
    pub time_dim: usize,
    /// Lazy mass kept at the centre of each mass distribution.
    pub alpha: f64,
    pub dropout: f64,
    pub lr: f64,
    pub epochs: usize,
    pub solver_steps: usize,
    pub grid: usize,
    pub seed: u64,
    pub train_frac: f64,
    pub val_frac: f64,
    /// Weight of the trajectory loss in the joint objective.
    pub lambda_ode: f64,
    pub m0: MessageInit,
    pub rescale: Rescale,
    pub encounter: Encounter,
    pub clamp_negative_w: bool,
    /// Evaluate on the validation split every this many epochs.
    pub val_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dim: 64,
            time_dim: 16,
            alpha: 0.5,
            dropout: 0.3,
            lr: 1e-3,
            epochs: 50,
            solver_steps: 32,
            grid: 256,
            seed: 0,
            train_frac: 0.8,
            val_frac: 0.1,
            lambda_ode: 1.0,
            m0: MessageInit::Root,
            rescale: Rescale::Max,
            encounter: Encounter::Argmin,
            clamp_negative_w: true,
            val_every: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let rate = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::validation(format!("{name} = {v} is outside [0, 1]")))
            }
        };
        rate("alpha", self.alpha)?;
        rate("train_frac", self.train_frac)?;
        rate("val_frac", self.val_frac)?;
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::validation(format!("dropout = {} is outside [0, 1)", self.dropout)));
        }
        if self.train_frac + self.val_frac > 1.0 {
            return Err(Error::validation("train_frac + val_frac exceeds 1"));
        }
        for (name, v) in [("dim", self.dim), ("time_dim", self.time_dim), ("solver_steps", self.solver_steps), ("grid", self.grid)] {
            if v == 0 {
                return Err(Error::validation(format!("{name} must be at least 1")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::validation(format!("lr = {} must be positive", self.lr)));
        }
        if !(self.lambda_ode >= 0.0 && self.lambda_ode.is_finite()) {
            return Err(Error::validation("lambda_ode must be non-negative"));
        }
        Ok(())
    }
}
