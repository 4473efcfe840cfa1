use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Learning-rate shape after warm-up.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    Cosine,
    Constant,
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::Cosine => "cosine",
            Schedule::Constant => "constant",
        })
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "cosine" => Ok(Schedule::Cosine),
            "constant" => Ok(Schedule::Constant),
            other => Err(Error::config("schedule", format!("unknown schedule `{other}`"))),
        }
    }
}

/// Per-epoch learning rate: linear ramp `base * (e + 1) / warmup` during
/// warm-up, then cosine decay towards zero (or constant).
pub fn lr_at(epoch: usize, epochs: usize, warmup: usize, base: f64, schedule: Schedule) -> f64 {
    if epoch < warmup {
        return base * (epoch + 1) as f64 / warmup as f64;
    }
    match schedule {
        Schedule::Constant => base,
        Schedule::Cosine => {
            let span = epochs.saturating_sub(warmup).max(1) as f64;
            let t = (epoch - warmup) as f64 / span;
            base * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
        }
    }
}
