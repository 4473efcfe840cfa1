use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Architectural ablation variants, smallest first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// (a) compressed deepest stage straight into the classifier.
    Baseline,
    /// (b) SDE branches fused with the deepest stage.
    Sde,
    /// (c) SDE + SSR branches, no attention gate.
    SdeSsr,
    /// (d) SDE + SSR + attention-guided feature selection.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::Sde, Variant::SdeSsr, Variant::Full];

    pub fn uses_sde(self) -> bool {
        self >= Variant::Sde
    }

    pub fn uses_ssr(self) -> bool {
        self >= Variant::SdeSsr
    }

    pub fn uses_agfs(self) -> bool {
        self == Variant::Full
    }

    /// Channels (in units of C') entering the fusion convolution.
    pub fn fusion_inputs(self) -> Option<usize> {
        match self {
            Variant::Baseline => None,
            Variant::Sde => Some(4),
            Variant::SdeSsr | Variant::Full => Some(7),
        }
    }

    pub fn letter(self) -> char {
        match self {
            Variant::Baseline => 'a',
            Variant::Sde => 'b',
            Variant::SdeSsr => 'c',
            Variant::Full => 'd',
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Variant::Baseline => "baseline",
            Variant::Sde => "sde",
            Variant::SdeSsr => "sde_ssr",
            Variant::Full => "full",
        };
        f.write_str(name)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" | "baseline" => Ok(Variant::Baseline),
            "b" | "sde" => Ok(Variant::Sde),
            "c" | "sde_ssr" | "sde+ssr" => Ok(Variant::SdeSsr),
            "d" | "full" => Ok(Variant::Full),
            other => Err(Error::config("variant", format!("unknown variant `{other}`"))),
        }
    }
}

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    pub variant: Variant,
    pub image_channels: usize,
    pub stage_channels: [usize; 4],
    pub blocks_per_stage: [usize; 4],
    pub c_prime: usize,
    /// Low-pass window per SSR stage.
    pub k_l: [usize; 3],
    pub k_h: usize,
    pub num_classes: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            variant: Variant::Full,
            image_channels: 3,
            stage_channels: [32, 64, 128, 256],
            blocks_per_stage: [1, 1, 1, 1],
            c_prime: 64,
            k_l: [5, 7, 9],
            k_h: 3,
            num_classes: 8,
        }
    }
}

impl NetworkConfig {
    /// Total downsampling of the deepest stage.
    pub const INPUT_MULTIPLE: usize = 32;

    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.contains(&0) {
            return Err(Error::config("stage_channels", "channels must be positive"));
        }
        if self.blocks_per_stage.contains(&0) {
            return Err(Error::config("blocks_per_stage", "blocks must be positive"));
        }
        if self.c_prime < 2 {
            return Err(Error::config("c_prime", "must be at least 2"));
        }
        if self.k_h % 2 == 0 {
            return Err(Error::config("k_h", "window must be odd"));
        }
        if self.k_l.iter().any(|k| k % 2 == 0) {
            return Err(Error::config("k_l", "windows must be odd"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes", "need at least two classes"));
        }
        if self.image_channels == 0 {
            return Err(Error::config("image_channels", "must be positive"));
        }
        Ok(())
    }

    /// Mid width of the attention branch.
    pub fn agfs_mid_channels(&self) -> usize {
        (self.c_prime / 2).max(1)
    }
}
