//! Plain-text run configuration.
//!
//! One `key = value` pair per line; `#` starts a comment. Unknown keys and
//! unparsable values are errors naming the key. Lists are comma separated
//! (`k_l` also accepts `5-7-9`).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{SyntheticSpec, TextureLayout};
use crate::error::{Error, Result};
use crate::network::{NetworkConfig, Variant};
use crate::training::TrainConfig;

/// Architecture, optimisation and data settings of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub data: SyntheticSpec,
    /// Source of `data.textures`.
    pub textures: TextureLayout,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let data = SyntheticSpec::default();
        RunConfig {
            network: NetworkConfig {
                num_classes: data.num_classes,
                ..NetworkConfig::default()
            },
            train: TrainConfig::default(),
            data,
            textures: TextureLayout::default(),
            out_dir: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "variant",
    "agfs",
    "stage_channels",
    "blocks_per_stage",
    "c_prime",
    "k_l",
    "k_h",
    "num_classes",
    "epochs",
    "warmup_epochs",
    "base_lr",
    "momentum",
    "batch_size",
    "seed",
    "deterministic",
    "schedule",
    "augment",
    "samples_per_class",
    "val_per_class",
    "image_size",
    "noise_sigma",
    "contrast",
    "position_jitter",
    "orientation_jitter",
    "brightness_jitter",
    "data_seed",
    "base_frequency",
    "frequency_step",
    "orientation_step",
    "micro_edge",
    "out_dir",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn parse_list<const N: usize>(key: &str, value: &str, seps: &[char]) -> Result<[usize; N]> {
    let parts: Vec<&str> = value.split(|c| seps.contains(&c)).map(str::trim).collect();
    if parts.len() == 1 && N > 1 && key == "blocks_per_stage" {
        let v = parse(key, parts[0])?;
        return Ok([v; N]);
    }
    if parts.len() != N {
        return Err(Error::config(key, format!("expected {N} values, got {}", parts.len())));
    }
    let mut out = [0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = parse(key, p)?;
    }
    Ok(out)
}

fn parse_pair(key: &str, value: &str) -> Result<[f64; 2]> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    match parts[..] {
        [one] => {
            let v = parse(key, one)?;
            Ok([v, v])
        }
        [a, b] => Ok([parse(key, a)?, parse(key, b)?]),
        _ => Err(Error::config(key, "expected one or two values")),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::config(key, format!("expected on/off, got `{value}`"))),
    }
}

fn join(values: &[usize]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        let mut agfs = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                let key = line.split_whitespace().next().unwrap_or(line);
                Error::config(key, format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::config(key, "unknown key"));
            }
            if seen.iter().any(|k| k == key) {
                return Err(Error::config(key, "given more than once"));
            }
            seen.push(key.to_string());
            let net = &mut cfg.network;
            let tr = &mut cfg.train;
            let data = &mut cfg.data;
            match key {
                "variant" => net.variant = value.parse()?,
                "agfs" => agfs = Some(parse_bool(key, value)?),
                "stage_channels" => net.stage_channels = parse_list(key, value, &[','])?,
                "blocks_per_stage" => net.blocks_per_stage = parse_list(key, value, &[','])?,
                "c_prime" => net.c_prime = parse(key, value)?,
                "k_l" => net.k_l = parse_list(key, value, &[',', '-'])?,
                "k_h" => net.k_h = parse(key, value)?,
                "num_classes" => {
                    let n = parse(key, value)?;
                    net.num_classes = n;
                    data.num_classes = n;
                }
                "epochs" => tr.epochs = parse(key, value)?,
                "warmup_epochs" => tr.warmup_epochs = parse(key, value)?,
                "base_lr" => tr.base_lr = parse(key, value)?,
                "momentum" => tr.momentum = parse(key, value)?,
                "batch_size" => tr.batch_size = parse(key, value)?,
                "seed" => tr.seed = parse(key, value)?,
                "deterministic" => tr.deterministic = parse_bool(key, value)?,
                "schedule" => tr.schedule = value.parse()?,
                "augment" => tr.augment = parse_bool(key, value)?,
                "samples_per_class" => data.samples_per_class = parse(key, value)?,
                "val_per_class" => data.val_per_class = parse(key, value)?,
                "image_size" => data.image_size = parse(key, value)?,
                "noise_sigma" => data.noise_sigma = parse(key, value)?,
                "contrast" => data.contrast = parse(key, value)?,
                "position_jitter" => data.position_jitter = parse(key, value)?,
                "orientation_jitter" => data.orientation_jitter = parse(key, value)?,
                "brightness_jitter" => data.brightness_jitter = parse(key, value)?,
                "data_seed" => data.seed = parse(key, value)?,
                "base_frequency" => cfg.textures.base_frequency = parse(key, value)?,
                "frequency_step" => cfg.textures.frequency_step = parse(key, value)?,
                "orientation_step" => cfg.textures.orientation_step = parse(key, value)?,
                "micro_edge" => cfg.textures.micro_edge = parse_pair(key, value)?,
                "out_dir" => cfg.out_dir = Some(PathBuf::from(value)),
                _ => unreachable!("key list and match arms agree"),
            }
        }
        cfg.data.textures = cfg.textures.textures(cfg.data.num_classes);
        match (agfs, cfg.network.variant) {
            (Some(true), Variant::SdeSsr) => cfg.network.variant = Variant::Full,
            (Some(false), Variant::Full) => cfg.network.variant = Variant::SdeSsr,
            (Some(true), v) if v < Variant::SdeSsr => {
                return Err(Error::config("agfs", format!("attention gate needs SDE and SSR, variant is {v}")))
            }
            _ => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()?;
        self.data.validate()?;
        if self.data.image_size % NetworkConfig::INPUT_MULTIPLE != 0 {
            return Err(Error::config(
                "image_size",
                format!("must be a multiple of {}", NetworkConfig::INPUT_MULTIPLE),
            ));
        }
        Ok(())
    }

    /// Canonical text form; parsing it reproduces `self` when
    /// `data.textures` was built from `textures`.
    pub fn to_text(&self) -> String {
        let (n, t, d) = (&self.network, &self.train, &self.data);
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("variant", n.variant.to_string());
        kv("stage_channels", join(&n.stage_channels));
        kv("blocks_per_stage", join(&n.blocks_per_stage));
        kv("c_prime", n.c_prime.to_string());
        kv("k_l", join(&n.k_l));
        kv("k_h", n.k_h.to_string());
        kv("num_classes", n.num_classes.to_string());
        kv("epochs", t.epochs.to_string());
        kv("warmup_epochs", t.warmup_epochs.to_string());
        kv("base_lr", t.base_lr.to_string());
        kv("momentum", t.momentum.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("seed", t.seed.to_string());
        kv("deterministic", t.deterministic.to_string());
        kv("schedule", t.schedule.to_string());
        kv("augment", t.augment.to_string());
        kv("samples_per_class", d.samples_per_class.to_string());
        kv("val_per_class", d.val_per_class.to_string());
        kv("image_size", d.image_size.to_string());
        kv("noise_sigma", d.noise_sigma.to_string());
        kv("contrast", d.contrast.to_string());
        kv("position_jitter", d.position_jitter.to_string());
        kv("orientation_jitter", d.orientation_jitter.to_string());
        kv("brightness_jitter", d.brightness_jitter.to_string());
        kv("data_seed", d.seed.to_string());
        let tex = &self.textures;
        kv("base_frequency", tex.base_frequency.to_string());
        kv("frequency_step", tex.frequency_step.to_string());
        kv("orientation_step", tex.orientation_step.to_string());
        kv("micro_edge", format!("{},{}", tex.micro_edge[0], tex.micro_edge[1]));
        if let Some(dir) = &self.out_dir {
            kv("out_dir", dir.display().to_string());
        }
        s
    }
}
