//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default; unknown keys are rejected.

use std::fmt::Write as _;
use std::path::Path;

use crate::dcm::DcmConfig;
use crate::error::{Error, Result};
use crate::model::{BackboneConfig, ModelConfig};
use crate::nn::Activation;
use crate::pipeline::TrainConfig;

/// `(key, default, description)` for every recognized key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("trispec.G", "5", "number of spectral groups"),
    ("trispec.wavelength_descending", "false", "bands are stored from long to short wavelength"),
    ("backbone.widths", "16,32,64,64", "channel width of each of the four backbone stages"),
    ("backbone.convs", "2,2,3,3", "3x3 convolutions in each backbone stage"),
    ("dcm.C", "32", "channels entering the context module"),
    ("dcm.Z", "16", "number of homogeneous areas"),
    ("dcm.T", "5", "soft clustering iterations"),
    ("dcm.heads", "2", "attention heads (must divide dcm.C)"),
    ("dcm.mlp_ratio", "2", "hidden width of transformer MLPs as a multiple of dcm.C"),
    ("dcm.activation", "relu", "transformer MLP activation: relu or gelu"),
    ("dcm.use_F", "true", "concatenate the reduced backbone feature"),
    ("dcm.use_RAC", "false", "concatenate the regional context feature"),
    ("dcm.use_GAC", "true", "concatenate the global context feature"),
    ("model.classes", "0", "class count; 0 infers it from the training labels"),
    ("model.norm_mean", "0.5,0.5,0.5", "per-channel mean subtracted after scaling pixels to [0,1]"),
    ("model.norm_std", "0.25,0.25,0.25", "per-channel standard deviation used for scaling"),
    ("train.epochs", "30", "passes over the tri-spectral image set"),
    ("train.batch", "1", "images per iteration"),
    ("train.lr", "0.001", "initial backbone learning rate"),
    ("train.momentum", "0.9", "SGD momentum"),
    ("train.weight_decay", "0.0001", "L2 weight decay"),
    ("train.poly_power", "0.9", "exponent of the polynomial learning-rate decay"),
    ("train.head_lr_mult", "10", "learning-rate multiplier for non-backbone parameters"),
    ("train.seed", "0", "seed for initialization and shuffling"),
    ("train.val_fraction", "0.05", "fraction of images held out for validation"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub groups: usize,
    pub wavelength_descending: bool,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for Config {
    fn default() -> Self {
        let mut cfg = Self {
            groups: 0,
            wavelength_descending: false,
            model: ModelConfig {
                backbone: BackboneConfig::default(),
                dcm: DcmConfig::default(),
                classes: 0,
                norm_mean: [0.0; 3],
                norm_std: [1.0; 3],
            },
            train: TrainConfig::default(),
        };
        for (key, value, _) in KEYS {
            cfg.set(key, value).expect("built-in defaults parse");
        }
        cfg
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

fn parse_list<T: std::str::FromStr + Copy, const N: usize>(key: &str, value: &str) -> Result<[T; N]> {
    let items = value.split(',').map(|v| parse(key, v.trim())).collect::<Result<Vec<T>>>()?;
    items.try_into().map_err(|_| Error::Config(format!("{key}: expected {N} comma-separated values")))
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let dcm = &mut self.model.dcm;
        let train = &mut self.train;
        match key {
            "trispec.G" => self.groups = parse(key, value)?,
            "trispec.wavelength_descending" => self.wavelength_descending = parse(key, value)?,
            "backbone.widths" => self.model.backbone.widths = parse_list(key, value)?,
            "backbone.convs" => self.model.backbone.convs = parse_list(key, value)?,
            "dcm.C" => dcm.channels = parse(key, value)?,
            "dcm.Z" => dcm.areas = parse(key, value)?,
            "dcm.T" => dcm.iterations = parse(key, value)?,
            "dcm.heads" => dcm.heads = parse(key, value)?,
            "dcm.mlp_ratio" => dcm.mlp_ratio = parse(key, value)?,
            "dcm.activation" => dcm.activation = value.parse()?,
            "dcm.use_F" => dcm.use_f = parse(key, value)?,
            "dcm.use_RAC" => dcm.use_rac = parse(key, value)?,
            "dcm.use_GAC" => dcm.use_gac = parse(key, value)?,
            "model.classes" => self.model.classes = parse(key, value)?,
            "model.norm_mean" => self.model.norm_mean = parse_list(key, value)?,
            "model.norm_std" => self.model.norm_std = parse_list(key, value)?,
            "train.epochs" => train.epochs = parse(key, value)?,
            "train.batch" => train.batch = parse(key, value)?,
            "train.lr" => train.lr = parse(key, value)?,
            "train.momentum" => train.momentum = parse(key, value)?,
            "train.weight_decay" => train.weight_decay = parse(key, value)?,
            "train.poly_power" => train.poly_power = parse(key, value)?,
            "train.head_lr_mult" => train.head_lr_mult = parse(key, value)?,
            "train.seed" => train.seed = parse(key, value)?,
            "train.val_fraction" => train.val_fraction = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let (m, d, t) = (&self.model, &self.model.dcm, &self.train);
        Some(match key {
            "trispec.G" => self.groups.to_string(),
            "trispec.wavelength_descending" => self.wavelength_descending.to_string(),
            "backbone.widths" => join(&m.backbone.widths),
            "backbone.convs" => join(&m.backbone.convs),
            "dcm.C" => d.channels.to_string(),
            "dcm.Z" => d.areas.to_string(),
            "dcm.T" => d.iterations.to_string(),
            "dcm.heads" => d.heads.to_string(),
            "dcm.mlp_ratio" => d.mlp_ratio.to_string(),
            "dcm.activation" => match d.activation {
                Activation::Relu => "relu".into(),
                Activation::Gelu => "gelu".into(),
            },
            "dcm.use_F" => d.use_f.to_string(),
            "dcm.use_RAC" => d.use_rac.to_string(),
            "dcm.use_GAC" => d.use_gac.to_string(),
            "model.classes" => m.classes.to_string(),
            "model.norm_mean" => join(&m.norm_mean),
            "model.norm_std" => join(&m.norm_std),
            "train.epochs" => t.epochs.to_string(),
            "train.batch" => t.batch.to_string(),
            "train.lr" => t.lr.to_string(),
            "train.momentum" => t.momentum.to_string(),
            "train.weight_decay" => t.weight_decay.to_string(),
            "train.poly_power" => t.poly_power.to_string(),
            "train.head_lr_mult" => t.head_lr_mult.to_string(),
            "train.seed" => t.seed.to_string(),
            "train.val_fraction" => t.val_fraction.to_string(),
            _ => return None,
        })
    }

    /// Every key with its current value, in [`KEYS`] order. Parsing the
    /// result reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, _, _) in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("listed key"));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Help text listing every key with its default.
pub fn describe_keys() -> String {
    let width = KEYS.iter().map(|(k, d, _)| k.len() + d.len() + 3).max().unwrap_or(0);
    let mut out = String::new();
    for (key, default, doc) in KEYS {
        let _ = writeln!(out, "  {:<width$}  {doc}", format!("{key} = {default}"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = Config::default();
        assert_eq!(cfg.groups, 5);
        assert_eq!(cfg.train.lr, 0.001);
        assert_eq!(cfg.model.dcm.iterations, 5);
        assert_eq!(Config::parse(&cfg.to_text()).unwrap(), cfg);
        for (key, default, _) in KEYS {
            assert_eq!(cfg.get(key).unwrap().parse::<String>().unwrap().replace(' ', ""), *default, "{key}");
        }
    }

    #[test]
    fn overrides_and_comments() {
        let cfg = Config::parse("# desk run\n\ndcm.Z = 9\n backbone.widths=8, 8,16,16\ndcm.activation = gelu\n").unwrap();
        assert_eq!(cfg.model.dcm.areas, 9);
        assert_eq!(cfg.model.backbone.widths, [8, 8, 16, 16]);
        assert_eq!(cfg.model.dcm.activation, Activation::Gelu);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(Config::parse("dcm.q = 1"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("dcm.Z 4"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("dcm.Z = four"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("backbone.widths = 1,2"), Err(Error::Config(_))));
    }

    #[test]
    fn help_lists_every_key() {
        let help = describe_keys();
        for (key, default, _) in KEYS {
            assert!(help.contains(&format!("{key} = {default}")));
        }
    }
}
