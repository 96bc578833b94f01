//! Flat `key = value` run configuration. Every key has a default; unknown
//! keys are rejected. Command-line flags are applied on top via [`RunConfig::set`].

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dataset::MaskSpec;
use crate::error::{Error, Result};
use crate::mask::load_code_book;
use crate::model::{Mode, ModelConfig, VitPooling};
use crate::synth::SynthConfig;
use crate::train::TrainConfig;

/// Every recognised key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    (
        "seed",
        "global seed for splitting, initialization, shuffling, augmentation and synthesis",
    ),
    (
        "data.train_manifest",
        "training manifest (empty: must be given on the command line)",
    ),
    (
        "data.test_manifest",
        "evaluation manifest (empty: must be given on the command line)",
    ),
    (
        "split.test_fraction",
        "per-class fraction of records assigned to the test split",
    ),
    (
        "mask.source",
        "file: mask_path is a {0,255} raster; landcover: mask_path is a land-cover code raster",
    ),
    (
        "mask.code_book",
        "land-cover code book, lines '<code> <name>' (landcover source only)",
    ),
    (
        "mask.relevant_codes",
        "comma-separated land-cover codes rasterized to 1 (landcover source only)",
    ),
    (
        "model.mode",
        "baseline (CNN over image) or kgml (CNN over spatial mask)",
    ),
    (
        "model.image_size",
        "square model input resolution in pixels",
    ),
    ("model.patch_size", "ViT patch side in pixels"),
    ("model.embed_dim", "ViT token width D_v"),
    ("model.depth", "number of ViT encoder blocks"),
    ("model.heads", "attention heads per block"),
    (
        "model.mlp_ratio",
        "ViT MLP hidden width as a multiple of embed_dim",
    ),
    (
        "model.pooling",
        "ViT feature pooling: mean_tokens or cls_token",
    ),
    (
        "model.reduced_dim",
        "width of the fully connected reduction after fusion",
    ),
    (
        "model.stack_image_with_mask",
        "kgml only: CNN reads image and mask as 4 channels",
    ),
    ("train.epochs", "passes over the training set"),
    ("train.batch_size", "samples per optimizer step"),
    ("train.learning_rate", "optimizer step size"),
    (
        "train.weight_decay",
        "decoupled weight decay on weight matrices",
    ),
    (
        "train.class_weights",
        "weight the loss by inverse class frequency",
    ),
    (
        "train.augment",
        "random flips and rotation on training samples",
    ),
    ("synth.per_class", "synthetic samples generated per class"),
    ("synth.size", "side length of synthetic images and masks"),
    (
        "synth.snr",
        "amplitude of the site pattern in synthetic imagery, 0..1",
    ),
    (
        "synth.decoy_rate",
        "probability a synthetic image shows another class's layout",
    ),
    (
        "synth.noise",
        "standard deviation of per-pixel noise in synthetic imagery",
    ),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskSourceKind {
    File,
    Landcover,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub test_fraction: f64,
    pub mask_source: MaskSourceKind,
    pub code_book: Option<PathBuf>,
    pub relevant_codes: BTreeSet<u16>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_manifest: None,
            test_manifest: None,
            test_fraction: 0.3,
            mask_source: MaskSourceKind::File,
            code_book: None,
            relevant_codes: BTreeSet::new(),
            model: ModelConfig {
                reduced_dim: 128,
                ..ModelConfig::default()
            },
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got {value:?}"
        ))),
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => {
                self.seed = parse_num(key, v)?;
                self.train.seed = self.seed;
            }
            "data.train_manifest" => self.train_manifest = opt_path(v),
            "data.test_manifest" => self.test_manifest = opt_path(v),
            "split.test_fraction" => {
                let f: f64 = parse_num(key, v)?;
                if !(0.0..=1.0).contains(&f) {
                    return Err(Error::Config(format!("{key}: {f} is outside [0, 1]")));
                }
                self.test_fraction = f;
            }
            "mask.source" => {
                self.mask_source = match v {
                    "file" => MaskSourceKind::File,
                    "landcover" => MaskSourceKind::Landcover,
                    _ => return Err(Error::Config(format!("{key}: unknown source {v:?}"))),
                }
            }
            "mask.code_book" => self.code_book = opt_path(v),
            "mask.relevant_codes" => {
                self.relevant_codes = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_num(key, s))
                    .collect::<Result<_>>()?;
            }
            "model.mode" => {
                self.model.mode = v
                    .parse::<Mode>()
                    .map_err(|e| Error::Config(e.to_string()))?
            }
            "model.image_size" => self.model.vit.image_size = parse_num(key, v)?,
            "model.patch_size" => self.model.vit.patch_size = parse_num(key, v)?,
            "model.embed_dim" => self.model.vit.embed_dim = parse_num(key, v)?,
            "model.depth" => self.model.vit.depth = parse_num(key, v)?,
            "model.heads" => self.model.vit.heads = parse_num(key, v)?,
            "model.mlp_ratio" => self.model.vit.mlp_ratio = parse_num(key, v)?,
            "model.pooling" => {
                self.model.vit.pooling =
                    VitPooling::parse(v).map_err(|e| Error::Config(e.to_string()))?
            }
            "model.reduced_dim" => self.model.reduced_dim = parse_num(key, v)?,
            "model.stack_image_with_mask" => self.model.stack_image_with_mask = parse_bool(key, v)?,
            "train.epochs" => self.train.epochs = parse_num(key, v)?,
            "train.batch_size" => self.train.batch_size = parse_num(key, v)?,
            "train.learning_rate" => self.train.learning_rate = parse_num(key, v)?,
            "train.weight_decay" => self.train.weight_decay = parse_num(key, v)?,
            "train.class_weights" => self.train.class_weights = parse_bool(key, v)?,
            "train.augment" => self.train.augment = parse_bool(key, v)?,
            "synth.per_class" => self.synth.per_class = parse_num(key, v)?,
            "synth.size" => self.synth.size = parse_num(key, v)?,
            "synth.snr" => self.synth.snr = parse_num(key, v)?,
            "synth.decoy_rate" => self.synth.decoy_rate = parse_num(key, v)?,
            "synth.noise" => self.synth.noise = parse_num(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        Some(match key {
            "seed" => self.seed.to_string(),
            "data.train_manifest" => path(&self.train_manifest),
            "data.test_manifest" => path(&self.test_manifest),
            "split.test_fraction" => format!("{:?}", self.test_fraction),
            "mask.source" => match self.mask_source {
                MaskSourceKind::File => "file".into(),
                MaskSourceKind::Landcover => "landcover".into(),
            },
            "mask.code_book" => path(&self.code_book),
            "mask.relevant_codes" => self
                .relevant_codes
                .iter()
                .map(u16::to_string)
                .collect::<Vec<_>>()
                .join(","),
            "model.mode" => self.model.mode.to_string(),
            "model.image_size" => self.model.vit.image_size.to_string(),
            "model.patch_size" => self.model.vit.patch_size.to_string(),
            "model.embed_dim" => self.model.vit.embed_dim.to_string(),
            "model.depth" => self.model.vit.depth.to_string(),
            "model.heads" => self.model.vit.heads.to_string(),
            "model.mlp_ratio" => format!("{:?}", self.model.vit.mlp_ratio),
            "model.pooling" => self.model.vit.pooling.as_str().into(),
            "model.reduced_dim" => self.model.reduced_dim.to_string(),
            "model.stack_image_with_mask" => self.model.stack_image_with_mask.to_string(),
            "train.epochs" => self.train.epochs.to_string(),
            "train.batch_size" => self.train.batch_size.to_string(),
            "train.learning_rate" => format!("{:?}", self.train.learning_rate),
            "train.weight_decay" => format!("{:?}", self.train.weight_decay),
            "train.class_weights" => self.train.class_weights.to_string(),
            "train.augment" => self.train.augment.to_string(),
            "synth.per_class" => self.synth.per_class.to_string(),
            "synth.size" => self.synth.size.to_string(),
            "synth.snr" => format!("{:?}", self.synth.snr),
            "synth.decoy_rate" => format!("{:?}", self.synth.decoy_rate),
            "synth.noise" => format!("{:?}", self.synth.noise),
            _ => return None,
        })
    }

    /// Apply `key = value` lines; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", i + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Lines for keys starting with `prefix`, in table order.
    pub fn entries(&self, prefix: &str) -> Vec<(&'static str, String)> {
        KEYS.iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, _)| (*k, self.get(k).expect("every listed key is readable")))
            .collect()
    }

    /// Full echo with one comment line per key; parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, doc) in KEYS {
            s.push_str(&format!("# {doc}\n{k} = {}\n", self.get(k).unwrap()));
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train
        }
    }

    pub fn mask_spec(&self) -> Result<MaskSpec> {
        match self.mask_source {
            MaskSourceKind::File => Ok(MaskSpec::File),
            MaskSourceKind::Landcover => {
                let book = self.code_book.as_ref().ok_or_else(|| {
                    Error::Config("mask.source = landcover requires mask.code_book".into())
                })?;
                if self.relevant_codes.is_empty() {
                    return Err(Error::Config(
                        "mask.source = landcover requires mask.relevant_codes".into(),
                    ));
                }
                Ok(MaskSpec::Landcover {
                    code_book: load_code_book(book)?,
                    relevant_codes: self.relevant_codes.clone(),
                })
            }
        }
    }
}
