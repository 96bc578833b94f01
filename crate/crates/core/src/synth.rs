//! Synthetic corpus: class-patterned masks plus imagery in which the same
//! pattern is blended into a textured background. A fraction of images show
//! another class's layout, so the mask is the cleaner of the two signals.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::manifest::{Manifest, SampleRecord};
use crate::mask::{synth_mask, SpatialMask};
use crate::model::vit::VitPooling;
use crate::raster::save_rgb;
use crate::rng::{self, streams};
use crate::tensor::ImageTensor;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const CONFIG_FILE: &str = "train.conf";

const FOREGROUND: [f64; 3] = [0.85, 0.85, 0.8];
const BACKGROUND: [f64; 3] = [0.35, 0.42, 0.3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub per_class: usize,
    pub size: usize,
    /// Blend weight of the site pattern, 0 (invisible) to 1 (solid).
    pub snr: f64,
    /// Probability that an image shows a different class's layout.
    pub decoy_rate: f64,
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            per_class: 100,
            size: 32,
            snr: 0.8,
            decoy_rate: 0.25,
            noise: 0.05,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 8 {
            return Err(Error::InvalidArgument(
                "synth.size must be at least 8".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.snr) || !(0.0..=1.0).contains(&self.decoy_rate) {
            return Err(Error::InvalidArgument(
                "synth.snr and synth.decoy_rate must lie in [0, 1]".into(),
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidArgument("synth.noise must be >= 0".into()));
        }
        Ok(())
    }
}

/// Smooth background: a base colour plus a few low-frequency waves.
fn background<R: Rng + ?Sized>(rng: &mut R, size: usize) -> ImageTensor {
    let mut img = ImageTensor::zeros(size, size, 3);
    let base: Vec<f64> = BACKGROUND
        .iter()
        .map(|b| b + rng.random_range(-0.08..0.08))
        .collect();
    let waves: Vec<[f64; 4]> = (0..3)
        .map(|_| {
            [
                rng.random_range(0.5..2.5),
                rng.random_range(0.5..2.5),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.02..0.06),
            ]
        })
        .collect();
    let side = size as f64;
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (y as f64 / side, x as f64 / side);
            let t: f64 = waves
                .iter()
                .map(|[fy, fx, ph, amp]| {
                    amp * (std::f64::consts::TAU * (fy * u + fx * v) + ph).sin()
                })
                .sum();
            for (c, b) in base.iter().enumerate() {
                img.set(y, x, c, b + t);
            }
        }
    }
    img
}

/// Sample `k` of class `label`. Depends only on (seed, label, k).
pub fn synth_sample(
    label: ClassLabel,
    k: usize,
    seed: u64,
    cfg: &SynthConfig,
) -> (ImageTensor, SpatialMask) {
    let mut rng = rng::stream(seed, &[streams::SYNTH, label.index() as u64, k as u64]);
    let dims = (cfg.size, cfg.size);
    let mask = synth_mask(label, &mut rng, dims);
    let pattern = if rng.random_bool(cfg.decoy_rate) {
        let offset = rng.random_range(1..ClassLabel::ALL.len());
        let other = ClassLabel::from_index((label.index() + offset) % ClassLabel::ALL.len())
            .expect("index reduced modulo class count");
        synth_mask(other, &mut rng, dims)
    } else {
        mask.clone()
    };
    let mut img = background(&mut rng, cfg.size);
    let noise = Normal::new(0.0, cfg.noise).expect("noise validated non-negative");
    for y in 0..cfg.size {
        for x in 0..cfg.size {
            let p = cfg.snr * f64::from(pattern.get(y, x));
            for (c, fg) in FOREGROUND.iter().enumerate() {
                let v = img.get(y, x, c) * (1.0 - p) + p * fg + noise.sample(&mut rng);
                img.set(y, x, c, v.clamp(0.0, 1.0));
            }
        }
    }
    (img, mask)
}

/// Model and training settings sized for the synthetic corpus on one CPU.
pub fn desk_config(cfg: &SynthConfig, seed: u64) -> RunConfig {
    let mut c = RunConfig {
        seed,
        synth: *cfg,
        ..RunConfig::default()
    };
    c.model.vit.image_size = cfg.size.max(crate::model::cnn::MIN_INPUT);
    c.model.vit.patch_size = 8;
    c.model.vit.embed_dim = 32;
    c.model.vit.depth = 2;
    c.model.vit.heads = 2;
    c.model.vit.mlp_ratio = 2.0;
    c.model.vit.pooling = VitPooling::MeanTokens;
    c.model.reduced_dim = 32;
    c.train.epochs = 15;
    c.train.batch_size = 16;
    c.train.learning_rate = 1e-3;
    c
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Write images, masks, a manifest with relative paths and a matching
/// training config into `out`. Records are grouped by class.
pub fn write_corpus(out: &Path, cfg: &SynthConfig, seed: u64) -> Result<Manifest> {
    cfg.validate()?;
    create_dir(&out.join("images"))?;
    create_dir(&out.join("masks"))?;
    let mut records = Vec::with_capacity(cfg.per_class * ClassLabel::ALL.len());
    for label in ClassLabel::ALL {
        for k in 0..cfg.per_class {
            let (img, mask) = synth_sample(label, k, seed, cfg);
            let name = format!("{}_{k:04}.png", label.code());
            let image_path = PathBuf::from("images").join(&name);
            let mask_path = PathBuf::from("masks").join(&name);
            save_rgb(&out.join(&image_path), &img)?;
            mask.save(&out.join(&mask_path))?;
            records.push(SampleRecord {
                image_path,
                mask_path: Some(mask_path),
                label,
                split: None,
            });
        }
    }
    let manifest_path = out.join(MANIFEST_FILE);
    let m = Manifest::new(records, manifest_path.display().to_string())?.with_root(out);
    m.write(&manifest_path)?;
    desk_config(cfg, seed).save(&out.join(CONFIG_FILE))?;
    Ok(m)
}
