//! Fused CNN + ViT classifier. The ViT always reads the image; the CNN
//! reads the image in baseline mode and the binary spatial mask in KGML
//! mode. Pooled features are concatenated ViT-first, reduced by a fully
//! connected layer and classified.

pub mod cnn;
pub mod ops;
pub mod vit;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::label::NUM_CLASSES;
use crate::mask::SpatialMask;
use crate::rng::{self, streams};
use crate::tensor::ImageTensor;

pub use cnn::{pool_cnn, CnnBranch, CnnConfig, FeatureGrid};
use ops::{relu_backward_inplace, relu_inplace, Linear, Param};
pub use vit::{Vit, VitConfig, VitOutput, VitPooling};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// CNN + ViT, both over the image.
    Baseline,
    /// CNN over the spatial mask, ViT over the image.
    Kgml,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Kgml => "kgml",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "kgml" => Ok(Mode::Kgml),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode {other:?} (expected baseline or kgml)"
            ))),
        }
    }
}

/// What the convolutional branch consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CnnInput {
    Image,
    Mask,
    ImageAndMask,
}

impl CnnInput {
    pub fn channels(self) -> usize {
        match self {
            CnnInput::Image => 3,
            CnnInput::Mask => 1,
            CnnInput::ImageAndMask => 4,
        }
    }

    pub fn needs_mask(self) -> bool {
        !matches!(self, CnnInput::Image)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    pub vit_dim: usize,
    pub cnn_dim: usize,
    pub reduced_dim: usize,
    pub n_classes: usize,
}

impl FusionConfig {
    pub fn fused_dim(&self) -> usize {
        self.vit_dim + self.cnn_dim
    }

    pub fn param_count(&self) -> usize {
        Linear::param_count(self.fused_dim(), self.reduced_dim)
            + Linear::param_count(self.reduced_dim, self.n_classes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub mode: Mode,
    pub vit: VitConfig,
    pub reduced_dim: usize,
    /// KGML only: feed image and mask as a 4-channel CNN input.
    pub stack_image_with_mask: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Kgml,
            vit: VitConfig::default(),
            reduced_dim: 256,
            stack_image_with_mask: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.vit.validate()?;
        if self.reduced_dim == 0 {
            return Err(Error::InvalidArgument(
                "reduced_dim must be positive".into(),
            ));
        }
        if self.vit.image_size < cnn::MIN_INPUT {
            return Err(Error::InvalidArgument(format!(
                "image_size {} is below the CNN minimum of {}",
                self.vit.image_size,
                cnn::MIN_INPUT
            )));
        }
        if self.vit.in_channels != 3 {
            return Err(Error::InvalidArgument(
                "imagery must have 3 channels".into(),
            ));
        }
        Ok(())
    }

    pub fn cnn_input(&self) -> CnnInput {
        match (self.mode, self.stack_image_with_mask) {
            (Mode::Baseline, _) => CnnInput::Image,
            (Mode::Kgml, false) => CnnInput::Mask,
            (Mode::Kgml, true) => CnnInput::ImageAndMask,
        }
    }

    pub fn cnn(&self) -> CnnConfig {
        CnnConfig {
            in_channels: self.cnn_input().channels(),
        }
    }

    pub fn fusion(&self) -> FusionConfig {
        FusionConfig {
            vit_dim: self.vit.embed_dim,
            cnn_dim: cnn::CONV2_FILTERS,
            reduced_dim: self.reduced_dim,
            n_classes: NUM_CLASSES,
        }
    }
}

/// Exact number of learnable scalars for `config`.
pub fn param_count(config: &ModelConfig) -> usize {
    config.vit.param_count() + config.cnn().param_count() + config.fusion().param_count()
}

/// `Z = [h_vit; h_cnn]`.
pub fn fuse(cfg: &FusionConfig, h_vit: &[f64], h_cnn: &[f64]) -> Result<Vec<f64>> {
    if h_vit.len() != cfg.vit_dim || h_cnn.len() != cfg.cnn_dim {
        return Err(Error::DimensionMismatch(format!(
            "fuse expects ({}, {}), got ({}, {})",
            cfg.vit_dim,
            cfg.cnn_dim,
            h_vit.len(),
            h_cnn.len()
        )));
    }
    let mut z = Vec::with_capacity(cfg.fused_dim());
    z.extend_from_slice(h_vit);
    z.extend_from_slice(h_cnn);
    Ok(z)
}

/// FC reduction, ReLU, FC to class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub config: FusionConfig,
    pub reduce: Linear,
    pub out: Linear,
}

impl ClassifierHead {
    pub fn new<R: rand::Rng + ?Sized>(config: FusionConfig, rng: &mut R) -> Self {
        Self {
            config,
            reduce: Linear::new("head.reduce", config.fused_dim(), config.reduced_dim, rng),
            out: Linear::new("head.out", config.reduced_dim, config.n_classes, rng),
        }
    }

    fn check(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.config.fused_dim() {
            return Err(Error::DimensionMismatch(format!(
                "classifier expects |Z| = {}, got {}",
                self.config.fused_dim(),
                z.len()
            )));
        }
        Ok(())
    }

    /// Raw logits; softmax lives in the loss.
    pub fn classify(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(z)?.1)
    }

    fn forward(&self, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check(z)?;
        let mut hidden = self.reduce.forward(z, 1);
        relu_inplace(&mut hidden);
        let logits = self.out.forward(&hidden, 1);
        Ok((hidden, logits))
    }

    fn backward(&mut self, z: &[f64], hidden: &[f64], dlogits: &[f64]) -> Vec<f64> {
        let mut dhidden = self
            .out
            .backward(hidden, dlogits, 1, true)
            .expect("dx requested");
        relu_backward_inplace(hidden, &mut dhidden);
        self.reduce
            .backward(z, &dhidden, 1, true)
            .expect("dx requested")
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        v.extend(self.reduce.params());
        v.extend(self.out.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        v.extend(self.reduce.params_mut());
        v.extend(self.out.params_mut());
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub h_vit: Vec<f64>,
    pub h_cnn: Vec<f64>,
    pub cnn_map: FeatureGrid,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub features: FeatureBundle,
    pub vit_tokens: Vec<f64>,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub vit: vit::VitCache,
    cnn: cnn::CnnCache,
    z: Vec<f64>,
    hidden: Vec<f64>,
}

impl ForwardCache {
    /// Branch taken by every piecewise-linear unit. Two passes with equal
    /// patterns lie in the same linear region of those units.
    pub fn activation_pattern(&self) -> Vec<usize> {
        let mut p = self.cnn.activation_pattern();
        p.extend(self.hidden.iter().map(|v| usize::from(*v > 0.0)));
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub config: ModelConfig,
    pub vit: Vit,
    pub cnn: CnnBranch,
    pub head: ClassifierHead,
}

impl FusionModel {
    /// Each branch draws from its own stream, so the ViT and head weights
    /// are identical across modes for the same seed.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let vit = Vit::new(config.vit, &mut rng::stream(seed, &[streams::INIT_VIT]))?;
        let cnn = CnnBranch::new(config.cnn(), &mut rng::stream(seed, &[streams::INIT_CNN]));
        let head = ClassifierHead::new(
            config.fusion(),
            &mut rng::stream(seed, &[streams::INIT_HEAD]),
        );
        Ok(Self {
            config,
            vit,
            cnn,
            head,
        })
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    fn cnn_input(&self, img: &ImageTensor, mask: Option<&ImageTensor>) -> Result<ImageTensor> {
        let input = self.config.cnn_input();
        let mask = if input.needs_mask() {
            let m = mask.ok_or_else(|| {
                Error::MissingMask(format!(
                    "{} mode forward called without a mask",
                    self.mode()
                ))
            })?;
            if m.dims() != img.dims() || m.channels != 1 {
                return Err(Error::DimensionMismatch(format!(
                    "mask {:?}x{} does not match image {:?}",
                    m.dims(),
                    m.channels,
                    img.dims()
                )));
            }
            Some(m)
        } else {
            None
        };
        Ok(match (input, mask) {
            (CnnInput::Image, _) => img.clone(),
            (CnnInput::Mask, Some(m)) => m.clone(),
            (CnnInput::ImageAndMask, Some(m)) => img.concat_channels(m)?,
            _ => unreachable!("mask presence checked above"),
        })
    }

    /// Forward pass over a standardized image and an optional 1-channel
    /// binary mask tensor of the same size.
    pub fn forward_tensors(
        &self,
        img: &ImageTensor,
        mask: Option<&ImageTensor>,
    ) -> Result<(ForwardOutput, ForwardCache)> {
        let cnn_in = self.cnn_input(img, mask)?;
        let (vit_out, vit_cache) = self.vit.forward(img)?;
        let (cnn_map, cnn_cache) =
            self.cnn
                .forward(&cnn_in.to_chw(), cnn_in.height, cnn_in.width)?;
        let h_cnn = pool_cnn(&cnn_map);
        let z = fuse(&self.head.config, &vit_out.h_vit, &h_cnn)?;
        let (hidden, logits) = self.head.forward(&z)?;
        Ok((
            ForwardOutput {
                features: FeatureBundle {
                    h_vit: vit_out.h_vit,
                    h_cnn,
                    cnn_map,
                    z: z.clone(),
                },
                vit_tokens: vit_out.tokens,
                logits,
            },
            ForwardCache {
                vit: vit_cache,
                cnn: cnn_cache,
                z,
                hidden,
            },
        ))
    }

    pub fn forward(&self, img: &ImageTensor, mask: Option<&SpatialMask>) -> Result<ForwardOutput> {
        let mask = mask.map(SpatialMask::to_tensor);
        Ok(self.forward_tensors(img, mask.as_ref())?.0)
    }

    pub fn logits(&self, img: &ImageTensor, mask: Option<&SpatialMask>) -> Result<Vec<f64>> {
        Ok(self.forward(img, mask)?.logits)
    }

    /// Accumulate parameter gradients for `dL/dlogits`.
    pub fn backward(&mut self, cache: &ForwardCache, dlogits: &[f64]) {
        let dz = self.head.backward(&cache.z, &cache.hidden, dlogits);
        let (dh_vit, dh_cnn) = dz.split_at(self.config.vit.embed_dim);
        self.vit.backward(&cache.vit, dh_vit);
        // global average pool backward: spread evenly over the 14x14 grid
        let cells = cnn::OUTPUT_GRID * cnn::OUTPUT_GRID;
        let mut dmap = Vec::with_capacity(dh_cnn.len() * cells);
        for &g in dh_cnn {
            dmap.extend(std::iter::repeat_n(g / cells as f64, cells));
        }
        self.cnn.backward(&cache.cnn, &dmap);
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = self.vit.params();
        v.extend(self.cnn.params());
        v.extend(self.head.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.vit.params_mut();
        v.extend(self.cnn.params_mut());
        v.extend(self.head.params_mut());
        v
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

/// Softmax cross-entropy for one sample, scaled by `weight`. Returns the
/// loss and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], target: usize, weight: f64) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    let loss = weight * (lse - logits[target]);
    let grad = logits
        .iter()
        .enumerate()
        .map(|(i, &v)| weight * ((v - lse).exp() - if i == target { 1.0 } else { 0.0 }))
        .collect();
    (loss, grad)
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}
