//! Resizing, standardization and paired image/mask augmentation.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::raster;
use crate::tensor::ImageTensor;

/// Guard for zero-variance channels.
pub const STD_EPSILON: f64 = 1e-7;
pub const MAX_ROTATION_DEGREES: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Bilinear,
    Nearest,
}

/// Resize to `target x target`. Pixel centers are aligned at half-pixel
/// offsets, so a same-size resize is the identity for both modes.
pub fn resize(img: &ImageTensor, target: usize, interp: Interpolation) -> Result<ImageTensor> {
    if img.data.is_empty() || img.height == 0 || img.width == 0 {
        return Err(Error::EmptyInput("resize of an empty image".into()));
    }
    if target == 0 {
        return Err(Error::InvalidArgument(
            "resize target must be positive".into(),
        ));
    }
    if img.height == target && img.width == target {
        return Ok(img.clone());
    }
    let sy = img.height as f64 / target as f64;
    let sx = img.width as f64 / target as f64;
    let mut out = ImageTensor::zeros(target, target, img.channels);
    match interp {
        Interpolation::Nearest => {
            for y in 0..target {
                let src_y = (((y as f64 + 0.5) * sy).floor() as usize).min(img.height - 1);
                for x in 0..target {
                    let src_x = (((x as f64 + 0.5) * sx).floor() as usize).min(img.width - 1);
                    for c in 0..img.channels {
                        out.set(y, x, c, img.get(src_y, src_x, c));
                    }
                }
            }
        }
        Interpolation::Bilinear => {
            for y in 0..target {
                let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (img.height - 1) as f64);
                let y0 = fy.floor() as usize;
                let y1 = (y0 + 1).min(img.height - 1);
                let wy = fy - y0 as f64;
                for x in 0..target {
                    let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (img.width - 1) as f64);
                    let x0 = fx.floor() as usize;
                    let x1 = (x0 + 1).min(img.width - 1);
                    let wx = fx - x0 as f64;
                    for c in 0..img.channels {
                        let top = img.get(y0, x0, c) * (1.0 - wx) + img.get(y0, x1, c) * wx;
                        let bottom = img.get(y1, x0, c) * (1.0 - wx) + img.get(y1, x1, c) * wx;
                        out.set(y, x, c, top * (1.0 - wy) + bottom * wy);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Population mean and standard deviation per channel over every pixel
    /// of every image. Per-image moments are merged pairwise so large
    /// corpora do not lose precision.
    pub fn from_images<'a, I>(images: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a ImageTensor>,
    {
        let mut acc: Option<(Vec<f64>, Vec<f64>, f64)> = None;
        for img in images {
            let ch = img.channels;
            let n = (img.height * img.width) as f64;
            let mut mean = vec![0.0; ch];
            for px in img.data.chunks_exact(ch) {
                for (m, &v) in mean.iter_mut().zip(px) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut m2 = vec![0.0; ch];
            for px in img.data.chunks_exact(ch) {
                for c in 0..ch {
                    let d = px[c] - mean[c];
                    m2[c] += d * d;
                }
            }
            acc = Some(match acc {
                None => (mean, m2, n),
                Some((am, am2, an)) => {
                    if am.len() != ch {
                        return Err(Error::DimensionMismatch(format!(
                            "image with {ch} channels in a {}-channel corpus",
                            am.len()
                        )));
                    }
                    let total = an + n;
                    let mut nm = vec![0.0; ch];
                    let mut nm2 = vec![0.0; ch];
                    for c in 0..ch {
                        let delta = mean[c] - am[c];
                        nm[c] = am[c] + delta * n / total;
                        nm2[c] = am2[c] + m2[c] + delta * delta * an * n / total;
                    }
                    (nm, nm2, total)
                }
            });
        }
        let (mean, m2, n) =
            acc.ok_or_else(|| Error::EmptyInput("channel statistics of no images".into()))?;
        let std = m2.iter().map(|&v| (v / n).max(0.0).sqrt()).collect();
        Ok(Self { mean, std })
    }

    pub fn to_text(&self) -> String {
        let fmt = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        format!("mean_c {}\nstd_c {}\n", fmt(&self.mean), fmt(&self.std))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut mean = None;
        let mut std = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let values: std::result::Result<Vec<f64>, _> = parts.map(str::parse).collect();
            let values =
                values.map_err(|e| Error::InvalidArgument(format!("stats line {line:?}: {e}")))?;
            match key {
                "mean_c" => mean = Some(values),
                "std_c" => std = Some(values),
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown stats key {other:?}"
                    )))
                }
            }
        }
        match (mean, std) {
            (Some(mean), Some(std)) if mean.len() == std.len() && !mean.is_empty() => {
                if std.iter().any(|&s| s < 0.0) {
                    return Err(Error::InvalidArgument("negative std in stats".into()));
                }
                Ok(Self { mean, std })
            }
            _ => Err(Error::InvalidArgument(
                "stats need mean_c and std_c lines of equal length".into(),
            )),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Load an image from the manifest and bring it to model resolution.
pub fn load_image(path: &Path, image_size: usize) -> Result<ImageTensor> {
    resize(
        &raster::load_rgb(path)?,
        image_size,
        Interpolation::Bilinear,
    )
}

/// Channel statistics over the training images at model resolution.
pub fn compute_channel_stats(train: &Manifest, image_size: usize) -> Result<ChannelStats> {
    if train.is_empty() {
        return Err(Error::EmptyInput(
            "channel statistics of an empty manifest".into(),
        ));
    }
    let images = (0..train.len())
        .map(|i| load_image(&train.image_path(i), image_size))
        .collect::<Result<Vec<_>>>()?;
    ChannelStats::from_images(&images)
}

fn check_channels(img: &ImageTensor, stats: &ChannelStats) -> Result<()> {
    if img.channels != stats.channels() {
        return Err(Error::DimensionMismatch(format!(
            "image has {} channels, stats have {}",
            img.channels,
            stats.channels()
        )));
    }
    Ok(())
}

pub fn standardize(img: &ImageTensor, stats: &ChannelStats) -> Result<ImageTensor> {
    check_channels(img, stats)?;
    let mut out = img.clone();
    for px in out.data.chunks_exact_mut(img.channels) {
        for (c, v) in px.iter_mut().enumerate() {
            *v = (*v - stats.mean[c]) / stats.std[c].max(STD_EPSILON);
        }
    }
    Ok(out)
}

pub fn unstandardize(img: &ImageTensor, stats: &ChannelStats) -> Result<ImageTensor> {
    check_channels(img, stats)?;
    let mut out = img.clone();
    for px in out.data.chunks_exact_mut(img.channels) {
        for (c, v) in px.iter_mut().enumerate() {
            *v = *v * stats.std[c].max(STD_EPSILON) + stats.mean[c];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationParams {
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    pub rotation_degrees: f64,
}

impl AugmentationParams {
    pub const IDENTITY: AugmentationParams = AugmentationParams {
        flip_horizontal: false,
        flip_vertical: false,
        rotation_degrees: 0.0,
    };

    pub fn new(flip_horizontal: bool, flip_vertical: bool, rotation_degrees: f64) -> Result<Self> {
        if !(-MAX_ROTATION_DEGREES..=MAX_ROTATION_DEGREES).contains(&rotation_degrees) {
            return Err(Error::InvalidArgument(format!(
                "rotation {rotation_degrees} outside ±{MAX_ROTATION_DEGREES}°"
            )));
        }
        Ok(Self {
            flip_horizontal,
            flip_vertical,
            rotation_degrees,
        })
    }
}

/// Independent horizontal and vertical flips with probability 1/2 each,
/// rotation uniform on [-10°, +10°].
pub fn sample_augmentation<R: Rng + ?Sized>(rng: &mut R) -> AugmentationParams {
    let flip_horizontal = rng.random_bool(0.5);
    let flip_vertical = rng.random_bool(0.5);
    let rotation_degrees = rng.random_range(-MAX_ROTATION_DEGREES..=MAX_ROTATION_DEGREES);
    AugmentationParams {
        flip_horizontal,
        flip_vertical,
        rotation_degrees,
    }
}

fn flip(img: &ImageTensor, horizontal: bool, vertical: bool) -> ImageTensor {
    if !horizontal && !vertical {
        return img.clone();
    }
    let mut out = ImageTensor::zeros(img.height, img.width, img.channels);
    for y in 0..img.height {
        let sy = if vertical { img.height - 1 - y } else { y };
        for x in 0..img.width {
            let sx = if horizontal { img.width - 1 - x } else { x };
            let (d, s) = (out.idx(y, x, 0), img.idx(sy, sx, 0));
            out.data[d..d + img.channels].copy_from_slice(&img.data[s..s + img.channels]);
        }
    }
    out
}

/// Rotate counter-clockwise about the image center. Samples falling outside
/// the frame are filled with 0.
fn rotate(img: &ImageTensor, degrees: f64, interp: Interpolation) -> ImageTensor {
    if degrees == 0.0 {
        return img.clone();
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cy = (img.height as f64 - 1.0) / 2.0;
    let cx = (img.width as f64 - 1.0) / 2.0;
    let (h, w) = (img.height as isize, img.width as isize);
    let mut out = ImageTensor::zeros(img.height, img.width, img.channels);
    let fetch = |y: isize, x: isize, c: usize| -> f64 {
        if y < 0 || x < 0 || y >= h || x >= w {
            0.0
        } else {
            img.get(y as usize, x as usize, c)
        }
    };
    for y in 0..img.height {
        let dy = y as f64 - cy;
        for x in 0..img.width {
            let dx = x as f64 - cx;
            // inverse map: output pixel -> source location
            let src_x = cos * dx - sin * dy + cx;
            let src_y = sin * dx + cos * dy + cy;
            for c in 0..img.channels {
                let v = match interp {
                    Interpolation::Nearest => {
                        fetch(src_y.round() as isize, src_x.round() as isize, c)
                    }
                    Interpolation::Bilinear => {
                        let x0 = src_x.floor();
                        let y0 = src_y.floor();
                        let wx = src_x - x0;
                        let wy = src_y - y0;
                        let (x0, y0) = (x0 as isize, y0 as isize);
                        let top = fetch(y0, x0, c) * (1.0 - wx) + fetch(y0, x0 + 1, c) * wx;
                        let bottom =
                            fetch(y0 + 1, x0, c) * (1.0 - wx) + fetch(y0 + 1, x0 + 1, c) * wx;
                        top * (1.0 - wy) + bottom * wy
                    }
                };
                out.set(y, x, c, v);
            }
        }
    }
    out
}

/// Apply the same flips and rotation to an image and its optional mask.
/// The image is resampled bilinearly, the mask by nearest neighbour so it
/// stays binary.
pub fn augment(
    img: &ImageTensor,
    mask: Option<&ImageTensor>,
    p: &AugmentationParams,
) -> Result<(ImageTensor, Option<ImageTensor>)> {
    if let Some(m) = mask {
        if m.dims() != img.dims() {
            return Err(Error::DimensionMismatch(format!(
                "mask {:?} vs image {:?}",
                m.dims(),
                img.dims()
            )));
        }
    }
    let out_img = rotate(
        &flip(img, p.flip_horizontal, p.flip_vertical),
        p.rotation_degrees,
        Interpolation::Bilinear,
    );
    let out_mask = mask.map(|m| {
        rotate(
            &flip(m, p.flip_horizontal, p.flip_vertical),
            p.rotation_degrees,
            Interpolation::Nearest,
        )
    });
    Ok((out_img, out_mask))
}
