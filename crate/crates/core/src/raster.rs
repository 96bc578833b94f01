//! Raster file IO for imagery, masks and land-cover grids.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageReader, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

fn open(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Raster {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// 3-channel imagery scaled to [0, 1].
pub fn load_rgb(path: &Path) -> Result<ImageTensor> {
    let rgb = open(path)?.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
    ImageTensor::new(h as usize, w as usize, 3, data)
}

/// Raw single-channel values. 8-bit and 16-bit grayscale are accepted;
/// anything with more than one channel is rejected.
pub fn load_gray(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let img = open(path)?;
    match img {
        DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            Ok((
                h as usize,
                w as usize,
                g.as_raw().iter().map(|&v| u16::from(v)).collect(),
            ))
        }
        DynamicImage::ImageLuma16(g) => {
            let (w, h) = g.dimensions();
            Ok((h as usize, w as usize, g.as_raw().clone()))
        }
        _ => Err(Error::NotSingleChannel(path.to_path_buf())),
    }
}

pub fn save_rgb(path: &Path, img: &ImageTensor) -> Result<()> {
    if img.channels != 3 {
        return Err(Error::DimensionMismatch(format!(
            "save_rgb expects 3 channels, got {}",
            img.channels
        )));
    }
    let bytes = img.data.iter().map(|&v| quantize(v)).collect();
    let buf = RgbImage::from_raw(img.width as u32, img.height as u32, bytes)
        .expect("buffer size matches dimensions");
    save(path, DynamicImage::ImageRgb8(buf))
}

pub fn save_gray(path: &Path, height: usize, width: usize, values: Vec<u8>) -> Result<()> {
    let buf = GrayImage::from_raw(width as u32, height as u32, values).ok_or_else(|| {
        Error::DimensionMismatch(format!("gray buffer does not match {height}x{width}"))
    })?;
    save(path, DynamicImage::ImageLuma8(buf))
}

fn save(path: &Path, img: DynamicImage) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Raster {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
