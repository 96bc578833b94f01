//! GIS-derived binary spatial masks: file ingestion, land-cover
//! rasterization and a synthetic per-class pattern generator.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::preprocess::{resize, Interpolation};
use crate::raster;
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskSource {
    File,
    Landcover,
    Synthetic,
}

/// Binary `height x width` grid, cells are 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatialMask {
    pub height: usize,
    pub width: usize,
    pub grid: Vec<u8>,
    pub source: MaskSource,
}

impl SpatialMask {
    pub fn new(height: usize, width: usize, grid: Vec<u8>, source: MaskSource) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::EmptyInput("mask with zero extent".into()));
        }
        if grid.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} cells for a {height}x{width} mask",
                grid.len()
            )));
        }
        if let Some(&v) = grid.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidArgument(format!(
                "mask cell value {v} is not 0/1"
            )));
        }
        Ok(Self {
            height,
            width,
            grid,
            source,
        })
    }

    pub fn zeros(height: usize, width: usize, source: MaskSource) -> Self {
        Self {
            height,
            width,
            grid: vec![0; height * width],
            source,
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.grid[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.grid[y * self.width + x] = u8::from(on);
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn to_tensor(&self) -> ImageTensor {
        ImageTensor {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.grid.iter().map(|&v| f64::from(v)).collect(),
        }
    }

    pub fn from_tensor(t: &ImageTensor, source: MaskSource) -> Result<Self> {
        if t.channels != 1 {
            return Err(Error::DimensionMismatch(format!(
                "mask tensor must have 1 channel, has {}",
                t.channels
            )));
        }
        let grid = t
            .data
            .iter()
            .map(|&v| {
                if v == 0.0 {
                    Ok(0)
                } else if v == 1.0 {
                    Ok(1)
                } else {
                    Err(Error::InvalidArgument(format!("mask value {v} is not 0/1")))
                }
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::new(t.height, t.width, grid, source)
    }

    /// Nearest-neighbour resize to `expected`; a no-op when already there.
    pub fn resized(self, expected: (usize, usize)) -> Result<Self> {
        if self.dims() == expected {
            return Ok(self);
        }
        if expected.0 != expected.1 {
            return Err(Error::InvalidArgument(format!(
                "mask target must be square, got {expected:?}"
            )));
        }
        let source = self.source;
        let t = resize(&self.to_tensor(), expected.0, Interpolation::Nearest)?;
        Self::from_tensor(&t, source)
    }

    /// 8-bit {0, 255} encoding used on disk.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.grid.iter().map(|&v| v * 255).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        raster::save_gray(path, self.height, self.width, self.to_bytes())
    }
}

/// Read an 8-bit {0, 255} single-channel raster as a mask at `expected` dims.
pub fn load_mask(path: &Path, expected: (usize, usize)) -> Result<SpatialMask> {
    let (h, w, values) = raster::load_gray(path)?;
    let grid = values
        .iter()
        .map(|&v| match v {
            0 => Ok(0u8),
            255 => Ok(1u8),
            other => Err(Error::NonBinaryMask { value: other }),
        })
        .collect::<Result<Vec<_>>>()?;
    SpatialMask::new(h, w, grid, MaskSource::File)?.resized(expected)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LandCoverGrid {
    pub height: usize,
    pub width: usize,
    pub codes: Vec<u16>,
    pub code_book: BTreeMap<u16, String>,
}

impl LandCoverGrid {
    pub fn new(
        height: usize,
        width: usize,
        codes: Vec<u16>,
        code_book: BTreeMap<u16, String>,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::EmptyInput("land-cover grid with zero extent".into()));
        }
        if codes.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} codes for a {height}x{width} grid",
                codes.len()
            )));
        }
        if let Some(c) = codes.iter().find(|c| !code_book.contains_key(c)) {
            return Err(Error::InvalidArgument(format!(
                "land-cover code {c} missing from code book"
            )));
        }
        Ok(Self {
            height,
            width,
            codes,
            code_book,
        })
    }

    pub fn load(raster_path: &Path, code_book: BTreeMap<u16, String>) -> Result<Self> {
        let (h, w, codes) = raster::load_gray(raster_path)?;
        Self::new(h, w, codes, code_book)
    }
}

/// Parse a code book with lines `<code> <name>`; `#` starts a comment.
pub fn parse_code_book(text: &str) -> Result<BTreeMap<u16, String>> {
    let mut book = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (code, name) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let code: u16 = code.parse().map_err(|_| {
            Error::InvalidArgument(format!("code book line {}: bad code {code:?}", i + 1))
        })?;
        book.insert(code, name.trim().to_string());
    }
    Ok(book)
}

pub fn load_code_book(path: &Path) -> Result<BTreeMap<u16, String>> {
    parse_code_book(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// Cell is on iff its land-cover code is in `relevant_codes`.
pub fn rasterize_landcover(
    lc: &LandCoverGrid,
    relevant_codes: &BTreeSet<u16>,
    expected: (usize, usize),
) -> Result<SpatialMask> {
    if relevant_codes.is_empty() {
        return Err(Error::InvalidArgument(
            "relevant land-cover code set is empty".into(),
        ));
    }
    let grid = lc
        .codes
        .iter()
        .map(|c| u8::from(relevant_codes.contains(c)))
        .collect();
    SpatialMask::new(lc.height, lc.width, grid, MaskSource::Landcover)?.resized(expected)
}

pub fn mask_coverage(m: &SpatialMask) -> f64 {
    let on = m.grid.iter().filter(|&&v| v == 1).count();
    on as f64 / (m.height * m.width) as f64
}

/// Number of 4-connected components of on-cells.
pub fn component_count(m: &SpatialMask) -> usize {
    let (h, w) = m.dims();
    let mut seen = vec![false; h * w];
    let mut stack = Vec::new();
    let mut count = 0;
    for start in 0..h * w {
        if m.grid[start] == 0 || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (y, x) = (i / w, i % w);
            let mut visit = |j: usize| {
                if m.grid[j] == 1 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
        }
    }
    count
}

/// Class-distinctive synthetic mask. The pattern family depends only on the
/// label; placement and sizes come from `rng`.
///
/// - WND: 3 to 8 disjoint small discs
/// - SUN: a grid of filled axis-aligned rectangles
/// - BIT: one large irregular blob
/// - NG: two parallel stripes
/// - WAT: a half-plane, side and angle random
pub fn synth_mask<R: Rng + ?Sized>(
    label: ClassLabel,
    rng: &mut R,
    dims: (usize, usize),
) -> SpatialMask {
    let (h, w) = dims;
    let mut m = SpatialMask::zeros(h, w, MaskSource::Synthetic);
    let side = h.min(w) as f64;
    match label {
        ClassLabel::Wnd => draw_discs(&mut m, rng, side),
        ClassLabel::Sun => draw_panel_grid(&mut m, rng),
        ClassLabel::Bit => draw_blob(&mut m, rng, side),
        ClassLabel::Ng => draw_stripes(&mut m, rng, side),
        ClassLabel::Wat => draw_half_plane(&mut m, rng, side),
    }
    m
}

fn draw_discs<R: Rng + ?Sized>(m: &mut SpatialMask, rng: &mut R, side: f64) {
    let k = rng.random_range(3..=8usize);
    let radius = (0.05 * side).max(1.5);
    let min_gap = 2.0 * radius + 2.0;
    let margin = radius + 1.0;
    let (h, w) = (m.height as f64, m.width as f64);
    let mut centers: Vec<(f64, f64)> = Vec::with_capacity(k);
    let mut attempts = 0;
    while centers.len() < k && attempts < 10_000 {
        attempts += 1;
        let cy = rng.random_range(margin..(h - margin).max(margin + 1e-9));
        let cx = rng.random_range(margin..(w - margin).max(margin + 1e-9));
        if centers
            .iter()
            .all(|&(y, x)| ((y - cy).powi(2) + (x - cx).powi(2)).sqrt() >= min_gap)
        {
            centers.push((cy, cx));
        }
    }
    let r2 = radius * radius;
    for y in 0..m.height {
        for x in 0..m.width {
            let on = centers
                .iter()
                .any(|&(cy, cx)| (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= r2);
            if on {
                m.set(y, x, true);
            }
        }
    }
}

fn draw_panel_grid<R: Rng + ?Sized>(m: &mut SpatialMask, rng: &mut R) {
    let rows = rng.random_range(2..=3usize);
    let cols = rng.random_range(2..=3usize);
    let (h, w) = (m.height, m.width);
    // array footprint covers 55-75% of each axis
    let fh = ((h as f64) * rng.random_range(0.55..0.75)).round() as usize;
    let fw = ((w as f64) * rng.random_range(0.55..0.75)).round() as usize;
    let gap = ((h.min(w) as f64) * 0.06).round().max(1.0) as usize;
    let ph = (fh.saturating_sub(gap * (rows - 1)) / rows).max(1);
    let pw = (fw.saturating_sub(gap * (cols - 1)) / cols).max(1);
    let used_h = ph * rows + gap * (rows - 1);
    let used_w = pw * cols + gap * (cols - 1);
    let y0 = rng.random_range(0..=h.saturating_sub(used_h));
    let x0 = rng.random_range(0..=w.saturating_sub(used_w));
    for r in 0..rows {
        for c in 0..cols {
            let top = y0 + r * (ph + gap);
            let left = x0 + c * (pw + gap);
            for y in top..(top + ph).min(h) {
                for x in left..(left + pw).min(w) {
                    m.set(y, x, true);
                }
            }
        }
    }
}

fn draw_blob<R: Rng + ?Sized>(m: &mut SpatialMask, rng: &mut R, side: f64) {
    let base = side * rng.random_range(0.22..0.28);
    let cy = m.height as f64 / 2.0 + side * rng.random_range(-0.12..0.12);
    let cx = m.width as f64 / 2.0 + side * rng.random_range(-0.12..0.12);
    let stretch = rng.random_range(0.8..1.25);
    // low-order radial harmonics give an irregular but star-shaped outline
    let harmonics: Vec<(f64, f64)> = (2..=4)
        .map(|_| {
            (
                rng.random_range(0.0..0.12),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    for y in 0..m.height {
        for x in 0..m.width {
            let dy = (y as f64 - cy) / stretch;
            let dx = (x as f64 - cx) * stretch;
            let theta = dy.atan2(dx);
            let r = base
                * (1.0
                    + harmonics
                        .iter()
                        .enumerate()
                        .map(|(i, &(a, ph))| a * ((i as f64 + 2.0) * theta + ph).cos())
                        .sum::<f64>());
            if dx * dx + dy * dy <= r * r {
                m.set(y, x, true);
            }
        }
    }
}

fn draw_stripes<R: Rng + ?Sized>(m: &mut SpatialMask, rng: &mut R, side: f64) {
    let half_width = (side * rng.random_range(0.04..0.06)).max(1.0);
    let separation = side * rng.random_range(0.25..0.4);
    // orientation within ±25° of an axis so both stripes cross the frame
    let axis = if rng.random_bool(0.5) { 0.0 } else { 90.0 };
    let angle = (axis + rng.random_range(-25.0..25.0f64)).to_radians();
    let (ny, nx) = (angle.cos(), -angle.sin());
    let cy = m.height as f64 / 2.0 + side * rng.random_range(-0.08..0.08);
    let cx = m.width as f64 / 2.0 + side * rng.random_range(-0.08..0.08);
    for y in 0..m.height {
        for x in 0..m.width {
            let d = (y as f64 - cy) * ny + (x as f64 - cx) * nx;
            let d1 = (d - separation / 2.0).abs();
            let d2 = (d + separation / 2.0).abs();
            if d1 <= half_width || d2 <= half_width {
                m.set(y, x, true);
            }
        }
    }
}

fn draw_half_plane<R: Rng + ?Sized>(m: &mut SpatialMask, rng: &mut R, side: f64) {
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (ny, nx) = angle.sin_cos();
    let offset = side * rng.random_range(-0.06..0.06);
    let cy = (m.height as f64 - 1.0) / 2.0;
    let cx = (m.width as f64 - 1.0) / 2.0;
    for y in 0..m.height {
        for x in 0..m.width {
            if (y as f64 - cy) * ny + (x as f64 - cx) * nx > offset {
                m.set(y, x, true);
            }
        }
    }
}
