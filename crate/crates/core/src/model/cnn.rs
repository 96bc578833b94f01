//! Convolutional branch:
//! Conv(64, 3x3, same) -> ReLU -> MaxPool(2x2) -> Conv(128, 3x3, same)
//! -> ReLU -> AdaptiveAvgPool(14x14).

use rand::Rng;

use super::ops::{gemm, relu_backward_inplace, relu_inplace, Param, Trans};
use crate::error::{Error, Result};

pub const CONV1_FILTERS: usize = 64;
pub const CONV2_FILTERS: usize = 128;
pub const KERNEL: usize = 3;
pub const POOL: usize = 2;
pub const OUTPUT_GRID: usize = 14;
/// Smallest input side that still pools to at least the output grid.
pub const MIN_INPUT: usize = OUTPUT_GRID * POOL;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CnnConfig {
    pub in_channels: usize,
}

impl CnnConfig {
    pub fn param_count(&self) -> usize {
        conv_param_count(self.in_channels, CONV1_FILTERS)
            + conv_param_count(CONV1_FILTERS, CONV2_FILTERS)
    }
}

pub fn conv_param_count(in_channels: usize, filters: usize) -> usize {
    in_channels * filters * KERNEL * KERNEL + filters
}

/// Planar `[channels, height, width]` activation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureGrid {
    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }
}

/// 3x3 stride-1 convolution with zero padding 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub in_channels: usize,
    pub filters: usize,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        filters: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * KERNEL * KERNEL;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            weight: Param::uniform(format!("{name}.weight"), &[filters, fan_in], bound, rng),
            bias: Param::zeros(format!("{name}.bias"), &[filters]),
            in_channels,
            filters,
        }
    }

    fn im2col(&self, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        let hw = h * w;
        let mut cols = vec![0.0; self.in_channels * KERNEL * KERNEL * hw];
        for c in 0..self.in_channels {
            let plane = &x[c * hw..(c + 1) * hw];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let row = (c * KERNEL + ky) * KERNEL + kx;
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                        let dst_row = &mut dst[y * w..(y + 1) * w];
                        // x range whose source column stays inside the frame
                        let x_lo = if kx == 0 { 1 } else { 0 };
                        let x_hi = if kx == 2 { w - 1 } else { w };
                        for xo in x_lo..x_hi {
                            dst_row[xo] = src_row[xo + kx - 1];
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], h: usize, w: usize) -> Vec<f64> {
        let hw = h * w;
        let mut x = vec![0.0; self.in_channels * hw];
        for c in 0..self.in_channels {
            let plane = &mut x[c * hw..(c + 1) * hw];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let row = (c * KERNEL + ky) * KERNEL + kx;
                    let src = &cols[row * hw..(row + 1) * hw];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let x_lo = if kx == 0 { 1 } else { 0 };
                        let x_hi = if kx == 2 { w - 1 } else { w };
                        for xo in x_lo..x_hi {
                            plane[sy as usize * w + xo + kx - 1] += src[y * w + xo];
                        }
                    }
                }
            }
        }
        x
    }

    /// Returns the output `[filters, h, w]` and the im2col buffer.
    pub fn forward(&self, x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
        let hw = h * w;
        let cols = self.im2col(x, h, w);
        let mut out = Vec::with_capacity(self.filters * hw);
        for &b in &self.bias.value {
            out.extend(std::iter::repeat_n(b, hw));
        }
        gemm(
            Trans::N,
            Trans::N,
            self.filters,
            self.in_channels * KERNEL * KERNEL,
            hw,
            1.0,
            &self.weight.value,
            &cols,
            1.0,
            &mut out,
        );
        (out, cols)
    }

    pub fn backward(
        &mut self,
        cols: &[f64],
        dout: &[f64],
        h: usize,
        w: usize,
        need_dx: bool,
    ) -> Option<Vec<f64>> {
        let hw = h * w;
        let k = self.in_channels * KERNEL * KERNEL;
        gemm(
            Trans::N,
            Trans::T,
            self.filters,
            hw,
            k,
            1.0,
            dout,
            cols,
            1.0,
            &mut self.weight.grad,
        );
        for (g, plane) in self.bias.grad.iter_mut().zip(dout.chunks_exact(hw)) {
            *g += plane.iter().sum::<f64>();
        }
        need_dx.then(|| {
            let mut dcols = vec![0.0; k * hw];
            gemm(
                Trans::T,
                Trans::N,
                k,
                self.filters,
                hw,
                1.0,
                &self.weight.value,
                dout,
                0.0,
                &mut dcols,
            );
            self.col2im(&dcols, h, w)
        })
    }
}

fn max_pool(x: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / POOL, w / POOL);
    let mut out = vec![0.0; c * oh * ow];
    let mut arg = vec![0; c * oh * ow];
    for ch in 0..c {
        let plane = ch * h * w;
        for y in 0..oh {
            for xo in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut bi = 0;
                for dy in 0..POOL {
                    for dx in 0..POOL {
                        let i = plane + (y * POOL + dy) * w + xo * POOL + dx;
                        if x[i] > best {
                            best = x[i];
                            bi = i;
                        }
                    }
                }
                let o = (ch * oh + y) * ow + xo;
                out[o] = best;
                arg[o] = bi;
            }
        }
    }
    (out, arg)
}

/// Window `[start, end)` of adaptive pooling cell `i` out of `out` cells
/// over an axis of length `len`.
fn adaptive_window(i: usize, out: usize, len: usize) -> (usize, usize) {
    let start = i * len / out;
    let end = ((i + 1) * len).div_ceil(out);
    (start, end)
}

fn adaptive_avg_pool(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let g = OUTPUT_GRID;
    let mut out = vec![0.0; c * g * g];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for oy in 0..g {
            let (y0, y1) = adaptive_window(oy, g, h);
            for ox in 0..g {
                let (x0, x1) = adaptive_window(ox, g, w);
                let mut s = 0.0;
                for y in y0..y1 {
                    s += plane[y * w + x0..y * w + x1].iter().sum::<f64>();
                }
                out[(ch * g + oy) * g + ox] = s / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
    }
    out
}

fn adaptive_avg_pool_backward(dout: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let g = OUTPUT_GRID;
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
        for oy in 0..g {
            let (y0, y1) = adaptive_window(oy, g, h);
            for ox in 0..g {
                let (x0, x1) = adaptive_window(ox, g, w);
                let share = dout[(ch * g + oy) * g + ox] / ((y1 - y0) * (x1 - x0)) as f64;
                for y in y0..y1 {
                    for v in &mut plane[y * w + x0..y * w + x1] {
                        *v += share;
                    }
                }
            }
        }
    }
    dx
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnBranch {
    pub config: CnnConfig,
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

#[derive(Debug, Clone)]
pub struct CnnCache {
    h: usize,
    w: usize,
    cols1: Vec<f64>,
    act1: Vec<f64>,
    pool_arg: Vec<usize>,
    cols2: Vec<f64>,
    act2: Vec<f64>,
}

impl CnnCache {
    /// Which side of every ReLU and which max-pool winner the pass took.
    pub fn activation_pattern(&self) -> Vec<usize> {
        let on = |v: &f64| usize::from(*v > 0.0);
        self.act1
            .iter()
            .map(on)
            .chain(self.pool_arg.iter().copied())
            .chain(self.act2.iter().map(on))
            .collect()
    }
}

impl CnnBranch {
    pub fn new<R: Rng + ?Sized>(config: CnnConfig, rng: &mut R) -> Self {
        Self {
            config,
            conv1: Conv2d::new("cnn.conv1", config.in_channels, CONV1_FILTERS, rng),
            conv2: Conv2d::new("cnn.conv2", CONV1_FILTERS, CONV2_FILTERS, rng),
        }
    }

    /// `x` is planar `[in_channels, h, w]`.
    pub fn forward(&self, x: &[f64], h: usize, w: usize) -> Result<(FeatureGrid, CnnCache)> {
        if h < MIN_INPUT || w < MIN_INPUT {
            return Err(Error::DimensionMismatch(format!(
                "cnn input {h}x{w} is smaller than {MIN_INPUT}x{MIN_INPUT}"
            )));
        }
        if x.len() != self.config.in_channels * h * w {
            return Err(Error::DimensionMismatch(format!(
                "cnn expects {} channels",
                self.config.in_channels
            )));
        }
        let (mut act1, cols1) = self.conv1.forward(x, h, w);
        relu_inplace(&mut act1);
        let (pooled, pool_arg) = max_pool(&act1, CONV1_FILTERS, h, w);
        let (ph, pw) = (h / POOL, w / POOL);
        let (mut act2, cols2) = self.conv2.forward(&pooled, ph, pw);
        relu_inplace(&mut act2);
        let map = adaptive_avg_pool(&act2, CONV2_FILTERS, ph, pw);
        Ok((
            FeatureGrid {
                channels: CONV2_FILTERS,
                height: OUTPUT_GRID,
                width: OUTPUT_GRID,
                data: map,
            },
            CnnCache {
                h,
                w,
                cols1,
                act1,
                pool_arg,
                cols2,
                act2,
            },
        ))
    }

    /// Accumulates gradients from `dmap` (planar, same layout as the output).
    pub fn backward(&mut self, cache: &CnnCache, dmap: &[f64]) {
        let (h, w) = (cache.h, cache.w);
        let (ph, pw) = (h / POOL, w / POOL);
        let mut dact2 = adaptive_avg_pool_backward(dmap, CONV2_FILTERS, ph, pw);
        relu_backward_inplace(&cache.act2, &mut dact2);
        let dpooled = self
            .conv2
            .backward(&cache.cols2, &dact2, ph, pw, true)
            .expect("dx requested");
        let mut dact1 = vec![0.0; CONV1_FILTERS * h * w];
        for (&i, &g) in cache.pool_arg.iter().zip(&dpooled) {
            dact1[i] += g;
        }
        relu_backward_inplace(&cache.act1, &mut dact1);
        self.conv1.backward(&cache.cols1, &dact1, h, w, false);
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![
            &self.conv1.weight,
            &self.conv1.bias,
            &self.conv2.weight,
            &self.conv2.bias,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
        ]
    }
}

/// Global average over the spatial grid: one value per channel.
pub fn pool_cnn(map: &FeatureGrid) -> Vec<f64> {
    let hw = (map.height * map.width) as f64;
    map.data
        .chunks_exact(map.height * map.width)
        .map(|plane| plane.iter().sum::<f64>() / hw)
        .collect()
}
