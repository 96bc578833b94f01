//! Dense building blocks with explicit backward passes. Activations are
//! row-major `[rows, features]` slices; gradients accumulate into
//! `Param::grad`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, Copy)]
pub enum Trans {
    N,
    T,
}

/// `c = alpha * op(a) * op(b) + beta * c` where `op(a)` is `m x k` and
/// `op(b)` is `k x n`. Stored matrices are row-major and contiguous.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    ta: Trans,
    tb: Trans,
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    b: &[f64],
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs size");
    assert_eq!(b.len(), k * n, "gemm: rhs size");
    assert_eq!(c.len(), m * n, "gemm: output size");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match ta {
        Trans::N => (k as isize, 1),
        Trans::T => (1, m as isize),
    };
    let (rsb, csb) = match tb {
        Trans::N => (n as isize, 1),
        Trans::T => (1, k as isize),
    };
    // SAFETY: the asserts above bound every index touched by the strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// A named learnable array with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            value: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    pub fn filled(name: impl Into<String>, shape: &[usize], v: f64) -> Self {
        let mut p = Self::zeros(name, shape);
        p.value.fill(v);
        p
    }

    /// Normal(0, std) truncated to ±2 std by resampling.
    pub fn trunc_normal<R: Rng + ?Sized>(
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(name, shape);
        for v in &mut p.value {
            *v = loop {
                let z: f64 = StandardNormal.sample(rng);
                if z.abs() <= 2.0 {
                    break z * std;
                }
            };
        }
        p
    }

    pub fn uniform<R: Rng + ?Sized>(
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(name, shape);
        for v in &mut p.value {
            *v = rng.random_range(-bound..bound);
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

pub const INIT_STD: f64 = 0.02;

/// `y = x W^T + b` with `W: [out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::trunc_normal(
                format!("{name}.weight"),
                &[out_dim, in_dim],
                INIT_STD,
                rng,
            ),
            bias: Param::zeros(format!("{name}.bias"), &[out_dim]),
            in_dim,
            out_dim,
        }
    }

    pub fn param_count(in_dim: usize, out_dim: usize) -> usize {
        in_dim * out_dim + out_dim
    }

    pub fn forward(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let mut y = Vec::with_capacity(rows * self.out_dim);
        for _ in 0..rows {
            y.extend_from_slice(&self.bias.value);
        }
        gemm(
            Trans::N,
            Trans::T,
            rows,
            self.in_dim,
            self.out_dim,
            1.0,
            x,
            &self.weight.value,
            1.0,
            &mut y,
        );
        y
    }

    /// Accumulates parameter gradients; returns `dL/dx` when requested.
    pub fn backward(
        &mut self,
        x: &[f64],
        dy: &[f64],
        rows: usize,
        need_dx: bool,
    ) -> Option<Vec<f64>> {
        gemm(
            Trans::T,
            Trans::N,
            self.out_dim,
            rows,
            self.in_dim,
            1.0,
            dy,
            x,
            1.0,
            &mut self.weight.grad,
        );
        for row in dy.chunks_exact(self.out_dim) {
            for (g, &d) in self.bias.grad.iter_mut().zip(row) {
                *g += d;
            }
        }
        need_dx.then(|| {
            let mut dx = vec![0.0; rows * self.in_dim];
            gemm(
                Trans::N,
                Trans::N,
                rows,
                self.out_dim,
                self.in_dim,
                1.0,
                dy,
                &self.weight.value,
                0.0,
                &mut dx,
            );
            dx
        })
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

pub const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(name: &str, dim: usize) -> Self {
        Self {
            gamma: Param::filled(format!("{name}.gamma"), &[dim], 1.0),
            beta: Param::zeros(format!("{name}.beta"), &[dim]),
            dim,
        }
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, LayerNormCache) {
        let d = self.dim;
        let rows = x.len() / d;
        let mut y = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                y[r * d + j] = h * self.gamma.value[j] + self.beta.value[j];
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let rows = dy.len() / d;
        let mut dx = vec![0.0; dy.len()];
        let mut dxhat = vec![0.0; d];
        for r in 0..rows {
            let off = r * d;
            for j in 0..d {
                let g = dy[off + j];
                self.gamma.grad[j] += g * cache.xhat[off + j];
                self.beta.grad[j] += g;
                dxhat[j] = g * self.gamma.value[j];
            }
            let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
            let mean_dxhat_xhat = dxhat
                .iter()
                .zip(&cache.xhat[off..off + d])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / d as f64;
            for j in 0..d {
                dx[off + j] = cache.inv_std[r]
                    * (dxhat[j] - mean_dxhat - cache.xhat[off + j] * mean_dxhat_xhat);
            }
        }
        dx
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.gamma, &self.beta]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.gamma, &mut self.beta]
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub fn relu_inplace(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Gradient through ReLU given the post-activation output.
pub fn relu_backward_inplace(y: &[f64], dy: &mut [f64]) {
    for (g, &v) in dy.iter_mut().zip(y) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn softmax_inplace(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
