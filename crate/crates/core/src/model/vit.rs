//! Vision transformer branch: patchify, linear embedding, class token,
//! learned position embeddings, pre-norm encoder blocks, final norm.

use rand::Rng;

use super::ops::{
    gelu, gelu_grad, gemm, softmax_inplace, LayerNorm, LayerNormCache, Linear, Param, Trans,
    INIT_STD,
};
use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VitPooling {
    ClsToken,
    MeanTokens,
}

impl VitPooling {
    pub fn as_str(self) -> &'static str {
        match self {
            VitPooling::ClsToken => "cls_token",
            VitPooling::MeanTokens => "mean_tokens",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cls_token" => Ok(VitPooling::ClsToken),
            "mean_tokens" => Ok(VitPooling::MeanTokens),
            other => Err(Error::InvalidArgument(format!("unknown pooling {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VitConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub in_channels: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub pooling: VitPooling,
}

impl Default for VitConfig {
    fn default() -> Self {
        Self {
            image_size: 224,
            patch_size: 16,
            in_channels: 3,
            embed_dim: 192,
            depth: 6,
            heads: 3,
            mlp_ratio: 4.0,
            pooling: VitPooling::MeanTokens,
        }
    }
}

impl VitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.patch_size == 0
            || self.image_size == 0
            || !self.image_size.is_multiple_of(self.patch_size)
        {
            return bad(format!(
                "image_size {} must be a positive multiple of patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.embed_dim == 0 || self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            ));
        }
        if self.mlp_hidden() == 0 {
            return bad(format!("mlp_ratio {} gives an empty MLP", self.mlp_ratio));
        }
        if self.in_channels == 0 {
            return bad("vit needs at least one input channel".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn n_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.in_channels
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.embed_dim as f64 * self.mlp_ratio).round() as usize
    }

    pub fn param_count(&self) -> usize {
        let d = self.embed_dim;
        let hidden = self.mlp_hidden();
        let block = 2 * d
            + Linear::param_count(d, 3 * d)
            + Linear::param_count(d, d)
            + 2 * d
            + Linear::param_count(d, hidden)
            + Linear::param_count(hidden, d);
        Linear::param_count(self.patch_dim(), d)
            + d
            + (self.n_patches() + 1) * d
            + self.depth * block
            + 2 * d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBlock {
    pub ln1: LayerNorm,
    pub qkv: Linear,
    pub proj: Linear,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    heads: usize,
}

#[derive(Debug, Clone)]
struct BlockCache {
    ln1: LayerNormCache,
    a_in: Vec<f64>,
    qkv: Vec<f64>,
    /// Softmax probabilities per head, each `[T, T]`.
    attn: Vec<Vec<f64>>,
    attn_out: Vec<f64>,
    ln2: LayerNormCache,
    b_in: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
}

/// Copy columns `[col, col + width)` of a `[rows, stride]` matrix.
fn gather_cols(src: &[f64], rows: usize, stride: usize, col: usize, width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * width);
    for r in 0..rows {
        out.extend_from_slice(&src[r * stride + col..r * stride + col + width]);
    }
    out
}

fn scatter_cols(
    dst: &mut [f64],
    src: &[f64],
    rows: usize,
    stride: usize,
    col: usize,
    width: usize,
) {
    for r in 0..rows {
        dst[r * stride + col..r * stride + col + width]
            .copy_from_slice(&src[r * width..(r + 1) * width]);
    }
}

impl EncoderBlock {
    fn new<R: Rng + ?Sized>(name: &str, cfg: &VitConfig, rng: &mut R) -> Self {
        let d = cfg.embed_dim;
        Self {
            ln1: LayerNorm::new(&format!("{name}.ln1"), d),
            qkv: Linear::new(&format!("{name}.attn.qkv"), d, 3 * d, rng),
            proj: Linear::new(&format!("{name}.attn.proj"), d, d, rng),
            ln2: LayerNorm::new(&format!("{name}.ln2"), d),
            fc1: Linear::new(&format!("{name}.mlp.fc1"), d, cfg.mlp_hidden(), rng),
            fc2: Linear::new(&format!("{name}.mlp.fc2"), cfg.mlp_hidden(), d, rng),
            heads: cfg.heads,
        }
    }

    fn forward(&self, x: &[f64], tokens: usize) -> (Vec<f64>, BlockCache) {
        let d = self.ln1.dim;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let (a_in, ln1) = self.ln1.forward(x);
        let qkv = self.qkv.forward(&a_in, tokens);
        let mut attn_out = vec![0.0; tokens * d];
        let mut attn = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let q = gather_cols(&qkv, tokens, 3 * d, h * dh, dh);
            let k = gather_cols(&qkv, tokens, 3 * d, d + h * dh, dh);
            let v = gather_cols(&qkv, tokens, 3 * d, 2 * d + h * dh, dh);
            let mut scores = vec![0.0; tokens * tokens];
            gemm(
                Trans::N,
                Trans::T,
                tokens,
                dh,
                tokens,
                scale,
                &q,
                &k,
                0.0,
                &mut scores,
            );
            for row in scores.chunks_exact_mut(tokens) {
                softmax_inplace(row);
            }
            let mut o = vec![0.0; tokens * dh];
            gemm(
                Trans::N,
                Trans::N,
                tokens,
                tokens,
                dh,
                1.0,
                &scores,
                &v,
                0.0,
                &mut o,
            );
            scatter_cols(&mut attn_out, &o, tokens, d, h * dh, dh);
            attn.push(scores);
        }
        let projected = self.proj.forward(&attn_out, tokens);
        let x1: Vec<f64> = x.iter().zip(&projected).map(|(a, b)| a + b).collect();

        let (b_in, ln2) = self.ln2.forward(&x1);
        let hidden_pre = self.fc1.forward(&b_in, tokens);
        let hidden: Vec<f64> = hidden_pre.iter().map(|&v| gelu(v)).collect();
        let mlp = self.fc2.forward(&hidden, tokens);
        let y = x1.iter().zip(&mlp).map(|(a, b)| a + b).collect();

        (
            y,
            BlockCache {
                ln1,
                a_in,
                qkv,
                attn,
                attn_out,
                ln2,
                b_in,
                hidden_pre,
                hidden,
            },
        )
    }

    fn backward(&mut self, cache: &BlockCache, dy: &[f64], tokens: usize) -> Vec<f64> {
        let d = self.ln1.dim;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();

        // MLP residual branch
        let mut dhidden = self
            .fc2
            .backward(&cache.hidden, dy, tokens, true)
            .expect("dx requested");
        for (g, &pre) in dhidden.iter_mut().zip(&cache.hidden_pre) {
            *g *= gelu_grad(pre);
        }
        let db_in = self
            .fc1
            .backward(&cache.b_in, &dhidden, tokens, true)
            .expect("dx requested");
        let dln2 = self.ln2.backward(&cache.ln2, &db_in);
        let dx1: Vec<f64> = dy.iter().zip(&dln2).map(|(a, b)| a + b).collect();

        // attention residual branch
        let dattn_out = self
            .proj
            .backward(&cache.attn_out, &dx1, tokens, true)
            .expect("dx requested");
        let mut dqkv = vec![0.0; tokens * 3 * d];
        for h in 0..self.heads {
            let q = gather_cols(&cache.qkv, tokens, 3 * d, h * dh, dh);
            let k = gather_cols(&cache.qkv, tokens, 3 * d, d + h * dh, dh);
            let v = gather_cols(&cache.qkv, tokens, 3 * d, 2 * d + h * dh, dh);
            let a = &cache.attn[h];
            let do_h = gather_cols(&dattn_out, tokens, d, h * dh, dh);

            let mut da = vec![0.0; tokens * tokens];
            gemm(
                Trans::N,
                Trans::T,
                tokens,
                dh,
                tokens,
                1.0,
                &do_h,
                &v,
                0.0,
                &mut da,
            );
            let mut dv = vec![0.0; tokens * dh];
            gemm(
                Trans::T,
                Trans::N,
                tokens,
                tokens,
                dh,
                1.0,
                a,
                &do_h,
                0.0,
                &mut dv,
            );

            // softmax backward, folded with the score scale
            let mut ds = da;
            for (drow, arow) in ds.chunks_exact_mut(tokens).zip(a.chunks_exact(tokens)) {
                let dot: f64 = drow.iter().zip(arow).map(|(g, p)| g * p).sum();
                for (g, &p) in drow.iter_mut().zip(arow) {
                    *g = p * (*g - dot) * scale;
                }
            }
            let mut dq = vec![0.0; tokens * dh];
            gemm(
                Trans::N,
                Trans::N,
                tokens,
                tokens,
                dh,
                1.0,
                &ds,
                &k,
                0.0,
                &mut dq,
            );
            let mut dk = vec![0.0; tokens * dh];
            gemm(
                Trans::T,
                Trans::N,
                tokens,
                tokens,
                dh,
                1.0,
                &ds,
                &q,
                0.0,
                &mut dk,
            );

            scatter_cols(&mut dqkv, &dq, tokens, 3 * d, h * dh, dh);
            scatter_cols(&mut dqkv, &dk, tokens, 3 * d, d + h * dh, dh);
            scatter_cols(&mut dqkv, &dv, tokens, 3 * d, 2 * d + h * dh, dh);
        }
        let da_in = self
            .qkv
            .backward(&cache.a_in, &dqkv, tokens, true)
            .expect("dx requested");
        let dln1 = self.ln1.backward(&cache.ln1, &da_in);
        dx1.iter().zip(&dln1).map(|(a, b)| a + b).collect()
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = Vec::with_capacity(12);
        v.extend(self.ln1.params());
        v.extend(self.qkv.params());
        v.extend(self.proj.params());
        v.extend(self.ln2.params());
        v.extend(self.fc1.params());
        v.extend(self.fc2.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::with_capacity(12);
        v.extend(self.ln1.params_mut());
        v.extend(self.qkv.params_mut());
        v.extend(self.proj.params_mut());
        v.extend(self.ln2.params_mut());
        v.extend(self.fc1.params_mut());
        v.extend(self.fc2.params_mut());
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vit {
    pub config: VitConfig,
    pub patch_embed: Linear,
    pub cls_token: Param,
    pub pos_embed: Param,
    pub blocks: Vec<EncoderBlock>,
    pub norm: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct VitCache {
    patches: Vec<f64>,
    blocks: Vec<BlockCache>,
    norm: LayerNormCache,
}

impl VitCache {
    /// Attention probabilities, indexed `[block][head]`, each row-major `[T, T]`
    /// with `T = n_patches + 1`.
    pub fn attention(&self) -> Vec<&[f64]> {
        self.blocks
            .iter()
            .flat_map(|b| b.attn.iter().map(Vec::as_slice))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VitOutput {
    /// Normalized patch tokens `[n_patches, embed_dim]`, class token excluded.
    pub tokens: Vec<f64>,
    pub h_vit: Vec<f64>,
}

impl Vit {
    pub fn new<R: Rng + ?Sized>(config: VitConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let patch_embed = Linear::new("vit.patch_embed", config.patch_dim(), d, rng);
        let cls_token = Param::trunc_normal("vit.cls_token", &[d], INIT_STD, rng);
        let pos_embed =
            Param::trunc_normal("vit.pos_embed", &[config.n_patches() + 1, d], INIT_STD, rng);
        let blocks = (0..config.depth)
            .map(|i| EncoderBlock::new(&format!("vit.blocks.{i}"), &config, rng))
            .collect();
        Ok(Self {
            config,
            patch_embed,
            cls_token,
            pos_embed,
            blocks,
            norm: LayerNorm::new("vit.norm", d),
        })
    }

    /// Flatten non-overlapping patches in raster order; within a patch the
    /// order is (row, column, channel).
    fn patchify(&self, img: &ImageTensor) -> Vec<f64> {
        let p = self.config.patch_size;
        let g = self.config.grid();
        let c = img.channels;
        let mut out = Vec::with_capacity(self.config.n_patches() * self.config.patch_dim());
        for py in 0..g {
            for px in 0..g {
                for dy in 0..p {
                    let start = img.idx(py * p + dy, px * p, 0);
                    out.extend_from_slice(&img.data[start..start + p * c]);
                }
            }
        }
        out
    }

    pub fn forward(&self, img: &ImageTensor) -> Result<(VitOutput, VitCache)> {
        let cfg = &self.config;
        if img.height != cfg.image_size
            || img.width != cfg.image_size
            || img.channels != cfg.in_channels
        {
            return Err(Error::DimensionMismatch(format!(
                "vit expects {0}x{0}x{1}, got {2}x{3}x{4}",
                cfg.image_size, cfg.in_channels, img.height, img.width, img.channels
            )));
        }
        let n = cfg.n_patches();
        let t = n + 1;
        let d = cfg.embed_dim;

        let patches = self.patchify(img);
        let emb = self.patch_embed.forward(&patches, n);
        let mut x = Vec::with_capacity(t * d);
        x.extend_from_slice(&self.cls_token.value);
        x.extend_from_slice(&emb);
        for (v, p) in x.iter_mut().zip(&self.pos_embed.value) {
            *v += p;
        }

        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, cache) = block.forward(&x, t);
            x = y;
            caches.push(cache);
        }
        let (normed, norm_cache) = self.norm.forward(&x);

        let h_vit = match cfg.pooling {
            VitPooling::ClsToken => normed[..d].to_vec(),
            VitPooling::MeanTokens => {
                let mut m = vec![0.0; d];
                for row in normed[d..].chunks_exact(d) {
                    for (a, &b) in m.iter_mut().zip(row) {
                        *a += b;
                    }
                }
                m.iter_mut().for_each(|v| *v /= n as f64);
                m
            }
        };
        Ok((
            VitOutput {
                tokens: normed[d..].to_vec(),
                h_vit,
            },
            VitCache {
                patches,
                blocks: caches,
                norm: norm_cache,
            },
        ))
    }

    pub fn backward(&mut self, cache: &VitCache, dh_vit: &[f64]) {
        let n = self.config.n_patches();
        let t = n + 1;
        let d = self.config.embed_dim;

        let mut dnormed = vec![0.0; t * d];
        match self.config.pooling {
            VitPooling::ClsToken => dnormed[..d].copy_from_slice(dh_vit),
            VitPooling::MeanTokens => {
                for row in dnormed[d..].chunks_exact_mut(d) {
                    for (g, &v) in row.iter_mut().zip(dh_vit) {
                        *g = v / n as f64;
                    }
                }
            }
        }
        let mut dx = self.norm.backward(&cache.norm, &dnormed);
        for (block, bc) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            dx = block.backward(bc, &dx, t);
        }
        for (g, &v) in self.pos_embed.grad.iter_mut().zip(&dx) {
            *g += v;
        }
        for (g, &v) in self.cls_token.grad.iter_mut().zip(&dx[..d]) {
            *g += v;
        }
        self.patch_embed
            .backward(&cache.patches, &dx[d..], n, false);
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        v.extend(self.patch_embed.params());
        v.push(&self.cls_token);
        v.push(&self.pos_embed);
        for b in &self.blocks {
            v.extend(b.params());
        }
        v.extend(self.norm.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        v.extend(self.patch_embed.params_mut());
        v.push(&mut self.cls_token);
        v.push(&mut self.pos_embed);
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        v.extend(self.norm.params_mut());
        v
    }
}
