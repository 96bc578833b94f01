#![allow(dead_code)]

use std::path::Path;

use geofuse::config::RunConfig;
use geofuse::dataset::MaskSpec;
use geofuse::manifest::{load_manifest, stratified_split};
use geofuse::metrics::EvalReport;
use geofuse::model::{softmax_cross_entropy, Mode, ModelConfig, VitConfig};
use geofuse::synth::{write_corpus, CONFIG_FILE, MANIFEST_FILE};
use geofuse::tensor::ImageTensor;
use geofuse::train::{evaluate, train};
use geofuse::FusionModel;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const GRAD_STEP: f64 = 1e-4;
pub const MIN_GRAD_STEP: f64 = 1e-7;
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative error, so gradients that are zero
/// up to rounding do not divide by ~0.
pub const GRAD_FLOOR: f64 = 1e-6;
/// Tensors up to this size are checked entry by entry; larger tensors
/// get a seeded sample of entries plus random-direction checks.
pub const EXHAUSTIVE_LIMIT: usize = 4096;
pub const SAMPLED_ENTRIES: usize = 1024;
pub const DIRECTIONS: usize = 8;

pub fn grad_config(mode: Mode) -> ModelConfig {
    ModelConfig {
        mode,
        vit: VitConfig {
            image_size: 32,
            patch_size: 16,
            embed_dim: 8,
            depth: 1,
            heads: 2,
            mlp_ratio: 2.0,
            ..VitConfig::default()
        },
        reduced_dim: 8,
        stack_image_with_mask: false,
    }
}

pub fn randn(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub struct GradProblem {
    pub model: FusionModel,
    pub image: ImageTensor,
    pub mask: Option<ImageTensor>,
    pub target: usize,
}

/// Model with every parameter jittered away from its initial value (so no
/// bias sits exactly at zero and LayerNorm is not the identity), and a
/// continuous random image.
pub fn grad_problem(mode: Mode, seed: u64) -> GradProblem {
    let cfg = grad_config(mode);
    let mut model = FusionModel::new(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    for p in model.params_mut() {
        for v in &mut p.value {
            *v += 0.05 * randn(&mut rng);
        }
    }
    let n = 32 * 32;
    let image = ImageTensor::new(32, 32, 3, (0..n * 3).map(|_| randn(&mut rng)).collect()).unwrap();
    let mask = (mode == Mode::Kgml).then(|| {
        let grid = (0..n)
            .map(|_| f64::from(rng.random_bool(0.4) as u8))
            .collect();
        ImageTensor::new(32, 32, 1, grid).unwrap()
    });
    GradProblem {
        model,
        image,
        mask,
        target: rng.random_range(0..5),
    }
}

impl GradProblem {
    pub fn loss_and_pattern(&self) -> (f64, Vec<usize>) {
        let (out, cache) = self
            .model
            .forward_tensors(&self.image, self.mask.as_ref())
            .unwrap();
        let loss = softmax_cross_entropy(&out.logits, self.target, 1.0).0;
        (loss, cache.activation_pattern())
    }

    pub fn analytic(&mut self) -> Vec<Vec<f64>> {
        self.model.zero_grad();
        let (out, cache) = self
            .model
            .forward_tensors(&self.image, self.mask.as_ref())
            .unwrap();
        let (_, g) = softmax_cross_entropy(&out.logits, self.target, 1.0);
        self.model.backward(&cache, &g);
        self.model.params().iter().map(|p| p.grad.clone()).collect()
    }

    fn nudge(&mut self, param: usize, dir: &[(usize, f64)], scale: f64) {
        let mut ps = self.model.params_mut();
        for &(j, d) in dir {
            ps[param].value[j] += scale * d;
        }
    }

    fn loss_at(&mut self, param: usize, dir: &[(usize, f64)], offset: f64) -> (f64, Vec<usize>) {
        self.nudge(param, dir, offset);
        let r = self.loss_and_pattern();
        self.nudge(param, dir, -offset);
        r
    }

    /// Five-point central difference of the loss along `dir` in parameter
    /// `param`. The step starts at `GRAD_STEP` and shrinks tenfold while any
    /// stencil point leaves the linear region of the unperturbed pass (a
    /// ReLU or max-pool kink inside the stencil), down to `MIN_GRAD_STEP`.
    pub fn numeric(&mut self, param: usize, dir: &[(usize, f64)], center: &[usize]) -> f64 {
        let mut h = GRAD_STEP;
        loop {
            let mut same = true;
            let mut f = [0.0; 4];
            for (slot, k) in f.iter_mut().zip([1.0, -1.0, 2.0, -2.0]) {
                let (l, pattern) = self.loss_at(param, dir, k * h);
                same &= pattern == center;
                *slot = l;
            }
            if same || h <= MIN_GRAD_STEP {
                return (8.0 * (f[0] - f[1]) - (f[2] - f[3])) / (12.0 * h);
            }
            h /= 10.0;
        }
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(GRAD_FLOOR)
}

#[derive(Debug)]
pub struct TensorCheck {
    pub name: String,
    pub len: usize,
    pub checked: usize,
    pub directions: usize,
    pub max_rel_err: f64,
    /// (analytic, numeric) at the worst entry or direction.
    pub worst: (f64, f64),
}

/// Compare analytic and finite-difference gradients for every parameter
/// tensor. `exhaustive` checks every entry of every tensor.
pub fn check_gradients(p: &mut GradProblem, seed: u64, exhaustive: bool) -> Vec<TensorCheck> {
    let analytic = p.analytic();
    let center = p.loss_and_pattern().1;
    let names: Vec<String> = p.model.params().iter().map(|q| q.name.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (i, name) in names.into_iter().enumerate() {
        let g = &analytic[i];
        let len = g.len();
        let entries: Vec<usize> = if exhaustive || len <= EXHAUSTIVE_LIMIT {
            (0..len).collect()
        } else {
            sample(&mut rng, len, SAMPLED_ENTRIES).into_vec()
        };
        let mut max_rel_err = 0.0f64;
        let mut worst = (0.0, 0.0);
        let mut record = |a: f64, n: f64| {
            let e = rel_err(a, n);
            if e > max_rel_err {
                max_rel_err = e;
                worst = (a, n);
            }
        };
        for &j in &entries {
            let n = p.numeric(i, &[(j, 1.0)], &center);
            record(g[j], n);
        }
        let directions = if entries.len() < len { DIRECTIONS } else { 0 };
        for _ in 0..directions {
            let dir: Vec<(usize, f64)> = (0..len).map(|j| (j, randn(&mut rng))).collect();
            let a: f64 = dir.iter().map(|&(j, d)| g[j] * d).sum();
            let n = p.numeric(i, &dir, &center);
            record(a, n);
        }
        out.push(TensorCheck {
            name,
            len,
            checked: entries.len(),
            directions,
            max_rel_err,
            worst,
        });
    }
    out
}

/// synth -> split -> train -> eval with the corpus' own training config.
/// Returns the report and the corpus config.
pub fn synthetic_pipeline(
    dir: &Path,
    seed: u64,
    mode: Mode,
    per_class: usize,
    test_fraction: f64,
) -> (EvalReport, RunConfig) {
    let synth = geofuse::synth::SynthConfig {
        per_class,
        ..Default::default()
    };
    write_corpus(dir, &synth, seed).unwrap();
    let mut cfg = RunConfig::load(&dir.join(CONFIG_FILE)).unwrap();
    cfg.model.mode = mode;
    let m = load_manifest(&dir.join(MANIFEST_FILE)).unwrap();
    let (tr, te) = stratified_split(&m, test_fraction, seed).unwrap();
    let (ckpt, _) = train(&cfg.train_config(), &cfg.model, &tr, &MaskSpec::File).unwrap();
    let report = evaluate(&ckpt, &te, mode, &MaskSpec::File).unwrap();
    (report, cfg)
}
