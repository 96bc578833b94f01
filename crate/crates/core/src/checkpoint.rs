//! Versioned checkpoint container.
//!
//! Layout: the magic line `GEOFUSE-CKPT-1`, then text sections `[config]`
//! (`key = value` echo of model and training keys), `[meta]` (seed, steps)
//! and `[stats]` (channel statistics), then `[params] <count>` followed by
//! one record per parameter: a text line `<name> <ndim> <dims...>` and the
//! values as little-endian `f64`.

use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::FusionModel;
use crate::preprocess::ChannelStats;
use crate::train::TrainConfig;

pub const MAGIC: &str = "GEOFUSE-CKPT-1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: FusionModel,
    pub stats: ChannelStats,
    pub seed: u64,
    pub steps: usize,
    pub train_config: TrainConfig,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(
        model: FusionModel,
        stats: ChannelStats,
        seed: u64,
        steps: usize,
        train_config: TrainConfig,
    ) -> Self {
        Self {
            model,
            stats,
            seed,
            steps,
            train_config,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut rc = RunConfig {
            model: self.model.config,
            train: self.train_config,
            ..RunConfig::default()
        };
        rc.seed = self.seed;
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push_str("\n[config]\n");
        for prefix in ["model.", "train."] {
            for (k, v) in rc.entries(prefix) {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out.push_str(&format!(
            "[meta]\nseed = {}\nsteps = {}\n[stats]\n{}",
            self.seed,
            self.steps,
            self.stats.to_text()
        ));
        let params = self.model.params();
        out.push_str(&format!("[params] {}\n", params.len()));
        let mut bytes = out.into_bytes();
        for p in params {
            let dims: Vec<String> = p.shape.iter().map(usize::to_string).collect();
            bytes.extend_from_slice(
                format!("{} {} {}\n", p.name, p.shape.len(), dims.join(" ")).as_bytes(),
            );
            for v in &p.value {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let next_line = |pos: &mut usize| -> Result<String> {
            let rest = &bytes[*pos..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad("truncated header"))?;
            let line = std::str::from_utf8(&rest[..end])
                .map_err(|_| bad("header is not UTF-8"))?
                .to_string();
            *pos += end + 1;
            Ok(line)
        };

        if next_line(&mut pos)? != MAGIC {
            return Err(bad(format!("missing magic header {MAGIC}")));
        }
        let mut section = String::new();
        let mut config_text = String::new();
        let mut stats_text = String::new();
        let mut seed = None;
        let mut steps = None;
        let param_count: usize = loop {
            let line = next_line(&mut pos)?;
            if let Some(n) = line.strip_prefix("[params] ") {
                break n.trim().parse().map_err(|_| bad("bad parameter count"))?;
            }
            if line.starts_with('[') {
                section = line;
                continue;
            }
            match section.as_str() {
                "[config]" => {
                    config_text.push_str(&line);
                    config_text.push('\n');
                }
                "[stats]" => {
                    stats_text.push_str(&line);
                    stats_text.push('\n');
                }
                "[meta]" => {
                    let (k, v) = line.split_once('=').ok_or_else(|| bad("bad meta line"))?;
                    let v = v.trim();
                    match k.trim() {
                        "seed" => seed = Some(v.parse().map_err(|_| bad("bad seed"))?),
                        "steps" => steps = Some(v.parse().map_err(|_| bad("bad steps"))?),
                        other => return Err(bad(format!("unknown meta key {other}"))),
                    }
                }
                other => return Err(bad(format!("unexpected section {other:?}"))),
            }
        };

        let rc = RunConfig::parse(&config_text).map_err(|e| bad(e.to_string()))?;
        let seed: u64 = seed.ok_or_else(|| bad("missing seed"))?;
        let steps = steps.ok_or_else(|| bad("missing steps"))?;
        let stats = ChannelStats::parse(&stats_text).map_err(|e| bad(e.to_string()))?;

        let mut model = FusionModel::new(rc.model, seed).map_err(|e| bad(e.to_string()))?;
        let mut params = model.params_mut();
        if params.len() != param_count {
            return Err(bad(format!(
                "{param_count} parameter records, model has {}",
                params.len()
            )));
        }
        for p in params.iter_mut() {
            let line = next_line(&mut pos)?;
            let mut parts = line.split_whitespace();
            let name = parts.next().ok_or_else(|| bad("empty parameter line"))?;
            if name != p.name {
                return Err(bad(format!("expected parameter {}, found {name}", p.name)));
            }
            let ndim: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("bad ndim"))?;
            let shape: Vec<usize> = parts.filter_map(|s| s.parse().ok()).collect();
            if shape.len() != ndim || shape != p.shape {
                return Err(bad(format!(
                    "{name}: shape {shape:?} does not match model {:?}",
                    p.shape
                )));
            }
            let n = p.value.len();
            let end = pos + 8 * n;
            if end > bytes.len() {
                return Err(bad(format!("{name}: truncated values")));
            }
            for (v, chunk) in p.value.iter_mut().zip(bytes[pos..end].chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            }
            pos = end;
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes after parameters"));
        }
        Ok(Self {
            model,
            stats,
            seed,
            steps,
            train_config: TrainConfig { seed, ..rc.train },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Mode, ModelConfig, VitConfig};

    fn ckpt() -> Checkpoint {
        let cfg = ModelConfig {
            mode: Mode::Baseline,
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
        };
        let mut model = FusionModel::new(cfg, 3).unwrap();
        model.head.out.bias.value[2] = 0.125;
        let stats = ChannelStats {
            mean: vec![0.1, 0.2, 0.3],
            std: vec![0.4, 0.5, 0.6],
        };
        Checkpoint::new(
            model,
            stats,
            3,
            42,
            TrainConfig {
                seed: 3,
                ..TrainConfig::default()
            },
        )
    }

    #[test]
    fn bytes_round_trip() {
        let c = ckpt();
        let bytes = c.to_bytes();
        assert!(bytes.starts_with(MAGIC.as_bytes()));
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = ckpt().to_bytes();
        assert!(Checkpoint::from_bytes(b"NOT-A-CKPT\n").is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
