//! In-memory samples at model resolution, loaded from a manifest.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::manifest::Manifest;
use crate::mask::{load_mask, rasterize_landcover, LandCoverGrid, SpatialMask};
use crate::preprocess::load_image;
use crate::tensor::ImageTensor;

/// How `mask_path` entries are turned into spatial masks.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum MaskSpec {
    /// Precomputed {0, 255} mask rasters.
    #[default]
    File,
    /// Land-cover code rasters, on where the code is in `relevant_codes`.
    Landcover {
        code_book: BTreeMap<u16, String>,
        relevant_codes: BTreeSet<u16>,
    },
}

impl MaskSpec {
    pub fn load(&self, path: &std::path::Path, dims: (usize, usize)) -> Result<SpatialMask> {
        match self {
            MaskSpec::File => load_mask(path, dims),
            MaskSpec::Landcover {
                code_book,
                relevant_codes,
            } => {
                let lc = LandCoverGrid::load(path, code_book.clone())?;
                rasterize_landcover(&lc, relevant_codes, dims)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// RGB in [0, 1], resized to model resolution.
    pub image: ImageTensor,
    pub mask: Option<SpatialMask>,
    pub label: ClassLabel,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Load every record. With `masks = Some(spec)` each record must name a
    /// mask; with `None` mask paths are ignored.
    pub fn load(m: &Manifest, image_size: usize, masks: Option<&MaskSpec>) -> Result<Self> {
        let mut samples = Vec::with_capacity(m.len());
        for (i, record) in m.records.iter().enumerate() {
            let image = load_image(&m.image_path(i), image_size)?;
            let mask = match masks {
                None => None,
                Some(spec) => {
                    let path = m.mask_path(i).ok_or_else(|| {
                        Error::MissingMask(format!(
                            "{}: record {} ({}) has no mask_path",
                            m.source_id,
                            i + 1,
                            record.image_path.display()
                        ))
                    })?;
                    Some(spec.load(&path, (image_size, image_size))?)
                }
            };
            samples.push(Sample {
                image,
                mask,
                label: record.label,
            });
        }
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageTensor> {
        self.samples.iter().map(|s| &s.image)
    }
}

/// Fail fast when a KGML run is pointed at a manifest without masks.
pub fn require_masks(m: &Manifest) -> Result<()> {
    match m.records.iter().position(|r| r.mask_path.is_none()) {
        Some(i) => Err(Error::MissingMask(format!(
            "{}: record {} ({}) has no mask_path",
            m.source_id,
            i + 1,
            m.records[i].image_path.display()
        ))),
        None => Ok(()),
    }
}
