//! From simulated cases to normalized, cropped training samples.
//!
//! A dataset directory holds `manifest.json` plus two checksummed blobs:
//! `fields.bin` (normalized `f32` crops, sample-major) and `masks.bin`
//! (one byte per cell, 1 = ambient).

mod crop;
mod normalize;

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use crop::{build_mask_target, crop_roi, extract, CropSpec};
pub use normalize::{compute_clip_threshold, percentile, percentile_sorted, InputRanges, NormalizationSpec, ProcessPoint};

use crate::blob;
use crate::error::{Error, Result};
use crate::physics::{CaseOutput, MaterialProperties};

pub const DATASET_VERSION: u32 = 1;
pub const FIELDS_TAG: [u8; 4] = *b"MPDF";
pub const MASKS_TAG: [u8; 4] = *b"MPDM";
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.85;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

/// Case-level random split: `round(n · fraction)` cases go to training,
/// clamped so both sides are non-empty.
pub fn split_train_val(n_cases: usize, fraction: f64, seed: u64) -> Result<Vec<Split>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("train fraction must be in (0, 1), got {fraction}")));
    }
    if n_cases < 2 {
        return Err(Error::Config(format!("need at least 2 cases to split, got {n_cases}")));
    }
    let n_train = ((n_cases as f64 * fraction).round() as usize).clamp(1, n_cases - 1);
    let mut order: Vec<usize> = (0..n_cases).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut splits = vec![Split::Val; n_cases];
    for &i in &order[..n_train] {
        splits[i] = Split::Train;
    }
    Ok(splits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub id: String,
    /// W.
    pub power: f64,
    /// mm/s.
    pub velocity: f64,
    /// m.
    pub cell_size: f64,
    pub grid: [usize; 3],
    /// Beam centre at t = 0, cell units.
    pub beam_start: [f64; 2],
    pub frame_count: usize,
    pub split: Split,
}

/// Per-sample metadata; the sample's field and mask live in the blobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub case_id: String,
    pub frame: usize,
    pub point: ProcessPoint,
    /// Window origin in the simulation domain.
    pub offset: [usize; 3],
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub generator_version: String,
    pub material: Option<MaterialProperties>,
    pub ambient: f64,
    pub normalization: NormalizationSpec,
    pub crop: CropSpec,
    pub seed: u64,
    pub train_fraction: f64,
    pub input_ranges: Option<InputRanges>,
    pub cases: Vec<CaseEntry>,
    pub samples: Vec<SampleMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub meta: SampleMeta,
    /// Normalized crop, x-major then y, z fastest.
    pub field: Vec<f32>,
    pub mask: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub records: Vec<SampleRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClipMax {
    Fixed(f64),
    /// Percentile of above-melting temperatures over all frames.
    FromData,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessOptions {
    pub crop: CropSpec,
    pub t_max: ClipMax,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            crop: CropSpec::default(),
            t_max: ClipMax::Fixed(NormalizationSpec::default().t_max),
            train_fraction: DEFAULT_TRAIN_FRACTION,
            seed: 0,
        }
    }
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.meta.split == split)
    }

    pub fn material(&self) -> Result<&MaterialProperties> {
        self.manifest
            .material
            .as_ref()
            .ok_or_else(|| Error::Config("dataset has no material (no cases)".into()))
    }

    pub fn input_ranges(&self) -> Result<InputRanges> {
        self.manifest
            .input_ranges
            .ok_or_else(|| Error::Config("dataset has no samples to derive input ranges from".into()))
    }
}

/// Normalize, crop and split simulated cases.
pub fn build_dataset(cases: &[CaseOutput], opts: &PreprocessOptions) -> Result<Dataset> {
    let material = cases.first().map(|c| c.meta.material.clone());
    let ambient = cases.first().map_or(293.0, |c| c.meta.config.ambient);
    for c in cases {
        if Some(&c.meta.material) != material.as_ref() {
            return Err(Error::Config(format!("case {} uses a different material", c.meta.config.case_id)));
        }
        if c.meta.config.ambient != ambient {
            return Err(Error::Config(format!("case {} uses a different ambient", c.meta.config.case_id)));
        }
    }
    let t_max = match opts.t_max {
        ClipMax::Fixed(t) => t,
        ClipMax::FromData => {
            let t_melt = material.as_ref().map_or(0.0, MaterialProperties::melting_temperature);
            let frames = cases.iter().flat_map(|c| c.frames.iter().map(Vec::as_slice));
            compute_clip_threshold(frames, t_melt, NormalizationSpec::default().clip_percentile)?
        }
    };
    let normalization = NormalizationSpec {
        t_min: ambient,
        t_max,
        ..Default::default()
    };
    normalization.validate()?;

    // A fraction of 1 keeps every case for training (overfit runs).
    let splits = match cases.len() {
        0 => vec![],
        n if n == 1 || opts.train_fraction == 1.0 => vec![Split::Train; n],
        n => split_train_val(n, opts.train_fraction, opts.seed)?,
    };

    let mut entries = Vec::with_capacity(cases.len());
    let mut records = Vec::new();
    for (case, &split) in cases.iter().zip(&splits) {
        let cfg = &case.meta.config;
        entries.push(CaseEntry {
            id: cfg.case_id.clone(),
            power: cfg.power,
            velocity: cfg.velocity * 1e3,
            cell_size: cfg.cell_size,
            grid: cfg.grid,
            beam_start: cfg.beam_start,
            frame_count: case.frames.len(),
            split,
        });
        for (k, raw) in case.frames.iter().enumerate() {
            let t = cfg.frame_time(k);
            let beam = [cfg.beam_x_cells(t), cfg.beam_start[1]];
            let (window, offset) = crop_roi(raw, cfg.grid, &opts.crop, beam)?;
            records.push(SampleRecord {
                meta: SampleMeta {
                    case_id: cfg.case_id.clone(),
                    frame: k,
                    point: ProcessPoint {
                        power: cfg.power,
                        velocity: cfg.velocity * 1e3,
                        time: t * 1e6,
                    },
                    offset,
                    split,
                },
                mask: build_mask_target(&window, ambient),
                field: normalization.normalize_field(&window),
            });
        }
    }
    let input_ranges = InputRanges::from_points(records.iter().map(|r| &r.meta.point));
    let generator_version = cases
        .first()
        .map_or_else(String::new, |c| c.meta.solver_version.clone());
    Ok(Dataset {
        manifest: DatasetManifest {
            format_version: DATASET_VERSION,
            generator_version,
            material,
            ambient,
            normalization,
            crop: opts.crop,
            seed: opts.seed,
            train_fraction: opts.train_fraction,
            input_ranges,
            cases: entries,
            samples: records.iter().map(|r| r.meta.clone()).collect(),
        },
        records,
    })
}

pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&dataset.manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    let fields: Vec<f32> = dataset.records.iter().flat_map(|r| r.field.iter().copied()).collect();
    let masks: Vec<u8> = dataset.records.iter().flat_map(|r| r.mask.iter().copied()).collect();
    blob::write_f32(&dir.join("fields.bin"), FIELDS_TAG, &fields)?;
    blob::write_u8(&dir.join("masks.bin"), MASKS_TAG, &masks)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: path.clone(),
        what: "dataset manifest",
        detail: e.to_string(),
    })?;
    let version = value.get("format_version").and_then(serde_json::Value::as_u64);
    if version != Some(u64::from(DATASET_VERSION)) {
        return Err(Error::VersionMismatch {
            path,
            found: version.unwrap_or(0) as u32,
            expected: DATASET_VERSION,
        });
    }
    let manifest: DatasetManifest = serde_json::from_value(value).map_err(|e| Error::Malformed {
        path: path.clone(),
        what: "dataset manifest",
        detail: e.to_string(),
    })?;
    let cells = manifest.crop.cell_count();
    let n = manifest.samples.len() * cells;
    let fields = blob::read_f32(&dir.join("fields.bin"), FIELDS_TAG, Some(n))?;
    let masks = blob::read_u8(&dir.join("masks.bin"), MASKS_TAG, Some(n))?;
    let records = manifest
        .samples
        .iter()
        .enumerate()
        .map(|(i, meta)| SampleRecord {
            meta: meta.clone(),
            field: fields[i * cells..(i + 1) * cells].to_vec(),
            mask: masks[i * cells..(i + 1) * cells].to_vec(),
        })
        .collect();
    Ok(Dataset { manifest, records })
}
