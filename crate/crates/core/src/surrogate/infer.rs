use serde::{Deserialize, Serialize};

use super::{Role, Surrogate};
use crate::dataset::{NormalizationSpec, ProcessPoint};
use crate::error::{Error, Result};
use crate::tensor::{Mode, Tensor};

/// M-CNN probabilities at or above this mark a voxel as ambient.
pub const MASK_THRESHOLD: f64 = 0.5;

const PREDICT_BATCH: usize = 8;

fn predict(s: &Surrogate, points: &[ProcessPoint]) -> Result<Vec<Vec<f64>>> {
    let cells = s.meta.crop.cell_count();
    let mut out = Vec::with_capacity(points.len());
    for chunk in points.chunks(PREDICT_BATCH) {
        let x: Vec<f64> = chunk.iter().flat_map(|p| s.meta.input_ranges.normalize(p)).collect();
        let y = s.network.predict(&Tensor::new(&[chunk.len(), 3], x)?, Mode::Eval)?;
        out.extend(y.data().chunks(cells).map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// Normalized temperature fields from a T or MT model.
pub fn predict_temperature(s: &Surrogate, points: &[ProcessPoint]) -> Result<Vec<Vec<f64>>> {
    if s.role() == Role::M {
        return Err(Error::Config("expected a temperature model, got the masker".into()));
    }
    predict(s, points)
}

/// Ambient-mask probabilities from an M model.
pub fn predict_mask(m: &Surrogate, points: &[ProcessPoint]) -> Result<Vec<Vec<f64>>> {
    if m.role() != Role::M {
        return Err(Error::Config(format!("expected the masker, got a {:?} model", m.role())));
    }
    predict(m, points)
}

fn check_pair(mt: &Surrogate, m: &Surrogate) -> Result<()> {
    if m.role() != Role::M || mt.role() == Role::M {
        return Err(Error::Config(format!(
            "composite needs a temperature model and the masker, got {:?} and {:?}",
            mt.role(),
            m.role()
        )));
    }
    let (a, b) = (&mt.meta, &m.meta);
    if a.crop != b.crop || a.input_ranges != b.input_ranges || a.normalization != b.normalization {
        return Err(Error::Config(
            "temperature and mask checkpoints disagree on crop, input ranges or normalization".into(),
        ));
    }
    Ok(())
}

/// Masked composite in normalized units: 0 wherever the masker says
/// ambient, the MT prediction elsewhere.
pub fn predict_composite(points: &[ProcessPoint], mt: &Surrogate, m: &Surrogate) -> Result<Vec<Vec<f64>>> {
    check_pair(mt, m)?;
    let temps = predict(mt, points)?;
    let masks = predict(m, points)?;
    Ok(temps
        .into_iter()
        .zip(masks)
        .map(|(t, p)| {
            t.into_iter()
                .zip(p)
                .map(|(v, p)| if p >= MASK_THRESHOLD { 0.0 } else { v })
                .collect()
        })
        .collect())
}

/// A predicted crop in Kelvin with its placement in the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub point: ProcessPoint,
    pub dims: [usize; 3],
    /// Crop origin in the simulation domain for this beam position.
    pub offset: [usize; 3],
    pub normalization: NormalizationSpec,
    pub in_training_range: bool,
    pub warnings: Vec<String>,
    pub min_temperature: f64,
    pub max_temperature: f64,
    #[serde(skip)]
    pub field: Vec<f32>,
}

/// Single forward pass of both networks, denormalized to Kelvin.
pub fn infer_field(point: ProcessPoint, mt: &Surrogate, m: &Surrogate) -> Result<Inference> {
    let normalized = predict_composite(&[point], mt, m)?.pop().expect("one point in, one field out");
    let meta = &mt.meta;
    let norm = meta.normalization;
    let field: Vec<f32> = normalized.iter().map(|&n| norm.denormalize(n) as f32).collect();
    let mut warnings = Vec::new();
    let in_range = meta.input_ranges.contains(&point);
    if !in_range {
        let r = &meta.input_ranges;
        warnings.push(format!(
            "input outside the training ranges P {:?} W, V {:?} mm/s, t {:?} us",
            r.power, r.velocity, r.time
        ));
    }
    let d = &meta.domain;
    let beam_x = d.beam_start[0] + point.velocity * 1e-3 * point.time * 1e-6 / d.cell_size;
    let offset = match meta.crop.offset(d.grid, [beam_x, d.beam_start[1]]) {
        Ok(o) => o,
        Err(e) => {
            warnings.push(e.to_string());
            [0, 0, 0]
        }
    };
    let (lo, hi) = field
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(f64::from(v)), b.max(f64::from(v))));
    Ok(Inference {
        point,
        dims: meta.crop.window,
        offset,
        normalization: norm,
        in_training_range: in_range,
        warnings,
        min_temperature: lo,
        max_temperature: hi,
        field,
    })
}
