use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Beam-following crop window, top-aligned in z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropSpec {
    pub window: [usize; 3],
}

impl Default for CropSpec {
    fn default() -> Self {
        CropSpec { window: [64, 32, 32] }
    }
}

impl CropSpec {
    pub fn cell_count(&self) -> usize {
        self.window.iter().product()
    }

    /// Window origin for a beam at `beam` (x, y in cell units): centred on the
    /// beam, clamped to stay inside `grid`, `z = 0`.
    pub fn offset(&self, grid: [usize; 3], beam: [f64; 2]) -> Result<[usize; 3]> {
        if self.window.iter().zip(&grid).any(|(w, g)| w > g) || self.window.contains(&0) {
            return Err(Error::Config(format!(
                "crop window {:?} does not fit the domain {:?}",
                self.window, grid
            )));
        }
        let axis = |a: usize| {
            let start = (beam[a] - self.window[a] as f64 / 2.0).round();
            start.clamp(0.0, (grid[a] - self.window[a]) as f64) as usize
        };
        Ok([axis(0), axis(1), 0])
    }
}

/// Copy the window at `offset` out of a row-major `grid` field.
pub fn extract<T: Copy>(field: &[T], grid: [usize; 3], window: [usize; 3], offset: [usize; 3]) -> Vec<T> {
    let [_, ny, nz] = grid;
    let mut out = Vec::with_capacity(window.iter().product());
    for x in offset[0]..offset[0] + window[0] {
        for y in offset[1]..offset[1] + window[1] {
            let start = (x * ny + y) * nz + offset[2];
            out.extend_from_slice(&field[start..start + window[2]]);
        }
    }
    out
}

/// Crop `frame` around the beam; returns the window and its domain offset.
pub fn crop_roi<T: Copy>(frame: &[T], grid: [usize; 3], crop: &CropSpec, beam: [f64; 2]) -> Result<(Vec<T>, [usize; 3])> {
    let offset = crop.offset(grid, beam)?;
    Ok((extract(frame, grid, crop.window, offset), offset))
}

/// 1 where the raw temperature equals `ambient` exactly.
pub fn build_mask_target(raw: &[f32], ambient: f64) -> Vec<u8> {
    raw.iter().map(|&t| u8::from(f64::from(t) == ambient)).collect()
}
