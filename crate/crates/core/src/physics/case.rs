//! Running a full case and the per-case directory layout.
//!
//! ```text
//! <case>/meta.json   config, material, solver version, substep count
//! <case>/frames.bin  f32 temperatures, frame-major then x, y, z
//! <case>/voids.bin   one byte per cell, same ordering
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::material::MaterialProperties;
use super::solver::{stable_timestep, substeps_per_interval, HeatSolver, SimulationConfig, SimulationState};
use crate::blob;
use crate::error::{Error, Result};

pub const SOLVER_VERSION: &str = concat!("meltpool-fd ", env!("CARGO_PKG_VERSION"));
pub const FRAMES_TAG: [u8; 4] = *b"MPFR";
pub const VOIDS_TAG: [u8; 4] = *b"MPVD";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMeta {
    pub solver_version: String,
    pub config: SimulationConfig,
    pub material: MaterialProperties,
    pub absorptivity: f64,
    pub substep_seconds: f64,
    pub substeps_per_frame: usize,
}

/// Frames and void masks of one simulated case.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseOutput {
    pub meta: CaseMeta,
    /// One grid of temperatures (K) per frame.
    pub frames: Vec<Vec<f32>>,
    /// One grid per frame, 1 = void.
    pub voids: Vec<Vec<u8>>,
}

impl CaseOutput {
    pub fn grid(&self) -> [usize; 3] {
        self.meta.config.grid
    }

    pub fn frame_time(&self, k: usize) -> f64 {
        self.meta.config.frame_time(k)
    }
}

/// Run independent cases in parallel, one worker per case. Results keep
/// the order of `configs`.
pub fn run_cases(configs: &[SimulationConfig], material: &MaterialProperties) -> Result<Vec<CaseOutput>> {
    use rayon::prelude::*;
    configs.par_iter().map(|c| run_case(c, material)).collect()
}

/// Simulate `config.frame_count` frames, carving at each frame boundary.
pub fn run_case(config: &SimulationConfig, material: &MaterialProperties) -> Result<CaseOutput> {
    let solver = HeatSolver::new(config.clone(), material.clone())?;
    let dt_max = stable_timestep(config, material);
    let substeps = substeps_per_interval(config.frame_interval, dt_max);
    let dt = config.frame_interval / substeps as f64;
    log::debug!(
        "{}: A = {:.4}, {} substeps of {:.3e} s per frame",
        config.case_id,
        solver.absorptivity,
        substeps,
        dt
    );

    let mut state = SimulationState::ambient(config.grid, config.ambient);
    let mut frames = Vec::with_capacity(config.frame_count);
    let mut voids = Vec::with_capacity(config.frame_count);
    for k in 0..config.frame_count {
        for _ in 0..substeps {
            solver.step(&mut state, dt).map_err(|e| Error::Frame {
                frame: k,
                source: Box::new(e),
            })?;
        }
        // Keep the emitted time on the exact frame grid.
        state.time = config.frame_time(k);
        if config.carving {
            solver.carve(&mut state);
        }
        frames.push(state.temperature.iter().map(|&t| t as f32).collect());
        voids.push(state.void.iter().map(|&v| u8::from(v)).collect());
    }
    Ok(CaseOutput {
        meta: CaseMeta {
            solver_version: SOLVER_VERSION.to_string(),
            config: config.clone(),
            material: material.clone(),
            absorptivity: solver.absorptivity,
            substep_seconds: dt,
            substeps_per_frame: substeps,
        },
        frames,
        voids,
    })
}

/// Number of cells strictly above the melting temperature.
pub fn melt_volume(frame: &[f32], material: &MaterialProperties) -> usize {
    let tm = material.melting_temperature();
    frame.iter().filter(|&&t| f64::from(t) > tm).count()
}

pub fn write_case(dir: &Path, case: &CaseOutput) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = dir.join("meta.json");
    let json = serde_json::to_string_pretty(&case.meta).expect("meta serializes");
    fs::write(&meta, json).map_err(|e| Error::io(&meta, e))?;
    let frames: Vec<f32> = case.frames.concat();
    blob::write_f32(&dir.join("frames.bin"), FRAMES_TAG, &frames)?;
    blob::write_u8(&dir.join("voids.bin"), VOIDS_TAG, &case.voids.concat())
}

pub fn read_case(dir: &Path) -> Result<CaseOutput> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: CaseMeta = serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: meta_path.clone(),
        what: "case metadata",
        detail: e.to_string(),
    })?;
    let cells = meta.config.cell_count();
    let n = cells * meta.config.frame_count;
    let frames = blob::read_f32(&dir.join("frames.bin"), FRAMES_TAG, Some(n))?;
    let voids = blob::read_u8(&dir.join("voids.bin"), VOIDS_TAG, Some(n))?;
    Ok(CaseOutput {
        meta,
        frames: frames.chunks(cells).map(<[f32]>::to_vec).collect(),
        voids: voids.chunks(cells).map(<[u8]>::to_vec).collect(),
    })
}
