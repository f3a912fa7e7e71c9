//! Desk-scale conduction model of a moving laser spot.

mod case;
mod material;
mod solver;
mod source;

pub use case::{melt_volume, read_case, run_case, run_cases, write_case, CaseMeta, CaseOutput, SOLVER_VERSION};
pub use material::{MaterialProperties, Properties, ANCHOR_HIGH, ANCHOR_LOW};
pub use solver::{
    carve_keyhole, stable_timestep, substeps_per_interval, HeatSolver, PropertyModel, SimulationConfig,
    SimulationState, Thermal, DEFAULT_SAFETY,
};
pub use source::{absorptivity, absorptivity_from_scaling, gaussian_flux, scaling_variable, AbsorptivityModel};
