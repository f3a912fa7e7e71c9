//! Laser heat input: Gaussian surface flux and keyhole absorptivity scaling.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::material::MaterialProperties;
use crate::error::{Error, Result};

/// Surface heat flux (W/m²) at distance `r` from the beam axis:
/// `P / (π r0²) · exp(-2 r² / r0²)`.
///
/// This integrates to `P / 2` over the plane.
pub fn gaussian_flux(power: f64, beam_radius: f64, r: f64) -> f64 {
    power / (beam_radius * beam_radius * PI) * (-2.0 * r * r / (beam_radius * beam_radius)).exp()
}

/// Saturating absorptivity law `A = 0.70 (1 - exp(-0.66 y))`.
pub fn absorptivity_from_scaling(y: f64) -> f64 {
    0.70 * (1.0 - (-0.66 * y).exp())
}

/// How the scaling variable `y` is computed from the process parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AbsorptivityModel {
    /// `y = A_m P D / (π v H_m r0² √(D r0²/v)) · (r0 √(D r0 / v))`, taken
    /// literally. In SI units this yields `y` of order 1e-7 and therefore
    /// essentially zero absorption.
    AsPrinted,
    /// Dimensionless normalized enthalpy `y = A_m P / (π H_m √(D v r0³))`.
    NormalizedEnthalpy,
    /// A constant absorptivity, bypassing the scaling law.
    Fixed { value: f64 },
}

impl Default for AbsorptivityModel {
    fn default() -> Self {
        AbsorptivityModel::NormalizedEnthalpy
    }
}

/// Scaling variable `y` for the given model (not used by [`AbsorptivityModel::Fixed`]).
pub fn scaling_variable(
    model: AbsorptivityModel,
    min_absorptivity: f64,
    power: f64,
    diffusivity: f64,
    velocity: f64,
    melting_enthalpy: f64,
    beam_radius: f64,
) -> f64 {
    let (a_m, p, d, v, h_m, r0) = (min_absorptivity, power, diffusivity, velocity, melting_enthalpy, beam_radius);
    match model {
        AbsorptivityModel::AsPrinted => {
            a_m * p * d / (PI * v * h_m * r0 * r0 * (d * r0 * r0 / v).sqrt()) * (r0 * (d * r0 / v).sqrt())
        }
        AbsorptivityModel::NormalizedEnthalpy | AbsorptivityModel::Fixed { .. } => {
            a_m * p / (PI * h_m * (d * v * r0 * r0 * r0).sqrt())
        }
    }
}

/// Absorptivity for one process point, with the diffusivity evaluated at
/// the melting temperature.
pub fn absorptivity(
    model: AbsorptivityModel,
    material: &MaterialProperties,
    power: f64,
    velocity: f64,
    beam_radius: f64,
) -> Result<f64> {
    if !(velocity > 0.0) {
        return Err(Error::Config(format!("scan velocity must be positive, got {velocity}")));
    }
    if !(beam_radius > 0.0) {
        return Err(Error::Config(format!("beam radius must be positive, got {beam_radius}")));
    }
    if let AbsorptivityModel::Fixed { value } = model {
        return Ok(value);
    }
    if power <= 0.0 {
        return Ok(0.0);
    }
    let d = material.interpolate(material.melting_temperature()).diffusivity();
    let y = scaling_variable(
        model,
        material.min_absorptivity,
        power,
        d,
        velocity,
        material.melting_enthalpy,
        beam_radius,
    );
    Ok(absorptivity_from_scaling(y))
}
