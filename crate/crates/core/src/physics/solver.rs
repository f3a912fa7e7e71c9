//! Explicit finite-volume conduction with a moving surface source.
//!
//! The conserved quantity is the volumetric enthalpy `E(T) = ρ(T)·h(T)`,
//! with `h` the integral of the effective specific heat from ambient. Each
//! substep adds the conductive face fluxes (computed once per face from the
//! previous temperatures) and the absorbed surface flux to `E`, then
//! recovers `T` by inverting `E(T)`. Because every face flux is added to
//! one cell and subtracted from its neighbour, the total enthalpy of an
//! insulated, source-free domain changes only by rounding.

use serde::{Deserialize, Serialize};

use super::material::{MaterialProperties, Properties, ANCHOR_HIGH, ANCHOR_LOW};
use super::source::{absorptivity, gaussian_flux, AbsorptivityModel};
use crate::error::{Error, Result};

/// Fraction of the explicit stability limit used for the substep.
pub const DEFAULT_SAFETY: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PropertyModel {
    /// Interpolated properties with latent heat over the mushy zone.
    TemperatureDependent,
    /// Properties frozen at one temperature, no latent heat.
    Constant { reference_temperature: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub case_id: String,
    /// Cells along x (scan direction), y and z (depth; `z = 0` is the top surface).
    pub grid: [usize; 3],
    /// Cubic cell edge, m.
    pub cell_size: f64,
    /// Beam radius `r0`, m.
    pub beam_radius: f64,
    /// Laser power, W.
    pub power: f64,
    /// Scan velocity along +x, m/s.
    pub velocity: f64,
    /// Time between emitted frames, s.
    pub frame_interval: f64,
    pub frame_count: usize,
    /// K.
    pub ambient: f64,
    /// Beam centre at `t = 0` in cell units (`x`, `y`); cell `i` spans `[i, i+1)`.
    pub beam_start: [f64; 2],
    pub properties: PropertyModel,
    pub absorptivity: AbsorptivityModel,
    /// Scale the Gaussian so it integrates to `P` instead of `P/2`.
    pub full_power_source: bool,
    pub carving: bool,
    pub allow_beam_exit: bool,
    pub safety: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            case_id: "case".into(),
            grid: [128, 64, 32],
            cell_size: 10e-6,
            beam_radius: 50e-6,
            power: 200.0,
            velocity: 0.8,
            frame_interval: 5e-6,
            frame_count: 100,
            ambient: 293.0,
            beam_start: [20.5, 32.0],
            properties: PropertyModel::TemperatureDependent,
            absorptivity: AbsorptivityModel::default(),
            full_power_source: false,
            carving: true,
            allow_beam_exit: false,
            safety: DEFAULT_SAFETY,
        }
    }
}

impl SimulationConfig {
    /// Beam starting at x = 20.5 cells on the y mid-plane of `grid`.
    pub fn with_grid(grid: [usize; 3]) -> Self {
        SimulationConfig {
            grid,
            beam_start: [20.5, grid[1] as f64 / 2.0],
            ..Default::default()
        }
    }

    pub fn cell_count(&self) -> usize {
        self.grid.iter().product()
    }

    /// Time of frame `k` (0-based): `(k + 1) * frame_interval`.
    pub fn frame_time(&self, k: usize) -> f64 {
        (k + 1) as f64 * self.frame_interval
    }

    /// Beam centre along x, in cells, at time `t`.
    pub fn beam_x_cells(&self, t: f64) -> f64 {
        self.beam_start[0] + self.velocity * t / self.cell_size
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("{}: {m}", self.case_id)));
        if self.grid.iter().any(|&n| n == 0) {
            return bad(format!("grid {:?} has an empty axis", self.grid));
        }
        if !(self.cell_size > 0.0) {
            return bad(format!("cell size must be positive, got {}", self.cell_size));
        }
        if !(self.beam_radius > 0.0) {
            return bad(format!("beam radius must be positive, got {}", self.beam_radius));
        }
        if !(self.velocity > 0.0) {
            return bad(format!("scan velocity must be positive, got {}", self.velocity));
        }
        if !(self.power >= 0.0) {
            return bad(format!("laser power must be non-negative, got {}", self.power));
        }
        if self.frame_count == 0 || !(self.frame_interval > 0.0) {
            return bad("need at least one frame and a positive frame interval".into());
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return bad(format!("safety factor must be in (0, 1], got {}", self.safety));
        }
        let end = self.beam_x_cells(self.frame_time(self.frame_count - 1));
        if !self.allow_beam_exit && (self.beam_start[0] < 0.0 || end > self.grid[0] as f64) {
            return bad(format!(
                "beam path x in [{:.2}, {end:.2}] cells leaves the domain of {} cells",
                self.beam_start[0], self.grid[0]
            ));
        }
        Ok(())
    }
}

/// Material response used by the solver: properties, enthalpy and its inverse.
#[derive(Debug, Clone)]
pub struct Thermal {
    material: MaterialProperties,
    model: PropertyModel,
    ambient: f64,
}

impl Thermal {
    pub fn new(material: MaterialProperties, model: PropertyModel, ambient: f64) -> Self {
        Thermal {
            material,
            model,
            ambient,
        }
    }

    pub fn material(&self) -> &MaterialProperties {
        &self.material
    }

    pub fn ambient(&self) -> f64 {
        self.ambient
    }

    pub fn properties(&self, t: f64) -> Properties {
        match self.model {
            PropertyModel::TemperatureDependent => self.material.interpolate(t),
            PropertyModel::Constant { reference_temperature } => self.material.interpolate(reference_temperature),
        }
    }

    /// Volumetric enthalpy relative to ambient, J/m³.
    pub fn enthalpy(&self, t: f64) -> f64 {
        match self.model {
            PropertyModel::TemperatureDependent => {
                self.material.interpolate(t).density * self.material.specific_enthalpy(self.ambient, t)
            }
            PropertyModel::Constant { .. } => {
                let p = self.properties(t);
                p.density * p.specific_heat * (t - self.ambient)
            }
        }
    }

    fn enthalpy_slope(&self, t: f64) -> f64 {
        match self.model {
            PropertyModel::TemperatureDependent => {
                let m = &self.material;
                let drho = if (ANCHOR_LOW..ANCHOR_HIGH).contains(&t) {
                    (m.density[1] - m.density[0]) / (ANCHOR_HIGH - ANCHOR_LOW)
                } else {
                    0.0
                };
                drho * m.specific_enthalpy(self.ambient, t) + m.interpolate(t).density * m.effective_specific_heat(t)
            }
            PropertyModel::Constant { .. } => {
                let p = self.properties(t);
                p.density * p.specific_heat
            }
        }
    }

    /// Invert [`Thermal::enthalpy`] with a bracketed Newton iteration.
    pub fn temperature(&self, e: f64, guess: f64) -> f64 {
        if e == 0.0 {
            return self.ambient;
        }
        if let PropertyModel::Constant { .. } = self.model {
            let p = self.properties(self.ambient);
            return self.ambient + e / (p.density * p.specific_heat);
        }
        let (mut lo, mut hi) = if e > 0.0 {
            (self.ambient, guess.max(self.ambient + 1.0))
        } else {
            (guess.min(self.ambient - 1.0), self.ambient)
        };
        while self.enthalpy(hi) < e {
            lo = hi;
            hi = self.ambient + 2.0 * (hi - self.ambient);
        }
        while self.enthalpy(lo) > e {
            hi = lo;
            lo = self.ambient - 2.0 * (self.ambient - lo);
        }
        let mut t = guess.clamp(lo, hi);
        for _ in 0..100 {
            let f = self.enthalpy(t) - e;
            if f == 0.0 {
                return t;
            }
            if f > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let mut next = t - f / self.enthalpy_slope(t);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - t).abs() <= 1e-13 * t.abs() || hi - lo <= 1e-13 * t.abs() {
                return next;
            }
            t = next;
        }
        t
    }
}

/// Largest stable explicit substep: `safety · Δx² / (6 α_max)`, with
/// `α_max` the largest diffusivity on `[298 K, T_vap]`.
pub fn stable_timestep(config: &SimulationConfig, material: &MaterialProperties) -> f64 {
    let thermal = Thermal::new(material.clone(), config.properties, config.ambient);
    let hi = material.vaporization_temperature.ceil() as usize;
    let alpha_max = (ANCHOR_LOW as usize..=hi)
        .map(|t| thermal.properties(t as f64).diffusivity())
        .fold(0.0, f64::max);
    config.safety * config.cell_size * config.cell_size / (6.0 * alpha_max)
}

/// Number of equal substeps needed to cover `interval` without exceeding `max_step`.
pub fn substeps_per_interval(interval: f64, max_step: f64) -> usize {
    ((interval / max_step).ceil() as usize).max(1)
}

/// Temperature, enthalpy and vapor mask of one case.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationState {
    pub grid: [usize; 3],
    pub temperature: Vec<f64>,
    pub enthalpy: Vec<f64>,
    pub void: Vec<bool>,
    pub time: f64,
}

impl SimulationState {
    pub fn ambient(grid: [usize; 3], ambient: f64) -> Self {
        let n = grid.iter().product();
        SimulationState {
            grid,
            temperature: vec![ambient; n],
            enthalpy: vec![0.0; n],
            void: vec![false; n],
            time: 0.0,
        }
    }

    /// State with the given temperatures (enthalpy derived from them).
    pub fn from_temperature(grid: [usize; 3], temperature: Vec<f64>, thermal: &Thermal) -> Self {
        let enthalpy = temperature.iter().map(|&t| thermal.enthalpy(t)).collect();
        let n = temperature.len();
        SimulationState {
            grid,
            temperature,
            enthalpy,
            void: vec![false; n],
            time: 0.0,
        }
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.grid[1] + y) * self.grid[2] + z
    }

    /// Sum of volumetric enthalpy over non-void cells times the cell volume.
    pub fn total_enthalpy(&self, cell_size: f64) -> f64 {
        let v = cell_size.powi(3);
        self.enthalpy
            .iter()
            .zip(&self.void)
            .filter(|(_, &void)| !void)
            .map(|(e, _)| e * v)
            .sum()
    }

    pub fn void_count(&self) -> usize {
        self.void.iter().filter(|&&v| v).count()
    }
}

/// Per-case solver context.
#[derive(Debug, Clone)]
pub struct HeatSolver {
    pub config: SimulationConfig,
    pub thermal: Thermal,
    pub absorptivity: f64,
}

impl HeatSolver {
    pub fn new(config: SimulationConfig, material: MaterialProperties) -> Result<Self> {
        config.validate()?;
        material.validate().map_err(Error::Config)?;
        let a = absorptivity(config.absorptivity, &material, config.power, config.velocity, config.beam_radius)?;
        let thermal = Thermal::new(material, config.properties, config.ambient);
        Ok(HeatSolver {
            config,
            thermal,
            absorptivity: a,
        })
    }

    /// Absorbed surface flux (W/m²) at cell column `(x, y)` and time `t`.
    pub fn absorbed_flux(&self, x: usize, y: usize, t: f64) -> f64 {
        let c = &self.config;
        let dx = (x as f64 + 0.5 - c.beam_x_cells(t)) * c.cell_size;
        let dy = (y as f64 + 0.5 - c.beam_start[1]) * c.cell_size;
        let scale = if c.full_power_source { 2.0 } else { 1.0 };
        scale * self.absorptivity * gaussian_flux(c.power, c.beam_radius, (dx * dx + dy * dy).sqrt())
    }

    /// Advance `state` by `dt` seconds.
    pub fn step(&self, state: &mut SimulationState, dt: f64) -> Result<()> {
        let [nx, ny, nz] = state.grid;
        let dx = self.config.cell_size;
        let coef = dt / (dx * dx);
        let idx = |x: usize, y: usize, z: usize| (x * ny + y) * nz + z;

        let k: Vec<f64> = state
            .temperature
            .iter()
            .map(|&t| self.thermal.properties(t).conductivity)
            .collect();
        let mut de = vec![0.0; state.temperature.len()];
        let t = &state.temperature;
        let void = &state.void;
        let face = |i: usize, j: usize, de: &mut [f64]| {
            if void[j] {
                return;
            }
            let f = 0.5 * (k[i] + k[j]) * (t[j] - t[i]) * coef;
            de[i] += f;
            de[j] -= f;
        };
        for x in 0..nx {
            for y in 0..ny {
                for z in 0..nz {
                    let i = idx(x, y, z);
                    if void[i] {
                        continue;
                    }
                    if x + 1 < nx {
                        face(i, idx(x + 1, y, z), &mut de);
                    }
                    if y + 1 < ny {
                        face(i, idx(x, y + 1, z), &mut de);
                    }
                    if z + 1 < nz {
                        face(i, idx(x, y, z + 1), &mut de);
                    }
                }
            }
        }

        if self.config.power > 0.0 && self.absorptivity > 0.0 {
            let t_mid = state.time + 0.5 * dt;
            for x in 0..nx {
                for y in 0..ny {
                    // Flux lands on the topmost metal cell of each column.
                    let Some(z) = (0..nz).find(|&z| !void[idx(x, y, z)]) else {
                        continue;
                    };
                    de[idx(x, y, z)] += dt * self.absorbed_flux(x, y, t_mid) / dx;
                }
            }
        }

        let limit = 10.0 * self.thermal.material().vaporization_temperature;
        for (i, &d) in de.iter().enumerate() {
            if d == 0.0 || state.void[i] {
                continue;
            }
            state.enthalpy[i] += d;
            let tn = self.thermal.temperature(state.enthalpy[i], state.temperature[i]);
            if !tn.is_finite() || tn.abs() > limit {
                let (x, rem) = (i / (ny * nz), i % (ny * nz));
                return Err(Error::Instability {
                    case: self.config.case_id.clone(),
                    time_s: state.time + dt,
                    cell: (x, rem / nz, rem % nz),
                    temperature: tn,
                });
            }
            state.temperature[i] = tn;
        }
        state.time += dt;
        Ok(())
    }

    /// Turn every metal cell above the vaporization temperature into void.
    pub fn carve(&self, state: &mut SimulationState) -> usize {
        carve_keyhole(state, &self.thermal)
    }
}

/// Cells hotter than `T_vap` become void at exactly ambient temperature and
/// stay void. Returns the number of newly carved cells.
///
/// A carved cell takes its enthalpy at `T_vap` with it; whatever it held
/// above that is shared equally among its remaining metal neighbours.
/// Passes repeat until no metal cell is above `T_vap`.
pub fn carve_keyhole(state: &mut SimulationState, thermal: &Thermal) -> usize {
    let t_vap = thermal.material().vaporization_temperature;
    let e_vap = thermal.enthalpy(t_vap);
    let [nx, ny, nz] = state.grid;
    let mut carved = 0;
    loop {
        let hot: Vec<usize> = (0..state.temperature.len())
            .filter(|&i| !state.void[i] && state.temperature[i] > t_vap)
            .collect();
        if hot.is_empty() {
            return carved;
        }
        let mut excess = Vec::with_capacity(hot.len());
        for &i in &hot {
            excess.push(state.enthalpy[i] - e_vap);
            state.void[i] = true;
            state.temperature[i] = thermal.ambient;
            state.enthalpy[i] = 0.0;
        }
        carved += hot.len();
        let mut touched = Vec::new();
        for (&i, &extra) in hot.iter().zip(&excess) {
            let (x, rem) = (i / (ny * nz), i % (ny * nz));
            let (y, z) = (rem / nz, rem % nz);
            let mut neighbours = [0usize; 6];
            let mut n = 0;
            let mut push = |j: usize| {
                if !state.void[j] {
                    neighbours[n] = j;
                    n += 1;
                }
            };
            if x > 0 {
                push(i - ny * nz);
            }
            if x + 1 < nx {
                push(i + ny * nz);
            }
            if y > 0 {
                push(i - nz);
            }
            if y + 1 < ny {
                push(i + nz);
            }
            if z > 0 {
                push(i - 1);
            }
            if z + 1 < nz {
                push(i + 1);
            }
            for &j in &neighbours[..n] {
                state.enthalpy[j] += extra / n as f64;
                touched.push(j);
            }
        }
        touched.sort_unstable();
        touched.dedup();
        for j in touched {
            state.temperature[j] = thermal.temperature(state.enthalpy[j], state.temperature[j]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_timestep_ti64_5um() {
        let m = MaterialProperties::ti64();
        let cfg = SimulationConfig {
            cell_size: 5e-6,
            ..Default::default()
        };
        let alpha: f64 = 33.4 / (3920.0 * 831.0);
        assert!((alpha - 1.025e-5).abs() < 1e-8);
        let dt = stable_timestep(&cfg, &m);
        assert!((dt - 0.9 * 25e-12 / (6.0 * alpha)).abs() < 1e-18);
        assert!((dt - 3.66e-7).abs() < 0.01e-7);
        assert_eq!(substeps_per_interval(5e-6, dt), 14);

        let doubled = stable_timestep(&SimulationConfig { cell_size: 10e-6, ..cfg }, &m);
        assert!((doubled / dt - 4.0).abs() < 1e-12);
    }

    #[test]
    fn enthalpy_inversion_round_trips() {
        let th = Thermal::new(MaterialProperties::ti64(), PropertyModel::TemperatureDependent, 293.0);
        for &t in &[293.0, 293.0001, 500.0, 1872.9, 1873.0, 1890.0, 1923.0, 2500.0, 3315.0, 6000.0] {
            let e = th.enthalpy(t);
            for &guess in &[293.0, t, 4000.0] {
                let back = th.temperature(e, guess);
                assert!((back - t).abs() < 1e-9, "{t} from guess {guess}: {back}");
            }
        }
    }

    #[test]
    fn enthalpy_is_monotone() {
        for m in [MaterialProperties::ti64(), MaterialProperties::ss316l()] {
            let th = Thermal::new(m, PropertyModel::TemperatureDependent, 293.0);
            let mut last = th.enthalpy(293.0);
            for i in 1..5000 {
                let e = th.enthalpy(293.0 + i as f64);
                assert!(e > last);
                last = e;
            }
        }
    }

    #[test]
    fn uniform_field_without_source_is_unchanged() {
        let cfg = SimulationConfig {
            grid: [6, 5, 4],
            power: 0.0,
            beam_start: [1.0, 2.5],
            frame_count: 1,
            ..Default::default()
        };
        let solver = HeatSolver::new(cfg.clone(), MaterialProperties::ti64()).unwrap();
        let mut s = SimulationState::from_temperature(cfg.grid, vec![1500.0; 120], &solver.thermal);
        let before = s.clone();
        for _ in 0..10 {
            solver.step(&mut s, 1e-7).unwrap();
        }
        assert_eq!(s.temperature, before.temperature);
    }

    #[test]
    fn carving_rule() {
        let m = MaterialProperties::ti64();
        let th = Thermal::new(m.clone(), PropertyModel::TemperatureDependent, 293.0);
        let mut s = SimulationState::from_temperature([2, 2, 2], vec![1000.0; 8], &th);
        let before = s.clone();
        assert_eq!(carve_keyhole(&mut s, &th), 0);
        assert_eq!(s, before);
        s.temperature[3] = m.vaporization_temperature + 1.0;
        s.enthalpy[3] = th.enthalpy(s.temperature[3]);
        let total = |s: &SimulationState| s.enthalpy.iter().sum::<f64>();
        let e_before = total(&s);
        assert_eq!(carve_keyhole(&mut s, &th), 1);
        assert!(s.void[3]);
        assert_eq!(s.temperature[3], 293.0);
        assert_eq!(s.enthalpy[3], 0.0);
        // Only the enthalpy at T_vap leaves with the vapor.
        let lost = e_before - total(&s);
        assert!((lost - th.enthalpy(m.vaporization_temperature)).abs() < 1e-6 * lost);
        assert!(s.temperature[2] > 1000.0 && s.temperature[0] == 1000.0);
    }

    #[test]
    fn beam_exit_is_rejected_unless_allowed() {
        let mut cfg = SimulationConfig::with_grid([32, 8, 8]);
        cfg.velocity = 2.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.allow_beam_exit = true;
        cfg.validate().unwrap();
    }
}
