//! Temperature-dependent alloy properties.

use serde::{Deserialize, Serialize};

/// Lower and upper table anchors for the linearly interpolated properties.
pub const ANCHOR_LOW: f64 = 298.0;
pub const ANCHOR_HIGH: f64 = 1923.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialProperties {
    pub name: String,
    /// kg/m³ at the low and high anchors.
    pub density: [f64; 2],
    /// J/(kg·K) at the low and high anchors.
    pub specific_heat: [f64; 2],
    /// W/(m·K) at the low and high anchors.
    pub conductivity: [f64; 2],
    pub liquidus: f64,
    pub solidus: f64,
    /// J/kg.
    pub latent_heat_fusion: f64,
    /// J/kg.
    pub latent_heat_vaporization: f64,
    /// Cells hotter than this at a frame boundary are carved into vapor.
    pub vaporization_temperature: f64,
    /// Flat-plate absorptivity used by the keyhole scaling law.
    pub min_absorptivity: f64,
    /// Volumetric melting enthalpy, J/m³.
    pub melting_enthalpy: f64,
}

/// Density, specific heat and conductivity at one temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Properties {
    pub density: f64,
    pub specific_heat: f64,
    pub conductivity: f64,
}

impl Properties {
    pub fn diffusivity(&self) -> f64 {
        self.conductivity / (self.density * self.specific_heat)
    }
}

impl MaterialProperties {
    /// Ti-6Al-4V.
    pub fn ti64() -> Self {
        Self::with_defaults(
            "Ti-6Al-4V",
            [4420.0, 3920.0],
            [546.0, 831.0],
            [7.0, 33.4],
            1923.0,
            1873.0,
            2.86e5,
            6.0e4,
            3315.0,
        )
    }

    /// SS316L. The liquidus/solidus pair is kept as tabulated; the phase
    /// change interval is taken between the smaller and larger of the two.
    pub fn ss316l() -> Self {
        Self::with_defaults(
            "SS316L",
            [7950.0, 7249.0],
            [470.0, 726.0],
            [13.4, 29.0],
            1694.0,
            1717.0,
            2.6e5,
            6.0e4,
            3090.0,
        )
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "ti64" | "ti6al4v" => Some(Self::ti64()),
            "ss316l" | "316l" | "ss" => Some(Self::ss316l()),
            _ => None,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn with_defaults(
        name: &str,
        density: [f64; 2],
        specific_heat: [f64; 2],
        conductivity: [f64; 2],
        liquidus: f64,
        solidus: f64,
        latent_heat_fusion: f64,
        latent_heat_vaporization: f64,
        vaporization_temperature: f64,
    ) -> Self {
        let mut m = MaterialProperties {
            name: name.to_string(),
            density,
            specific_heat,
            conductivity,
            liquidus,
            solidus,
            latent_heat_fusion,
            latent_heat_vaporization,
            vaporization_temperature,
            min_absorptivity: 0.3,
            melting_enthalpy: 0.0,
        };
        m.melting_enthalpy = m.default_melting_enthalpy();
        m
    }

    /// `rho(298) * (mean_cp * (T_melt - 298) + L_f)`.
    pub fn default_melting_enthalpy(&self) -> f64 {
        let mean_cp = 0.5 * (self.specific_heat[0] + self.specific_heat[1]);
        self.density[0] * (mean_cp * (self.melting_temperature() - ANCHOR_LOW) + self.latent_heat_fusion)
    }

    /// Mean of liquidus and solidus.
    pub fn melting_temperature(&self) -> f64 {
        0.5 * (self.liquidus + self.solidus)
    }

    /// `(lower, upper)` bounds of the mushy zone.
    pub fn phase_change_interval(&self) -> (f64, f64) {
        (self.liquidus.min(self.solidus), self.liquidus.max(self.solidus))
    }

    pub fn validate(&self) -> Result<(), String> {
        let all = [
            self.density[0],
            self.density[1],
            self.specific_heat[0],
            self.specific_heat[1],
            self.conductivity[0],
            self.conductivity[1],
            self.liquidus,
            self.solidus,
            self.latent_heat_fusion,
            self.latent_heat_vaporization,
            self.vaporization_temperature,
            self.min_absorptivity,
            self.melting_enthalpy,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(format!("{}: all material parameters must be positive", self.name));
        }
        let (lo, hi) = self.phase_change_interval();
        if lo <= ANCHOR_LOW || hi >= self.vaporization_temperature || lo == hi {
            return Err(format!(
                "{}: need 298 < solidus/liquidus < vaporization temperature and a non-empty melting range",
                self.name
            ));
        }
        Ok(())
    }

    /// Linear interpolation between the anchors, clamped outside them.
    pub fn interpolate(&self, temperature: f64) -> Properties {
        let f = ((temperature - ANCHOR_LOW) / (ANCHOR_HIGH - ANCHOR_LOW)).clamp(0.0, 1.0);
        let lerp = |p: [f64; 2]| p[0] + f * (p[1] - p[0]);
        Properties {
            density: lerp(self.density),
            specific_heat: lerp(self.specific_heat),
            conductivity: lerp(self.conductivity),
        }
    }

    /// Specific heat with the latent heat of fusion spread over the mushy zone.
    pub fn effective_specific_heat(&self, temperature: f64) -> f64 {
        let (lo, hi) = self.phase_change_interval();
        let cp = self.interpolate(temperature).specific_heat;
        if (lo..=hi).contains(&temperature) {
            cp + self.latent_heat_fusion / (hi - lo)
        } else {
            cp
        }
    }

    /// `∫ Cp_eff dT` from `reference` to `temperature`, J/kg.
    pub fn specific_enthalpy(&self, reference: f64, temperature: f64) -> f64 {
        self.enthalpy_antiderivative(temperature) - self.enthalpy_antiderivative(reference)
    }

    fn enthalpy_antiderivative(&self, t: f64) -> f64 {
        let [c0, c1] = self.specific_heat;
        let slope = (c1 - c0) / (ANCHOR_HIGH - ANCHOR_LOW);
        let sensible = if t <= ANCHOR_LOW {
            c0 * (t - ANCHOR_LOW)
        } else if t <= ANCHOR_HIGH {
            let d = t - ANCHOR_LOW;
            c0 * d + 0.5 * slope * d * d
        } else {
            let d = ANCHOR_HIGH - ANCHOR_LOW;
            c0 * d + 0.5 * slope * d * d + c1 * (t - ANCHOR_HIGH)
        };
        let (lo, hi) = self.phase_change_interval();
        let latent = self.latent_heat_fusion * ((t - lo) / (hi - lo)).clamp(0.0, 1.0);
        sensible + latent
    }
}
