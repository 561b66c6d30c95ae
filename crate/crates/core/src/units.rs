//! Unit conventions.
//!
//! Energies are frequencies `E/h` in kHz, times are in ms and positions are
//! the dimensionless phase `ξ = kx` of the lattice light. A level of 1 kHz
//! therefore advances its phase by 2π per ms.

use std::f64::consts::PI;

/// Recoil frequency `E_R/h` of the lattice light, in kHz.
pub const RECOIL_KHZ: f64 = 3.5;

/// Kinetic prefactor multiplying `-d²/du²` when positions are measured in
/// wavelengths, `u = x/λ`: `ε = E_R/(2π)²`.
pub const EPSILON_KHZ: f64 = RECOIL_KHZ / (4.0 * PI * PI);

/// Unit system shared by every numerical module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitSystem {
    recoil_khz: f64,
}

impl Default for UnitSystem {
    fn default() -> Self {
        Self { recoil_khz: RECOIL_KHZ }
    }
}

impl UnitSystem {
    pub fn recoil_khz(&self) -> f64 {
        self.recoil_khz
    }

    /// `ε`, the prefactor of the kinetic term in wavelength units.
    pub fn epsilon_khz(&self) -> f64 {
        self.recoil_khz / (4.0 * PI * PI)
    }

    /// Prefactor of `-d²/dξ²` in the dimensionless coordinate `ξ = kx`.
    ///
    /// Since `ξ = 2π·x/λ`, this is `ε·(2π)²`, i.e. the recoil frequency.
    pub fn kinetic_coefficient(&self) -> f64 {
        self.epsilon_khz() * 4.0 * PI * PI
    }

    pub fn khz_to_recoils(&self, energy_khz: f64) -> f64 {
        energy_khz / self.recoil_khz
    }

    pub fn recoils_to_khz(&self, energy_recoils: f64) -> f64 {
        energy_recoils * self.recoil_khz
    }

    /// Phase angle accumulated by a level of `energy_khz` over `t_ms`.
    pub fn phase(&self, energy_khz: f64, t_ms: f64) -> f64 {
        2.0 * PI * energy_khz * t_ms
    }
}
