//! The transport setup: two atoms start in the left and right wells of a
//! symmetric double well and the wells are merged by ramping `β`.
//!
//! The atom from the left well should end in the first excited state of the
//! merged well and the one from the right well in its ground state.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{SpatialGrid, WaveFn1D, WaveFn2D};
use crate::potential::{well_geometry_on, LatticeParams};
use crate::propagate1d::evolve_many;
use crate::propagate2d::{build_two_particle_hamiltonian, evolve_two_particle, two_particle_eigenstate, InteractionParams};
use crate::sequence::{make_linear_merge, ControlSequence, DEFAULT_N_T};
use crate::spectrum::{assemble_hamiltonian_with, localized_states, lowest_eigenstates};
use crate::units::UnitSystem;

/// Default grid size.
pub const DEFAULT_N: usize = 1000;

/// Tilt setting at which slow merges transfer the left atom best.
pub const THETA_B_OVER_PI: f64 = -0.474;

/// End point of the `β` ramp.
pub const BETA_END_OVER_PI: f64 = 0.7;

/// Lattice depth (kHz).
pub const V0_KHZ: f64 = 100.0;

/// Linear `β` ramp with `V₀` and `θ` held.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeRamp {
    pub v0: f64,
    pub beta_start_over_pi: f64,
    pub beta_end_over_pi: f64,
    pub theta_over_pi: f64,
}

impl MergeRamp {
    /// The duration scan ramp: `β/π` from 0 to 0.7 at fixed `θ`.
    pub fn sequence_a(theta_over_pi: f64) -> Self {
        Self { v0: V0_KHZ, beta_start_over_pi: 0.0, beta_end_over_pi: BETA_END_OVER_PI, theta_over_pi }
    }

    /// The tilt scan ramp at `θ_b`.
    pub fn sequence_b(theta_b_over_pi: f64) -> Self {
        Self::sequence_a(theta_b_over_pi)
    }

    pub fn start(&self) -> Result<LatticeParams> {
        LatticeParams::from_pi_units(self.v0, self.beta_start_over_pi, self.theta_over_pi)
    }

    pub fn end(&self) -> Result<LatticeParams> {
        LatticeParams::from_pi_units(self.v0, self.beta_end_over_pi, self.theta_over_pi)
    }

    pub fn sequence(&self, duration: f64, n_t: usize) -> Result<ControlSequence> {
        make_linear_merge(duration, self.start()?, self.end()?, n_t)
    }
}

impl Default for MergeRamp {
    fn default() -> Self {
        Self::sequence_b(THETA_B_OVER_PI)
    }
}

/// Grid, units and the states that define the transport problem for a given
/// start and end configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Transport {
    pub grid: SpatialGrid,
    pub units: UnitSystem,
    pub start: LatticeParams,
    pub end: LatticeParams,
    /// Atom localized in the left / right well at `t = 0`.
    pub psi_l: WaveFn1D,
    pub psi_r: WaveFn1D,
}

/// Single-particle transport populations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportOutcome {
    /// `f_n^L`, `f_n^R` for `n = 0..count`.
    pub f_l: Vec<f64>,
    pub f_r: Vec<f64>,
    /// Two-particle fidelity of the product evolution, `F`.
    pub product_fidelity: f64,
}

impl Transport {
    pub fn new(grid: SpatialGrid, units: UnitSystem, start: LatticeParams, end: LatticeParams) -> Result<Self> {
        let h = assemble_hamiltonian_with(&grid, &start, &units)?;
        let pairs = lowest_eigenstates(&h, 2, None)?;
        let geo = well_geometry_on(&start, &grid)?;
        let (psi_l, psi_r) = localized_states(&pairs[0], &pairs[1], geo.barrier_x)?;
        Ok(Self { grid, units, start, end, psi_l, psi_r })
    }

    /// Default grid and units for a ramp.
    pub fn for_ramp(ramp: &MergeRamp, n: usize) -> Result<Self> {
        Self::new(SpatialGrid::unit_cell(n)?, UnitSystem::default(), ramp.start()?, ramp.end()?)
    }

    /// Lowest `count` eigenstates of the final Hamiltonian.
    pub fn final_states(&self, params: &LatticeParams, count: usize) -> Result<Vec<WaveFn1D>> {
        let h = assemble_hamiltonian_with(&self.grid, params, &self.units)?;
        Ok(lowest_eigenstates(&h, count, None)?.into_iter().map(|p| p.state).collect())
    }

    /// Populations of the lowest `count ≥ 2` final eigenstates.
    pub fn evaluate(&self, seq: &ControlSequence, count: usize) -> Result<TransportOutcome> {
        let runs = evolve_many(&[self.psi_l.clone(), self.psi_r.clone()], seq, &self.units, &[])?;
        let phis = self.final_states(&seq.last(), count.max(2))?;
        let overlaps = |psi: &WaveFn1D| -> Result<Vec<Complex64>> { phis.iter().map(|p| p.inner(psi)).collect() };
        let ol = overlaps(&runs[0].final_state)?;
        let or = overlaps(&runs[1].final_state)?;
        let amp = ol[0] * or[1] + ol[1] * or[0];
        Ok(TransportOutcome {
            f_l: ol.iter().take(count).map(|c| c.norm_sqr()).collect(),
            f_r: or.iter().take(count).map(|c| c.norm_sqr()).collect(),
            product_fidelity: amp.norm_sqr(),
        })
    }

    /// Objective states `ψ_L → φ₁`, `ψ_R → φ₀` for the end configuration.
    pub fn targets(&self) -> Result<(WaveFn1D, WaveFn1D)> {
        let mut phis = self.final_states(&self.end, 2)?;
        let phi1 = phis.pop().expect("two states");
        let phi0 = phis.pop().expect("two states");
        Ok((phi1, phi0))
    }

    /// Initial and target two-particle states: interacting eigenstates
    /// connected to `sym(ψ_L, ψ_R)` at the start and `sym(φ₀, φ₁)` at the end.
    pub fn two_particle_states(&self, ip: &InteractionParams) -> Result<(WaveFn2D, WaveFn2D)> {
        let (phi1, phi0) = self.targets()?;
        let eigen = |p: &LatticeParams, reference: WaveFn2D| -> Result<WaveFn2D> {
            let h = build_two_particle_hamiltonian(&self.grid, p, ip, &self.units)?;
            let target = h.expectation(&reference)?;
            Ok(two_particle_eigenstate(&h, target, &reference)?.wavefunction)
        };
        let initial = eigen(&self.start, WaveFn2D::symmetrized(&self.psi_l, &self.psi_r)?)?;
        let target = eigen(&self.end, WaveFn2D::symmetrized(&phi0, &phi1)?)?;
        Ok((initial, target))
    }

    /// `F_int = |⟨Φ_tg|U(T)|Ψ_in⟩|²`.
    pub fn interacting_fidelity(&self, seq: &ControlSequence, ip: &InteractionParams) -> Result<f64> {
        let (initial, target) = self.two_particle_states(ip)?;
        let run = evolve_two_particle(&initial, seq, ip, &self.units, &[])?;
        Ok(target.inner(&run.final_state.wavefunction)?.norm_sqr())
    }
}

/// The default transport problem on `n` points with the tilt of sequence b.
pub fn default_transport(n: usize) -> Result<Transport> {
    Transport::for_ramp(&MergeRamp::default(), n)
}

/// Sequence b of duration `T` with the default number of slices.
pub fn sequence_b(duration: f64, theta_b_over_pi: f64) -> Result<ControlSequence> {
    MergeRamp::sequence_b(theta_b_over_pi).sequence(duration, DEFAULT_N_T)
}
