//! Simulation and optimal control of one- and two-atom transport in a
//! double-well optical lattice.

pub mod analysis;
pub mod error;
pub mod grid;
pub mod krotov;
mod linalg;
pub mod potential;
pub mod propagate1d;
pub mod propagate2d;
pub mod scenario;
pub mod sequence;
pub mod spectrum;
pub mod units;

pub use analysis::{
    populations, product_fidelity, projection_trace, rms_deviation, scan_duration, scan_theta,
    two_particle_fidelity, FidelityReport, ScanResult, Well,
};
pub use error::{Error, Result};
pub use grid::{inner_product, make_grid, SpatialGrid, WaveFn1D, WaveFn2D};
pub use potential::{
    potential_1d, potential_2d, potential_gradient, well_geometry, Control, LatticeParams,
    PotentialGradient, PotentialTable, WellGeometry,
};
pub use krotov::{optimize, optimize_with_interactions, ControlProblem, KrotovSettings, Objective, OptimizationTrace};
pub use propagate1d::{cn_step, evolve, evolve_many, PropagationResult};
pub use propagate2d::{
    build_two_particle_hamiltonian, evolve_two_particle, pr_step, two_particle_eigenstate, InteractionParams,
    TwoParticleHamiltonian, TwoParticleState,
};
pub use scenario::{MergeRamp, Transport};
pub use sequence::{fourier_spectrum, lowpass_filter, make_linear_merge, ControlSequence, WaveformSpectrum};
pub use spectrum::{assemble_hamiltonian, instantaneous_spectrum, localized_states, lowest_eigenstates, EigenPair, TridiagonalOperator};
pub use units::UnitSystem;
