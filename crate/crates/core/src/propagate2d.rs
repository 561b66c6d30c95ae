//! Two bosons on the product mesh `(x₁, x₂)` with a contact interaction.
//!
//! One slice applies
//!
//! ```text
//! e^{−iπ·W·dt} · C(Ā) · C(B̄) · e^{−iπ·W·dt} · e^{−4πi·s·dt}
//! ```
//!
//! where `C(X) = (1 + iπdt(X − s))⁻¹(1 − iπdt(X − s))`, `Ā = H̄₁ ⊗ 1`,
//! `B̄ = 1 ⊗ H̄₁` with `H̄₁` the slice-averaged single-particle Hamiltonian and
//! `W` the diagonal contact term. The product `C(Ā)C(B̄)` is evaluated as the
//! two Peaceman–Rachford half steps (implicit in `x₁` and explicit in `x₂`,
//! then implicit in `x₂` and explicit in `x₁`). Half of the interaction phase
//! is applied before them and half after.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{SpatialGrid, WaveFn2D};
use crate::linalg::{apply_cayley_explicit, jacobi_eigen, CayleyFactor};
use crate::potential::{LatticeParams, PotentialTable};
use crate::propagate1d::{record_slots, NORM_TOLERANCE};
use crate::sequence::ControlSequence;
use crate::spectrum::{full_eigensystem, hamiltonian_from_table, kinetic_coupling, TridiagonalOperator};
use crate::units::UnitSystem;

/// Bohr radius in metres.
pub const BOHR_RADIUS_M: f64 = 5.291_772_109e-11;

/// Tolerated exchange-symmetry defect, relative to `max|Ψ|`.
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;

/// Effective 1D contact coupling `g₁D = 2·a_s·h·√(ν_y ν_z)`, expressed in
/// kHz per unit of `ξ = kx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionParams {
    pub g1d: f64,
    /// s-wave scattering length (m).
    pub a_s: f64,
    /// Transverse trap frequencies (kHz).
    pub nu_y: f64,
    pub nu_z: f64,
    /// Lattice wavelength (m).
    pub lambda: f64,
}

impl InteractionParams {
    /// `g = 2·a_s·k·√(ν_y ν_z)` with `k = 2π/λ`.
    pub fn from_physical(a_s: f64, nu_y: f64, nu_z: f64, lambda: f64) -> Result<Self> {
        let ok = [a_s, nu_y, nu_z, lambda].iter().all(|v| v.is_finite())
            && a_s >= 0.0
            && nu_y >= 0.0
            && nu_z >= 0.0
            && lambda > 0.0;
        if !ok {
            return Err(Error::InvalidParams(format!(
                "interaction inputs a_s={a_s}, nu_y={nu_y}, nu_z={nu_z}, lambda={lambda}"
            )));
        }
        Ok(Self { g1d: Self::coupling(a_s, nu_y, nu_z, lambda), a_s, nu_y, nu_z, lambda })
    }

    fn coupling(a_s: f64, nu_y: f64, nu_z: f64, lambda: f64) -> f64 {
        2.0 * a_s * (2.0 * PI / lambda) * (nu_y * nu_z).sqrt()
    }

    /// ⁸⁷Rb in an 810 nm lattice (recoil 3.5 kHz): `a_s = 100.4 a₀`,
    /// `ν_y = ν_z = 37 kHz`.
    pub fn rubidium87() -> Self {
        Self::from_physical(100.4 * BOHR_RADIUS_M, 37.0, 37.0, 810e-9).expect("valid defaults")
    }

    /// No interaction.
    pub fn none() -> Self {
        Self { g1d: 0.0, ..Self::rubidium87() }
    }

    /// Same physical inputs with the coupling scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self { g1d: self.g1d * factor, ..*self }
    }

    /// Whether `g1d` follows from the physical inputs.
    pub fn is_consistent(&self) -> bool {
        let g = Self::coupling(self.a_s, self.nu_y, self.nu_z, self.lambda);
        (g - self.g1d).abs() <= 1e-12 * g.abs().max(1e-300)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.g1d.is_finite() && self.g1d >= 0.0) {
            return Err(Error::InvalidParams(format!("g1d = {} must be finite and ≥ 0", self.g1d)));
        }
        Ok(())
    }
}

/// A two-particle state, with its energy when it is an eigenstate.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoParticleState {
    pub wavefunction: WaveFn2D,
    pub energy: Option<f64>,
}

/// `H₂ = H₁ ⊗ 1 + 1 ⊗ H₁ + (g/dx)·δ_{x₁x₂}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoParticleHamiltonian {
    h1: TridiagonalOperator,
    g1d: f64,
}

pub fn build_two_particle_hamiltonian(
    grid: &SpatialGrid,
    p: &LatticeParams,
    ip: &InteractionParams,
    units: &UnitSystem,
) -> Result<TwoParticleHamiltonian> {
    p.validate()?;
    ip.validate()?;
    let table = PotentialTable::for_grid(grid);
    Ok(TwoParticleHamiltonian {
        h1: hamiltonian_from_table(grid, &table, p, units)?,
        g1d: ip.g1d,
    })
}

impl TwoParticleHamiltonian {
    pub fn single_particle(&self) -> &TridiagonalOperator {
        &self.h1
    }

    pub fn g1d(&self) -> f64 {
        self.g1d
    }

    pub fn grid(&self) -> &SpatialGrid {
        self.h1.grid()
    }

    /// `H₂Ψ` on the mesh.
    pub fn apply(&self, psi: &WaveFn2D) -> Result<Vec<Complex64>> {
        if psi.grid() != self.grid() {
            return Err(Error::GridMismatch);
        }
        let m = psi.side();
        let d = self.h1.diagonal();
        let off = self.h1.off_diagonal();
        let w = self.g1d / self.grid().dx();
        let a = psi.amplitudes();
        let mut out = vec![Complex64::new(0.0, 0.0); m * m];
        for i in 0..m {
            for j in 0..m {
                let k = i * m + j;
                let mut v = a[k] * (d[i] + d[j]);
                if i > 0 {
                    v += a[k - m] * off;
                }
                if i + 1 < m {
                    v += a[k + m] * off;
                }
                if j > 0 {
                    v += a[k - 1] * off;
                }
                if j + 1 < m {
                    v += a[k + 1] * off;
                }
                if i == j {
                    v += a[k] * w;
                }
                out[k] = v;
            }
        }
        Ok(out)
    }

    /// `⟨Ψ|H₂|Ψ⟩` with the `dx²` measure.
    pub fn expectation(&self, psi: &WaveFn2D) -> Result<f64> {
        let hp = self.apply(psi)?;
        let dx = self.grid().dx();
        let s: Complex64 = psi.amplitudes().iter().zip(&hp).map(|(a, b)| a.conj() * b).sum();
        Ok(s.re * dx * dx)
    }

    /// `⟨Ψ|V_int|Ψ⟩ = g·Σ_k |Ψ(x_k, x_k)|²·dx`.
    pub fn interaction_energy(&self, psi: &WaveFn2D) -> f64 {
        let m = psi.side();
        let s: f64 = (0..m).map(|k| psi.at(k, k).norm_sqr()).sum();
        self.g1d * s * self.grid().dx()
    }
}

/// Reusable ADI workspace for one grid and coupling.
#[derive(Debug, Clone)]
pub struct Propagator2D {
    grid: SpatialGrid,
    table: PotentialTable,
    coupling: f64,
    w: f64,
    v_from: Vec<f64>,
    v_to: Vec<f64>,
    diag: Vec<f64>,
    factor: CayleyFactor,
    tmp: Vec<Complex64>,
    a: f64,
    half_interaction: Complex64,
    phase: Complex64,
}

impl Propagator2D {
    pub fn new(grid: SpatialGrid, ip: &InteractionParams, units: &UnitSystem) -> Self {
        let m = grid.len();
        Self {
            grid,
            table: PotentialTable::for_grid(&grid),
            coupling: kinetic_coupling(&grid, units),
            w: ip.g1d / grid.dx(),
            v_from: vec![0.0; m],
            v_to: vec![0.0; m],
            diag: vec![0.0; m],
            factor: CayleyFactor::new(),
            tmp: vec![Complex64::new(0.0, 0.0); m * m],
            a: 0.0,
            half_interaction: Complex64::new(1.0, 0.0),
            phase: Complex64::new(1.0, 0.0),
        }
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn table(&self) -> &PotentialTable {
        &self.table
    }

    pub fn prepare(&mut self, p_from: &LatticeParams, p_to: &LatticeParams, dt: f64) -> Result<()> {
        self.table.fill(p_from, &mut self.v_from);
        self.table.fill(p_to, &mut self.v_to);
        for ((d, a), b) in self.diag.iter_mut().zip(&self.v_from).zip(&self.v_to) {
            *d = 0.5 * (a + b);
        }
        let shift = self.diag.iter().cloned().fold(f64::INFINITY, f64::min);
        let two_c = 2.0 * self.coupling;
        self.diag.iter_mut().for_each(|d| *d += two_c - shift);
        self.a = PI * dt;
        self.half_interaction = Complex64::from_polar(1.0, -PI * self.w * dt);
        self.phase = Complex64::from_polar(1.0, -4.0 * PI * shift * dt);
        self.factor.factor(&self.diag, -self.coupling, self.a)
    }

    /// Applies the prepared slice in place to row-major amplitudes.
    pub fn apply(&mut self, psi: &mut [Complex64]) {
        let m = self.grid.len();
        let off = -self.coupling;
        let a = self.a;
        let ia = Complex64::new(0.0, a);
        for k in 0..m {
            psi[k * m + k] *= self.half_interaction;
        }
        // (1 − i a B̄) along x₂ (rows), then solve (1 + i a Ā) along x₁.
        let diag = &self.diag;
        self.tmp
            .par_chunks_mut(m)
            .zip(psi.par_chunks(m))
            .for_each(|(out, row)| apply_cayley_explicit(diag, off, a, row, out));
        self.factor.solve_columns(&mut self.tmp, m);
        // (1 − i a Ā) along x₁ (columns), then solve (1 + i a B̄) along x₂.
        for i in 0..m {
            let own = Complex64::new(1.0, 0.0) - ia * diag[i];
            let (lo, hi) = (i.checked_sub(1), if i + 1 < m { Some(i + 1) } else { None });
            let out = &mut psi[i * m..(i + 1) * m];
            for j in 0..m {
                let mut nb = Complex64::new(0.0, 0.0);
                if let Some(l) = lo {
                    nb += self.tmp[l * m + j];
                }
                if let Some(h) = hi {
                    nb += self.tmp[h * m + j];
                }
                out[j] = self.tmp[i * m + j] * own - ia * off * nb;
            }
        }
        let factor = &self.factor;
        let phase = self.phase;
        psi.par_chunks_mut(m).for_each(|row| {
            factor.solve(row);
            row.iter_mut().for_each(|x| *x *= phase);
        });
        for k in 0..m {
            psi[k * m + k] *= self.half_interaction;
        }
    }

    pub fn step(&mut self, seq: &ControlSequence, j: usize, psi: &mut [Complex64]) -> Result<()> {
        self.prepare(&seq.at(j), &seq.at(j + 1), seq.dt())?;
        self.apply(psi);
        Ok(())
    }

    pub fn step_back(&mut self, seq: &ControlSequence, j: usize, psi: &mut [Complex64]) -> Result<()> {
        self.prepare(&seq.at(j), &seq.at(j + 1), -seq.dt())?;
        self.apply(psi);
        Ok(())
    }
}

/// One slice between two two-particle Hamiltonians sharing a coupling.
pub fn pr_step(
    psi: &WaveFn2D,
    p_from: &LatticeParams,
    p_to: &LatticeParams,
    ip: &InteractionParams,
    units: &UnitSystem,
    dt: f64,
) -> Result<WaveFn2D> {
    if !dt.is_finite() {
        return Err(Error::InvalidDuration(dt));
    }
    let mut prop = Propagator2D::new(*psi.grid(), ip, units);
    prop.prepare(p_from, p_to, dt)?;
    let mut amps = psi.amplitudes().to_vec();
    prop.apply(&mut amps);
    WaveFn2D::from_amplitudes(*psi.grid(), amps, psi.is_bosonic())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoParticleEvolution {
    pub final_state: TwoParticleState,
    pub trajectory: Vec<(f64, WaveFn2D)>,
    pub norm_drift: f64,
    pub symmetry_drift: f64,
}

/// Density table `x1 x2 |Psi|^2` for plotting.
pub fn density_table(psi: &WaveFn2D) -> String {
    let g = psi.grid();
    let m = psi.side();
    let mut out = String::from("x1 x2 |Psi|^2\n");
    for i in 0..m {
        for j in 0..m {
            let _ = writeln!(out, "{:.8e} {:.8e} {:.8e}", g.x(i), g.x(j), psi.at(i, j).norm_sqr());
        }
    }
    out
}

fn norm_sqr(amps: &[Complex64], dx: f64) -> f64 {
    amps.iter().map(|a| a.norm_sqr()).sum::<f64>() * dx * dx
}

fn symmetry_defect(amps: &[Complex64], m: usize) -> f64 {
    let mut worst: f64 = 0.0;
    let mut peak: f64 = 0.0;
    for i in 0..m {
        for j in 0..m {
            let a = amps[i * m + j];
            peak = peak.max(a.norm_sqr());
            if j > i {
                worst = worst.max((a - amps[j * m + i]).norm_sqr());
            }
        }
    }
    if peak == 0.0 {
        0.0
    } else {
        (worst / peak).sqrt()
    }
}

/// How often the exchange symmetry is checked during a run.
const SYMMETRY_CHECK_EVERY: usize = 64;

pub fn evolve_two_particle(
    psi0: &WaveFn2D,
    seq: &ControlSequence,
    ip: &InteractionParams,
    units: &UnitSystem,
    record_times: &[f64],
) -> Result<TwoParticleEvolution> {
    ip.validate()?;
    let grid = *psi0.grid();
    let m = grid.len();
    let dx = grid.dx();
    let slots = record_slots(seq, record_times)?;
    let mut amps = psi0.amplitudes().to_vec();
    let mut norm_drift = (norm_sqr(&amps, dx) - 1.0).abs();
    if norm_drift > NORM_TOLERANCE {
        return Err(Error::NormDrift { drift: norm_drift, tolerance: NORM_TOLERANCE });
    }
    let bosonic = psi0.is_bosonic();
    let start_defect = if bosonic { symmetry_defect(&amps, m) } else { 0.0 };
    let mut symmetry_drift: f64 = 0.0;
    let mut records: Vec<(usize, f64, WaveFn2D)> = Vec::new();
    let save = |j: usize, amps: &[Complex64], records: &mut Vec<(usize, f64, WaveFn2D)>| -> Result<()> {
        for (k, &(slot, t)) in slots.iter().enumerate() {
            if slot == j {
                records.push((k, t, WaveFn2D::from_amplitudes(grid, amps.to_vec(), bosonic)?));
            }
        }
        Ok(())
    };
    save(0, &amps, &mut records)?;
    let mut prop = Propagator2D::new(grid, ip, units);
    for j in 0..seq.n_t() {
        prop.step(seq, j, &mut amps)?;
        norm_drift = norm_drift.max((norm_sqr(&amps, dx) - 1.0).abs());
        if norm_drift > NORM_TOLERANCE {
            return Err(Error::NormDrift { drift: norm_drift, tolerance: NORM_TOLERANCE });
        }
        if bosonic && ((j + 1) % SYMMETRY_CHECK_EVERY == 0 || j + 1 == seq.n_t()) {
            symmetry_drift = symmetry_drift.max(symmetry_defect(&amps, m) - start_defect);
            if symmetry_drift > SYMMETRY_TOLERANCE {
                return Err(Error::SymmetryDrift { drift: symmetry_drift, tolerance: SYMMETRY_TOLERANCE });
            }
        }
        save(j + 1, &amps, &mut records)?;
    }
    records.sort_by_key(|r| r.0);
    Ok(TwoParticleEvolution {
        final_state: TwoParticleState {
            wavefunction: WaveFn2D::from_amplitudes(grid, amps, bosonic)?,
            energy: None,
        },
        trajectory: records.into_iter().map(|(_, t, s)| (t, s)).collect(),
        norm_drift,
        symmetry_drift: symmetry_drift.max(0.0),
    })
}

/// Dense row-major `m×m` product `a·b`.
fn matmul(a: &[f64], b: &[f64], m: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    for i in 0..m {
        let row = &mut out[i * m..(i + 1) * m];
        for k in 0..m {
            let aik = a[i * m + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * m..(k + 1) * m];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}

fn transpose(a: &[f64], m: usize) -> Vec<f64> {
    let mut t = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            t[j * m + i] = a[i * m + j];
        }
    }
    t
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `H₂` in the product basis of single-particle eigenstates, acting on
/// symmetric coefficient matrices `C_ab`.
struct EigenbasisOperator {
    m: usize,
    energies: Vec<f64>,
    /// `Φ[k·m + a] = φ_a(x_k)`, Euclidean-unit columns.
    phi: Vec<f64>,
    phi_t: Vec<f64>,
    w: f64,
    scratch: Vec<f64>,
    scratch2: Vec<f64>,
}

impl EigenbasisOperator {
    fn new(h: &TwoParticleHamiltonian) -> Result<Self> {
        let (energies, vectors) = full_eigensystem(&h.h1)?;
        let m = energies.len();
        let mut phi = vec![0.0; m * m];
        for (a, v) in vectors.iter().enumerate() {
            for k in 0..m {
                phi[k * m + a] = v[k];
            }
        }
        let phi_t = transpose(&phi, m);
        Ok(Self {
            m,
            energies,
            phi,
            phi_t,
            w: h.g1d / h.grid().dx(),
            scratch: vec![0.0; m * m],
            scratch2: vec![0.0; m * m],
        })
    }

    /// Grid amplitudes `U = Φ C Φᵀ` (Euclidean normalization).
    fn to_grid(&mut self, c: &[f64]) -> Vec<f64> {
        let m = self.m;
        matmul(&self.phi, c, m, &mut self.scratch);
        let mut u = vec![0.0; m * m];
        matmul(&self.scratch, &self.phi_t, m, &mut u);
        u
    }

    /// Coefficients `C = Φᵀ U Φ`.
    fn from_grid(&mut self, u: &[f64]) -> Vec<f64> {
        let m = self.m;
        matmul(&self.phi_t, u, m, &mut self.scratch);
        let mut c = vec![0.0; m * m];
        matmul(&self.scratch, &self.phi, m, &mut c);
        c
    }

    fn apply(&mut self, c: &[f64], out: &mut [f64]) {
        let m = self.m;
        for a in 0..m {
            for b in 0..m {
                out[a * m + b] = (self.energies[a] + self.energies[b]) * c[a * m + b];
            }
        }
        if self.w == 0.0 {
            return;
        }
        // u_kk = Σ_a Φ[k,a] (C Φᵀ)[a,k]
        matmul(c, &self.phi_t, m, &mut self.scratch);
        // scratch2 = diag(w u) Φ, then out += Φᵀ scratch2
        for k in 0..m {
            let ukk: f64 = (0..m).map(|a| self.phi[k * m + a] * self.scratch[a * m + k]).sum();
            let s = self.w * ukk;
            for b in 0..m {
                self.scratch2[k * m + b] = s * self.phi[k * m + b];
            }
        }
        matmul(&self.phi_t, &self.scratch2, m, &mut self.scratch);
        out.iter_mut().zip(&self.scratch).for_each(|(o, r)| *o += r);
    }

    /// Diagonal of the operator in the product basis.
    fn diagonal(&mut self) -> Vec<f64> {
        let m = self.m;
        let sq: Vec<f64> = self.phi.iter().map(|v| v * v).collect();
        let sq_t = transpose(&sq, m);
        let mut overlap = vec![0.0; m * m];
        matmul(&sq_t, &sq, m, &mut overlap);
        let mut d = vec![0.0; m * m];
        for a in 0..m {
            for b in 0..m {
                d[a * m + b] = self.energies[a] + self.energies[b] + self.w * overlap[a * m + b];
            }
        }
        d
    }
}

fn symmetrize(c: &mut [f64], m: usize) {
    for a in 0..m {
        for b in a + 1..m {
            let v = 0.5 * (c[a * m + b] + c[b * m + a]);
            c[a * m + b] = v;
            c[b * m + a] = v;
        }
    }
}

fn orthonormalize_against(v: &mut [f64], basis: &[Vec<f64>]) -> f64 {
    for _ in 0..2 {
        for q in basis {
            let c = dot(q, v);
            v.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
        }
    }
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Settings of the two-particle eigensolver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenSearch {
    /// Convergence threshold on `‖H₂c − Ec‖ / max(|E|, 1)`.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Number of Ritz pairs nearest the target considered as candidates.
    pub candidates: usize,
    pub max_subspace: usize,
}

impl Default for EigenSearch {
    fn default() -> Self {
        Self { tolerance: 1e-9, max_iterations: 300, candidates: 6, max_subspace: 48 }
    }
}

/// Eigenstate of `H₂` that best matches `reference`.
///
/// Candidates are the Ritz pairs nearest `target_energy`; among them the one
/// with the largest overlap with the reference is followed until converged.
/// For `g1d = 0` the reference itself (the symmetrized product) is returned.
/// References must be real up to a global phase.
pub fn two_particle_eigenstate(
    h: &TwoParticleHamiltonian,
    target_energy: f64,
    reference: &WaveFn2D,
) -> Result<TwoParticleState> {
    two_particle_eigenstate_with(h, target_energy, reference, &EigenSearch::default())
}

pub fn two_particle_eigenstate_with(
    h: &TwoParticleHamiltonian,
    target_energy: f64,
    reference: &WaveFn2D,
    search: &EigenSearch,
) -> Result<TwoParticleState> {
    if reference.grid() != h.grid() {
        return Err(Error::GridMismatch);
    }
    let mut reference = reference.clone();
    reference.normalize()?;
    if h.g1d == 0.0 {
        let e = h.expectation(&reference)?;
        return Ok(TwoParticleState { wavefunction: reference, energy: Some(e) });
    }
    let grid = *h.grid();
    let m = grid.len();
    let dx = grid.dx();
    // Real reference after removing its global phase.
    let peak = reference
        .amplitudes()
        .iter()
        .max_by(|a, b| a.norm_sqr().total_cmp(&b.norm_sqr()))
        .copied()
        .unwrap_or(Complex64::new(1.0, 0.0));
    let unphase = peak.conj() / peak.norm();
    let ref_grid: Vec<f64> = reference.amplitudes().iter().map(|a| (a * unphase).re * dx).collect();
    let mut op = EigenbasisOperator::new(h)?;
    let mut c_ref = op.from_grid(&ref_grid);
    symmetrize(&mut c_ref, m);
    let norm = dot(&c_ref, &c_ref).sqrt();
    c_ref.iter_mut().for_each(|x| *x /= norm);
    let diag = op.diagonal();

    // Start: the reference plus the low symmetric product states.
    let mut basis: Vec<Vec<f64>> = vec![c_ref.clone()];
    let mut order: Vec<(usize, usize)> = (0..m).flat_map(|a| (a..m).map(move |b| (a, b))).collect();
    order.sort_by(|x, y| {
        let dx_ = (diag[x.0 * m + x.1] - target_energy).abs();
        let dy_ = (diag[y.0 * m + y.1] - target_energy).abs();
        dx_.total_cmp(&dy_)
    });
    for &(a, b) in order.iter().take(8) {
        let mut v = vec![0.0; m * m];
        v[a * m + b] = 1.0;
        v[b * m + a] = 1.0;
        if orthonormalize_against(&mut v, &basis) > 1e-8 {
            basis.push(v);
        }
    }
    let mut hbasis: Vec<Vec<f64>> = basis
        .iter()
        .map(|v| {
            let mut o = vec![0.0; m * m];
            op.apply(v, &mut o);
            o
        })
        .collect();

    let mut best_residual = f64::INFINITY;
    for _ in 0..search.max_iterations {
        let k = basis.len();
        let mut small = vec![0.0; k * k];
        for i in 0..k {
            for j in i..k {
                let v = dot(&basis[i], &hbasis[j]);
                small[i * k + j] = v;
                small[j * k + i] = v;
            }
        }
        let (theta, y) = jacobi_eigen(&small, k);
        let ref_coeffs: Vec<f64> = basis.iter().map(|b| dot(b, &c_ref)).collect();
        let mut idx: Vec<usize> = (0..k).collect();
        idx.sort_by(|&a, &b| (theta[a] - target_energy).abs().total_cmp(&(theta[b] - target_energy).abs()));
        idx.truncate(search.candidates.max(1).min(k));
        let overlap = |col: usize| -> f64 { (0..k).map(|i| y[i * k + col] * ref_coeffs[i]).sum::<f64>().abs() };
        idx.sort_by(|&a, &b| overlap(b).total_cmp(&overlap(a)));
        let pick = idx[0];
        let e = theta[pick];
        let mut x = vec![0.0; m * m];
        let mut hx = vec![0.0; m * m];
        for i in 0..k {
            let yi = y[i * k + pick];
            x.iter_mut().zip(&basis[i]).for_each(|(a, b)| *a += yi * b);
            hx.iter_mut().zip(&hbasis[i]).for_each(|(a, b)| *a += yi * b);
        }
        let r: Vec<f64> = hx.iter().zip(&x).map(|(a, b)| a - e * b).collect();
        let rn = dot(&r, &r).sqrt() / e.abs().max(1.0);
        best_residual = best_residual.min(rn);
        if rn <= search.tolerance {
            let best = overlap(pick);
            if idx.len() > 1 {
                let second = overlap(idx[1]);
                if second >= 0.99 * best {
                    return Err(Error::AmbiguousMatch { best, second });
                }
            }
            if dot(&x, &c_ref) < 0.0 {
                x.iter_mut().for_each(|v| *v = -*v);
            }
            symmetrize(&mut x, m);
            let u = op.to_grid(&x);
            let amps: Vec<Complex64> = u.iter().map(|v| Complex64::new(v / dx, 0.0)).collect();
            let mut wf = WaveFn2D::from_amplitudes(grid, amps, true)?;
            wf.normalize()?;
            return Ok(TwoParticleState { wavefunction: wf, energy: Some(e) });
        }
        // Davidson correction with the diagonal preconditioner.
        let mut t: Vec<f64> = r
            .iter()
            .zip(&diag)
            .map(|(ri, di)| {
                let d = di - e;
                let d = if d.abs() < 1e-3 { 1e-3f64.copysign(d) } else { d };
                -ri / d
            })
            .collect();
        symmetrize(&mut t, m);
        if basis.len() >= search.max_subspace {
            // Restart from the current candidates.
            let keep: Vec<usize> = idx.iter().copied().take(4).collect();
            let mut nb: Vec<Vec<f64>> = Vec::new();
            let mut nh: Vec<Vec<f64>> = Vec::new();
            for &col in &keep {
                let mut v = vec![0.0; m * m];
                let mut hv = vec![0.0; m * m];
                for i in 0..k {
                    let yi = y[i * k + col];
                    v.iter_mut().zip(&basis[i]).for_each(|(a, b)| *a += yi * b);
                    hv.iter_mut().zip(&hbasis[i]).for_each(|(a, b)| *a += yi * b);
                }
                nb.push(v);
                nh.push(hv);
            }
            let mut rv = c_ref.clone();
            if orthonormalize_against(&mut rv, &nb) > 1e-8 {
                let mut hv = vec![0.0; m * m];
                op.apply(&rv, &mut hv);
                nb.push(rv);
                nh.push(hv);
            }
            basis = nb;
            hbasis = nh;
        }
        if orthonormalize_against(&mut t, &basis) < 1e-14 {
            // Stagnated: the residual lies in the subspace already.
            return Err(Error::NoConvergence { best_residual });
        }
        let mut ht = vec![0.0; m * m];
        op.apply(&t, &mut ht);
        basis.push(t);
        hbasis.push(ht);
    }
    Err(Error::NoConvergence { best_residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::WaveFn1D;
    use crate::potential::well_geometry_on;
    use crate::propagate1d::Propagator1D;
    use crate::spectrum::{assemble_hamiltonian, localized_states, lowest_eigenstates};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(v0: f64, b: f64, t: f64) -> LatticeParams {
        LatticeParams::from_pi_units(v0, b, t).unwrap()
    }

    fn random_symmetric(grid: SpatialGrid, rng: &mut ChaCha8Rng) -> WaveFn2D {
        let m = grid.len();
        let mut amps = vec![Complex64::new(0.0, 0.0); m * m];
        for i in 0..m {
            for j in i..m {
                let v = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                amps[i * m + j] = v;
                amps[j * m + i] = v;
            }
        }
        let mut w = WaveFn2D::from_amplitudes(grid, amps, true).unwrap();
        w.normalize().unwrap();
        w
    }

    #[test]
    fn coupling_formula_and_defaults() {
        let ip = InteractionParams::rubidium87();
        assert!(ip.is_consistent());
        let k = 2.0 * PI / 810e-9;
        let expect = 2.0 * 100.4 * BOHR_RADIUS_M * k * 37.0;
        assert!((ip.g1d - expect).abs() < 1e-12 * expect);
        assert!(ip.g1d > 2.5 && ip.g1d < 3.5);
        assert!(!InteractionParams { g1d: 1.0, ..ip }.is_consistent());
        assert!(InteractionParams::from_physical(-1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn separable_without_interaction() {
        let grid = SpatialGrid::unit_cell(48).unwrap();
        let p = params(100.0, 0.2, -0.47);
        let h2 = build_two_particle_hamiltonian(&grid, &p, &InteractionParams::none(), &UnitSystem::default()).unwrap();
        let pairs = lowest_eigenstates(&assemble_hamiltonian(&grid, &p).unwrap(), 3, None).unwrap();
        let psi = WaveFn2D::product(&pairs[0].state, &pairs[2].state).unwrap();
        let e = h2.expectation(&psi).unwrap();
        assert!((e - pairs[0].energy - pairs[2].energy).abs() < 1e-10 * e.abs());
    }

    #[test]
    fn interaction_energy_is_a_diagonal_sum() {
        let grid = SpatialGrid::unit_cell(40).unwrap();
        let p = params(50.0, 0.1, -0.5);
        let ip = InteractionParams::rubidium87();
        let u = UnitSystem::default();
        let h = build_two_particle_hamiltonian(&grid, &p, &ip, &u).unwrap();
        let h0 = build_two_particle_hamiltonian(&grid, &p, &InteractionParams::none(), &u).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let psi = random_symmetric(grid, &mut rng);
        let direct: f64 = (0..grid.len()).map(|k| psi.at(k, k).norm_sqr()).sum::<f64>() * ip.g1d * grid.dx();
        let via_h = h.expectation(&psi).unwrap() - h0.expectation(&psi).unwrap();
        assert!((h.interaction_energy(&psi) - direct).abs() < 1e-12 * direct);
        assert!((via_h - direct).abs() < 1e-9 * direct.max(1.0));
    }

    #[test]
    fn hermitian_on_random_symmetric_states() {
        let grid = SpatialGrid::unit_cell(32).unwrap();
        let h = build_two_particle_hamiltonian(&grid, &params(80.0, 0.3, -0.47), &InteractionParams::rubidium87(), &UnitSystem::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_symmetric(grid, &mut rng);
        let b = random_symmetric(grid, &mut rng);
        let ha = WaveFn2D::from_amplitudes(grid, h.apply(&a).unwrap(), true).unwrap();
        let hb = WaveFn2D::from_amplitudes(grid, h.apply(&b).unwrap(), true).unwrap();
        let l = a.inner(&hb).unwrap();
        let r = ha.inner(&b).unwrap();
        assert!((l - r).norm() <= 1e-12 * l.norm());
    }

    #[test]
    fn adi_factorizes_without_interaction() {
        let grid = SpatialGrid::unit_cell(64).unwrap();
        let u = UnitSystem::default();
        let (p0, p1) = (params(100.0, 0.2, -0.474), params(100.0, 0.21, -0.474));
        let pairs = lowest_eigenstates(&assemble_hamiltonian(&grid, &p0).unwrap(), 3, None).unwrap();
        let a = WaveFn1D::from_fn(grid, |x| Complex64::new((-(x + PI).powi(2)).exp(), 0.2 * x)).unwrap();
        let b = pairs[2].state.clone();
        let dt = 3e-5;
        let psi = WaveFn2D::product(&a, &b).unwrap();
        let out = pr_step(&psi, &p0, &p1, &InteractionParams::none(), &u, dt).unwrap();
        let mut p1d = Propagator1D::new(grid, &u);
        p1d.prepare(&p0, &p1, dt).unwrap();
        let mut aa = a.amplitudes().to_vec();
        let mut bb = b.amplitudes().to_vec();
        p1d.apply(&mut aa);
        p1d.apply(&mut bb);
        let expect = WaveFn2D::product(
            &WaveFn1D::from_amplitudes(grid, aa).unwrap(),
            &WaveFn1D::from_amplitudes(grid, bb).unwrap(),
        )
        .unwrap();
        let worst = out
            .amplitudes()
            .iter()
            .zip(expect.amplitudes())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max);
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn adi_step_is_unitary_and_symmetric() {
        let grid = SpatialGrid::unit_cell(64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let psi = random_symmetric(grid, &mut rng);
        let out = pr_step(&psi, &params(100.0, 0.3, -0.47), &params(100.0, 0.32, -0.47), &InteractionParams::rubidium87(), &UnitSystem::default(), 3e-5).unwrap();
        assert!((out.norm_sqr() - 1.0).abs() < 1e-10);
        assert!(out.symmetry_defect() < 1e-10);
        // The backward slice undoes it.
        let back = pr_step(&out, &params(100.0, 0.3, -0.47), &params(100.0, 0.32, -0.47), &InteractionParams::rubidium87(), &UnitSystem::default(), -3e-5).unwrap();
        let worst = back.amplitudes().iter().zip(psi.amplitudes()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(worst < 1e-12);
    }

    fn dense_symmetric_eigenvalues(h: &TwoParticleHamiltonian) -> Vec<f64> {
        // Orthonormal basis of the symmetric subspace.
        let grid = *h.grid();
        let m = grid.len();
        let pairs: Vec<(usize, usize)> = (0..m).flat_map(|a| (a..m).map(move |b| (a, b))).collect();
        let dim = pairs.len();
        let basis_vec = |(a, b): (usize, usize)| {
            let mut v = vec![Complex64::new(0.0, 0.0); m * m];
            if a == b {
                v[a * m + a] = Complex64::new(1.0, 0.0);
            } else {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                v[a * m + b] = Complex64::new(s, 0.0);
                v[b * m + a] = Complex64::new(s, 0.0);
            }
            v
        };
        let mut mat = nalgebra::DMatrix::<f64>::zeros(dim, dim);
        for (c, &pc) in pairs.iter().enumerate() {
            let v = WaveFn2D::from_amplitudes(grid, basis_vec(pc), true).unwrap();
            let hv = h.apply(&v).unwrap();
            for (r, &pr) in pairs.iter().enumerate() {
                let (a, b) = pr;
                let val = if a == b { hv[a * m + a].re } else { std::f64::consts::SQRT_2 * hv[a * m + b].re };
                mat[(r, c)] = val;
            }
        }
        let mut ev: Vec<f64> = mat.symmetric_eigenvalues().iter().cloned().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    fn doublet_references(grid: SpatialGrid, p: &LatticeParams) -> (WaveFn1D, WaveFn1D) {
        let pairs = lowest_eigenstates(&assemble_hamiltonian(&grid, p).unwrap(), 2, None).unwrap();
        let geo = well_geometry_on(p, &grid).unwrap();
        localized_states(&pairs[0], &pairs[1], geo.barrier_x).unwrap()
    }

    #[test]
    fn eigenstates_match_dense_diagonalization() {
        let grid = SpatialGrid::unit_cell(64).unwrap();
        let u = UnitSystem::default();
        let ip = InteractionParams::rubidium87();
        // Doublet configuration and merged configuration.
        for p in [params(100.0, 0.0, -0.474), params(100.0, 0.7, -0.474)] {
            let h = build_two_particle_hamiltonian(&grid, &p, &ip, &u).unwrap();
            let dense = dense_symmetric_eigenvalues(&h);
            let singles = lowest_eigenstates(h.single_particle(), 2, None).unwrap();
            let (l, r) = doublet_references(grid, &params(100.0, 0.0, -0.474));
            let reference = if p.beta == 0.0 {
                WaveFn2D::symmetrized(&l, &r).unwrap()
            } else {
                WaveFn2D::symmetrized(&singles[0].state, &singles[1].state).unwrap()
            };
            let target = h.expectation(&reference).unwrap();
            let st = two_particle_eigenstate(&h, target, &reference).unwrap();
            let e = st.energy.unwrap();
            let nearest = dense.iter().cloned().min_by(|a, b| (a - e).abs().total_cmp(&(b - e).abs())).unwrap();
            assert!((e - nearest).abs() <= 1e-6 * nearest.abs(), "{e} vs {nearest}");
            // Residual and symmetry of the returned state.
            let hv = h.apply(&st.wavefunction).unwrap();
            let res: f64 = hv
                .iter()
                .zip(st.wavefunction.amplitudes())
                .map(|(a, b)| (a - b * e).norm_sqr())
                .sum::<f64>()
                .sqrt()
                * grid.dx();
            assert!(res < 1e-6 * e.abs(), "residual {res}");
            assert!(st.wavefunction.symmetry_defect() < 1e-8);
        }
    }

    #[test]
    fn non_interacting_limit_returns_the_reference() {
        let grid = SpatialGrid::unit_cell(48).unwrap();
        let p = params(100.0, 0.0, -0.474);
        let h = build_two_particle_hamiltonian(&grid, &p, &InteractionParams::none(), &UnitSystem::default()).unwrap();
        let (l, r) = doublet_references(grid, &p);
        let reference = WaveFn2D::symmetrized(&l, &r).unwrap();
        let st = two_particle_eigenstate(&h, 0.0, &reference).unwrap();
        assert!((st.wavefunction.inner(&reference).unwrap().norm() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn one_atom_per_well_lies_below_double_occupancy() {
        let grid = SpatialGrid::unit_cell(128).unwrap();
        let p = params(100.0, 0.0, -0.474);
        let ip = InteractionParams::rubidium87();
        let h = build_two_particle_hamiltonian(&grid, &p, &ip, &UnitSystem::default()).unwrap();
        let (l, r) = doublet_references(grid, &p);
        let lr = WaveFn2D::symmetrized(&l, &r).unwrap();
        let ll = WaveFn2D::product(&l, &l).unwrap();
        let rr = WaveFn2D::product(&r, &r).unwrap();
        let combo = |s: f64| {
            let amps = ll.amplitudes().iter().zip(rr.amplitudes()).map(|(a, b)| a + b * s).collect();
            let mut w = WaveFn2D::from_amplitudes(grid, amps, true).unwrap();
            w.normalize().unwrap();
            w
        };
        let e_lr = two_particle_eigenstate(&h, h.expectation(&lr).unwrap(), &lr).unwrap().energy.unwrap();
        let mut doubly = f64::INFINITY;
        for s in [1.0, -1.0] {
            let reference = combo(s);
            let e = two_particle_eigenstate(&h, h.expectation(&reference).unwrap(), &reference).unwrap();
            doubly = doubly.min(e.energy.unwrap());
        }
        let gap = doubly - e_lr;
        assert!(gap > 1.5 && gap < 4.5, "gap {gap} kHz");
    }

    #[test]
    fn stationary_two_particle_state() {
        let grid = SpatialGrid::unit_cell(64).unwrap();
        let p = params(100.0, 0.7, -0.474);
        let ip = InteractionParams::rubidium87();
        let u = UnitSystem::default();
        let h = build_two_particle_hamiltonian(&grid, &p, &ip, &u).unwrap();
        let singles = lowest_eigenstates(h.single_particle(), 2, None).unwrap();
        let reference = WaveFn2D::symmetrized(&singles[0].state, &singles[0].state).unwrap();
        let st = two_particle_eigenstate(&h, h.expectation(&reference).unwrap(), &reference).unwrap();
        let seq = ControlSequence::constant(0.03, p, 1000).unwrap();
        let ev = evolve_two_particle(&st.wavefunction, &seq, &ip, &u, &[]).unwrap();
        let survival = st.wavefunction.inner(&ev.final_state.wavefunction).unwrap().norm_sqr();
        assert!((survival - 1.0).abs() < 1e-8, "survival {survival}");
        let e0 = h.expectation(&st.wavefunction).unwrap();
        let e1 = h.expectation(&ev.final_state.wavefunction).unwrap();
        assert!((e1 - e0).abs() <= 1e-6 * e0.abs());
        assert!(ev.norm_drift < 1e-10);
        assert!(ev.symmetry_drift < 1e-10);
    }

    #[test]
    fn energy_conserved_for_time_independent_hamiltonian() {
        let grid = SpatialGrid::unit_cell(64).unwrap();
        let p = params(100.0, 0.4, -0.474);
        let ip = InteractionParams::rubidium87();
        let u = UnitSystem::default();
        let h = build_two_particle_hamiltonian(&grid, &p, &ip, &u).unwrap();
        let (l, r) = doublet_references(grid, &params(100.0, 0.0, -0.474));
        let psi = WaveFn2D::symmetrized(&l, &r).unwrap();
        let seq = ControlSequence::constant(0.05, p, 1500).unwrap();
        let ev = evolve_two_particle(&psi, &seq, &ip, &u, &[0.025]).unwrap();
        let e0 = h.expectation(&psi).unwrap();
        for s in [&ev.trajectory[0].1, &ev.final_state.wavefunction] {
            let e = h.expectation(s).unwrap();
            assert!((e - e0).abs() <= 1e-6 * e0.abs(), "{e} vs {e0}");
        }
        assert!(density_table(&ev.trajectory[0].1).starts_with("x1 x2 |Psi|^2\n"));
    }
}
