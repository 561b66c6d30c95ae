//! Crank–Nicolson propagation of single-particle states.
//!
//! One slice `t_j → t_{j+1}` applies the Cayley transform of the averaged
//! Hamiltonian `H̄ = (H(t_j) + H(t_{j+1}))/2`,
//!
//! ```text
//! (1 + iπ·dt·(H̄ − s)) ψ' = (1 − iπ·dt·(H̄ − s)) ψ,   ψ' ← e^{−2πi·s·dt} ψ'
//! ```
//!
//! where `s` is a scalar energy reference (the minimum of the averaged
//! potential). The scalar part of the phase is applied exactly, so the
//! discretization error only sees energies measured from the well bottom.
//! Each slice is unitary, and running it with `−dt` inverts it exactly.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{SpatialGrid, WaveFn1D};
use crate::linalg::{apply_cayley_explicit, solve_cayley_system, CayleyFactor};
use crate::potential::{LatticeParams, PotentialTable};
use crate::sequence::ControlSequence;
use crate::spectrum::{kinetic_coupling, TridiagonalOperator};
use crate::units::UnitSystem;

/// Largest tolerated deviation of `‖ψ‖²` from 1 during a run.
pub const NORM_TOLERANCE: f64 = 1e-10;

/// Averaged diagonal and its energy reference for two endpoint diagonals.
/// `kinetic` is the constant kinetic part `2c/dx²` already contained in the
/// diagonals, so the reference is the minimum of the averaged potential.
fn averaged_shifted(d_from: &[f64], d_to: &[f64], kinetic: f64, out: &mut Vec<f64>) -> f64 {
    out.clear();
    out.extend(d_from.iter().zip(d_to).map(|(a, b)| 0.5 * (a + b)));
    let shift = out.iter().cloned().fold(f64::INFINITY, f64::min) - kinetic;
    out.iter_mut().for_each(|d| *d -= shift);
    shift
}

/// One Crank–Nicolson slice between two assembled Hamiltonians.
///
/// `dt` may be negative, which undoes the forward slice.
pub fn cn_step(
    psi: &WaveFn1D,
    h_from: &TridiagonalOperator,
    h_to: &TridiagonalOperator,
    dt: f64,
) -> Result<WaveFn1D> {
    if psi.grid() != h_from.grid() || psi.grid() != h_to.grid() {
        return Err(Error::GridMismatch);
    }
    if !dt.is_finite() {
        return Err(Error::InvalidDuration(dt));
    }
    let off = 0.5 * (h_from.off_diagonal() + h_to.off_diagonal());
    let mut diag = Vec::new();
    let shift = averaged_shifted(h_from.diagonal(), h_to.diagonal(), -2.0 * off, &mut diag);
    let a = PI * dt;
    let n = psi.amplitudes().len();
    let mut rhs = vec![Complex64::new(0.0, 0.0); n];
    apply_cayley_explicit(&diag, off, a, psi.amplitudes(), &mut rhs);
    let mut scratch = vec![Complex64::new(0.0, 0.0); n];
    solve_cayley_system(&diag, off, a, &mut rhs, &mut scratch)?;
    let phase = Complex64::from_polar(1.0, -2.0 * PI * shift * dt);
    rhs.iter_mut().for_each(|x| *x *= phase);
    WaveFn1D::from_amplitudes(*psi.grid(), rhs)
}

/// Reusable propagation workspace for one grid.
#[derive(Debug, Clone)]
pub struct Propagator1D {
    grid: SpatialGrid,
    table: PotentialTable,
    coupling: f64,
    v_from: Vec<f64>,
    v_to: Vec<f64>,
    diag: Vec<f64>,
    factor: CayleyFactor,
    rhs: Vec<Complex64>,
    a: f64,
    phase: Complex64,
}

impl Propagator1D {
    pub fn new(grid: SpatialGrid, units: &UnitSystem) -> Self {
        let n = grid.len();
        Self {
            grid,
            table: PotentialTable::for_grid(&grid),
            coupling: kinetic_coupling(&grid, units),
            v_from: vec![0.0; n],
            v_to: vec![0.0; n],
            diag: Vec::with_capacity(n),
            factor: CayleyFactor::new(),
            rhs: vec![Complex64::new(0.0, 0.0); n],
            a: 0.0,
            phase: Complex64::new(1.0, 0.0),
        }
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn table(&self) -> &PotentialTable {
        &self.table
    }

    /// Sets up the slice from `p_from` to `p_to` over `dt`.
    pub fn prepare(&mut self, p_from: &LatticeParams, p_to: &LatticeParams, dt: f64) -> Result<()> {
        self.table.fill(p_from, &mut self.v_from);
        self.table.fill(p_to, &mut self.v_to);
        let shift = averaged_shifted(&self.v_from, &self.v_to, 0.0, &mut self.diag);
        self.diag.iter_mut().for_each(|d| *d += 2.0 * self.coupling);
        self.a = PI * dt;
        self.phase = Complex64::from_polar(1.0, -2.0 * PI * shift * dt);
        self.factor.factor(&self.diag, -self.coupling, self.a)
    }

    /// Applies the prepared slice to raw amplitudes.
    pub fn apply(&mut self, amps: &mut [Complex64]) {
        apply_cayley_explicit(&self.diag, -self.coupling, self.a, amps, &mut self.rhs);
        self.factor.solve(&mut self.rhs);
        for (x, r) in amps.iter_mut().zip(&self.rhs) {
            *x = r * self.phase;
        }
    }

    /// Propagates all states through slice `j → j + 1` of `seq`.
    pub fn step_all(&mut self, seq: &ControlSequence, j: usize, states: &mut [Vec<Complex64>]) -> Result<()> {
        self.prepare(&seq.at(j), &seq.at(j + 1), seq.dt())?;
        for s in states.iter_mut() {
            self.apply(s);
        }
        Ok(())
    }

    /// Propagates all states backwards through slice `j + 1 → j`.
    pub fn step_back_all(&mut self, seq: &ControlSequence, j: usize, states: &mut [Vec<Complex64>]) -> Result<()> {
        self.prepare(&seq.at(j), &seq.at(j + 1), -seq.dt())?;
        for s in states.iter_mut() {
            self.apply(s);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationResult {
    pub final_state: WaveFn1D,
    /// `(t, ψ(t))` at the slice boundaries nearest the requested times.
    pub trajectory: Vec<(f64, WaveFn1D)>,
    /// `max |1 − ‖ψ‖²|` over all slices.
    pub norm_drift: f64,
}

impl PropagationResult {
    /// Density blocks `t_ms x |psi|^2`, one block per recorded time separated
    /// by blank lines.
    pub fn trajectory_table(&self) -> String {
        let mut out = String::from("t_ms x |psi|^2\n");
        for (k, (t, psi)) in self.trajectory.iter().enumerate() {
            if k > 0 {
                out.push('\n');
            }
            for (i, d) in psi.density().iter().enumerate() {
                let _ = writeln!(out, "{t:.10e} {:.10e} {d:.10e}", psi.grid().x(i));
            }
        }
        out
    }
}

/// Slice indices nearest to the requested times, with the times they stand
/// for.
pub(crate) fn record_slots(seq: &ControlSequence, times: &[f64]) -> Result<Vec<(usize, f64)>> {
    times
        .iter()
        .map(|&t| {
            seq.sample(t)?;
            let j = ((t / seq.dt()).round() as usize).min(seq.n_t());
            Ok((j, seq.time(j)))
        })
        .collect()
}

fn norm_sqr(amps: &[Complex64], dx: f64) -> f64 {
    amps.iter().map(|a| a.norm_sqr()).sum::<f64>() * dx
}

/// Evolves several initial states through the whole sequence.
pub fn evolve_many(
    initial: &[WaveFn1D],
    seq: &ControlSequence,
    units: &UnitSystem,
    record_times: &[f64],
) -> Result<Vec<PropagationResult>> {
    let grid = match initial.first() {
        Some(s) => *s.grid(),
        None => return Ok(Vec::new()),
    };
    if initial.iter().any(|s| s.grid() != &grid) {
        return Err(Error::GridMismatch);
    }
    let slots = record_slots(seq, record_times)?;
    let dx = grid.dx();
    let start_norms: Vec<f64> = initial.iter().map(WaveFn1D::norm_sqr).collect();
    for &n in &start_norms {
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::NormDrift { drift: (n - 1.0).abs(), tolerance: NORM_TOLERANCE });
        }
    }
    let mut states: Vec<Vec<Complex64>> = initial.iter().map(|s| s.amplitudes().to_vec()).collect();
    let mut trajectories: Vec<Vec<(f64, WaveFn1D)>> = vec![Vec::new(); states.len()];
    let mut drift: f64 = start_norms.iter().map(|n| (n - 1.0).abs()).fold(0.0, f64::max);
    let record = |j: usize, states: &[Vec<Complex64>], traj: &mut Vec<Vec<(f64, WaveFn1D)>>| -> Result<()> {
        for &(_, t) in slots.iter().filter(|s| s.0 == j) {
            for (k, s) in states.iter().enumerate() {
                traj[k].push((t, WaveFn1D::from_amplitudes(grid, s.clone())?));
            }
        }
        Ok(())
    };
    record(0, &states, &mut trajectories)?;
    let mut prop = Propagator1D::new(grid, units);
    for j in 0..seq.n_t() {
        prop.step_all(seq, j, &mut states)?;
        for s in &states {
            drift = drift.max((norm_sqr(s, dx) - 1.0).abs());
        }
        if drift > NORM_TOLERANCE {
            return Err(Error::NormDrift { drift, tolerance: NORM_TOLERANCE });
        }
        record(j + 1, &states, &mut trajectories)?;
    }
    // Reorder each trajectory to follow the requested times.
    states
        .into_iter()
        .zip(trajectories)
        .map(|(s, traj)| {
            let mut ordered = Vec::with_capacity(slots.len());
            let mut used = vec![false; traj.len()];
            for &(_, t) in &slots {
                if let Some(k) = (0..traj.len()).find(|&k| !used[k] && traj[k].0 == t) {
                    used[k] = true;
                    ordered.push(traj[k].clone());
                }
            }
            Ok(PropagationResult {
                final_state: WaveFn1D::from_amplitudes(grid, s)?,
                trajectory: ordered,
                norm_drift: drift,
            })
        })
        .collect()
}

/// Evolves one state through the sequence.
pub fn evolve(
    psi0: &WaveFn1D,
    seq: &ControlSequence,
    units: &UnitSystem,
    record_times: &[f64],
) -> Result<PropagationResult> {
    Ok(evolve_many(std::slice::from_ref(psi0), seq, units, record_times)?
        .pop()
        .expect("one result per state"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::well_geometry_on;
    use crate::spectrum::{assemble_hamiltonian, lowest_eigenstates, localized_states};
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(v0: f64, b: f64, t: f64) -> LatticeParams {
        LatticeParams::from_pi_units(v0, b, t).unwrap()
    }

    /// Dense `exp(−2πi·H·dt)` of a real symmetric matrix.
    fn dense_exp(h: &[f64], n: usize, dt: f64) -> DMatrix<Complex64> {
        let m = DMatrix::from_row_slice(n, n, h);
        let eig = m.symmetric_eigen();
        let v = eig.eigenvectors.map(|x| Complex64::new(x, 0.0));
        let d = DMatrix::from_diagonal(&DVector::from_iterator(
            n,
            eig.eigenvalues.iter().map(|e| Complex64::from_polar(1.0, -2.0 * PI * e * dt)),
        ));
        &v * d * v.adjoint()
    }

    #[test]
    fn stationary_state_keeps_its_overlap_and_phase() {
        let grid = SpatialGrid::unit_cell(400).unwrap();
        let p = params(100.0, 0.3, -0.474);
        let h = assemble_hamiltonian(&grid, &p).unwrap();
        let phi = lowest_eigenstates(&h, 1, None).unwrap().remove(0);
        let dt = 1e-4;
        let m = 500;
        let mut psi = phi.state.clone();
        for _ in 0..m {
            psi = cn_step(&psi, &h, &h, dt).unwrap();
        }
        let ov = phi.state.inner(&psi).unwrap();
        assert!((ov.norm() - 1.0).abs() < 1e-10);
        // CN phase: −2·atan(π(E − s)dt) per slice plus the exact reference part.
        let shift = h.diagonal().iter().cloned().fold(f64::INFINITY, f64::min) + 2.0 * h.off_diagonal();
        let e = phi.energy - shift;
        let expect = -(m as f64) * (2.0 * (PI * e * dt).atan() + 2.0 * PI * shift * dt);
        let wrapped = (ov.arg() - expect + PI).rem_euclid(2.0 * PI) - PI;
        assert!(wrapped.abs() < 1e-8, "{wrapped}");
        // and it is close to the exact phase −2πE·t
        let exact = -2.0 * PI * phi.energy * m as f64 * dt;
        let err = (ov.arg() - exact + PI).rem_euclid(2.0 * PI) - PI;
        assert!(err.abs() < m as f64 * (2.0 * PI * e * dt).powi(3));
    }

    #[test]
    fn vanishing_step_is_identity() {
        let grid = SpatialGrid::unit_cell(200).unwrap();
        let h0 = assemble_hamiltonian(&grid, &params(100.0, 0.1, -0.47)).unwrap();
        let h1 = assemble_hamiltonian(&grid, &params(100.0, 0.12, -0.47)).unwrap();
        let psi = WaveFn1D::from_fn(grid, |x| Complex64::new((-(x + 1.0).powi(2)).exp(), 0.3 * x)).unwrap();
        let out = cn_step(&psi, &h0, &h1, 1e-18).unwrap();
        for (a, b) in psi.amplitudes().iter().zip(out.amplitudes()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    /// State error of three CN slices against the dense exponential of the
    /// averaged Hamiltonians, for a random sequence and a random superposition
    /// of the three lowest states of `H(t₀)`.
    fn dense_oracle_error(seed: u64, dt: f64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = SpatialGrid::unit_cell(33).unwrap();
        let n = grid.len();
        let ps: Vec<LatticeParams> = (0..4)
            .map(|_| params(rng.random_range(20.0..120.0), rng.random_range(0.0..0.7), rng.random_range(-0.55..-0.45)))
            .collect();
        let low = lowest_eigenstates(&assemble_hamiltonian(&grid, &ps[0]).unwrap(), 3, None).unwrap();
        let coeffs: Vec<Complex64> = (0..3)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let amps: Vec<Complex64> = (0..n)
            .map(|i| low.iter().zip(&coeffs).map(|(e, c)| c * e.state.amplitudes()[i]).sum())
            .collect();
        let mut psi = WaveFn1D::from_amplitudes(grid, amps).unwrap();
        psi.normalize().unwrap();
        let mut exact = DVector::from_column_slice(psi.amplitudes());
        for w in ps.windows(2) {
            let h0 = assemble_hamiltonian(&grid, &w[0]).unwrap();
            let h1 = assemble_hamiltonian(&grid, &w[1]).unwrap();
            psi = cn_step(&psi, &h0, &h1, dt).unwrap();
            let avg: Vec<f64> = h0.to_dense().iter().zip(h1.to_dense()).map(|(a, b)| 0.5 * (a + b)).collect();
            exact = dense_exp(&avg, n, dt) * exact;
        }
        psi.amplitudes()
            .iter()
            .zip(exact.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
            * grid.dx().sqrt()
    }

    #[test]
    fn matches_dense_exponential_on_small_grid() {
        for seed in 0..10 {
            let err = dense_oracle_error(seed, 1e-5);
            assert!(err < 1e-6, "seed {seed}: state error {err}");
        }
    }

    #[test]
    fn oracle_error_is_third_order_per_slice() {
        for seed in 0..5 {
            let ratio = dense_oracle_error(seed, 2e-5) / dense_oracle_error(seed, 1e-5);
            assert!((ratio - 8.0).abs() < 1.0, "seed {seed}: ratio {ratio}");
        }
    }

    #[test]
    fn backward_step_inverts_forward_step() {
        let grid = SpatialGrid::unit_cell(300).unwrap();
        let seq = make_ramp(0.1, 200);
        let psi0 = WaveFn1D::from_fn(grid, |x| Complex64::new((-(x + PI).powi(2)).exp(), 0.0)).unwrap();
        let mut prop = Propagator1D::new(grid, &UnitSystem::default());
        let mut s = vec![psi0.amplitudes().to_vec()];
        for j in 0..seq.n_t() {
            prop.step_all(&seq, j, &mut s).unwrap();
        }
        for j in (0..seq.n_t()).rev() {
            prop.step_back_all(&seq, j, &mut s).unwrap();
        }
        for (a, b) in s[0].iter().zip(psi0.amplitudes()) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    fn make_ramp(duration: f64, n_t: usize) -> ControlSequence {
        crate::sequence::make_linear_merge(duration, params(100.0, 0.0, -0.474), params(100.0, 0.7, -0.474), n_t)
            .unwrap()
    }

    #[test]
    fn time_reversed_sequence_returns_initial_state() {
        let grid = SpatialGrid::unit_cell(400).unwrap();
        let seq = make_ramp(0.15, 1500);
        let psi0 = WaveFn1D::from_fn(grid, |x| Complex64::new((-(x + PI).powi(2)).exp(), 0.0)).unwrap();
        let u = UnitSystem::default();
        let fwd = evolve(&psi0, &seq, &u, &[]).unwrap();
        // Undo with the mirrored sequence run backwards in time: the slices of
        // `seq.reversed()` with −dt are the exact inverses.
        let mut prop = Propagator1D::new(grid, &u);
        let mut s = vec![fwd.final_state.amplitudes().to_vec()];
        for j in (0..seq.n_t()).rev() {
            prop.prepare(&seq.at(j + 1), &seq.at(j), -seq.dt()).unwrap();
            prop.apply(&mut s[0]);
        }
        let back = WaveFn1D::from_amplitudes(grid, s.pop().unwrap()).unwrap();
        assert!((psi0.inner(&back).unwrap().norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn norm_preserved_for_huge_steps() {
        let grid = SpatialGrid::unit_cell(500).unwrap();
        for n_t in [5, 50, 5000] {
            let seq = make_ramp(0.5, n_t);
            let psi0 = WaveFn1D::from_fn(grid, |x| Complex64::new((-(x + PI).powi(2)).exp(), 0.0)).unwrap();
            let r = evolve(&psi0, &seq, &UnitSystem::default(), &[]).unwrap();
            assert!(r.norm_drift <= NORM_TOLERANCE, "n_t {n_t}: {}", r.norm_drift);
        }
    }

    #[test]
    fn second_order_in_time() {
        let grid = SpatialGrid::unit_cell(300).unwrap();
        let u = UnitSystem::default();
        let psi0 = WaveFn1D::from_fn(grid, |x| Complex64::new((-2.0 * (x + PI).powi(2)).exp(), 0.0)).unwrap();
        let run = |n_t: usize| evolve(&psi0, &make_ramp(0.05, n_t), &u, &[]).unwrap().final_state;
        let reference = run(8 * 400);
        let err = |s: &WaveFn1D| {
            s.amplitudes()
                .iter()
                .zip(reference.amplitudes())
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt()
        };
        let e1 = err(&run(100));
        let e2 = err(&run(200));
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() < 0.6, "ratio {ratio}");
    }

    #[test]
    fn tunnelling_follows_the_doublet_splitting() {
        let grid = SpatialGrid::unit_cell(600).unwrap();
        // Lowered barrier so the tunnelling period is short.
        let p = params(30.0, 0.0, -0.5);
        let h = assemble_hamiltonian(&grid, &p).unwrap();
        let pairs = lowest_eigenstates(&h, 2, None).unwrap();
        let geo = well_geometry_on(&p, &grid).unwrap();
        let (psi_l, _) = localized_states(&pairs[0], &pairs[1], geo.barrier_x).unwrap();
        let split = pairs[1].energy - pairs[0].energy;
        let period = 1.0 / split;
        let n_t = 4000;
        let seq = ControlSequence::constant(period, p, n_t).unwrap();
        let times: Vec<f64> = (0..=n_t).step_by(10).map(|j| j as f64 * period / n_t as f64).collect();
        let r = evolve(&psi_l, &seq, &UnitSystem::default(), &times).unwrap();
        let left: Vec<f64> = r.trajectory.iter().map(|(_, s)| s.mass_left_of(geo.barrier_x)).collect();
        // Population returns at t = period and is fully transferred at half.
        let (imin, _) = left.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        let t_min = r.trajectory[imin].0;
        assert!((t_min - 0.5 * period).abs() < 0.01 * period, "{t_min} vs {}", 0.5 * period);
        assert!(left[0] > 0.9 && *left.last().unwrap() > 0.9);
        // Two-level oracle: P_L(t) = cos²(π·Δ·t) up to the small leakage.
        for ((t, _), pl) in r.trajectory.iter().zip(&left).step_by(20) {
            let model = (PI * split * t).cos().powi(2) * left[0] + (PI * split * t).sin().powi(2) * (1.0 - left[0]);
            assert!((pl - model).abs() < 0.02, "t {t}: {pl} vs {model}");
        }
    }

    #[test]
    fn trajectory_follows_requested_order() {
        let grid = SpatialGrid::unit_cell(100).unwrap();
        let seq = make_ramp(0.1, 100);
        let psi0 = WaveFn1D::from_fn(grid, |x| Complex64::new((-(x + PI).powi(2)).exp(), 0.0)).unwrap();
        let r = evolve(&psi0, &seq, &UnitSystem::default(), &[0.1, 0.0, 0.05]).unwrap();
        let ts: Vec<f64> = r.trajectory.iter().map(|t| t.0).collect();
        assert_eq!(ts, vec![0.1, 0.0, 0.05]);
        assert_eq!(r.trajectory[0].1, r.final_state);
        assert!(r.trajectory_table().starts_with("t_ms x |psi|^2\n"));
        assert!(evolve(&psi0, &seq, &UnitSystem::default(), &[0.2]).is_err());
    }

    /// The literal endpoint form `(1 + iaH_{n+1})ψ' = (1 − iaH_n)ψ` is not
    /// unitary once H changes between slices.
    #[test]
    fn endpoint_form_drifts_in_norm() {
        let grid = SpatialGrid::unit_cell(300).unwrap();
        let seq = make_ramp(0.15, 500);
        let mut psi = WaveFn1D::from_fn(grid, |x| Complex64::new((-(x + PI).powi(2)).exp(), 0.0)).unwrap();
        let u = UnitSystem::default();
        let mut scratch = vec![Complex64::new(0.0, 0.0); grid.len()];
        let mut rhs = vec![Complex64::new(0.0, 0.0); grid.len()];
        let mut worst: f64 = 0.0;
        for j in 0..seq.n_t() {
            let h0 = crate::spectrum::assemble_hamiltonian_with(&grid, &seq.at(j), &u).unwrap();
            let h1 = crate::spectrum::assemble_hamiltonian_with(&grid, &seq.at(j + 1), &u).unwrap();
            let a = PI * seq.dt();
            apply_cayley_explicit(h0.diagonal(), h0.off_diagonal(), a, psi.amplitudes(), &mut rhs);
            solve_cayley_system(h1.diagonal(), h1.off_diagonal(), a, &mut rhs, &mut scratch).unwrap();
            psi = WaveFn1D::from_amplitudes(grid, rhs.clone()).unwrap();
            worst = worst.max((psi.norm_sqr() - 1.0).abs());
        }
        assert!(worst > 1e3 * NORM_TOLERANCE, "{worst}");
    }

    /// First-order explicit Euler, `ψ' = ψ − 2πi·dt·Hψ`, grows without bound.
    #[test]
    fn explicit_scheme_is_unstable() {
        let grid = SpatialGrid::unit_cell(300).unwrap();
        let h = assemble_hamiltonian(&grid, &params(100.0, 0.0, -0.5)).unwrap();
        let mut psi = WaveFn1D::from_fn(grid, |x| Complex64::new((-(x + PI).powi(2)).exp(), 0.0)).unwrap();
        let dt = 1e-4;
        for _ in 0..200 {
            let hpsi = h.apply(psi.amplitudes());
            let next: Vec<Complex64> = psi
                .amplitudes()
                .iter()
                .zip(&hpsi)
                .map(|(p, hp)| p - Complex64::new(0.0, 2.0 * PI * dt) * hp)
                .collect();
            psi = WaveFn1D::from_amplitudes(grid, next).unwrap();
        }
        assert!(psi.norm_sqr() > 10.0);
        // CN with the same step stays unitary.
        let mut cn = WaveFn1D::from_fn(grid, |x| Complex64::new((-(x + PI).powi(2)).exp(), 0.0)).unwrap();
        for _ in 0..200 {
            cn = cn_step(&cn, &h, &h, dt).unwrap();
        }
        assert!((cn.norm_sqr() - 1.0).abs() < 1e-12);
    }
}
