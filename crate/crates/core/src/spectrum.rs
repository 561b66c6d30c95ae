//! Finite-difference Hamiltonian, its low-lying eigenstates and the localized
//! well states.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{SpatialGrid, WaveFn1D};
use crate::linalg::{apply_tridiagonal, bisect_eigenvalue, gershgorin, inverse_iteration, sturm_count};
use crate::potential::{LatticeParams, PotentialTable};
use crate::sequence::ControlSequence;
use crate::units::UnitSystem;

/// Largest number of eigenpairs requested from one solve.
pub const MAX_EIGENSTATES: usize = 10;

/// Relative residual every returned eigenpair satisfies.
pub const EIGEN_RESIDUAL: f64 = 1e-8;

/// Real symmetric tridiagonal Hamiltonian on the interior grid points:
/// `H_kk = V(x_k) + 2c/dx²`, `H_k,k±1 = −c/dx²` with `c` the kinetic
/// coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalOperator {
    grid: SpatialGrid,
    diagonal: Vec<f64>,
    off: f64,
}

impl TridiagonalOperator {
    pub fn new(grid: SpatialGrid, diagonal: Vec<f64>, off: f64) -> Result<Self> {
        if diagonal.len() != grid.len() {
            return Err(Error::InvalidDomain(format!(
                "diagonal has {} entries for {} interior points",
                diagonal.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, diagonal, off })
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    pub fn off_diagonal(&self) -> f64 {
        self.off
    }

    pub fn dim(&self) -> usize {
        self.diagonal.len()
    }

    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); x.len()];
        apply_tridiagonal(&self.diagonal, self.off, x, &mut out);
        out
    }

    pub fn apply_real(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        apply_tridiagonal(&self.diagonal, self.off, x, &mut out);
        out
    }

    /// `H·ψ` as a wavefunction on the same grid (not normalized).
    pub fn apply_state(&self, psi: &WaveFn1D) -> Result<WaveFn1D> {
        if psi.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        WaveFn1D::from_amplitudes(self.grid, self.apply(psi.amplitudes()))
    }

    /// `⟨ψ|H|ψ⟩` with the `dx` measure.
    pub fn expectation(&self, psi: &WaveFn1D) -> Result<f64> {
        Ok(psi.inner(&self.apply_state(psi)?)?.re)
    }

    /// Row-major dense copy, for small-grid cross-checks.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.dim();
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            m[i * n + i] = self.diagonal[i];
            if i + 1 < n {
                m[i * n + i + 1] = self.off;
                m[(i + 1) * n + i] = self.off;
            }
        }
        m
    }
}

/// `c/dx²`, the magnitude of the off-diagonal coupling.
pub fn kinetic_coupling(grid: &SpatialGrid, units: &UnitSystem) -> f64 {
    units.kinetic_coefficient() / (grid.dx() * grid.dx())
}

pub fn assemble_hamiltonian(grid: &SpatialGrid, p: &LatticeParams) -> Result<TridiagonalOperator> {
    assemble_hamiltonian_with(grid, p, &UnitSystem::default())
}

pub fn assemble_hamiltonian_with(
    grid: &SpatialGrid,
    p: &LatticeParams,
    units: &UnitSystem,
) -> Result<TridiagonalOperator> {
    p.validate()?;
    let table = PotentialTable::for_grid(grid);
    hamiltonian_from_table(grid, &table, p, units)
}

pub(crate) fn hamiltonian_from_table(
    grid: &SpatialGrid,
    table: &PotentialTable,
    p: &LatticeParams,
    units: &UnitSystem,
) -> Result<TridiagonalOperator> {
    let c = kinetic_coupling(grid, units);
    let mut diagonal = table.values(p);
    diagonal.iter_mut().for_each(|d| *d += 2.0 * c);
    TridiagonalOperator::new(*grid, diagonal, -c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub energy: f64,
    pub state: WaveFn1D,
}

fn check_count(count: usize, dim: usize) -> Result<()> {
    if count == 0 || count > MAX_EIGENSTATES || count > dim {
        return Err(Error::InvalidProblem(format!(
            "requested {count} eigenstates (allowed 1..={})",
            MAX_EIGENSTATES.min(dim)
        )));
    }
    Ok(())
}

/// Indices of the `count` eigenvalues nearest `target`, ascending.
fn target_indices(h: &TridiagonalOperator, count: usize, target: f64) -> Vec<usize> {
    let n = h.dim();
    let below = sturm_count(&h.diagonal, h.off, target);
    let lo = below.saturating_sub(count);
    let hi = (below + count).min(n);
    let mut cand: Vec<(usize, f64)> = (lo..hi)
        .map(|k| (k, (bisect_eigenvalue(&h.diagonal, h.off, k) - target).abs()))
        .collect();
    cand.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut idx: Vec<usize> = cand.into_iter().take(count).map(|c| c.0).collect();
    idx.sort_unstable();
    idx
}

/// The `count` lowest eigenvalues, ascending. No eigenvectors are formed.
pub fn lowest_energies(h: &TridiagonalOperator, count: usize) -> Result<Vec<f64>> {
    check_count(count, h.dim())?;
    Ok((0..count).map(|k| bisect_eigenvalue(&h.diagonal, h.off, k)).collect())
}

/// Eigenpairs by Sturm bisection and inverse iteration.
///
/// Without a target the `count` lowest states are returned; with one, the
/// `count` states whose energies are nearest to it. Pairs are sorted by
/// energy, normalized with the `dx` measure and real with their largest
/// component positive.
pub fn lowest_eigenstates(
    h: &TridiagonalOperator,
    count: usize,
    target: Option<f64>,
) -> Result<Vec<EigenPair>> {
    check_count(count, h.dim())?;
    let indices: Vec<usize> = match target {
        None => (0..count).collect(),
        Some(t) => target_indices(h, count, t),
    };
    let (lo, hi) = gershgorin(&h.diagonal, h.off);
    let scale = lo.abs().max(hi.abs());
    let sqrt_dx = h.grid.dx().sqrt();
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut pairs = Vec::with_capacity(count);
    let mut last = f64::NEG_INFINITY;
    for k in indices {
        let e = bisect_eigenvalue(&h.diagonal, h.off, k);
        // Members of a numerically degenerate cluster are kept orthogonal.
        let deflate: Vec<&[f64]> = vectors.iter().map(|v| v.as_slice()).collect();
        let (mut v, _) = inverse_iteration(&h.diagonal, h.off, e, &deflate, 0.1 * EIGEN_RESIDUAL, 12)
            .or_else(|_| inverse_iteration(&h.diagonal, h.off, e, &deflate, EIGEN_RESIDUAL, 40))?;
        let (imax, _) = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .expect("non-empty vector");
        if v[imax] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        debug_assert!(e >= last - 1e-12 * scale);
        last = e;
        let amps = v.iter().map(|x| Complex64::new(x / sqrt_dx, 0.0)).collect();
        pairs.push(EigenPair { energy: e, state: WaveFn1D::from_amplitudes(h.grid, amps)? });
        vectors.push(v);
    }
    Ok(pairs)
}

/// Complete eigensystem: energies ascending and Euclidean-unit eigenvectors.
pub(crate) fn full_eigensystem(h: &TridiagonalOperator) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = h.dim();
    let mut energies = Vec::with_capacity(n);
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        let e = bisect_eigenvalue(&h.diagonal, h.off, k);
        let deflate: Vec<&[f64]> = vectors.iter().map(|v| v.as_slice()).collect();
        let (v, _) = inverse_iteration(&h.diagonal, h.off, e, &deflate, 0.1 * EIGEN_RESIDUAL, 40)?;
        energies.push(e);
        vectors.push(v);
    }
    Ok((energies, vectors))
}

/// Relative residual `‖Hφ − Eφ‖ / ‖Hφ‖` of an eigenpair.
pub fn eigen_residual(h: &TridiagonalOperator, pair: &EigenPair) -> f64 {
    let hv = h.apply(pair.state.amplitudes());
    let res: f64 = hv
        .iter()
        .zip(pair.state.amplitudes())
        .map(|(a, b)| (a - b * pair.energy).norm_sqr())
        .sum::<f64>()
        .sqrt();
    let norm: f64 = hv.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    res / norm
}

/// Left and right well states `(φ₀ ∓ φ₁)/√2` of a doublet.
///
/// The sign is chosen so that `ψ_L` holds at least 90 % of its probability
/// left of `barrier_x` and `ψ_R` at least 90 % right of it.
pub fn localized_states(
    ground: &EigenPair,
    excited: &EigenPair,
    barrier_x: f64,
) -> Result<(WaveFn1D, WaveFn1D)> {
    let g = &ground.state;
    let e = &excited.state;
    if g.grid() != e.grid() {
        return Err(Error::GridMismatch);
    }
    let combine = |s: f64| -> Result<WaveFn1D> {
        let amps = g
            .amplitudes()
            .iter()
            .zip(e.amplitudes())
            .map(|(a, b)| (a + b * s) * FRAC_1_SQRT_2)
            .collect();
        WaveFn1D::from_amplitudes(*g.grid(), amps)
    };
    let minus = combine(-1.0)?;
    let plus = combine(1.0)?;
    let mass = |l: &WaveFn1D, r: &WaveFn1D| {
        let left = l.mass_left_of(barrier_x) / l.norm_sqr();
        let right = 1.0 - r.mass_left_of(barrier_x) / r.norm_sqr();
        left.min(right)
    };
    let m_minus = mass(&minus, &plus);
    let m_plus = mass(&plus, &minus);
    if m_minus >= 0.9 {
        Ok((minus, plus))
    } else if m_plus >= 0.9 {
        Ok((plus, minus))
    } else {
        Err(Error::Delocalized { best_mass: m_minus.max(m_plus) })
    }
}

/// Lowest energies of the frozen Hamiltonian at a list of times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumTrace {
    pub times: Vec<f64>,
    /// `energies[i][n]` is level `n` at `times[i]`, ascending in `n`.
    pub energies: Vec<Vec<f64>>,
}

impl SpectrumTrace {
    /// Tabular text `t_ms E0_kHz E1_kHz ...`.
    pub fn to_table(&self) -> String {
        let count = self.energies.first().map_or(0, Vec::len);
        let mut out = String::from("t_ms");
        for n in 0..count {
            let _ = write!(out, " E{n}_kHz");
        }
        out.push('\n');
        for (t, row) in self.times.iter().zip(&self.energies) {
            let _ = write!(out, "{t:.10e}");
            for e in row {
                let _ = write!(out, " {e:.12e}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn instantaneous_spectrum(
    seq: &ControlSequence,
    grid: &SpatialGrid,
    sample_times: &[f64],
    count: usize,
    units: &UnitSystem,
) -> Result<SpectrumTrace> {
    check_count(count, grid.len())?;
    let table = PotentialTable::for_grid(grid);
    let energies = sample_times
        .par_iter()
        .map(|&t| {
            let p = seq.sample(t)?;
            let h = hamiltonian_from_table(grid, &table, &p, units)?;
            lowest_energies(&h, count)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectrumTrace { times: sample_times.to_vec(), energies })
}
