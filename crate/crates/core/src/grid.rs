//! Uniform finite-difference mesh and wavefunctions living on it.
//!
//! The mesh has nodes `x_k = x_min + k·dx`, `k = 0..=n`. Dirichlet walls pin
//! the wavefunction to zero at `x_0` and `x_n`, so only the `n - 1` interior
//! nodes carry amplitudes.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const MIN_POINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialGrid {
    x_min: f64,
    x_max: f64,
    n: usize,
}

impl SpatialGrid {
    pub fn new(x_min: f64, x_max: f64, n: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite()) || x_max <= x_min {
            return Err(Error::InvalidDomain(format!(
                "need x_max > x_min, got [{x_min}, {x_max}]"
            )));
        }
        if n < MIN_POINTS {
            return Err(Error::InvalidDomain(format!(
                "need at least {MIN_POINTS} intervals, got {n}"
            )));
        }
        Ok(Self { x_min, x_max, n })
    }

    /// One double-well unit cell, `[-3π/2, π/2]`, with the two wells near
    /// `kx = -π` and `kx = 0` and walls on the barrier tops of the λ/2 lattice.
    pub fn unit_cell(n: usize) -> Result<Self> {
        Self::new(-1.5 * PI, 0.5 * PI, n)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    /// Number of intervals.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n as f64
    }

    /// Number of interior nodes carrying amplitudes.
    pub fn len(&self) -> usize {
        self.n - 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Position of mesh node `k` (`0..=n`).
    pub fn node(&self, k: usize) -> f64 {
        self.x_min + k as f64 * self.dx()
    }

    /// Position of interior point `i` (`0..n-1`), i.e. node `i + 1`.
    pub fn x(&self, i: usize) -> f64 {
        self.node(i + 1)
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.x(i)).collect()
    }
}

/// Grid constructor with the argument order of the CLI config.
pub fn make_grid(x_min: f64, x_max: f64, n: usize) -> Result<SpatialGrid> {
    SpatialGrid::new(x_min, x_max, n)
}

/// Single-particle wavefunction, normalized as `Σ|ψ_k|²·dx = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveFn1D {
    grid: SpatialGrid,
    amps: Vec<Complex64>,
}

impl WaveFn1D {
    /// Wraps raw amplitudes without normalizing them.
    pub fn from_amplitudes(grid: SpatialGrid, amps: Vec<Complex64>) -> Result<Self> {
        if amps.len() != grid.len() {
            return Err(Error::InvalidDomain(format!(
                "expected {} amplitudes, got {}",
                grid.len(),
                amps.len()
            )));
        }
        Ok(Self { grid, amps })
    }

    /// Samples `f` on the interior points and normalizes the result.
    pub fn from_fn(grid: SpatialGrid, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        let amps = grid.points().into_iter().map(f).collect();
        let mut psi = Self { grid, amps };
        psi.normalize()?;
        Ok(psi)
    }

    pub fn from_real(grid: SpatialGrid, values: &[f64]) -> Result<Self> {
        Self::from_amplitudes(
            grid,
            values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        )
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.grid.dx()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let norm = self.norm_sqr().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidDomain("cannot normalize a null state".into()));
        }
        let inv = 1.0 / norm;
        self.amps.iter_mut().for_each(|a| *a *= inv);
        Ok(())
    }

    /// `⟨self|other⟩ = Σ conj(a)·b·dx`.
    pub fn inner(&self, other: &WaveFn1D) -> Result<Complex64> {
        inner_product(self, other)
    }

    pub fn density(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    /// Probability mass on interior points with `x < split`.
    pub fn mass_left_of(&self, split: f64) -> f64 {
        let dx = self.grid.dx();
        self.amps
            .iter()
            .enumerate()
            .filter(|(i, _)| self.grid.x(*i) < split)
            .map(|(_, a)| a.norm_sqr())
            .sum::<f64>()
            * dx
    }

    pub fn scaled(&self, factor: Complex64) -> WaveFn1D {
        WaveFn1D {
            grid: self.grid,
            amps: self.amps.iter().map(|a| a * factor).collect(),
        }
    }
}

pub fn inner_product(a: &WaveFn1D, b: &WaveFn1D) -> Result<Complex64> {
    if a.grid != b.grid {
        return Err(Error::GridMismatch);
    }
    let sum: Complex64 = a
        .amps
        .iter()
        .zip(&b.amps)
        .map(|(x, y)| x.conj() * y)
        .sum();
    Ok(sum * a.grid.dx())
}

/// Two-particle wavefunction on the product mesh `(x₁, x₂)`.
///
/// Amplitudes are stored row-major: index `i·m + j` holds `Ψ(x₁ = x_i, x₂ = x_j)`
/// with `m = grid.len()`. Normalization is `Σ|Ψ|²·dx² = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveFn2D {
    grid: SpatialGrid,
    amps: Vec<Complex64>,
    bosonic: bool,
}

impl WaveFn2D {
    pub fn from_amplitudes(grid: SpatialGrid, amps: Vec<Complex64>, bosonic: bool) -> Result<Self> {
        let m = grid.len();
        if amps.len() != m * m {
            return Err(Error::InvalidDomain(format!(
                "expected {} amplitudes, got {}",
                m * m,
                amps.len()
            )));
        }
        Ok(Self { grid, amps, bosonic })
    }

    /// Plain product `a(x₁)·b(x₂)` (no symmetrization).
    pub fn product(a: &WaveFn1D, b: &WaveFn1D) -> Result<Self> {
        if a.grid() != b.grid() {
            return Err(Error::GridMismatch);
        }
        let m = a.grid().len();
        let mut amps = Vec::with_capacity(m * m);
        for x1 in a.amplitudes() {
            for x2 in b.amplitudes() {
                amps.push(x1 * x2);
            }
        }
        Ok(Self {
            grid: *a.grid(),
            amps,
            bosonic: false,
        })
    }

    /// Bosonic state `(a₁b₂ + b₁a₂)/√2`, renormalized on the mesh.
    ///
    /// For `a == b` this reduces to the normalized product `a₁a₂`.
    pub fn symmetrized(a: &WaveFn1D, b: &WaveFn1D) -> Result<Self> {
        let ab = Self::product(a, b)?;
        let m = a.grid().len();
        let mut amps = vec![Complex64::new(0.0, 0.0); m * m];
        for i in 0..m {
            for j in 0..m {
                amps[i * m + j] = ab.amps[i * m + j] + ab.amps[j * m + i];
            }
        }
        let mut psi = Self {
            grid: *a.grid(),
            amps,
            bosonic: true,
        };
        psi.normalize()?;
        Ok(psi)
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn side(&self) -> usize {
        self.grid.len()
    }

    pub fn is_bosonic(&self) -> bool {
        self.bosonic
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.amps[i * self.side() + j]
    }

    pub fn norm_sqr(&self) -> f64 {
        let dx = self.grid.dx();
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>() * dx * dx
    }

    pub fn normalize(&mut self) -> Result<()> {
        let norm = self.norm_sqr().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidDomain("cannot normalize a null state".into()));
        }
        let inv = 1.0 / norm;
        self.amps.iter_mut().for_each(|a| *a *= inv);
        Ok(())
    }

    pub fn inner(&self, other: &WaveFn2D) -> Result<Complex64> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let dx = self.grid.dx();
        let sum: Complex64 = self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(x, y)| x.conj() * y)
            .sum();
        Ok(sum * dx * dx)
    }

    /// `max |Ψ(x₁,x₂) − Ψ(x₂,x₁)| / max |Ψ|`.
    pub fn symmetry_defect(&self) -> f64 {
        let m = self.side();
        let mut worst: f64 = 0.0;
        let mut peak: f64 = 0.0;
        for i in 0..m {
            for j in 0..m {
                let a = self.amps[i * m + j];
                peak = peak.max(a.norm());
                if j > i {
                    worst = worst.max((a - self.amps[j * m + i]).norm());
                }
            }
        }
        if peak == 0.0 {
            0.0
        } else {
            worst / peak
        }
    }

    pub fn density(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn spacing_is_exact() {
        let g = make_grid(0.0, 1.0, 10).unwrap();
        assert_eq!(g.dx(), 0.1);
        assert_eq!(g.len(), 9);
        let g = make_grid(-PI / 2.0, 1.5 * PI, 1000).unwrap();
        assert_eq!(g.dx(), (1.5 * PI - (-PI / 2.0)) / 1000.0);
        assert!((g.dx() - 2.0 * PI / 1000.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_domains() {
        assert!(matches!(make_grid(0.0, 1.0, 4), Err(Error::InvalidDomain(_))));
        assert!(matches!(make_grid(0.0, 1.0, 7), Err(Error::InvalidDomain(_))));
        assert!(make_grid(0.0, 1.0, 8).is_ok());
        assert!(make_grid(1.0, 1.0, 100).is_err());
        assert!(make_grid(2.0, 1.0, 100).is_err());
        assert!(make_grid(f64::NAN, 1.0, 100).is_err());
    }

    #[test]
    fn normalized_self_overlap() {
        let g = make_grid(0.0, 1.0, 200).unwrap();
        let psi = WaveFn1D::from_fn(g, |x| Complex64::new(x * (1.0 - x), x.sin())).unwrap();
        let s = psi.inner(&psi).unwrap();
        assert!((s - c(1.0)).norm() < 1e-10);
    }

    #[test]
    fn sine_modes_orthogonal() {
        let g = make_grid(0.0, 1.0, 1000).unwrap();
        let a = WaveFn1D::from_fn(g, |x| c((PI * x).sin())).unwrap();
        let b = WaveFn1D::from_fn(g, |x| c((2.0 * PI * x).sin())).unwrap();
        assert!(a.inner(&b).unwrap().norm() < 1e-6);
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let a = WaveFn1D::from_fn(make_grid(0.0, 1.0, 10).unwrap(), |_| c(1.0)).unwrap();
        let b = WaveFn1D::from_fn(make_grid(0.0, 1.0, 12).unwrap(), |_| c(1.0)).unwrap();
        assert_eq!(a.inner(&b), Err(Error::GridMismatch));
    }

    #[test]
    fn symmetrized_product_is_bosonic_and_normalized() {
        let g = make_grid(0.0, 1.0, 40).unwrap();
        let a = WaveFn1D::from_fn(g, |x| c((PI * x).sin())).unwrap();
        let b = WaveFn1D::from_fn(g, |x| Complex64::new((2.0 * PI * x).sin(), 0.3 * x)).unwrap();
        let s = WaveFn2D::symmetrized(&a, &b).unwrap();
        assert!(s.is_bosonic());
        assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
        assert!(s.symmetry_defect() < 1e-14);
        let p = WaveFn2D::product(&a, &b).unwrap();
        assert!(p.symmetry_defect() > 0.1);
    }

    proptest::proptest! {
        #[test]
        fn inner_is_conjugate_symmetric(
            re in proptest::collection::vec(-1.0f64..1.0, 15),
            im in proptest::collection::vec(-1.0f64..1.0, 15),
            re2 in proptest::collection::vec(-1.0f64..1.0, 15),
        ) {
            let g = make_grid(-1.0, 3.0, 16).unwrap();
            let a = WaveFn1D::from_amplitudes(g, re.iter().zip(&im).map(|(r, i)| Complex64::new(*r, *i)).collect()).unwrap();
            let b = WaveFn1D::from_amplitudes(g, re2.iter().zip(&re).map(|(r, i)| Complex64::new(*r, -*i)).collect()).unwrap();
            let ab = a.inner(&b).unwrap();
            let ba = b.inner(&a).unwrap();
            proptest::prop_assert!((ab - ba.conj()).norm() < 1e-14);
        }
    }
}
