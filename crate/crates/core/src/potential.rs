//! The double-well lattice potential and its parameter derivatives.
//!
//! ```text
//! V(x, y) = −V₀ [ cos²(β/2)(cos²y + cos²x) + sin²(β/2)(cos y + cos(x − θ))² ]
//! ```
//!
//! with `x`, `y` the dimensionless coordinates `kx`, `ky`. The 1D model uses the
//! cross-section `y = 0` along the double-well axis.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SpatialGrid;

/// Depth `v0` (kHz), polarization angle `beta` and phase `theta` (radians).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeParams {
    pub v0: f64,
    pub beta: f64,
    pub theta: f64,
}

impl LatticeParams {
    pub fn new(v0: f64, beta: f64, theta: f64) -> Result<Self> {
        let p = Self { v0, beta, theta };
        p.validate()?;
        Ok(p)
    }

    /// Builds parameters from `β/π` and `θ/π`.
    pub fn from_pi_units(v0: f64, beta_over_pi: f64, theta_over_pi: f64) -> Result<Self> {
        Self::new(v0, beta_over_pi * PI, theta_over_pi * PI)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v0.is_finite() && self.beta.is_finite() && self.theta.is_finite()) {
            return Err(Error::InvalidParams(format!("non-finite value in {self:?}")));
        }
        if self.v0 < 0.0 {
            return Err(Error::InvalidParams(format!("V0 = {} < 0", self.v0)));
        }
        // A few ulps of slack so that β = π survives a round trip through β/π.
        let b = self.beta / PI;
        if !(-1e-12..=1.0 + 1e-12).contains(&b) {
            return Err(Error::InvalidParams(format!("beta/pi = {b} outside [0, 1]")));
        }
        Ok(())
    }

    /// Projects onto the admissible set: `V₀ ≥ 0`, `β ∈ [0, π]`.
    pub fn clamped(self) -> Self {
        Self {
            v0: self.v0.max(0.0),
            beta: self.beta.clamp(0.0, PI),
            theta: self.theta,
        }
    }

    /// Linear interpolation `(1 − w)·self + w·other`.
    pub fn lerp(&self, other: &Self, w: f64) -> Self {
        Self {
            v0: self.v0 + w * (other.v0 - self.v0),
            beta: self.beta + w * (other.beta - self.beta),
            theta: self.theta + w * (other.theta - self.theta),
        }
    }
}

/// The three control parameters of the lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Control {
    V0,
    Beta,
    Theta,
}

impl Control {
    pub const ALL: [Control; 3] = [Control::V0, Control::Beta, Control::Theta];

    pub fn get(self, p: &LatticeParams) -> f64 {
        match self {
            Control::V0 => p.v0,
            Control::Beta => p.beta,
            Control::Theta => p.theta,
        }
    }

    pub fn set(self, p: &mut LatticeParams, value: f64) {
        match self {
            Control::V0 => p.v0 = value,
            Control::Beta => p.beta = value,
            Control::Theta => p.theta = value,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Control::V0 => "v0",
            Control::Beta => "beta",
            Control::Theta => "theta",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "v0" => Some(Control::V0),
            "beta" => Some(Control::Beta),
            "theta" => Some(Control::Theta),
            _ => None,
        }
    }
}

pub fn potential_2d(p: &LatticeParams, x: f64, y: f64) -> f64 {
    let c2 = (0.5 * p.beta).cos().powi(2);
    let s2 = (0.5 * p.beta).sin().powi(2);
    let cy = y.cos();
    let b = cy + (x - p.theta).cos();
    -p.v0 * (c2 * (cy * cy + x.cos().powi(2)) + s2 * b * b)
}

/// Cross-section of [`potential_2d`] along `y = 0`.
pub fn potential_1d(p: &LatticeParams, x: f64) -> f64 {
    potential_2d(p, x, 0.0)
}

/// Partial derivatives of [`potential_1d`] with respect to the controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialGradient {
    pub d_v0: f64,
    pub d_beta: f64,
    pub d_theta: f64,
}

impl PotentialGradient {
    pub fn component(&self, control: Control) -> f64 {
        match control {
            Control::V0 => self.d_v0,
            Control::Beta => self.d_beta,
            Control::Theta => self.d_theta,
        }
    }
}

pub fn potential_gradient(p: &LatticeParams, x: f64) -> PotentialGradient {
    let a = 1.0 + x.cos().powi(2);
    let b = 1.0 + (x - p.theta).cos();
    let c2 = (0.5 * p.beta).cos().powi(2);
    let s2 = (0.5 * p.beta).sin().powi(2);
    PotentialGradient {
        d_v0: -(c2 * a + s2 * b * b),
        d_beta: -p.v0 * 0.5 * p.beta.sin() * (b * b - a),
        d_theta: -p.v0 * s2 * 2.0 * b * (x - p.theta).sin(),
    }
}

/// Trigonometric tables for fast evaluation of the potential on a fixed set of
/// points. The hot loops of the propagators evaluate the potential for every
/// time slice.
#[derive(Debug, Clone)]
pub struct PotentialTable {
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl PotentialTable {
    pub fn new(points: &[f64]) -> Self {
        Self {
            cos: points.iter().map(|x| x.cos()).collect(),
            sin: points.iter().map(|x| x.sin()).collect(),
        }
    }

    pub fn for_grid(grid: &SpatialGrid) -> Self {
        Self::new(&grid.points())
    }

    pub fn len(&self) -> usize {
        self.cos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cos.is_empty()
    }

    pub fn fill(&self, p: &LatticeParams, out: &mut [f64]) {
        let c2 = (0.5 * p.beta).cos().powi(2);
        let s2 = (0.5 * p.beta).sin().powi(2);
        let (st, ct) = p.theta.sin_cos();
        for ((o, &c), &s) in out.iter_mut().zip(&self.cos).zip(&self.sin) {
            let b = 1.0 + c * ct + s * st;
            *o = -p.v0 * (c2 * (1.0 + c * c) + s2 * b * b);
        }
    }

    pub fn values(&self, p: &LatticeParams) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.fill(p, &mut out);
        out
    }

    /// `∂V/∂control` at every point.
    pub fn fill_derivative(&self, p: &LatticeParams, control: Control, out: &mut [f64]) {
        let c2 = (0.5 * p.beta).cos().powi(2);
        let s2 = (0.5 * p.beta).sin().powi(2);
        let (st, ct) = p.theta.sin_cos();
        for ((o, &c), &s) in out.iter_mut().zip(&self.cos).zip(&self.sin) {
            let a = 1.0 + c * c;
            let b = 1.0 + c * ct + s * st;
            *o = match control {
                Control::V0 => -(c2 * a + s2 * b * b),
                Control::Beta => -p.v0 * 0.5 * p.beta.sin() * (b * b - a),
                // sin(x − θ) = s·cosθ − c·sinθ
                Control::Theta => -p.v0 * s2 * 2.0 * b * (s * ct - c * st),
            };
        }
    }
}

/// Extrema of the double well inside one unit cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WellGeometry {
    pub left_min_x: f64,
    pub right_min_x: f64,
    pub left_min_e: f64,
    pub right_min_e: f64,
    pub barrier_x: f64,
    pub barrier_e: f64,
    /// `right_min_e − left_min_e`.
    pub tilt: f64,
    /// `false` when only one minimum exists; the "wells" then coincide.
    pub double_well: bool,
}

const GOLDEN_TOL: f64 = 1e-10;

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let scale = a.abs().max(b.abs()).max(1.0);
    while (b - a).abs() > GOLDEN_TOL * scale {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Locates the minima and the separating barrier of `potential_1d` on
/// `[x_lo, x_hi]` with a coarse scan of `n_scan` points followed by
/// golden-section refinement.
///
/// Minima touching the interval ends are ignored. When fewer than two
/// interior minima exist the geometry is reported as a single well.
pub fn well_geometry(p: &LatticeParams, x_lo: f64, x_hi: f64, n_scan: usize) -> Result<WellGeometry> {
    p.validate()?;
    if !(x_hi > x_lo) || n_scan < 8 {
        return Err(Error::InvalidDomain(format!(
            "bad scan interval [{x_lo}, {x_hi}] with {n_scan} points"
        )));
    }
    let h = (x_hi - x_lo) / (n_scan - 1) as f64;
    let xs: Vec<f64> = (0..n_scan).map(|i| x_lo + i as f64 * h).collect();
    let vs: Vec<f64> = xs.iter().map(|&x| potential_1d(p, x)).collect();
    let v = |x: f64| potential_1d(p, x);
    let neg = |x: f64| -potential_1d(p, x);

    let mut minima: Vec<(f64, f64)> = Vec::new();
    for i in 1..n_scan - 1 {
        if vs[i] < vs[i - 1] && vs[i] <= vs[i + 1] {
            let x = golden_section(v, xs[i - 1], xs[i + 1]);
            minima.push((x, v(x)));
        }
    }
    // Flat potential (V0 = 0) or monotone: fall back to the global minimum.
    if minima.is_empty() {
        let (i, _) = vs
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty scan");
        let x = xs[i];
        return Ok(WellGeometry {
            left_min_x: x,
            right_min_x: x,
            left_min_e: vs[i],
            right_min_e: vs[i],
            barrier_x: x,
            barrier_e: vs[i],
            tilt: 0.0,
            double_well: false,
        });
    }
    if minima.len() == 1 {
        let (x, e) = minima[0];
        return Ok(WellGeometry {
            left_min_x: x,
            right_min_x: x,
            left_min_e: e,
            right_min_e: e,
            barrier_x: x,
            barrier_e: e,
            tilt: 0.0,
            double_well: false,
        });
    }
    // Keep the two deepest minima, ordered by position.
    minima.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (mut left, mut right) = (minima[0], minima[1]);
    if left.0 > right.0 {
        std::mem::swap(&mut left, &mut right);
    }
    // Barrier: highest scan point between the minima, then refine.
    let inside: Vec<usize> = (0..n_scan).filter(|&i| xs[i] > left.0 && xs[i] < right.0).collect();
    let (bx, be) = match inside.iter().max_by(|&&a, &&b| vs[a].total_cmp(&vs[b])) {
        Some(&i) => {
            let a = xs[i.saturating_sub(1)].max(left.0);
            let b = xs[(i + 1).min(n_scan - 1)].min(right.0);
            let x = golden_section(neg, a, b);
            (x, v(x))
        }
        None => {
            let x = 0.5 * (left.0 + right.0);
            (x, v(x))
        }
    };
    Ok(WellGeometry {
        left_min_x: left.0,
        right_min_x: right.0,
        left_min_e: left.1,
        right_min_e: right.1,
        barrier_x: bx,
        barrier_e: be,
        tilt: right.1 - left.1,
        double_well: true,
    })
}

/// [`well_geometry`] over the full extent of a grid.
pub fn well_geometry_on(p: &LatticeParams, grid: &SpatialGrid) -> Result<WellGeometry> {
    well_geometry(p, grid.x_min(), grid.x_max(), grid.n().max(2000) + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reference_values() {
        let p = LatticeParams::new(1.0, 0.0, 0.731).unwrap();
        assert!((potential_2d(&p, 0.0, 0.0) + 2.0).abs() < 1e-15);
        let p = LatticeParams::new(1.0, PI, 0.0).unwrap();
        assert!((potential_2d(&p, 0.0, 0.0) + 4.0).abs() < 1e-15);
    }

    #[test]
    fn generic_point_against_expanded_formula() {
        // β = π/2, θ = π/2, x = π/4, y = 0: cos² = sin² = 1/2,
        // cos²x = 1/2, cos(x − θ) = cos(−π/4) = 1/√2.
        // V = −[½(1 + ½) + ½(1 + 1/√2)²] = −(3/4 + ½(3/2 + √2)) = −(3/2 + √2/2)
        let p = LatticeParams::new(1.0, PI / 2.0, PI / 2.0).unwrap();
        let exact = -(1.5 + 0.5 * 2f64.sqrt());
        assert!((potential_2d(&p, PI / 4.0, 0.0) - exact).abs() < 1e-12);
    }

    #[test]
    fn symmetric_about_half_pi_when_untilted() {
        let p = LatticeParams::new(1.0, PI / 2.0, PI / 2.0).unwrap();
        for k in 0..50 {
            let d = 0.061 * k as f64;
            let a = potential_1d(&p, PI / 2.0 + d);
            let b = potential_1d(&p, PI / 2.0 - d);
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn limiting_lattices() {
        let half = LatticeParams::new(2.5, 0.0, 1.1).unwrap();
        let full = LatticeParams::new(2.5, PI, 0.4).unwrap();
        for k in 0..40 {
            let x = -3.0 + 0.17 * k as f64;
            let expected = -2.5 * (1.0 + x.cos().powi(2));
            assert!((potential_1d(&half, x) - expected).abs() < 1e-13);
            assert!((potential_1d(&half, x + PI) - potential_1d(&half, x)).abs() < 1e-13);
            let expected = -2.5 * (1.0 + (x - 0.4).cos()).powi(2);
            assert!((potential_1d(&full, x) - expected).abs() < 1e-13);
            assert!((potential_1d(&full, x + 2.0 * PI) - potential_1d(&full, x)).abs() < 1e-12);
        }
    }

    #[test]
    fn periodicity_and_theta_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let p = LatticeParams::new(
                rng.random_range(0.0..80.0),
                rng.random_range(0.0..PI),
                rng.random_range(-PI..PI),
            )
            .unwrap();
            let x = rng.random_range(-5.0..5.0);
            let y = rng.random_range(-2.0..2.0);
            let v = potential_2d(&p, x, y);
            let scale = 1e-12 * (1.0 + v.abs());
            assert!((potential_2d(&p, x + 2.0 * PI, y) - v).abs() < scale);
            let q = LatticeParams { theta: p.theta + 2.0 * PI, ..p };
            assert!((potential_2d(&q, x, y) - v).abs() < scale);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        for _ in 0..100 {
            let p = LatticeParams::new(
                rng.random_range(1.0..120.0),
                rng.random_range(0.05..PI - 0.05),
                rng.random_range(-PI..PI),
            )
            .unwrap();
            let x = rng.random_range(-5.0..2.0);
            let g = potential_gradient(&p, x);
            for control in Control::ALL {
                let mut up = p;
                let mut dn = p;
                control.set(&mut up, control.get(&p) + h);
                control.set(&mut dn, control.get(&p) - h);
                let fd = (potential_1d(&up, x) - potential_1d(&dn, x)) / (2.0 * h);
                let an = g.component(control);
                let scale = an.abs().max(1e-3 * p.v0);
                assert!(
                    (fd - an).abs() <= 1e-6 * scale,
                    "{control:?}: fd {fd} analytic {an}"
                );
            }
        }
    }

    #[test]
    fn gradient_identities() {
        let p = LatticeParams::new(37.0, 0.0, 1.3).unwrap();
        for k in 0..30 {
            let x = -4.0 + 0.2 * k as f64;
            let g = potential_gradient(&p, x);
            assert_eq!(g.d_theta, 0.0);
            assert!((g.d_v0 - potential_1d(&p, x) / p.v0).abs() < 1e-14);
        }
    }

    #[test]
    fn table_matches_pointwise_evaluation() {
        let xs: Vec<f64> = (0..64).map(|i| -4.7 + 0.1 * i as f64).collect();
        let table = PotentialTable::new(&xs);
        let p = LatticeParams::new(95.0, 0.3 * PI, -0.47 * PI).unwrap();
        let v = table.values(&p);
        let mut d = vec![0.0; xs.len()];
        for control in Control::ALL {
            table.fill_derivative(&p, control, &mut d);
            for (i, &x) in xs.iter().enumerate() {
                assert!((v[i] - potential_1d(&p, x)).abs() < 1e-12);
                assert!((d[i] - potential_gradient(&p, x).component(control)).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn validation() {
        assert!(LatticeParams::new(-1.0, 0.0, 0.0).is_err());
        assert!(LatticeParams::new(1.0, -0.1, 0.0).is_err());
        assert!(LatticeParams::new(1.0, 1.01 * PI, 0.0).is_err());
        assert!(LatticeParams::from_pi_units(1.0, 1.0, -3.0).is_ok());
    }

    #[test]
    fn untilted_double_well() {
        let p = LatticeParams::new(1.0, 0.0, 0.0).unwrap();
        let g = well_geometry(&p, -PI / 2.0, 1.5 * PI, 2001).unwrap();
        assert!(g.double_well);
        assert!(g.left_min_x.abs() < 1e-6);
        assert!((g.right_min_x - PI).abs() < 1e-6);
        assert!((g.left_min_e + 2.0).abs() < 1e-12);
        assert!((g.right_min_e + 2.0).abs() < 1e-12);
        assert!(g.barrier_e >= g.left_min_e.max(g.right_min_e));
    }

    #[test]
    fn no_tilt_at_half_pi_phase() {
        for beta_over_pi in [0.05, 0.15, 0.25, 0.35] {
            for theta in [-0.5 * PI, 0.5 * PI] {
                let p = LatticeParams::new(40.0, beta_over_pi * PI, theta).unwrap();
                let g = well_geometry(&p, -1.5 * PI, 1.5 * PI, 3001).unwrap();
                assert!(g.double_well, "β/π = {beta_over_pi}");
                assert!(g.tilt.abs() <= 1e-8 * p.v0, "tilt {}", g.tilt);
            }
        }
    }

    #[test]
    fn tilt_against_dense_scan() {
        let p = LatticeParams::from_pi_units(40.0, 0.25, 0.0).unwrap();
        let (lo, hi) = (-PI / 2.0, 1.5 * PI);
        let g = well_geometry(&p, lo, hi, 2001).unwrap();
        // Independent brute force: minimum of each half cell on 10⁶ points.
        let n = 1_000_000;
        let h = (hi - lo) / n as f64;
        let (mut left, mut right) = (f64::INFINITY, f64::INFINITY);
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let v = potential_1d(&p, x);
            if x < PI / 2.0 {
                left = left.min(v);
            } else {
                right = right.min(v);
            }
        }
        assert!((g.tilt - (right - left)).abs() < 1e-6, "{} vs {}", g.tilt, right - left);
        // The deeper well sits at x = 0 for θ = 0.
        assert!(g.tilt > 0.0);
    }

    #[test]
    fn right_well_lowered_by_phase_toward_zero() {
        // On the default cell the wells sit near −π and 0; θ/π slightly above
        // −1/2 makes the well at x = 0 deeper.
        let p = LatticeParams::from_pi_units(100.0, 0.3, -0.474).unwrap();
        let g = well_geometry(&p, -1.5 * PI, 0.5 * PI, 4001).unwrap();
        assert!(g.double_well);
        assert!(g.tilt < 0.0);
        assert!((g.barrier_x + PI / 2.0).abs() < 0.2);
    }

    #[test]
    fn single_well_is_reported_not_failed() {
        let p = LatticeParams::from_pi_units(10.0, 0.5, -0.5).unwrap();
        let g = well_geometry(&p, -1.5 * PI, 0.5 * PI, 2001).unwrap();
        assert!(!g.double_well);
        assert!((g.left_min_x + PI / 2.0).abs() < 1e-6);
    }

    #[test]
    fn barrier_falls_as_beta_rises() {
        let mut last = f64::INFINITY;
        for k in 0..8 {
            let p = LatticeParams::from_pi_units(40.0, 0.04 * k as f64, 0.5).unwrap();
            let g = well_geometry(&p, -PI / 2.0, 1.5 * PI, 4001).unwrap();
            let height = g.barrier_e - g.left_min_e.max(g.right_min_e);
            assert!(height < last, "β/π = {}: {height} !< {last}", 0.04 * k as f64);
            last = height;
        }
    }
}
