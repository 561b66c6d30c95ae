//! Populations, projections, fidelities, parameter scans and comparison with
//! measured populations.

use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::grid::{WaveFn1D, WaveFn2D};
use crate::potential::LatticeParams;
use crate::propagate1d::evolve;
use crate::scenario::{MergeRamp, Transport};
use crate::sequence::ControlSequence;
use crate::spectrum::{assemble_hamiltonian_with, lowest_eigenstates};
use crate::units::UnitSystem;

/// `f_n = |⟨φ_n|ψ⟩|²` for the lowest `count` eigenstates at `params`.
pub fn populations(state: &WaveFn1D, params: &LatticeParams, count: usize) -> Result<Vec<f64>> {
    populations_with(state, params, count, &UnitSystem::default())
}

pub fn populations_with(state: &WaveFn1D, params: &LatticeParams, count: usize, units: &UnitSystem) -> Result<Vec<f64>> {
    let h = assemble_hamiltonian_with(state.grid(), params, units)?;
    lowest_eigenstates(&h, count, None)?
        .iter()
        .map(|p| Ok(p.state.inner(state)?.norm_sqr()))
        .collect()
}

/// `p_n(t) = |⟨φ_n(t)|ψ(t)⟩|²` with the instantaneous eigenstates `φ_n(t)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionTrace {
    pub times: Vec<f64>,
    /// `p[i][n]` at `times[i]`.
    pub p: Vec<Vec<f64>>,
}

impl ProjectionTrace {
    /// Tabular text `t_ms p0 p1 ...`.
    pub fn to_table(&self) -> String {
        let count = self.p.first().map_or(0, Vec::len);
        let mut out = String::from("t_ms");
        for n in 0..count {
            let _ = write!(out, " p{n}");
        }
        out.push('\n');
        for (t, row) in self.times.iter().zip(&self.p) {
            let _ = write!(out, "{t:.10e}");
            for v in row {
                let _ = write!(out, " {v:.12e}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn projection_trace(
    seq: &ControlSequence,
    psi0: &WaveFn1D,
    record_times: &[f64],
    count: usize,
    units: &UnitSystem,
) -> Result<ProjectionTrace> {
    let run = evolve(psi0, seq, units, record_times)?;
    let p = run
        .trajectory
        .par_iter()
        .map(|(t, psi)| populations_with(psi, &seq.sample(*t)?, count, units))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProjectionTrace { times: run.trajectory.iter().map(|(t, _)| *t).collect(), p })
}

/// `|⟨target|final⟩|²` with the `dx²` measure.
pub fn two_particle_fidelity(final_state: &WaveFn2D, target: &WaveFn2D) -> Result<f64> {
    Ok(target.inner(final_state)?.norm_sqr())
}

/// Fidelity of the symmetrized product evolution with the target
/// `sym(φ₀, φ₁)`, from the single-particle final states:
/// `F = |⟨φ₀|ψ_L⟩⟨φ₁|ψ_R⟩ + ⟨φ₁|ψ_L⟩⟨φ₀|ψ_R⟩|²`.
pub fn product_fidelity(final_l: &WaveFn1D, final_r: &WaveFn1D, phi0: &WaveFn1D, phi1: &WaveFn1D) -> Result<f64> {
    let a: Complex64 = phi0.inner(final_l)? * phi1.inner(final_r)?;
    let b: Complex64 = phi1.inner(final_l)? * phi0.inner(final_r)?;
    Ok((a + b).norm_sqr())
}

/// Observables of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FidelityReport {
    /// `f_n^L`, `f_n^R`.
    pub f_l: Vec<f64>,
    pub f_r: Vec<f64>,
    pub p_trace: Option<ProjectionTrace>,
    /// Non-interacting two-particle fidelity.
    pub big_f: Option<f64>,
    pub f_int: Option<f64>,
}

impl FidelityReport {
    /// JSON object with keys `f`, `p_trace`, `F`, `F_int`.
    pub fn to_json(&self) -> Value {
        json!({
            "f": { "L": self.f_l, "R": self.f_r },
            "p_trace": self.p_trace.as_ref().map(|t| json!({ "t_ms": t.times, "p": t.p })),
            "F": self.big_f,
            "F_int": self.f_int,
        })
    }
}

/// Well in which the atom starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Well {
    Left,
    Right,
}

impl Well {
    pub fn label(self) -> &'static str {
        match self {
            Well::Left => "L",
            Well::Right => "R",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanPoint {
    pub value: f64,
    /// `f_n^α`, `n = 0..count`.
    pub populations: Vec<f64>,
}

/// Populations across a scan. Values are strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanResult {
    /// Name of the scan variable, e.g. `T_ms`.
    pub variable: String,
    pub well: Well,
    pub points: Vec<ScanPoint>,
}

impl ScanResult {
    pub fn new(variable: impl Into<String>, well: Well, points: Vec<ScanPoint>) -> Result<Self> {
        if points.windows(2).any(|w| !(w[1].value > w[0].value)) {
            return Err(Error::MismatchedPoints("scan values must be strictly increasing".into()));
        }
        let count = points.first().map_or(0, |p| p.populations.len());
        if points.iter().any(|p| p.populations.len() != count) {
            return Err(Error::MismatchedPoints("ragged population table".into()));
        }
        Ok(Self { variable: variable.into(), well, points })
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    /// Population of level `n` at each point.
    pub fn level(&self, n: usize) -> Vec<f64> {
        self.points.iter().map(|p| p.populations[n]).collect()
    }

    /// Scan point where level `n` is largest.
    pub fn argmax(&self, n: usize) -> Option<(f64, f64)> {
        self.points
            .iter()
            .map(|p| (p.value, p.populations[n]))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// Tabular text `<variable> f0 f1 ...`.
    pub fn to_table(&self) -> String {
        let count = self.points.first().map_or(0, |p| p.populations.len());
        let mut out = self.variable.clone();
        for n in 0..count {
            let _ = write!(out, " f{n}");
        }
        out.push('\n');
        for p in &self.points {
            let _ = write!(out, "{:.10e}", p.value);
            for v in &p.populations {
                let _ = write!(out, " {v:.12e}");
            }
            out.push('\n');
        }
        out
    }

    /// Reads the format of [`ScanResult::to_table`]; also used for measured
    /// data.
    pub fn from_table(text: &str, well: Well) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::Parse("empty scan table".into()))?;
        let variable = header.split_whitespace().next().unwrap_or("value").to_string();
        let mut points = Vec::new();
        for (k, line) in lines.enumerate() {
            let nums = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("row {}: {e}", k + 1))))
                .collect::<Result<Vec<f64>>>()?;
            if nums.len() < 2 {
                return Err(Error::Parse(format!("row {}: need a value and at least one population", k + 1)));
            }
            points.push(ScanPoint { value: nums[0], populations: nums[1..].to_vec() });
        }
        Self::new(variable, well, points)
    }

    /// JSON object with keys `f` and `argmax` (of level `n`).
    pub fn to_json(&self, n: usize) -> Value {
        json!({
            "variable": self.variable,
            "well": self.well.label(),
            "values": self.values(),
            "f": self.points.iter().map(|p| &p.populations).collect::<Vec<_>>(),
            "argmax": self.argmax(n).map(|(v, f)| json!({ "level": n, "value": v, "f": f })),
        })
    }
}

fn scan<F>(variable: &str, values: &[f64], well: Well, point: F) -> Result<ScanResult>
where
    F: Fn(f64) -> Result<Vec<f64>> + Sync,
{
    let points = values
        .par_iter()
        .map(|&v| Ok(ScanPoint { value: v, populations: point(v)? }))
        .collect::<Result<Vec<_>>>()?;
    ScanResult::new(variable, well, points)
}

fn start_state(tr: &Transport, well: Well) -> &WaveFn1D {
    match well {
        Well::Left => &tr.psi_l,
        Well::Right => &tr.psi_r,
    }
}

/// Populations after ramps of each duration.
pub fn scan_duration(
    tr: &Transport,
    ramp: &MergeRamp,
    durations: &[f64],
    n_t: usize,
    well: Well,
    count: usize,
) -> Result<ScanResult> {
    let psi0 = start_state(tr, well);
    scan("T_ms", durations, well, |t| {
        let seq = ramp.sequence(t, n_t)?;
        let run = evolve(psi0, &seq, &tr.units, &[])?;
        populations_with(&run.final_state, &seq.last(), count, &tr.units)
    })
}

/// Populations after ramps of fixed duration at each tilt `θ_b/π`. The model
/// is evaluated at `θ_b/π + offset` and reported at `θ_b/π`.
#[allow(clippy::too_many_arguments)]
pub fn scan_theta(
    tr: &Transport,
    ramp: &MergeRamp,
    duration: f64,
    thetas_over_pi: &[f64],
    offset_over_pi: f64,
    n_t: usize,
    well: Well,
    count: usize,
) -> Result<ScanResult> {
    let psi0 = start_state(tr, well);
    scan("theta_b_over_pi", thetas_over_pi, well, |th| {
        let r = MergeRamp { theta_over_pi: th + offset_over_pi, ..*ramp };
        let seq = r.sequence(duration, n_t)?;
        let run = evolve(psi0, &seq, &tr.units, &[])?;
        populations_with(&run.final_state, &seq.last(), count, &tr.units)
    })
}

/// Root-mean-square population difference over all points and levels.
pub fn rms_deviation(model: &ScanResult, data: &ScanResult) -> Result<f64> {
    if model.points.len() != data.points.len() || model.points.is_empty() {
        return Err(Error::MismatchedPoints(format!(
            "{} model points vs {} data points",
            model.points.len(),
            data.points.len()
        )));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (m, d) in model.points.iter().zip(&data.points) {
        if (m.value - d.value).abs() > 1e-9 * m.value.abs().max(1.0) {
            return Err(Error::MismatchedPoints(format!("model value {} vs data value {}", m.value, d.value)));
        }
        if m.populations.len() < d.populations.len() {
            return Err(Error::MismatchedPoints(format!(
                "data has {} levels, model only {}",
                d.populations.len(),
                m.populations.len()
            )));
        }
        for (a, b) in m.populations.iter().zip(&d.populations) {
            sum += (a - b).powi(2);
            n += 1;
        }
    }
    Ok((sum / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OffsetFit {
    pub offsets_over_pi: Vec<f64>,
    pub rms: Vec<f64>,
    pub best_offset_over_pi: f64,
    pub best_rms: f64,
}

/// Tilt offset `Δθ/π` from `offsets` that brings the tilt scan closest to
/// `data`.
pub fn fit_theta_offset(
    tr: &Transport,
    ramp: &MergeRamp,
    duration: f64,
    data: &ScanResult,
    offsets_over_pi: &[f64],
    n_t: usize,
) -> Result<OffsetFit> {
    let count = data.points.first().map_or(0, |p| p.populations.len());
    let values = data.values();
    let rms = offsets_over_pi
        .iter()
        .map(|&off| {
            let model = scan_theta(tr, ramp, duration, &values, off, n_t, data.well, count)?;
            rms_deviation(&model, data)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (k, &best_rms) = rms
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::MismatchedPoints("no offsets given".into()))?;
    Ok(OffsetFit { offsets_over_pi: offsets_over_pi.to_vec(), rms: rms.clone(), best_offset_over_pi: offsets_over_pi[k], best_rms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpatialGrid;
    use crate::potential::well_geometry_on;
    use crate::scenario::default_transport;
    use crate::spectrum::{assemble_hamiltonian, localized_states};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn params(v0: f64, b: f64, t: f64) -> LatticeParams {
        LatticeParams::from_pi_units(v0, b, t).unwrap()
    }

    #[test]
    fn eigenstate_has_unit_population() {
        let grid = SpatialGrid::unit_cell(300).unwrap();
        let p = params(100.0, 0.7, -0.474);
        let phi = lowest_eigenstates(&assemble_hamiltonian(&grid, &p).unwrap(), 2, None).unwrap();
        let f = populations(&phi[1].state, &p, 4).unwrap();
        assert!((f[1] - 1.0).abs() < 1e-10);
        for n in [0, 2, 3] {
            assert!(f[n] < 1e-12);
        }
    }

    #[test]
    fn bound_populations_sum_to_one() {
        let tr = default_transport(300).unwrap();
        let seq = MergeRamp::default().sequence(0.15, 1500).unwrap();
        let out = tr.evaluate(&seq, 10).unwrap();
        for f in [&out.f_l, &out.f_r] {
            let s: f64 = f.iter().sum();
            assert!((s - 1.0).abs() < 1e-6, "{s}");
        }
    }

    #[test]
    fn doublet_projection_starts_half_half() {
        let grid = SpatialGrid::unit_cell(300).unwrap();
        let p = params(100.0, 0.0, -0.474);
        let pairs = lowest_eigenstates(&assemble_hamiltonian(&grid, &p).unwrap(), 2, None).unwrap();
        let geo = well_geometry_on(&p, &grid).unwrap();
        let (l, _) = localized_states(&pairs[0], &pairs[1], geo.barrier_x).unwrap();
        let seq = MergeRamp::default().sequence(0.15, 600).unwrap();
        let tr = projection_trace(&seq, &l, &[0.0, 0.15], 3, &UnitSystem::default()).unwrap();
        assert!((tr.p[0][0] - 0.5).abs() < 1e-6);
        assert!((tr.p[0][1] - 0.5).abs() < 1e-6);
        // The last projection equals the final populations.
        let run = evolve(&l, &seq, &UnitSystem::default(), &[]).unwrap();
        let f = populations(&run.final_state, &seq.last(), 3).unwrap();
        for n in 0..3 {
            assert!((tr.p[1][n] - f[n]).abs() < 1e-10);
        }
    }

    #[test]
    fn slow_ramp_keeps_projections() {
        // Eigenstates of an already tilted double well, followed slowly, stay
        // in their levels.
        let grid = SpatialGrid::unit_cell(300).unwrap();
        let ramp = MergeRamp { beta_start_over_pi: 0.1, ..MergeRamp::default() };
        let start = ramp.start().unwrap();
        let phi = lowest_eigenstates(&assemble_hamiltonian(&grid, &start).unwrap(), 2, None).unwrap();
        let seq = ramp.sequence(5.0, 20000).unwrap();
        let times: Vec<f64> = (0..=10).map(|k| 0.5 * k as f64).collect();
        for (n, pair) in phi.iter().enumerate() {
            let tr = projection_trace(&seq, &pair.state, &times, 3, &UnitSystem::default()).unwrap();
            assert!((tr.p[0][n] - 1.0).abs() < 1e-10);
            let worst = tr.p.iter().map(|row| (row[n] - tr.p[0][n]).abs()).fold(0.0, f64::max);
            assert!(worst < 0.05, "level {n}: {worst}");
            assert!(tr.to_table().starts_with("t_ms p0 p1 p2\n"));
        }
    }

    #[test]
    fn two_particle_fidelity_of_identical_states() {
        let grid = SpatialGrid::unit_cell(40).unwrap();
        let a = WaveFn1D::from_fn(grid, |x| Complex64::new((-(x + 2.0).powi(2)).exp(), 0.0)).unwrap();
        let b = WaveFn1D::from_fn(grid, |x| Complex64::new(x * (-(x * x)).exp(), 0.0)).unwrap();
        let s = WaveFn2D::symmetrized(&a, &b).unwrap();
        assert!((two_particle_fidelity(&s, &s).unwrap() - 1.0).abs() < 1e-12);
    }

    fn synthetic_scan(values: &[f64], f: impl Fn(f64) -> Vec<f64>) -> ScanResult {
        ScanResult::new("theta_b_over_pi", Well::Left, values.iter().map(|&v| ScanPoint { value: v, populations: f(v) }).collect()).unwrap()
    }

    #[test]
    fn rms_is_zero_for_identical_scans_and_errors_on_mismatch() {
        let v = [0.1, 0.2, 0.3];
        let a = synthetic_scan(&v, |x| vec![x, 1.0 - x]);
        assert_eq!(rms_deviation(&a, &a).unwrap(), 0.0);
        let b = synthetic_scan(&[0.1, 0.2, 0.35], |x| vec![x, 1.0 - x]);
        assert!(matches!(rms_deviation(&a, &b), Err(Error::MismatchedPoints(_))));
        let c = synthetic_scan(&[0.1, 0.2], |x| vec![x, 1.0 - x]);
        assert!(matches!(rms_deviation(&a, &c), Err(Error::MismatchedPoints(_))));
    }

    #[test]
    fn rms_recovers_injected_noise() {
        let values: Vec<f64> = (0..40).map(|k| k as f64 * 0.01).collect();
        let model = synthetic_scan(&values, |x| vec![x, 0.5 * x, 1.0 - x]);
        let sigma = 0.03;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = Normal::new(0.0, sigma).unwrap();
        let noisy = synthetic_scan(&values, |x| vec![x, 0.5 * x, 1.0 - x])
            .points
            .into_iter()
            .map(|p| ScanPoint { value: p.value, populations: p.populations.iter().map(|f| f + normal.sample(&mut rng)).collect() })
            .collect();
        let data = ScanResult::new("theta_b_over_pi", Well::Left, noisy).unwrap();
        let rms = rms_deviation(&model, &data).unwrap();
        assert!((rms - sigma).abs() < 0.2 * sigma, "{rms}");
    }

    #[test]
    fn scan_values_must_increase() {
        let pts = vec![
            ScanPoint { value: 0.2, populations: vec![0.0] },
            ScanPoint { value: 0.1, populations: vec![0.0] },
        ];
        assert!(ScanResult::new("T_ms", Well::Left, pts).is_err());
    }

    #[test]
    fn table_round_trip() {
        let s = synthetic_scan(&[-0.48, -0.47], |x| vec![x.abs(), 0.25]);
        let back = ScanResult::from_table(&s.to_table(), Well::Left).unwrap();
        assert_eq!(back.variable, "theta_b_over_pi");
        for (a, b) in s.points.iter().zip(&back.points) {
            assert!((a.value - b.value).abs() < 1e-9);
        }
    }

    #[test]
    fn offset_fit_recovers_known_shift() {
        let tr = crate::scenario::Transport::for_ramp(&MergeRamp::default(), 200).unwrap();
        let ramp = MergeRamp::default();
        let thetas: Vec<f64> = (0..7).map(|k| -0.49 + 0.005 * k as f64).collect();
        let truth = 0.01;
        let data = scan_theta(&tr, &ramp, 0.5, &thetas, truth, 1500, Well::Left, 3).unwrap();
        let offsets: Vec<f64> = (-4..=4).map(|k| 0.005 * k as f64).collect();
        let fit = fit_theta_offset(&tr, &ramp, 0.5, &data, &offsets, 1500).unwrap();
        assert!((fit.best_offset_over_pi - truth).abs() <= 0.005 + 1e-12, "{fit:?}");
        assert!(fit.best_rms < 1e-12);
    }

    #[test]
    fn report_json_keys() {
        let r = FidelityReport { f_l: vec![0.1, 0.9], f_r: vec![0.8, 0.2], big_f: Some(0.7), ..Default::default() };
        let j = r.to_json();
        for k in ["f", "p_trace", "F", "F_int"] {
            assert!(j.get(k).is_some(), "{k}");
        }
    }
}
