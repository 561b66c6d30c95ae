//! Krotov-type optimization of control sequences.
//!
//! One iteration
//!
//! 1. takes the costates `χ_k(T) = ⟨φ_k|ψ_k(T)⟩·φ_k` and propagates them
//!    backwards to `t = 0` under the current controls;
//! 2. sweeps forward, carrying `χ_k` forward again under the old controls
//!    (the propagator is exactly reversible) and `ψ_k` under the updated
//!    controls, while each sample is moved by
//!    `Δu(t_j) = s(t_j)/λ · Σ_k Im⟨χ_k(t_{j−1})|∂H/∂u|ψ_k(t_{j−1})⟩`
//!    with `s(t) = sin²(πt/T)`.
//!
//! The update of sample `j` uses the states at `t_{j−1}`, which is what makes
//! the sweep explicit: the slice `t_{j−1} → t_j` is fully known before `ψ`
//! crosses it, so `ψ_k(T)` is exactly the evolution under the new sequence. A
//! sweep whose summed fidelity falls by more than the slack is discarded and
//! repeated with `λ` doubled.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{WaveFn1D, WaveFn2D};
use crate::potential::{Control, LatticeParams};
use crate::propagate1d::Propagator1D;
use crate::propagate2d::{InteractionParams, Propagator2D};
use crate::sequence::ControlSequence;
use crate::units::UnitSystem;

/// Tolerated decrease of the summed fidelity in an accepted iteration.
pub const MONOTONICITY_SLACK: f64 = 1e-9;

/// Backtracking gives up once `λ` has grown by this factor in one iteration.
const MAX_BACKTRACK: f64 = 1e12;

/// A system whose states can be propagated slice by slice and whose
/// Hamiltonian derivatives with respect to the controls are known.
pub trait Dynamics {
    /// Sets up the slice from `p_from` to `p_to` over `dt` (negative `dt`
    /// propagates backwards).
    fn prepare(&mut self, p_from: &LatticeParams, p_to: &LatticeParams, dt: f64) -> Result<()>;
    /// Applies the prepared slice in place.
    fn apply(&mut self, amps: &mut [Complex64]);
    /// `⟨a|b⟩` with the mesh measure.
    fn inner(&self, a: &[Complex64], b: &[Complex64]) -> Complex64;
    /// `⟨χ|∂H/∂u|ψ⟩` at parameters `p`.
    fn derivative_overlap(&mut self, p: &LatticeParams, control: Control, chi: &[Complex64], psi: &[Complex64]) -> Complex64;
}

/// Single-particle dynamics with scratch space for `∂V/∂u`.
pub struct SingleParticle {
    prop: Propagator1D,
    dv: Vec<f64>,
}

impl SingleParticle {
    pub fn new(prop: Propagator1D) -> Self {
        let n = prop.grid().len();
        Self { prop, dv: vec![0.0; n] }
    }
}

impl Dynamics for SingleParticle {
    fn prepare(&mut self, p_from: &LatticeParams, p_to: &LatticeParams, dt: f64) -> Result<()> {
        self.prop.prepare(p_from, p_to, dt)
    }

    fn apply(&mut self, amps: &mut [Complex64]) {
        self.prop.apply(amps)
    }

    fn inner(&self, a: &[Complex64], b: &[Complex64]) -> Complex64 {
        a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<Complex64>() * self.prop.grid().dx()
    }

    fn derivative_overlap(&mut self, p: &LatticeParams, control: Control, chi: &[Complex64], psi: &[Complex64]) -> Complex64 {
        self.prop.table().fill_derivative(p, control, &mut self.dv);
        let s: Complex64 = chi.iter().zip(psi).zip(&self.dv).map(|((c, q), d)| c.conj() * q * d).sum();
        s * self.prop.grid().dx()
    }
}

/// Two-particle dynamics; `∂H₂/∂u = ∂V/∂u(x₁) + ∂V/∂u(x₂)`.
pub struct TwoParticle {
    prop: Propagator2D,
    dv: Vec<f64>,
}

impl TwoParticle {
    pub fn new(prop: Propagator2D) -> Self {
        let n = prop.grid().len();
        Self { prop, dv: vec![0.0; n] }
    }
}

impl Dynamics for TwoParticle {
    fn prepare(&mut self, p_from: &LatticeParams, p_to: &LatticeParams, dt: f64) -> Result<()> {
        self.prop.prepare(p_from, p_to, dt)
    }

    fn apply(&mut self, amps: &mut [Complex64]) {
        self.prop.apply(amps)
    }

    fn inner(&self, a: &[Complex64], b: &[Complex64]) -> Complex64 {
        let dx = self.prop.grid().dx();
        a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<Complex64>() * (dx * dx)
    }

    fn derivative_overlap(&mut self, p: &LatticeParams, control: Control, chi: &[Complex64], psi: &[Complex64]) -> Complex64 {
        let m = self.dv.len();
        let dx = self.prop.grid().dx();
        self.prop.table().fill_derivative(p, control, &mut self.dv);
        let mut s = Complex64::new(0.0, 0.0);
        for i in 0..m {
            let row_c = &chi[i * m..(i + 1) * m];
            let row_p = &psi[i * m..(i + 1) * m];
            let di = self.dv[i];
            for j in 0..m {
                s += row_c[j].conj() * row_p[j] * (di + self.dv[j]);
            }
        }
        s * (dx * dx)
    }
}

/// Step weights `λ` per control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepWeights {
    pub v0: f64,
    pub beta: f64,
    pub theta: f64,
}

impl StepWeights {
    pub fn get(&self, c: Control) -> f64 {
        match c {
            Control::V0 => self.v0,
            Control::Beta => self.beta,
            Control::Theta => self.theta,
        }
    }
}

impl Default for StepWeights {
    fn default() -> Self {
        Self { v0: 1.0, beta: 100.0, theta: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrotovSettings {
    pub active_controls: Vec<Control>,
    pub step_weights: StepWeights,
    pub max_iterations: usize,
    /// Stop once every objective reaches this fidelity.
    pub stop_fidelity: f64,
    /// After an accepted iteration `λ` is divided by this factor (≥ 1), but
    /// never below the configured weights.
    pub lambda_relax: f64,
}

impl Default for KrotovSettings {
    fn default() -> Self {
        Self {
            active_controls: vec![Control::Beta, Control::Theta],
            step_weights: StepWeights::default(),
            max_iterations: 2000,
            stop_fidelity: 0.99,
            lambda_relax: 1.5,
        }
    }
}

/// A state-to-state transfer `initial → target`.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective<S> {
    pub label: String,
    pub initial: S,
    pub target: S,
}

impl<S> Objective<S> {
    pub fn new(label: impl Into<String>, initial: S, target: S) -> Self {
        Self { label: label.into(), initial, target }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlProblem<S> {
    pub objectives: Vec<Objective<S>>,
    pub seq0: ControlSequence,
    pub settings: KrotovSettings,
    pub units: UnitSystem,
}

impl<S> ControlProblem<S> {
    pub fn new(objectives: Vec<Objective<S>>, seq0: ControlSequence, settings: KrotovSettings) -> Self {
        Self { objectives, seq0, settings, units: UnitSystem::default() }
    }

    fn validate_settings(&self) -> Result<()> {
        let s = &self.settings;
        if self.objectives.is_empty() {
            return Err(Error::InvalidProblem("no objectives".into()));
        }
        if s.active_controls.is_empty() {
            return Err(Error::InvalidProblem("no active controls".into()));
        }
        for &c in &s.active_controls {
            let w = s.step_weights.get(c);
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidProblem(format!("step weight for {} must be > 0, got {w}", c.name())));
            }
        }
        if !(s.lambda_relax.is_finite() && s.lambda_relax >= 1.0) {
            return Err(Error::InvalidProblem(format!("lambda_relax must be ≥ 1, got {}", s.lambda_relax)));
        }
        if !(s.stop_fidelity.is_finite() && s.stop_fidelity > 0.0) {
            return Err(Error::InvalidProblem(format!("stop_fidelity must be > 0, got {}", s.stop_fidelity)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub fidelities: Vec<f64>,
    /// Sum of the objective fidelities.
    pub combined: f64,
    /// `λ` relative to the configured weights for this iteration.
    pub lambda_scale: f64,
    /// Sweeps discarded before this one was accepted.
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizationTrace {
    pub labels: Vec<String>,
    /// Record 0 holds the guess.
    pub records: Vec<IterationRecord>,
    #[serde(skip)]
    pub final_sequence: ControlSequence,
    /// Whether every objective reached the stop fidelity.
    pub converged: bool,
}

impl OptimizationTrace {
    pub fn initial(&self) -> &IterationRecord {
        &self.records[0]
    }

    pub fn last(&self) -> &IterationRecord {
        self.records.last().expect("trace holds the guess")
    }

    /// Whether the combined fidelity never fell by more than the slack.
    pub fn is_monotone(&self) -> bool {
        self.records.windows(2).all(|w| w[1].combined >= w[0].combined - MONOTONICITY_SLACK)
    }

    /// `iter fidelity_<label>... fidelity_combined`.
    pub fn to_table(&self) -> String {
        let mut out = String::from("iter");
        for l in &self.labels {
            let _ = write!(out, " fidelity_{l}");
        }
        out.push_str(" fidelity_combined\n");
        for r in &self.records {
            let _ = write!(out, "{}", r.iteration);
            for f in &r.fidelities {
                let _ = write!(out, " {f:.12e}");
            }
            let _ = writeln!(out, " {:.12e}", r.combined);
        }
        out
    }
}

/// Update envelope `sin²(πt/T)`.
pub fn envelope(t: f64, duration: f64) -> f64 {
    (PI * t / duration).sin().powi(2)
}

fn forward<D: Dynamics>(dyn_: &mut D, samples: &[LatticeParams], dt: f64, states: &mut [Vec<Complex64>]) -> Result<()> {
    for w in samples.windows(2) {
        dyn_.prepare(&w[0], &w[1], dt)?;
        for s in states.iter_mut() {
            dyn_.apply(s);
        }
    }
    Ok(())
}

fn backward<D: Dynamics>(dyn_: &mut D, samples: &[LatticeParams], dt: f64, states: &mut [Vec<Complex64>]) -> Result<()> {
    for w in samples.windows(2).rev() {
        dyn_.prepare(&w[0], &w[1], -dt)?;
        for s in states.iter_mut() {
            dyn_.apply(s);
        }
    }
    Ok(())
}

fn overlaps<D: Dynamics>(dyn_: &D, targets: &[Vec<Complex64>], finals: &[Vec<Complex64>]) -> Vec<Complex64> {
    targets.iter().zip(finals).map(|(t, f)| dyn_.inner(t, f)).collect()
}

struct Sweep {
    samples: Vec<LatticeParams>,
    finals: Vec<Vec<Complex64>>,
    max_update: f64,
}

/// One forward sweep with updates; `chi` holds the costates at `t = 0`.
fn sweep<D: Dynamics>(
    dyn_: &mut D,
    old: &[LatticeParams],
    duration: f64,
    initial: &[Vec<Complex64>],
    mut chi: Vec<Vec<Complex64>>,
    controls: &[Control],
    weights: &StepWeights,
    scale: f64,
) -> Result<Sweep> {
    let n_t = old.len() - 1;
    let dt = duration / n_t as f64;
    let mut psi: Vec<Vec<Complex64>> = initial.to_vec();
    let mut samples = old.to_vec();
    let mut max_update: f64 = 0.0;
    for j in 0..n_t {
        // Update sample j + 1 from the states at t_j.
        let s = envelope((j + 1) as f64 * dt, duration);
        let mut next = old[j + 1];
        if s > 0.0 {
            let here = samples[j];
            for &c in controls {
                let g: f64 = psi
                    .iter()
                    .zip(&chi)
                    .map(|(p, x)| dyn_.derivative_overlap(&here, c, x, p).im)
                    .sum();
                let delta = s * g / (weights.get(c) * scale);
                max_update = max_update.max(delta.abs());
                let v = c.get(&next) + delta;
                c.set(&mut next, v);
            }
            next = next.clamped();
        }
        samples[j + 1] = next;
        dyn_.prepare(&old[j], &old[j + 1], dt)?;
        for x in chi.iter_mut() {
            dyn_.apply(x);
        }
        dyn_.prepare(&samples[j], &samples[j + 1], dt)?;
        for p in psi.iter_mut() {
            dyn_.apply(p);
        }
    }
    Ok(Sweep { samples, finals: psi, max_update })
}

fn run<D: Dynamics>(
    dyn_: &mut D,
    labels: Vec<String>,
    initial: Vec<Vec<Complex64>>,
    targets: Vec<Vec<Complex64>>,
    seq0: &ControlSequence,
    settings: &KrotovSettings,
) -> Result<OptimizationTrace> {
    let duration = seq0.duration();
    let dt = seq0.dt();
    let mut samples = seq0.samples().to_vec();
    let mut finals = initial.clone();
    forward(dyn_, &samples, dt, &mut finals)?;
    let mut tau = overlaps(dyn_, &targets, &finals);
    let fid = |tau: &[Complex64]| -> Vec<f64> { tau.iter().map(|t| t.norm_sqr()).collect() };
    let mut f = fid(&tau);
    let mut records = vec![IterationRecord {
        iteration: 0,
        combined: f.iter().sum(),
        fidelities: f.clone(),
        lambda_scale: 1.0,
        rejected: 0,
    }];
    let reached = |f: &[f64]| f.iter().all(|&x| x >= settings.stop_fidelity);
    let mut scale = 1.0;
    let mut iteration = 0;
    while iteration < settings.max_iterations && !reached(&f) {
        iteration += 1;
        let mut chi0: Vec<Vec<Complex64>> = targets
            .iter()
            .zip(&tau)
            .map(|(t, &c)| t.iter().map(|v| v * c).collect())
            .collect();
        backward(dyn_, &samples, dt, &mut chi0)?;
        let old_sum: f64 = f.iter().sum();
        let mut rejected = 0;
        let accepted = loop {
            let s = sweep(dyn_, &samples, duration, &initial, chi0.clone(), &settings.active_controls, &settings.step_weights, scale)?;
            let new_tau = overlaps(dyn_, &targets, &s.finals);
            let new_f = fid(&new_tau);
            if new_f.iter().sum::<f64>() >= old_sum - MONOTONICITY_SLACK {
                break Some((s, new_tau, new_f));
            }
            rejected += 1;
            scale *= 2.0;
            if scale > MAX_BACKTRACK || s.max_update == 0.0 {
                break None;
            }
        };
        let Some((s, new_tau, new_f)) = accepted else {
            break;
        };
        samples = s.samples;
        finals = s.finals;
        tau = new_tau;
        f = new_f;
        records.push(IterationRecord {
            iteration,
            combined: f.iter().sum(),
            fidelities: f.clone(),
            lambda_scale: scale,
            rejected,
        });
        scale = (scale / settings.lambda_relax).max(1.0);
        if s.max_update == 0.0 {
            break;
        }
    }
    let _ = finals;
    Ok(OptimizationTrace {
        labels,
        converged: reached(&f),
        records,
        final_sequence: ControlSequence::new(duration, samples)?,
    })
}

fn check_normalized(norm: f64, what: &str) -> Result<()> {
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidProblem(format!("{what} has norm² {norm}, expected 1")));
    }
    Ok(())
}

/// Optimizes single-particle transfers.
pub fn optimize(problem: &ControlProblem<WaveFn1D>) -> Result<OptimizationTrace> {
    problem.validate_settings()?;
    let grid = *problem.objectives[0].initial.grid();
    let mut labels = Vec::new();
    let mut initial = Vec::new();
    let mut targets = Vec::new();
    for o in &problem.objectives {
        if o.initial.grid() != &grid || o.target.grid() != &grid {
            return Err(Error::GridMismatch);
        }
        check_normalized(o.initial.norm_sqr(), "initial state")?;
        check_normalized(o.target.norm_sqr(), "target state")?;
        labels.push(o.label.clone());
        initial.push(o.initial.amplitudes().to_vec());
        targets.push(o.target.amplitudes().to_vec());
    }
    let mut dyn_ = SingleParticle::new(Propagator1D::new(grid, &problem.units));
    run(&mut dyn_, labels, initial, targets, &problem.seq0, &problem.settings)
}

/// Optimizes two-particle transfers including the contact interaction.
pub fn optimize_with_interactions(problem: &ControlProblem<WaveFn2D>, ip: &InteractionParams) -> Result<OptimizationTrace> {
    problem.validate_settings()?;
    ip.validate()?;
    let grid = *problem.objectives[0].initial.grid();
    let mut labels = Vec::new();
    let mut initial = Vec::new();
    let mut targets = Vec::new();
    for o in &problem.objectives {
        if o.initial.grid() != &grid || o.target.grid() != &grid {
            return Err(Error::GridMismatch);
        }
        check_normalized(o.initial.norm_sqr(), "initial state")?;
        check_normalized(o.target.norm_sqr(), "target state")?;
        labels.push(o.label.clone());
        initial.push(o.initial.amplitudes().to_vec());
        targets.push(o.target.amplitudes().to_vec());
    }
    let mut dyn_ = TwoParticle::new(Propagator2D::new(grid, ip, &problem.units));
    run(&mut dyn_, labels, initial, targets, &problem.seq0, &problem.settings)
}

/// Fidelities `|⟨target|U(T)|initial⟩|²` of the objectives under `seq`.
pub fn objective_fidelities(problem: &ControlProblem<WaveFn1D>, seq: &ControlSequence) -> Result<Vec<f64>> {
    let grid = *problem.objectives[0].initial.grid();
    let mut dyn_ = SingleParticle::new(Propagator1D::new(grid, &problem.units));
    let mut states: Vec<Vec<Complex64>> = problem.objectives.iter().map(|o| o.initial.amplitudes().to_vec()).collect();
    forward(&mut dyn_, seq.samples(), seq.dt(), &mut states)?;
    Ok(problem
        .objectives
        .iter()
        .zip(&states)
        .map(|(o, s)| dyn_.inner(o.target.amplitudes(), s).norm_sqr())
        .collect())
}

/// `∂(Σ_k F_k)/∂u(t_j)` for every sample, from the update direction:
/// `4π·w_j·Σ_k Im⟨χ_k(t_j)|∂H/∂u|ψ_k(t_j)⟩` with trapezoid weights `w_j`.
pub fn fidelity_gradient(problem: &ControlProblem<WaveFn1D>, control: Control) -> Result<Vec<f64>> {
    let seq = &problem.seq0;
    let grid = *problem.objectives[0].initial.grid();
    let mut dyn_ = SingleParticle::new(Propagator1D::new(grid, &problem.units));
    let initial: Vec<Vec<Complex64>> = problem.objectives.iter().map(|o| o.initial.amplitudes().to_vec()).collect();
    let targets: Vec<Vec<Complex64>> = problem.objectives.iter().map(|o| o.target.amplitudes().to_vec()).collect();
    let samples = seq.samples();
    let dt = seq.dt();
    let mut finals = initial.clone();
    forward(&mut dyn_, samples, dt, &mut finals)?;
    let tau = overlaps(&dyn_, &targets, &finals);
    let mut chi: Vec<Vec<Complex64>> = targets
        .iter()
        .zip(&tau)
        .map(|(t, &c)| t.iter().map(|v| v * c).collect())
        .collect();
    backward(&mut dyn_, samples, dt, &mut chi)?;
    let mut psi = initial;
    let n_t = seq.n_t();
    let mut grad = vec![0.0; n_t + 1];
    for j in 0..=n_t {
        let g: f64 = psi
            .iter()
            .zip(&chi)
            .map(|(p, x)| dyn_.derivative_overlap(&samples[j], control, x, p).im)
            .sum();
        let w = if j == 0 || j == n_t { 0.5 * dt } else { dt };
        grad[j] = 4.0 * PI * w * g;
        if j < n_t {
            dyn_.prepare(&samples[j], &samples[j + 1], dt)?;
            for s in psi.iter_mut().chain(chi.iter_mut()) {
                dyn_.apply(s);
            }
        }
    }
    Ok(grad)
}
