//! Time-sampled control waveforms `V₀(t)`, `β(t)`, `θ(t)`.

use std::fmt::Write as _;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::potential::{Control, LatticeParams};

/// Default number of time slices.
pub const DEFAULT_N_T: usize = 5000;

/// Header line of the tabular interchange format.
pub const TABLE_HEADER: &str = "t_ms V0_kHz beta_rad theta_rad";

/// Uniform samples `u(t_j)`, `t_j = j·T/n_T`, `j = 0..=n_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence {
    duration: f64,
    samples: Vec<LatticeParams>,
}

impl ControlSequence {
    pub fn new(duration: f64, samples: Vec<LatticeParams>) -> Result<Self> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(Error::InvalidDuration(duration));
        }
        if samples.len() < 2 {
            return Err(Error::InvalidSequence(format!(
                "need at least 2 samples, got {}",
                samples.len()
            )));
        }
        for (j, s) in samples.iter().enumerate() {
            s.validate()
                .map_err(|e| Error::InvalidSequence(format!("sample {j}: {e}")))?;
        }
        Ok(Self { duration, samples })
    }

    /// `n_t` slices of the same parameters.
    pub fn constant(duration: f64, params: LatticeParams, n_t: usize) -> Result<Self> {
        Self::new(duration, vec![params; n_t + 1])
    }

    /// Samples a function of time on `n_t` uniform slices.
    pub fn from_fn(duration: f64, n_t: usize, f: impl Fn(f64) -> LatticeParams) -> Result<Self> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(Error::InvalidDuration(duration));
        }
        let dt = duration / n_t as f64;
        Self::new(duration, (0..=n_t).map(|j| f(j as f64 * dt)).collect())
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn n_t(&self) -> usize {
        self.samples.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.duration / self.n_t() as f64
    }

    pub fn time(&self, j: usize) -> f64 {
        if j == self.n_t() {
            self.duration
        } else {
            j as f64 * self.dt()
        }
    }

    pub fn samples(&self) -> &[LatticeParams] {
        &self.samples
    }

    pub fn at(&self, j: usize) -> LatticeParams {
        self.samples[j]
    }

    pub fn first(&self) -> LatticeParams {
        self.samples[0]
    }

    pub fn last(&self) -> LatticeParams {
        self.samples[self.n_t()]
    }

    /// Values of one control at every sample.
    pub fn values(&self, control: Control) -> Vec<f64> {
        self.samples.iter().map(|p| control.get(p)).collect()
    }

    /// Replaces one control waveform. Samples are clamped to the admissible
    /// set.
    pub fn with_values(&self, control: Control, values: &[f64]) -> Result<Self> {
        if values.len() != self.samples.len() {
            return Err(Error::InvalidSequence(format!(
                "{} values for {} samples",
                values.len(),
                self.samples.len()
            )));
        }
        let samples = self
            .samples
            .iter()
            .zip(values)
            .map(|(p, &v)| {
                let mut q = *p;
                control.set(&mut q, v);
                q.clamped()
            })
            .collect();
        Self::new(self.duration, samples)
    }

    /// The same waveform run backwards in time.
    pub fn reversed(&self) -> Self {
        let mut samples = self.samples.clone();
        samples.reverse();
        Self { duration: self.duration, samples }
    }

    /// Adds a constant offset to `θ(t)`, e.g. a calibration shift `Δθ`.
    pub fn with_theta_offset(&self, delta: f64) -> Self {
        let samples = self
            .samples
            .iter()
            .map(|p| LatticeParams { theta: p.theta + delta, ..*p })
            .collect();
        Self { duration: self.duration, samples }
    }

    /// Linear interpolation between the two nearest samples.
    pub fn sample(&self, t: f64) -> Result<LatticeParams> {
        let tol = 1e-12 * self.duration;
        if !(t >= -tol && t <= self.duration + tol) {
            return Err(Error::OutOfRange { t, duration: self.duration });
        }
        let s = (t / self.dt()).clamp(0.0, self.n_t() as f64);
        let j = (s.floor() as usize).min(self.n_t() - 1);
        let w = s - j as f64;
        if w == 0.0 {
            return Ok(self.samples[j]);
        }
        if w == 1.0 {
            return Ok(self.samples[j + 1]);
        }
        Ok(self.samples[j].lerp(&self.samples[j + 1], w))
    }

    /// Resamples onto `n_t` uniform slices by linear interpolation.
    pub fn resampled(&self, n_t: usize) -> Result<Self> {
        Self::from_fn(self.duration, n_t, |t| {
            self.sample(t.min(self.duration)).expect("time inside the sequence")
        })
    }

    /// Tabular interchange text: a header line then `t V0 beta theta` rows.
    pub fn to_table(&self) -> String {
        let mut out = String::with_capacity(64 * self.samples.len());
        out.push_str(TABLE_HEADER);
        out.push('\n');
        for (j, p) in self.samples.iter().enumerate() {
            let _ = writeln!(out, "{:.17e} {:.17e} {:.17e} {:.17e}", self.time(j), p.v0, p.beta, p.theta);
        }
        out
    }

    /// Parses the format written by [`ControlSequence::to_table`]. Rows must be
    /// uniformly spaced and start at `t = 0`.
    pub fn from_table(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::Parse("empty sequence file".into()))?;
        let cols: Vec<&str> = header.split_whitespace().collect();
        if cols != TABLE_HEADER.split_whitespace().collect::<Vec<_>>() {
            return Err(Error::Parse(format!("unexpected header `{header}`")));
        }
        let mut times = Vec::new();
        let mut samples = Vec::new();
        for (row, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("row {}: {e}", row + 1)))?;
            if vals.len() != 4 {
                return Err(Error::Parse(format!("row {}: expected 4 columns, got {}", row + 1, vals.len())));
            }
            times.push(vals[0]);
            samples.push(LatticeParams { v0: vals[1], beta: vals[2], theta: vals[3] });
        }
        if times.len() < 2 {
            return Err(Error::Parse("need at least 2 rows".into()));
        }
        let duration = *times.last().expect("non-empty");
        let n_t = times.len() - 1;
        let dt = duration / n_t as f64;
        for (j, &t) in times.iter().enumerate() {
            if (t - j as f64 * dt).abs() > 1e-9 * duration.abs().max(1e-12) {
                return Err(Error::Parse(format!("row {}: time {t} is not on a uniform grid", j + 1)));
            }
        }
        Self::new(duration, samples)
    }
}

/// Linear ramp of all three parameters from `start` to `end` over `duration`.
pub fn make_linear_merge(
    duration: f64,
    start: LatticeParams,
    end: LatticeParams,
    n_t: usize,
) -> Result<ControlSequence> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::InvalidDuration(duration));
    }
    if n_t < 1 {
        return Err(Error::InvalidSequence("n_t must be at least 1".into()));
    }
    let samples = (0..=n_t)
        .map(|j| {
            if j == n_t {
                end
            } else {
                start.lerp(&end, j as f64 / n_t as f64)
            }
        })
        .collect();
    ControlSequence::new(duration, samples)
}

/// Magnitude spectrum of one waveform on the harmonics `k/T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaveformSpectrum {
    pub fundamental_khz: f64,
    pub frequencies: Vec<f64>,
    /// Normalized so that the entry at the fundamental is 1.
    pub magnitudes: Vec<f64>,
    /// Set when the waveform carries no signal at the fundamental; the
    /// spectrum is then left empty.
    pub degenerate: bool,
}

impl WaveformSpectrum {
    /// Largest normalized magnitude at frequencies strictly above `f_khz`.
    pub fn max_above(&self, f_khz: f64) -> f64 {
        self.frequencies
            .iter()
            .zip(&self.magnitudes)
            .filter(|(f, _)| **f > f_khz)
            .map(|(_, m)| *m)
            .fold(0.0, f64::max)
    }
}

fn fft_plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(len)
    } else {
        planner.plan_fft_forward(len)
    }
}

/// Raw DFT magnitudes `|Σ_j v_j e^{−2πijk/N}|` for `k = 0..=N/2`.
pub fn dft_magnitudes(values: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_plan(buf.len(), false).process(&mut buf);
    buf.iter().take(values.len() / 2 + 1).map(|c| c.norm()).collect()
}

/// Removes the straight line through the first and last sample.
fn detrend(values: &[f64]) -> (Vec<f64>, f64, f64) {
    let n = values.len() - 1;
    let (a, b) = (values[0], values[n]);
    let r = values
        .iter()
        .enumerate()
        .map(|(j, &v)| v - (a + (b - a) * j as f64 / n as f64))
        .collect();
    (r, a, b)
}

/// Normalized Fourier magnitudes of one control waveform.
///
/// The straight line joining the end values is subtracted first, so the
/// spectrum describes the shape of the waveform rather than the jump of its
/// periodic extension. The remaining `n_T` samples over one period `T` are
/// mean-centred and transformed; bin `k` sits at `k/T`.
pub fn fourier_spectrum(seq: &ControlSequence, control: Control) -> Result<WaveformSpectrum> {
    let n_t = seq.n_t();
    if n_t < 4 {
        return Err(Error::InvalidSequence(format!("n_t = {n_t} < 4 for a spectrum")));
    }
    let fundamental = 1.0 / seq.duration();
    let values = seq.values(control);
    let (mut r, _, _) = detrend(&values);
    r.truncate(n_t);
    let mean = r.iter().sum::<f64>() / n_t as f64;
    r.iter_mut().for_each(|v| *v -= mean);
    let mags = dft_magnitudes(&r);
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    if mags[1] <= 1e-12 * scale * n_t as f64 {
        return Ok(WaveformSpectrum {
            fundamental_khz: fundamental,
            frequencies: Vec::new(),
            magnitudes: Vec::new(),
            degenerate: true,
        });
    }
    Ok(WaveformSpectrum {
        fundamental_khz: fundamental,
        frequencies: (0..mags.len()).map(|k| k as f64 * fundamental).collect(),
        magnitudes: mags.iter().map(|m| m / mags[1]).collect(),
        degenerate: false,
    })
}

/// Hard spectral truncation of every waveform above `cutoff_khz`.
///
/// Each waveform is split into the straight line through its end values and
/// a residual that vanishes at both ends. The residual is truncated in
/// frequency, shifted so it vanishes at `t = 0` (and, by periodicity, at
/// `t = T`) and added back to the line, so the end values are kept exactly.
pub fn lowpass_filter(seq: &ControlSequence, cutoff_khz: f64) -> Result<ControlSequence> {
    if !(cutoff_khz.is_finite() && cutoff_khz > 0.0) {
        return Err(Error::InvalidSequence(format!("cutoff {cutoff_khz} kHz must be positive")));
    }
    let n_t = seq.n_t();
    let fwd = fft_plan(n_t, false);
    let inv = fft_plan(n_t, true);
    let mut out = seq.clone();
    for control in Control::ALL {
        let values = seq.values(control);
        let (r, a, b) = detrend(&values);
        let mut buf: Vec<Complex64> = r[..n_t].iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fwd.process(&mut buf);
        let mut removed = false;
        for (k, c) in buf.iter_mut().enumerate() {
            let harmonic = k.min(n_t - k);
            if harmonic as f64 / seq.duration() > cutoff_khz {
                *c = Complex64::new(0.0, 0.0);
                removed = true;
            }
        }
        if !removed {
            continue;
        }
        inv.process(&mut buf);
        let r0 = buf[0].re / n_t as f64;
        let filtered: Vec<f64> = (0..=n_t)
            .map(|j| {
                let line = a + (b - a) * j as f64 / n_t as f64;
                if j == 0 {
                    a
                } else if j == n_t {
                    b
                } else {
                    line + buf[j].re / n_t as f64 - r0
                }
            })
            .collect();
        for (p, v) in out.samples.iter_mut().zip(filtered) {
            control.set(p, v);
            *p = p.clamped();
        }
    }
    ControlSequence::new(out.duration, out.samples)
}
