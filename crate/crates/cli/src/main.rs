//! `ltransport`: configuration-driven front end for the lattice transport
//! simulator.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use lattice_transport::propagate2d::density_table;
use lattice_transport::{
    evolve_two_particle, fourier_spectrum, instantaneous_spectrum, lowpass_filter, optimize, optimize_with_interactions,
    projection_trace, scan_duration, scan_theta, Control, ControlProblem, ControlSequence, FidelityReport, Objective,
    OptimizationTrace, Transport, UnitSystem, WaveformSpectrum, Well,
};
use serde_json::{json, Value};

use config::{Command, ConfigError, OptimizeMode, RunConfig, ScanVariable, SequenceSource};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "ltransport", version, about = "Atom transport in a double-well optical lattice")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// TOML configuration file.
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
    /// Override a configuration key, e.g. `--set sequence.duration_ms=0.15`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Instantaneous single-particle spectrum along the sequence.
    Spectrum(Common),
    /// Propagate the transport states and report fidelities.
    Evolve(Common),
    /// Krotov optimization of the sequence.
    Optimize(Common),
    /// Duration or tilt scan.
    Scan(Common),
    /// Fourier spectra of the sequence, optionally with a low-pass filter.
    Fourier(Common),
}

enum Failure {
    Config(ConfigError),
    Numerical(lattice_transport::Error),
    Io(String),
}

impl From<lattice_transport::Error> for Failure {
    fn from(e: lattice_transport::Error) -> Self {
        Failure::Numerical(e)
    }
}

type Outputs = Vec<(String, String)>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match &cli.command {
        Cmd::Spectrum(c) => (Command::Spectrum, c),
        Cmd::Evolve(c) => (Command::Evolve, c),
        Cmd::Optimize(c) => (Command::Optimize, c),
        Cmd::Scan(c) => (Command::Scan, c),
        Cmd::Fourier(c) => (Command::Fourier, c),
    };
    match run(command, common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprint!("{e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("numerical error: {e}");
            ExitCode::from(EXIT_NUMERICAL)
        }
        Err(Failure::Io(e)) => {
            eprintln!("i/o error: {e}");
            ExitCode::from(EXIT_IO)
        }
    }
}

fn run(command: Command, common: &Common) -> Result<(), Failure> {
    let cfg = RunConfig::load(&common.config, &common.overrides, command).map_err(Failure::Config)?;
    // Sequence construction can still reject the configured values, and that
    // is reported as a configuration problem.
    let seq = cfg.sequence.build().map_err(|e| Failure::Config(ConfigError(vec![format!("sequence: {e}")])))?;
    let outputs = match command {
        Command::Spectrum => cmd_spectrum(&cfg, &seq)?,
        Command::Evolve => cmd_evolve(&cfg, &seq)?,
        Command::Optimize => cmd_optimize(&cfg, &seq)?,
        Command::Scan => cmd_scan(&cfg)?,
        Command::Fourier => cmd_fourier(&cfg, &seq)?,
    };
    write_outputs(&common.out, command, &common.config, outputs)
}

fn write_outputs(dir: &Path, command: Command, config: &Path, outputs: Outputs) -> Result<(), Failure> {
    let io = |e: std::io::Error, p: &Path| Failure::Io(format!("{}: {e}", p.display()));
    std::fs::create_dir_all(dir).map_err(|e| io(e, dir))?;
    let mut files: Vec<&str> = Vec::new();
    for (name, contents) in &outputs {
        let path = dir.join(name);
        std::fs::write(&path, contents).map_err(|e| io(e, &path))?;
        files.push(name);
    }
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
    let meta = json!({
        "command": format!("{command:?}").to_lowercase(),
        "config": config.display().to_string(),
        "files": files,
        "version": env!("CARGO_PKG_VERSION"),
        "unix_time_s": stamp,
    });
    let path = dir.join("metadata.json");
    std::fs::write(&path, pretty(&meta)).map_err(|e| io(e, &path))
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

fn linspace(t: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![0.0];
    }
    (0..points).map(|k| t * k as f64 / (points - 1) as f64).collect()
}

fn transport(cfg: &RunConfig, seq: &ControlSequence) -> lattice_transport::Result<Transport> {
    Transport::new(cfg.grid, UnitSystem::default(), seq.first(), seq.last())
}

fn cmd_spectrum(cfg: &RunConfig, seq: &ControlSequence) -> Result<Outputs, Failure> {
    let times = linspace(seq.duration(), cfg.spectrum.samples);
    let trace = instantaneous_spectrum(seq, &cfg.grid, &times, cfg.spectrum.levels, &UnitSystem::default())?;
    Ok(vec![("spectrum.dat".into(), trace.to_table())])
}

fn cmd_evolve(cfg: &RunConfig, seq: &ControlSequence) -> Result<Outputs, Failure> {
    let opts = &cfg.evolve;
    let tr = transport(cfg, seq)?;
    let out = tr.evaluate(seq, opts.levels)?;
    let mut report = FidelityReport { f_l: out.f_l, f_r: out.f_r, big_f: Some(out.product_fidelity), ..Default::default() };
    let mut files = Outputs::new();
    if opts.trace_points > 0 {
        let psi0 = match opts.trace_well {
            Well::Left => &tr.psi_l,
            Well::Right => &tr.psi_r,
        };
        let times = linspace(seq.duration(), opts.trace_points);
        let trace = projection_trace(seq, psi0, &times, opts.levels, &tr.units)?;
        files.push(("projection.dat".into(), trace.to_table()));
        report.p_trace = Some(trace);
    }
    if opts.two_particle {
        let (initial, target) = tr.two_particle_states(&cfg.interaction)?;
        let run = evolve_two_particle(&initial, seq, &cfg.interaction, &tr.units, &opts.density_times)?;
        report.f_int = Some(target.inner(&run.final_state.wavefunction)?.norm_sqr());
        for (t, psi) in &run.trajectory {
            files.push((format!("density_t{t:.6}.dat"), density_table(psi)));
        }
    }
    files.insert(0, ("report.json".into(), pretty(&report.to_json())));
    Ok(files)
}

fn spectrum_table(s: &WaveformSpectrum) -> String {
    let mut out = String::from("f_kHz magnitude\n");
    for (f, m) in s.frequencies.iter().zip(&s.magnitudes) {
        let _ = writeln!(out, "{f:.8e} {m:.10e}");
    }
    out
}

fn fourier_files(seq: &ControlSequence, controls: &[Control]) -> Result<Outputs, Failure> {
    let mut files = Outputs::new();
    for &c in controls {
        let s = fourier_spectrum(seq, c)?;
        if !s.degenerate {
            files.push((format!("fourier_{}.dat", c.name()), spectrum_table(&s)));
        }
    }
    Ok(files)
}

fn trace_summary(trace: &OptimizationTrace) -> Value {
    let last = trace.last();
    json!({
        "f": trace.labels.iter().cloned().zip(last.fidelities.iter().map(|f| json!(f))).collect::<serde_json::Map<String, Value>>(),
        "f_initial": trace.initial().fidelities,
        "iterations": last.iteration,
        "converged": trace.converged,
        "monotone": trace.is_monotone(),
    })
}

fn cmd_optimize(cfg: &RunConfig, seq: &ControlSequence) -> Result<Outputs, Failure> {
    let settings = cfg.optimize.settings.clone();
    let tr = transport(cfg, seq)?;
    let (trace, mut summary) = match cfg.optimize.mode {
        OptimizeMode::Transport => {
            let (phi1, phi0) = tr.targets()?;
            let problem = ControlProblem::new(
                vec![Objective::new("L", tr.psi_l.clone(), phi1), Objective::new("R", tr.psi_r.clone(), phi0)],
                seq.clone(),
                settings,
            );
            let trace = optimize(&problem)?;
            let big_f = tr.evaluate(&trace.final_sequence, 2)?.product_fidelity;
            let mut summary = trace_summary(&trace);
            summary["F"] = json!(big_f);
            (trace, summary)
        }
        OptimizeMode::Interaction => {
            let (initial, target) = tr.two_particle_states(&cfg.interaction)?;
            let problem = ControlProblem::new(vec![Objective::new("int", initial, target)], seq.clone(), settings);
            let trace = optimize_with_interactions(&problem, &cfg.interaction)?;
            let mut summary = trace_summary(&trace);
            summary["F_int"] = json!(trace.last().fidelities[0]);
            (trace, summary)
        }
    };
    summary["combined"] = json!(trace.last().combined);
    let mut files = vec![
        ("summary.json".to_string(), pretty(&summary)),
        ("sequence.dat".to_string(), trace.final_sequence.to_table()),
        ("trace.dat".to_string(), trace.to_table()),
    ];
    files.extend(fourier_files(&trace.final_sequence, &cfg.optimize.settings.active_controls)?);
    Ok(files)
}

fn cmd_scan(cfg: &RunConfig) -> Result<Outputs, Failure> {
    let SequenceSource::Preset { ramp, duration, n_t, .. } = &cfg.sequence else {
        unreachable!("rejected during validation");
    };
    let opts = &cfg.scan;
    let tr = Transport::new(cfg.grid, UnitSystem::default(), ramp.start()?, ramp.end()?)?;
    let result = match opts.variable {
        ScanVariable::Duration => scan_duration(&tr, ramp, &opts.values, *n_t, opts.well, opts.levels)?,
        ScanVariable::Theta => {
            scan_theta(&tr, ramp, *duration, &opts.values, opts.offset_over_pi, *n_t, opts.well, opts.levels)?
        }
    };
    Ok(vec![("scan.dat".into(), result.to_table()), ("scan.json".into(), pretty(&result.to_json(opts.level)))])
}

fn cmd_fourier(cfg: &RunConfig, seq: &ControlSequence) -> Result<Outputs, Failure> {
    let mut files = fourier_files(seq, &cfg.fourier.controls)?;
    if let Some(cutoff) = cfg.fourier.cutoff_khz {
        let filtered = lowpass_filter(seq, cutoff)?;
        let tr = transport(cfg, seq)?;
        let before = tr.evaluate(seq, 2)?;
        let after = tr.evaluate(&filtered, 2)?;
        let f = |o: &lattice_transport::scenario::TransportOutcome| {
            json!({ "f": { "L": o.f_l, "R": o.f_r }, "F": o.product_fidelity })
        };
        let report = json!({ "cutoff_khz": cutoff, "original": f(&before), "filtered": f(&after) });
        files.push(("lowpass.json".into(), pretty(&report)));
        files.push(("sequence_filtered.dat".into(), filtered.to_table()));
    }
    Ok(files)
}
