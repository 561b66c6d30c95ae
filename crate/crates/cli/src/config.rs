//! Run configuration: a TOML file plus `--set section.key=value` overrides.
//!
//! Every key is read through [`Reader`], which records problems instead of
//! stopping at the first one, so a bad file yields one report listing all of
//! them.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use lattice_transport::krotov::StepWeights;
use lattice_transport::propagate2d::BOHR_RADIUS_M;
use lattice_transport::scenario::{BETA_END_OVER_PI, DEFAULT_N, THETA_B_OVER_PI, V0_KHZ};
use lattice_transport::sequence::DEFAULT_N_T;
use lattice_transport::spectrum::MAX_EIGENSTATES;
use lattice_transport::{
    Control, ControlSequence, InteractionParams, KrotovSettings, MergeRamp, SpatialGrid, Well,
};
use toml::{Table, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Spectrum,
    Evolve,
    Optimize,
    Scan,
    Fourier,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SequenceSource {
    Preset { name: String, ramp: MergeRamp, duration: f64, n_t: usize },
    File { path: PathBuf, seq: ControlSequence },
}

impl SequenceSource {
    pub fn build(&self) -> lattice_transport::Result<ControlSequence> {
        match self {
            SequenceSource::Preset { ramp, duration, n_t, .. } => ramp.sequence(*duration, *n_t),
            SequenceSource::File { seq, .. } => Ok(seq.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumOptions {
    pub levels: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolveOptions {
    pub levels: usize,
    pub trace_points: usize,
    pub trace_well: Well,
    pub two_particle: bool,
    pub density_times: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizeMode {
    Transport,
    Interaction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOptions {
    pub mode: OptimizeMode,
    pub settings: KrotovSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanVariable {
    Duration,
    Theta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanOptions {
    pub variable: ScanVariable,
    pub values: Vec<f64>,
    pub well: Well,
    pub levels: usize,
    /// Level whose maximum is reported as `argmax`.
    pub level: usize,
    pub offset_over_pi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FourierOptions {
    pub controls: Vec<Control>,
    pub cutoff_khz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: SpatialGrid,
    pub sequence: SequenceSource,
    pub interaction: InteractionParams,
    pub spectrum: SpectrumOptions,
    pub evolve: EvolveOptions,
    pub optimize: OptimizeOptions,
    pub scan: ScanOptions,
    pub fourier: FourierOptions,
}

/// Aggregated configuration problems.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub Vec<String>);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "configuration error ({} problem{}):", self.0.len(), if self.0.len() == 1 { "" } else { "s" })?;
        for e in &self.0 {
            writeln!(f, "  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

/// Applies `section.key=value`. The value is read as a TOML value and falls
/// back to a plain string.
pub fn apply_override(table: &mut Table, spec: &str) -> Result<(), String> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| format!("override `{spec}` is not key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("override key `{key}` is malformed"));
    }
    let last = parts.pop().expect("split yields one part");
    let mut node = table;
    for p in parts {
        let entry = node.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        node = entry.as_table_mut().ok_or_else(|| format!("override `{key}`: `{p}` is not a section"))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

struct Reader<'a> {
    root: &'a Table,
    seen: BTreeSet<String>,
    errors: Vec<String>,
}

impl<'a> Reader<'a> {
    fn new(root: &'a Table) -> Self {
        Self { root, seen: BTreeSet::new(), errors: Vec::new() }
    }

    fn raw(&mut self, key: &str) -> Option<&'a Value> {
        self.seen.insert(key.to_string());
        let (section, name) = key.split_once('.').expect("keys are section.name");
        self.root.get(section)?.as_table()?.get(name)
    }

    fn f64_opt(&mut self, key: &str) -> Option<f64> {
        match self.raw(key)? {
            Value::Float(v) => Some(*v),
            Value::Integer(v) => Some(*v as f64),
            other => {
                self.errors.push(format!("{key}: expected a number, got {}", other.type_str()));
                None
            }
        }
    }

    fn f64(&mut self, key: &str, default: f64) -> f64 {
        self.f64_opt(key).unwrap_or(default)
    }

    fn usize(&mut self, key: &str, default: usize) -> usize {
        match self.raw(key) {
            None => default,
            Some(Value::Integer(v)) if *v >= 0 => *v as usize,
            Some(other) => {
                self.errors.push(format!("{key}: expected a non-negative integer, got {other}"));
                default
            }
        }
    }

    fn bool(&mut self, key: &str, default: bool) -> bool {
        match self.raw(key) {
            None => default,
            Some(Value::Boolean(v)) => *v,
            Some(other) => {
                self.errors.push(format!("{key}: expected true or false, got {other}"));
                default
            }
        }
    }

    fn string(&mut self, key: &str, default: &str) -> String {
        match self.raw(key) {
            None => default.to_string(),
            Some(Value::String(s)) => s.clone(),
            Some(other) => {
                self.errors.push(format!("{key}: expected a string, got {other}"));
                default.to_string()
            }
        }
    }

    fn f64_list(&mut self, key: &str) -> Option<Vec<f64>> {
        let Value::Array(items) = self.raw(key)? else {
            self.errors.push(format!("{key}: expected an array of numbers"));
            return None;
        };
        let mut out = Vec::with_capacity(items.len());
        for v in items {
            match v {
                Value::Float(x) => out.push(*x),
                Value::Integer(x) => out.push(*x as f64),
                other => {
                    self.errors.push(format!("{key}: expected numbers, found {other}"));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn string_list(&mut self, key: &str, default: &[&str]) -> Vec<String> {
        match self.raw(key) {
            None => default.iter().map(|s| s.to_string()).collect(),
            Some(Value::Array(items)) if items.iter().all(Value::is_str) => {
                items.iter().map(|v| v.as_str().unwrap_or_default().to_string()).collect()
            }
            Some(_) => {
                self.errors.push(format!("{key}: expected an array of strings"));
                default.iter().map(|s| s.to_string()).collect()
            }
        }
    }

    fn check(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        if !ok {
            self.errors.push(msg());
        }
    }

    fn unknown_keys(&mut self) {
        for (section, body) in self.root {
            match body.as_table() {
                Some(t) => {
                    for name in t.keys() {
                        let key = format!("{section}.{name}");
                        if !self.seen.contains(&key) {
                            self.errors.push(format!("{key}: unknown key"));
                        }
                    }
                }
                None => self.errors.push(format!("{section}: expected a section")),
            }
        }
    }
}

fn parse_well(r: &mut Reader, key: &str, default: &str) -> Well {
    match r.string(key, default).as_str() {
        "L" | "l" | "left" => Well::Left,
        "R" | "r" | "right" => Well::Right,
        other => {
            r.errors.push(format!("{key}: expected \"L\" or \"R\", got \"{other}\""));
            Well::Left
        }
    }
}

fn parse_controls(r: &mut Reader, key: &str, default: &[&str]) -> Vec<Control> {
    let mut out = Vec::new();
    for name in r.string_list(key, default) {
        match Control::parse(&name) {
            Some(c) if !out.contains(&c) => out.push(c),
            Some(_) => r.errors.push(format!("{key}: `{name}` listed twice")),
            None => r.errors.push(format!("{key}: unknown control `{name}` (v0, beta, theta)")),
        }
    }
    out
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

fn linspace(start: f64, stop: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![start];
    }
    (0..points).map(|k| start + (stop - start) * k as f64 / (points - 1) as f64).collect()
}

impl RunConfig {
    /// Parses and validates the whole configuration. `base` resolves relative
    /// sequence file paths.
    pub fn from_table(root: &Table, base: &Path, command: Command) -> Result<Self, ConfigError> {
        let mut r = Reader::new(root);

        let n = r.usize("grid.n", DEFAULT_N);
        r.check(n >= 16, || format!("grid.n: need at least 16 points, got {n}"));
        let grid = SpatialGrid::unit_cell(n.max(16)).expect("unit cell with ≥ 16 points");

        let preset = r.string("sequence.preset", "b");
        let duration = r.f64("sequence.duration_ms", 0.5);
        let n_t = r.usize("sequence.n_t", DEFAULT_N_T);
        let ramp = MergeRamp {
            v0: r.f64("sequence.v0_khz", V0_KHZ),
            beta_start_over_pi: r.f64("sequence.beta_start_over_pi", 0.0),
            beta_end_over_pi: r.f64("sequence.beta_end_over_pi", BETA_END_OVER_PI),
            theta_over_pi: r.f64("sequence.theta_over_pi", THETA_B_OVER_PI),
        };
        let file = r.string("sequence.file", "");
        let sequence = match preset.as_str() {
            "a" | "b" => {
                r.check(positive(duration), || format!("sequence.duration_ms: must be positive, got {duration}"));
                r.check(n_t >= 1, || "sequence.n_t: must be at least 1".into());
                r.check(file.is_empty(), || "sequence.file: only used with preset = \"file\"".into());
                for p in [ramp.start(), ramp.end()] {
                    if let Err(e) = p {
                        r.errors.push(format!("sequence: {e}"));
                    }
                }
                Some(SequenceSource::Preset { name: preset.clone(), ramp, duration, n_t })
            }
            "file" => {
                if file.is_empty() {
                    r.errors.push("sequence.file: required with preset = \"file\"".into());
                    None
                } else {
                    let path = base.join(&file);
                    match std::fs::read_to_string(&path) {
                        Err(e) => {
                            r.errors.push(format!("sequence.file: cannot read {}: {e}", path.display()));
                            None
                        }
                        Ok(text) => match ControlSequence::from_table(&text) {
                            Ok(seq) => Some(SequenceSource::File { path, seq }),
                            Err(e) => {
                                r.errors.push(format!("sequence.file: {}: {e}", path.display()));
                                None
                            }
                        },
                    }
                }
            }
            other => {
                r.errors.push(format!("sequence.preset: expected \"a\", \"b\" or \"file\", got \"{other}\""));
                None
            }
        };

        let a_s_bohr = r.f64("interaction.a_s_bohr", 100.4);
        let nu_y = r.f64("interaction.nu_y_khz", 37.0);
        let nu_z = r.f64("interaction.nu_z_khz", 37.0);
        let lambda_nm = r.f64("interaction.lambda_nm", 810.0);
        let g1d = r.f64_opt("interaction.g1d");
        let interaction = match InteractionParams::from_physical(a_s_bohr * BOHR_RADIUS_M, nu_y, nu_z, lambda_nm * 1e-9) {
            Ok(ip) => match g1d {
                Some(g) if g.is_finite() && g >= 0.0 => InteractionParams { g1d: g, ..ip },
                Some(g) => {
                    r.errors.push(format!("interaction.g1d: must be finite and ≥ 0, got {g}"));
                    ip
                }
                None => ip,
            },
            Err(e) => {
                r.errors.push(format!("interaction: {e}"));
                InteractionParams::rubidium87()
            }
        };

        let levels = |r: &mut Reader, key: &str, default: usize, min: usize| {
            let v = r.usize(key, default);
            r.check((min..=MAX_EIGENSTATES).contains(&v), || {
                format!("{key}: must be between {min} and {MAX_EIGENSTATES}, got {v}")
            });
            v
        };

        let spectrum = SpectrumOptions {
            levels: levels(&mut r, "spectrum.levels", 6, 1),
            samples: r.usize("spectrum.samples", 101),
        };
        r.check(spectrum.samples >= 1, || "spectrum.samples: must be at least 1".into());

        let evolve = EvolveOptions {
            levels: levels(&mut r, "evolve.levels", 3, 2),
            trace_points: r.usize("evolve.trace_points", 0),
            trace_well: parse_well(&mut r, "evolve.trace_well", "L"),
            two_particle: r.bool("evolve.two_particle", false),
            density_times: r.f64_list("evolve.density_times_ms").unwrap_or_default(),
        };
        r.check(evolve.trace_points != 1, || "evolve.trace_points: use 0 (off) or at least 2".into());
        if !evolve.density_times.is_empty() && !evolve.two_particle {
            r.errors.push("evolve.density_times_ms: requires evolve.two_particle = true".into());
        }

        let mode = match r.string("optimize.mode", "transport").as_str() {
            "transport" => OptimizeMode::Transport,
            "interaction" => OptimizeMode::Interaction,
            other => {
                r.errors.push(format!("optimize.mode: expected \"transport\" or \"interaction\", got \"{other}\""));
                OptimizeMode::Transport
            }
        };
        let defaults = KrotovSettings::default();
        let weights = StepWeights {
            v0: r.f64("optimize.lambda_v0", defaults.step_weights.v0),
            beta: r.f64("optimize.lambda_beta", defaults.step_weights.beta),
            theta: r.f64("optimize.lambda_theta", defaults.step_weights.theta),
        };
        let settings = KrotovSettings {
            active_controls: parse_controls(&mut r, "optimize.controls", &["beta", "theta"]),
            step_weights: weights,
            max_iterations: r.usize("optimize.max_iterations", defaults.max_iterations),
            stop_fidelity: r.f64("optimize.stop_fidelity", defaults.stop_fidelity),
            lambda_relax: r.f64("optimize.lambda_relax", defaults.lambda_relax),
        };
        r.check(!settings.active_controls.is_empty(), || "optimize.controls: at least one control".into());
        for (key, w) in [("lambda_v0", weights.v0), ("lambda_beta", weights.beta), ("lambda_theta", weights.theta)] {
            r.check(positive(w), || format!("optimize.{key}: must be positive, got {w}"));
        }
        r.check(settings.lambda_relax.is_finite() && settings.lambda_relax >= 1.0, || {
            format!("optimize.lambda_relax: must be ≥ 1, got {}", settings.lambda_relax)
        });
        r.check(settings.stop_fidelity > 0.0 && settings.stop_fidelity <= 1.0, || {
            format!("optimize.stop_fidelity: must lie in (0, 1], got {}", settings.stop_fidelity)
        });
        let optimize = OptimizeOptions { mode, settings };

        let variable = match r.string("scan.variable", "theta").as_str() {
            "duration" => ScanVariable::Duration,
            "theta" => ScanVariable::Theta,
            other => {
                r.errors.push(format!("scan.variable: expected \"duration\" or \"theta\", got \"{other}\""));
                ScanVariable::Theta
            }
        };
        let explicit = r.f64_list("scan.values");
        let start = r.f64("scan.start", -0.5);
        let stop = r.f64("scan.stop", -0.45);
        let points = r.usize("scan.points", 11);
        let values = match explicit {
            Some(v) => v,
            None => {
                r.check(points >= 1, || "scan.points: must be at least 1".into());
                r.check(points == 1 || stop > start, || format!("scan.stop ({stop}) must exceed scan.start ({start})"));
                linspace(start, stop, points.max(1))
            }
        };
        r.check(!values.is_empty(), || "scan.values: empty".into());
        r.check(values.windows(2).all(|w| w[1] > w[0]), || "scan.values: must be strictly increasing".into());
        if variable == ScanVariable::Duration {
            r.check(values.iter().all(|&t| positive(t)), || "scan.values: durations must be positive".into());
        }
        let well = parse_well(&mut r, "scan.well", "L");
        let scan_levels = levels(&mut r, "scan.levels", 3, 1);
        let level = r.usize("scan.level", if well == Well::Left { 1 } else { 0 });
        r.check(level < scan_levels, || format!("scan.level: must be below scan.levels ({scan_levels}), got {level}"));
        let scan = ScanOptions {
            variable,
            values,
            well,
            levels: scan_levels,
            level,
            offset_over_pi: r.f64("scan.offset_over_pi", 0.0),
        };

        let fourier = FourierOptions {
            controls: parse_controls(&mut r, "fourier.controls", &["beta", "theta"]),
            cutoff_khz: r.f64_opt("fourier.cutoff_khz"),
        };
        if let Some(c) = fourier.cutoff_khz {
            r.check(positive(c), || format!("fourier.cutoff_khz: must be positive, got {c}"));
        }

        if command == Command::Scan {
            if let Some(SequenceSource::File { .. }) = sequence {
                r.errors.push("scan: needs a preset sequence, not a file".into());
            }
        }

        r.unknown_keys();
        if !r.errors.is_empty() {
            return Err(ConfigError(r.errors));
        }
        let sequence = sequence.expect("a sequence when no errors were recorded");
        Ok(Self { grid, sequence, interaction, spectrum, evolve, optimize, scan, fourier })
    }

    /// Reads `path`, applies the overrides and validates.
    pub fn load(path: &Path, overrides: &[String], command: Command) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(vec![format!("cannot read config {}: {e}", path.display())]))?;
        let mut table: Table = text
            .parse()
            .map_err(|e| ConfigError(vec![format!("{}: {e}", path.display())]))?;
        let errors: Vec<String> = overrides.iter().filter_map(|o| apply_override(&mut table, o).err()).collect();
        if !errors.is_empty() {
            return Err(ConfigError(errors));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_table(&table, base, command)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        RunConfig::from_table(&text.parse().unwrap(), Path::new("."), Command::Evolve)
    }

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = parse("").unwrap();
        assert_eq!(cfg.grid.n(), DEFAULT_N);
        assert_eq!(cfg.optimize.settings, KrotovSettings::default());
        assert!((cfg.interaction.g1d - InteractionParams::rubidium87().g1d).abs() < 1e-12);
        assert_eq!(cfg.scan.values.len(), 11);
    }

    #[test]
    fn all_problems_are_reported_together() {
        let err = parse(
            "[grid]\nn = 4\n[sequence]\nduration_ms = 0\n[optimize]\nlambda_relax = 0.5\ncontrols = [\"gamma\"]\n[extra]\nfoo = 1",
        )
        .unwrap_err();
        let text = err.to_string();
        for needle in ["grid.n", "duration_ms", "lambda_relax", "gamma", "extra.foo"] {
            assert!(text.contains(needle), "{needle} missing from {text}");
        }
    }

    #[test]
    fn type_errors_name_the_key() {
        let err = parse("[evolve]\nlevels = \"three\"").unwrap_err();
        assert!(err.0[0].starts_with("evolve.levels"), "{err}");
    }

    #[test]
    fn overrides_parse_values_and_create_sections() {
        let mut t = Table::new();
        apply_override(&mut t, "sequence.duration_ms=0.15").unwrap();
        apply_override(&mut t, "scan.well=R").unwrap();
        apply_override(&mut t, "optimize.controls=[\"beta\"]").unwrap();
        let cfg = RunConfig::from_table(&t, Path::new("."), Command::Scan).unwrap();
        assert_eq!(cfg.scan.well, Well::Right);
        assert_eq!(cfg.scan.level, 0);
        assert_eq!(cfg.optimize.settings.active_controls, vec![Control::Beta]);
        match cfg.sequence {
            SequenceSource::Preset { duration, .. } => assert_eq!(duration, 0.15),
            _ => panic!("preset expected"),
        }
        assert!(apply_override(&mut t, "novalue").is_err());
        assert!(apply_override(&mut t, "scan..x=1").is_err());
    }

    #[test]
    fn linspace_hits_both_ends() {
        let v = linspace(-0.5, -0.45, 6);
        assert_eq!(v.len(), 6);
        assert!((v[5] + 0.45).abs() < 1e-15 && v[0] == -0.5);
        assert_eq!(linspace(0.3, 0.3, 1), vec![0.3]);
    }
}
