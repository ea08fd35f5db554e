//! Sectioned `key = value` configuration.
//!
//! Keys live in named sections (`[propagation]` → `propagation.dt`); the three
//! top-level keys `scenario`, `seed` and `output` come before any section.
//! Every key has a default except `scenario`. Unknown keys are errors.

use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use dynamics::{CalibrationTargets, Method, NoiseProcess, PropagationConfig, RelaxationModel};
use pulses::LockMode;
use spinsys::SpinParams;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing required key '{key}'")]
    MissingKey { key: String },
    #[error("{}unknown key '{key}'", at(.line))]
    UnknownKey { key: String, line: Option<usize> },
    #[error("{}duplicate key '{key}'", at(.line))]
    DuplicateKey { key: String, line: Option<usize> },
    #[error("{}invalid value for '{key}': {message}", at(.line))]
    Invalid { key: String, message: String, line: Option<usize> },
}

fn at(line: &Option<usize>) -> String {
    line.map(|l| format!("line {l}: ")).unwrap_or_default()
}

impl ConfigError {
    /// The offending key, when the error is about one.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Syntax { .. } => None,
            ConfigError::MissingKey { key }
            | ConfigError::UnknownKey { key, .. }
            | ConfigError::DuplicateKey { key, .. }
            | ConfigError::Invalid { key, .. } => Some(key),
        }
    }

    pub fn line(&self) -> Option<usize> {
        match self {
            ConfigError::Syntax { line, .. } => Some(*line),
            ConfigError::MissingKey { .. } => None,
            ConfigError::UnknownKey { line, .. }
            | ConfigError::DuplicateKey { line, .. }
            | ConfigError::Invalid { line, .. } => *line,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Lifetimes,
    Fig3a,
    Fig3b,
    Fig4a,
    Fig4b,
    Spectra,
    Optimize,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::Lifetimes,
        Scenario::Fig3a,
        Scenario::Fig3b,
        Scenario::Fig4a,
        Scenario::Fig4b,
        Scenario::Spectra,
        Scenario::Optimize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Lifetimes => "lifetimes",
            Scenario::Fig3a => "fig3a",
            Scenario::Fig3b => "fig3b",
            Scenario::Fig4a => "fig4a",
            Scenario::Fig4b => "fig4b",
            Scenario::Spectra => "spectra",
            Scenario::Optimize => "optimize",
        }
    }
}

impl FromStr for Scenario {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Scenario::ALL.into_iter().find(|sc| sc.name() == s).ok_or_else(|| {
            let names: Vec<_> = Scenario::ALL.iter().map(|s| s.name()).collect();
            format!("unknown scenario '{s}' (expected one of {})", names.join(", "))
        })
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where the relaxation rates come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RelaxationSpec {
    None,
    Explicit(RelaxationModel),
    /// fit flip rates to lifetime targets under the configured lock
    Calibrated(CalibrationTargets),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffsetMode {
    /// probe at +δ, control at −δ from their transitions
    Differential,
    /// both tones shifted by +δ
    Common,
}

impl FromStr for OffsetMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "differential" => Ok(OffsetMode::Differential),
            "common" => Ok(OffsetMode::Common),
            _ => Err(format!("unknown offset mode '{s}' (differential, common)")),
        }
    }
}

impl fmt::Display for OffsetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OffsetMode::Differential => "differential",
            OffsetMode::Common => "common",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSettings {
    pub rms: f64,
    pub correlation_time: f64,
    pub correlation_coefficient: f64,
    pub trajectories: usize,
}

impl NoiseSettings {
    pub fn process(&self, seed: u64) -> NoiseProcess {
        NoiseProcess {
            rms_amplitude: self.rms,
            correlation_time: self.correlation_time,
            correlation_coefficient: self.correlation_coefficient,
            seed,
        }
    }
}

/// Starting state of the irradiation experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialState {
    /// hard-pulse block plus spin-lock from equilibrium
    Sequence,
    /// the exact singlet deviation, skipping preparation
    Singlet,
}

impl FromStr for InitialState {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sequence" => Ok(InitialState::Sequence),
            "singlet" => Ok(InitialState::Singlet),
            _ => Err(format!("unknown initial state '{s}' (sequence, singlet)")),
        }
    }
}

impl fmt::Display for InitialState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitialState::Sequence => "sequence",
            InitialState::Singlet => "singlet",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepSettings {
    pub initial: InitialState,
    pub lock_mode: LockMode,
    /// Hz
    pub lock_amplitude: f64,
    pub lock_duration: f64,
    /// (scale, weight) pairs the preparation is averaged over
    pub rf_scales: Vec<f64>,
    pub rf_weights: Vec<f64>,
    pub crusher: bool,
    pub normalize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EitSettings {
    pub probe_amplitude: f64,
    pub control_amplitude: f64,
    pub segment_duration: f64,
    /// free evolution between repeated segments
    pub gap: f64,
    pub sample_rate: f64,
    /// average the irradiation over the preparation's RF scale grid
    pub rf_average: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorSettings {
    pub duration: f64,
    pub interval: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fig4aSettings {
    pub offset_min: f64,
    pub offset_max: f64,
    pub offset_step: f64,
    pub repetitions: usize,
    pub mode: OffsetMode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fig4bSettings {
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub ratio_step: f64,
    /// control amplitude ν0, Hz; the probe gets ratio·ν0
    pub reference_amplitude: f64,
    pub repetitions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectraSettings {
    pub dwell: f64,
    pub points: usize,
    pub broadening: f64,
    pub zero_fill: usize,
    pub probe_duration: f64,
    /// degrees
    pub probe_flip: f64,
    pub peak_threshold: f64,
    /// rows of the CSV cover |f| ≤ window, Hz
    pub window: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeSettings {
    pub segments: usize,
    pub total_duration: f64,
    pub initial_amplitude: f64,
    pub budget: usize,
    pub dark_weight: f64,
    pub rf_scales: Vec<f64>,
    pub rf_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub molecule: SpinParams,
    pub relaxation: RelaxationSpec,
    pub noise: NoiseSettings,
    pub propagation: PropagationConfig,
    pub prep: PrepSettings,
    pub eit: EitSettings,
    pub monitor: MonitorSettings,
    pub fig4a: Fig4aSettings,
    pub fig4b: Fig4bSettings,
    pub spectra: SpectraSettings,
    pub optimize: OptimizeSettings,
}

impl ExperimentConfig {
    /// All defaults for the given scenario.
    pub fn new(scenario: Scenario) -> Self {
        let targets = CalibrationTargets::default();
        let grid = vec![0.9, 0.95, 1.0, 1.05, 1.1];
        let weights = vec![0.1, 0.2, 0.4, 0.2, 0.1];
        ExperimentConfig {
            scenario,
            seed: 1,
            output: None,
            molecule: SpinParams::default(),
            relaxation: RelaxationSpec::Calibrated(targets),
            noise: NoiseSettings { rms: 1.5, correlation_time: 0.05, correlation_coefficient: 0.0, trajectories: 500 },
            propagation: PropagationConfig { dt: 2e-4, method: Method::Split, n_trajectories: 500, record_stride: 0 },
            prep: PrepSettings {
                initial: InitialState::Sequence,
                lock_mode: LockMode::Cw,
                lock_amplitude: 2000.0,
                lock_duration: 15.0,
                rf_scales: grid.clone(),
                rf_weights: weights.clone(),
                crusher: true,
                normalize: true,
            },
            eit: EitSettings {
                probe_amplitude: 1.5,
                control_amplitude: 1.5,
                segment_duration: 0.24,
                gap: 0.0,
                sample_rate: pulses::DEFAULT_TWO_TONE_RATE,
                rf_average: false,
            },
            monitor: MonitorSettings { duration: 3.0, interval: 0.1 },
            fig4a: Fig4aSettings {
                offset_min: -5.0,
                offset_max: 5.0,
                offset_step: 0.25,
                repetitions: 1,
                mode: OffsetMode::Differential,
            },
            fig4b: Fig4bSettings {
                ratio_min: 0.0,
                ratio_max: 2.0,
                ratio_step: 0.05,
                reference_amplitude: 1.5,
                repetitions: 1,
            },
            spectra: SpectraSettings {
                dwell: 1e-3,
                points: 12_000,
                broadening: 0.5,
                zero_fill: 1 << 17,
                probe_duration: 0.52,
                probe_flip: 90.0,
                peak_threshold: 0.05,
                window: 160.0,
            },
            optimize: OptimizeSettings {
                segments: optctrl::DEFAULT_SEGMENTS,
                total_duration: optctrl::DEFAULT_TOTAL_DURATION,
                initial_amplitude: optctrl::NAIVE_AMPLITUDE,
                budget: 5000,
                dark_weight: 0.7,
                rf_scales: grid,
                rf_weights: weights,
            },
        }
    }

    pub fn noise_process(&self) -> NoiseProcess {
        self.noise.process(self.seed)
    }

    /// Weighted RF scale grid of the preparation.
    pub fn prep_grid(&self) -> Vec<(f64, f64)> {
        self.prep.rf_scales.iter().copied().zip(self.prep.rf_weights.iter().copied()).collect()
    }

    /// Canonical text form; `parse_config(&cfg.emit())` reproduces `cfg`.
    pub fn emit(&self) -> String {
        let mut out = String::new();
        for (section, keys) in self.entries() {
            if !section.is_empty() {
                let _ = writeln!(out, "\n[{section}]");
            }
            for (k, v) in keys {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    /// (section, [(key, value)]) in emission order, top-level section first.
    pub fn entries(&self) -> Vec<(&'static str, Vec<(&'static str, String)>)> {
        let mut top = vec![("scenario", self.scenario.to_string()), ("seed", self.seed.to_string())];
        if let Some(p) = &self.output {
            top.push(("output", p.display().to_string()));
        }
        let relaxation = match self.relaxation {
            RelaxationSpec::None => vec![("mode", "none".to_string())],
            RelaxationSpec::Calibrated(t) => vec![
                ("mode", "calibrated".into()),
                ("t1", t.t1.to_string()),
                ("ts", t.ts.to_string()),
                ("uncorrelated_dephasing", t.uncorrelated_dephasing_rate.to_string()),
                ("correlated_dephasing", t.correlated_dephasing_rate.to_string()),
            ],
            RelaxationSpec::Explicit(m) => vec![
                ("mode", "explicit".into()),
                ("flip_rate", m.flip_rate_per_spin.to_string()),
                ("collective_flip_rate", m.collective_flip_rate.to_string()),
                ("uncorrelated_dephasing", m.uncorrelated_dephasing_rate.to_string()),
                ("correlated_dephasing", m.correlated_dephasing_rate.to_string()),
            ],
        };
        let (n, pr, e, m, a, b, s, o) = (
            &self.noise,
            &self.prep,
            &self.eit,
            &self.monitor,
            &self.fig4a,
            &self.fig4b,
            &self.spectra,
            &self.optimize,
        );
        vec![
            ("", top),
            (
                "molecule",
                vec![("delta_nu", self.molecule.delta_nu.to_string()), ("j_coupling", self.molecule.j_coupling.to_string())],
            ),
            ("relaxation", relaxation),
            (
                "noise",
                vec![
                    ("rms", n.rms.to_string()),
                    ("correlation_time", n.correlation_time.to_string()),
                    ("correlation_coefficient", n.correlation_coefficient.to_string()),
                    ("trajectories", n.trajectories.to_string()),
                ],
            ),
            (
                "propagation",
                vec![("dt", self.propagation.dt.to_string()), ("method", self.propagation.method.to_string())],
            ),
            (
                "prep",
                vec![
                    ("initial", pr.initial.to_string()),
                    ("lock_mode", pr.lock_mode.to_string()),
                    ("lock_amplitude", pr.lock_amplitude.to_string()),
                    ("lock_duration", pr.lock_duration.to_string()),
                    ("rf_scales", list(&pr.rf_scales)),
                    ("rf_weights", list(&pr.rf_weights)),
                    ("crusher", pr.crusher.to_string()),
                    ("normalize", pr.normalize.to_string()),
                ],
            ),
            (
                "eit",
                vec![
                    ("probe_amplitude", e.probe_amplitude.to_string()),
                    ("control_amplitude", e.control_amplitude.to_string()),
                    ("segment_duration", e.segment_duration.to_string()),
                    ("gap", e.gap.to_string()),
                    ("sample_rate", e.sample_rate.to_string()),
                    ("rf_average", e.rf_average.to_string()),
                ],
            ),
            ("monitor", vec![("duration", m.duration.to_string()), ("interval", m.interval.to_string())]),
            (
                "fig4a",
                vec![
                    ("offset_min", a.offset_min.to_string()),
                    ("offset_max", a.offset_max.to_string()),
                    ("offset_step", a.offset_step.to_string()),
                    ("repetitions", a.repetitions.to_string()),
                    ("mode", a.mode.to_string()),
                ],
            ),
            (
                "fig4b",
                vec![
                    ("ratio_min", b.ratio_min.to_string()),
                    ("ratio_max", b.ratio_max.to_string()),
                    ("ratio_step", b.ratio_step.to_string()),
                    ("reference_amplitude", b.reference_amplitude.to_string()),
                    ("repetitions", b.repetitions.to_string()),
                ],
            ),
            (
                "spectra",
                vec![
                    ("dwell", s.dwell.to_string()),
                    ("points", s.points.to_string()),
                    ("broadening", s.broadening.to_string()),
                    ("zero_fill", s.zero_fill.to_string()),
                    ("probe_duration", s.probe_duration.to_string()),
                    ("probe_flip", s.probe_flip.to_string()),
                    ("peak_threshold", s.peak_threshold.to_string()),
                    ("window", s.window.to_string()),
                ],
            ),
            (
                "optimize",
                vec![
                    ("segments", o.segments.to_string()),
                    ("total_duration", o.total_duration.to_string()),
                    ("initial_amplitude", o.initial_amplitude.to_string()),
                    ("budget", o.budget.to_string()),
                    ("dark_weight", o.dark_weight.to_string()),
                    ("rf_scales", list(&o.rf_scales)),
                    ("rf_weights", list(&o.rf_weights)),
                ],
            ),
        ]
    }
}

fn list(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(", ")
}

/// Every accepted key, in `section.key` form (top-level keys bare).
pub fn known_keys() -> Vec<String> {
    let mut keys = Vec::new();
    let mut cfg = ExperimentConfig::new(Scenario::Fig3a);
    cfg.output = Some(PathBuf::from("x"));
    let mut push = |cfg: &ExperimentConfig| {
        for (section, kv) in cfg.entries() {
            for (k, _) in kv {
                let full = qualify(section, k);
                if !keys.contains(&full) {
                    keys.push(full);
                }
            }
        }
    };
    push(&cfg);
    cfg.relaxation = RelaxationSpec::Explicit(RelaxationModel::zero());
    push(&cfg);
    keys
}

fn qualify(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}

/// Raw values with the line each came from (None for overrides).
type RawMap = BTreeMap<String, (String, Option<usize>)>;

/// Parses configuration text, then applies `overrides` (`section.key`, value)
/// on top, then validates. Overrides may supply keys missing from the text,
/// including `scenario`.
pub fn parse_config_with(text: &str, overrides: &[(String, String)]) -> Result<ExperimentConfig, ConfigError> {
    check_lines(text)?;
    // paths may contain backslashes, so escapes stay literal
    let opts = ini::ParseOption { enabled_escape: false, ..Default::default() };
    let ini = ini::Ini::load_from_str_opt(text, opts)
        .map_err(|e| ConfigError::Syntax { line: e.line, message: e.msg.to_string() })?;
    let mut raw = RawMap::new();
    let mut seen = HashSet::new();
    for (section, props) in ini.iter() {
        let section = section.unwrap_or("");
        for (k, v) in props.iter() {
            let key = qualify(section, k);
            if !seen.insert(key.clone()) {
                let line = locate(text, section, k, 1);
                return Err(ConfigError::DuplicateKey { key, line });
            }
            let line = locate(text, section, k, 0);
            raw.insert(key, (v.trim().to_string(), line));
        }
    }
    for (k, v) in overrides {
        raw.insert(k.trim().to_string(), (v.trim().to_string(), None));
    }
    build(raw)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    parse_config_with(text, &[])
}

/// Splits a `--set` argument `section.key=value`.
pub fn split_override(arg: &str) -> Result<(String, String), ConfigError> {
    match arg.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(ConfigError::Invalid {
            key: arg.to_string(),
            message: "override must look like section.key=value".into(),
            line: None,
        }),
    }
}

/// Line-level structure: every line is blank, a whole-line comment, a
/// `[section]` header or a `key = value` pair. The ini reader is lenient
/// about the rest and reports positions poorly, so this runs first.
fn check_lines(text: &str) -> Result<(), ConfigError> {
    let word = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.');
    for (i, line) in text.lines().enumerate() {
        let l = line.trim();
        let err = |message: String| Err(ConfigError::Syntax { line: i + 1, message });
        if l.is_empty() || l.starts_with('#') || l.starts_with(';') {
            continue;
        }
        if l.starts_with('[') {
            match l.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                Some(name) if word(name.trim()) => continue,
                _ => return err(format!("malformed section header '{l}'")),
            }
        }
        match l.split_once(['=', ':']) {
            Some((k, _)) if word(k.trim()) => {}
            Some((k, _)) => return err(format!("malformed key '{}'", k.trim())),
            None => return err(format!("expected 'key = value', found '{l}'")),
        }
    }
    Ok(())
}

/// 1-based line of the `nth` (from 0) occurrence of `key` inside `[section]`,
/// for error messages.
fn locate(text: &str, section: &str, key: &str, nth: usize) -> Option<usize> {
    let mut current = String::new();
    let mut seen = 0;
    for (i, line) in text.lines().enumerate() {
        let l = line.trim();
        if let Some(rest) = l.strip_prefix('[') {
            current = rest.trim_end_matches(']').trim().to_string();
        } else if current == section {
            if let Some((k, _)) = l.split_once(['=', ':']) {
                if k.trim() == key {
                    if seen == nth {
                        return Some(i + 1);
                    }
                    seen += 1;
                }
            }
        }
    }
    None
}

struct Reader {
    raw: RawMap,
}

impl Reader {
    fn take<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.raw.remove(key) {
            None => Ok(default),
            Some((v, line)) => v.parse::<T>().map_err(|e| ConfigError::Invalid {
                key: key.to_string(),
                message: format!("cannot parse '{v}': {e}"),
                line,
            }),
        }
    }

    fn take_list(&mut self, key: &str, default: Vec<f64>) -> Result<Vec<f64>, ConfigError> {
        match self.raw.remove(key) {
            None => Ok(default),
            Some((v, line)) => v
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| ConfigError::Invalid {
                    key: key.to_string(),
                    message: format!("cannot parse list '{v}': {e}"),
                    line,
                }),
        }
    }

    fn has(&self, key: &str) -> bool {
        self.raw.contains_key(key)
    }
}

fn build(raw: RawMap) -> Result<ExperimentConfig, ConfigError> {
    // lines are needed after the reader consumes its entries
    let lines: BTreeMap<String, Option<usize>> = raw.iter().map(|(k, (_, l))| (k.clone(), *l)).collect();
    let mut r = Reader { raw };
    let scenario: Scenario = match r.raw.get("scenario") {
        None => return Err(ConfigError::MissingKey { key: "scenario".into() }),
        Some(_) => r.take("scenario", Scenario::Fig3a)?,
    };
    let d = ExperimentConfig::new(scenario);
    let seed = r.take("seed", d.seed)?;
    let output = match r.raw.remove("output") {
        Some((v, _)) if !v.is_empty() => Some(PathBuf::from(v)),
        _ => None,
    };
    let molecule = SpinParams {
        delta_nu: r.take("molecule.delta_nu", d.molecule.delta_nu)?,
        j_coupling: r.take("molecule.j_coupling", d.molecule.j_coupling)?,
    };

    let t = CalibrationTargets::default();
    let mode: String = r.take("relaxation.mode", "calibrated".to_string())?;
    let ku = r.take("relaxation.uncorrelated_dephasing", t.uncorrelated_dephasing_rate)?;
    let kc = r.take("relaxation.correlated_dephasing", t.correlated_dephasing_rate)?;
    let relaxation = match mode.as_str() {
        "none" => RelaxationSpec::None,
        "calibrated" => RelaxationSpec::Calibrated(CalibrationTargets {
            t1: r.take("relaxation.t1", t.t1)?,
            ts: r.take("relaxation.ts", t.ts)?,
            uncorrelated_dephasing_rate: ku,
            correlated_dephasing_rate: kc,
        }),
        "explicit" => RelaxationSpec::Explicit(RelaxationModel {
            flip_rate_per_spin: r.take("relaxation.flip_rate", 0.0)?,
            collective_flip_rate: r.take("relaxation.collective_flip_rate", 0.0)?,
            uncorrelated_dephasing_rate: ku,
            correlated_dephasing_rate: kc,
        }),
        other => {
            return Err(ConfigError::Invalid {
                key: "relaxation.mode".into(),
                message: format!("unknown mode '{other}' (calibrated, explicit, none)"),
                line: lines.get("relaxation.mode").copied().flatten(),
            })
        }
    };
    // keys that belong to another relaxation mode are rejected, not ignored
    for k in ["relaxation.t1", "relaxation.ts", "relaxation.flip_rate", "relaxation.collective_flip_rate"] {
        if r.has(k) {
            return Err(ConfigError::Invalid {
                key: k.into(),
                message: format!("not used with relaxation.mode = {mode}"),
                line: lines.get(k).copied().flatten(),
            });
        }
    }
    if mode == "none" && (lines.contains_key("relaxation.uncorrelated_dephasing") || lines.contains_key("relaxation.correlated_dephasing")) {
        let k = if lines.contains_key("relaxation.uncorrelated_dephasing") {
            "relaxation.uncorrelated_dephasing"
        } else {
            "relaxation.correlated_dephasing"
        };
        return Err(ConfigError::Invalid {
            key: k.into(),
            message: "not used with relaxation.mode = none".into(),
            line: lines.get(k).copied().flatten(),
        });
    }

    let noise = NoiseSettings {
        rms: r.take("noise.rms", d.noise.rms)?,
        correlation_time: r.take("noise.correlation_time", d.noise.correlation_time)?,
        correlation_coefficient: r.take("noise.correlation_coefficient", d.noise.correlation_coefficient)?,
        trajectories: r.take("noise.trajectories", d.noise.trajectories)?,
    };
    let propagation = PropagationConfig {
        dt: r.take("propagation.dt", d.propagation.dt)?,
        method: r.take("propagation.method", d.propagation.method)?,
        n_trajectories: noise.trajectories,
        record_stride: 0,
    };
    let prep = PrepSettings {
        initial: r.take("prep.initial", d.prep.initial)?,
        lock_mode: r.take("prep.lock_mode", d.prep.lock_mode)?,
        lock_amplitude: r.take("prep.lock_amplitude", d.prep.lock_amplitude)?,
        lock_duration: r.take("prep.lock_duration", d.prep.lock_duration)?,
        rf_scales: r.take_list("prep.rf_scales", d.prep.rf_scales.clone())?,
        rf_weights: r.take_list("prep.rf_weights", d.prep.rf_weights.clone())?,
        crusher: r.take("prep.crusher", d.prep.crusher)?,
        normalize: r.take("prep.normalize", d.prep.normalize)?,
    };
    let eit = EitSettings {
        probe_amplitude: r.take("eit.probe_amplitude", d.eit.probe_amplitude)?,
        control_amplitude: r.take("eit.control_amplitude", d.eit.control_amplitude)?,
        segment_duration: r.take("eit.segment_duration", d.eit.segment_duration)?,
        gap: r.take("eit.gap", d.eit.gap)?,
        sample_rate: r.take("eit.sample_rate", d.eit.sample_rate)?,
        rf_average: r.take("eit.rf_average", d.eit.rf_average)?,
    };
    let monitor = MonitorSettings {
        duration: r.take("monitor.duration", d.monitor.duration)?,
        interval: r.take("monitor.interval", d.monitor.interval)?,
    };
    let fig4a = Fig4aSettings {
        offset_min: r.take("fig4a.offset_min", d.fig4a.offset_min)?,
        offset_max: r.take("fig4a.offset_max", d.fig4a.offset_max)?,
        offset_step: r.take("fig4a.offset_step", d.fig4a.offset_step)?,
        repetitions: r.take("fig4a.repetitions", d.fig4a.repetitions)?,
        mode: r.take("fig4a.mode", d.fig4a.mode)?,
    };
    let fig4b = Fig4bSettings {
        ratio_min: r.take("fig4b.ratio_min", d.fig4b.ratio_min)?,
        ratio_max: r.take("fig4b.ratio_max", d.fig4b.ratio_max)?,
        ratio_step: r.take("fig4b.ratio_step", d.fig4b.ratio_step)?,
        reference_amplitude: r.take("fig4b.reference_amplitude", d.fig4b.reference_amplitude)?,
        repetitions: r.take("fig4b.repetitions", d.fig4b.repetitions)?,
    };
    let spectra = SpectraSettings {
        dwell: r.take("spectra.dwell", d.spectra.dwell)?,
        points: r.take("spectra.points", d.spectra.points)?,
        broadening: r.take("spectra.broadening", d.spectra.broadening)?,
        zero_fill: r.take("spectra.zero_fill", d.spectra.zero_fill)?,
        probe_duration: r.take("spectra.probe_duration", d.spectra.probe_duration)?,
        probe_flip: r.take("spectra.probe_flip", d.spectra.probe_flip)?,
        peak_threshold: r.take("spectra.peak_threshold", d.spectra.peak_threshold)?,
        window: r.take("spectra.window", d.spectra.window)?,
    };
    let optimize = OptimizeSettings {
        segments: r.take("optimize.segments", d.optimize.segments)?,
        total_duration: r.take("optimize.total_duration", d.optimize.total_duration)?,
        initial_amplitude: r.take("optimize.initial_amplitude", d.optimize.initial_amplitude)?,
        budget: r.take("optimize.budget", d.optimize.budget)?,
        dark_weight: r.take("optimize.dark_weight", d.optimize.dark_weight)?,
        rf_scales: r.take_list("optimize.rf_scales", d.optimize.rf_scales.clone())?,
        rf_weights: r.take_list("optimize.rf_weights", d.optimize.rf_weights.clone())?,
    };

    if let Some((key, (_, line))) = r.raw.into_iter().next() {
        return Err(ConfigError::UnknownKey { key, line });
    }
    let cfg = ExperimentConfig {
        scenario,
        seed,
        output,
        molecule,
        relaxation,
        noise,
        propagation,
        prep,
        eit,
        monitor,
        fig4a,
        fig4b,
        spectra,
        optimize,
    };
    validate(&cfg).map_err(|e| match e {
        ConfigError::Invalid { key, message, line: None } => {
            let line = lines.get(&key).copied().flatten();
            ConfigError::Invalid { key, message, line }
        }
        other => other,
    })?;
    Ok(cfg)
}

/// Upper bound on molecule frequencies and field amplitudes, Hz.
pub const MAX_FREQUENCY: f64 = 1e4;
/// Upper bound on relaxation rates, 1/s.
pub const MAX_RATE: f64 = 100.0;
/// Upper bound on lifetime targets, s.
pub const MAX_LIFETIME: f64 = 1e4;
/// Upper bound on the zero-filled transform length.
pub const MAX_ZERO_FILL: usize = 1 << 22;

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), message: message.into(), line: None }
}

fn positive(key: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(key, format!("must be a finite number > 0, got {v}")))
    }
}

fn non_negative(key: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(invalid(key, format!("must be a finite number ≥ 0, got {v}")))
    }
}

fn within(key: &str, v: f64, lo: f64, hi: f64) -> Result<(), ConfigError> {
    if v.is_finite() && (lo..=hi).contains(&v) {
        Ok(())
    } else {
        Err(invalid(key, format!("must lie in [{lo}, {hi}], got {v}")))
    }
}

fn at_least_one(key: &str, v: usize) -> Result<(), ConfigError> {
    if v >= 1 {
        Ok(())
    } else {
        Err(invalid(key, "must be ≥ 1"))
    }
}

/// Number of steps of size `step` in `span`, if it is a whole number.
pub fn whole_steps(span: f64, step: f64) -> Option<usize> {
    let n = (span / step).round();
    ((span - n * step).abs() <= 1e-9 * step.max(span.abs()) && n >= 0.0).then_some(n as usize)
}

fn grid(key_min: &str, key_step: &str, min: f64, max: f64, step: f64) -> Result<(), ConfigError> {
    if !(min.is_finite() && max.is_finite()) {
        return Err(invalid(key_min, "range ends must be finite"));
    }
    if min > max {
        return Err(invalid(key_min, format!("must not exceed the maximum ({min} > {max})")));
    }
    positive(key_step, step)?;
    if whole_steps(max - min, step).is_none() {
        return Err(invalid(key_step, format!("must divide the range [{min}, {max}] evenly")));
    }
    Ok(())
}

fn weighted_grid(key_scales: &str, key_weights: &str, scales: &[f64], weights: &[f64]) -> Result<(), ConfigError> {
    if scales.is_empty() {
        return Err(invalid(key_scales, "needs at least one scale"));
    }
    if let Some(s) = scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(invalid(key_scales, format!("scales must be > 0, got {s}")));
    }
    if scales.len() != weights.len() {
        return Err(invalid(key_weights, format!("has {} entries for {} scales", weights.len(), scales.len())));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(invalid(key_weights, "weights must be ≥ 0"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(invalid(key_weights, format!("weights must sum to 1, got {total}")));
    }
    Ok(())
}

/// Range checks; every error names the offending key.
pub fn validate(cfg: &ExperimentConfig) -> Result<(), ConfigError> {
    positive("molecule.delta_nu", cfg.molecule.delta_nu)?;
    within("molecule.delta_nu", cfg.molecule.delta_nu, 0.0, MAX_FREQUENCY)?;
    within("molecule.j_coupling", cfg.molecule.j_coupling, 0.0, MAX_FREQUENCY)?;
    match cfg.relaxation {
        RelaxationSpec::None => {}
        RelaxationSpec::Calibrated(t) => {
            within("relaxation.t1", t.t1, 1e-2, MAX_LIFETIME)?;
            within("relaxation.ts", t.ts, 1e-2, MAX_LIFETIME)?;
            within("relaxation.uncorrelated_dephasing", t.uncorrelated_dephasing_rate, 0.0, MAX_RATE)?;
            within("relaxation.correlated_dephasing", t.correlated_dephasing_rate, 0.0, MAX_RATE)?;
        }
        RelaxationSpec::Explicit(m) => {
            within("relaxation.flip_rate", m.flip_rate_per_spin, 0.0, MAX_RATE)?;
            within("relaxation.collective_flip_rate", m.collective_flip_rate, 0.0, MAX_RATE)?;
            within("relaxation.uncorrelated_dephasing", m.uncorrelated_dephasing_rate, 0.0, MAX_RATE)?;
            within("relaxation.correlated_dephasing", m.correlated_dephasing_rate, 0.0, MAX_RATE)?;
        }
    }

    within("noise.rms", cfg.noise.rms, 0.0, MAX_FREQUENCY)?;
    positive("noise.correlation_time", cfg.noise.correlation_time)?;
    if !(-1.0..=1.0).contains(&cfg.noise.correlation_coefficient) {
        return Err(invalid("noise.correlation_coefficient", "must lie in [-1, 1]"));
    }
    at_least_one("noise.trajectories", cfg.noise.trajectories)?;

    let dt = cfg.propagation.dt;
    positive("propagation.dt", dt)?;
    if dt > 1e-3 {
        return Err(invalid("propagation.dt", format!("must not exceed 1e-3 s, got {dt}")));
    }

    positive("prep.lock_amplitude", cfg.prep.lock_amplitude)?;
    within("prep.lock_amplitude", cfg.prep.lock_amplitude, 0.0, MAX_FREQUENCY)?;
    positive("prep.lock_duration", cfg.prep.lock_duration)?;
    weighted_grid("prep.rf_scales", "prep.rf_weights", &cfg.prep.rf_scales, &cfg.prep.rf_weights)?;

    let e = &cfg.eit;
    within("eit.probe_amplitude", e.probe_amplitude, 0.0, MAX_FREQUENCY)?;
    within("eit.control_amplitude", e.control_amplitude, 0.0, MAX_FREQUENCY)?;
    positive("eit.segment_duration", e.segment_duration)?;
    non_negative("eit.gap", e.gap)?;
    positive("eit.sample_rate", e.sample_rate)?;
    // every slice then spans exactly one propagation.dt
    if whole_steps(1.0 / e.sample_rate, dt).is_none_or(|n| n == 0) {
        return Err(invalid("eit.sample_rate", format!("sample interval must be a whole multiple of propagation.dt ({dt} s)")));
    }
    if whole_steps(e.segment_duration * e.sample_rate, 1.0).is_none() {
        return Err(invalid("eit.segment_duration", "must be a whole number of sample intervals"));
    }
    if e.gap > 0.0 && whole_steps(e.gap, dt).is_none() {
        return Err(invalid("eit.gap", "must be a whole number of propagation.dt steps"));
    }

    positive("monitor.interval", cfg.monitor.interval)?;
    positive("monitor.duration", cfg.monitor.duration)?;
    if whole_steps(cfg.monitor.interval, dt).is_none() {
        return Err(invalid("monitor.interval", format!("must be a whole multiple of propagation.dt ({dt} s)")));
    }
    if whole_steps(cfg.monitor.duration, cfg.monitor.interval).is_none() {
        return Err(invalid("monitor.duration", "must be a whole multiple of monitor.interval"));
    }

    let a = &cfg.fig4a;
    grid("fig4a.offset_min", "fig4a.offset_step", a.offset_min, a.offset_max, a.offset_step)?;
    at_least_one("fig4a.repetitions", a.repetitions)?;
    let b = &cfg.fig4b;
    grid("fig4b.ratio_min", "fig4b.ratio_step", b.ratio_min, b.ratio_max, b.ratio_step)?;
    if b.ratio_min < 0.0 {
        return Err(invalid("fig4b.ratio_min", "must be ≥ 0"));
    }
    positive("fig4b.reference_amplitude", b.reference_amplitude)?;
    within("fig4b.reference_amplitude", b.reference_amplitude, 0.0, MAX_FREQUENCY)?;
    at_least_one("fig4b.repetitions", b.repetitions)?;

    let s = &cfg.spectra;
    positive("spectra.dwell", s.dwell)?;
    if s.points < 2 {
        return Err(invalid("spectra.points", "must be ≥ 2"));
    }
    if s.dwell * s.points as f64 > metrics::MAX_ACQUISITION {
        return Err(invalid("spectra.points", format!("acquisition longer than {} s", metrics::MAX_ACQUISITION)));
    }
    if s.zero_fill > MAX_ZERO_FILL {
        return Err(invalid("spectra.zero_fill", format!("must not exceed {MAX_ZERO_FILL}")));
    }
    non_negative("spectra.broadening", s.broadening)?;
    positive("spectra.probe_duration", s.probe_duration)?;
    non_negative("spectra.probe_flip", s.probe_flip)?;
    if !(s.peak_threshold > 0.0 && s.peak_threshold < 1.0) {
        return Err(invalid("spectra.peak_threshold", "must lie in (0, 1)"));
    }
    positive("spectra.window", s.window)?;

    let o = &cfg.optimize;
    at_least_one("optimize.segments", o.segments)?;
    positive("optimize.total_duration", o.total_duration)?;
    at_least_one("optimize.budget", o.budget)?;
    let bounds = optctrl::ParamBounds::default();
    if !(bounds.amplitude.0..=bounds.amplitude.1).contains(&o.initial_amplitude) {
        return Err(invalid(
            "optimize.initial_amplitude",
            format!("must lie in [{}, {}] Hz", bounds.amplitude.0, bounds.amplitude.1),
        ));
    }
    if !(0.0..=1.0).contains(&o.dark_weight) {
        return Err(invalid("optimize.dark_weight", "must lie in [0, 1]"));
    }
    weighted_grid("optimize.rf_scales", "optimize.rf_weights", &o.rf_scales, &o.rf_weights)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        for sc in Scenario::ALL {
            let cfg = ExperimentConfig::new(sc);
            assert_eq!(parse_config(&cfg.emit()).unwrap(), cfg);
        }
    }

    #[test]
    fn locate_finds_section_keys() {
        let text = "scenario = fig3a\n[noise]\nrms = 1\n\n[propagation]\n dt = 0\n";
        assert_eq!(locate(text, "propagation", "dt", 0), Some(6));
        assert_eq!(locate(text, "", "scenario", 0), Some(1));
        assert_eq!(locate(text, "noise", "dt", 0), None);
    }

    #[test]
    fn whole_steps_tolerates_rounding() {
        assert_eq!(whole_steps(0.1, 2e-4), Some(500));
        assert_eq!(whole_steps(10.0, 0.25), Some(40));
        assert_eq!(whole_steps(1.0, 0.3), None);
    }

    #[test]
    fn override_splitting() {
        assert_eq!(split_override("noise.rms = 2").unwrap(), ("noise.rms".into(), "2".into()));
        assert!(split_override("noise.rms").is_err());
        assert!(split_override("=3").is_err());
    }

    #[test]
    fn known_keys_cover_both_relaxation_modes() {
        let k = known_keys();
        assert!(k.contains(&"relaxation.t1".to_string()));
        assert!(k.contains(&"relaxation.flip_rate".to_string()));
        assert!(k.contains(&"output".to_string()));
        let unique: HashSet<_> = k.iter().collect();
        assert_eq!(unique.len(), k.len());
    }
}
