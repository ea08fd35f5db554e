//! The figure scenarios. Each returns a [`ScenarioOutput`] whose CSV carries
//! the resolved configuration and every derived number needed to audit it.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};

use dynamics::{
    fit_relaxation_rates, measure_t1, measure_ts, propagator_superop, CalibrationTargets, Engine, FreePropagator,
    PropagationConfig, RelaxationModel, Step,
};
use metrics::{correlation, deviation_populations, find_peaks, simulate_fid, spectrum_zero_filled, SpectrumResult};
use numlin::{apply_super, hermitian_eigen, CMat, C64};
use optctrl::{ObjectiveSpec, PulseParameterization, RFDistribution};
use pulses::{
    gaussian_probe_segment, singlet_prep_sequence, spin_lock_segment, two_tone_segment_at, LockMode, PulseSegment,
    SeqItem, Sequence, StepOptions, TwoTone,
};
use rayon::prelude::*;
use spinsys::{
    basis_state, collective_rotation, equilibrium_deviation, internal_hamiltonian, probe_control_offsets,
    singlet_projector, singlet_triplet_states, spin_operators, DeviationMatrix, RFField, SpinError, SpinParams, L00,
    L01, L11,
};

use crate::config::{whole_steps, ExperimentConfig, InitialState, OffsetMode, RelaxationSpec, Scenario};
use crate::series::{num, write_csv, ResultSeries};
use crate::HarnessError;

impl From<SpinError> for HarnessError {
    fn from(e: SpinError) -> Self {
        HarnessError::Setting(e.to_string())
    }
}

/// Everything a scenario produces. Only `series` goes into the main CSV.
#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub series: ResultSeries,
    /// (trace name, spectrum) for the spectra scenario
    pub spectra: Vec<(String, SpectrumResult)>,
    /// optimized pulse, for the optimize scenario
    pub pulse_table: Option<Vec<PulseSegment>>,
    /// best objective after each evaluation, for the optimize scenario
    pub history: Option<Vec<f64>>,
}

impl ScenarioOutput {
    fn plain(series: ResultSeries) -> Self {
        ScenarioOutput { series, spectra: Vec::new(), pulse_table: None, history: None }
    }
}

/// Runs the configured scenario and returns its table.
pub fn run_scenario(cfg: &ExperimentConfig) -> Result<ResultSeries, HarnessError> {
    Ok(run(cfg)?.series)
}

pub fn run(cfg: &ExperimentConfig) -> Result<ScenarioOutput, HarnessError> {
    crate::config::validate(cfg)?;
    let (model, source) = resolve_relaxation(cfg)?;
    let mut inv = Invariants::default();
    let mut out = match cfg.scenario {
        Scenario::Lifetimes => lifetimes(cfg, &model, &mut inv)?,
        Scenario::Fig3a => fig3a(cfg, &model, &mut inv)?,
        Scenario::Fig3b => fig3b(cfg, &model, &mut inv)?,
        Scenario::Fig4a => fig4a(cfg, &model, &mut inv)?,
        Scenario::Fig4b => fig4b(cfg, &model, &mut inv)?,
        Scenario::Spectra => spectra(cfg, &model, &mut inv)?,
        Scenario::Optimize => optimize(cfg)?,
    };
    let mut head = vec![
        ("darksim".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("scenario".into(), cfg.scenario.to_string()),
        ("seed".into(), cfg.seed.to_string()),
        ("config".into(), cfg.emit().trim().to_string()),
        ("relaxation.source".into(), source.to_string()),
        ("relaxation.rates_per_s".into(), describe_model(&model)),
    ];
    if inv.states > 0 {
        head.push(("invariants".into(), inv.describe()));
    }
    head.append(&mut out.series.metadata);
    out.series.metadata = head;
    out.series.check()?;
    Ok(out)
}

fn describe_model(m: &RelaxationModel) -> String {
    format!(
        "flip_rate={} collective_flip_rate={} uncorrelated_dephasing={} correlated_dephasing={}",
        num(m.flip_rate_per_spin),
        num(m.collective_flip_rate),
        num(m.uncorrelated_dephasing_rate),
        num(m.correlated_dephasing_rate)
    )
}

type CalibrationKey = (CalibrationTargets, f64, SpinParams);

fn calibration_cache() -> &'static Mutex<Vec<(CalibrationKey, RelaxationModel)>> {
    static CACHE: OnceLock<Mutex<Vec<(CalibrationKey, RelaxationModel)>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(Vec::new()))
}

/// The relaxation model and where it came from. Calibration runs once per
/// distinct (targets, lock amplitude, molecule) in a process.
pub fn resolve_relaxation(cfg: &ExperimentConfig) -> Result<(RelaxationModel, &'static str), HarnessError> {
    match cfg.relaxation {
        RelaxationSpec::None => Ok((RelaxationModel::zero(), "none")),
        RelaxationSpec::Explicit(m) => {
            m.validate()?;
            Ok((m, "explicit"))
        }
        RelaxationSpec::Calibrated(t) => {
            let key = (t, cfg.prep.lock_amplitude, cfg.molecule);
            if let Some((_, m)) = calibration_cache().lock().unwrap().iter().find(|(k, _)| *k == key) {
                return Ok((*m, "calibrated"));
            }
            let m = fit_relaxation_rates(&t, &RFField::on_resonance(cfg.prep.lock_amplitude), &cfg.molecule)?;
            calibration_cache().lock().unwrap().push((key, m));
            Ok((m, "calibrated"))
        }
    }
}

/// Trace, Hermiticity and positivity of every state a scenario records.
///
/// Positivity is checked on 1/4 + λ·Δ with λ chosen so the starting state of
/// each run sits on the boundary of the positive cone; unital relaxation,
/// unitary drives and noise averages all keep it there or inside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Invariants {
    pub states: usize,
    pub max_trace: f64,
    pub max_hermiticity: f64,
    pub min_eigenvalue: f64,
}

impl Default for Invariants {
    fn default() -> Self {
        Invariants { states: 0, max_trace: 0.0, max_hermiticity: 0.0, min_eigenvalue: f64::INFINITY }
    }
}

pub const INVARIANT_TOL: f64 = 1e-9;

impl Invariants {
    /// λ for a run starting from the deviation `start`.
    pub fn scale_for(start: &CMat) -> Result<f64, HarnessError> {
        let low = hermitian_eigen(&start.hermitian_part()).map_err(|e| HarnessError::Numeric(e.to_string()))?.values[0];
        if low >= 0.0 {
            return Err(HarnessError::Numeric("initial deviation has no negative eigenvalue".into()));
        }
        Ok(1.0 / (4.0 * -low))
    }

    pub fn observe(&mut self, dev: &CMat, lambda: f64) -> Result<(), HarnessError> {
        let scale = dev.frobenius_norm().max(1.0);
        let tr = dev.trace().norm() / scale;
        let herm = dev.hermiticity_error();
        let mut rho = dev.hermitian_part().scale_re(lambda);
        for i in 0..4 {
            rho[(i, i)] += C64::new(0.25, 0.0);
        }
        let low = hermitian_eigen(&rho).map_err(|e| HarnessError::Numeric(e.to_string()))?.values[0];
        self.states += 1;
        self.max_trace = self.max_trace.max(tr);
        self.max_hermiticity = self.max_hermiticity.max(herm);
        self.min_eigenvalue = self.min_eigenvalue.min(low);
        if tr > INVARIANT_TOL || herm > INVARIANT_TOL || low < -INVARIANT_TOL {
            return Err(HarnessError::Numeric(format!(
                "state invariant violated: |trace| = {tr:e}, hermiticity error = {herm:e}, lowest eigenvalue = {low:e}"
            )));
        }
        Ok(())
    }

    pub fn observe_all<'a>(&mut self, states: impl IntoIterator<Item = &'a CMat>, lambda: f64) -> Result<(), HarnessError> {
        for s in states {
            self.observe(s, lambda)?;
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        format!(
            "states={} max_trace={} max_hermiticity_error={} min_eigenvalue={}",
            self.states,
            num(self.max_trace),
            num(self.max_hermiticity),
            num(self.min_eigenvalue)
        )
    }
}

fn engine(cfg: &ExperimentConfig, model: &RelaxationModel, record_stride: usize) -> Result<Engine, HarnessError> {
    let pc = PropagationConfig { record_stride, n_trajectories: cfg.noise.trajectories, ..cfg.propagation };
    Ok(Engine::new(internal_hamiltonian(&cfg.molecule), *model, pc)?)
}

/// Weighted sum of matrices in the given order.
fn weighted_sum<'a>(terms: impl IntoIterator<Item = (f64, &'a CMat)>) -> CMat {
    let mut acc = CMat::zeros(4);
    for (w, m) in terms {
        acc += &m.scale_re(w);
    }
    acc
}

// ---------------------------------------------------------------- preparation

/// Singlet order prepared by the hard-pulse block and the spin-lock.
#[derive(Debug, Clone)]
pub struct Preparation {
    /// deviation handed to the irradiation stage (after crusher and normalization)
    pub state: CMat,
    /// RF-averaged deviation at the end of the lock
    pub after_lock: CMat,
    pub correlation_after_lock: f64,
    /// correlation after the lock as mechanisms are switched on one at a time:
    /// ideal lock without relaxation, the configured lock, relaxation (which
    /// drains the triplet part and so raises the value), RF spread
    pub stages: [f64; 4],
}

fn prep_sequence(cfg: &ExperimentConfig, mode: LockMode) -> Result<Sequence, HarnessError> {
    let mut seq = singlet_prep_sequence(&cfg.molecule)?;
    seq.push(spin_lock_segment(cfg.prep.lock_duration, cfg.prep.lock_amplitude, mode)?);
    Ok(seq)
}

fn after_lock(
    cfg: &ExperimentConfig,
    model: &RelaxationModel,
    mode: LockMode,
    grid: &[(f64, f64)],
) -> Result<CMat, HarnessError> {
    let seq = prep_sequence(cfg, mode)?;
    let eng = engine(cfg, model, 0)?;
    let eq = equilibrium_deviation().into_mat();
    let finals: Vec<CMat> = grid
        .par_iter()
        .map(|&(s, _)| {
            let steps = seq.steps(&cfg.molecule, &StepOptions { dt: cfg.propagation.dt, rf_scale: s });
            eng.run(&eq, 0.0, &steps).map(|e| e.final_state)
        })
        .collect::<Result<_, _>>()?;
    Ok(weighted_sum(grid.iter().zip(&finals).map(|(g, f)| (g.1, f))))
}

/// Runs the preparation under `model`, averaged over the configured RF grid.
/// With `prep.initial = singlet` the exact singlet deviation is used instead.
pub fn prepare_singlet(cfg: &ExperimentConfig, model: &RelaxationModel) -> Result<Preparation, HarnessError> {
    let target = singlet_projector();
    if cfg.prep.initial == InitialState::Singlet {
        let state = DeviationMatrix::project(&target).into_mat();
        return Ok(Preparation { after_lock: state.clone(), state, correlation_after_lock: 1.0, stages: [1.0; 4] });
    }
    let one = [(1.0, 1.0)];
    let zero = RelaxationModel::zero();
    let c = |rho: &CMat| correlation(rho, &target).map_err(HarnessError::from);
    let ideal = c(&after_lock(cfg, &zero, LockMode::IdealEquivalence, &one)?)?;
    let locked = c(&after_lock(cfg, &zero, cfg.prep.lock_mode, &one)?)?;
    let relaxed = c(&after_lock(cfg, model, cfg.prep.lock_mode, &one)?)?;
    let rho = after_lock(cfg, model, cfg.prep.lock_mode, &cfg.prep_grid())?;
    let full = c(&rho)?;

    let mut state = if cfg.prep.crusher { dynamics::zero_quantum_filter(&rho) } else { rho.clone() };
    state = DeviationMatrix::project(&state).into_mat();
    if cfg.prep.normalize {
        let n = state.frobenius_norm();
        if n < metrics::ZERO_DEVIATION_TOL {
            return Err(HarnessError::Numeric("preparation left no deviation".into()));
        }
        // the norm of the pure singlet's deviation
        state = state.scale_re(0.75f64.sqrt() / n);
    }
    Ok(Preparation { state, after_lock: rho, correlation_after_lock: full, stages: [ideal, locked, relaxed, full] })
}

fn prep_metadata(series: &mut ResultSeries, cfg: &ExperimentConfig, prep: &Preparation) {
    if cfg.prep.initial == InitialState::Singlet {
        series.meta("prep.correlation_initial", num(1.0));
        return;
    }
    let [ideal, locked, relaxed, full] = prep.stages;
    series.meta("prep.correlation_after_lock", num(full));
    series.meta(
        "prep.stages",
        format!(
            "ideal_lock={} configured_lock={} plus_relaxation={} plus_rf_spread={}",
            num(ideal),
            num(locked),
            num(relaxed),
            num(full)
        ),
    );
    let st = correlation(&prep.state, &singlet_projector()).unwrap_or(f64::NAN);
    series.meta("prep.correlation_initial", num(st));
}

// ---------------------------------------------------------------- irradiation

/// The three irradiation conditions of the decay experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    Free,
    ProbeOnly,
    ProbeControl,
}

fn tones(cfg: &ExperimentConfig, probe_amp: f64, control_amp: f64, shift: (f64, f64)) -> Result<TwoTone, HarnessError> {
    let (fp, fc) = probe_control_offsets(&cfg.molecule)?;
    Ok(TwoTone { probe_amp, control_amp, probe_offset: fp + shift.0, control_offset: fc + shift.1 })
}

/// `count` back-to-back segments from t = 0 separated by the configured gap,
/// as slices of one propagation step each. Tone phases run on continuously.
fn train(cfg: &ExperimentConfig, tt: &TwoTone, count: usize, scale: f64) -> Result<Vec<Step>, HarnessError> {
    let dt = cfg.propagation.dt;
    let e = &cfg.eit;
    let n_gap = if e.gap > 0.0 { whole_steps(e.gap, dt).unwrap_or(0) } else { 0 };
    let mut steps = Vec::new();
    for k in 0..count {
        if k > 0 {
            steps.extend((0..n_gap).map(|_| Step::Slice { dt, field: C64::new(0.0, 0.0) }));
        }
        let start = k as f64 * (e.segment_duration + e.gap);
        let seg = two_tone_segment_at(e.segment_duration, tt, start, e.sample_rate)?;
        steps.extend(seg.steps(dt, scale));
    }
    Ok(steps)
}

fn condition_steps(cfg: &ExperimentConfig, cond: Condition, n_slices: usize, scale: f64) -> Result<Vec<Step>, HarnessError> {
    let dt = cfg.propagation.dt;
    let e = &cfg.eit;
    let tt = match cond {
        Condition::Free => return Ok(vec![Step::Slice { dt, field: C64::new(0.0, 0.0) }; n_slices]),
        Condition::ProbeOnly => tones(cfg, e.probe_amplitude, 0.0, (0.0, 0.0))?,
        Condition::ProbeControl => tones(cfg, e.probe_amplitude, e.control_amplitude, (0.0, 0.0))?,
    };
    let period = e.segment_duration + e.gap;
    let count = (n_slices as f64 * dt / period).ceil() as usize + 1;
    let mut steps = train(cfg, &tt, count, scale)?;
    steps.truncate(n_slices);
    Ok(steps)
}

/// States in the free-evolution interaction frame at t = k·interval,
/// averaged over noise and (optionally) the RF grid.
fn monitor(
    cfg: &ExperimentConfig,
    model: &RelaxationModel,
    rho0: &CMat,
    cond: Condition,
) -> Result<Vec<CMat>, HarnessError> {
    let dt = cfg.propagation.dt;
    let stride = whole_steps(cfg.monitor.interval, dt).expect("validated");
    let rows = whole_steps(cfg.monitor.duration, cfg.monitor.interval).expect("validated");
    let n_slices = stride * rows;
    let eng = engine(cfg, model, stride)?;
    let noise = cfg.noise_process();
    let grid = if cfg.eit.rf_average { cfg.prep_grid() } else { vec![(1.0, 1.0)] };
    let mut runs = Vec::with_capacity(grid.len());
    for &(s, _) in &grid {
        let steps = condition_steps(cfg, cond, n_slices, s)?;
        let ev = eng.run_averaged(rho0, 0.0, &steps, &noise)?;
        if ev.samples.len() != rows + 1 {
            return Err(HarnessError::Numeric(format!("expected {} samples, got {}", rows + 1, ev.samples.len())));
        }
        runs.push(ev.samples);
    }
    let frame = FreePropagator::new(&internal_hamiltonian(&cfg.molecule))?;
    Ok((0..=rows)
        .map(|k| {
            let lab = weighted_sum(grid.iter().zip(&runs).map(|((_, w), r)| (*w, &r[k].rho)));
            frame.to_interaction_frame(&lab, k as f64 * cfg.monitor.interval)
        })
        .collect())
}

fn times(cfg: &ExperimentConfig, n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 * cfg.monitor.interval).collect()
}

fn fig3a(cfg: &ExperimentConfig, model: &RelaxationModel, inv: &mut Invariants) -> Result<ScenarioOutput, HarnessError> {
    let prep = prepare_singlet(cfg, model)?;
    let lambda = Invariants::scale_for(&prep.state)?;
    let target = singlet_projector();
    let mut cols = Vec::new();
    for cond in [Condition::Free, Condition::ProbeOnly, Condition::ProbeControl] {
        let states = monitor(cfg, model, &prep.state, cond)?;
        inv.observe_all(&states, lambda)?;
        cols.push(states.iter().map(|r| correlation(r, &target)).collect::<Result<Vec<_>, _>>()?);
    }
    let mut series = ResultSeries::new(&["t_s", "corr_free", "corr_probe", "corr_probe_control"]);
    for (k, t) in times(cfg, cols[0].len()).into_iter().enumerate() {
        series.push_row(vec![t, cols[0][k], cols[1][k], cols[2][k]]);
    }
    prep_metadata(&mut series, cfg, &prep);
    Ok(ScenarioOutput::plain(series))
}

fn fig3b(cfg: &ExperimentConfig, model: &RelaxationModel, inv: &mut Invariants) -> Result<ScenarioOutput, HarnessError> {
    let prep = prepare_singlet(cfg, model)?;
    let lambda = Invariants::scale_for(&prep.state)?;
    let states = monitor(cfg, model, &prep.state, Condition::ProbeControl)?;
    inv.observe_all(&states, lambda)?;
    let mut series = ResultSeries::new(&["t_s", "P00", "P01", "P10", "P11"]);
    for (t, r) in times(cfg, states.len()).into_iter().zip(&states) {
        let p = deviation_populations(r);
        series.push_row(vec![t, p[0], p[1], p[2], p[3]]);
    }
    prep_metadata(&mut series, cfg, &prep);
    Ok(ScenarioOutput::plain(series))
}

// ---------------------------------------------------------------- sweeps

fn sweep_values(min: f64, max: f64, step: f64) -> Vec<f64> {
    let n = whole_steps(max - min, step).expect("validated");
    (0..=n).map(|k| min + k as f64 * step).collect()
}

/// Correlation with the singlet after `reps` segments of `tt`, starting from
/// the singlet, read in the interaction frame at the end of the train.
fn dark_correlation(
    cfg: &ExperimentConfig,
    eng: &Engine,
    frame: &FreePropagator,
    tt: &TwoTone,
    reps: usize,
) -> Result<(f64, CMat), HarnessError> {
    let target = singlet_projector();
    let rho0 = DeviationMatrix::project(&target).into_mat();
    let steps = train(cfg, tt, reps, 1.0)?;
    let t_end: f64 = steps.iter().map(Step::duration).sum();
    let ev = eng.run(&rho0, 0.0, &steps)?;
    let r = frame.to_interaction_frame(&ev.final_state, t_end);
    Ok((correlation(&r, &target)?, r))
}

fn sweep(
    cfg: &ExperimentConfig,
    model: &RelaxationModel,
    inv: &mut Invariants,
    values: &[f64],
    reps: usize,
    tones_for: impl Fn(f64) -> Result<TwoTone, HarnessError> + Sync,
) -> Result<Vec<f64>, HarnessError> {
    let eng = engine(cfg, model, 0)?;
    let frame = FreePropagator::new(&internal_hamiltonian(&cfg.molecule))?;
    let out: Vec<(f64, CMat)> = values
        .par_iter()
        .map(|&v| dark_correlation(cfg, &eng, &frame, &tones_for(v)?, reps))
        .collect::<Result<_, _>>()?;
    let lambda = Invariants::scale_for(&DeviationMatrix::project(&singlet_projector()).into_mat())?;
    inv.observe_all(out.iter().map(|o| &o.1), lambda)?;
    Ok(out.into_iter().map(|o| o.0).collect())
}

fn fig4a(cfg: &ExperimentConfig, model: &RelaxationModel, inv: &mut Invariants) -> Result<ScenarioOutput, HarnessError> {
    let a = &cfg.fig4a;
    let offsets = sweep_values(a.offset_min, a.offset_max, a.offset_step);
    let (pa, ca) = (cfg.eit.probe_amplitude, cfg.eit.control_amplitude);
    let corr = sweep(cfg, model, inv, &offsets, a.repetitions, |d| {
        let shift = match a.mode {
            OffsetMode::Differential => (d, -d),
            OffsetMode::Common => (d, d),
        };
        tones(cfg, pa, ca, shift)
    })?;
    let mut series = ResultSeries::new(&["offset_Hz", "correlation"]);
    for (d, c) in offsets.iter().zip(&corr) {
        series.push_row(vec![*d, *c]);
    }
    series.meta("fig4a.irradiation_s", num(a.repetitions as f64 * cfg.eit.segment_duration + (a.repetitions - 1) as f64 * cfg.eit.gap));
    if let Some(k) = offsets.iter().position(|d| (d - 1.0).abs() < 1e-9) {
        series.meta("result.correlation_at_1Hz", num(corr[k]));
    }
    Ok(ScenarioOutput::plain(series))
}

fn fig4b(cfg: &ExperimentConfig, model: &RelaxationModel, inv: &mut Invariants) -> Result<ScenarioOutput, HarnessError> {
    let b = &cfg.fig4b;
    let ratios = sweep_values(b.ratio_min, b.ratio_max, b.ratio_step);
    let nu0 = b.reference_amplitude;
    let corr = sweep(cfg, model, inv, &ratios, b.repetitions, |r| tones(cfg, r * nu0, nu0, (0.0, 0.0)))?;
    let mut series = ResultSeries::new(&["ratio", "correlation"]);
    for (r, c) in ratios.iter().zip(&corr) {
        series.push_row(vec![*r, *c]);
    }
    let best = corr.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).map(|(i, _)| ratios[i]).unwrap_or(f64::NAN);
    series.meta("result.argmax_ratio", num(best));
    Ok(ScenarioOutput::plain(series))
}

// ---------------------------------------------------------------- lifetimes

fn lifetimes(cfg: &ExperimentConfig, model: &RelaxationModel, inv: &mut Invariants) -> Result<ScenarioOutput, HarnessError> {
    let p = &cfg.molecule;
    let lock = RFField::on_resonance(cfg.prep.lock_amplitude);
    // a fit fails when the decay outruns the sampling grid; that is a numeric
    // outcome of valid settings, not a bad setting
    let t1 = measure_t1(model, p).map_err(|e| HarnessError::Numeric(format!("T1 fit: {e}")))?;
    let ts = measure_ts(model, p, &lock).map_err(|e| HarnessError::Numeric(format!("Ts fit: {e}")))?;

    let ops = spin_operators();
    let s0 = singlet_triplet_states().s0;
    let step = 0.25;
    let free = propagator_superop(&internal_hamiltonian(p), model, step)?;
    let locked = propagator_superop(&(&internal_hamiltonian(p) + &spinsys::rf_hamiltonian(&lock, 0.0)), model, step)?;
    let mut inv_state = ops.iz12.scale_re(-1.0);
    let mut st_state = DeviationMatrix::project(&s0.projector()).into_mat();
    let m0 = (&ops.iz12 * &inv_state).trace().re;
    let s00 = s0.matrix_element(&st_state, &s0).re;
    let (l_inv, l_st) = (Invariants::scale_for(&inv_state)?, Invariants::scale_for(&st_state)?);
    // both columns are normalized to 1 at t = 0
    let mut series = ResultSeries::new(&["t_s", "inversion", "singlet_order"]);
    for k in 0..=120 {
        if k > 0 {
            inv_state = apply_super(&free, &inv_state);
            st_state = apply_super(&locked, &st_state);
        }
        inv.observe(&inv_state, l_inv)?;
        inv.observe(&st_state, l_st)?;
        let m = (&ops.iz12 * &inv_state).trace().re / m0;
        let s = s0.matrix_element(&st_state, &s0).re / s00;
        series.push_row(vec![k as f64 * step, m, s]);
    }
    series.meta("result.t1_fit_s", num(t1.tau));
    series.meta("result.ts_fit_s", num(ts.tau));
    series.meta("result.ts_over_t1", num(ts.tau / t1.tau));
    Ok(ScenarioOutput::plain(series))
}

// ---------------------------------------------------------------- spectra

fn spectra(cfg: &ExperimentConfig, model: &RelaxationModel, inv: &mut Invariants) -> Result<ScenarioOutput, HarnessError> {
    let p = &cfg.molecule;
    let s = &cfg.spectra;
    let eq = equilibrium_deviation().into_mat();
    let lambda = Invariants::scale_for(&eq)?;
    let eng = engine(cfg, model, 0)?;
    let opts = StepOptions { dt: cfg.propagation.dt, rf_scale: 1.0 };

    let reference = collective_rotation(PI / 2.0, PI / 2.0).conjugate(&eq);
    let gauss = gaussian_probe_segment(s.probe_duration, (L00, L01), p, s.probe_flip.to_radians())?;
    let probe = eng.run(&eq, 0.0, &Sequence::from_items(vec![SeqItem::Pulse(gauss)]).steps(p, &opts))?.final_state;
    let tt = tones(cfg, cfg.eit.probe_amplitude, cfg.eit.control_amplitude, (0.0, 0.0))?;
    let both = eng.run(&eq, 0.0, &train(cfg, &tt, 1, 1.0)?)?.final_state;
    inv.observe_all([&reference, &probe, &both], lambda)?;

    let names = ["reference", "probe_only", "probe_control"];
    let specs: Vec<SpectrumResult> = [&reference, &probe, &both]
        .par_iter()
        .map(|rho| {
            let fid = simulate_fid(rho, p, model, s.dwell, s.points, s.broadening)?;
            Ok(spectrum_zero_filled(&fid, s.dwell, s.zero_fill).with_broadening(s.broadening))
        })
        .collect::<Result<_, HarnessError>>()?;

    let mut series = ResultSeries::new(&["frequency_Hz", "reference", "probe_only", "probe_control"]);
    let mags: Vec<Vec<f64>> = specs.iter().map(|sp| sp.magnitudes()).collect();
    for (i, f) in specs[0].frequencies.iter().enumerate() {
        if f.abs() <= s.window {
            series.push_row(vec![*f, mags[0][i], mags[1][i], mags[2][i]]);
        }
    }
    for (name, sp) in names.iter().zip(&specs) {
        let peaks = find_peaks(sp, s.peak_threshold);
        let list: Vec<String> = peaks.iter().map(|pk| format!("{}@{}", num(pk.frequency), num(pk.magnitude))).collect();
        series.meta(format!("peaks.{name}"), list.join(" "));
    }
    Ok(ScenarioOutput {
        series,
        spectra: names.iter().map(|n| n.to_string()).zip(specs).collect(),
        pulse_table: None,
        history: None,
    })
}

// ---------------------------------------------------------------- optimize

fn optimize(cfg: &ExperimentConfig) -> Result<ScenarioOutput, HarnessError> {
    let p = &cfg.molecule;
    let o = &cfg.optimize;
    let spec = ObjectiveSpec::new(singlet_triplet_states().s0, basis_state(L11), o.dark_weight, 1.0 - o.dark_weight)?;
    let dist = RFDistribution::new(o.rf_scales.iter().copied().zip(o.rf_weights.iter().copied()).collect())?;
    let init = PulseParameterization::naive(o.segments, o.total_duration, o.initial_amplitude)?;
    let result = optctrl::optimize_pulse(&init, &dist, &spec, p, o.budget)?;

    let ev = optctrl::FidelityEvaluator::new(p, &spec)?;
    let (naive, best) = (init.to_segments(p)?, result.best.to_segments(p)?);
    let mut series = ResultSeries::new(&["rf_scale", "weight", "naive_fidelity", "optimized_fidelity"]);
    let (mut worst_naive, mut worst_opt) = (f64::INFINITY, f64::INFINITY);
    for &(s, w) in dist.points() {
        let (a, b) = (ev.fidelity(&naive, s), ev.fidelity(&best, s));
        worst_naive = worst_naive.min(a);
        worst_opt = worst_opt.min(b);
        series.push_row(vec![s, w, a, b]);
    }
    series.meta("result.naive_average", num(ev.average(&naive, &dist)));
    series.meta("result.optimized_average", num(ev.average(&best, &dist)));
    series.meta("result.naive_worst", num(worst_naive));
    series.meta("result.optimized_worst", num(worst_opt));
    series.meta("result.evaluations", result.history.len().to_string());
    Ok(ScenarioOutput { series, spectra: Vec::new(), pulse_table: Some(best), history: Some(result.history) })
}

// ---------------------------------------------------------------- output

/// Sibling of `csv` named `<stem>.<suffix>`.
pub fn side_path(csv: &Path, suffix: &str) -> PathBuf {
    let stem = csv.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "darksim".into());
    csv.with_file_name(format!("{stem}.{suffix}"))
}

/// Writes the CSV and any side files (spectra, pulse table, history) next to
/// it. Returns every path written.
pub fn write_outputs(out: &ScenarioOutput, csv: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    write_csv(&out.series, csv)?;
    let mut written = vec![csv.to_path_buf()];
    for (name, sp) in &out.spectra {
        let path = side_path(csv, &format!("{name}.spectrum.txt"));
        metrics::export_spectrum(&path, sp, true)?;
        written.push(path);
    }
    if let Some(segs) = &out.pulse_table {
        let path = side_path(csv, "pulse.txt");
        pulses::export_pulse_table(&path, segs)?;
        written.push(path);
    }
    if let Some(h) = &out.history {
        let path = side_path(csv, "history.csv");
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
        optctrl::write_history(h, &mut f)?;
        std::io::Write::flush(&mut f)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_grid_is_exact() {
        let v = sweep_values(-5.0, 5.0, 0.25);
        assert_eq!(v.len(), 41);
        assert_eq!(v[20], 0.0);
        assert_eq!(v[24], 1.0);
        assert_eq!(sweep_values(0.0, 2.0, 0.05).len(), 41);
    }

    #[test]
    fn side_paths_share_the_stem() {
        assert_eq!(side_path(Path::new("/tmp/run.csv"), "pulse.txt"), PathBuf::from("/tmp/run.pulse.txt"));
        assert_eq!(side_path(Path::new("out"), "history.csv"), PathBuf::from("out.history.csv"));
    }

    #[test]
    fn invariants_accept_the_pure_singlet_and_reject_overshoot() {
        let dev = DeviationMatrix::project(&singlet_projector()).into_mat();
        let lambda = Invariants::scale_for(&dev).unwrap();
        let mut inv = Invariants::default();
        inv.observe(&dev, lambda).unwrap();
        assert!(inv.min_eigenvalue.abs() < 1e-12);
        assert!(inv.observe(&dev.scale_re(1.01), lambda).is_err());
    }

    #[test]
    fn train_slices_are_one_step_wide_and_phase_continuous() {
        let cfg = ExperimentConfig::new(Scenario::Fig4a);
        let tt = tones(&cfg, 1.5, 1.5, (0.0, 0.0)).unwrap();
        let steps = train(&cfg, &tt, 2, 1.0).unwrap();
        assert_eq!(steps.len(), 2400);
        for s in &steps {
            assert!((s.duration() - cfg.propagation.dt).abs() < 1e-15);
        }
        // the summed field is a smooth function of absolute time
        let fields: Vec<C64> = steps.iter().map(|s| if let Step::Slice { field, .. } = s { *field } else { unreachable!() }).collect();
        for k in [1199usize, 1200] {
            let t = (k as f64 + 0.5) * cfg.propagation.dt;
            assert!((fields[k] - tt.field(t)).norm() < 1e-9);
        }
    }
}
