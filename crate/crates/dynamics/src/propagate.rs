use std::f64::consts::PI;

use numlin::{exp_from_eigen, expm, hermitian_eigen, mat_exp_hermitian, CMat, C64};
use rayon::prelude::*;
use spinsys::collective_field;

use crate::kernel::{self, M4, S16};
use crate::{
    dissipator, lindblad_superoperator, zero_quantum_filter, DynError, Method, NoiseProcess, OuPair,
    PropagationConfig, RelaxationModel,
};

/// One element of a piecewise evolution.
#[derive(Debug, Clone)]
pub enum Step {
    /// static Hamiltonian plus a collective field held constant for `dt`
    Slice { dt: f64, field: C64 },
    /// a constant Hamiltonian (replacing the static one) for `duration`, integrated exactly
    Hold { duration: f64, h: CMat },
    /// instantaneous unitary, e.g. an ideal hard pulse
    Unitary(CMat),
    /// instantaneous removal of non-zero-quantum coherence
    ZeroQuantumFilter,
}

impl Step {
    pub fn duration(&self) -> f64 {
        match self {
            Step::Slice { dt, .. } => *dt,
            Step::Hold { duration, .. } => *duration,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub t: f64,
    pub rho: CMat,
}

#[derive(Debug, Clone)]
pub struct Evolution {
    pub final_state: CMat,
    pub samples: Vec<Sample>,
}

/// Static Hamiltonian plus an optional collective field b(t) (Hz), so that
/// H(t) = H_static + Re b·I_x^{12} + Im b·I_y^{12}.
pub struct Drive<'a> {
    pub static_h: CMat,
    pub field: Option<&'a (dyn Fn(f64) -> C64 + Sync)>,
}

impl<'a> Drive<'a> {
    pub fn free(static_h: CMat) -> Self {
        Drive { static_h, field: None }
    }

    pub fn driven(static_h: CMat, field: &'a (dyn Fn(f64) -> C64 + Sync)) -> Self {
        Drive { static_h, field: Some(field) }
    }

    pub fn hamiltonian(&self, t: f64) -> CMat {
        match self.field {
            Some(f) => &self.static_h + &collective_field(f(t)),
            None => self.static_h.clone(),
        }
    }

    /// Uniform slices no longer than `dt` covering [t0, t1], field sampled at midpoints.
    pub fn slices(&self, t0: f64, t1: f64, dt: f64) -> Vec<Step> {
        let span = t1 - t0;
        if span <= 0.0 {
            return Vec::new();
        }
        let n = ((span / dt) - 1e-9).ceil().max(1.0) as usize;
        let h = span / n as f64;
        (0..n)
            .map(|k| {
                let mid = t0 + (k as f64 + 0.5) * h;
                let field = self.field.map_or(C64::new(0.0, 0.0), |f| f(mid));
                Step::Slice { dt: h, field }
            })
            .collect()
    }
}

/// Per-run propagation machinery for one static Hamiltonian and relaxation model.
pub struct Engine {
    h_static: CMat,
    model: RelaxationModel,
    cfg: PropagationConfig,
    dissipator: CMat,
    channels: Vec<M4>,
    /// Σ A†A over channels
    loss: M4,
}

/// Everything that does not depend on the noise realisation.
struct Prepared {
    /// exp(dt·dissipator) keyed by dt
    dissipators: Vec<(f64, Box<S16>)>,
    /// per step: exact unitary for Split slices, superoperator or unitary for holds
    per_step: Vec<Option<StepOp>>,
}

#[derive(Clone)]
enum StepOp {
    Unitary(M4),
    Super(std::sync::Arc<S16>),
}

/// diag(I_z¹) and diag(I_z²)
const M1: [f64; 4] = [0.5, 0.5, -0.5, -0.5];
const M2: [f64; 4] = [0.5, -0.5, 0.5, -0.5];

impl Engine {
    pub fn new(h_static: CMat, model: RelaxationModel, cfg: PropagationConfig) -> Result<Self, DynError> {
        cfg.validate()?;
        model.validate()?;
        if !h_static.is_hermitian(numlin::HERMITIAN_TOL) {
            return Err(numlin::NumError::NotHermitian { deviation: h_static.hermiticity_error() }.into());
        }
        let chans: Vec<CMat> = model.channels();
        let mut loss = CMat::zeros(4);
        for a in &chans {
            loss += &(&a.adjoint() * a);
        }
        Ok(Engine {
            dissipator: dissipator(&model),
            channels: chans.iter().map(kernel::to_m4).collect(),
            loss: kernel::to_m4(&loss),
            h_static,
            model,
            cfg,
        })
    }

    pub fn config(&self) -> &PropagationConfig {
        &self.cfg
    }

    /// Rejects slices that under-resolve the field or the relaxation.
    pub fn check(&self, steps: &[Step]) -> Result<(), DynError> {
        let rate = self.model.max_rate();
        for s in steps {
            if let Step::Slice { dt, field } = s {
                let product = dt * (rate + field.norm());
                if product > 0.1 + 1e-12 {
                    return Err(DynError::StepTooLarge { dt: *dt, product });
                }
            }
        }
        Ok(())
    }

    fn slice_hamiltonian(&self, field: C64, delta: Option<(f64, f64)>) -> CMat {
        let mut h = &self.h_static + &collective_field(field);
        if let Some((d1, d2)) = delta {
            for i in 0..4 {
                h[(i, i)] += C64::new(d1 * M1[i] + d2 * M2[i], 0.0);
            }
        }
        h
    }

    fn prepare(&self, steps: &[Step], share_slices: bool) -> Result<Prepared, DynError> {
        let mut dissipators: Vec<(f64, Box<S16>)> = Vec::new();
        let mut per_step = Vec::with_capacity(steps.len());
        let mut hold_cache: Vec<(f64, &CMat, StepOp)> = Vec::new();
        for s in steps {
            let op = match s {
                Step::Slice { dt, field } => {
                    if self.cfg.method == Method::Split
                        && !self.model.is_zero()
                        && !dissipators.iter().any(|(d, _)| d == dt)
                    {
                        dissipators.push((*dt, kernel::to_s16(&expm(&self.dissipator.scale_re(*dt)))));
                    }
                    if share_slices {
                        let u = mat_exp_hermitian(&self.slice_hamiltonian(*field, None), 2.0 * PI * dt)?;
                        Some(StepOp::Unitary(kernel::to_m4(&u)))
                    } else {
                        None
                    }
                }
                Step::Hold { duration, h } => {
                    // composite locks repeat a handful of distinct holds many times
                    let known = hold_cache.iter().position(|(d, m, _)| d == duration && *m == h);
                    let op = match known {
                        Some(i) => hold_cache[i].2.clone(),
                        None => {
                            let op = if self.model.is_zero() {
                                StepOp::Unitary(kernel::to_m4(&mat_exp_hermitian(h, 2.0 * PI * duration)?))
                            } else {
                                let l = lindblad_superoperator(h, &self.model)?;
                                StepOp::Super(kernel::to_s16(&expm(&l.scale_re(*duration))).into())
                            };
                            hold_cache.push((*duration, h, op.clone()));
                            op
                        }
                    };
                    Some(op)
                }
                _ => None,
            };
            per_step.push(op);
        }
        Ok(Prepared { dissipators, per_step })
    }

    /// Deterministic evolution through `steps` starting at time `t0`.
    pub fn run(&self, rho: &CMat, t0: f64, steps: &[Step]) -> Result<Evolution, DynError> {
        self.check(steps)?;
        let prep = self.prepare(steps, false)?;
        self.run_inner(rho, t0, steps, &prep, None)
    }

    /// Mean over noise trajectories; reduces to `run` when the noise is silent.
    pub fn run_averaged(
        &self,
        rho: &CMat,
        t0: f64,
        steps: &[Step],
        noise: &NoiseProcess,
    ) -> Result<Evolution, DynError> {
        noise.validate()?;
        if noise.rms_amplitude == 0.0 {
            return self.run(rho, t0, steps);
        }
        self.check(steps)?;
        let prep = self.prepare(steps, self.cfg.method == Method::Split)?;
        let runs: Vec<Evolution> = (0..self.cfg.n_trajectories as u64)
            .into_par_iter()
            .map(|k| {
                let mut ou = noise.trajectory(k);
                self.run_inner(rho, t0, steps, &prep, Some(&mut ou))
            })
            .collect::<Result<_, _>>()?;
        Ok(mean_evolution(&runs))
    }

    fn run_inner(
        &self,
        rho: &CMat,
        t0: f64,
        steps: &[Step],
        prep: &Prepared,
        mut noise: Option<&mut OuPair>,
    ) -> Result<Evolution, DynError> {
        let stride = self.cfg.record_stride;
        let mut state = kernel::to_m4(rho);
        let mut t = t0;
        let mut samples = Vec::new();
        if stride > 0 {
            samples.push(Sample { t, rho: rho.clone() });
        }
        let mut slices = 0usize;
        for (k, step) in steps.iter().enumerate() {
            match step {
                Step::Slice { dt, field } => {
                    let delta = noise.as_deref().map(OuPair::fields);
                    state = self.slice(&state, *dt, *field, delta, prep, prep.per_step[k].as_ref())?;
                    if let Some(ou) = noise.as_deref_mut() {
                        ou.advance(*dt);
                    }
                    t += dt;
                    slices += 1;
                    if stride > 0 && slices % stride == 0 {
                        samples.push(Sample { t, rho: kernel::from_m4(&state) });
                    }
                }
                Step::Hold { duration, .. } => {
                    state = match prep.per_step[k].as_ref().expect("hold prepared") {
                        StepOp::Unitary(u) => kernel::sandwich(u, &state),
                        StepOp::Super(s) => kernel::apply(s, &state),
                    };
                    t += duration;
                }
                Step::Unitary(u) => state = kernel::sandwich(&kernel::to_m4(u), &state),
                Step::ZeroQuantumFilter => {
                    state = kernel::to_m4(&zero_quantum_filter(&kernel::from_m4(&state)))
                }
            }
        }
        Ok(Evolution { final_state: kernel::from_m4(&state), samples })
    }

    fn slice(
        &self,
        state: &M4,
        dt: f64,
        field: C64,
        delta: Option<(f64, f64)>,
        prep: &Prepared,
        shared: Option<&StepOp>,
    ) -> Result<M4, DynError> {
        match self.cfg.method {
            Method::Split => {
                let mut u = match shared {
                    Some(StepOp::Unitary(u)) => *u,
                    _ => kernel::to_m4(&mat_exp_hermitian(&self.slice_hamiltonian(field, None), 2.0 * PI * dt)?),
                };
                if let Some((d1, d2)) = delta {
                    // half-step z-phases on either side of the driven slice
                    let phase: [C64; 4] =
                        std::array::from_fn(|i| C64::from_polar(1.0, -PI * dt * (d1 * M1[i] + d2 * M2[i])));
                    u = kernel::diag_sandwich(&phase, &u);
                }
                let mut next = kernel::sandwich(&u, state);
                if !self.model.is_zero() {
                    let d = &prep.dissipators.iter().find(|(d, _)| *d == dt).expect("dissipator prepared").1;
                    next = kernel::apply(d, &next);
                }
                Ok(next)
            }
            Method::ExactSlice => {
                let h = self.slice_hamiltonian(field, delta);
                if self.model.is_zero() {
                    let u = kernel::to_m4(&mat_exp_hermitian(&h, 2.0 * PI * dt)?);
                    Ok(kernel::sandwich(&u, state))
                } else {
                    let l = lindblad_superoperator(&h, &self.model)?;
                    Ok(kernel::apply(&kernel::to_s16(&expm(&l.scale_re(dt))), state))
                }
            }
            Method::Rk4 => {
                let h = kernel::to_m4(&self.slice_hamiltonian(field, delta));
                let f = |r: &M4| self.rhs(&h, r);
                let k1 = f(state);
                let k2 = f(&axpy(state, 0.5 * dt, &k1));
                let k3 = f(&axpy(state, 0.5 * dt, &k2));
                let k4 = f(&axpy(state, dt, &k3));
                let mut out = *state;
                for i in 0..16 {
                    out[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (dt / 6.0);
                }
                Ok(out)
            }
        }
    }

    /// dρ/dt = −i2π[H, ρ] + Σ AρA† − ½{ΣA†A, ρ}
    fn rhs(&self, h: &M4, rho: &M4) -> M4 {
        let hr = kernel::mul(h, rho);
        let rh = kernel::mul(rho, h);
        let mut out = [C64::new(0.0, 0.0); 16];
        let mi = C64::new(0.0, -2.0 * PI);
        for i in 0..16 {
            out[i] = mi * (hr[i] - rh[i]);
        }
        if !self.channels.is_empty() {
            for a in &self.channels {
                let ara = kernel::sandwich(a, rho);
                for i in 0..16 {
                    out[i] += ara[i];
                }
            }
            let lr = kernel::mul(&self.loss, rho);
            let rl = kernel::mul(rho, &self.loss);
            for i in 0..16 {
                out[i] -= (lr[i] + rl[i]) * 0.5;
            }
        }
        out
    }
}

fn axpy(x: &M4, a: f64, y: &M4) -> M4 {
    std::array::from_fn(|i| x[i] + y[i] * a)
}

/// Pairwise sum in a fixed order, so the mean does not depend on scheduling.
fn pairwise_sum(items: &[&CMat]) -> CMat {
    match items.len() {
        0 => unreachable!("empty ensemble"),
        1 => items[0].clone(),
        n => {
            let (a, b) = items.split_at(n / 2);
            &pairwise_sum(a) + &pairwise_sum(b)
        }
    }
}

fn mean_evolution(runs: &[Evolution]) -> Evolution {
    let inv = 1.0 / runs.len() as f64;
    let finals: Vec<&CMat> = runs.iter().map(|r| &r.final_state).collect();
    let samples = (0..runs[0].samples.len())
        .map(|k| {
            let col: Vec<&CMat> = runs.iter().map(|r| &r.samples[k].rho).collect();
            Sample { t: runs[0].samples[k].t, rho: pairwise_sum(&col).scale_re(inv) }
        })
        .collect();
    Evolution { final_state: pairwise_sum(&finals).scale_re(inv), samples }
}

/// Coherent evolution under `drive` from t0 to t1.
pub fn evolve_unitary(
    rho: &CMat,
    drive: &Drive,
    t0: f64,
    t1: f64,
    cfg: &PropagationConfig,
) -> Result<Evolution, DynError> {
    evolve_lindblad(rho, drive, &RelaxationModel::zero(), t0, t1, cfg)
}

pub fn evolve_lindblad(
    rho: &CMat,
    drive: &Drive,
    model: &RelaxationModel,
    t0: f64,
    t1: f64,
    cfg: &PropagationConfig,
) -> Result<Evolution, DynError> {
    if t1 < t0 {
        return Err(DynError::InvalidConfig(format!("t1 = {t1} precedes t0 = {t0}")));
    }
    let engine = Engine::new(drive.static_h.clone(), *model, *cfg)?;
    engine.run(rho, t0, &drive.slices(t0, t1, cfg.dt))
}

pub fn evolve_stochastic_avg(
    rho: &CMat,
    drive: &Drive,
    model: &RelaxationModel,
    noise: &NoiseProcess,
    t0: f64,
    t1: f64,
    cfg: &PropagationConfig,
) -> Result<Evolution, DynError> {
    if t1 < t0 {
        return Err(DynError::InvalidConfig(format!("t1 = {t1} precedes t0 = {t0}")));
    }
    let engine = Engine::new(drive.static_h.clone(), *model, *cfg)?;
    engine.run_averaged(rho, t0, &drive.slices(t0, t1, cfg.dt), noise)
}

/// exp(−i2π·h·t) with a cached decomposition, for repeated evaluation at many t.
pub struct FreePropagator {
    eig: numlin::HermitianEigen,
}

impl FreePropagator {
    pub fn new(h: &CMat) -> Result<Self, DynError> {
        Ok(FreePropagator { eig: hermitian_eigen(h)? })
    }

    pub fn at(&self, t: f64) -> CMat {
        exp_from_eigen(&self.eig, 2.0 * PI * t)
    }

    /// U(t)†·ρ·U(t): the state seen in the interaction frame of h.
    pub fn to_interaction_frame(&self, rho: &CMat, t: f64) -> CMat {
        let u = self.at(t);
        u.adjoint().conjugate(rho)
    }
}
