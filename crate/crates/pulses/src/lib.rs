//! RF controls: sampled pulse segments, spin-lock modes, the singlet
//! preparation block and the two-tone probe+control segment.

use std::f64::consts::PI;

use dynamics::{DynError, Step};
use numlin::{mat_exp_hermitian, CMat, NumError, C64};
use spinsys::{collective_field, collective_rotation, internal_hamiltonian, spin_operators, SpinError, SpinParams};

mod prep;
mod shapes;
mod table;

pub use prep::{find_prep_delays, prep_objective, search_prep_delays, singlet_prep_sequence, PrepDelays, MIN_PREP_OBJECTIVE};
pub use shapes::{
    gaussian_probe_segment, spin_lock_segment, two_tone_segment, two_tone_segment_at, waltz16_elements, TwoTone,
    DEFAULT_TWO_TONE_RATE,
};
pub use table::{export_pulse_table, import_pulse_table, read_pulse_table, write_pulse_table};

#[derive(Debug, thiserror::Error)]
pub enum PulseError {
    #[error(
        "preparation contract unsatisfied: |<S0|U|00>|^2 = {singlet:.6}, |<T0|U|11>|^2 = {triplet:.6} (objective {objective:.6} < {required})"
    )]
    ContractUnsatisfied { singlet: f64, triplet: f64, objective: f64, required: f64 },
    #[error("under-sampled two-tone envelope: {rate} samples/s, need at least {required} (20 x largest offset)")]
    UnderSampled { rate: f64, required: f64 },
    #[error("invalid pulse: {0}")]
    Invalid(String),
    #[error("pulse table line {line}: {message}")]
    Table { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Spin(#[from] SpinError),
    #[error(transparent)]
    Dynamics(#[from] DynError),
    #[error(transparent)]
    Numeric(#[from] NumError),
}

/// One envelope sample: field magnitude (Hz) and phase (rad).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeSample {
    pub amplitude: f64,
    pub phase: f64,
}

/// Uniformly sampled, zero-order-hold RF envelope on both spins.
///
/// The field at local time t (0 ≤ t < duration) in sample k is
/// a_k·exp(i(φ_k + 2π·carrier_offset·t)).
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSegment {
    duration: f64,
    envelope: Vec<EnvelopeSample>,
    carrier_offset: f64,
}

impl PulseSegment {
    pub fn new(duration: f64, envelope: Vec<EnvelopeSample>, carrier_offset: f64) -> Result<Self, PulseError> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(PulseError::Invalid(format!("duration must be > 0, got {duration}")));
        }
        if envelope.is_empty() {
            return Err(PulseError::Invalid("envelope needs at least one sample".into()));
        }
        if let Some(s) = envelope.iter().find(|s| !(s.amplitude >= 0.0 && s.amplitude.is_finite() && s.phase.is_finite())) {
            return Err(PulseError::Invalid(format!("bad envelope sample {s:?}")));
        }
        if !carrier_offset.is_finite() {
            return Err(PulseError::Invalid("carrier offset must be finite".into()));
        }
        Ok(PulseSegment { duration, envelope, carrier_offset })
    }

    /// Constant-amplitude block.
    pub fn rectangular(duration: f64, amplitude: f64, phase: f64, carrier_offset: f64) -> Result<Self, PulseError> {
        Self::new(duration, vec![EnvelopeSample { amplitude, phase }], carrier_offset)
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn envelope(&self) -> &[EnvelopeSample] {
        &self.envelope
    }

    pub fn carrier_offset(&self) -> f64 {
        self.carrier_offset
    }

    pub fn sample_interval(&self) -> f64 {
        self.duration / self.envelope.len() as f64
    }

    /// ∫ a dt over the envelope, Hz·s.
    pub fn area(&self) -> f64 {
        self.envelope.iter().map(|s| s.amplitude).sum::<f64>() * self.sample_interval()
    }

    pub fn peak_amplitude(&self) -> f64 {
        self.envelope.iter().map(|s| s.amplitude).fold(0.0, f64::max)
    }

    /// Complex field (Hz) at local time t.
    pub fn field(&self, t: f64) -> C64 {
        let k = ((t / self.sample_interval()) as usize).min(self.envelope.len() - 1);
        let s = self.envelope[k];
        C64::from_polar(s.amplitude, s.phase + 2.0 * PI * self.carrier_offset * t)
    }

    /// Slices no longer than `dt`, aligned to sample boundaries, field taken at
    /// each slice midpoint and multiplied by `scale`.
    pub fn steps(&self, dt: f64, scale: f64) -> Vec<Step> {
        let h = self.sample_interval();
        let per = ((h / dt) - 1e-9).ceil().max(1.0) as usize;
        let sub = h / per as f64;
        let mut out = Vec::with_capacity(self.envelope.len() * per);
        for (k, s) in self.envelope.iter().enumerate() {
            for m in 0..per {
                let mid = k as f64 * h + (m as f64 + 0.5) * sub;
                let field = C64::from_polar(scale * s.amplitude, s.phase + 2.0 * PI * self.carrier_offset * mid);
                out.push(Step::Slice { dt: sub, field });
            }
        }
        out
    }
}

/// How a spin-lock is realised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LockMode {
    /// evolve under J·I¹·I² exactly, as an infinitely strong lock would
    IdealEquivalence,
    /// constant field along x
    Cw,
    /// WALTZ-16 supercycle of ±x elements
    Waltz16,
}

impl std::str::FromStr for LockMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ideal" | "ideal-equivalence" => Ok(LockMode::IdealEquivalence),
            "cw" => Ok(LockMode::Cw),
            "waltz16" | "waltz-16" => Ok(LockMode::Waltz16),
            _ => Err(format!("unknown lock mode '{s}' (ideal-equivalence, cw, waltz16)")),
        }
    }
}

impl std::fmt::Display for LockMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LockMode::IdealEquivalence => "ideal-equivalence",
            LockMode::Cw => "cw",
            LockMode::Waltz16 => "waltz16",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinLock {
    pub duration: f64,
    pub amplitude: f64,
    pub mode: LockMode,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SeqItem {
    Pulse(PulseSegment),
    /// free evolution under the internal Hamiltonian
    Delay(f64),
    SpinLock(SpinLock),
    /// ideal instantaneous hard pulse on both spins, exp(−iθ(cos φ I_x + sin φ I_y))
    Rotation { angle: f64, phase: f64 },
    /// gradient crusher: removes all coherence between different total magnetization
    Crusher,
}

impl SeqItem {
    pub fn duration(&self) -> f64 {
        match self {
            SeqItem::Pulse(p) => p.duration(),
            SeqItem::Delay(d) => *d,
            SeqItem::SpinLock(l) => l.duration,
            SeqItem::Rotation { .. } | SeqItem::Crusher => 0.0,
        }
    }
}

/// Discretisation settings used when a sequence is turned into propagation steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    /// longest slice for sampled pulses, s
    pub dt: f64,
    /// RF amplitude scale applied to pulses and locks (not to ideal rotations)
    pub rf_scale: f64,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions { dt: 5e-5, rf_scale: 1.0 }
    }
}

/// Time-ordered list of RF items.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sequence {
    items: Vec<SeqItem>,
}

impl Sequence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_items(items: Vec<SeqItem>) -> Self {
        Sequence { items }
    }

    pub fn push(&mut self, item: SeqItem) -> &mut Self {
        self.items.push(item);
        self
    }

    pub fn extend(&mut self, other: &Sequence) -> &mut Self {
        self.items.extend(other.items.iter().cloned());
        self
    }

    pub fn items(&self) -> &[SeqItem] {
        &self.items
    }

    pub fn duration(&self) -> f64 {
        self.items.iter().map(SeqItem::duration).sum()
    }

    /// Steps for an [`dynamics::Engine`] built on `internal_hamiltonian(p)`.
    pub fn steps(&self, p: &SpinParams, opts: &StepOptions) -> Vec<Step> {
        let h0 = internal_hamiltonian(p);
        let ix = spin_operators().ix12;
        let mut out = Vec::new();
        for item in &self.items {
            match item {
                SeqItem::Pulse(seg) => out.extend(seg.steps(opts.dt, opts.rf_scale)),
                SeqItem::Delay(d) => {
                    if *d > 0.0 {
                        out.push(Step::Hold { duration: *d, h: h0.clone() })
                    }
                }
                SeqItem::SpinLock(lock) => {
                    let a = lock.amplitude * opts.rf_scale;
                    match lock.mode {
                        LockMode::IdealEquivalence => out.push(Step::Hold {
                            duration: lock.duration,
                            h: spinsys::equivalence_hamiltonian(p.j_coupling),
                        }),
                        LockMode::Cw => out.push(Step::Hold { duration: lock.duration, h: &h0 + &ix.scale_re(a) }),
                        LockMode::Waltz16 => {
                            let plus = &h0 + &ix.scale_re(a);
                            let minus = &h0 - &ix.scale_re(a);
                            for (sign, d) in waltz16_elements(lock.duration, lock.amplitude) {
                                let h = if sign > 0.0 { plus.clone() } else { minus.clone() };
                                out.push(Step::Hold { duration: d, h });
                            }
                        }
                    }
                }
                SeqItem::Rotation { angle, phase } => out.push(Step::Unitary(collective_rotation(*angle, *phase))),
                SeqItem::Crusher => out.push(Step::ZeroQuantumFilter),
            }
        }
        out
    }

    /// Relaxation-free propagator. Fails for sequences containing a crusher,
    /// which is not unitary.
    pub fn propagator(&self, p: &SpinParams, opts: &StepOptions) -> Result<CMat, PulseError> {
        let h0 = internal_hamiltonian(p);
        let mut u = CMat::identity(4);
        for step in self.steps(p, opts) {
            let next = match step {
                Step::Slice { dt, field } => mat_exp_hermitian(&(&h0 + &collective_field(field)), 2.0 * PI * dt)?,
                Step::Hold { duration, h } => mat_exp_hermitian(&h, 2.0 * PI * duration)?,
                Step::Unitary(v) => v,
                Step::ZeroQuantumFilter => {
                    return Err(PulseError::Invalid("a crusher has no unitary propagator".into()))
                }
            };
            u = &next * &u;
        }
        Ok(u)
    }
}
