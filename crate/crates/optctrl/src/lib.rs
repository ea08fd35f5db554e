//! Robust design of the two-tone pulse.
//!
//! A pulse is a train of segments. Each segment drives both the probe and the
//! control transition with a common amplitude, a common phase and a common
//! detuning δ from the two resonances. The figure of merit keeps the dark state
//! in place and leaves the spectator level |11⟩ alone. It is averaged over a
//! grid of RF amplitude scale factors.

use std::f64::consts::PI;
use std::io::Write;

use numlin::{exp_from_eigen, hermitian_eigen, minimize_bounded, CMat, HermitianEigen, SimplexOptions, C64};
use pulses::{EnvelopeSample, PulseError, PulseSegment, TwoTone};
use rayon::prelude::*;
use spinsys::{
    basis_state, internal_hamiltonian, probe_control_offsets, singlet_triplet_states, SpinError, SpinParams,
    StateVector, L11,
};

/// Default pulse length, s.
pub const DEFAULT_TOTAL_DURATION: f64 = 0.24;
pub const DEFAULT_SEGMENTS: usize = 6;
/// Amplitude of each tone in the naive pulse, Hz.
pub const NAIVE_AMPLITUDE: f64 = 1.5;
/// Envelope samples per second, as for the plain two-tone segment.
pub const SAMPLE_RATE: f64 = pulses::DEFAULT_TWO_TONE_RATE;
/// Strang sub-steps per envelope sample in the fast propagator.
const SUBSTEPS: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum OptError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Pulse(#[from] PulseError),
    #[error(transparent)]
    Spin(#[from] SpinError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentParams {
    /// weight; segment k lasts total·w_k/Σw
    pub duration: f64,
    /// per tone, Hz
    pub amplitude: f64,
    pub phase: f64,
    /// common detuning of both tones, Hz
    pub offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamBounds {
    /// on the duration weights
    pub duration: (f64, f64),
    pub amplitude: (f64, f64),
    pub phase: (f64, f64),
    pub offset: (f64, f64),
}

impl Default for ParamBounds {
    fn default() -> Self {
        ParamBounds { duration: (0.25, 4.0), amplitude: (0.75, 3.0), phase: (-PI, PI), offset: (-2.0, 2.0) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseParameterization {
    segments: Vec<SegmentParams>,
    total_duration: f64,
    bounds: ParamBounds,
}

impl PulseParameterization {
    pub fn new(segments: Vec<SegmentParams>, total_duration: f64, bounds: ParamBounds) -> Result<Self, OptError> {
        if segments.is_empty() {
            return Err(OptError::Invalid("a pulse needs at least one segment".into()));
        }
        if !(total_duration.is_finite() && total_duration > 0.0) {
            return Err(OptError::Invalid(format!("total duration must be > 0, got {total_duration}")));
        }
        for (name, (lo, hi)) in
            [("duration", bounds.duration), ("amplitude", bounds.amplitude), ("phase", bounds.phase), ("offset", bounds.offset)]
        {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(OptError::Invalid(format!("{name} bounds [{lo}, {hi}] are not an interval")));
            }
        }
        if bounds.duration.0 <= 0.0 {
            return Err(OptError::Invalid("duration bounds must stay above 0".into()));
        }
        for (k, s) in segments.iter().enumerate() {
            let inside = |v: f64, (lo, hi): (f64, f64)| v.is_finite() && v >= lo && v <= hi;
            let ok = inside(s.duration, bounds.duration)
                && inside(s.amplitude, bounds.amplitude)
                && inside(s.phase, bounds.phase)
                && inside(s.offset, bounds.offset);
            if !ok {
                return Err(OptError::Invalid(format!("segment {k} lies outside its bounds: {s:?}")));
            }
        }
        Ok(PulseParameterization { segments, total_duration, bounds })
    }

    /// Equal segments at exact resonance with equal tone amplitudes: the plain
    /// two-tone pulse cut into pieces.
    pub fn naive(n_segments: usize, total_duration: f64, amplitude: f64) -> Result<Self, OptError> {
        let n = n_segments.max(1);
        let seg = SegmentParams { duration: 1.0, amplitude, phase: 0.0, offset: 0.0 };
        let bounds = ParamBounds {
            amplitude: (ParamBounds::default().amplitude.0.min(amplitude), ParamBounds::default().amplitude.1.max(amplitude)),
            ..ParamBounds::default()
        };
        Self::new(vec![seg; n], total_duration, bounds)
    }

    pub fn default_naive() -> Self {
        Self::naive(DEFAULT_SEGMENTS, DEFAULT_TOTAL_DURATION, NAIVE_AMPLITUDE).expect("default pulse is valid")
    }

    pub fn segments(&self) -> &[SegmentParams] {
        &self.segments
    }

    pub fn total_duration(&self) -> f64 {
        self.total_duration
    }

    pub fn bounds(&self) -> &ParamBounds {
        &self.bounds
    }

    /// Segment durations in seconds; they add up to the total duration.
    pub fn durations(&self) -> Vec<f64> {
        let sum: f64 = self.segments.iter().map(|s| s.duration).sum();
        self.segments.iter().map(|s| s.duration / sum * self.total_duration).collect()
    }

    /// [duration weight, amplitude, phase, offset] per segment.
    pub fn flatten(&self) -> Vec<f64> {
        self.segments.iter().flat_map(|s| [s.duration, s.amplitude, s.phase, s.offset]).collect()
    }

    fn flat_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let b = self.bounds;
        let per = [b.duration, b.amplitude, b.phase, b.offset];
        let lo = (0..self.segments.len()).flat_map(|_| per.map(|r| r.0)).collect();
        let hi = (0..self.segments.len()).flat_map(|_| per.map(|r| r.1)).collect();
        (lo, hi)
    }

    /// Same bounds and total duration, new values.
    pub fn with_flat(&self, x: &[f64]) -> Result<Self, OptError> {
        if x.len() != 4 * self.segments.len() {
            return Err(OptError::Invalid(format!("expected {} values, got {}", 4 * self.segments.len(), x.len())));
        }
        let segments = x
            .chunks(4)
            .map(|c| SegmentParams { duration: c[0], amplitude: c[1], phase: c[2], offset: c[3] })
            .collect();
        Self::new(segments, self.total_duration, self.bounds)
    }

    /// Envelope samples of every segment: the summed field of both tones at
    /// sample midpoints, phases continuous in time from the pulse start.
    pub fn to_segments(&self, p: &SpinParams) -> Result<Vec<PulseSegment>, OptError> {
        let (fp, fc) = probe_control_offsets(p)?;
        let mut start = 0.0;
        let mut out = Vec::with_capacity(self.segments.len());
        for (s, d) in self.segments.iter().zip(self.durations()) {
            let tones = TwoTone {
                probe_amp: s.amplitude,
                control_amp: s.amplitude,
                probe_offset: fp + s.offset,
                control_offset: fc + s.offset,
            };
            let seg = pulses::two_tone_segment_at(d, &tones, start, SAMPLE_RATE)?;
            let env = seg
                .envelope()
                .iter()
                .map(|e| EnvelopeSample { amplitude: e.amplitude, phase: e.phase + s.phase })
                .collect();
            out.push(PulseSegment::new(d, env, 0.0)?);
            start += d;
        }
        Ok(out)
    }
}

/// Amplitude scale factors with weights.
#[derive(Debug, Clone, PartialEq)]
pub struct RFDistribution {
    points: Vec<(f64, f64)>,
}

impl RFDistribution {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, OptError> {
        if points.is_empty() {
            return Err(OptError::Invalid("RF distribution is empty".into()));
        }
        if let Some(bad) = points.iter().find(|(s, w)| !(s.is_finite() && *s > 0.0 && w.is_finite() && *w >= 0.0)) {
            return Err(OptError::Invalid(format!("bad RF distribution point {bad:?}")));
        }
        let total: f64 = points.iter().map(|p| p.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(OptError::Invalid(format!("RF weights sum to {total}, not 1")));
        }
        Ok(RFDistribution { points })
    }

    pub fn single(scale: f64) -> Result<Self, OptError> {
        Self::new(vec![(scale, 1.0)])
    }

    /// λ·a + (1 − λ)·b
    pub fn mixture(a: &Self, b: &Self, lambda: f64) -> Result<Self, OptError> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(OptError::Invalid(format!("mixture weight {lambda} outside [0, 1]")));
        }
        let pts = a
            .points
            .iter()
            .map(|&(s, w)| (s, lambda * w))
            .chain(b.points.iter().map(|&(s, w)| (s, (1.0 - lambda) * w)))
            .collect();
        Self::new(pts)
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn scales(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.0)
    }
}

impl Default for RFDistribution {
    fn default() -> Self {
        RFDistribution { points: vec![(0.90, 0.1), (0.95, 0.2), (1.00, 0.4), (1.05, 0.2), (1.10, 0.1)] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveSpec {
    pub dark_state: StateVector,
    pub spectator: StateVector,
    pub w_dark: f64,
    pub w_spectator: f64,
}

impl ObjectiveSpec {
    pub fn new(dark_state: StateVector, spectator: StateVector, w_dark: f64, w_spectator: f64) -> Result<Self, OptError> {
        if !(w_dark >= 0.0 && w_spectator >= 0.0 && (w_dark + w_spectator - 1.0).abs() < 1e-12) {
            return Err(OptError::Invalid(format!("weights ({w_dark}, {w_spectator}) must be ≥ 0 and sum to 1")));
        }
        Ok(ObjectiveSpec { dark_state, spectator, w_dark, w_spectator })
    }
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        ObjectiveSpec { dark_state: singlet_triplet_states().s0, spectator: basis_state(L11), w_dark: 0.7, w_spectator: 0.3 }
    }
}

type V4 = [C64; 4];

fn matvec(m: &CMat, v: &V4) -> V4 {
    std::array::from_fn(|i| (0..4).map(|j| m[(i, j)] * v[j]).sum())
}

/// Collective rotation about the field direction, applied in place as the
/// same 2×2 on each spin.
fn rotate(v: &mut V4, b: C64, dt: f64) {
    let angle = 2.0 * PI * b.norm() * dt;
    if angle == 0.0 {
        return;
    }
    let (s, co) = (angle / 2.0).sin_cos();
    let u = C64::from_polar(s, -b.arg()) * C64::new(0.0, -1.0);
    let l = C64::from_polar(s, b.arg()) * C64::new(0.0, -1.0);
    let m = [[C64::new(co, 0.0), u], [l, C64::new(co, 0.0)]];
    // first spin: index bit 1; second spin: bit 0
    for (hi, lo) in [(0usize, 2usize), (1, 3)] {
        let (a, c) = (v[hi], v[lo]);
        v[hi] = m[0][0] * a + m[0][1] * c;
        v[lo] = m[1][0] * a + m[1][1] * c;
    }
    for (hi, lo) in [(0usize, 1usize), (2, 3)] {
        let (a, c) = (v[hi], v[lo]);
        v[hi] = m[0][0] * a + m[0][1] * c;
        v[lo] = m[1][0] * a + m[1][1] * c;
    }
}

/// Reusable pieces for evaluating fidelities of many pulses on one molecule.
pub struct FidelityEvaluator {
    eig: HermitianEigen,
    spec: ObjectiveSpec,
}

impl FidelityEvaluator {
    pub fn new(p: &SpinParams, spec: &ObjectiveSpec) -> Result<Self, OptError> {
        let eig = hermitian_eigen(&internal_hamiltonian(p)).map_err(SpinError::from)?;
        Ok(FidelityEvaluator { eig, spec: spec.clone() })
    }

    /// The pulse's action on both target states, Strang-split per half
    /// sample: free evolution exactly, field as a collective rotation.
    fn propagate(&self, segs: &[PulseSegment], scale: f64) -> [V4; 2] {
        let mut psi: [V4; 2] = [
            std::array::from_fn(|i| self.spec.dark_state.amplitudes()[i]),
            std::array::from_fn(|i| self.spec.spectator.amplitudes()[i]),
        ];
        for seg in segs {
            let h = seg.sample_interval() / SUBSTEPS as f64;
            let half = exp_from_eigen(&self.eig, PI * h);
            for e in seg.envelope() {
                let b = C64::from_polar(scale * e.amplitude, e.phase);
                for _ in 0..SUBSTEPS {
                    for v in psi.iter_mut() {
                        *v = matvec(&half, v);
                        rotate(v, b, h);
                        *v = matvec(&half, v);
                    }
                }
            }
        }
        psi
    }

    /// w_dark·|⟨d|U₀(T)†U|d⟩|² + w_spec·|⟨s|U₀(T)†U|s⟩|², read in the frame
    /// of free evolution.
    pub fn fidelity(&self, segs: &[PulseSegment], scale: f64) -> f64 {
        let total: f64 = segs.iter().map(|s| s.duration()).sum();
        let u0 = exp_from_eigen(&self.eig, 2.0 * PI * total);
        let [pd, ps] = self.propagate(segs, scale);
        let overlap = |target: &StateVector, v: &V4| {
            let a: V4 = std::array::from_fn(|i| target.amplitudes()[i]);
            let back = matvec(&u0, &a);
            back.iter().zip(v).map(|(x, y)| x.conj() * y).sum::<C64>().norm_sqr()
        };
        let f = self.spec.w_dark * overlap(&self.spec.dark_state, &pd)
            + self.spec.w_spectator * overlap(&self.spec.spectator, &ps);
        f.clamp(0.0, 1.0)
    }

    pub fn average(&self, segs: &[PulseSegment], dist: &RFDistribution) -> f64 {
        // fixed summation order regardless of scheduling
        let fs: Vec<f64> = dist.points().par_iter().map(|&(s, _)| self.fidelity(segs, s)).collect();
        fs.iter().zip(dist.points()).map(|(f, (_, w))| f * w).sum()
    }
}

pub fn pulse_fidelity(
    params: &PulseParameterization,
    scale: f64,
    spec: &ObjectiveSpec,
    p: &SpinParams,
) -> Result<f64, OptError> {
    Ok(FidelityEvaluator::new(p, spec)?.fidelity(&params.to_segments(p)?, scale))
}

pub fn average_fidelity(
    params: &PulseParameterization,
    dist: &RFDistribution,
    spec: &ObjectiveSpec,
    p: &SpinParams,
) -> Result<f64, OptError> {
    Ok(FidelityEvaluator::new(p, spec)?.average(&params.to_segments(p)?, dist))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub best: PulseParameterization,
    pub best_objective: f64,
    /// best average fidelity after each evaluation; never decreases
    pub history: Vec<f64>,
}

/// Derivative-free simplex search with restarts on the flattened parameters,
/// maximizing the average fidelity. Deterministic for given inputs.
pub fn optimize_pulse(
    init: &PulseParameterization,
    dist: &RFDistribution,
    spec: &ObjectiveSpec,
    p: &SpinParams,
    budget: usize,
) -> Result<OptimizationResult, OptError> {
    if budget == 0 {
        return Err(OptError::Invalid("budget must be ≥ 1".into()));
    }
    let ev = FidelityEvaluator::new(p, spec)?;
    let (lo, hi) = init.flat_bounds();
    let objective = |x: &[f64]| match init.with_flat(x).and_then(|c| c.to_segments(p)) {
        Ok(segs) => 1.0 - ev.average(&segs, dist),
        Err(_) => f64::INFINITY,
    };
    let opts = SimplexOptions { budget, initial_step: 0.1, restarts: 8, f_tol: 1e-12, x_tol: 1e-9 };
    let r = minimize_bounded(objective, &init.flatten(), &lo, &hi, &opts);
    let best = init.with_flat(&r.x)?;
    Ok(OptimizationResult {
        best_objective: 1.0 - r.f,
        history: r.history.iter().map(|v| 1.0 - v).collect(),
        best,
    })
}

/// `eval_index,objective` rows after `#` comment lines.
pub fn write_history<W: Write>(history: &[f64], mut w: W) -> std::io::Result<()> {
    writeln!(w, "# optimization history: best average fidelity after each evaluation")?;
    writeln!(w, "eval_index,objective")?;
    for (k, v) in history.iter().enumerate() {
        writeln!(w, "{},{:.11e}", k + 1, v)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn durations_renormalize() {
        let b = ParamBounds::default();
        let segs = vec![
            SegmentParams { duration: 1.0, amplitude: 1.0, phase: 0.0, offset: 0.0 },
            SegmentParams { duration: 3.0, amplitude: 1.0, phase: 0.0, offset: 0.0 },
        ];
        let p = PulseParameterization::new(segs, 0.24, b).unwrap();
        let d = p.durations();
        assert!((d[0] - 0.06).abs() < 1e-15 && (d[1] - 0.18).abs() < 1e-15);
        let x = p.flatten();
        assert_eq!(p.with_flat(&x).unwrap(), p);
    }

    #[test]
    fn out_of_bounds_segments_are_rejected() {
        let seg = SegmentParams { duration: 1.0, amplitude: 9.0, phase: 0.0, offset: 0.0 };
        assert!(PulseParameterization::new(vec![seg], 0.24, ParamBounds::default()).is_err());
    }

    #[test]
    fn distribution_weights_must_sum_to_one() {
        assert!(RFDistribution::new(vec![(1.0, 0.5)]).is_err());
        assert!(RFDistribution::new(vec![(0.0, 1.0)]).is_err());
        let d = RFDistribution::default();
        assert!((d.points().iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_matches_collective_rotation() {
        let b = C64::from_polar(2.3, 0.7);
        let dt = 1e-3;
        let r = spinsys::collective_rotation(2.0 * PI * b.norm() * dt, b.arg());
        let v: V4 = [C64::new(0.3, 0.1), C64::new(-0.2, 0.5), C64::new(0.6, 0.0), C64::new(0.1, -0.4)];
        let mut w = v;
        rotate(&mut w, b, dt);
        let want = matvec(&r, &v);
        for i in 0..4 {
            assert!((w[i] - want[i]).norm() < 1e-15);
        }
    }

    #[test]
    fn history_csv_layout() {
        let mut out = Vec::new();
        write_history(&[0.5, 0.75], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "eval_index,objective");
        assert_eq!(lines[2], "1,5.00000000000e-1");
        assert_eq!(lines.len(), 4);
    }
}
