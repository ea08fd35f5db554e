use std::f64::consts::PI;

use numlin::C64;
use spinsys::{resonant_offset, SpinParams};

use crate::{EnvelopeSample, LockMode, PulseError, PulseSegment, SeqItem, SpinLock};

/// Envelope sample rate of the two-tone segment, samples/s.
pub const DEFAULT_TWO_TONE_RATE: f64 = 5000.0;

/// Gaussian envelopes are held for 1 ms per sample; the carrier is exact.
const GAUSSIAN_SAMPLE_INTERVAL: f64 = 1e-3;

/// WALTZ-16 in 90° units; negative means phase −x.
const WALTZ_Q: [i32; 9] = [-3, 4, -2, 3, -1, 2, -4, 2, -3];

pub fn spin_lock_segment(duration: f64, amplitude: f64, mode: LockMode) -> Result<SeqItem, PulseError> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(PulseError::Invalid(format!("spin-lock duration must be > 0, got {duration}")));
    }
    if !(amplitude.is_finite() && amplitude >= 0.0) {
        return Err(PulseError::Invalid(format!("spin-lock amplitude must be ≥ 0, got {amplitude}")));
    }
    Ok(SeqItem::SpinLock(SpinLock { duration, amplitude, mode }))
}

/// (sign of x-phase, duration) elements of the supercycle Q Q̄ Q̄ Q, repeated
/// and truncated to `duration`. A 90° element lasts 1/(4·amplitude).
pub fn waltz16_elements(duration: f64, amplitude: f64) -> Vec<(f64, f64)> {
    if amplitude <= 0.0 {
        return vec![(1.0, duration)];
    }
    let quarter = 1.0 / (4.0 * amplitude);
    let cycle: Vec<(f64, f64)> = [1, -1, -1, 1]
        .iter()
        .flat_map(|&s| WALTZ_Q.iter().map(move |&q| ((s * q).signum() as f64, q.unsigned_abs() as f64 * quarter)))
        .collect();
    let cycle_len: f64 = cycle.iter().map(|e| e.1).sum();
    let full = ((duration / cycle_len) + 1e-9).floor() as usize;
    let mut out = Vec::with_capacity(full * cycle.len() + cycle.len());
    for _ in 0..full {
        out.extend_from_slice(&cycle);
    }
    let mut left = duration - full as f64 * cycle_len;
    for &(s, d) in &cycle {
        if left <= 1e-12 * duration {
            break;
        }
        out.push((s, d.min(left)));
        left -= d;
    }
    out
}

/// Selective Gaussian pulse on the single-quantum transition a ↔ b.
///
/// Truncated at ±3σ with σ = duration/6. The envelope is scaled so that
/// ∫a dt = flip_area/(2π), the nutation angle of a bare spin-½.
pub fn gaussian_probe_segment(
    duration: f64,
    transition: (usize, usize),
    p: &SpinParams,
    flip_area: f64,
) -> Result<PulseSegment, PulseError> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(PulseError::Invalid(format!("Gaussian duration must be > 0, got {duration}")));
    }
    if !(flip_area.is_finite() && flip_area >= 0.0) {
        return Err(PulseError::Invalid(format!("flip area must be ≥ 0, got {flip_area}")));
    }
    let offset = resonant_offset(p, transition.0, transition.1)?;
    let n = ((duration / GAUSSIAN_SAMPLE_INTERVAL) - 1e-9).ceil().max(1.0) as usize;
    let h = duration / n as f64;
    let sigma = duration / 6.0;
    let shape: Vec<f64> = (0..n)
        .map(|k| {
            let x = (k as f64 + 0.5) * h - duration / 2.0;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let norm = flip_area / (2.0 * PI) / (shape.iter().sum::<f64>() * h);
    let env = shape.into_iter().map(|g| EnvelopeSample { amplitude: g * norm, phase: 0.0 }).collect();
    PulseSegment::new(duration, env, offset)
}

/// Probe and control tones, amplitudes in Hz, offsets in the Eq.-1 frame in Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoTone {
    pub probe_amp: f64,
    pub control_amp: f64,
    pub probe_offset: f64,
    pub control_offset: f64,
}

impl TwoTone {
    pub fn field(&self, t: f64) -> C64 {
        C64::from_polar(self.probe_amp, 2.0 * PI * self.probe_offset * t)
            + C64::from_polar(self.control_amp, 2.0 * PI * self.control_offset * t)
    }
}

pub fn two_tone_segment(
    duration: f64,
    probe_amp: f64,
    control_amp: f64,
    probe_offset: f64,
    control_offset: f64,
) -> Result<PulseSegment, PulseError> {
    let tones = TwoTone { probe_amp, control_amp, probe_offset, control_offset };
    two_tone_segment_at(duration, &tones, 0.0, DEFAULT_TWO_TONE_RATE)
}

/// Two-tone segment whose tone phases are referenced to absolute time, so
/// back-to-back segments built with consecutive `start_time`s join without a
/// phase jump. Each sample holds |b| and arg b of the summed complex field at
/// the sample midpoint.
pub fn two_tone_segment_at(
    duration: f64,
    tones: &TwoTone,
    start_time: f64,
    sample_rate: f64,
) -> Result<PulseSegment, PulseError> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(PulseError::Invalid(format!("two-tone duration must be > 0, got {duration}")));
    }
    if !(tones.probe_amp >= 0.0 && tones.control_amp >= 0.0) {
        return Err(PulseError::Invalid(format!("tone amplitudes must be ≥ 0: {tones:?}")));
    }
    let required = 20.0 * tones.probe_offset.abs().max(tones.control_offset.abs());
    if !(sample_rate >= required) {
        return Err(PulseError::UnderSampled { rate: sample_rate, required });
    }
    let n = ((duration * sample_rate) - 1e-9).ceil().max(1.0) as usize;
    let h = duration / n as f64;
    let env = (0..n)
        .map(|k| {
            let b = tones.field(start_time + (k as f64 + 0.5) * h);
            let amplitude = b.norm();
            EnvelopeSample { amplitude, phase: if amplitude > 0.0 { b.arg() } else { 0.0 } }
        })
        .collect();
    PulseSegment::new(duration, env, 0.0)
}
