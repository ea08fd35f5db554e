//! Observables read from simulated density matrices: the normalized
//! correlation with a target state, deviation populations, and spectra
//! obtained from a simulated free induction decay.

use numlin::{apply_super, CMat, C64};
use rand::Rng;
use rand_distr::StandardNormal;
use spinsys::{internal_hamiltonian, spin_operators, SpinParams};

use dynamics::{propagator_superop, DynError, RelaxationModel};

mod spectrum;

pub use spectrum::{
    export_spectrum, find_peaks, spectrum_from_fid, spectrum_zero_filled, write_spectrum, Peak, SpectrumResult,
};

/// Projected inputs below this Frobenius norm count as zero.
pub const ZERO_DEVIATION_TOL: f64 = 1e-12;

/// Longest acquisition `simulate_fid` accepts, seconds.
pub const MAX_ACQUISITION: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("{which} input has no traceless part (‖ρ − tr ρ/4‖ = {norm:e})")]
    ZeroDeviation { which: &'static str, norm: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Dynamics(#[from] DynError),
}

/// ρ − trace(ρ)/n · 1
pub fn traceless_part(rho: &CMat) -> CMat {
    let n = rho.dim();
    let shift = rho.trace() / n as f64;
    let mut out = rho.clone();
    for i in 0..n {
        out[(i, i)] -= shift;
    }
    out
}

/// Normalized overlap trace(ρe·ρt)/√(trace(ρe²)·trace(ρt²)) of the traceless
/// parts of two Hermitian matrices. Either argument may be a density or a
/// deviation matrix; positive scale factors drop out.
pub fn correlation(rho_exp: &CMat, rho_th: &CMat) -> Result<f64, MetricsError> {
    if rho_exp.dim() != rho_th.dim() {
        return Err(MetricsError::Invalid(format!("dimension mismatch: {} vs {}", rho_exp.dim(), rho_th.dim())));
    }
    let a = traceless_part(rho_exp);
    let b = traceless_part(rho_th);
    let (na, nb) = (a.frobenius_norm(), b.frobenius_norm());
    if na < ZERO_DEVIATION_TOL {
        return Err(MetricsError::ZeroDeviation { which: "experimental", norm: na });
    }
    if nb < ZERO_DEVIATION_TOL {
        return Err(MetricsError::ZeroDeviation { which: "theoretical", norm: nb });
    }
    // trace(A·B) for Hermitian A, B is Σ conj(a_ij)·b_ij
    let ip: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x.conj() * y).re).sum();
    Ok((ip / (na * nb)).clamp(-1.0, 1.0))
}

/// Diagonal of the traceless part in the computational basis, (P00, P01, P10, P11).
pub fn deviation_populations(rho: &CMat) -> [f64; 4] {
    let d = traceless_part(rho);
    std::array::from_fn(|k| d[(k, k)].re)
}

/// Adds a Hermitian Gaussian perturbation of entrywise scale `sigma`, keeping
/// the trace. Stands in for tomography error when reading simulated states.
pub fn add_measurement_noise<R: Rng + ?Sized>(rho: &CMat, sigma: f64, rng: &mut R) -> CMat {
    let n = rho.dim();
    let g = CMat::from_fn(n, |_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let mut noise = (&g + &g.adjoint()).scale_re(sigma / 2.0);
    let shift = noise.trace() / n as f64;
    for i in 0..n {
        noise[(i, i)] -= shift;
    }
    (rho + &noise).hermitian_part()
}

/// s(k) = trace(ρ(k·dt)·(I_+¹ + I_+²))·exp(−broadening·k·dt), k = 0..n, with ρ
/// evolving freely under the internal Hamiltonian and `model`.
///
/// A spin precessing at offset ν shows up at +ν, the same sign convention as
/// the field offsets, so each line sits at the resonant offset of its transition.
pub fn simulate_fid(
    rho: &CMat,
    p: &SpinParams,
    model: &RelaxationModel,
    dt: f64,
    n: usize,
    broadening: f64,
) -> Result<Vec<C64>, MetricsError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(MetricsError::Invalid(format!("dwell time must be > 0, got {dt}")));
    }
    if dt * n as f64 > MAX_ACQUISITION * (1.0 + 1e-12) {
        return Err(MetricsError::Invalid(format!(
            "acquisition of {} s exceeds {MAX_ACQUISITION} s",
            dt * n as f64
        )));
    }
    if !(broadening.is_finite() && broadening >= 0.0) {
        return Err(MetricsError::Invalid(format!("line broadening must be ≥ 0, got {broadening}")));
    }
    let ops = spin_operators();
    let detect = &ops.ip1 + &ops.ip2;
    let step = propagator_superop(&internal_hamiltonian(p), model, dt)?;
    let mut r = rho.clone();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        if k > 0 {
            r = apply_super(&step, &r);
        }
        out.push((&r * &detect).trace() * (-broadening * k as f64 * dt).exp());
    }
    Ok(out)
}
