//! Two coupled spin-1/2 nuclei in the frame rotating at their mean Larmor
//! frequency. Basis order is |00⟩, |01⟩, |10⟩, |11⟩ with |0⟩ = m +½.
//! All Hamiltonians are in Hz.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use numlin::{c, hermitian_eigen, kron, CMat, NumError, C64};

pub mod states;

pub use states::{
    basis_state, equilibrium_deviation, singlet_projector, singlet_triplet_states, swap_operator,
    DensityMatrix, DeviationMatrix, SingletTriplet, StateVector,
};

pub const L00: usize = 0;
pub const L01: usize = 1;
pub const L10: usize = 2;
pub const L11: usize = 3;

/// Total z magnetization m1 + m2 of each basis state.
pub const MAGNETIZATION: [f64; 4] = [1.0, 0.0, 0.0, -1.0];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpinError {
    #[error("eigenstates {0} and {1} both have dominant overlap with basis state {2}")]
    DegenerateLabeling(usize, usize, usize),
    #[error("levels {0} and {1} are not connected by a single-quantum transition")]
    NotSingleQuantum(usize, usize),
    #[error("level index {0} out of range")]
    BadLevel(usize),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error(transparent)]
    Numeric(#[from] NumError),
}

/// Chemical-shift difference and scalar coupling, both in Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinParams {
    pub delta_nu: f64,
    pub j_coupling: f64,
}

impl Default for SpinParams {
    fn default() -> Self {
        SpinParams { delta_nu: 270.3, j_coupling: 4.1 }
    }
}

/// One RF tone. The field vector precesses at `carrier_offset` in the frame
/// of the mean Larmor frequency (rotating-wave picture).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RFField {
    pub amplitude: f64,
    pub phase: f64,
    pub carrier_offset: f64,
}

impl RFField {
    pub fn on_resonance(amplitude: f64) -> Self {
        RFField { amplitude, phase: 0.0, carrier_offset: 0.0 }
    }

    /// Complex field b = a·exp(i(2π f t + φ)); the Hamiltonian is
    /// Re(b)·I_x^{12} + Im(b)·I_y^{12}.
    pub fn vector(&self, t: f64) -> C64 {
        C64::from_polar(self.amplitude, 2.0 * PI * self.carrier_offset * t + self.phase)
    }
}

/// Single-spin and collective operators.
#[derive(Debug, Clone)]
pub struct SpinOps {
    pub ix1: CMat,
    pub iy1: CMat,
    pub iz1: CMat,
    pub ix2: CMat,
    pub iy2: CMat,
    pub iz2: CMat,
    pub ix12: CMat,
    pub iy12: CMat,
    pub iz12: CMat,
    pub ip1: CMat,
    pub im1: CMat,
    pub ip2: CMat,
    pub im2: CMat,
    /// I¹·I²
    pub dot: CMat,
}

pub fn spin_operators() -> SpinOps {
    let [sx, sy, sz] = numlin::half_pauli();
    let e = CMat::identity(2);
    let sp = CMat::from_real(2, &[0.0, 1.0, 0.0, 0.0]);
    let sm = sp.transpose();
    let ix1 = kron(&sx, &e);
    let iy1 = kron(&sy, &e);
    let iz1 = kron(&sz, &e);
    let ix2 = kron(&e, &sx);
    let iy2 = kron(&e, &sy);
    let iz2 = kron(&e, &sz);
    let dot = &(&(&ix1 * &ix2) + &(&iy1 * &iy2)) + &(&iz1 * &iz2);
    SpinOps {
        ix12: &ix1 + &ix2,
        iy12: &iy1 + &iy2,
        iz12: &iz1 + &iz2,
        ip1: kron(&sp, &e),
        im1: kron(&sm, &e),
        ip2: kron(&e, &sp),
        im2: kron(&e, &sm),
        ix1,
        iy1,
        iz1,
        ix2,
        iy2,
        iz2,
        dot,
    }
}

/// (Δν/2)·I_z¹ − (Δν/2)·I_z² + J·I¹·I²
pub fn internal_hamiltonian(p: &SpinParams) -> CMat {
    let ops = spin_operators();
    let zeeman = (&ops.iz1 - &ops.iz2).scale_re(p.delta_nu / 2.0);
    &zeeman + &ops.dot.scale_re(p.j_coupling)
}

/// Magnetic-equivalence Hamiltonian J·I¹·I², what a strong spin-lock leaves.
pub fn equivalence_hamiltonian(j_coupling: f64) -> CMat {
    spin_operators().dot.scale_re(j_coupling)
}

/// Hamiltonian of a collective field with complex amplitude `b`.
pub fn collective_field(b: C64) -> CMat {
    let z = c(0.0, 0.0);
    // Re(b)·I_x + Im(b)·I_y per spin is [[0, b*/2], [b/2, 0]]
    let h = b * 0.5;
    let s = CMat::from_vec(vec![z, h.conj(), h, z]);
    let e = CMat::identity(2);
    &kron(&s, &e) + &kron(&e, &s)
}

pub fn rf_hamiltonian(field: &RFField, t: f64) -> CMat {
    collective_field(field.vector(t))
}

/// Eigenstates of the internal Hamiltonian labelled by their dominant basis state.
#[derive(Debug, Clone)]
pub struct LabeledEigensystem {
    /// energy of the eigenstate labelled by basis state k, Hz
    pub energies: [f64; 4],
    /// eigenvector for label k as column k
    pub vectors: CMat,
}

pub fn labeled_eigensystem(p: &SpinParams) -> Result<LabeledEigensystem, SpinError> {
    label_eigenstates(&internal_hamiltonian(p))
}

/// Labels by maximal squared overlap with a basis state, ties to the lower index.
pub fn label_eigenstates(h: &CMat) -> Result<LabeledEigensystem, SpinError> {
    let eig = hermitian_eigen(h)?;
    let n = h.dim();
    let mut owner: [Option<usize>; 4] = [None; 4];
    let mut energies = [0.0; 4];
    let mut vectors = CMat::zeros(n);
    for k in 0..n {
        let v = eig.vector(k);
        let mut best = 0;
        for i in 1..n {
            if v[i].norm_sqr() > v[best].norm_sqr() + 1e-12 {
                best = i;
            }
        }
        if let Some(prev) = owner[best] {
            return Err(SpinError::DegenerateLabeling(prev, k, best));
        }
        owner[best] = Some(k);
        energies[best] = eig.values[k];
        for i in 0..n {
            vectors[(i, best)] = v[i];
        }
    }
    Ok(LabeledEigensystem { energies, vectors })
}

fn check_level(l: usize) -> Result<(), SpinError> {
    if l < 4 {
        Ok(())
    } else {
        Err(SpinError::BadLevel(l))
    }
}

/// E(b) − E(a) in Hz, from exact diagonalisation.
pub fn transition_frequency(p: &SpinParams, level_a: usize, level_b: usize) -> Result<f64, SpinError> {
    check_level(level_a)?;
    check_level(level_b)?;
    let sys = labeled_eigensystem(p)?;
    Ok(sys.energies[level_b] - sys.energies[level_a])
}

/// Carrier offset at which a co-rotating field drives the single-quantum
/// transition a ↔ b. This is also where the line appears in the spectrum.
pub fn resonant_offset(p: &SpinParams, level_a: usize, level_b: usize) -> Result<f64, SpinError> {
    check_level(level_a)?;
    check_level(level_b)?;
    let dm = MAGNETIZATION[level_a] - MAGNETIZATION[level_b];
    if dm.abs() != 1.0 {
        return Err(SpinError::NotSingleQuantum(level_a, level_b));
    }
    let sys = labeled_eigensystem(p)?;
    Ok((sys.energies[level_a] - sys.energies[level_b]) * dm)
}

/// Offsets of the probe (|00⟩↔|01⟩) and control (|00⟩↔|10⟩) transitions.
pub fn probe_control_offsets(p: &SpinParams) -> Result<(f64, f64), SpinError> {
    Ok((resonant_offset(p, L00, L01)?, resonant_offset(p, L00, L10)?))
}

/// The four single-quantum lines as (a, b, offset).
pub fn single_quantum_lines(p: &SpinParams) -> Result<Vec<(usize, usize, f64)>, SpinError> {
    [(L00, L01), (L00, L10), (L01, L11), (L10, L11)]
        .into_iter()
        .map(|(a, b)| Ok((a, b, resonant_offset(p, a, b)?)))
        .collect()
}

/// Rotation exp(−i·angle·(cos φ·I_x^{12} + sin φ·I_y^{12})), an ideal hard pulse on both spins.
pub fn collective_rotation(angle: f64, phase: f64) -> CMat {
    let r = spin_half_rotation(angle, phase);
    kron(&r, &r)
}

/// exp(−i·angle·(cos φ·σx + sin φ·σy)/2)
pub fn spin_half_rotation(angle: f64, phase: f64) -> CMat {
    let (s, co) = (angle / 2.0).sin_cos();
    let off = C64::from_polar(s, -phase);
    // −i·sin·e^{−iφ} upper right, −i·sin·e^{iφ} lower left
    CMat::from_vec(vec![
        c(co, 0.0),
        c(0.0, -1.0) * off,
        c(0.0, -1.0) * off.conj(),
        c(co, 0.0),
    ])
}

pub(crate) const INV_SQRT2: f64 = FRAC_1_SQRT_2;
