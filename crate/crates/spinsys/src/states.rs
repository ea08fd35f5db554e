use numlin::{c, hermitian_eigen, CMat, C64};

use crate::{spin_operators, SpinError, INV_SQRT2};

/// Normalised two-spin state over (|00⟩, |01⟩, |10⟩, |11⟩).
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector([C64; 4]);

impl StateVector {
    pub fn new(amps: Vec<C64>) -> Result<Self, SpinError> {
        let arr: [C64; 4] = amps
            .try_into()
            .map_err(|v: Vec<C64>| SpinError::InvalidState(format!("{} amplitudes", v.len())))?;
        let norm: f64 = arr.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(SpinError::InvalidState(format!("norm {norm}")));
        }
        Ok(StateVector(arr))
    }

    fn from_real(a: [f64; 4]) -> Self {
        StateVector(a.map(|x| c(x, 0.0)))
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.0
    }

    /// ⟨self|other⟩
    pub fn overlap(&self, other: &StateVector) -> C64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a.conj() * b).sum()
    }

    /// ⟨self|U|other⟩
    pub fn matrix_element(&self, u: &CMat, other: &StateVector) -> C64 {
        let uv = u.matvec(&other.0);
        self.0.iter().zip(&uv).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn projector(&self) -> CMat {
        CMat::outer(&self.0, &self.0)
    }
}

pub fn basis_state(k: usize) -> StateVector {
    let mut a = [0.0; 4];
    a[k] = 1.0;
    StateVector::from_real(a)
}

#[derive(Debug, Clone)]
pub struct SingletTriplet {
    pub s0: StateVector,
    pub t1: StateVector,
    pub t0: StateVector,
    pub tm1: StateVector,
}

pub fn singlet_triplet_states() -> SingletTriplet {
    SingletTriplet {
        s0: StateVector::from_real([0.0, INV_SQRT2, -INV_SQRT2, 0.0]),
        t1: StateVector::from_real([1.0, 0.0, 0.0, 0.0]),
        t0: StateVector::from_real([0.0, INV_SQRT2, INV_SQRT2, 0.0]),
        tm1: StateVector::from_real([0.0, 0.0, 0.0, 1.0]),
    }
}

pub fn singlet_projector() -> CMat {
    singlet_triplet_states().s0.projector()
}

/// Exchange of the two spins.
pub fn swap_operator() -> CMat {
    CMat::from_real(
        4,
        &[
            1.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        ],
    )
}

/// I_z¹ + I_z² = diag(1, 0, 0, −1)
pub fn equilibrium_deviation() -> DeviationMatrix {
    DeviationMatrix(spin_operators().iz12)
}

const TRACE_TOL: f64 = 1e-10;

/// Unit-trace positive semidefinite 4×4 Hermitian matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(CMat);

impl DensityMatrix {
    pub fn new(m: CMat) -> Result<Self, SpinError> {
        check_hermitian(&m)?;
        let tr = m.trace();
        if (tr - c(1.0, 0.0)).norm() > TRACE_TOL {
            return Err(SpinError::InvalidState(format!("trace {tr}")));
        }
        let min = hermitian_eigen(&m)?.values[0];
        if min < -1e-9 {
            return Err(SpinError::InvalidState(format!("negative eigenvalue {min:e}")));
        }
        Ok(DensityMatrix(m))
    }

    pub fn maximally_mixed() -> Self {
        DensityMatrix(CMat::identity(4).scale_re(0.25))
    }

    pub fn pure(v: &StateVector) -> Self {
        DensityMatrix(v.projector())
    }

    pub fn as_mat(&self) -> &CMat {
        &self.0
    }

    pub fn into_mat(self) -> CMat {
        self.0
    }

    /// ρ − I/4
    pub fn deviation(&self) -> DeviationMatrix {
        DeviationMatrix(&self.0 - &CMat::identity(4).scale_re(0.25))
    }
}

/// Traceless 4×4 Hermitian matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationMatrix(CMat);

impl DeviationMatrix {
    pub fn new(m: CMat) -> Result<Self, SpinError> {
        check_hermitian(&m)?;
        let tr = m.trace();
        if tr.norm() > TRACE_TOL {
            return Err(SpinError::InvalidState(format!("trace {tr}")));
        }
        Ok(DeviationMatrix(m))
    }

    /// Traceless part of any 4×4 matrix.
    pub fn project(m: &CMat) -> Self {
        let shift = m.trace() / m.dim() as f64;
        let mut out = m.clone();
        for i in 0..m.dim() {
            out[(i, i)] -= shift;
        }
        DeviationMatrix(out)
    }

    pub fn as_mat(&self) -> &CMat {
        &self.0
    }

    pub fn into_mat(self) -> CMat {
        self.0
    }
}

fn check_hermitian(m: &CMat) -> Result<(), SpinError> {
    if m.dim() != 4 {
        return Err(SpinError::InvalidState(format!("dimension {}", m.dim())));
    }
    if !m.is_hermitian(1e-10) {
        return Err(SpinError::InvalidState("not Hermitian".into()));
    }
    Ok(())
}
