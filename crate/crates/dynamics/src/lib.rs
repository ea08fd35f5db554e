//! Density-matrix evolution: exact piecewise-constant propagation, Lindblad
//! relaxation, Ornstein–Uhlenbeck noise averaging and lifetime calibration.

use numlin::{expm, left_action, right_action, CMat, NumError, C64};
use spinsys::{spin_operators, SpinError, MAGNETIZATION};

mod calibrate;
mod kernel;
mod noise;
mod propagate;

pub use calibrate::{
    fit_relaxation_rates, fit_exponential, measure_t1, measure_ts, CalibrationTargets, LifetimeFit,
};
pub use noise::{NoiseProcess, OuPair};
pub use propagate::{
    evolve_lindblad, evolve_stochastic_avg, evolve_unitary, Drive, Engine, Evolution, FreePropagator,
    Sample, Step,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DynError {
    #[error("time step too large: dt·(rate + field) = {product:.3} exceeds 0.1 (dt = {dt} s)")]
    StepTooLarge { dt: f64, product: f64 },
    #[error("invalid propagation setting: {0}")]
    InvalidConfig(String),
    #[error("infeasible lifetime targets: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Numeric(#[from] NumError),
    #[error(transparent)]
    Spin(#[from] SpinError),
}

/// Phenomenological Lindblad relaxation, rates in 1/s.
///
/// Channels: √k_f·I_±ⁱ per spin, √k_cf·(I_±¹ + I_±²) collectively,
/// √k_u·I_zⁱ per spin and √k_c·(I_z¹ + I_z²).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RelaxationModel {
    pub flip_rate_per_spin: f64,
    pub collective_flip_rate: f64,
    pub uncorrelated_dephasing_rate: f64,
    pub correlated_dephasing_rate: f64,
}

impl RelaxationModel {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_zero(&self) -> bool {
        self.rates().iter().all(|&r| r == 0.0)
    }

    fn rates(&self) -> [f64; 4] {
        [
            self.flip_rate_per_spin,
            self.collective_flip_rate,
            self.uncorrelated_dephasing_rate,
            self.correlated_dephasing_rate,
        ]
    }

    pub fn max_rate(&self) -> f64 {
        self.rates().into_iter().fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<(), DynError> {
        if self.rates().iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(DynError::InvalidConfig(format!("relaxation rates must be finite and ≥ 0: {self:?}")));
        }
        Ok(())
    }

    /// Jump operators, already scaled by √rate; zero-rate channels are skipped.
    pub fn channels(&self) -> Vec<CMat> {
        let o = spin_operators();
        let mut out = Vec::new();
        let mut push = |rate: f64, ops: Vec<CMat>| {
            if rate > 0.0 {
                out.extend(ops.into_iter().map(|a| a.scale_re(rate.sqrt())));
            }
        };
        push(self.flip_rate_per_spin, vec![o.ip1.clone(), o.im1.clone(), o.ip2.clone(), o.im2.clone()]);
        push(self.collective_flip_rate, vec![&o.ip1 + &o.ip2, &o.im1 + &o.im2]);
        push(self.uncorrelated_dephasing_rate, vec![o.iz1.clone(), o.iz2.clone()]);
        push(self.correlated_dephasing_rate, vec![o.iz12.clone()]);
        out
    }
}

/// Integration scheme per time slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// exp of the full slice generator (Hermitian exponential without relaxation)
    ExactSlice,
    /// classical fourth-order Runge–Kutta on the slice's constant generator
    Rk4,
    /// exact unitary slice followed by the exact dissipator exponential
    Split,
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "exact-slice" => Ok(Method::ExactSlice),
            "rk4" | "fixed-step-rk4" => Ok(Method::Rk4),
            "split" => Ok(Method::Split),
            _ => Err(format!("unknown method '{s}' (exact-slice, rk4, split)")),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::ExactSlice => "exact-slice",
            Method::Rk4 => "rk4",
            Method::Split => "split",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationConfig {
    pub dt: f64,
    pub method: Method,
    pub n_trajectories: usize,
    /// record every this many slices; 0 disables sampling
    pub record_stride: usize,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig { dt: 5e-5, method: Method::ExactSlice, n_trajectories: 1, record_stride: 0 }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<(), DynError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(DynError::InvalidConfig(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.n_trajectories == 0 {
            return Err(DynError::InvalidConfig("n_trajectories must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Purely dissipative part of the generator (16×16, row-major vectorisation).
pub fn dissipator(model: &RelaxationModel) -> CMat {
    let mut l = CMat::zeros(16);
    for a in model.channels() {
        let ad = a.adjoint();
        let ada = &ad * &a;
        l += &(&left_action(&a) * &right_action(&ad));
        l -= &left_action(&ada).scale_re(0.5);
        l -= &right_action(&ada).scale_re(0.5);
    }
    l
}

/// Full Lindblad generator: −i2π[H, ·] plus the dissipator.
pub fn lindblad_superoperator(h: &CMat, model: &RelaxationModel) -> Result<CMat, DynError> {
    let err = h.hermiticity_error();
    if err > numlin::HERMITIAN_TOL {
        return Err(NumError::NotHermitian { deviation: err }.into());
    }
    let comm = &left_action(h) - &right_action(h);
    let mut l = comm.scale(C64::new(0.0, -2.0 * std::f64::consts::PI));
    l += &dissipator(model);
    Ok(l)
}

/// exp(duration·L) for a constant generator.
pub fn propagator_superop(h: &CMat, model: &RelaxationModel, duration: f64) -> Result<CMat, DynError> {
    Ok(expm(&lindblad_superoperator(h, model)?.scale_re(duration)))
}

/// Removes all coherence between levels of different total magnetization,
/// the effect of a dephasing field-gradient pulse.
pub fn zero_quantum_filter(rho: &CMat) -> CMat {
    CMat::from_fn(4, |i, j| {
        if MAGNETIZATION[i] == MAGNETIZATION[j] {
            rho[(i, j)]
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use numlin::{apply_super, c, hermitian_eigen, mat_exp_hermitian};
    use spinsys::{internal_hamiltonian, singlet_projector, SpinParams};

    fn dev(m: &CMat) -> CMat {
        spinsys::DeviationMatrix::project(m).into_mat()
    }

    #[test]
    fn generator_preserves_trace() {
        let model = RelaxationModel {
            flip_rate_per_spin: 0.3,
            collective_flip_rate: 0.2,
            uncorrelated_dephasing_rate: 0.1,
            correlated_dephasing_rate: 0.4,
        };
        let l = lindblad_superoperator(&internal_hamiltonian(&SpinParams::default()), &model).unwrap();
        // trace functional is vec(I)ᵀ; its left action on L must vanish
        for col in 0..16 {
            let s: C64 = (0..4).map(|k| l[(k * 4 + k, col)]).sum();
            assert!(s.norm() <= 1e-12, "column {col}: {s}");
        }
    }

    #[test]
    fn rejects_non_hermitian() {
        let h = CMat::from_real(4, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            lindblad_superoperator(&h, &RelaxationModel::zero()),
            Err(DynError::Numeric(NumError::NotHermitian { .. }))
        ));
    }

    #[test]
    fn coherent_limit_matches_unitary() {
        let h = internal_hamiltonian(&SpinParams::default());
        let rho = spinsys::equilibrium_deviation().into_mat();
        let rho = &numlin::kron(&numlin::half_pauli()[0], &CMat::identity(2)) + &rho;
        let t = 0.0123;
        let sup = propagator_superop(&h, &RelaxationModel::zero(), t).unwrap();
        let u = mat_exp_hermitian(&h, 2.0 * std::f64::consts::PI * t).unwrap();
        assert!(apply_super(&sup, &rho).approx_eq(&u.conjugate(&rho), 1e-9));
    }

    #[test]
    fn singlet_immune_to_common_mode_dephasing() {
        let model = RelaxationModel { correlated_dephasing_rate: 2.0, ..Default::default() };
        let s = dev(&singlet_projector());
        let d = apply_super(&dissipator(&model), &s);
        assert!(d.max_abs() < 1e-15);
    }

    #[test]
    fn uncorrelated_dephasing_rate_from_generator_spectrum() {
        // the |01⟩⟨10| coherence is an eigen-operator of the dissipator; its decay
        // rate must be one of the generator's eigenvalues
        let k = 0.7;
        let model = RelaxationModel { uncorrelated_dephasing_rate: k, ..Default::default() };
        let l = dissipator(&model);
        // the generator is real diagonal here, so the Hermitian solver applies
        let eig = hermitian_eigen(&l.hermitian_part()).unwrap();
        let mut coh = CMat::zeros(4);
        coh[(1, 2)] = c(1.0, 0.0);
        let lc = apply_super(&l, &coh);
        let rate = -lc[(1, 2)].re;
        assert!(eig.values.iter().any(|&v| (v + rate).abs() < 1e-12));
        // each spin's I_z picks up ½ from 01 vs 10, so the rate is 2·(k/2)
        assert!((rate - k).abs() < 1e-12);
        assert!(lc.max_abs() - lc[(1, 2)].norm() < 1e-15);
    }

    #[test]
    fn dephasing_only_is_unital() {
        let model = RelaxationModel {
            uncorrelated_dephasing_rate: 0.4,
            correlated_dephasing_rate: 0.9,
            ..Default::default()
        };
        let mixed = CMat::identity(4).scale_re(0.25);
        let sup = propagator_superop(&internal_hamiltonian(&SpinParams::default()), &model, 3.0).unwrap();
        assert!(apply_super(&sup, &mixed).approx_eq(&mixed, 1e-10));
    }

    #[test]
    fn zero_quantum_filter_keeps_zq_block() {
        let m = CMat::from_fn(4, |i, j| c((i * 4 + j) as f64, 0.0));
        let f = zero_quantum_filter(&m);
        assert_eq!(f[(1, 2)], m[(1, 2)]);
        assert_eq!(f[(0, 0)], m[(0, 0)]);
        assert_eq!(f[(0, 1)], c(0.0, 0.0));
        assert_eq!(f[(0, 3)], c(0.0, 0.0));
    }
}
