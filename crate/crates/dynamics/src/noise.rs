use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::DynError;

/// Slow random z-fields δ₁(t)·I_z¹ + δ₂(t)·I_z² (Hz), each an
/// Ornstein–Uhlenbeck process with the given rms and correlation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseProcess {
    pub rms_amplitude: f64,
    pub correlation_time: f64,
    /// correlation between the two spins' fields, in [−1, 1]
    pub correlation_coefficient: f64,
    pub seed: u64,
}

impl NoiseProcess {
    pub fn silent() -> Self {
        NoiseProcess { rms_amplitude: 0.0, correlation_time: 1.0, correlation_coefficient: 0.0, seed: 0 }
    }

    pub fn validate(&self) -> Result<(), DynError> {
        if !(self.rms_amplitude.is_finite() && self.rms_amplitude >= 0.0) {
            return Err(DynError::InvalidConfig(format!("rms_amplitude must be ≥ 0, got {}", self.rms_amplitude)));
        }
        if !(self.correlation_time.is_finite() && self.correlation_time > 0.0) {
            return Err(DynError::InvalidConfig(format!(
                "correlation_time must be > 0, got {}",
                self.correlation_time
            )));
        }
        if !(-1.0..=1.0).contains(&self.correlation_coefficient) {
            return Err(DynError::InvalidConfig(format!(
                "correlation_coefficient must lie in [-1, 1], got {}",
                self.correlation_coefficient
            )));
        }
        Ok(())
    }

    /// Independent stream for one trajectory, derived from (seed, index).
    pub fn trajectory(&self, index: u64) -> OuPair {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        OuPair::new(*self, rng)
    }
}

/// Two unit OU processes mixed by Cholesky factor to the requested correlation.
pub struct OuPair {
    noise: NoiseProcess,
    rng: ChaCha8Rng,
    x1: f64,
    x2: f64,
    cached_dt: f64,
    decay: f64,
    kick: f64,
}

impl OuPair {
    fn new(noise: NoiseProcess, mut rng: ChaCha8Rng) -> Self {
        // start in the stationary distribution
        let x1 = StandardNormal.sample(&mut rng);
        let x2 = StandardNormal.sample(&mut rng);
        OuPair { noise, rng, x1, x2, cached_dt: f64::NAN, decay: 0.0, kick: 0.0 }
    }

    /// Field values (Hz) on the two spins for the current interval.
    pub fn fields(&self) -> (f64, f64) {
        let s = self.noise.rms_amplitude;
        let r = self.noise.correlation_coefficient;
        (s * self.x1, s * (r * self.x1 + (1.0 - r * r).sqrt() * self.x2))
    }

    /// Exact AR(1) update over `dt`.
    pub fn advance(&mut self, dt: f64) {
        if dt != self.cached_dt {
            self.cached_dt = dt;
            self.decay = (-dt / self.noise.correlation_time).exp();
            self.kick = (1.0 - self.decay * self.decay).sqrt();
        }
        let n1: f64 = StandardNormal.sample(&mut self.rng);
        let n2: f64 = StandardNormal.sample(&mut self.rng);
        self.x1 = self.decay * self.x1 + self.kick * n1;
        self.x2 = self.decay * self.x2 + self.kick * n2;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn process(r: f64) -> NoiseProcess {
        NoiseProcess { rms_amplitude: 2.0, correlation_time: 0.05, correlation_coefficient: r, seed: 17 }
    }

    #[test]
    fn stationary_moments() {
        let n = process(0.6);
        let (mut s11, mut s22, mut s12, mut count) = (0.0, 0.0, 0.0, 0.0);
        for k in 0..400 {
            let mut ou = n.trajectory(k);
            for _ in 0..50 {
                let (a, b) = ou.fields();
                s11 += a * a;
                s22 += b * b;
                s12 += a * b;
                count += 1.0;
                ou.advance(0.01);
            }
        }
        let (v1, v2, cov) = (s11 / count, s22 / count, s12 / count);
        assert!((v1 - 4.0).abs() < 0.25, "{v1}");
        assert!((v2 - 4.0).abs() < 0.25, "{v2}");
        assert!((cov / (v1 * v2).sqrt() - 0.6).abs() < 0.05);
    }

    #[test]
    fn autocorrelation_follows_correlation_time() {
        let n = process(0.0);
        let lag = 0.05;
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..3000 {
            let mut ou = n.trajectory(k);
            let a = ou.fields().0;
            for _ in 0..5 {
                ou.advance(lag / 5.0);
            }
            num += a * ou.fields().0;
            den += a * a;
        }
        let rho = num / den;
        assert!((rho - (-1.0f64).exp()).abs() < 0.05, "{rho}");
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let n = process(0.0);
        let mut a = n.trajectory(3);
        let mut b = n.trajectory(3);
        let mut c = n.trajectory(4);
        a.advance(0.01);
        b.advance(0.01);
        c.advance(0.01);
        assert_eq!(a.fields(), b.fields());
        assert_ne!(a.fields(), c.fields());
    }

    #[test]
    fn validation() {
        assert!(process(0.0).validate().is_ok());
        assert!(process(1.5).validate().is_err());
        assert!(NoiseProcess { correlation_time: 0.0, ..process(0.0) }.validate().is_err());
    }
}
