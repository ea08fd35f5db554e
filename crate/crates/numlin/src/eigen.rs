use crate::{CMat, NumError, C64};

/// Tolerance for the Hermitian precondition (relative to the largest entry).
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Eigen-decomposition of a Hermitian matrix.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    /// ascending
    pub values: Vec<f64>,
    /// eigenvectors as columns, matching `values`
    pub vectors: CMat,
}

impl HermitianEigen {
    pub fn vector(&self, k: usize) -> Vec<C64> {
        let n = self.vectors.dim();
        (0..n).map(|i| self.vectors[(i, k)]).collect()
    }
}

/// Cyclic complex Jacobi. Each rotation first removes the phase of the pivot,
/// then applies the real symmetric Jacobi rotation to the 2×2 block.
pub fn hermitian_eigen(h: &CMat) -> Result<HermitianEigen, NumError> {
    let err = h.hermiticity_error();
    if err > HERMITIAN_TOL {
        return Err(NumError::NotHermitian { deviation: err });
    }
    let n = h.dim();
    let mut a = h.hermitian_part();
    let mut v = CMat::identity(n);
    let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off <= 1e-17 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                let mag = apq.norm();
                if mag <= 1e-300 {
                    continue;
                }
                let e = apq / mag;
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let theta = (aqq - app) / (2.0 * mag);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // G acts on span{e_p, e_q}
                let gpp = C64::new(c, 0.0);
                let gpq = C64::new(s, 0.0);
                let gqp = -e.conj() * s;
                let gqq = e.conj() * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * gpp + akq * gqp;
                    a[(k, q)] = akp * gpq + akq * gqq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = gpp.conj() * apk + gqp.conj() * aqk;
                    a[(q, k)] = gpq.conj() * apk + gqq.conj() * aqk;
                }
                a[(p, q)] = C64::new(0.0, 0.0);
                a[(q, p)] = C64::new(0.0, 0.0);
                a[(p, p)] = C64::new(a[(p, p)].re, 0.0);
                a[(q, q)] = C64::new(a[(q, q)].re, 0.0);
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * gpp + vkq * gqp;
                    v[(k, q)] = vkp * gpq + vkq * gqq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    let values = order.iter().map(|&i| a[(i, i)].re).collect();
    let vectors = CMat::from_fn(n, |i, k| v[(i, order[k])]);
    Ok(HermitianEigen { values, vectors })
}

/// exp(−i·angle_scale·h) for Hermitian `h`, via eigen-decomposition.
/// With Hamiltonians in Hz, a duration t gives angle_scale = 2π·t.
pub fn mat_exp_hermitian(h: &CMat, angle_scale: f64) -> Result<CMat, NumError> {
    let eig = hermitian_eigen(h)?;
    Ok(exp_from_eigen(&eig, angle_scale))
}

/// Rebuilds exp(−i·angle_scale·h) from a cached decomposition.
pub fn exp_from_eigen(eig: &HermitianEigen, angle_scale: f64) -> CMat {
    let n = eig.vectors.dim();
    let phases: Vec<C64> =
        eig.values.iter().map(|&w| C64::from_polar(1.0, -angle_scale * w)).collect();
    let v = &eig.vectors;
    CMat::from_fn(n, |i, j| (0..n).map(|k| v[(i, k)] * phases[k] * v[(j, k)].conj()).sum())
}
