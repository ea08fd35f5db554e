//! Fixed-size 4×4 / 16×16 arithmetic for the inner propagation loops.

use numlin::{CMat, C64};

pub type M4 = [C64; 16];
pub type S16 = [C64; 256];

const ZERO: C64 = C64::new(0.0, 0.0);

pub fn to_m4(m: &CMat) -> M4 {
    m.as_slice().try_into().expect("4×4 matrix expected")
}

pub fn to_s16(m: &CMat) -> Box<S16> {
    Box::new(m.as_slice().try_into().expect("16×16 matrix expected"))
}

pub fn from_m4(m: &M4) -> CMat {
    CMat::from_vec(m.to_vec())
}

#[inline]
pub fn mul(a: &M4, b: &M4) -> M4 {
    let mut out = [ZERO; 16];
    for i in 0..4 {
        for k in 0..4 {
            let aik = a[i * 4 + k];
            for j in 0..4 {
                out[i * 4 + j] += aik * b[k * 4 + j];
            }
        }
    }
    out
}

/// a·b†
#[inline]
pub fn mul_adj(a: &M4, b: &M4) -> M4 {
    let mut out = [ZERO; 16];
    for i in 0..4 {
        for j in 0..4 {
            let mut s = ZERO;
            for k in 0..4 {
                s += a[i * 4 + k] * b[j * 4 + k].conj();
            }
            out[i * 4 + j] = s;
        }
    }
    out
}

/// u·ρ·u†
#[inline]
pub fn sandwich(u: &M4, rho: &M4) -> M4 {
    mul_adj(&mul(u, rho), u)
}

/// diag(d)·u·diag(d)
#[inline]
pub fn diag_sandwich(d: &[C64; 4], u: &M4) -> M4 {
    let mut out = *u;
    for i in 0..4 {
        for j in 0..4 {
            out[i * 4 + j] *= d[i] * d[j];
        }
    }
    out
}

#[inline]
pub fn apply(sup: &S16, v: &M4) -> M4 {
    let mut out = [ZERO; 16];
    for (i, o) in out.iter_mut().enumerate() {
        let row = &sup[i * 16..(i + 1) * 16];
        let mut s = ZERO;
        for (a, b) in row.iter().zip(v) {
            s += a * b;
        }
        *o = s;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use numlin::c;

    #[test]
    fn kernels_match_general_products() {
        let a = CMat::from_fn(4, |i, j| c(i as f64 - 0.3 * j as f64, 0.1 * (i * j) as f64));
        let b = CMat::from_fn(4, |i, j| c(0.2 * j as f64, i as f64 - j as f64));
        let (am, bm) = (to_m4(&a), to_m4(&b));
        assert!(from_m4(&mul(&am, &bm)).approx_eq(&(&a * &b), 1e-13));
        assert!(from_m4(&sandwich(&am, &bm)).approx_eq(&a.conjugate(&b), 1e-12));
        let d = [c(1.0, 1.0), c(0.0, 2.0), c(-1.0, 0.5), c(0.3, 0.0)];
        let dm = CMat::diag(&d);
        assert!(from_m4(&diag_sandwich(&d, &am)).approx_eq(&(&(&dm * &a) * &dm), 1e-13));
        let s = CMat::from_fn(16, |i, j| c((i + 2 * j) as f64 * 0.01, (i as f64 - j as f64) * 0.02));
        assert!(from_m4(&apply(&to_s16(&s), &am)).approx_eq(&numlin::apply_super(&s, &a), 1e-12));
    }
}
