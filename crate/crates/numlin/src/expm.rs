use crate::{CMat, C64};

/// General matrix exponential exp(a) by scaling and squaring with a Taylor core.
///
/// Used for non-Hermitian generators (Lindblad superoperators). The scaled
/// matrix has 1-norm ≤ 1/2, where 24 Taylor terms are far below roundoff.
pub fn expm(a: &CMat) -> CMat {
    let n = a.dim();
    let norm = a.norm1();
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let b = a.scale_re(0.5f64.powi(s));

    let mut sum = CMat::identity(n);
    let mut term = CMat::identity(n);
    for k in 1..=24 {
        term = (&term * &b).scale_re(1.0 / k as f64);
        sum += &term;
        if term.max_abs() <= 1e-18 * sum.max_abs() {
            break;
        }
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// a^k by binary powering.
pub fn mat_pow(a: &CMat, mut k: u64) -> CMat {
    let mut result = CMat::identity(a.dim());
    let mut base = a.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        k >>= 1;
        if k > 0 {
            base = &base * &base;
        }
    }
    result
}

/// Row-major vectorisation helpers: vec(A·X) = (A ⊗ I)·vec(X),
/// vec(X·B) = (I ⊗ Bᵀ)·vec(X).
pub fn left_action(a: &CMat) -> CMat {
    crate::kron(a, &CMat::identity(a.dim()))
}

pub fn right_action(b: &CMat) -> CMat {
    crate::kron(&CMat::identity(b.dim()), &b.transpose())
}

/// Applies a superoperator (n²×n²) to an n×n matrix.
pub fn apply_super(sup: &CMat, x: &CMat) -> CMat {
    let v = sup.matvec(x.as_slice());
    CMat::from_vec(v)
}

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}
