use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use crate::{NumError, C64};

/// Dense square complex matrix, row-major.
#[derive(Clone, PartialEq)]
pub struct CMat {
    n: usize,
    data: Vec<C64>,
}

impl CMat {
    pub fn zeros(n: usize) -> Self {
        assert!(n > 0, "matrix dimension must be positive");
        CMat { n, data: vec![C64::new(0.0, 0.0); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.data[i * n + j] = f(i, j);
            }
        }
        m
    }

    /// Builds from row-major entries; panics unless `data.len()` is a perfect square.
    pub fn from_vec(data: Vec<C64>) -> Self {
        let n = (data.len() as f64).sqrt().round() as usize;
        assert!(n > 0 && n * n == data.len(), "entry count {} is not a square", data.len());
        CMat { n, data }
    }

    pub fn from_real(n: usize, rows: &[f64]) -> Self {
        assert_eq!(rows.len(), n * n);
        Self::from_vec(rows.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn diag(d: &[C64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &x) in d.iter().enumerate() {
            m.data[i * d.len() + i] = x;
        }
        m
    }

    pub fn real_diag(d: &[f64]) -> Self {
        Self::diag(&d.iter().map(|&x| C64::new(x, 0.0)).collect::<Vec<_>>())
    }

    /// Outer product |a⟩⟨b|.
    pub fn outer(a: &[C64], b: &[C64]) -> Self {
        assert_eq!(a.len(), b.len());
        Self::from_fn(a.len(), |i, j| a[i] * b[j].conj())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.n, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |i, j| self[(j, i)])
    }

    pub fn conj(&self) -> Self {
        CMat { n: self.n, data: self.data.iter().map(|z| z.conj()).collect() }
    }

    pub fn scale(&self, s: C64) -> Self {
        CMat { n: self.n, data: self.data.iter().map(|&z| z * s).collect() }
    }

    pub fn scale_re(&self, s: f64) -> Self {
        CMat { n: self.n, data: self.data.iter().map(|&z| z * s).collect() }
    }

    pub fn trace(&self) -> C64 {
        (0..self.n).map(|i| self.data[i * self.n + i]).sum()
    }

    pub fn diagonal(&self) -> Vec<C64> {
        (0..self.n).map(|i| self.data[i * self.n + i]).collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Induced 1-norm (max column sum).
    pub fn norm1(&self) -> f64 {
        (0..self.n)
            .map(|j| (0..self.n).map(|i| self[(i, j)].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Largest entrywise gap |a_ij − conj(a_ji)|, relative to max(1, max|a_ij|).
    pub fn hermiticity_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in i..self.n {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst / self.max_abs().max(1.0)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        let p = &self.adjoint() * self;
        (&p - &CMat::identity(self.n)).max_abs() <= tol
    }

    /// Hermitian part (A + A†)/2.
    pub fn hermitian_part(&self) -> Self {
        Self::from_fn(self.n, |i, j| (self[(i, j)] + self[(j, i)].conj()) * 0.5)
    }

    pub fn matmul(&self, other: &CMat) -> Result<CMat, NumError> {
        if self.n != other.n {
            return Err(NumError::DimMismatch { left: self.n, right: other.n });
        }
        let mut out = CMat::zeros(self.n);
        matmul_into(self.n, &self.data, &other.data, &mut out.data);
        Ok(out)
    }

    pub fn matvec(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(v.len(), self.n);
        (0..self.n)
            .map(|i| {
                let row = &self.data[i * self.n..(i + 1) * self.n];
                row.iter().zip(v).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    /// A·B·A†
    pub fn conjugate(&self, b: &CMat) -> CMat {
        &(self * b) * &self.adjoint()
    }

    /// Approximate equality in max-abs entry difference.
    pub fn approx_eq(&self, other: &CMat, tol: f64) -> bool {
        self.n == other.n && (self - other).max_abs() <= tol
    }
}

/// out = a·b for n×n row-major slices.
#[inline]
pub fn matmul_into(n: usize, a: &[C64], b: &[C64], out: &mut [C64]) {
    for i in 0..n {
        let row = &mut out[i * n..(i + 1) * n];
        row.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        for k in 0..n {
            let aik = a[i * n + k];
            if aik.re == 0.0 && aik.im == 0.0 {
                continue;
            }
            let brow = &b[k * n..(k + 1) * n];
            for (o, &bkj) in row.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
}

impl Index<(usize, usize)> for CMat {
    type Output = C64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for CMat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.n + j]
    }
}

impl Mul for &CMat {
    type Output = CMat;
    fn mul(self, rhs: &CMat) -> CMat {
        self.matmul(rhs).expect("dimension mismatch in matrix product")
    }
}

impl Add for &CMat {
    type Output = CMat;
    fn add(self, rhs: &CMat) -> CMat {
        assert_eq!(self.n, rhs.n, "dimension mismatch in matrix sum");
        CMat { n: self.n, data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect() }
    }
}

impl Sub for &CMat {
    type Output = CMat;
    fn sub(self, rhs: &CMat) -> CMat {
        assert_eq!(self.n, rhs.n, "dimension mismatch in matrix difference");
        CMat { n: self.n, data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect() }
    }
}

impl Neg for &CMat {
    type Output = CMat;
    fn neg(self) -> CMat {
        CMat { n: self.n, data: self.data.iter().map(|z| -z).collect() }
    }
}

impl AddAssign<&CMat> for CMat {
    fn add_assign(&mut self, rhs: &CMat) {
        assert_eq!(self.n, rhs.n);
        self.data.iter_mut().zip(&rhs.data).for_each(|(a, b)| *a += b);
    }
}

impl SubAssign<&CMat> for CMat {
    fn sub_assign(&mut self, rhs: &CMat) {
        assert_eq!(self.n, rhs.n);
        self.data.iter_mut().zip(&rhs.data).for_each(|(a, b)| *a -= b);
    }
}

impl fmt::Debug for CMat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMat {}x{} [", self.n, self.n)?;
        for i in 0..self.n {
            write!(f, " ")?;
            for j in 0..self.n {
                let z = self[(i, j)];
                write!(f, " {:+.6}{:+.6}i", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// [a, b] = ab − ba
pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    &(a * b) - &(b * a)
}

/// Standard Kronecker product; entry (i·nb + k, j·nb + l) = a(i,j)·b(k,l).
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (na, nb) = (a.dim(), b.dim());
    let n = na * nb;
    let mut out = CMat::zeros(n);
    for i in 0..na {
        for j in 0..na {
            let aij = a[(i, j)];
            for k in 0..nb {
                for l in 0..nb {
                    out[(i * nb + k, j * nb + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// trace(a†·b)
pub fn frobenius_inner(a: &CMat, b: &CMat) -> Result<C64, NumError> {
    if a.dim() != b.dim() {
        return Err(NumError::DimMismatch { left: a.dim(), right: b.dim() });
    }
    Ok(a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x.conj() * y).sum())
}
