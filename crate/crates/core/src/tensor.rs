//! Symmetric-tensor algebra, the isotropic elasticity tensor, and the
//! component packing used by the first-order symmetric reformulation.
//!
//! Storage order of the independent components is (11,22,33,12,13,23)
//! for `dim == 3` and (11,22,12) for `dim == 2`; off-diagonal entries
//! are stored unscaled (no Mandel weights).

use nalgebra::{DMatrix, Matrix3, RealField, Vector3, Vector6};
use thiserror::Error;

/// Scalar type for the tensor algebra (`f32` or `f64`).
pub trait Real: RealField + Copy + num_traits::FromPrimitive + num_traits::ToPrimitive {}
impl<T: RealField + Copy + num_traits::FromPrimitive + num_traits::ToPrimitive> Real for T {}

#[inline]
pub(crate) fn scalar<T: Real>(x: f64) -> T {
    nalgebra::convert(x)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TensorError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("unsupported spatial dimension {0} (must be 2 or 3)")]
    BadDim(usize),
    #[error("Lame coefficients not elliptic: need mu > 0 and 2 mu + dim lambda > 0")]
    NotElliptic,
}

/// Symmetric `dim`x`dim` matrix storing only its independent components.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct SymTensor<T> {
    dim: usize,
    comps: [T; 6],
}

impl<T: Real> SymTensor<T> {
    pub fn zero(dim: usize) -> Self {
        assert!(dim == 2 || dim == 3, "dim must be 2 or 3");
        SymTensor { dim, comps: [T::zero(); 6] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut t = Self::zero(dim);
        for i in 0..dim {
            t.comps[i] = T::one();
        }
        t
    }

    /// Builds from independent components in storage order.
    pub fn from_components(dim: usize, c: &[T]) -> Result<Self, TensorError> {
        if dim != 2 && dim != 3 {
            return Err(TensorError::BadDim(dim));
        }
        let n = dim * (dim + 1) / 2;
        if c.len() != n {
            return Err(TensorError::DimMismatch { expected: n, got: c.len() });
        }
        let mut t = Self::zero(dim);
        t.comps[..n].copy_from_slice(c);
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_comps(&self) -> usize {
        self.dim * (self.dim + 1) / 2
    }

    pub fn components(&self) -> &[T] {
        &self.comps[..self.n_comps()]
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.dim && j < self.dim);
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        if i == j {
            i
        } else if self.dim == 2 {
            2
        } else {
            // (0,1) -> 3, (0,2) -> 4, (1,2) -> 5
            2 + i + j
        }
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.comps[self.idx(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        let k = self.idx(i, j);
        self.comps[k] = v;
    }

    pub fn trace(&self) -> T {
        let mut s = T::zero();
        for i in 0..self.dim {
            s += self.comps[i];
        }
        s
    }

    /// Frobenius inner product A:B.
    pub fn dot(&self, other: &Self) -> T {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        let mut s = T::zero();
        for i in 0..self.dim {
            s += self.comps[i] * other.comps[i];
        }
        let two = scalar::<T>(2.0);
        for k in self.dim..self.n_comps() {
            s += two * self.comps[k] * other.comps[k];
        }
        s
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn mean(&self) -> T {
        self.trace() / scalar::<T>(self.dim as f64)
    }

    /// Deviatoric part A - (tr A / dim) I.
    pub fn deviatoric(&self) -> Self {
        let m = self.mean();
        let mut t = *self;
        for i in 0..self.dim {
            t.comps[i] -= m;
        }
        t
    }

    pub fn scale(&self, a: T) -> Self {
        let mut t = *self;
        for k in 0..self.n_comps() {
            t.comps[k] *= a;
        }
        t
    }

    /// Applies the tensor to a vector: (A v)_i = sum_j A_ij v_j.
    pub fn apply_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.dim, "dimension mismatch");
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j) * v[j]).fold(T::zero(), |a, b| a + b))
            .collect()
    }

    pub fn to_dmatrix(&self) -> DMatrix<T> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    pub fn from_dmatrix_symmetrized(m: &DMatrix<T>) -> Self {
        let dim = m.nrows();
        assert!(dim == 2 || dim == 3);
        let half = scalar::<T>(0.5);
        let mut t = Self::zero(dim);
        for i in 0..dim {
            for j in i..dim {
                t.set(i, j, (m[(i, j)] + m[(j, i)]) * half);
            }
        }
        t
    }
}

impl<T: Real> std::ops::Add for SymTensor<T> {
    type Output = SymTensor<T>;
    fn add(self, rhs: Self) -> Self {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        let mut t = self;
        for k in 0..t.n_comps() {
            t.comps[k] += rhs.comps[k];
        }
        t
    }
}

impl<T: Real> std::ops::Sub for SymTensor<T> {
    type Output = SymTensor<T>;
    fn sub(self, rhs: Self) -> Self {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        let mut t = self;
        for k in 0..t.n_comps() {
            t.comps[k] -= rhs.comps[k];
        }
        t
    }
}

impl<T: Real> std::ops::Neg for SymTensor<T> {
    type Output = SymTensor<T>;
    fn neg(self) -> Self {
        self.scale(-T::one())
    }
}

/// Symmetric tensor product (a b^T + b a^T) / 2.
pub fn sym_prod<T: Real>(a: &[T], b: &[T]) -> Result<SymTensor<T>, TensorError> {
    if a.len() != b.len() {
        return Err(TensorError::DimMismatch { expected: a.len(), got: b.len() });
    }
    let dim = a.len();
    if dim != 2 && dim != 3 {
        return Err(TensorError::BadDim(dim));
    }
    let half = scalar::<T>(0.5);
    let mut t = SymTensor::zero(dim);
    for i in 0..dim {
        for j in i..dim {
            t.set(i, j, (a[i] * b[j] + b[i] * a[j]) * half);
        }
    }
    Ok(t)
}

/// Isotropic Hooke tensor `A e = lambda (tr e) I + 2 mu e`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hooke<T> {
    pub lambda: T,
    pub mu: T,
    pub dim: usize,
}

impl<T: Real> Hooke<T> {
    pub fn new(lambda: T, mu: T, dim: usize) -> Result<Self, TensorError> {
        if dim != 2 && dim != 3 {
            return Err(TensorError::BadDim(dim));
        }
        let two = scalar::<T>(2.0);
        if mu <= T::zero() || two * mu + scalar::<T>(dim as f64) * lambda <= T::zero() {
            return Err(TensorError::NotElliptic);
        }
        Ok(Hooke { lambda, mu, dim })
    }

    pub fn apply(&self, e: &SymTensor<T>) -> SymTensor<T> {
        assert_eq!(self.dim, e.dim(), "dimension mismatch");
        let two = scalar::<T>(2.0);
        let tr = e.trace();
        let mut t = e.scale(two * self.mu);
        for i in 0..self.dim {
            let v = t.get(i, i) + self.lambda * tr;
            t.set(i, i, v);
        }
        t
    }

    /// Analytic inverse: `A^{-1} s = s / (2 mu) - lambda tr(s) / (2 mu (n lambda + 2 mu)) I`.
    pub fn inverse_apply(&self, s: &SymTensor<T>) -> SymTensor<T> {
        assert_eq!(self.dim, s.dim(), "dimension mismatch");
        let two = scalar::<T>(2.0);
        let n = scalar::<T>(self.dim as f64);
        let tr = s.trace();
        let coef = self.lambda * tr / (two * self.mu * (n * self.lambda + two * self.mu));
        let mut t = s.scale(T::one() / (two * self.mu));
        for i in 0..self.dim {
            let v = t.get(i, i) - coef;
            t.set(i, i, v);
        }
        t
    }

    /// Quadratic form `Q(e) = (lambda/2) (tr e)^2 + mu |e|^2`.
    pub fn quadratic_form(&self, e: &SymTensor<T>) -> T {
        assert_eq!(self.dim, e.dim(), "dimension mismatch");
        let tr = e.trace();
        self.lambda * tr * tr * scalar::<T>(0.5) + self.mu * e.dot(e)
    }

    /// Energy inner product `A e : f`.
    pub fn bilinear(&self, e: &SymTensor<T>, f: &SymTensor<T>) -> T {
        self.apply(e).dot(f)
    }

    /// Powers of the 3x3 block C~ of the packed elasticity matrix:
    /// diagonal `a_g = (2/3)(2 mu)^g + (1/3)(2 mu + 3 lambda)^g`,
    /// off-diagonal `b_g = -(1/3)(2 mu)^g + (1/3)(2 mu + 3 lambda)^g`.
    pub fn c_tilde_power(&self, gamma: T) -> Matrix3<T> {
        assert_eq!(self.dim, 3, "C~ powers are defined for dim = 3");
        let two = scalar::<T>(2.0);
        let three = scalar::<T>(3.0);
        let third = T::one() / three;
        let a = two * self.mu;
        let b = two * self.mu + three * self.lambda;
        let ag = two * third * a.powf(gamma) + third * b.powf(gamma);
        let bg = -third * a.powf(gamma) + third * b.powf(gamma);
        Matrix3::new(ag, bg, bg, bg, ag, bg, bg, bg, ag)
    }
}

/// Packed velocity/stress pair `(v, sigma_pr)` for the 9-dimensional
/// first-order system, with `sigma_pr` ordered (11,22,33,12,13,23).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PackedState<T> {
    pub v: Vector3<T>,
    pub sigma_pr: Vector6<T>,
}

impl<T: Real> PackedState<T> {
    pub fn pack(v: Vector3<T>, sigma: &SymTensor<T>) -> Self {
        assert_eq!(sigma.dim(), 3, "packing is dim = 3 only");
        let c = sigma.components();
        PackedState { v, sigma_pr: Vector6::new(c[0], c[1], c[2], c[3], c[4], c[5]) }
    }

    pub fn unpack_sigma(&self) -> SymTensor<T> {
        let s = &self.sigma_pr;
        SymTensor::from_components(3, &[s[0], s[1], s[2], s[3], s[4], s[5]]).unwrap()
    }
}

/// `B'_nu = -diag(nu)`.
pub fn b_prime_nu<T: Real>(nu: &Vector3<T>) -> Matrix3<T> {
    -Matrix3::from_diagonal(nu)
}

/// `B''_nu = -[[nu2, nu3, 0], [nu1, 0, nu3], [0, nu1, nu2]]`.
pub fn b_double_prime_nu<T: Real>(nu: &Vector3<T>) -> Matrix3<T> {
    let z = T::zero();
    -Matrix3::new(nu[1], nu[2], z, nu[0], z, nu[2], z, nu[0], nu[1])
}

/// Residual of the packing identity `B'_nu s'_pr + B''_nu s''_pr = -sigma nu`.
///
/// Returns `|B'_nu s' + B''_nu s'' + sigma nu|`; a correct packing keeps
/// this at rounding level.
pub fn packed_normal_identity<T: Real>(sigma: &SymTensor<T>, nu: &Vector3<T>) -> T {
    assert_eq!(sigma.dim(), 3, "packing is dim = 3 only");
    let c = sigma.components();
    let s_prime = Vector3::new(c[0], c[1], c[2]);
    let s_dprime = Vector3::new(c[3], c[4], c[5]);
    let sn = sigma.apply_vec(&[nu[0], nu[1], nu[2]]);
    let lhs = b_prime_nu(nu) * s_prime + b_double_prime_nu(nu) * s_dprime;
    (lhs + Vector3::new(sn[0], sn[1], sn[2])).norm()
}
