//! The 9-dimensional first-order symmetric hyperbolic reformulation of
//! elastodynamics (n = 3): system matrices, dissipative boundary matrices
//! synthesized from a boundary pair (S1, S2), algebraic admissibility
//! certificates, and the kernel split used by the entropic inequalities.

use crate::tensor::{Hooke, SymTensor, TensorError};
use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use thiserror::Error;

pub type Mat9 = SMatrix<f64, 9, 9>;
pub type Vec9 = SVector<f64, 9>;
type Mat3x6 = SMatrix<f64, 3, 6>;

/// Singular values above `RANK_TOL`-times the largest one count towards
/// the numeric rank.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum FriedrichsError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("normal vector must be unit length (|nu| = {0})")]
    BadNormal(f64),
    #[error("S1 must be symmetric positive definite")]
    S1NotSpd,
    #[error("S2 must be skew-symmetric")]
    S2NotSkew,
    #[error("S1 + S2 or S1 - S2 is singular")]
    SingularSPair,
    #[error("the kernel split requires a symmetric boundary matrix (S2 = 0)")]
    NonSymmetricS,
    #[error("internal identity violated: {0} (residual {1:.3e})")]
    IdentityViolated(&'static str, f64),
}

/// The constant matrices of the 9-dimensional symmetric system.
#[derive(Clone, Debug)]
pub struct FriedrichsSystem {
    pub lambda: f64,
    pub mu: f64,
    pub b: [Mat3x6; 3],
    pub a0_tilde: Mat9,
    pub a0_sqrt: Mat9,
    pub a0_invsqrt: Mat9,
    pub a: [Mat9; 3],
}

/// An admissible boundary matrix at a boundary point with normal `nu`,
/// together with the data it was synthesized from.
#[derive(Clone, Debug)]
pub struct BoundaryMatrix {
    pub nu: Vector3<f64>,
    pub m: Mat9,
    pub s1: Matrix3<f64>,
    pub s2: Matrix3<f64>,
    pub c_nu: Mat9,
    /// Invertible 3x3 block of the permuted normal matrix.
    pub a_hat_prime: Matrix3<f64>,
    pub a_hat_dprime: Matrix3<f64>,
    pub m_hat1: Matrix3<f64>,
    pub m_hat2: Matrix3<f64>,
    pub m_hat3: Matrix3<f64>,
}

/// Certificate record for the algebraic admissibility conditions.
#[derive(Clone, Copy, Debug)]
pub struct AdmissibilityCertificate {
    pub min_eig_m: f64,
    pub kernel_inclusion_residual: f64,
    pub rank_a_plus_m: usize,
    pub rank_a_minus_m: usize,
    pub m_hat1_margin: f64,
    pub m_hat3_margin: f64,
    pub skew_residual_1: f64,
    pub skew_residual_2: f64,
    pub spanning_rank: usize,
    pub admissible: bool,
}

/// Parts of the kernel split `xi = xi0 + xi_plus + xi_minus` along
/// `Ker A_nu`, `Ker(A_nu + M) ∩ Im A_nu` and `Ker(A_nu - M) ∩ Im A_nu`
/// respectively, and the boundary quadratic forms `M xi_pm . xi_pm =
/// (1/2) S^{-1}(tau nu ± S z).(tau nu ± S z)` (both nonnegative since M
/// is nonnegative).
#[derive(Clone, Copy, Debug)]
pub struct XiSplit {
    pub xi0: Vec9,
    pub xi_plus: Vec9,
    pub xi_minus: Vec9,
    pub quad_plus: f64,
    pub quad_minus: f64,
}

fn check_unit(nu: &Vector3<f64>) -> Result<(), FriedrichsError> {
    let n = nu.norm();
    if (n - 1.0).abs() > 1e-12 {
        return Err(FriedrichsError::BadNormal(n));
    }
    Ok(())
}

/// Numeric rank: singular values above `RANK_TOL` times the largest.
pub fn numeric_rank<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> usize {
    let dm = nalgebra::DMatrix::from_iterator(R, C, m.iter().cloned());
    let sv = dm.svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > RANK_TOL * max).count()
}

/// Orthonormal basis of the numeric nullspace (columns).
fn nullspace(m: &Mat9) -> Vec<Vec9> {
    let svd = m.svd(true, true);
    let sv = &svd.singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let vt = svd.v_t.unwrap();
    (0..9)
        .filter(|&i| sv[i] <= RANK_TOL * max.max(1e-300))
        .map(|i| vt.row(i).transpose())
        .collect()
}

pub fn build_system(lambda: f64, mu: f64) -> Result<FriedrichsSystem, FriedrichsError> {
    // validates ellipticity (mu > 0, 2 mu + 3 lambda > 0)
    let hooke = Hooke::new(lambda, mu, 3)?;

    let b1 = -Mat3x6::from_row_slice(&[
        1.0, 0.0, 0.0, 0.0, 0.0, 0.0, //
        0.0, 0.0, 0.0, 1.0, 0.0, 0.0, //
        0.0, 0.0, 0.0, 0.0, 1.0, 0.0,
    ]);
    let b2 = -Mat3x6::from_row_slice(&[
        0.0, 0.0, 0.0, 1.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, 0.0, 0.0, 0.0, //
        0.0, 0.0, 0.0, 0.0, 0.0, 1.0,
    ]);
    let b3 = -Mat3x6::from_row_slice(&[
        0.0, 0.0, 0.0, 0.0, 1.0, 0.0, //
        0.0, 0.0, 0.0, 0.0, 0.0, 1.0, //
        0.0, 0.0, 1.0, 0.0, 0.0, 0.0,
    ]);
    let b = [b1, b2, b3];

    let block_diag = |c_block: Matrix3<f64>, mu_coef: f64| -> Mat9 {
        let mut m = Mat9::zeros();
        for i in 0..3 {
            m[(i, i)] = 1.0;
            m[(6 + i, 6 + i)] = mu_coef;
        }
        m.view_mut((3, 3), (3, 3)).copy_from(&c_block);
        m
    };
    let a0_tilde = block_diag(hooke.c_tilde_power(-1.0), 1.0 / mu);
    let a0_sqrt = block_diag(hooke.c_tilde_power(-0.5), 1.0 / mu.sqrt());
    let a0_invsqrt = block_diag(hooke.c_tilde_power(0.5), mu.sqrt());

    let a = std::array::from_fn(|i| {
        let mut a_tilde = Mat9::zeros();
        a_tilde.view_mut((0, 3), (3, 6)).copy_from(&b[i]);
        a_tilde.view_mut((3, 0), (6, 3)).copy_from(&b[i].transpose());
        a0_invsqrt * a_tilde * a0_invsqrt
    });

    Ok(FriedrichsSystem { lambda, mu, b, a0_tilde, a0_sqrt, a0_invsqrt, a })
}

impl FriedrichsSystem {
    /// Packs `(v, sigma)` into the symmetric-system variable
    /// `U = A0^{1/2} (v, sigma_pr)`.
    pub fn pack(&self, v: &Vector3<f64>, sigma: &SymTensor<f64>) -> Vec9 {
        assert_eq!(sigma.dim(), 3, "packing is dim = 3 only");
        let c = sigma.components();
        let raw = Vec9::from_row_slice(&[v[0], v[1], v[2], c[0], c[1], c[2], c[3], c[4], c[5]]);
        self.a0_sqrt * raw
    }

    /// Inverse of `pack`.
    pub fn unpack(&self, u: &Vec9) -> (Vector3<f64>, SymTensor<f64>) {
        let raw = self.a0_invsqrt * u;
        let v = Vector3::new(raw[0], raw[1], raw[2]);
        let sigma =
            SymTensor::from_components(3, &[raw[3], raw[4], raw[5], raw[6], raw[7], raw[8]])
                .unwrap();
        (v, sigma)
    }
}

pub fn build_a_nu(sys: &FriedrichsSystem, nu: &Vector3<f64>) -> Result<Mat9, FriedrichsError> {
    check_unit(nu)?;
    Ok(sys.a[0] * nu[0] + sys.a[1] * nu[1] + sys.a[2] * nu[2])
}

/// Closed forms of the two 3x3 blocks of the top row of `A_nu`:
/// `A'_nu = B'_nu C~^{1/2}` and `A''_nu = sqrt(mu) B''_nu`.
pub fn a_nu_blocks(sys: &FriedrichsSystem, nu: &Vector3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    let alpha = 2.0 / 3.0 * (2.0 * sys.mu).sqrt() + (2.0 * sys.mu + 3.0 * sys.lambda).sqrt() / 3.0;
    let beta = -(2.0 * sys.mu).sqrt() / 3.0 + (2.0 * sys.mu + 3.0 * sys.lambda).sqrt() / 3.0;
    let a_prime = -Matrix3::new(
        nu[0] * alpha,
        nu[0] * beta,
        nu[0] * beta,
        nu[1] * beta,
        nu[1] * alpha,
        nu[1] * beta,
        nu[2] * beta,
        nu[2] * beta,
        nu[2] * alpha,
    );
    let a_dprime = -sys.mu.sqrt()
        * Matrix3::new(nu[1], nu[2], 0.0, nu[0], 0.0, nu[2], 0.0, nu[0], nu[1]);
    (a_prime, a_dprime)
}

/// Permutation of the last six coordinates making the (1,2) block of the
/// permuted normal matrix invertible. Returns `(C_nu, A^'_nu, A^''_nu)`
/// with `A^_nu = C_nu A_nu C_nu^T`.
///
/// The lexicographically smallest such permutation is chosen, so
/// `C_nu = I` whenever all components of `nu` are nonzero.
pub fn permutation_c_nu(
    sys: &FriedrichsSystem,
    nu: &Vector3<f64>,
) -> Result<(Mat9, Matrix3<f64>, Matrix3<f64>), FriedrichsError> {
    let a_nu = build_a_nu(sys, nu)?;
    let mut perm = [0usize, 1, 2, 3, 4, 5];
    loop {
        let mut c = Mat9::zeros();
        for i in 0..3 {
            c[(i, i)] = 1.0;
        }
        for (j, &p) in perm.iter().enumerate() {
            c[(3 + j, 3 + p)] = 1.0;
        }
        let a_hat = c * a_nu * c.transpose();
        let a_hat_prime: Matrix3<f64> = a_hat.fixed_view::<3, 3>(0, 3).into_owned();
        if numeric_rank(&a_hat_prime) == 3 {
            let a_hat_dprime: Matrix3<f64> = a_hat.fixed_view::<3, 3>(0, 6).into_owned();
            return Ok((c, a_hat_prime, a_hat_dprime));
        }
        // next permutation in lexicographic order
        let mut i = perm.len() - 1;
        while i > 0 && perm[i - 1] >= perm[i] {
            i -= 1;
        }
        if i == 0 {
            unreachable!("an invertible 3x3 block always exists since rk(A'|A'') = 3");
        }
        let mut j = perm.len() - 1;
        while perm[j] <= perm[i - 1] {
            j -= 1;
        }
        perm.swap(i - 1, j);
        perm[i..].reverse();
    }
}

fn is_symmetric(m: &Matrix3<f64>, tol: f64) -> bool {
    (m - m.transpose()).norm() <= tol
}

pub fn build_m(
    sys: &FriedrichsSystem,
    nu: &Vector3<f64>,
    s1: &Matrix3<f64>,
    s2: &Matrix3<f64>,
) -> Result<BoundaryMatrix, FriedrichsError> {
    check_unit(nu)?;
    let scale = 1.0 + s1.norm() + s2.norm();
    if !is_symmetric(s1, 1e-10 * scale) {
        return Err(FriedrichsError::S1NotSpd);
    }
    let s1_chol = s1.cholesky().ok_or(FriedrichsError::S1NotSpd)?;
    if (s2 + s2.transpose()).norm() > 1e-10 * scale {
        return Err(FriedrichsError::S2NotSkew);
    }
    for sign in [1.0, -1.0] {
        let s = s1 + sign * s2;
        if numeric_rank(&s) < 3 {
            return Err(FriedrichsError::SingularSPair);
        }
    }

    let (c_nu, ap, app) = permutation_c_nu(sys, nu)?;
    let ap_inv = ap.try_inverse().expect("A^'_nu is invertible by construction");

    // synthesis of the permuted boundary-matrix blocks from (S1, S2);
    // M2 is chosen so that the recovery maps S1 = A' M3^{-1} (A')^T and
    // S2 = A' M3^{-1} M2^T return the inputs exactly
    let s1_inv = s1_chol.inverse();
    let m3 = ap.transpose() * s1_inv * ap;
    let m3_inv = m3.try_inverse().expect("M^3 inherits invertibility from S1");
    let m2 = -s2 * s1_inv * ap;
    let m1 = ap * m3_inv * ap.transpose() + m2 * m3_inv * m2.transpose();
    let lift = ap_inv * app;
    let m2p = m2 * lift;
    let m3p = m3 * lift;
    let m3pp = lift.transpose() * m3 * lift;

    let mut m_hat = Mat9::zeros();
    let mut put = |r: usize, c: usize, blk: &Matrix3<f64>| {
        m_hat.view_mut((r, c), (3, 3)).copy_from(blk);
    };
    put(0, 0, &m1);
    put(0, 3, &m2);
    put(0, 6, &m2p);
    put(3, 0, &m2.transpose());
    put(3, 3, &m3);
    put(3, 6, &m3p);
    put(6, 0, &m2p.transpose());
    put(6, 3, &m3p.transpose());
    put(6, 6, &m3pp);

    let m = c_nu.transpose() * m_hat * c_nu;
    Ok(BoundaryMatrix {
        nu: *nu,
        m,
        s1: *s1,
        s2: *s2,
        c_nu,
        a_hat_prime: ap,
        a_hat_dprime: app,
        m_hat1: m1,
        m_hat2: m2,
        m_hat3: m3,
    })
}

pub fn verify_admissible(
    bm: &BoundaryMatrix,
    sys: &FriedrichsSystem,
) -> Result<AdmissibilityCertificate, FriedrichsError> {
    let a_nu = build_a_nu(sys, &bm.nu)?;
    let m_scale = bm.m.norm().max(1.0);

    let sym_eig = bm.m.symmetric_eigen();
    let min_eig_m = sym_eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);

    let kernel_inclusion_residual = nullspace(&a_nu)
        .iter()
        .map(|k| (bm.m * k).norm() / m_scale)
        .fold(0.0, f64::max);

    let rank_a_plus_m = numeric_rank(&(a_nu + bm.m));
    let rank_a_minus_m = numeric_rank(&(a_nu - bm.m));

    let margin = |b: &Matrix3<f64>| -> f64 {
        b.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let m_hat1_margin = margin(&bm.m_hat1);
    let m_hat3_margin = margin(&bm.m_hat3);

    let skew = |x: Matrix3<f64>| (x + x.transpose()).norm() / m_scale.max(x.norm());
    let m1_inv = bm.m_hat1.try_inverse().unwrap_or_else(Matrix3::zeros);
    let m3_inv = bm.m_hat3.try_inverse().unwrap_or_else(Matrix3::zeros);
    let skew_residual_1 = skew(bm.a_hat_prime.transpose() * m1_inv * bm.m_hat2);
    let skew_residual_2 = skew(bm.a_hat_prime * m3_inv * bm.m_hat2.transpose());

    // R^9 = Ker(A_nu - M) + Ker(A_nu + M)
    let mut stacked: Vec<Vec9> = nullspace(&(a_nu - bm.m));
    stacked.extend(nullspace(&(a_nu + bm.m)));
    let spanning_rank = if stacked.is_empty() {
        0
    } else {
        let cols = nalgebra::DMatrix::from_fn(9, stacked.len(), |i, j| stacked[j][i]);
        let sv = cols.svd(false, false).singular_values;
        let max = sv.iter().cloned().fold(0.0, f64::max);
        sv.iter().filter(|s| **s > RANK_TOL * max.max(1e-300)).count()
    };

    let admissible = min_eig_m >= -1e-10 * m_scale
        && kernel_inclusion_residual <= 1e-10
        && rank_a_plus_m == 3
        && rank_a_minus_m == 3
        && m_hat1_margin > 0.0
        && m_hat3_margin > 0.0
        && skew_residual_1 <= 1e-10
        && skew_residual_2 <= 1e-10
        && spanning_rank == 9;

    Ok(AdmissibilityCertificate {
        min_eig_m,
        kernel_inclusion_residual,
        rank_a_plus_m,
        rank_a_minus_m,
        m_hat1_margin,
        m_hat3_margin,
        skew_residual_1,
        skew_residual_2,
        spanning_rank,
        admissible,
    })
}

/// Residual pair of the boundary-condition equivalence
/// `(A_nu ± M) U = 0  <=>  (S1 ± S2) v -+ sigma nu = 0`.
pub fn boundary_equivalence(
    bm: &BoundaryMatrix,
    sys: &FriedrichsSystem,
    v: &Vector3<f64>,
    sigma: &SymTensor<f64>,
    plus: bool,
) -> Result<(f64, f64), FriedrichsError> {
    let a_nu = build_a_nu(sys, &bm.nu)?;
    let u = sys.pack(v, sigma);
    let sign = if plus { 1.0 } else { -1.0 };
    let r1 = ((a_nu + sign * bm.m) * u).norm();
    let sn = sigma.apply_vec(&[bm.nu[0], bm.nu[1], bm.nu[2]]);
    let sigma_nu = Vector3::new(sn[0], sn[1], sn[2]);
    let r2 = ((bm.s1 + sign * bm.s2) * v - sign * sigma_nu).norm();
    Ok((r1, r2))
}

/// Splits `xi = A0^{1/2} (z, tau_pr)` along
/// `R^9 = Ker A_nu ⊕ (Ker(A_nu - M) ∩ Im A_nu) ⊕ (Ker(A_nu + M) ∩ Im A_nu)`
/// and evaluates the boundary quadratic forms `M xi_pm . xi_pm`.
///
/// Only symmetric boundary matrices (`S2 = 0`, so `S = S1`) are supported;
/// the closed forms below hold in that case.
pub fn xi_split(
    bm: &BoundaryMatrix,
    sys: &FriedrichsSystem,
    z: &Vector3<f64>,
    tau: &SymTensor<f64>,
) -> Result<XiSplit, FriedrichsError> {
    if bm.s2.norm() > 1e-12 * (1.0 + bm.s1.norm()) {
        return Err(FriedrichsError::NonSymmetricS);
    }
    let s = bm.s1;
    let s_inv = s.try_inverse().ok_or(FriedrichsError::S1NotSpd)?;
    let hooke = Hooke::new(sys.lambda, sys.mu, 3)?;
    let nu = &bm.nu;

    // Phi(eta) = (mu I + (mu + lambda) nu (x) nu)^{-1} eta satisfies
    // A (Phi(eta) ⊙ nu) nu = eta
    let phi_mat = (Matrix3::identity() * sys.mu + (sys.mu + sys.lambda) * nu * nu.transpose())
        .try_inverse()
        .expect("mu I + (mu + lambda) nu nu^T is invertible under ellipticity");
    let a_w_nu = |w: &Vector3<f64>| -> SymTensor<f64> {
        let wn = crate::tensor::sym_prod(&[w[0], w[1], w[2]], &[nu[0], nu[1], nu[2]]).unwrap();
        hooke.apply(&wn)
    };
    // spot-check the Phi identity on this input's data scale
    {
        let eta = Vector3::new(1.0, -0.7, 0.4);
        let got = a_w_nu(&(phi_mat * eta)).apply_vec(&[nu[0], nu[1], nu[2]]);
        let res = (Vector3::new(got[0], got[1], got[2]) - eta).norm();
        if res > 1e-10 {
            return Err(FriedrichsError::IdentityViolated("A(Phi(eta) ⊙ nu) nu = eta", res));
        }
    }

    let tn = tau.apply_vec(&[nu[0], nu[1], nu[2]]);
    let tau_nu = Vector3::new(tn[0], tn[1], tn[2]);
    let xi = sys.pack(z, tau);

    let mut xi_pm = [Vec9::zeros(); 2];
    for (idx, sign) in [1.0f64, -1.0].into_iter().enumerate() {
        let v_part = (z + sign * s_inv * tau_nu) * 0.5;
        let stress_part = a_w_nu(&(phi_mat * (tau_nu + sign * s * z))).scale(0.5);
        xi_pm[idx] = sys.pack(&v_part, &stress_part);
    }
    let (xi_plus, xi_minus) = (xi_pm[0], xi_pm[1]);
    let xi0 = xi - xi_plus - xi_minus;

    let quad_plus = (bm.m * xi_plus).dot(&xi_plus);
    let quad_minus = (bm.m * xi_minus).dot(&xi_minus);
    Ok(XiSplit { xi0, xi_plus, xi_minus, quad_plus, quad_minus })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    const LAMBDA: f64 = 2.0;
    const MU: f64 = 1.5;

    fn sys() -> FriedrichsSystem {
        build_system(LAMBDA, MU).unwrap()
    }

    fn rand_unit_nu(rng: &mut StdRng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.gen_range(-1.0..1.0f64),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 1e-3 {
                return v / n;
            }
        }
    }

    fn rand_spd3(rng: &mut StdRng) -> Matrix3<f64> {
        // Q D Q^T with Q from the QR of a random matrix, D in [0.5, 2]
        let a = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0f64));
        let q = a.qr().q();
        let d = Matrix3::from_diagonal(&Vector3::new(
            rng.gen_range(0.5..2.0f64),
            rng.gen_range(0.5..2.0),
            rng.gen_range(0.5..2.0),
        ));
        q * d * q.transpose()
    }

    fn rand_skew3(rng: &mut StdRng) -> Matrix3<f64> {
        let (a, b, c) = (
            rng.gen_range(-0.5..0.5f64),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
        );
        Matrix3::new(0.0, a, b, -a, 0.0, c, -b, -c, 0.0)
    }

    fn rand_sym(rng: &mut StdRng) -> SymTensor<f64> {
        let c: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        SymTensor::from_components(3, &c).unwrap()
    }

    #[test]
    fn b_matrix_entries() {
        let s = sys();
        assert_eq!(s.b[0].row(0).clone_owned().as_slice(), &[-1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.b[0].row(1).clone_owned().as_slice(), &[0.0, 0.0, 0.0, -1.0, 0.0, 0.0]);
        assert_eq!(s.b[1].row(1).clone_owned().as_slice(), &[0.0, -1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.b[2].row(2).clone_owned().as_slice(), &[0.0, 0.0, -1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn a0_roots_consistent() {
        let s = sys();
        assert!((s.a0_sqrt * s.a0_invsqrt - Mat9::identity()).norm() <= 1e-12);
        assert!((s.a0_sqrt * s.a0_sqrt - s.a0_tilde).norm() <= 1e-12);
        for a in &s.a {
            assert!((a - a.transpose()).norm() <= 1e-13);
        }
    }

    #[test]
    fn build_system_rejects_bad_lame() {
        assert!(build_system(1.0, -1.0).is_err());
        assert!(build_system(-2.0, 1.0).is_err());
    }

    #[test]
    fn a_nu_block_structure_and_closed_form() {
        let s = sys();
        let mut rng = StdRng::seed_from_u64(31);
        for _ in 0..100 {
            let nu = rand_unit_nu(&mut rng);
            let a_nu = build_a_nu(&s, &nu).unwrap();
            let (ap, app) = a_nu_blocks(&s, &nu);
            assert!((a_nu.fixed_view::<3, 3>(0, 3) - ap).norm() <= 1e-12);
            assert!((a_nu.fixed_view::<3, 3>(0, 6) - app).norm() <= 1e-12);
            assert!(a_nu.fixed_view::<3, 3>(0, 0).norm() <= 1e-14);
            assert!(a_nu.fixed_view::<6, 6>(3, 3).norm() <= 1e-14);
            let det_expect = -nu[0] * nu[1] * nu[2] * 2.0 * MU * (3.0 * LAMBDA + 2.0 * MU).sqrt();
            assert!((ap.determinant() - det_expect).abs() <= 1e-10);
        }
        assert!(build_a_nu(&s, &Vector3::new(1.0, 1.0, 0.0)).is_err());
    }

    #[test]
    fn a_nu_ranks() {
        let s = sys();
        let mut rng = StdRng::seed_from_u64(32);
        let mut normals: Vec<Vector3<f64>> = vec![
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(1.0, 1.0, 0.0) / 2.0f64.sqrt(),
            Vector3::new(0.0, 1.0, -1.0) / 2.0f64.sqrt(),
        ];
        for _ in 0..195 {
            normals.push(rand_unit_nu(&mut rng));
        }
        for nu in &normals {
            let a_nu = build_a_nu(&s, nu).unwrap();
            assert_eq!(numeric_rank(&a_nu), 6);
            assert_eq!(nullspace(&a_nu).len(), 3);
            let top: SMatrix<f64, 3, 6> = a_nu.fixed_view::<3, 6>(0, 3).into_owned();
            assert_eq!(numeric_rank(&top), 3);
        }
    }

    #[test]
    fn permutation_properties() {
        let s = sys();
        let nu = Vector3::new(1.0, 1.0, 1.0) / 3.0f64.sqrt();
        let (c, ap, _) = permutation_c_nu(&s, &nu).unwrap();
        assert!((c - Mat9::identity()).norm() <= 1e-15);
        assert!(ap.determinant().abs() > 1e-10);

        for nu in [
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 1.0) / 2.0f64.sqrt(),
        ] {
            let (c, ap, _) = permutation_c_nu(&s, &nu).unwrap();
            assert!((c * c.transpose() - Mat9::identity()).norm() <= 1e-15);
            assert!(ap.determinant().abs() > 1e-10);
            // A^_nu = C A_nu C^T reproduces the block in place
            let a_nu = build_a_nu(&s, &nu).unwrap();
            let a_hat = c * a_nu * c.transpose();
            assert!((a_hat.fixed_view::<3, 3>(0, 3) - ap).norm() <= 1e-14);
        }
    }

    #[test]
    fn build_m_identity_s() {
        let s = sys();
        let mut rng = StdRng::seed_from_u64(33);
        let nu = rand_unit_nu(&mut rng);
        let bm = build_m(&s, &nu, &Matrix3::identity(), &Matrix3::zeros()).unwrap();
        assert!((bm.m - bm.m.transpose()).norm() <= 1e-12);
        let cert = verify_admissible(&bm, &s).unwrap();
        assert!(cert.admissible, "{cert:?}");
        assert_eq!(cert.rank_a_plus_m, 3);
        assert_eq!(cert.rank_a_minus_m, 3);
    }

    #[test]
    fn kernel_generators_annihilated() {
        // explicit kernel basis (0, (A'_nu)^{-1} (A''_nu)^(j), -e_j)
        let s = sys();
        let mut rng = StdRng::seed_from_u64(34);
        for _ in 0..20 {
            let nu = rand_unit_nu(&mut rng);
            if nu.iter().any(|c| c.abs() < 1e-2) {
                continue;
            }
            let (ap, app) = a_nu_blocks(&s, &nu);
            let ap_inv = ap.try_inverse().unwrap();
            let bm = build_m(&s, &nu, &rand_spd3(&mut rng), &rand_skew3(&mut rng)).unwrap();
            let a_nu = build_a_nu(&s, &nu).unwrap();
            for j in 0..3 {
                let mid = ap_inv * app.column(j);
                let mut k = Vec9::zeros();
                for i in 0..3 {
                    k[3 + i] = mid[i];
                }
                k[6 + j] = -1.0;
                assert!((a_nu * k).norm() <= 1e-10 * k.norm());
                assert!((bm.m * k).norm() <= 1e-10 * bm.m.norm().max(1.0) * k.norm());
            }
        }
    }

    #[test]
    fn random_boundary_pairs_admissible() {
        let s = sys();
        let mut rng = StdRng::seed_from_u64(35);
        for _ in 0..50 {
            let nu = rand_unit_nu(&mut rng);
            let s1 = rand_spd3(&mut rng);
            let s2 = rand_skew3(&mut rng);
            let bm = build_m(&s, &nu, &s1, &s2).unwrap();
            let cert = verify_admissible(&bm, &s).unwrap();
            assert!(cert.admissible, "nu = {nu:?}: {cert:?}");
            assert_eq!(cert.spanning_rank, 9);
            // recovery of (S1, S2) from the synthesized blocks
            let m3_inv = bm.m_hat3.try_inverse().unwrap();
            let s1_back = bm.a_hat_prime * m3_inv * bm.a_hat_prime.transpose();
            let s2_back = bm.a_hat_prime * m3_inv * bm.m_hat2.transpose();
            assert!((s1_back - s1).norm() <= 1e-9 * (1.0 + s1.norm()));
            assert!((s2_back - s2).norm() <= 1e-9 * (1.0 + s2.norm()));
        }
    }

    #[test]
    fn degenerate_and_perturbed_m_fail() {
        let s = sys();
        let mut rng = StdRng::seed_from_u64(36);
        let nu = rand_unit_nu(&mut rng);
        let mut bm = build_m(&s, &nu, &rand_spd3(&mut rng), &rand_skew3(&mut rng)).unwrap();

        let zero = BoundaryMatrix { m: Mat9::zeros(), ..bm.clone() };
        let cert = verify_admissible(&zero, &s).unwrap();
        assert!(!cert.admissible);
        assert_eq!(cert.rank_a_plus_m, 6);

        bm.m[(0, 4)] += 1e-3;
        bm.m[(4, 0)] += 1e-3;
        let cert = verify_admissible(&bm, &s).unwrap();
        assert!(!cert.admissible, "{cert:?}");
    }

    #[test]
    fn build_m_rejects_bad_inputs() {
        let s = sys();
        let nu = Vector3::new(0.0, 0.0, 1.0);
        let not_spd = -Matrix3::identity();
        assert!(build_m(&s, &nu, &not_spd, &Matrix3::zeros()).is_err());
        let not_skew = Matrix3::identity();
        assert!(build_m(&s, &nu, &Matrix3::identity(), &not_skew).is_err());
    }

    #[test]
    fn boundary_equivalence_both_directions() {
        let s = sys();
        let mut rng = StdRng::seed_from_u64(37);
        for _ in 0..20 {
            let nu = rand_unit_nu(&mut rng);
            let bm = build_m(&s, &nu, &rand_spd3(&mut rng), &rand_skew3(&mut rng)).unwrap();
            let a_nu = build_a_nu(&s, &nu).unwrap();
            assert_eq!(boundary_equivalence(&bm, &s, &Vector3::zeros(),
                &SymTensor::zero(3), true).unwrap(), (0.0, 0.0));
            for plus in [true, false] {
                let sign = if plus { 1.0 } else { -1.0 };
                let kernel = nullspace(&(a_nu + sign * bm.m));
                assert_eq!(kernel.len(), 6);
                // random combination of the nullspace basis
                let mut u = Vec9::zeros();
                for k in &kernel {
                    u += rng.gen_range(-1.0..1.0) * k;
                }
                let (v, sigma) = s.unpack(&u);
                let (r1, r2) = boundary_equivalence(&bm, &s, &v, &sigma, plus).unwrap();
                assert!(r1 <= 1e-9 * (1.0 + u.norm()), "r1 = {r1}");
                assert!(r2 <= 1e-9 * (1.0 + u.norm()), "r2 = {r2}");
            }
            // a state violating the boundary condition violates both sides
            let v = Vector3::new(1.0, 0.0, 0.0);
            let (r1, r2) = boundary_equivalence(&bm, &s, &v, &SymTensor::zero(3), true).unwrap();
            assert!(r1 > 1e-6 && r2 > 1e-6);
        }
    }

    #[test]
    fn xi_split_zero_input() {
        let s = sys();
        let nu = Vector3::new(0.0, 1.0, 0.0);
        let bm = build_m(&s, &nu, &Matrix3::identity(), &Matrix3::zeros()).unwrap();
        let split = xi_split(&bm, &s, &Vector3::zeros(), &SymTensor::zero(3)).unwrap();
        assert_eq!(split.xi0, Vec9::zeros());
        assert_eq!(split.xi_plus, Vec9::zeros());
        assert_eq!(split.quad_plus, 0.0);
        assert_eq!(split.quad_minus, 0.0);
    }

    #[test]
    fn xi_split_memberships_and_quadratic_forms() {
        let s = sys();
        let mut rng = StdRng::seed_from_u64(38);
        for i in 0..50 {
            let nu = if i < 3 {
                let mut e = Vector3::zeros();
                e[i] = 1.0;
                e
            } else {
                rand_unit_nu(&mut rng)
            };
            let s1 = rand_spd3(&mut rng);
            let bm = build_m(&s, &nu, &s1, &Matrix3::zeros()).unwrap();
            let a_nu = build_a_nu(&s, &nu).unwrap();
            let z = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let tau = rand_sym(&mut rng);
            let split = xi_split(&bm, &s, &z, &tau).unwrap();
            let xi = s.pack(&z, &tau);
            let scale = 1.0 + xi.norm();

            // reconstruction and subspace memberships:
            // xi_pm lies in Ker(A_nu ± M) ∩ Im A_nu
            assert!((split.xi0 + split.xi_plus + split.xi_minus - xi).norm() <= 1e-12 * scale);
            assert!((a_nu * split.xi0).norm() <= 1e-10 * scale);
            assert!(((a_nu + bm.m) * split.xi_plus).norm() <= 1e-9 * scale);
            assert!(((a_nu - bm.m) * split.xi_minus).norm() <= 1e-9 * scale);

            // closed forms of the boundary quadratic forms; both are
            // nonnegative because M is nonnegative
            let s_inv = s1.try_inverse().unwrap();
            let tn = tau.apply_vec(&[nu[0], nu[1], nu[2]]);
            let tau_nu = Vector3::new(tn[0], tn[1], tn[2]);
            let plus_vec = tau_nu + s1 * z;
            let minus_vec = tau_nu - s1 * z;
            let expect_plus = 0.5 * (s_inv * plus_vec).dot(&plus_vec);
            let expect_minus = 0.5 * (s_inv * minus_vec).dot(&minus_vec);
            assert!((split.quad_plus - expect_plus).abs() <= 1e-9 * scale * scale);
            assert!((split.quad_minus - expect_minus).abs() <= 1e-9 * scale * scale);
            // A_nu evaluates with opposite signs on the two kernels
            let a_quad_plus = (a_nu * split.xi_plus).dot(&split.xi_plus);
            assert!((a_quad_plus + expect_plus).abs() <= 1e-9 * scale * scale);
        }
    }

    #[test]
    fn xi_split_rejects_nonsymmetric_s() {
        let s = sys();
        let mut rng = StdRng::seed_from_u64(39);
        let nu = rand_unit_nu(&mut rng);
        let bm = build_m(&s, &nu, &Matrix3::identity(), &rand_skew3(&mut rng)).unwrap();
        assert!(matches!(
            xi_split(&bm, &s, &Vector3::zeros(), &SymTensor::zero(3)),
            Err(FriedrichsError::NonSymmetricS)
        ));
    }

    #[test]
    fn packed_distance_identity() {
        // |U - xi|^2 = |v - z|^2 + A^{-1}(sigma - tau) : (sigma - tau)
        let s = sys();
        let hooke = Hooke::new(LAMBDA, MU, 3).unwrap();
        let mut rng = StdRng::seed_from_u64(40);
        for _ in 0..100 {
            let v = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let z = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let sigma = rand_sym(&mut rng);
            let tau = rand_sym(&mut rng);
            let u = s.pack(&v, &sigma);
            let xi = s.pack(&z, &tau);
            let lhs = (u - xi).norm_squared();
            let ds = sigma - tau;
            let rhs = (v - z).norm_squared() + hooke.inverse_apply(&ds).dot(&ds);
            assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs));

            // sum_i X_i A_i (U - xi) . (U - xi) = -2 ((sigma - tau) X) . (v - z)
            let x = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let ax = s.a[0] * x[0] + s.a[1] * x[1] + s.a[2] * x[2];
            let lhs2 = (ax * (u - xi)).dot(&(u - xi));
            let dsx = ds.apply_vec(&[x[0], x[1], x[2]]);
            let rhs2 = -2.0 * Vector3::new(dsx[0], dsx[1], dsx[2]).dot(&(v - z));
            assert!((lhs2 - rhs2).abs() <= 1e-11 * (1.0 + lhs2.abs()));
        }
    }
}
