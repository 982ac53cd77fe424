//! The stress constraint set K, its projection and support function, the
//! boundary dissipation potential `psi` and the weighted projection onto
//! `-K nu`.

use crate::tensor::{scalar, sym_prod, Real, SymTensor};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConvexError {
    #[error("iterative solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("constraint set does not contain 0 in its interior")]
    EmptyInterior,
    #[error("boundary matrix is not symmetric positive definite")]
    NotSpd,
}

/// Extended real value: finite or positive infinity.
///
/// Support functions of unbounded directions legally return infinity; a
/// dedicated variant avoids sentinel floats.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExtReal<T> {
    Finite(T),
    PosInf,
}

impl<T: Real> ExtReal<T> {
    pub fn is_finite(&self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    /// Finite value, panicking on infinity.
    pub fn finite(&self) -> T {
        match self {
            ExtReal::Finite(v) => *v,
            ExtReal::PosInf => panic!("expected a finite value, got +infinity"),
        }
    }
}

#[derive(Clone, Debug)]
pub enum ConstraintKind<T> {
    /// `{ sigma : |sigma| <= radius }` in the Frobenius norm.
    Ball { radius: T },
    /// `{ sigma : |dev sigma| <= k }`, unbounded in the hydrostatic direction.
    VonMisesCylinder { k: T },
    /// Intersection of half-spaces `{ sigma : n_i : sigma <= c_i }`.
    Polyhedral { halfspaces: Vec<(SymTensor<T>, T)> },
}

/// A closed convex stress constraint containing 0 in its interior.
#[derive(Clone, Debug)]
pub struct StressConstraint<T> {
    kind: ConstraintKind<T>,
    dim: usize,
}

const MAX_PROJ_ITERS: usize = 10_000;

/// Dykstra's alternating projection onto an intersection of half-spaces
/// `{ x : n_i : x <= c_i }`.
fn dykstra_project<T: Real>(
    halfspaces: &[(SymTensor<T>, T)],
    x0: &SymTensor<T>,
) -> Result<SymTensor<T>, ConvexError> {
    let dim = x0.dim();
    let m = halfspaces.len();
    let mut x = *x0;
    let mut corrections = vec![SymTensor::zero(dim); m];
    let tol = scalar::<T>(1e-13) * (T::one() + x0.norm());
    let violation = |y: &SymTensor<T>| -> T {
        halfspaces
            .iter()
            .fold(T::zero(), |v, (n, c)| v.max(n.dot(y) - *c))
            .max(T::zero())
    };
    for _cycle in 0..MAX_PROJ_ITERS {
        let mut max_move = T::zero();
        for (i, (n, c)) in halfspaces.iter().enumerate() {
            let y = x + corrections[i];
            let viol = n.dot(&y) - *c;
            let p = if viol <= T::zero() { y } else { y - n.scale(viol / n.dot(n)) };
            corrections[i] = y - p;
            max_move = max_move.max((p - x).norm());
            x = p;
        }
        if max_move <= tol && violation(&x) <= tol {
            return Ok(x);
        }
    }
    let residual = num_traits::ToPrimitive::to_f64(&violation(&x)).unwrap_or(f64::NAN);
    Err(ConvexError::NonConvergence { iterations: MAX_PROJ_ITERS, residual })
}

impl<T: Real> StressConstraint<T> {
    pub fn ball(radius: T, dim: usize) -> Result<Self, ConvexError> {
        if radius <= T::zero() {
            return Err(ConvexError::EmptyInterior);
        }
        Ok(StressConstraint { kind: ConstraintKind::Ball { radius }, dim })
    }

    pub fn von_mises(k: T, dim: usize) -> Result<Self, ConvexError> {
        if k <= T::zero() {
            return Err(ConvexError::EmptyInterior);
        }
        Ok(StressConstraint { kind: ConstraintKind::VonMisesCylinder { k }, dim })
    }

    pub fn polyhedral(halfspaces: Vec<(SymTensor<T>, T)>, dim: usize) -> Result<Self, ConvexError> {
        if halfspaces.is_empty() {
            return Err(ConvexError::EmptyInterior);
        }
        for (n, c) in &halfspaces {
            if n.dim() != dim {
                return Err(ConvexError::DimMismatch { expected: dim, got: n.dim() });
            }
            if *c <= T::zero() || n.norm() <= T::zero() {
                return Err(ConvexError::EmptyInterior);
            }
        }
        Ok(StressConstraint { kind: ConstraintKind::Polyhedral { halfspaces }, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &ConstraintKind<T> {
        &self.kind
    }

    /// Radius of the largest guaranteed ball around 0 inside K.
    pub fn inner_radius(&self) -> T {
        match &self.kind {
            ConstraintKind::Ball { radius } => *radius,
            ConstraintKind::VonMisesCylinder { k } => *k,
            ConstraintKind::Polyhedral { halfspaces } => {
                let mut r = ExtReal::PosInf;
                for (n, c) in halfspaces {
                    let cand = *c / n.norm();
                    r = match r {
                        ExtReal::PosInf => ExtReal::Finite(cand),
                        ExtReal::Finite(v) if cand < v => ExtReal::Finite(cand),
                        other => other,
                    };
                }
                r.finite()
            }
        }
    }

    /// Euclidean (Frobenius) projection onto K.
    pub fn project(&self, sigma: &SymTensor<T>) -> Result<SymTensor<T>, ConvexError> {
        if sigma.dim() != self.dim {
            return Err(ConvexError::DimMismatch { expected: self.dim, got: sigma.dim() });
        }
        match &self.kind {
            ConstraintKind::Ball { radius } => {
                let n = sigma.norm();
                if n <= *radius {
                    Ok(*sigma)
                } else {
                    Ok(sigma.scale(*radius / n))
                }
            }
            ConstraintKind::VonMisesCylinder { k } => {
                let dev = sigma.deviatoric();
                let nd = dev.norm();
                if nd <= *k {
                    Ok(*sigma)
                } else {
                    Ok((*sigma - dev) + dev.scale(*k / nd))
                }
            }
            ConstraintKind::Polyhedral { halfspaces } => dykstra_project(halfspaces, sigma),
        }
    }

    /// Largest half-space violation (0 inside K); for the smooth variants
    /// this is the distance to K.
    pub fn violation(&self, sigma: &SymTensor<T>) -> T {
        match &self.kind {
            ConstraintKind::Ball { radius } => (sigma.norm() - *radius).max(T::zero()),
            ConstraintKind::VonMisesCylinder { k } => {
                (sigma.deviatoric().norm() - *k).max(T::zero())
            }
            ConstraintKind::Polyhedral { halfspaces } => {
                let mut v = T::zero();
                for (n, c) in halfspaces {
                    v = v.max(n.dot(sigma) - *c);
                }
                v.max(T::zero())
            }
        }
    }

    pub fn contains(&self, sigma: &SymTensor<T>, tol: T) -> bool {
        self.violation(sigma) <= tol
    }

    /// Distance to K in the Frobenius norm.
    pub fn distance(&self, sigma: &SymTensor<T>) -> Result<T, ConvexError> {
        Ok((*sigma - self.project(sigma)?).norm())
    }

    /// Support function `H(q) = sup_{sigma in K} sigma : q`.
    pub fn support(&self, q: &SymTensor<T>) -> Result<ExtReal<T>, ConvexError> {
        if q.dim() != self.dim {
            return Err(ConvexError::DimMismatch { expected: self.dim, got: q.dim() });
        }
        match &self.kind {
            ConstraintKind::Ball { radius } => Ok(ExtReal::Finite(*radius * q.norm())),
            ConstraintKind::VonMisesCylinder { k } => {
                let tr = q.trace();
                let tol = scalar::<T>(1e-10) * T::one().max(q.norm());
                if tr.abs() > tol {
                    Ok(ExtReal::PosInf)
                } else {
                    Ok(ExtReal::Finite(*k * q.deviatoric().norm()))
                }
            }
            ConstraintKind::Polyhedral { .. } => self.support_by_ascent(q),
        }
    }

    /// Projected-ascent evaluation of the support function using the
    /// projection as the only oracle.
    ///
    /// First looks for a recession direction of K that pairs positively
    /// with `q` (ascent on the recession cone intersected with the unit
    /// ball); if one exists the support is infinite. Otherwise projected
    /// ascent with geometrically shrinking steps homes in on the maximum.
    fn support_by_ascent(&self, q: &SymTensor<T>) -> Result<ExtReal<T>, ConvexError> {
        let halfspaces = match &self.kind {
            ConstraintKind::Polyhedral { halfspaces } => halfspaces,
            _ => unreachable!("ascent evaluation is used for polyhedral sets only"),
        };
        let qn = q.norm();
        if qn == T::zero() {
            return Ok(ExtReal::Finite(T::zero()));
        }

        // Phase 1: recession cone { d : n_i : d <= 0 }. A cone is
        // scale-invariant, so projecting onto (cone ∩ unit ball) is the
        // cone projection followed by a radial clip.
        let cone: Vec<(SymTensor<T>, T)> =
            halfspaces.iter().map(|(n, _)| (*n, T::zero())).collect();
        let mut d = SymTensor::zero(self.dim);
        let mut recession = T::zero();
        let s0 = T::one() / qn;
        for stage in 0..15 {
            let s = s0 * scalar::<T>(0.5).powi(stage);
            for _ in 0..50 {
                let mut cand = dykstra_project(&cone, &(d + q.scale(s)))?;
                let n = cand.norm();
                if n > T::one() {
                    cand = cand.scale(T::one() / n);
                }
                d = cand;
                recession = recession.max(d.dot(q));
            }
        }
        if recession > scalar::<T>(1e-8) * qn {
            return Ok(ExtReal::PosInf);
        }

        // Phase 2: bounded supremum by staged projected ascent.
        let mut sigma = self.project(&SymTensor::zero(self.dim))?;
        let mut best = sigma.dot(q);
        let step0 = scalar::<T>(10.0) / qn;
        for stage in 0..60 {
            let s = step0 * scalar::<T>(0.6).powi(stage);
            for _ in 0..100 {
                sigma = self.project(&(sigma + q.scale(s)))?;
                best = best.max(sigma.dot(q));
            }
        }
        Ok(ExtReal::Finite(best))
    }

    /// Checks `q` in the normal cone to K at `sigma` via the projection
    /// characterization `P_K(sigma + q) = sigma`.
    pub fn in_normal_cone(&self, sigma: &SymTensor<T>, q: &SymTensor<T>, tol: T) -> Result<bool, ConvexError> {
        let p = self.project(&(*sigma + *q))?;
        Ok((p - *sigma).norm() <= tol)
    }
}

/// The boundary matrix field S on the boundary facets, with its
/// coercivity constant.
#[derive(Clone, Debug)]
pub struct BoundaryLaw<T> {
    dim: usize,
    uniform: DMatrix<T>,
    per_facet: Option<Vec<DMatrix<T>>>,
    coercivity: T,
}

fn spd_min_eig<T: Real>(s: &DMatrix<T>) -> Result<T, ConvexError> {
    let n = s.nrows();
    let sym_res = (s - s.transpose()).norm();
    if sym_res > scalar::<T>(1e-12) * (T::one() + s.norm()) {
        return Err(ConvexError::NotSpd);
    }
    let eig = s.clone().symmetric_eigen();
    let mut min = eig.eigenvalues[0];
    for i in 1..n {
        min = min.min(eig.eigenvalues[i]);
    }
    if min <= T::zero() {
        return Err(ConvexError::NotSpd);
    }
    Ok(min)
}

impl<T: Real> BoundaryLaw<T> {
    /// A single matrix S used on every facet.
    pub fn uniform(s: DMatrix<T>) -> Result<Self, ConvexError> {
        let dim = s.nrows();
        let c = spd_min_eig(&s)?;
        Ok(BoundaryLaw { dim, uniform: s, per_facet: None, coercivity: c })
    }

    /// One matrix per boundary facet.
    pub fn per_facet(mats: Vec<DMatrix<T>>) -> Result<Self, ConvexError> {
        let dim = mats.first().ok_or(ConvexError::NotSpd)?.nrows();
        let mut c = ExtReal::PosInf;
        for s in &mats {
            if s.nrows() != dim {
                return Err(ConvexError::DimMismatch { expected: dim, got: s.nrows() });
            }
            let e = spd_min_eig(s)?;
            c = match c {
                ExtReal::PosInf => ExtReal::Finite(e),
                ExtReal::Finite(v) if e < v => ExtReal::Finite(e),
                other => other,
            };
        }
        let uniform = mats[0].clone();
        Ok(BoundaryLaw { dim, uniform, per_facet: Some(mats), coercivity: c.finite() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coercivity(&self) -> T {
        self.coercivity
    }

    pub fn s_at(&self, facet: usize) -> &DMatrix<T> {
        match &self.per_facet {
            Some(v) => &v[facet],
            None => &self.uniform,
        }
    }

    pub fn n_facets(&self) -> Option<usize> {
        self.per_facet.as_ref().map(|v| v.len())
    }
}

/// Solver report for the weighted projection.
#[derive(Clone, Copy, Debug)]
pub struct ProjectionStats<T> {
    pub iterations: usize,
    pub gradient_mapping: T,
}

/// Projection of `w` onto `-K nu` in the inner product `<u, v>_{S^{-1}}`.
///
/// Computed by accelerated projected gradient on the lifted variable
/// `tau in K` with `q = -tau nu`; only the K-projection oracle is needed.
pub fn project_neg_k_nu<T: Real>(
    s: &DMatrix<T>,
    constraint: &StressConstraint<T>,
    nu: &DVector<T>,
    w: &DVector<T>,
) -> Result<DVector<T>, ConvexError> {
    let (q, _tau, _stats) = project_neg_k_nu_full(s, constraint, nu, w)?;
    Ok(q)
}

pub fn project_neg_k_nu_full<T: Real>(
    s: &DMatrix<T>,
    constraint: &StressConstraint<T>,
    nu: &DVector<T>,
    w: &DVector<T>,
) -> Result<(DVector<T>, SymTensor<T>, ProjectionStats<T>), ConvexError> {
    let dim = constraint.dim();
    if nu.len() != dim || w.len() != dim || s.nrows() != dim {
        return Err(ConvexError::DimMismatch { expected: dim, got: nu.len() });
    }
    let s_chol = nalgebra::linalg::Cholesky::new(s.clone()).ok_or(ConvexError::NotSpd)?;
    let s_min = spd_min_eig(s)?;
    // Lipschitz constant of the gradient in tau: lambda_max(S^{-1}) since
    // |tau nu| <= |tau|_F for unit nu.
    let lip = T::one() / s_min;
    let step = T::one() / lip;

    let grad = |tau: &SymTensor<T>| -> Result<(SymTensor<T>, DVector<T>), ConvexError> {
        // q = -tau nu; objective (1/2) S^{-1}(q - w).(q - w)
        let qv = {
            let tv = tau.apply_vec(nu.as_slice());
            -DVector::from_vec(tv)
        };
        let resid = s_chol.solve(&(&qv - w));
        // d/dtau = -(S^{-1}(q - w)) (.) nu
        let g = -sym_prod(resid.as_slice(), nu.as_slice()).map_err(|_| ConvexError::DimMismatch {
            expected: dim,
            got: nu.len(),
        })?;
        Ok((g, qv))
    };

    let scale = T::one() + w.norm();
    let tol = scalar::<T>(1e-12) * scale;
    let mut tau = constraint.project(&SymTensor::zero(dim))?;
    let mut momentum = tau;
    let mut t_prev = T::one();
    let mut last_gm = T::zero();
    for iter in 0..MAX_PROJ_ITERS {
        let (g, _q) = grad(&momentum)?;
        let tau_next = constraint.project(&(momentum - g.scale(step)))?;
        let gm = (tau_next - momentum).norm() * lip;
        last_gm = gm;
        // monotone restart
        let (g_at_tau, _) = grad(&tau)?;
        let tau_plain = constraint.project(&(tau - g_at_tau.scale(step)))?;
        let gm_plain = (tau_plain - tau).norm() * lip;
        let (new_tau, eff_gm) = if gm <= gm_plain { (tau_next, gm) } else { (tau_plain, gm_plain) };
        let t_next = (T::one() + (T::one() + scalar::<T>(4.0) * t_prev * t_prev).sqrt())
            * scalar::<T>(0.5);
        momentum = new_tau + (new_tau - tau).scale((t_prev - T::one()) / t_next);
        tau = new_tau;
        t_prev = t_next;
        if eff_gm <= tol {
            let qv = -DVector::from_vec(tau.apply_vec(nu.as_slice()));
            let stats = ProjectionStats { iterations: iter + 1, gradient_mapping: eff_gm };
            return Ok((qv, tau, stats));
        }
    }
    let residual = num_traits::ToPrimitive::to_f64(&last_gm).unwrap_or(f64::NAN);
    Err(ConvexError::NonConvergence { iterations: MAX_PROJ_ITERS, residual })
}

/// Boundary density `h(z) = H(-z (.) nu)`.
pub fn boundary_density_h<T: Real>(
    constraint: &StressConstraint<T>,
    nu: &DVector<T>,
    z: &DVector<T>,
) -> Result<ExtReal<T>, ConvexError> {
    let minus_z: Vec<T> = z.iter().map(|v| -*v).collect();
    let q = sym_prod(&minus_z, nu.as_slice())
        .map_err(|_| ConvexError::DimMismatch { expected: nu.len(), got: z.len() })?;
    constraint.support(&q)
}

/// The boundary dissipation potential
/// `psi(z) = inf_{z'} (1/2) S z'.z' + H((z' - z) (.) nu)`,
/// evaluated through its closed form
/// `(1/2) S z.z - (1/2) |P_{-K nu}(S z) - S z|^2_{S^{-1}}`.
pub fn psi<T: Real>(
    s: &DMatrix<T>,
    constraint: &StressConstraint<T>,
    nu: &DVector<T>,
    z: &DVector<T>,
) -> Result<T, ConvexError> {
    let sz = s * z;
    let p = project_neg_k_nu(s, constraint, nu, &sz)?;
    let s_chol = nalgebra::linalg::Cholesky::new(s.clone()).ok_or(ConvexError::NotSpd)?;
    let diff = &p - &sz;
    let half = scalar::<T>(0.5);
    Ok(half * sz.dot(z) - half * s_chol.solve(&diff).dot(&diff))
}

/// `D_z psi(z) = P_{-K nu}(S z)`.
pub fn psi_grad<T: Real>(
    s: &DMatrix<T>,
    constraint: &StressConstraint<T>,
    nu: &DVector<T>,
    z: &DVector<T>,
) -> Result<DVector<T>, ConvexError> {
    let sz = s * z;
    project_neg_k_nu(s, constraint, nu, &sz)
}

/// The unique minimizer `z'` of the infimum defining `psi`.
///
/// Satisfies `psi(z) = (1/2) S z'.z' + H((z' - z) (.) nu)` and
/// `z' = S^{-1} D_z psi(z)`.
pub fn infconv_minimizer<T: Real>(
    s: &DMatrix<T>,
    constraint: &StressConstraint<T>,
    nu: &DVector<T>,
    z: &DVector<T>,
) -> Result<DVector<T>, ConvexError> {
    let g = psi_grad(s, constraint, nu, z)?;
    let s_chol = nalgebra::linalg::Cholesky::new(s.clone()).ok_or(ConvexError::NotSpd)?;
    Ok(s_chol.solve(&g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rand_sym(rng: &mut StdRng, dim: usize) -> SymTensor<f64> {
        let n = dim * (dim + 1) / 2;
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        SymTensor::from_components(dim, &c).unwrap()
    }

    fn rand_spd(rng: &mut StdRng, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::<f64>::identity(n, n)
    }

    fn rand_unit(rng: &mut StdRng, n: usize) -> DVector<f64> {
        let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0f64));
        let nm = v.norm();
        v / nm
    }

    /// Unit box |sigma_ij| <= 1 componentwise, written as half-spaces in
    /// the Frobenius pairing (off-diagonal normals pair with weight 2).
    fn unit_box(dim: usize) -> StressConstraint<f64> {
        let n = dim * (dim + 1) / 2;
        let mut hs = Vec::new();
        for k in 0..n {
            for sign in [1.0, -1.0] {
                let mut c = vec![0.0; n];
                c[k] = sign;
                let normal = SymTensor::from_components(dim, &c).unwrap();
                let offset = if k < dim { 1.0 } else { 2.0 };
                hs.push((normal, offset));
            }
        }
        StressConstraint::polyhedral(hs, dim).unwrap()
    }

    fn sample_in_k(rng: &mut StdRng, k: &StressConstraint<f64>) -> SymTensor<f64> {
        let s = rand_sym(rng, k.dim());
        k.project(&s).unwrap()
    }

    #[test]
    fn ball_projection_cases() {
        let k = StressConstraint::<f64>::ball(2.0, 3).unwrap();
        let inside = SymTensor::identity(3);
        assert_eq!(k.project(&inside).unwrap(), inside);
        let outside = SymTensor::identity(3).scale(5.0);
        let p = k.project(&outside).unwrap();
        assert!((p.norm() - 2.0).abs() <= 1e-12);
        assert!((p - outside.scale(2.0 / outside.norm())).norm() <= 1e-12);
    }

    #[test]
    fn von_mises_projection_preserves_trace() {
        let mut rng = StdRng::seed_from_u64(11);
        let k = StressConstraint::von_mises(0.5, 3).unwrap();
        for _ in 0..100 {
            let s = rand_sym(&mut rng, 3);
            let p = k.project(&s).unwrap();
            assert!((p.trace() - s.trace()).abs() <= 1e-12);
            assert!(p.deviatoric().norm() <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn projection_variational_inequality() {
        // (sigma - P sigma) : (tau - P sigma) <= 0 for all tau in K
        let mut rng = StdRng::seed_from_u64(12);
        let sets: Vec<StressConstraint<f64>> = vec![
            StressConstraint::ball(1.3, 3).unwrap(),
            StressConstraint::von_mises(0.7, 3).unwrap(),
            unit_box(3),
            unit_box(2),
        ];
        for k in &sets {
            for _ in 0..50 {
                let s = rand_sym(&mut rng, k.dim());
                let p = k.project(&s).unwrap();
                assert!(k.violation(&p) <= 1e-9);
                for _ in 0..20 {
                    let tau = sample_in_k(&mut rng, k);
                    let lhs = (s - p).dot(&(tau - p));
                    assert!(lhs <= 1e-9, "VI violated: {lhs}");
                }
            }
        }
    }

    #[test]
    fn box_projection_is_componentwise_clip() {
        // The Frobenius metric is diagonal in components, so projection
        // onto the componentwise box clips each component independently.
        let mut rng = StdRng::seed_from_u64(13);
        let k = unit_box(3);
        for _ in 0..50 {
            let s = rand_sym(&mut rng, 3);
            let p = k.project(&s).unwrap();
            for (a, b) in p.components().iter().zip(s.components()) {
                assert!((a - b.clamp(-1.0, 1.0)).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn support_ball_and_von_mises() {
        let mut rng = StdRng::seed_from_u64(14);
        let ball = StressConstraint::ball(1.3, 3).unwrap();
        let vm = StressConstraint::von_mises(0.7, 3).unwrap();
        for _ in 0..50 {
            let q = rand_sym(&mut rng, 3);
            assert!((ball.support(&q).unwrap().finite() - 1.3 * q.norm()).abs() <= 1e-12);
            let qd = q.deviatoric();
            assert!((vm.support(&qd).unwrap().finite() - 0.7 * qd.norm()).abs() <= 1e-12);
        }
        // nonzero trace direction is unbounded for the cylinder
        assert_eq!(vm.support(&SymTensor::identity(3)).unwrap(), ExtReal::PosInf);
    }

    #[test]
    fn support_dominates_samples() {
        let mut rng = StdRng::seed_from_u64(15);
        let sets: Vec<StressConstraint<f64>> =
            vec![StressConstraint::ball(1.3, 3).unwrap(), unit_box(3)];
        for k in &sets {
            for _ in 0..30 {
                let q = rand_sym(&mut rng, 3);
                let h = k.support(&q).unwrap().finite();
                let mut best = f64::NEG_INFINITY;
                for _ in 0..200 {
                    let s = sample_in_k(&mut rng, k);
                    best = best.max(s.dot(&q));
                }
                assert!(h >= best - 1e-8);
                // the supremum is nearly attained by projecting a far point
                let far = k.project(&q.scale(1e6 / q.norm().max(1e-12))).unwrap();
                assert!(h <= far.dot(&q) + 1e-6 * (1.0 + h.abs()));
            }
        }
    }

    #[test]
    fn box_support_closed_form() {
        let mut rng = StdRng::seed_from_u64(16);
        let k = unit_box(3);
        for _ in 0..10 {
            let q = rand_sym(&mut rng, 3);
            let c = q.components();
            let exact: f64 = c[..3].iter().map(|x| x.abs()).sum::<f64>()
                + 2.0 * c[3..].iter().map(|x| x.abs()).sum::<f64>();
            let h = k.support(&q).unwrap().finite();
            assert!((h - exact).abs() <= 1e-5 * (1.0 + exact), "{h} vs {exact}");
        }
    }

    #[test]
    fn polyhedral_unbounded_direction() {
        // single half-space sigma_11 <= 1 is unbounded along e2 (.) e2
        let n = SymTensor::from_components(3, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let k = StressConstraint::polyhedral(vec![(n, 1.0)], 3).unwrap();
        let q = SymTensor::from_components(3, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(k.support(&q).unwrap(), ExtReal::PosInf);
    }

    #[test]
    fn normal_cone_membership() {
        let k = StressConstraint::ball(1.0, 3).unwrap();
        let boundary = SymTensor::identity(3).scale(1.0 / 3.0f64.sqrt());
        let out = boundary.scale(2.5);
        assert!(k.in_normal_cone(&boundary, &out, 1e-10).unwrap());
        let interior = boundary.scale(0.5);
        assert!(!k.in_normal_cone(&interior, &out, 1e-10).unwrap());
        // zero is in every normal cone
        assert!(k.in_normal_cone(&interior, &SymTensor::zero(3), 1e-10).unwrap());
    }

    #[test]
    fn inner_radius_values() {
        assert_eq!(StressConstraint::ball(2.0, 3).unwrap().inner_radius(), 2.0);
        assert_eq!(StressConstraint::von_mises(0.7, 3).unwrap().inner_radius(), 0.7);
        // box: tightest face distance c / |n|, off-diagonal |n| = sqrt 2
        let r = unit_box(3).inner_radius();
        assert!((r - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn weighted_projection_vi() {
        // q* = P_{-K nu} w in <.,.>_{S^{-1}} satisfies
        // <w - q*, q - q*>_{S^{-1}} <= 0 for all q in -K nu
        let mut rng = StdRng::seed_from_u64(17);
        let sets: Vec<StressConstraint<f64>> = vec![
            StressConstraint::ball(1.0, 3).unwrap(),
            StressConstraint::von_mises(0.6, 3).unwrap(),
        ];
        for k in &sets {
            for _ in 0..10 {
                let s = rand_spd(&mut rng, 3);
                let si = s.clone().try_inverse().unwrap();
                let nu = rand_unit(&mut rng, 3);
                let w = DVector::from_fn(3, |_, _| rng.gen_range(-3.0..3.0f64));
                let (q, tau, stats) = project_neg_k_nu_full(&s, k, &nu, &w).unwrap();
                assert!(stats.gradient_mapping <= 1e-11 * (1.0 + w.norm()));
                assert!(k.violation(&tau) <= 1e-9);
                let qt = -DVector::from_vec(tau.apply_vec(nu.as_slice()));
                assert!((&q - &qt).norm() <= 1e-12);
                for _ in 0..50 {
                    let cand = sample_in_k(&mut rng, k);
                    let qc = -DVector::from_vec(cand.apply_vec(nu.as_slice()));
                    let lhs = (&si * (&w - &q)).dot(&(&qc - &q));
                    assert!(lhs <= 1e-7, "weighted VI violated: {lhs}");
                }
            }
        }
    }

    #[test]
    fn psi_sandwich_and_convexity() {
        let mut rng = StdRng::seed_from_u64(18);
        let k = StressConstraint::ball(0.8, 3).unwrap();
        let s = rand_spd(&mut rng, 3);
        let nu = rand_unit(&mut rng, 3);
        assert!(psi(&s, &k, &nu, &DVector::zeros(3)).unwrap().abs() <= 1e-10);
        for _ in 0..30 {
            let z = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0f64));
            let v = psi(&s, &k, &nu, &z).unwrap();
            assert!(v >= -1e-10);
            assert!(v <= 0.5 * (&s * &z).dot(&z) + 1e-10);
            // midpoint convexity
            let z2 = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0f64));
            let mid = (&z + &z2) * 0.5;
            let vm = psi(&s, &k, &nu, &mid).unwrap();
            let v2 = psi(&s, &k, &nu, &z2).unwrap();
            assert!(vm <= 0.5 * (v + v2) + 1e-9);
        }
    }

    #[test]
    fn psi_matches_local_minimum_of_infimum() {
        // the inf-convolution objective J(z') = (1/2) S z'.z' + H((z'-z)(.)nu)
        // evaluated at the returned minimizer equals psi, and random
        // perturbations never go below it.
        let mut rng = StdRng::seed_from_u64(19);
        let k = StressConstraint::ball(0.8, 3).unwrap();
        let s = rand_spd(&mut rng, 3);
        let nu = rand_unit(&mut rng, 3);
        let j = |zp: &DVector<f64>, z: &DVector<f64>| -> f64 {
            let d: Vec<f64> = (zp - z).iter().cloned().collect();
            let q = sym_prod(&d, nu.as_slice()).unwrap();
            0.5 * (&s * zp).dot(zp) + k.support(&q).unwrap().finite()
        };
        for _ in 0..10 {
            let z = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0f64));
            let v = psi(&s, &k, &nu, &z).unwrap();
            let zbar = infconv_minimizer(&s, &k, &nu, &z).unwrap();
            let at_min = j(&zbar, &z);
            assert!((v - at_min).abs() <= 1e-8 * (1.0 + v.abs()));
            for _ in 0..200 {
                let r = 10.0f64.powf(rng.gen_range(-4.0..1.0));
                let pert = &zbar + rand_unit(&mut rng, 3) * r;
                assert!(j(&pert, &z) >= at_min - 1e-9 * (1.0 + at_min.abs()));
            }
        }
    }

    #[test]
    fn infconv_identities() {
        // value identity and z' = S^{-1} D_z psi
        let mut rng = StdRng::seed_from_u64(20);
        for kind in 0..2 {
            let k: StressConstraint<f64> = if kind == 0 {
                StressConstraint::ball(0.8, 3).unwrap()
            } else {
                StressConstraint::von_mises(0.5, 3).unwrap()
            };
            let s = rand_spd(&mut rng, 3);
            let si = s.clone().try_inverse().unwrap();
            let nu = rand_unit(&mut rng, 3);
            for _ in 0..20 {
                let z = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0f64));
                let zbar = infconv_minimizer(&s, &k, &nu, &z).unwrap();
                let g = psi_grad(&s, &k, &nu, &z).unwrap();
                assert!((&zbar - &si * &g).norm() <= 1e-8);
                let d: Vec<f64> = (&zbar - &z).iter().cloned().collect();
                let q = sym_prod(&d, nu.as_slice()).unwrap();
                let h = k.support(&q).unwrap().finite();
                let v = psi(&s, &k, &nu, &z).unwrap();
                assert!((v - (0.5 * (&s * &zbar).dot(&zbar) + h)).abs() <= 1e-8 * (1.0 + v.abs()));
            }
        }
    }

    #[test]
    fn psi_grad_monotone_and_consistent() {
        let mut rng = StdRng::seed_from_u64(21);
        let k = StressConstraint::ball(0.8, 3).unwrap();
        let s = rand_spd(&mut rng, 3);
        let nu = rand_unit(&mut rng, 3);
        for _ in 0..20 {
            let z1 = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0f64));
            let z2 = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0f64));
            let g1 = psi_grad(&s, &k, &nu, &z1).unwrap();
            let g2 = psi_grad(&s, &k, &nu, &z2).unwrap();
            assert!((&g1 - &g2).dot(&(&z1 - &z2)) >= -1e-9);
            // central finite differences of psi reproduce the gradient
            let h = 1e-6;
            for i in 0..3 {
                let mut zp = z1.clone();
                let mut zm = z1.clone();
                zp[i] += h;
                zm[i] -= h;
                let fd = (psi(&s, &k, &nu, &zp).unwrap() - psi(&s, &k, &nu, &zm).unwrap())
                    / (2.0 * h);
                assert!((fd - g1[i]).abs() <= 1e-4 * (1.0 + g1[i].abs()));
            }
        }
    }

    #[test]
    fn boundary_density_matches_lifted_sup() {
        // h(z) = H(-z (.) nu) = sup { q . z : q in -K nu }
        let mut rng = StdRng::seed_from_u64(22);
        let k = StressConstraint::ball(0.9, 3).unwrap();
        let nu = rand_unit(&mut rng, 3);
        for _ in 0..20 {
            let z = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0f64));
            let h = boundary_density_h(&k, &nu, &z).unwrap().finite();
            let mut best = f64::NEG_INFINITY;
            for _ in 0..500 {
                let tau = sample_in_k(&mut rng, &k);
                let q = -DVector::from_vec(tau.apply_vec(nu.as_slice()));
                best = best.max(q.dot(&z));
            }
            assert!(h >= best - 1e-8);
            assert!(h <= best + 0.2 * (1.0 + h.abs()), "sampling far from sup");
            assert!(h >= 0.0);
        }
    }

    #[test]
    fn boundary_law_validation() {
        let mut rng = StdRng::seed_from_u64(23);
        let s = rand_spd(&mut rng, 3);
        let law = BoundaryLaw::uniform(s.clone()).unwrap();
        let eig = s.clone().symmetric_eigen();
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((law.coercivity() - min).abs() <= 1e-10);
        assert_eq!(law.s_at(0), &s);
        assert_eq!(law.n_facets(), None);

        // asymmetric and indefinite matrices are rejected
        let mut bad = s.clone();
        bad[(0, 1)] += 1.0;
        assert!(BoundaryLaw::uniform(bad).is_err());
        assert!(BoundaryLaw::uniform(-s.clone()).is_err());

        let per = BoundaryLaw::per_facet(vec![s.clone(), 2.0 * &s]).unwrap();
        assert_eq!(per.n_facets(), Some(2));
        assert!((per.coercivity() - min).abs() <= 1e-10);
    }

    #[test]
    fn rejects_degenerate_sets() {
        assert!(StressConstraint::<f64>::ball(0.0, 3).is_err());
        assert!(StressConstraint::<f64>::von_mises(-1.0, 3).is_err());
        assert!(StressConstraint::<f64>::polyhedral(vec![], 3).is_err());
        let n = SymTensor::<f64>::identity(3);
        // offset <= 0 excludes the origin's neighborhood
        assert!(StressConstraint::polyhedral(vec![(n, -1.0)], 3).is_err());
    }
}
