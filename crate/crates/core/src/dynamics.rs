//! Implicit elasto-visco-plastic time stepper: each step minimizes a
//! jointly convex incremental functional in the velocity and the plastic
//! strain by alternating an SPD linear solve with cellwise proximal
//! updates, and records a complete energy ledger.

use std::sync::Arc;

use nalgebra::{Cholesky, DVector};
use thiserror::Error;

use crate::convex::{BoundaryLaw, ConvexError, ExtReal, StressConstraint};
use crate::fem::{self, FemError, Operators};
use crate::mesh::Mesh;
use crate::tensor::{Hooke, SymTensor};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("plastic proximal solve did not converge after {iterations} iterations (residual {residual:.3e})")]
    ProxNonConvergence { iterations: usize, residual: f64 },
    #[error("alternating minimization at step {step} exceeded {sweeps} sweeps (last decrease {decrease:.3e})")]
    SweepLimit { step: usize, sweeps: usize, decrease: f64 },
    #[error("velocity system factorization failed at step {step}")]
    SolverBreakdown { step: usize },
    #[error("invalid scenario: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Convex(#[from] ConvexError),
}

/// Traversal order of the cellwise proximal sweep and of the stress-load
/// accumulation; reversing it must not change the physics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CellOrder {
    #[default]
    Forward,
    Reverse,
}

pub type Source = Arc<dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync>;

/// A fully resolved simulation setup: geometry, material, constraint,
/// boundary law, initial data and discretization parameters.
#[derive(Clone)]
pub struct Scenario {
    pub mesh: Mesh,
    pub hooke: Hooke<f64>,
    pub constraint: StressConstraint<f64>,
    pub law: BoundaryLaw<f64>,
    pub u0: DVector<f64>,
    pub v0: DVector<f64>,
    pub e0: Vec<SymTensor<f64>>,
    pub p0: Vec<SymTensor<f64>>,
    pub source: Source,
    pub t_end: f64,
    pub delta: f64,
    pub eps: f64,
    pub tol_inner: f64,
    pub max_sweeps: usize,
    /// Use the dissipative boundary datum g = ε Ev₀ ν; otherwise g = 0.
    pub boundary_datum_from_v0: bool,
    pub cell_order: CellOrder,
}

impl std::fmt::Debug for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scenario")
            .field("dim", &self.mesh.dim)
            .field("n_cells", &self.mesh.n_cells())
            .field("t_end", &self.t_end)
            .field("delta", &self.delta)
            .field("eps", &self.eps)
            .finish_non_exhaustive()
    }
}

/// Residuals of the initial-data compatibility conditions.
#[derive(Clone, Copy, Debug)]
pub struct CompatibilityReport {
    /// max over cells of |Eu₀ − e₀ − p₀|.
    pub strain_residual: f64,
    /// max over facets of |S v₀ + σ₀ν| (facet-centroid trace).
    pub boundary_residual: f64,
    /// min over cells of the feasibility margin of σ₀ = A e₀ in K.
    pub feasibility_margin: f64,
}

impl Scenario {
    pub fn compatibility(&self) -> Result<CompatibilityReport, DynamicsError> {
        let eu0 = fem::strain(&self.mesh, &self.u0)?;
        let mut strain_residual: f64 = 0.0;
        let mut feasibility_margin = f64::INFINITY;
        for c in 0..self.mesh.n_cells() {
            let r = (eu0[c] - self.e0[c] - self.p0[c]).norm();
            strain_residual = strain_residual.max(r);
            let sigma0 = self.hooke.apply(&self.e0[c]);
            feasibility_margin = feasibility_margin.min(-self.constraint.violation(&sigma0));
        }
        let dim = self.mesh.dim;
        let mut boundary_residual: f64 = 0.0;
        for (fi, f) in self.mesh.facets.iter().enumerate() {
            let s = self.law.s_at(fi);
            let v_trace = facet_average(dim, &f.vertices, &self.v0);
            let sn = self.hooke.apply(&self.e0[f.cell]).apply_vec(&f.normal);
            let mut r2 = 0.0;
            for a in 0..dim {
                let sv: f64 = (0..dim).map(|b| s[(a, b)] * v_trace[b]).sum();
                r2 += (sv + sn[a]) * (sv + sn[a]);
            }
            boundary_residual = boundary_residual.max(r2.sqrt());
        }
        Ok(CompatibilityReport { strain_residual, boundary_residual, feasibility_margin })
    }
}

/// Per-step solver statistics.
#[derive(Clone, Copy, Debug, Default)]
pub struct StepStats {
    pub sweeps: usize,
    pub final_decrease: f64,
    pub max_perzyna_residual: f64,
}

/// One row of the energy ledger. `kinetic`/`elastic` are state values at
/// the step; the remaining columns are increments over the step.
#[derive(Clone, Copy, Debug, Default)]
pub struct LedgerRow {
    pub step: usize,
    pub time: f64,
    pub kinetic: f64,
    pub elastic: f64,
    pub plastic_increment: f64,
    pub boundary_increment: f64,
    pub viscous_strain_increment: f64,
    pub viscous_plastic_increment: f64,
    pub work_f_increment: f64,
    pub work_g_increment: f64,
}

/// The full discrete solution history plus ledger and statistics.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub delta: f64,
    pub eps: f64,
    pub times: Vec<f64>,
    pub u: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
    pub e: Vec<Vec<SymTensor<f64>>>,
    pub p: Vec<Vec<SymTensor<f64>>>,
    pub sigma: Vec<Vec<SymTensor<f64>>>,
    /// Per step, per facet: facet-centroid trace of v.
    pub boundary_v: Vec<Vec<Vec<f64>>>,
    /// Per step, per facet: (σ + εEu̇)ν on the adjacent cell.
    pub boundary_traction: Vec<Vec<Vec<f64>>>,
    pub ledger: Vec<LedgerRow>,
    pub stats: Vec<StepStats>,
}

impl Trajectory {
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }
}

fn facet_average(dim: usize, verts: &[usize], nodal: &DVector<f64>) -> Vec<f64> {
    (0..dim)
        .map(|a| verts.iter().map(|&v| nodal[v * dim + a]).sum::<f64>() / verts.len() as f64)
        .collect()
}

fn support_value(constraint: &StressConstraint<f64>, q: &SymTensor<f64>) -> Result<f64, DynamicsError> {
    match constraint.support(q)? {
        ExtReal::Finite(v) => Ok(v),
        ExtReal::PosInf => Err(DynamicsError::BadConfig(
            "plastic increment outside the domain of the dissipation density".into(),
        )),
    }
}

/// Cellwise proximal problem: minimizes
/// `½ A(Ev_trial − q):(Ev_trial − q) + H(q − p_prev) + (ε/2δ)|q − p_prev|²`
/// and returns `(q, σ)` with `σ = A(Ev_trial − q)`. The optimum obeys the
/// viscoplastic return identity `q − p_prev = (δ/ε)(σ − P_K σ)`.
pub fn plastic_prox(
    constraint: &StressConstraint<f64>,
    hooke: &Hooke<f64>,
    ev_trial: &SymTensor<f64>,
    p_prev: &SymTensor<f64>,
    eps: f64,
    delta: f64,
) -> Result<(SymTensor<f64>, SymTensor<f64>), DynamicsError> {
    if eps <= 0.0 || delta <= 0.0 {
        return Err(DynamicsError::BadConfig("eps and delta must be positive".into()));
    }
    let dim = ev_trial.dim();
    let b = *ev_trial - *p_prev;
    let sigma_trial = hooke.apply(&b);
    if constraint.contains(&sigma_trial, 0.0) {
        return Ok((*p_prev, sigma_trial));
    }
    let visc = eps / delta;
    let delta_p = match constraint.kind() {
        crate::convex::ConstraintKind::Ball { radius } => {
            radial_return_ball(hooke, &sigma_trial, *radius, visc)
        }
        crate::convex::ConstraintKind::VonMisesCylinder { k } => {
            let dev = sigma_trial.deviatoric();
            let nd = dev.norm();
            let mag = (nd - *k).max(0.0) / (2.0 * hooke.mu + visc);
            dev.scale(mag / nd)
        }
        crate::convex::ConstraintKind::Polyhedral { .. } => {
            prox_polyhedral(constraint, hooke, &b, visc)?
        }
    };
    let q = *p_prev + delta_p;
    let sigma = hooke.apply(&(b - delta_p));
    // the return identity certifies optimality for every branch
    let scale = sigma_trial.norm().max(constraint.inner_radius()).max(1.0);
    let residual = (delta_p.scale(visc) - (sigma - constraint.project(&sigma)?)).norm();
    if residual > 1e-9 * scale {
        return Err(DynamicsError::ProxNonConvergence { iterations: 0, residual });
    }
    debug_assert_eq!(dim, q.dim());
    Ok((q, sigma))
}

/// Closed-form radial return for a Frobenius ball, reduced to a monotone
/// scalar equation in the return magnitude s = |Δp|:
/// `(tr σ)²/(n(c₁s+r)²) + |σ_D|²/(c₂s+r)² = 1`
/// with c₁ = nλ+2μ+ε/δ, c₂ = 2μ+ε/δ. Solved by safeguarded Newton.
fn radial_return_ball(
    hooke: &Hooke<f64>,
    sigma_trial: &SymTensor<f64>,
    radius: f64,
    visc: f64,
) -> SymTensor<f64> {
    let n = sigma_trial.dim() as f64;
    let tr = sigma_trial.trace();
    let dev = sigma_trial.deviatoric();
    let nd = dev.norm();
    let c1 = n * hooke.lambda + 2.0 * hooke.mu + visc;
    let c2 = 2.0 * hooke.mu + visc;
    let phi = |s: f64| {
        tr * tr / (n * (c1 * s + radius).powi(2)) + nd * nd / (c2 * s + radius).powi(2) - 1.0
    };
    let dphi = |s: f64| {
        -2.0 * c1 * tr * tr / (n * (c1 * s + radius).powi(3))
            - 2.0 * c2 * nd * nd / (c2 * s + radius).powi(3)
    };
    let mut lo = 0.0;
    let mut hi = sigma_trial.norm() / c1.min(c2);
    let mut s = 0.5 * hi;
    for _ in 0..200 {
        let f = phi(s);
        if f.abs() <= 1e-14 {
            break;
        }
        if f > 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let newton = s - f / dphi(s);
        s = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-16 * hi {
            break;
        }
    }
    let mean = tr * s / (c1 * s + radius) / n;
    let mut out = dev.scale(s / (c2 * s + radius));
    for i in 0..sigma_trial.dim() {
        out.set(i, i, out.get(i, i) + mean);
    }
    out
}

/// Accelerated proximal gradient on Δp for polyhedral constraints, using
/// `prox_{tH}(x) = x − t P_K(x/t)`.
fn prox_polyhedral(
    constraint: &StressConstraint<f64>,
    hooke: &Hooke<f64>,
    b: &SymTensor<f64>,
    visc: f64,
) -> Result<SymTensor<f64>, DynamicsError> {
    let dim = b.dim();
    let lip = dim as f64 * hooke.lambda + 2.0 * hooke.mu + visc;
    let t = 1.0 / lip;
    let grad = |d: &SymTensor<f64>| -> SymTensor<f64> {
        -hooke.apply(&(*b - *d)) + d.scale(visc)
    };
    let prox = |x: &SymTensor<f64>| -> Result<SymTensor<f64>, ConvexError> {
        Ok(*x - constraint.project(&x.scale(1.0 / t))?.scale(t))
    };
    let sigma_scale = hooke.apply(b).norm().max(constraint.inner_radius()).max(1.0);
    let mut d = SymTensor::zero(dim);
    let mut y = d;
    let mut theta = 1.0f64;
    let max_iters = 50_000;
    let mut residual = f64::INFINITY;
    for it in 0..max_iters {
        let d_next = prox(&(y - grad(&y).scale(t)))?;
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let momentum = (theta - 1.0) / theta_next;
        y = d_next + (d_next - d).scale(momentum);
        // restart the momentum if the objective direction flips
        if (d_next - d).dot(&(d - y)) > 0.0 {
            y = d_next;
            theta = 1.0;
        } else {
            theta = theta_next;
        }
        d = d_next;
        if it % 10 == 0 || it == max_iters - 1 {
            let sigma = hooke.apply(&(*b - d));
            residual = (d.scale(visc) - (sigma - constraint.project(&sigma)?)).norm();
            if residual <= 1e-11 * sigma_scale {
                return Ok(d);
            }
        }
    }
    Err(DynamicsError::ProxNonConvergence { iterations: max_iters, residual })
}

/// Precomputed step operators: the (step-independent) velocity system and
/// its factorization.
pub struct Stepper<'a> {
    pub scenario: &'a Scenario,
    pub ops: Operators,
    chol: Cholesky<f64, nalgebra::Dyn>,
    g_per_facet: Vec<Vec<f64>>,
    g_load: DVector<f64>,
}

/// Outcome of one incremental minimization.
pub struct StepResult {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub e: Vec<SymTensor<f64>>,
    pub p: Vec<SymTensor<f64>>,
    pub sigma: Vec<SymTensor<f64>>,
    pub stats: StepStats,
    /// Functional value after each sweep (strictly decreasing).
    pub sweep_values: Vec<f64>,
}

fn cell_range(n: usize, order: CellOrder) -> Box<dyn Iterator<Item = usize>> {
    match order {
        CellOrder::Forward => Box::new(0..n),
        CellOrder::Reverse => Box::new((0..n).rev()),
    }
}

impl<'a> Stepper<'a> {
    pub fn new(scenario: &'a Scenario) -> Result<Self, DynamicsError> {
        let s = scenario;
        if s.delta <= 0.0 || s.eps <= 0.0 || s.t_end < s.delta {
            return Err(DynamicsError::BadConfig("need delta > 0, eps > 0, T >= delta".into()));
        }
        let ops = fem::assemble(&s.mesh, &s.hooke, &s.law)?;
        let system = &ops.mass / s.delta
            + s.delta * &ops.stiffness
            + s.eps * &ops.viscosity
            + &ops.boundary;
        let chol = Cholesky::new(system).ok_or(DynamicsError::SolverBreakdown { step: 0 })?;
        let g_per_facet = if s.boundary_datum_from_v0 {
            fem::dissipative_boundary_datum(&s.mesh, &s.v0, s.eps)?
        } else {
            vec![vec![0.0; s.mesh.dim]; s.mesh.facets.len()]
        };
        let g_load = fem::boundary_load(&s.mesh, &g_per_facet)?;
        Ok(Stepper { scenario: s, ops, chol, g_per_facet, g_load })
    }

    pub fn boundary_datum(&self) -> &[Vec<f64>] {
        &self.g_per_facet
    }

    pub fn g_load(&self) -> &DVector<f64> {
        &self.g_load
    }

    /// Stress pairing load accumulated in the configured cell order.
    fn stress_load_ordered(&self, tau: &[SymTensor<f64>]) -> DVector<f64> {
        let mesh = &self.scenario.mesh;
        let dim = mesh.dim;
        let mut out = DVector::zeros(dim * mesh.n_vertices());
        for c in cell_range(mesh.n_cells(), self.scenario.cell_order) {
            let vol = mesh.cell_measure(c);
            let grads = fem::basis_gradients(mesh, c);
            for (i, &vi) in mesh.cells[c].iter().enumerate() {
                for a in 0..dim {
                    let mut eps = SymTensor::zero(dim);
                    for k in 0..dim {
                        if k == a {
                            eps.set(a, a, grads[i][k]);
                        } else {
                            eps.set(a, k, 0.5 * grads[i][k]);
                        }
                    }
                    out[vi * dim + a] += vol * tau[c].dot(&eps);
                }
            }
        }
        out
    }

    /// Incremental functional at (v, q), up to constants dropped from the
    /// load terms (the minimization compares values, not levels).
    fn functional(
        &self,
        v: &DVector<f64>,
        q: &[SymTensor<f64>],
        v_prev: &DVector<f64>,
        eu_prev: &[SymTensor<f64>],
        p_prev: &[SymTensor<f64>],
        ev: &[SymTensor<f64>],
        f_load: &DVector<f64>,
    ) -> Result<f64, DynamicsError> {
        let s = self.scenario;
        let dv = v - v_prev;
        let mut value = 0.5 / s.delta * dv.dot(&(&self.ops.mass * &dv))
            + 0.5 * s.eps * v.dot(&(&self.ops.viscosity * v))
            + 0.5 * v.dot(&(&self.ops.boundary * v))
            - v.dot(f_load)
            - v.dot(&self.g_load);
        for c in 0..s.mesh.n_cells() {
            let vol = s.mesh.cell_measure(c);
            let e = eu_prev[c] + ev[c].scale(s.delta) - q[c];
            let dp = q[c] - p_prev[c];
            value += vol
                * (s.hooke.quadratic_form(&e) / s.delta
                    + support_value(&s.constraint, &dp)? / s.delta
                    + 0.5 * s.eps / (s.delta * s.delta) * dp.dot(&dp));
        }
        Ok(value)
    }

    /// One incremental minimization from (u_prev, v_prev, p_prev), with the
    /// volume load sampled at the previous time.
    pub fn incremental_step(
        &self,
        step: usize,
        u_prev: &DVector<f64>,
        v_prev: &DVector<f64>,
        p_prev: &[SymTensor<f64>],
        f_load: &DVector<f64>,
    ) -> Result<StepResult, DynamicsError> {
        let s = self.scenario;
        let mesh = &s.mesh;
        let eu_prev = fem::strain(mesh, u_prev)?;
        let mut q: Vec<SymTensor<f64>> = p_prev.to_vec();
        let mut value = f64::INFINITY;
        let mut sweep_values = Vec::new();
        let mut v = v_prev.clone();
        let mut converged = false;
        let mut decrease = f64::INFINITY;

        for _sweep in 0..s.max_sweeps {
            // (a) velocity block: SPD solve with the plastic strain frozen
            let q_frozen = q.clone();
            let elastic_stress: Vec<SymTensor<f64>> = (0..mesh.n_cells())
                .map(|c| s.hooke.apply(&(eu_prev[c] - q[c])))
                .collect();
            let rhs = &self.ops.mass * v_prev / s.delta + f_load + &self.g_load
                - self.stress_load_ordered(&elastic_stress);
            v = self.chol.solve(&rhs);
            let ev = fem::strain(mesh, &v)?;
            // (b) plastic block: cellwise proximal update
            for c in cell_range(mesh.n_cells(), s.cell_order) {
                let trial = eu_prev[c] + ev[c].scale(s.delta);
                let (qc, _) = plastic_prox(&s.constraint, &s.hooke, &trial, &p_prev[c], s.eps, s.delta)?;
                q[c] = qc;
            }
            let new_value = self.functional(&v, &q, v_prev, &eu_prev, p_prev, &ev, f_load)?;
            decrease = value - new_value;
            sweep_values.push(new_value);
            value = new_value;
            // The velocity satisfies its stationarity equation for q_frozen;
            // the residual left by the subsequent plastic update is the load
            // of the elastic-stress change. Requiring it small (on the scale
            // of the forcing) makes the discrete equation of motion — and
            // with it the dissipative boundary condition — hold at the
            // accepted iterate to solver tolerance, not just the functional.
            let shift: Vec<SymTensor<f64>> = (0..mesh.n_cells())
                .map(|c| s.hooke.apply(&(q_frozen[c] - q[c])))
                .collect();
            let el_residual =
                self.stress_load_ordered(&shift).norm() / (1.0 + rhs.norm());
            if decrease <= s.tol_inner * (1.0 + value.abs()) && el_residual <= s.tol_inner {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(DynamicsError::SweepLimit { step, sweeps: s.max_sweeps, decrease });
        }

        let u = u_prev + s.delta * &v;
        let eu = fem::strain(mesh, &u)?;
        let mut e = Vec::with_capacity(mesh.n_cells());
        let mut sigma = Vec::with_capacity(mesh.n_cells());
        let mut max_perzyna: f64 = 0.0;
        for c in 0..mesh.n_cells() {
            let ec = eu[c] - q[c];
            let sc = s.hooke.apply(&ec);
            let dp = q[c] - p_prev[c];
            let scale = sc.norm().max(s.constraint.inner_radius()).max(1.0);
            let res = (dp.scale(s.eps / s.delta) - (sc - s.constraint.project(&sc)?)).norm();
            max_perzyna = max_perzyna.max(res / scale);
            e.push(ec);
            sigma.push(sc);
        }
        let stats = StepStats {
            sweeps: sweep_values.len(),
            final_decrease: decrease,
            max_perzyna_residual: max_perzyna,
        };
        Ok(StepResult { u, v, e, p: q, sigma, stats, sweep_values })
    }
}

/// Runs the scenario over ⌈T/δ⌉ steps and assembles the trajectory with
/// its energy ledger. Fully deterministic for a fixed configuration.
pub fn run(scenario: &Scenario) -> Result<Trajectory, DynamicsError> {
    let s = scenario;
    let mesh = &s.mesh;
    let dim = mesh.dim;
    let stepper = Stepper::new(s)?;
    let n_steps = (s.t_end / s.delta).ceil() as usize;

    let mut traj = Trajectory {
        delta: s.delta,
        eps: s.eps,
        times: Vec::with_capacity(n_steps + 1),
        u: Vec::new(),
        v: Vec::new(),
        e: Vec::new(),
        p: Vec::new(),
        sigma: Vec::new(),
        boundary_v: Vec::new(),
        boundary_traction: Vec::new(),
        ledger: Vec::new(),
        stats: Vec::new(),
    };

    let push_state = |traj: &mut Trajectory,
                      step: usize,
                      u: DVector<f64>,
                      v: DVector<f64>,
                      e: Vec<SymTensor<f64>>,
                      p: Vec<SymTensor<f64>>,
                      sigma: Vec<SymTensor<f64>>,
                      stats: StepStats,
                      increments: [f64; 6]|
     -> Result<(), DynamicsError> {
        let ev = fem::strain(mesh, &v)?;
        let mut b_v = Vec::with_capacity(mesh.facets.len());
        let mut b_tr = Vec::with_capacity(mesh.facets.len());
        for f in &mesh.facets {
            b_v.push(facet_average(dim, &f.vertices, &v));
            let total = sigma[f.cell] + ev[f.cell].scale(s.eps);
            b_tr.push(total.apply_vec(&f.normal));
        }
        let kinetic = 0.5 * v.dot(&(&stepper.ops.mass * &v));
        let elastic: f64 = (0..mesh.n_cells())
            .map(|c| mesh.cell_measure(c) * s.hooke.quadratic_form(&e[c]))
            .sum();
        traj.times.push(step as f64 * s.delta);
        traj.ledger.push(LedgerRow {
            step,
            time: step as f64 * s.delta,
            kinetic,
            elastic,
            plastic_increment: increments[0],
            boundary_increment: increments[1],
            viscous_strain_increment: increments[2],
            viscous_plastic_increment: increments[3],
            work_f_increment: increments[4],
            work_g_increment: increments[5],
        });
        traj.boundary_v.push(b_v);
        traj.boundary_traction.push(b_tr);
        traj.stats.push(stats);
        traj.u.push(u);
        traj.v.push(v);
        traj.e.push(e);
        traj.p.push(p);
        traj.sigma.push(sigma);
        Ok(())
    };

    let sigma0: Vec<SymTensor<f64>> = s.e0.iter().map(|e| s.hooke.apply(e)).collect();
    push_state(
        &mut traj,
        0,
        s.u0.clone(),
        s.v0.clone(),
        s.e0.clone(),
        s.p0.clone(),
        sigma0.clone(),
        StepStats::default(),
        [0.0; 6],
    )?;
    if n_steps == 0 {
        return Ok(traj);
    }

    // compatible first step: advance u and p along v₀ with the elastic
    // strain frozen, so the additive decomposition is preserved
    let ev0 = fem::strain(mesh, &s.v0)?;
    let u1 = &s.u0 + s.delta * &s.v0;
    let p1: Vec<SymTensor<f64>> =
        (0..mesh.n_cells()).map(|c| s.p0[c] + ev0[c].scale(s.delta)).collect();
    // the initialization step performs no minimization, so its plastic
    // dissipation is recorded through the flow-rule pairing σ:Δp (finite
    // even when Δp has a spherical part that H would reject)
    let plastic1: f64 = (0..mesh.n_cells())
        .map(|c| mesh.cell_measure(c) * s.hooke.apply(&s.e0[c]).dot(&ev0[c].scale(s.delta)))
        .sum();
    let increments1 = step_increments(s, &stepper, &s.v0, Some(plastic1), &p1, &s.p0, 0.0)?;
    push_state(
        &mut traj,
        1,
        u1,
        s.v0.clone(),
        s.e0.clone(),
        p1,
        sigma0,
        StepStats::default(),
        increments1,
    )?;

    for i in 2..=n_steps {
        let t_prev = (i - 1) as f64 * s.delta;
        let f_nodal = fem::interpolate_nodal(mesh, |x| (s.source)(x, t_prev));
        let f_load = stepper.ops.load(&f_nodal);
        let result = stepper.incremental_step(
            i,
            &traj.u[i - 1],
            &traj.v[i - 1],
            &traj.p[i - 1],
            &f_load,
        )?;
        let increments = step_increments(
            s,
            &stepper,
            &result.v,
            None,
            &result.p,
            &traj.p[i - 1],
            result.v.dot(&f_load),
        )?;
        push_state(
            &mut traj,
            i,
            result.u,
            result.v,
            result.e,
            result.p,
            result.sigma,
            result.stats,
            increments,
        )?;
    }
    Ok(traj)
}

/// Increment columns of the ledger for one step taken with velocity `v`
/// and plastic update `p_prev → p`.
fn step_increments(
    s: &Scenario,
    stepper: &Stepper<'_>,
    v: &DVector<f64>,
    plastic_override: Option<f64>,
    p: &[SymTensor<f64>],
    p_prev: &[SymTensor<f64>],
    work_f_rate: f64,
) -> Result<[f64; 6], DynamicsError> {
    let delta = s.delta;
    let mut plastic = 0.0;
    let mut visc_plastic = 0.0;
    for c in 0..s.mesh.n_cells() {
        let vol = s.mesh.cell_measure(c);
        let dp = p[c] - p_prev[c];
        if plastic_override.is_none() {
            plastic += vol * support_value(&s.constraint, &dp)?;
        }
        visc_plastic += vol * s.eps / delta * dp.dot(&dp);
    }
    let plastic = plastic_override.unwrap_or(plastic);
    let boundary = delta * v.dot(&(&stepper.ops.boundary * v));
    let visc_strain = s.eps * delta * v.dot(&(&stepper.ops.viscosity * v));
    let work_f = delta * work_f_rate;
    let work_g = delta * v.dot(stepper.g_load());
    Ok([plastic, boundary, visc_strain, visc_plastic, work_f, work_g])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_box_mesh;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_sym(dim: usize, rng: &mut ChaCha8Rng, scale: f64) -> SymTensor<f64> {
        let mut t = SymTensor::zero(dim);
        for i in 0..dim {
            for j in i..dim {
                t.set(i, j, rng.gen_range(-scale..scale));
            }
        }
        t
    }

    fn prox_objective(
        constraint: &StressConstraint<f64>,
        hooke: &Hooke<f64>,
        ev: &SymTensor<f64>,
        p_prev: &SymTensor<f64>,
        q: &SymTensor<f64>,
        eps: f64,
        delta: f64,
    ) -> f64 {
        let e = *ev - *q;
        let dp = *q - *p_prev;
        let h = match constraint.support(&dp).unwrap() {
            ExtReal::Finite(v) => v,
            ExtReal::PosInf => f64::INFINITY,
        };
        hooke.quadratic_form(&e) + h + 0.5 * eps / delta * dp.dot(&dp)
    }

    #[test]
    fn prox_elastic_step_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dim in [2usize, 3] {
            let hooke = Hooke::new(1.0, 1.0, dim).unwrap();
            let constraints = [
                StressConstraint::ball(10.0, dim).unwrap(),
                StressConstraint::von_mises(10.0, dim).unwrap(),
            ];
            for constraint in &constraints {
                let p_prev = rand_sym(dim, &mut rng, 0.2);
                let ev = p_prev + rand_sym(dim, &mut rng, 0.5);
                let (q, sigma) = plastic_prox(constraint, &hooke, &ev, &p_prev, 0.1, 0.01).unwrap();
                assert!((q - p_prev).norm() <= 1e-14);
                assert!((sigma - hooke.apply(&(ev - p_prev))).norm() <= 1e-14);
            }
        }
    }

    /// Nested-grid brute force over the three 2-d tensor components.
    fn brute_force_prox(
        constraint: &StressConstraint<f64>,
        hooke: &Hooke<f64>,
        ev: &SymTensor<f64>,
        p_prev: &SymTensor<f64>,
        eps: f64,
        delta: f64,
    ) -> SymTensor<f64> {
        let mut center = *p_prev;
        let mut radius: f64 = 2.0 * (*ev - *p_prev).norm().max(1.0);
        let mut best = center;
        for _round in 0..12 {
            let mut best_val = f64::INFINITY;
            let n = 10i32;
            for i in -n..=n {
                for j in -n..=n {
                    for k in -n..=n {
                        let mut q = center;
                        q.set(0, 0, center.get(0, 0) + radius * i as f64 / n as f64);
                        q.set(1, 1, center.get(1, 1) + radius * j as f64 / n as f64);
                        q.set(0, 1, center.get(0, 1) + radius * k as f64 / n as f64);
                        let val = prox_objective(constraint, hooke, ev, p_prev, &q, eps, delta);
                        if val < best_val {
                            best_val = val;
                            best = q;
                        }
                    }
                }
            }
            center = best;
            radius *= 0.25;
        }
        best
    }

    #[test]
    fn ball_return_matches_brute_force() {
        let dim = 2;
        let hooke = Hooke::new(1.2, 0.9, dim).unwrap();
        let constraint = StressConstraint::ball(0.5, dim).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..4 {
            let p_prev = rand_sym(dim, &mut rng, 0.1);
            let ev = rand_sym(dim, &mut rng, 1.0);
            let (q, _) = plastic_prox(&constraint, &hooke, &ev, &p_prev, 0.05, 0.01).unwrap();
            let q_bf = brute_force_prox(&constraint, &hooke, &ev, &p_prev, 0.05, 0.01);
            assert!((q - q_bf).norm() <= 1e-5, "return mapping disagrees with brute force");
        }
    }

    #[test]
    fn perzyna_identity_random_trials() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..100 {
            let dim = if trial % 2 == 0 { 2 } else { 3 };
            let hooke = Hooke::new(rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0), dim).unwrap();
            let constraint = if trial % 4 < 2 {
                StressConstraint::ball(rng.gen_range(0.2..1.0), dim).unwrap()
            } else {
                StressConstraint::von_mises(rng.gen_range(0.2..1.0), dim).unwrap()
            };
            let (eps, delta) = (rng.gen_range(0.01..0.5), rng.gen_range(0.001..0.1));
            let p_prev = rand_sym(dim, &mut rng, 0.3);
            let ev = rand_sym(dim, &mut rng, 2.0);
            let (q, sigma) = plastic_prox(&constraint, &hooke, &ev, &p_prev, eps, delta).unwrap();
            let dp = q - p_prev;
            let back = (sigma - constraint.project(&sigma).unwrap()).scale(delta / eps);
            let scale = sigma.norm().max(1.0);
            assert!((dp - back).norm() <= 1e-9 * scale);
        }
    }

    #[test]
    fn polyhedral_prox_matches_brute_force() {
        let dim = 2;
        let hooke = Hooke::new(1.0, 0.8, dim).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut halfspaces = Vec::new();
        for _ in 0..6 {
            let mut n = rand_sym(dim, &mut rng, 1.0);
            n = n.scale(1.0 / n.norm());
            halfspaces.push((n, rng.gen_range(0.3..0.8)));
        }
        let constraint = StressConstraint::polyhedral(halfspaces, dim).unwrap();
        for _ in 0..3 {
            let p_prev = rand_sym(dim, &mut rng, 0.1);
            let ev = rand_sym(dim, &mut rng, 1.5);
            let (q, _) = plastic_prox(&constraint, &hooke, &ev, &p_prev, 0.1, 0.02).unwrap();
            let at_q = prox_objective(&constraint, &hooke, &ev, &p_prev, &q, 0.1, 0.02);
            // convexity: no perturbation at any radius may beat the optimum
            for _ in 0..40 {
                let radius = 10f64.powf(rng.gen_range(-4.0..0.0));
                let step = rand_sym(dim, &mut rng, radius);
                let candidate = q + step;
                let at_c = prox_objective(&constraint, &hooke, &ev, &p_prev, &candidate, 0.1, 0.02);
                assert!(at_q <= at_c + 1e-8 * at_q.abs().max(1.0));
            }
        }
    }

    fn bump_velocity(mesh: &Mesh, amp: f64) -> DVector<f64> {
        // interior bump: zero on the boundary, so S v₀ + σ₀ν = 0 with σ₀ = 0
        fem::interpolate_nodal(mesh, |x| {
            let mut prof = amp;
            for &xi in x {
                prof *= (std::f64::consts::PI * xi).sin().powi(2);
            }
            let mut v = vec![0.0; mesh.dim];
            v[0] = prof;
            v
        })
    }

    fn elastic_scenario(dim: usize) -> Scenario {
        let mesh = if dim == 2 {
            generate_box_mesh(2, &[1.0, 1.0], &[4, 4]).unwrap()
        } else {
            generate_box_mesh(3, &[1.0, 1.0, 1.0], &[2, 2, 2]).unwrap()
        };
        let n = dim * mesh.n_vertices();
        let n_cells = mesh.n_cells();
        let v0 = bump_velocity(&mesh, 0.5);
        Scenario {
            mesh,
            hooke: Hooke::new(1.0, 1.0, dim).unwrap(),
            constraint: StressConstraint::ball(1e6, dim).unwrap(),
            law: BoundaryLaw::uniform(DMatrix::identity(dim, dim)).unwrap(),
            u0: DVector::zeros(n),
            v0,
            e0: vec![SymTensor::zero(dim); n_cells],
            p0: vec![SymTensor::zero(dim); n_cells],
            source: Arc::new(|x, _| vec![0.0; x.len()]),
            t_end: 0.1,
            delta: 0.01,
            eps: 0.05,
            tol_inner: 1e-10,
            max_sweeps: 500,
            boundary_datum_from_v0: true,
            cell_order: CellOrder::Forward,
        }
    }

    #[test]
    fn zero_data_gives_zero_trajectory() {
        let mut s = elastic_scenario(2);
        s.v0 = DVector::zeros(s.v0.len());
        s.boundary_datum_from_v0 = false;
        let traj = run(&s).unwrap();
        for i in 0..=traj.n_steps() {
            assert!(traj.u[i].amax() <= 1e-14);
            assert!(traj.v[i].amax() <= 1e-14);
            assert!(traj.p[i].iter().all(|p| p.norm() <= 1e-14));
        }
    }

    #[test]
    fn compatibility_report_for_bump() {
        let s = elastic_scenario(2);
        let rep = s.compatibility().unwrap();
        assert!(rep.strain_residual <= 1e-12);
        assert!(rep.boundary_residual <= 1e-12);
        assert!(rep.feasibility_margin >= 0.0);
    }

    #[test]
    fn huge_ball_reproduces_linear_viscoelastodynamics() {
        for dim in [2usize, 3] {
            let mut s = elastic_scenario(dim);
            s.t_end = 0.05;
            let traj = run(&s).unwrap();
            // independent implicit solve of the same discrete system with
            // the plastic strain frozen after the first step
            let stepper = Stepper::new(&s).unwrap();
            let ev0 = fem::strain(&s.mesh, &s.v0).unwrap();
            let p1: Vec<SymTensor<f64>> =
                (0..s.mesh.n_cells()).map(|c| s.p0[c] + ev0[c].scale(s.delta)).collect();
            let mut u = &s.u0 + s.delta * &s.v0;
            let mut v = s.v0.clone();
            let n_steps = (s.t_end / s.delta).ceil() as usize;
            for i in 2..=n_steps {
                let eu = fem::strain(&s.mesh, &u).unwrap();
                let elastic: Vec<SymTensor<f64>> = (0..s.mesh.n_cells())
                    .map(|c| s.hooke.apply(&(eu[c] - p1[c])))
                    .collect();
                let rhs = &stepper.ops.mass * &v / s.delta + stepper.g_load()
                    - fem::stress_load(&s.mesh, &elastic);
                let system = &stepper.ops.mass / s.delta
                    + s.delta * &stepper.ops.stiffness
                    + s.eps * &stepper.ops.viscosity
                    + &stepper.ops.boundary;
                v = Cholesky::new(system).unwrap().solve(&rhs);
                u += s.delta * &v;
                let scale = traj.v[i].amax().max(1.0);
                assert!((&traj.v[i] - &v).amax() <= 1e-10 * scale);
                assert!((&traj.u[i] - &u).amax() <= 1e-10 * scale);
                assert!(traj.p[i].iter().zip(&p1).all(|(a, b)| (*a - *b).norm() <= 1e-14));
            }
        }
    }

    #[test]
    fn energy_nonincreasing_without_forcing() {
        let mut s = elastic_scenario(2);
        s.boundary_datum_from_v0 = false;
        s.t_end = 0.1;
        for constraint in [
            StressConstraint::ball(1e6, 2).unwrap(),
            StressConstraint::von_mises(0.05, 2).unwrap(),
        ] {
            s.constraint = constraint;
            let traj = run(&s).unwrap();
            let e0 = traj.ledger[0].kinetic + traj.ledger[0].elastic;
            for w in traj.ledger.windows(2) {
                let before = w[0].kinetic + w[0].elastic;
                let after = w[1].kinetic + w[1].elastic;
                assert!(after <= before + 1e-10 * e0, "energy grew: {before} -> {after}");
            }
        }
    }

    #[test]
    fn plastifying_scenario_dissipates_plastically() {
        let mut s = elastic_scenario(2);
        s.boundary_datum_from_v0 = false;
        s.constraint = StressConstraint::von_mises(0.02, 2).unwrap();
        s.t_end = 0.1;
        let traj = run(&s).unwrap();
        let total_plastic: f64 = traj.ledger.iter().map(|r| r.plastic_increment).sum();
        assert!(total_plastic > 0.0, "scenario never plastified");
        for (i, stats) in traj.stats.iter().enumerate().skip(2) {
            assert!(stats.max_perzyna_residual <= 1e-8, "step {i}");
        }
    }

    #[test]
    fn sweeps_decrease_functional() {
        let mut s = elastic_scenario(2);
        s.constraint = StressConstraint::von_mises(0.02, 2).unwrap();
        let stepper = Stepper::new(&s).unwrap();
        let ev0 = fem::strain(&s.mesh, &s.v0).unwrap();
        let p1: Vec<SymTensor<f64>> =
            (0..s.mesh.n_cells()).map(|c| s.p0[c] + ev0[c].scale(s.delta)).collect();
        let u1 = &s.u0 + s.delta * &s.v0;
        let f_load = DVector::zeros(s.u0.len());
        let result = stepper.incremental_step(2, &u1, &s.v0, &p1, &f_load).unwrap();
        for w in result.sweep_values.windows(2) {
            assert!(w[1] <= w[0] + 1e-14, "functional increased across a sweep");
        }
    }

    #[test]
    fn velocity_system_is_spd() {
        let s = elastic_scenario(2);
        let stepper = Stepper::new(&s).unwrap();
        let system = &stepper.ops.mass / s.delta
            + s.delta * &stepper.ops.stiffness
            + s.eps * &stepper.ops.viscosity
            + &stepper.ops.boundary;
        let eigs = system.symmetric_eigen().eigenvalues;
        assert!(eigs.iter().all(|&l| l > 0.0), "velocity system not positive definite");
    }

    #[test]
    fn reversed_cell_order_agrees() {
        let mut s = elastic_scenario(2);
        s.constraint = StressConstraint::von_mises(0.02, 2).unwrap();
        let forward = run(&s).unwrap();
        s.cell_order = CellOrder::Reverse;
        let reverse = run(&s).unwrap();
        let n = forward.n_steps();
        let scale = forward.u[n].amax().max(1.0);
        assert!((&forward.u[n] - &reverse.u[n]).amax() <= 1e-6 * scale);
        assert!((&forward.v[n] - &reverse.v[n]).amax() <= 1e-6 * scale);
        for (a, b) in forward.p[n].iter().zip(&reverse.p[n]) {
            assert!((*a - *b).norm() <= 1e-6 * scale);
        }
    }
}
