//! Lowest-order conforming spatial discretization: P1 nodal displacements
//! with cellwise-constant strain, stress and plastic fields, consistent
//! mass, and boundary operators assembled by exact facet quadrature.
//!
//! Degrees of freedom are interleaved: the dof of vertex `i`, component
//! `a` is `i * dim + a`.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3};
use thiserror::Error;

use crate::convex::BoundaryLaw;
use crate::mesh::Mesh;
use crate::tensor::{Hooke, SymTensor};

#[derive(Debug, Error)]
pub enum FemError {
    #[error("nodal field has length {got}, expected {expected}")]
    SizeMismatch { got: usize, expected: usize },
    #[error("boundary law covers {got} facets but the mesh has {expected}")]
    MissingBoundaryLaw { got: usize, expected: usize },
    #[error("boundary law dimension {got} does not match mesh dimension {expected}")]
    DimMismatch { got: usize, expected: usize },
}

/// Nodal displacement/velocity vectors plus the cellwise-constant elastic,
/// plastic and stress fields they are coupled to.
#[derive(Clone, Debug)]
pub struct FieldLayout {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub e: Vec<SymTensor<f64>>,
    pub p: Vec<SymTensor<f64>>,
    pub sigma: Vec<SymTensor<f64>>,
}

impl FieldLayout {
    pub fn zeros(mesh: &Mesh) -> Self {
        let n = mesh.dim * mesh.n_vertices();
        let zero_cells = vec![SymTensor::zero(mesh.dim); mesh.n_cells()];
        FieldLayout {
            u: DVector::zeros(n),
            v: DVector::zeros(n),
            e: zero_cells.clone(),
            p: zero_cells.clone(),
            sigma: zero_cells,
        }
    }
}

/// Gradients of the barycentric basis functions on one cell, one row per
/// local vertex.
pub fn basis_gradients(mesh: &Mesh, c: usize) -> Vec<Vec<f64>> {
    let cell = &mesh.cells[c];
    let x0 = mesh.vertex(cell[0]);
    let dim = mesh.dim;
    // rows of the inverse edge matrix are the gradients of λ_1..λ_d
    let inv: Vec<Vec<f64>> = if dim == 2 {
        let e1 = mesh.vertex(cell[1]);
        let e2 = mesh.vertex(cell[2]);
        let j = Matrix2::new(e1[0] - x0[0], e2[0] - x0[0], e1[1] - x0[1], e2[1] - x0[1]);
        let inv = j.try_inverse().expect("degenerate cell");
        (0..2).map(|k| vec![inv[(k, 0)], inv[(k, 1)]]).collect()
    } else {
        let e = [mesh.vertex(cell[1]), mesh.vertex(cell[2]), mesh.vertex(cell[3])];
        let j = Matrix3::from_fn(|r, col| e[col][r] - x0[r]);
        let inv = j.try_inverse().expect("degenerate cell");
        (0..3).map(|k| vec![inv[(k, 0)], inv[(k, 1)], inv[(k, 2)]]).collect()
    };
    let mut grads = vec![vec![0.0; dim]; dim + 1];
    for k in 0..dim {
        for a in 0..dim {
            grads[k + 1][a] = inv[k][a];
            grads[0][a] -= inv[k][a];
        }
    }
    grads
}

/// Symmetrized outer product of the `a`-th coordinate direction with a
/// gradient: the strain of the scalar basis function times e_a.
fn basis_strain(dim: usize, a: usize, grad: &[f64]) -> SymTensor<f64> {
    let mut eps = SymTensor::zero(dim);
    for k in 0..dim {
        let val = if k == a { grad[k] } else { 0.5 * grad[k] };
        if k == a {
            eps.set(a, a, val);
        } else {
            eps.set(a, k, val);
        }
    }
    eps
}

/// Exact symmetric gradient of the P1 interpolant, constant per cell.
pub fn strain(mesh: &Mesh, u: &DVector<f64>) -> Result<Vec<SymTensor<f64>>, FemError> {
    let dim = mesh.dim;
    let expected = dim * mesh.n_vertices();
    if u.len() != expected {
        return Err(FemError::SizeMismatch { got: u.len(), expected });
    }
    let mut out = Vec::with_capacity(mesh.n_cells());
    for c in 0..mesh.n_cells() {
        let grads = basis_gradients(mesh, c);
        let mut eps = SymTensor::zero(dim);
        for (i, &v) in mesh.cells[c].iter().enumerate() {
            for a in 0..dim {
                let ua = u[v * dim + a];
                for k in 0..dim {
                    let contrib = 0.5 * ua * grads[i][k];
                    if k == a {
                        eps.set(a, a, eps.get(a, a) + 2.0 * contrib);
                    } else {
                        eps.set(a, k, eps.get(a, k) + contrib);
                    }
                }
            }
        }
        out.push(eps);
    }
    Ok(out)
}

/// Assembled spatial operators: all dense (the intended problem sizes are
/// a few hundred cells) and symmetric.
#[derive(Clone, Debug)]
pub struct Operators {
    pub dim: usize,
    pub n_dofs: usize,
    /// Consistent vector P1 mass matrix.
    pub mass: DMatrix<f64>,
    /// v ↦ ∫ A Ev : Ew.
    pub stiffness: DMatrix<f64>,
    /// v ↦ ∫ Ev : Ew.
    pub viscosity: DMatrix<f64>,
    /// v ↦ ∫_∂Ω S v · w.
    pub boundary: DMatrix<f64>,
}

/// Assembles mass, stiffness, viscosity and boundary operators for one
/// mesh, elasticity tensor and boundary law.
pub fn assemble(mesh: &Mesh, hooke: &Hooke<f64>, law: &BoundaryLaw<f64>) -> Result<Operators, FemError> {
    let dim = mesh.dim;
    if law.dim() != dim {
        return Err(FemError::DimMismatch { got: law.dim(), expected: dim });
    }
    if let Some(n) = law.n_facets() {
        if n != mesh.facets.len() {
            return Err(FemError::MissingBoundaryLaw { got: n, expected: mesh.facets.len() });
        }
    }
    let n_dofs = dim * mesh.n_vertices();
    let mut mass = DMatrix::zeros(n_dofs, n_dofs);
    let mut stiffness = DMatrix::zeros(n_dofs, n_dofs);
    let mut viscosity = DMatrix::zeros(n_dofs, n_dofs);
    let mut boundary = DMatrix::zeros(n_dofs, n_dofs);

    for c in 0..mesh.n_cells() {
        let vol = mesh.cell_measure(c);
        let cell = &mesh.cells[c];
        let grads = basis_gradients(mesh, c);
        // ∫ φ_i φ_j over a d-simplex = vol (1 + δ_ij) / ((d+1)(d+2))
        let mass_scale = vol / ((dim + 1) * (dim + 2)) as f64;
        let strains: Vec<Vec<SymTensor<f64>>> = (0..cell.len())
            .map(|i| (0..dim).map(|a| basis_strain(dim, a, &grads[i])).collect())
            .collect();
        for (i, &vi) in cell.iter().enumerate() {
            for (j, &vj) in cell.iter().enumerate() {
                let m = mass_scale * if i == j { 2.0 } else { 1.0 };
                for a in 0..dim {
                    mass[(vi * dim + a, vj * dim + a)] += m;
                    for b in 0..dim {
                        let (r, s) = (vi * dim + a, vj * dim + b);
                        stiffness[(r, s)] += vol * hooke.bilinear(&strains[i][a], &strains[j][b]);
                        viscosity[(r, s)] += vol * strains[i][a].dot(&strains[j][b]);
                    }
                }
            }
        }
    }

    for (fi, facet) in mesh.facets.iter().enumerate() {
        let s = law.s_at(fi);
        let k = facet.vertices.len();
        // ∫ φ_i φ_j over a (d−1)-simplex facet = measure (1 + δ_ij) / (k(k+1))
        let scale = facet.measure / (k * (k + 1)) as f64;
        for (i, &vi) in facet.vertices.iter().enumerate() {
            for (j, &vj) in facet.vertices.iter().enumerate() {
                let m = scale * if i == j { 2.0 } else { 1.0 };
                for a in 0..dim {
                    for b in 0..dim {
                        boundary[(vi * dim + a, vj * dim + b)] += m * s[(a, b)];
                    }
                }
            }
        }
    }

    Ok(Operators { dim, n_dofs, mass, stiffness, viscosity, boundary })
}

impl Operators {
    /// Load vector of a nodal (P1-interpolated) volume force: w ↦ ∫ f · w.
    pub fn load(&self, f_nodal: &DVector<f64>) -> DVector<f64> {
        &self.mass * f_nodal
    }
}

/// Samples a function of position into the interleaved nodal layout.
pub fn interpolate_nodal(mesh: &Mesh, f: impl Fn(&[f64]) -> Vec<f64>) -> DVector<f64> {
    let dim = mesh.dim;
    let mut out = DVector::zeros(dim * mesh.n_vertices());
    for i in 0..mesh.n_vertices() {
        let val = f(mesh.vertex(i));
        for a in 0..dim {
            out[i * dim + a] = val[a];
        }
    }
    out
}

/// Load vector of per-facet constant boundary data: w ↦ ∫_∂Ω g · w.
pub fn boundary_load(mesh: &Mesh, g_per_facet: &[Vec<f64>]) -> Result<DVector<f64>, FemError> {
    let dim = mesh.dim;
    if g_per_facet.len() != mesh.facets.len() {
        return Err(FemError::MissingBoundaryLaw {
            got: g_per_facet.len(),
            expected: mesh.facets.len(),
        });
    }
    let mut out = DVector::zeros(dim * mesh.n_vertices());
    for (facet, g) in mesh.facets.iter().zip(g_per_facet) {
        // ∫ φ_i over the facet = measure / #facet vertices
        let w = facet.measure / facet.vertices.len() as f64;
        for &v in &facet.vertices {
            for a in 0..dim {
                out[v * dim + a] += w * g[a];
            }
        }
    }
    Ok(out)
}

/// Per-facet boundary datum g_ε = ε Ev₀ ν, with Ev₀ taken from the P1
/// interpolant on the cell adjacent to each facet.
pub fn dissipative_boundary_datum(
    mesh: &Mesh,
    v0: &DVector<f64>,
    eps: f64,
) -> Result<Vec<Vec<f64>>, FemError> {
    let strains = strain(mesh, v0)?;
    Ok(mesh
        .facets
        .iter()
        .map(|f| {
            strains[f.cell]
                .apply_vec(&f.normal)
                .iter()
                .map(|x| eps * x)
                .collect()
        })
        .collect())
}

/// Work pairing of a cellwise-constant stress field against P1 strains:
/// w ↦ Σ_c vol_c τ_c : Ew_c. Used for plastic coupling and stress loads.
pub fn stress_load(mesh: &Mesh, tau: &[SymTensor<f64>]) -> DVector<f64> {
    let dim = mesh.dim;
    let mut out = DVector::zeros(dim * mesh.n_vertices());
    for c in 0..mesh.n_cells() {
        let vol = mesh.cell_measure(c);
        let grads = basis_gradients(mesh, c);
        for (i, &vi) in mesh.cells[c].iter().enumerate() {
            for a in 0..dim {
                let eps = basis_strain(dim, a, &grads[i]);
                out[vi * dim + a] += vol * tau[c].dot(&eps);
            }
        }
    }
    out
}
