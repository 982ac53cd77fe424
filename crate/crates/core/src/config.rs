//! Scenario configuration: a TOML schema with inline expression strings
//! for initial data and the volume source, resolved into a runnable
//! [`Scenario`], plus validation of the standing hypotheses with named
//! residuals.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convex::{BoundaryLaw, ConvexError, StressConstraint};
use crate::dynamics::{CellOrder, Scenario};
use crate::expr::{self, Expr, ExprError};
use crate::fem;
use crate::mesh::{self, Mesh, MeshError};
use crate::tensor::{Hooke, SymTensor, TensorError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("bad expression '{src}': {err}")]
    Expr { src: String, err: ExprError },
    #[error("invalid field {field}: {reason}")]
    BadField { field: String, reason: String },
    #[error("hypothesis {hypothesis} violated: {residual} = {value:.3e} exceeds {limit:.1e}")]
    Hypothesis { hypothesis: &'static str, residual: String, value: f64, limit: f64 },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Convex(#[from] ConvexError),
}

fn default_tol_inner() -> f64 {
    1e-10
}
fn default_max_sweeps() -> usize {
    500
}
fn default_true() -> bool {
    true
}
fn default_cell_order() -> String {
    "forward".into()
}
fn zero_expr() -> Vec<String> {
    Vec::new()
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct MeshSection {
    pub dim: usize,
    #[serde(default)]
    pub lengths: Vec<f64>,
    #[serde(default)]
    pub subdivisions: Vec<usize>,
    /// Alternative to the box generator: a mesh file in the text format.
    #[serde(default)]
    pub file: Option<String>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct MaterialSection {
    pub lambda: f64,
    pub mu: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct HalfspaceSection {
    pub normal: Vec<f64>,
    pub offset: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct ConstraintSection {
    pub kind: String,
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default)]
    pub k: Option<f64>,
    #[serde(default)]
    pub halfspaces: Vec<HalfspaceSection>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct BoundarySection {
    /// Row-major boundary matrix S, applied uniformly on all facets.
    pub s: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct InitialSection {
    #[serde(default = "zero_expr")]
    pub u: Vec<String>,
    #[serde(default = "zero_expr")]
    pub v: Vec<String>,
    /// Tensor component expressions in storage order (11, 22, 12 in 2-d;
    /// 11, 22, 33, 12, 13, 23 in 3-d), evaluated at cell centroids.
    #[serde(default = "zero_expr")]
    pub e: Vec<String>,
    #[serde(default = "zero_expr")]
    pub p: Vec<String>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct SourceSection {
    #[serde(default = "zero_expr")]
    pub f: Vec<String>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct TimeSection {
    pub t_end: f64,
    pub delta: f64,
    pub eps: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct SolverSection {
    #[serde(default = "default_tol_inner")]
    pub tol_inner: f64,
    #[serde(default = "default_max_sweeps")]
    pub max_sweeps: usize,
    #[serde(default = "default_true")]
    pub boundary_datum_from_v0: bool,
    #[serde(default = "default_cell_order")]
    pub cell_order: String,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            tol_inner: default_tol_inner(),
            max_sweeps: default_max_sweeps(),
            boundary_datum_from_v0: true,
            cell_order: default_cell_order(),
        }
    }
}

/// The on-disk scenario schema.
#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct ScenarioConfig {
    pub mesh: MeshSection,
    pub material: MaterialSection,
    pub constraint: ConstraintSection,
    pub boundary: BoundarySection,
    #[serde(default = "InitialSection::default_empty")]
    pub initial: InitialSection,
    #[serde(default = "SourceSection::default_empty")]
    pub source: SourceSection,
    pub time: TimeSection,
    #[serde(default)]
    pub solver: SolverSection,
}

impl InitialSection {
    fn default_empty() -> Self {
        InitialSection { u: Vec::new(), v: Vec::new(), e: Vec::new(), p: Vec::new() }
    }
}

impl SourceSection {
    fn default_empty() -> Self {
        SourceSection { f: Vec::new() }
    }
}

fn parse_exprs(field: &str, sources: &[String], arity: usize) -> Result<Vec<Expr>, ConfigError> {
    if sources.is_empty() {
        return Ok(vec![Expr::Num(0.0); arity]);
    }
    if sources.len() != arity {
        return Err(ConfigError::BadField {
            field: field.into(),
            reason: format!("expected {arity} component expressions, got {}", sources.len()),
        });
    }
    sources
        .iter()
        .map(|s| expr::parse(s).map_err(|err| ConfigError::Expr { src: s.clone(), err }))
        .collect()
}

fn nodal_from_exprs(mesh: &Mesh, exprs: &[Expr]) -> DVector<f64> {
    fem::interpolate_nodal(mesh, |x| exprs.iter().map(|e| e.eval(x, 0.0)).collect())
}

fn cellwise_from_exprs(mesh: &Mesh, exprs: &[Expr]) -> Vec<SymTensor<f64>> {
    let dim = mesh.dim;
    (0..mesh.n_cells())
        .map(|c| {
            let x = mesh.cell_centroid(c);
            let vals: Vec<f64> = exprs.iter().map(|e| e.eval(&x, 0.0)).collect();
            let mut t = SymTensor::zero(dim);
            let pairs: &[(usize, usize)] = if dim == 2 {
                &[(0, 0), (1, 1), (0, 1)]
            } else {
                &[(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)]
            };
            for (k, &(i, j)) in pairs.iter().enumerate() {
                t.set(i, j, vals[k]);
            }
            t
        })
        .collect()
}

impl ScenarioConfig {
    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_str(&std::fs::read_to_string(path)?)
    }

    fn build_mesh(&self, base_dir: Option<&Path>) -> Result<Mesh, ConfigError> {
        if let Some(file) = &self.mesh.file {
            let path = match base_dir {
                Some(dir) => dir.join(file),
                None => Path::new(file).to_path_buf(),
            };
            return Ok(mesh::read_text(&std::fs::read_to_string(path)?)?);
        }
        Ok(mesh::generate_box_mesh(self.mesh.dim, &self.mesh.lengths, &self.mesh.subdivisions)?)
    }

    fn build_constraint(&self) -> Result<StressConstraint<f64>, ConfigError> {
        let dim = self.mesh.dim;
        match self.constraint.kind.as_str() {
            "ball" => {
                let r = self.constraint.radius.ok_or_else(|| ConfigError::BadField {
                    field: "constraint.radius".into(),
                    reason: "required for kind = \"ball\"".into(),
                })?;
                Ok(StressConstraint::ball(r, dim)?)
            }
            "von_mises" => {
                let k = self.constraint.k.ok_or_else(|| ConfigError::BadField {
                    field: "constraint.k".into(),
                    reason: "required for kind = \"von_mises\"".into(),
                })?;
                Ok(StressConstraint::von_mises(k, dim)?)
            }
            "polyhedral" => {
                let n_comps = if dim == 2 { 3 } else { 6 };
                let mut halfspaces = Vec::new();
                for h in &self.constraint.halfspaces {
                    if h.normal.len() != n_comps {
                        return Err(ConfigError::BadField {
                            field: "constraint.halfspaces".into(),
                            reason: format!("normals need {n_comps} components"),
                        });
                    }
                    let mut n = SymTensor::zero(dim);
                    let pairs: &[(usize, usize)] = if dim == 2 {
                        &[(0, 0), (1, 1), (0, 1)]
                    } else {
                        &[(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)]
                    };
                    for (k, &(i, j)) in pairs.iter().enumerate() {
                        n.set(i, j, h.normal[k]);
                    }
                    halfspaces.push((n, h.offset));
                }
                Ok(StressConstraint::polyhedral(halfspaces, dim)?)
            }
            other => Err(ConfigError::BadField {
                field: "constraint.kind".into(),
                reason: format!("unknown kind '{other}'"),
            }),
        }
    }

    /// Resolves the config into a runnable scenario. `base_dir` anchors
    /// relative mesh-file paths.
    pub fn to_scenario(&self, base_dir: Option<&Path>) -> Result<Scenario, ConfigError> {
        let dim = self.mesh.dim;
        // hypothesis H2: elastic moduli make the Hooke tensor elliptic
        if self.material.mu <= 0.0 || dim as f64 * self.material.lambda + 2.0 * self.material.mu <= 0.0
        {
            return Err(ConfigError::Hypothesis {
                hypothesis: "H2",
                residual: format!(
                    "ellipticity of the elastic moduli (mu = {}, lambda = {})",
                    self.material.mu, self.material.lambda
                ),
                value: self.material.mu.min(dim as f64 * self.material.lambda + 2.0 * self.material.mu),
                limit: 0.0,
            });
        }
        let mesh = self.build_mesh(base_dir)?;
        let hooke = Hooke::new(self.material.lambda, self.material.mu, dim)?;
        let constraint = self.build_constraint()?;
        if self.boundary.s.len() != dim || self.boundary.s.iter().any(|r| r.len() != dim) {
            return Err(ConfigError::BadField {
                field: "boundary.s".into(),
                reason: format!("expected a {dim}x{dim} matrix"),
            });
        }
        let s = DMatrix::from_fn(dim, dim, |i, j| self.boundary.s[i][j]);
        let law = BoundaryLaw::uniform(s)?;

        let u0 = nodal_from_exprs(&mesh, &parse_exprs("initial.u", &self.initial.u, dim)?);
        let v0 = nodal_from_exprs(&mesh, &parse_exprs("initial.v", &self.initial.v, dim)?);
        let n_comps = if dim == 2 { 3 } else { 6 };
        let e0 = cellwise_from_exprs(&mesh, &parse_exprs("initial.e", &self.initial.e, n_comps)?);
        let p0 = cellwise_from_exprs(&mesh, &parse_exprs("initial.p", &self.initial.p, n_comps)?);
        let f_exprs = parse_exprs("source.f", &self.source.f, dim)?;
        let source: crate::dynamics::Source =
            Arc::new(move |x: &[f64], t: f64| f_exprs.iter().map(|e| e.eval(x, t)).collect());

        let cell_order = match self.solver.cell_order.as_str() {
            "forward" => CellOrder::Forward,
            "reverse" => CellOrder::Reverse,
            other => {
                return Err(ConfigError::BadField {
                    field: "solver.cell_order".into(),
                    reason: format!("expected \"forward\" or \"reverse\", got '{other}'"),
                })
            }
        };

        let scenario = Scenario {
            mesh,
            hooke,
            constraint,
            law,
            u0,
            v0,
            e0,
            p0,
            source,
            t_end: self.time.t_end,
            delta: self.time.delta,
            eps: self.time.eps,
            tol_inner: self.solver.tol_inner,
            max_sweeps: self.solver.max_sweeps,
            boundary_datum_from_v0: self.solver.boundary_datum_from_v0,
            cell_order,
        };
        validate(&scenario)?;
        Ok(scenario)
    }
}

/// Checks the time-discretization parameters and the initial-data
/// compatibility hypothesis H6, with each failed residual named.
pub fn validate(s: &Scenario) -> Result<(), ConfigError> {
    if s.delta <= 0.0 {
        return Err(ConfigError::BadField {
            field: "time.delta".into(),
            reason: "must be positive".into(),
        });
    }
    if s.eps <= 0.0 {
        return Err(ConfigError::BadField {
            field: "time.eps".into(),
            reason: "must be positive".into(),
        });
    }
    if s.t_end < s.delta {
        return Err(ConfigError::BadField {
            field: "time.t_end".into(),
            reason: "must be at least one time step".into(),
        });
    }
    let report = s.compatibility().map_err(|e| ConfigError::BadField {
        field: "initial".into(),
        reason: e.to_string(),
    })?;
    if report.strain_residual > 1e-10 {
        return Err(ConfigError::Hypothesis {
            hypothesis: "H6",
            residual: "additive decomposition Eu0 = e0 + p0".into(),
            value: report.strain_residual,
            limit: 1e-10,
        });
    }
    if report.feasibility_margin < 0.0 {
        return Err(ConfigError::Hypothesis {
            hypothesis: "H6",
            residual: "initial stress feasibility sigma0 in K".into(),
            value: -report.feasibility_margin,
            limit: 0.0,
        });
    }
    if report.boundary_residual > 1e-8 {
        return Err(ConfigError::Hypothesis {
            hypothesis: "H6",
            residual: "boundary compatibility S v0 + sigma0 nu = 0".into(),
            value: report.boundary_residual,
            limit: 1e-8,
        });
    }
    Ok(())
}
