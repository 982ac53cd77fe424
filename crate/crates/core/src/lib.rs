//! Dynamic small-strain perfect plasticity with dissipative boundary
//! conditions: constitutive algebra, the first-order symmetric boundary
//! reformulation, a P1 finite-element time stepper, and a posteriori
//! audits of the computed trajectories.

pub mod audit;
pub mod config;
pub mod convex;
pub mod dynamics;
pub mod expr;
pub mod fem;
pub mod friedrichs;
pub mod mesh;
pub mod tensor;
pub mod trajectory;

/// Double-precision aliases for the generic core types.
pub type SymTensor = tensor::SymTensor<f64>;
pub type Hooke = tensor::Hooke<f64>;
pub type PackedState = tensor::PackedState<f64>;
pub type StressConstraint = convex::StressConstraint<f64>;
pub type BoundaryLaw = convex::BoundaryLaw<f64>;
