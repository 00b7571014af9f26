//! Mixed-integer linear encodings of trained ReLU graph neural networks.
//!
//! The crate turns a trained GCN or GraphSAGE network (followed by sum
//! pooling and a dense head) into a [`milp::MilpModel`], attaches molecular
//! feasibility constraints, tightens big-M coefficients by interval
//! propagation and solves the result with an embedded branch-and-bound
//! solver. A brute-force enumerator and a genetic algorithm are provided as
//! independent references.

pub mod encode;
pub mod fbbt;
pub mod ga;
pub mod milp;
pub mod model;
pub mod molecule;
pub mod solver;
pub mod verify;

pub use encode::{EncodeConfig, EncodeError, Encoding, GraphMode};
pub use fbbt::{BoundsTable, FixedActivations};
pub use milp::{Assignment, MilpModel, VarId};
pub use model::{GnnModel, GraphInput, Layer, ModelError};
pub use molecule::{Molecule, MoleculeSpace};
pub use solver::{SolveResult, SolveStatus, SolverConfig};
