//! Branch-and-bound MILP solver over LP relaxations.
//!
//! Relaxations are solved with the `microlp` sparse simplex. Children are
//! warm-started from their parent's optimal basis by fixing the branching
//! binary and re-optimising. The search itself (node selection, branching,
//! incumbent handling, gap accounting) lives here and is deterministic for a
//! fixed configuration when no time limit interrupts it.

mod bnb;
mod lp;
mod presolve;

pub use bnb::solve;
pub use lp::{lp_relax, LpOutcome};

use std::fmt;
use std::time::Duration;

use thiserror::Error;

use crate::milp::{Assignment, MilpModel, FEASIBILITY_TOL, INTEGRALITY_TOL};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid model: {0}")]
    Model(#[from] crate::milp::MilpError),
    #[error("variable `{0}` has an infinite bound; enable allow_unbounded_vars to accept it")]
    InfiniteBound(String),
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("LP engine failure: {0}")]
    Lp(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Branching {
    /// Binary closest to 1/2; ties go to the lowest variable id.
    #[default]
    MostFractional,
    /// Product of average per-unit objective degradation, most-fractional
    /// until a variable has history in both directions.
    Pseudocost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NodeOrder {
    /// Depth-first until the first incumbent, then best bound.
    #[default]
    BestBound,
    DepthFirst,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub time_limit: Option<Duration>,
    pub node_limit: Option<usize>,
    pub abs_gap: f64,
    pub rel_gap: f64,
    pub feasibility_tol: f64,
    pub integrality_tol: f64,
    pub branching: Branching,
    pub node_order: NodeOrder,
    /// Explore every node regardless of its bound (for testing pruning).
    pub disable_pruning: bool,
    /// Accept variables with infinite bounds, making UNBOUNDED reachable.
    pub allow_unbounded_vars: bool,
    /// Round the root relaxation and every this many nodes to seek incumbents.
    pub heuristic_frequency: usize,
    /// Tighten bounds by propagating the rows and drop fixed columns before
    /// the root relaxation.
    pub presolve: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            time_limit: None,
            node_limit: None,
            abs_gap: 1e-9,
            rel_gap: 1e-6,
            feasibility_tol: FEASIBILITY_TOL,
            integrality_tol: INTEGRALITY_TOL,
            branching: Branching::default(),
            node_order: NodeOrder::default(),
            disable_pruning: false,
            allow_unbounded_vars: false,
            heuristic_frequency: 50,
            presolve: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let tols = [
            ("abs_gap", self.abs_gap),
            ("rel_gap", self.rel_gap),
            ("feasibility_tol", self.feasibility_tol),
            ("integrality_tol", self.integrality_tol),
        ];
        for (name, v) in tols {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SolverError::Config(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.integrality_tol >= 0.5 {
            return Err(SolverError::Config(
                "integrality_tol must be below 0.5".into(),
            ));
        }
        if self.node_limit == Some(0) {
            return Err(SolverError::Config("node_limit must be positive".into()));
        }
        if self.time_limit == Some(Duration::ZERO) {
            return Err(SolverError::Config("time_limit must be positive".into()));
        }
        Ok(())
    }

    /// Pruning tolerance around an incumbent value.
    pub fn prune_tolerance(&self, incumbent: f64) -> f64 {
        self.abs_gap.max(self.rel_gap * incumbent.abs().max(1.0))
    }

    /// Distance above the incumbent used by the optimality certificate. It
    /// exceeds the pruning tolerance and the LP feasibility tolerance, so any
    /// assignment the search could have skipped is excluded.
    pub fn certificate_margin(&self, incumbent: f64) -> f64 {
        2.0 * self.prune_tolerance(incumbent).max(self.feasibility_tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    /// A limit stopped the search with an incumbent in hand.
    FeasibleLimit,
    Infeasible,
    Unbounded,
    /// A limit stopped the search before any incumbent was found.
    LimitNoSolution,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "OPTIMAL",
            SolveStatus::FeasibleLimit => "FEASIBLE_LIMIT",
            SolveStatus::Infeasible => "INFEASIBLE",
            SolveStatus::Unbounded => "UNBOUNDED",
            SolveStatus::LimitNoSolution => "LIMIT_NO_SOLUTION",
        })
    }
}

/// An improving incumbent as found during the search.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub assignment: Assignment,
    /// Nodes processed when the incumbent was found.
    pub node: usize,
    pub elapsed: Duration,
    /// Best bound at the moment of discovery, in the model's sense.
    pub best_bound: f64,
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub incumbent: Option<Assignment>,
    /// Proven bound on the optimum in the model's sense (upper bound when
    /// maximising). Infinite when nothing is known.
    pub best_bound: f64,
    pub gap: f64,
    pub incumbent_pool: Vec<PoolEntry>,
    pub node_count: usize,
    pub lp_count: usize,
    pub elapsed: Duration,
}

impl SolveResult {
    pub fn objective(&self) -> Option<f64> {
        self.incumbent.as_ref().map(|a| a.objective_value)
    }
}

/// Relative gap `|bound - incumbent| / max(1, |incumbent|)`.
pub fn relative_gap(bound: f64, incumbent: f64) -> f64 {
    if !bound.is_finite() || !incumbent.is_finite() {
        return f64::INFINITY;
    }
    (bound - incumbent).abs() / incumbent.abs().max(1.0)
}

/// Outcome of re-solving with the objective cut off just above the incumbent.
#[derive(Debug, Clone)]
pub struct Certificate {
    pub cutoff: f64,
    pub status: SolveStatus,
    pub node_count: usize,
}

impl Certificate {
    pub fn holds(&self) -> bool {
        self.status == SolveStatus::Infeasible
    }
}

/// Re-solves `model` with the constraint `objective >= incumbent + margin`
/// (maximisation) which must be infeasible when `result` is optimal.
pub fn certify(
    model: &MilpModel,
    result: &SolveResult,
    cfg: &SolverConfig,
) -> Result<Certificate, SolverError> {
    let inc = result
        .objective()
        .ok_or_else(|| SolverError::Config("no incumbent to certify".into()))?;
    let dir = lp::direction(model);
    let cutoff = inc + dir * cfg.certificate_margin(inc);
    let cut = model.with_objective_cutoff(cutoff)?;
    let check = solve(&cut, cfg)?;
    Ok(Certificate {
        cutoff,
        status: check.status,
        node_count: check.node_count,
    })
}
