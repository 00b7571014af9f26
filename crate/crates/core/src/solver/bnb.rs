use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::rc::Rc;
use std::time::Instant;

use microlp::{Solution, Variable};

use crate::milp::{Assignment, MilpModel, VarId};

use super::lp::direction;
use super::presolve::{propagate, reduce};
use super::{
    relative_gap, Branching, NodeOrder, PoolEntry, SolveResult, SolveStatus, SolverConfig,
    SolverError,
};

/// Open node: the parent's solved relaxation plus one binary to fix.
struct Node {
    /// Parent relaxation value (internal maximisation sense).
    bound: f64,
    depth: usize,
    id: usize,
    parent: Rc<Solution>,
    var: usize,
    value: f64,
    /// Fractional part of the branching variable at the parent.
    frac: f64,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // max-heap on bound, older nodes first among equal bounds
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then_with(|| other.id.cmp(&self.id))
    }
}

#[derive(Default, Clone, Copy)]
struct Pseudo {
    down_sum: f64,
    down_n: usize,
    up_sum: f64,
    up_n: usize,
}

struct Search<'a> {
    model: &'a MilpModel,
    cfg: &'a SolverConfig,
    dir: f64,
    constant: f64,
    start: Instant,
    /// LP column per model variable; `None` for columns fixed by presolve.
    cols: Vec<Option<Variable>>,
    fixed: Vec<f64>,
    binaries: Vec<usize>,
    heap: BinaryHeap<Node>,
    dive: Vec<Node>,
    next_id: usize,
    node_count: usize,
    lp_count: usize,
    incumbent: Option<Assignment>,
    /// Incumbent objective in the internal maximisation sense.
    inc_value: f64,
    pool: Vec<PoolEntry>,
    pruned_max: f64,
    pseudo: Vec<Pseudo>,
}

fn take(rc: Rc<Solution>) -> Solution {
    Rc::try_unwrap(rc).unwrap_or_else(|rc| (*rc).clone())
}

impl<'a> Search<'a> {
    fn col(&self, k: usize) -> Variable {
        self.cols[k].expect("branching on a fixed column")
    }

    fn prune_cutoff(&self) -> Option<f64> {
        if self.cfg.disable_pruning || self.incumbent.is_none() {
            return None;
        }
        Some(self.inc_value + self.cfg.prune_tolerance(self.inc_value))
    }

    fn frontier_bound(&self, current: f64) -> f64 {
        let mut b = current.max(self.pruned_max);
        if let Some(n) = self.heap.peek() {
            b = b.max(n.bound);
        }
        for n in &self.dive {
            b = b.max(n.bound);
        }
        b
    }

    fn values(&self, sol: &Solution) -> Vec<f64> {
        self.cols
            .iter()
            .zip(&self.fixed)
            .map(|(c, &f)| c.map_or(f, |v| sol.var_value_raw(v)))
            .collect()
    }

    /// Fractional binaries of the highest branching priority present.
    fn fractional(&self, values: &[f64]) -> Vec<(usize, f64)> {
        let all: Vec<(usize, f64)> = self
            .binaries
            .iter()
            .filter_map(|&k| {
                let f = values[k] - values[k].floor();
                (f.min(1.0 - f) > self.cfg.integrality_tol).then_some((k, f))
            })
            .collect();
        let Some(top) = all
            .iter()
            .map(|&(k, _)| self.model.branch_priority(VarId(k)))
            .max()
        else {
            return all;
        };
        all.into_iter()
            .filter(|&(k, _)| self.model.branch_priority(VarId(k)) == top)
            .collect()
    }

    /// Offers the relaxation values as an incumbent. With `polish`, every
    /// binary is first fixed at its rounded value and the LP re-optimised
    /// from `sol`; the raw values are the fallback.
    fn try_incumbent(&mut self, sol: &Solution, values: &[f64], current_bound: f64, polish: bool) {
        let rounded: Vec<(usize, f64)> = self
            .binaries
            .iter()
            .map(|&k| (k, values[k].round().clamp(0.0, 1.0)))
            .collect();
        let polished = if polish {
            self.lp_count += 1;
            let mut work = Some(sol.clone());
            for &(k, r) in &rounded {
                work = work.and_then(|w| match w.fix_var(self.col(k), r) {
                    Ok(o) => o.into_solution().ok(),
                    Err(_) => None,
                });
            }
            work.map(|w| self.values(&w))
        } else {
            None
        };
        let passes = |mut c: Vec<f64>| {
            for &(k, r) in &rounded {
                c[k] = r;
            }
            self.model
                .check(&c, self.cfg.feasibility_tol, self.cfg.integrality_tol)
                .is_ok()
                .then_some(c)
        };
        let Some(candidate) = polished
            .and_then(passes)
            .or_else(|| passes(values.to_vec()))
        else {
            return;
        };
        let objective_value = self.model.objective_value(&candidate);
        let internal = self.dir * objective_value;
        if self.incumbent.is_some() && internal <= self.inc_value {
            return;
        }
        self.inc_value = internal;
        let assignment = Assignment {
            values: candidate,
            objective_value,
        };
        let bound = self.frontier_bound(current_bound).max(internal);
        self.pool.push(PoolEntry {
            assignment: assignment.clone(),
            node: self.node_count,
            elapsed: self.start.elapsed(),
            best_bound: self.dir * bound,
            gap: relative_gap(bound, internal),
        });
        self.incumbent = Some(assignment);
        // depth-first phase ends with the first incumbent
        if self.cfg.node_order == NodeOrder::BestBound {
            self.heap.extend(self.dive.drain(..));
        }
    }

    fn choose(&self, candidates: &[(usize, f64)]) -> (usize, f64) {
        let most_fractional = || {
            let mut best = candidates[0];
            for &(k, f) in &candidates[1..] {
                if f.min(1.0 - f) > best.1.min(1.0 - best.1) {
                    best = (k, f);
                }
            }
            best
        };
        if self.cfg.branching == Branching::MostFractional {
            return most_fractional();
        }
        let avg = |sum: f64, n: usize| (n > 0).then(|| sum / n as f64);
        let (mut ds, mut dn, mut us, mut un) = (0.0, 0, 0.0, 0);
        for p in &self.pseudo {
            if p.down_n > 0 {
                ds += p.down_sum / p.down_n as f64;
                dn += 1;
            }
            if p.up_n > 0 {
                us += p.up_sum / p.up_n as f64;
                un += 1;
            }
        }
        let (Some(d_default), Some(u_default)) = (avg(ds, dn), avg(us, un)) else {
            return most_fractional();
        };
        let mut best = candidates[0];
        let mut best_score = f64::NEG_INFINITY;
        for &(k, f) in candidates {
            let p = self.pseudo[k];
            let down = avg(p.down_sum, p.down_n).unwrap_or(d_default) * f;
            let up = avg(p.up_sum, p.up_n).unwrap_or(u_default) * (1.0 - f);
            let score = down.max(1e-6) * up.max(1e-6);
            if score > best_score {
                best_score = score;
                best = (k, f);
            }
        }
        best
    }

    /// Processes a solved relaxation: prune, accept or branch.
    fn evaluate(&mut self, sol: Solution, inherited: f64, depth: usize) {
        self.node_count += 1;
        let value = (sol.objective() + self.constant).min(inherited);
        if let Some(cut) = self.prune_cutoff() {
            if value <= cut {
                self.pruned_max = self.pruned_max.max(value);
                return;
            }
        }
        let values = self.values(&sol);
        let candidates = self.fractional(&values);
        if candidates.is_empty() {
            self.try_incumbent(&sol, &values, value, false);
            return;
        }
        let freq = self.cfg.heuristic_frequency;
        if freq > 0 && (self.node_count == 1 || self.node_count % freq == 0) {
            self.try_incumbent(&sol, &values, value, true);
            if let Some(cut) = self.prune_cutoff() {
                if value <= cut {
                    self.pruned_max = self.pruned_max.max(value);
                    return;
                }
            }
        }
        let (var, frac) = self.choose(&candidates);
        let parent = Rc::new(sol);
        let preferred = if frac >= 0.5 { 1.0 } else { 0.0 };
        let mut children = Vec::with_capacity(2);
        for v in [1.0 - preferred, preferred] {
            self.next_id += 1;
            children.push(Node {
                bound: value,
                depth: depth + 1,
                id: self.next_id,
                parent: Rc::clone(&parent),
                var,
                value: v,
                frac,
            });
        }
        let diving = self.cfg.node_order == NodeOrder::DepthFirst || self.incumbent.is_none();
        if diving {
            // the preferred child is pushed last and explored first
            self.dive.extend(children);
        } else {
            self.heap.extend(children);
        }
    }

    fn pop(&mut self) -> Option<Node> {
        self.dive.pop().or_else(|| self.heap.pop())
    }

    fn record_pseudocost(&mut self, var: usize, up: bool, frac: f64, drop: f64) {
        let gain = drop.max(0.0);
        let p = &mut self.pseudo[var];
        if up {
            p.up_sum += gain / (1.0 - frac).max(1e-9);
            p.up_n += 1;
        } else {
            p.down_sum += gain / frac.max(1e-9);
            p.down_n += 1;
        }
    }
}

const PRESOLVE_PASSES: usize = 50;

/// Solves `model` to global optimality (or until a limit is hit).
pub fn solve(model: &MilpModel, cfg: &SolverConfig) -> Result<SolveResult, SolverError> {
    cfg.validate()?;
    model.validate()?;
    if !cfg.allow_unbounded_vars {
        if let Some(v) = model
            .variables()
            .iter()
            .find(|v| !v.lb.is_finite() || !v.ub.is_finite())
        {
            return Err(SolverError::InfiniteBound(v.name.clone()));
        }
    }
    let start = Instant::now();
    let dir = direction(model);
    let bounds = if cfg.presolve {
        propagate(
            model,
            cfg.feasibility_tol,
            cfg.integrality_tol,
            PRESOLVE_PASSES,
        )
    } else {
        Some(model.variables().iter().map(|v| (v.lb, v.ub)).collect())
    };
    let reduced = bounds.as_ref().map(|b| reduce(model, dir, b));
    let (problem, cols, fixed, shift) = match reduced {
        Some(r) => (Some(r.problem), r.cols, r.fixed, r.shift),
        None => (
            None,
            vec![None; model.num_vars()],
            vec![0.0; model.num_vars()],
            0.0,
        ),
    };
    let binaries = model
        .binaries()
        .map(|v| v.0)
        .filter(|&k| cols[k].is_some())
        .collect();
    let mut search = Search {
        model,
        cfg,
        dir,
        constant: dir * model.objective().constant + shift,
        start,
        cols,
        fixed,
        binaries,
        heap: BinaryHeap::new(),
        dive: Vec::new(),
        next_id: 0,
        node_count: 0,
        lp_count: 1,
        incumbent: None,
        inc_value: f64::NEG_INFINITY,
        pool: Vec::new(),
        pruned_max: f64::NEG_INFINITY,
        pseudo: vec![Pseudo::default(); model.num_vars()],
    };

    let finish = |search: Search, status: SolveStatus, bound: f64| {
        let inc = search.incumbent.as_ref().map(|_| search.inc_value);
        let gap = inc.map_or(f64::INFINITY, |i| relative_gap(bound, i));
        SolveResult {
            status,
            incumbent: search.incumbent,
            best_bound: dir * bound,
            gap,
            incumbent_pool: search.pool,
            node_count: search.node_count,
            lp_count: search.lp_count,
            elapsed: search.start.elapsed(),
        }
    };

    let Some(problem) = problem else {
        return Ok(finish(search, SolveStatus::Infeasible, f64::NEG_INFINITY));
    };
    let root = match problem.solve() {
        Ok(outcome) => outcome
            .into_solution()
            .map_err(|_| SolverError::Lp("root relaxation interrupted".into()))?,
        Err(microlp::Error::Infeasible) => {
            return Ok(finish(search, SolveStatus::Infeasible, f64::NEG_INFINITY))
        }
        Err(microlp::Error::Unbounded) => {
            return Ok(finish(search, SolveStatus::Unbounded, f64::INFINITY))
        }
        Err(e) => return Err(SolverError::Lp(e.to_string())),
    };
    search.evaluate(root, f64::INFINITY, 0);

    let mut limit_hit = false;
    loop {
        let over_nodes = cfg.node_limit.is_some_and(|l| search.node_count >= l);
        let over_time = cfg.time_limit.is_some_and(|t| search.start.elapsed() >= t);
        if (over_nodes || over_time) && (!search.dive.is_empty() || !search.heap.is_empty()) {
            limit_hit = true;
            break;
        }
        let Some(node) = search.pop() else { break };
        if let Some(cut) = search.prune_cutoff() {
            if node.bound <= cut {
                search.pruned_max = search.pruned_max.max(node.bound);
                continue;
            }
        }
        search.lp_count += 1;
        let Node {
            bound,
            depth,
            parent,
            var,
            value,
            frac,
            ..
        } = node;
        match take(parent).fix_var(search.col(var), value) {
            Ok(outcome) => {
                let sol = outcome
                    .into_solution()
                    .map_err(|_| SolverError::Lp("node relaxation interrupted".into()))?;
                let child_value = sol.objective() + search.constant;
                search.record_pseudocost(var, value == 1.0, frac, bound - child_value);
                search.evaluate(sol, bound, depth);
            }
            Err(microlp::Error::Infeasible) => {}
            Err(e) => return Err(SolverError::Lp(e.to_string())),
        }
    }

    if limit_hit {
        let bound = search
            .frontier_bound(f64::NEG_INFINITY)
            .max(search.inc_value);
        let status = if search.incumbent.is_some() {
            SolveStatus::FeasibleLimit
        } else {
            SolveStatus::LimitNoSolution
        };
        return Ok(finish(search, status, bound));
    }
    if search.incumbent.is_none() {
        return Ok(finish(search, SolveStatus::Infeasible, f64::NEG_INFINITY));
    }
    let bound = search.inc_value.max(search.pruned_max);
    Ok(finish(search, SolveStatus::Optimal, bound))
}
