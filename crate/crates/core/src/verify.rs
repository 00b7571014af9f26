//! Exactness checks: with the inputs frozen, the MILP optimum must equal the
//! forward pass of the network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::encode::{encode, BoundSource, EncodeConfig, EncodeError, Encoding};
use crate::fbbt::Bounds;
use crate::model::{forward, graph_to_json, GnnModel, GraphInput, ModelError};
use crate::molecule::{random_molecule, Molecule, MoleculeSpace};
use crate::solver::{solve, SolveStatus, SolverConfig, SolverError};

/// Big-M used for every pre-activation when the negative control is on.
pub const CORRUPT_BIG_M: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("{0}")]
    Input(String),
}

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub trials: usize,
    pub seed: u64,
    pub tolerance: f64,
    /// Replace every big-M by [`CORRUPT_BIG_M`] (negative control).
    pub corrupt_big_m: bool,
    pub solver: SolverConfig,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            trials: 20,
            seed: 0,
            tolerance: 1e-6,
            corrupt_big_m: false,
            solver: SolverConfig::default(),
        }
    }
}

/// The first trial whose MILP value disagreed with the forward pass.
#[derive(Debug, Clone, Serialize)]
pub struct Mismatch {
    pub trial: usize,
    pub status: String,
    pub milp: Option<f64>,
    pub forward: f64,
    /// Serialized input for replay: a graph JSON or the input vector.
    pub input: serde_json::Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    /// `variable`, `fixed` or `vector`.
    pub encoder: String,
    pub trials: usize,
    pub max_deviation: f64,
    pub mismatch: Option<Mismatch>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.mismatch.is_none()
    }

    /// One-line summary, `PASS`/`FAIL` first.
    pub fn summary(&self) -> String {
        format!(
            "{} verify encoder={} trials={} max_deviation={:.3e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.encoder,
            self.trials,
            self.max_deviation
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckReport>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckReport::passed)
    }

    pub fn max_deviation(&self) -> f64 {
        self.checks
            .iter()
            .map(|c| c.max_deviation)
            .fold(0.0, f64::max)
    }
}

struct Trial {
    deviation: f64,
    status: SolveStatus,
    milp: Option<f64>,
    forward: f64,
}

fn run_trial(
    milp: &crate::milp::MilpModel,
    forward: f64,
    cfg: &VerifyConfig,
) -> Result<Trial, VerifyError> {
    let r = solve(milp, &cfg.solver)?;
    let value = (r.status == SolveStatus::Optimal)
        .then(|| r.objective())
        .flatten();
    Ok(Trial {
        deviation: value.map_or(f64::INFINITY, |v| (v - forward).abs()),
        status: r.status,
        milp: value,
        forward,
    })
}

fn summarize(
    encoder: &str,
    trials: Vec<Trial>,
    inputs: impl Fn(usize) -> serde_json::Value,
    tol: f64,
) -> CheckReport {
    let max_deviation = trials.iter().map(|t| t.deviation).fold(0.0, f64::max);
    let mismatch = trials
        .iter()
        .position(|t| !(t.deviation <= tol))
        .map(|k| Mismatch {
            trial: k,
            status: trials[k].status.to_string(),
            milp: trials[k].milp,
            forward: trials[k].forward,
            input: inputs(k),
        });
    CheckReport {
        encoder: encoder.to_string(),
        trials: trials.len(),
        max_deviation,
        mismatch,
    }
}

fn encode_cfg(mut enc: EncodeConfig, cfg: &VerifyConfig) -> EncodeConfig {
    if cfg.corrupt_big_m {
        enc.bound_source = BoundSource::Uniform(CORRUPT_BIG_M);
        enc.support_scale = CORRUPT_BIG_M;
    }
    enc
}

/// Runs the exactness checks that apply to `model`: for graph models the
/// molecule-space encoding and the fixed-graph encoding over random feasible
/// molecules of `space`; for dense models the vector encoding over random
/// points of the unit box.
pub fn verify(
    model: &GnnModel,
    space: Option<&MoleculeSpace>,
    cfg: &VerifyConfig,
) -> Result<VerifyReport, VerifyError> {
    if cfg.trials == 0 {
        return Err(VerifyError::Input("trials must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    if model.pool_index().is_none() {
        let w = model.input_width();
        let points: Vec<Vec<f64>> = (0..cfg.trials)
            .map(|_| (0..w).map(|_| rng.gen_range(0.0..=1.0)).collect())
            .collect();
        let base = encode(
            model,
            &encode_cfg(EncodeConfig::vector(Bounds::unit(w)), cfg),
        )?;
        let trials = points
            .par_iter()
            .map(|x| {
                let mut e = base.clone();
                e.freeze_vector(x)?;
                run_trial(&e.milp, model.forward_vector(x)?, cfg)
            })
            .collect::<Result<Vec<_>, VerifyError>>()?;
        let check = summarize(
            "vector",
            trials,
            |k| serde_json::json!(points[k]),
            cfg.tolerance,
        );
        return Ok(VerifyReport {
            checks: vec![check],
        });
    }

    let space =
        space.ok_or_else(|| VerifyError::Input("graph models need a molecule space".into()))?;
    let molecules: Vec<Molecule> = (0..cfg.trials)
        .map(|_| {
            random_molecule(space, &mut rng)
                .ok_or_else(|| VerifyError::Input("no feasible molecule could be sampled".into()))
        })
        .collect::<Result<_, _>>()?;
    let graphs: Vec<GraphInput> = molecules.iter().map(|m| m.to_graph_input(space)).collect();
    let values = graphs
        .iter()
        .map(|g| forward(model, g))
        .collect::<Result<Vec<f64>, _>>()?;
    let replay = |k: usize| graph_to_json(&graphs[k]);

    let base: Encoding = encode(
        model,
        &encode_cfg(EncodeConfig::variable(space.clone()), cfg),
    )?;
    let variable = molecules
        .par_iter()
        .zip(&values)
        .map(|(m, &f)| run_trial(&base.frozen_molecule(m)?, f, cfg))
        .collect::<Result<Vec<_>, VerifyError>>()?;
    let fixed = graphs
        .par_iter()
        .zip(&values)
        .map(|(g, &f)| {
            let e = encode(model, &encode_cfg(EncodeConfig::fixed(g.clone()), cfg))?;
            run_trial(&e.milp, f, cfg)
        })
        .collect::<Result<Vec<_>, VerifyError>>()?;
    Ok(VerifyReport {
        checks: vec![
            summarize("variable", variable, replay, cfg.tolerance),
            summarize("fixed", fixed, replay, cfg.tolerance),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, Layer, Matrix};

    /// One SAGE layer with identity weights, sum pooling, a summing head.
    fn identity_sage(width: usize) -> GnnModel {
        let layers = vec![
            Layer::Sage {
                root: Matrix::identity(width),
                neighbor: Matrix::identity(width),
                activation: Activation::Relu,
            },
            Layer::SumPool,
            Layer::Dense {
                weight: Matrix::new(1, width, vec![1.0; width]).unwrap(),
                bias: vec![0.0],
                activation: Activation::None,
            },
        ];
        GnnModel::new(width, 4, 0.0, 1.0, layers).unwrap()
    }

    #[test]
    fn identity_sage_passes() {
        let space = MoleculeSpace::simple(3).unwrap();
        let model = identity_sage(space.feature_width());
        let report = verify(&model, Some(&space), &VerifyConfig::default()).unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.checks.len(), 2);
        assert!(report.max_deviation() < 1e-9);
    }

    #[test]
    fn corrupted_big_m_fails() {
        let space = MoleculeSpace::simple(3).unwrap();
        let model = identity_sage(space.feature_width());
        let cfg = VerifyConfig {
            corrupt_big_m: true,
            ..VerifyConfig::default()
        };
        let report = verify(&model, Some(&space), &cfg).unwrap();
        assert!(!report.passed());
        let m = report.checks[0].mismatch.as_ref().unwrap();
        assert!(m.input.get("adjacency").is_some());
    }

    #[test]
    fn zero_weights_give_the_bias() {
        let layers = vec![
            Layer::Dense {
                weight: Matrix::zeros(3, 2),
                bias: vec![0.5, -0.5, 0.0],
                activation: Activation::Relu,
            },
            Layer::Dense {
                weight: Matrix::zeros(1, 3),
                bias: vec![1.25],
                activation: Activation::None,
            },
        ];
        let model = GnnModel::new(2, 4, 0.0, 1.0, layers).unwrap();
        let report = verify(&model, None, &VerifyConfig::default()).unwrap();
        assert!(report.passed());
        assert_eq!(report.checks[0].encoder, "vector");
        assert!(report.max_deviation() < 1e-12);
    }
}
