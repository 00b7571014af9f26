//! MILP encodings of trained networks.
//!
//! Every encoder produces a model maximising the network output `OUT`. Graph
//! layers are emitted per node with the big-M ReLU gadget; the conditional
//! neighbour sums of variable-graph models are linearised with support
//! variables gated by the adjacency binaries. For GCN layers the
//! normalisation coefficient is selected from a [`DegreeLookup`] by one-hot
//! binaries, and each product of a selected coefficient with a neighbour
//! feature is linearised exactly, so the emitted model is a pure MILP.

mod lookup;

pub use lookup::DegreeLookup;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::fbbt::{
    compute_bounds, fix_activations, mlp_bounds, Bounds, BoundsTable, FbbtOptions,
    FixedActivations, NeighborScale,
};
use crate::milp::{
    add_indicator_product, add_linear, add_relu, Assignment, LinExpr, MilpError, MilpModel,
    ObjSense, Sense, VarId,
};
use crate::model::{
    Activation, Architecture, GnnModel, GraphInput, Layer, LayerKind, ModelError,
    NormalizedAdjacency,
};
use crate::molecule::{
    decode, emit_input_constraints, freeze_molecule, InputVars, Molecule, MoleculeError,
    MoleculeSpace,
};

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error(transparent)]
    Molecule(#[from] MoleculeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Mode(String),
    #[error("degree {found} exceeds the model's d_max {d_max}")]
    Degree { found: usize, d_max: usize },
    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// What the encoder treats as the network input.
#[derive(Debug, Clone)]
pub enum GraphMode {
    /// A predetermined graph; its features are fixed in the model.
    Fixed(GraphInput),
    /// Structure and features are decision variables of a molecule space.
    Variable(MoleculeSpace),
    /// A flat input vector in a box, for models without graph layers.
    Vector(Bounds),
}

/// Where the big-M values come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundSource {
    /// Interval propagation of the input box.
    Fbbt,
    /// `[-M, M]` for every neuron. Only exact when `M` really bounds them.
    Uniform(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GcnLinearization {
    /// Distribute the coefficient selection over the neighbour features.
    #[default]
    ExactLinear,
    /// The bilinear coefficient-times-feature form; not emitted, requesting it
    /// is an error.
    BilinearNote,
}

#[derive(Debug, Clone)]
pub struct EncodeConfig {
    pub graph_mode: GraphMode,
    pub bound_source: BoundSource,
    pub fix_activations: bool,
    pub gcn_linearization: GcnLinearization,
    pub neighbor_scale: NeighborScale,
    /// Multiplier on the big-M of adjacency gates. Values below 1 make the
    /// encoding inexact and exist for negative controls.
    pub support_scale: f64,
}

impl EncodeConfig {
    pub fn new(graph_mode: GraphMode) -> Self {
        Self {
            graph_mode,
            bound_source: BoundSource::Fbbt,
            fix_activations: true,
            gcn_linearization: GcnLinearization::ExactLinear,
            neighbor_scale: NeighborScale::MaxDegree,
            support_scale: 1.0,
        }
    }

    pub fn variable(space: MoleculeSpace) -> Self {
        Self::new(GraphMode::Variable(space))
    }

    pub fn fixed(graph: GraphInput) -> Self {
        Self::new(GraphMode::Fixed(graph))
    }

    pub fn vector(input: Bounds) -> Self {
        Self::new(GraphMode::Vector(input))
    }
}

/// Input variables of an encoding.
#[derive(Debug, Clone)]
pub enum EncodedInputs {
    Molecule {
        space: MoleculeSpace,
        vars: InputVars,
    },
    Graph {
        graph: GraphInput,
        x: Vec<Vec<VarId>>,
    },
    Vector {
        x: Vec<VarId>,
    },
}

/// An encoded network together with the data needed to interpret it.
#[derive(Debug, Clone)]
pub struct Encoding {
    pub milp: MilpModel,
    pub bounds: BoundsTable,
    pub fixed: FixedActivations,
    pub inputs: EncodedInputs,
    pub output: VarId,
}

impl Encoding {
    pub fn space(&self) -> Option<&MoleculeSpace> {
        match &self.inputs {
            EncodedInputs::Molecule { space, .. } => Some(space),
            _ => None,
        }
    }

    /// Fixes the structure and features of a molecule-space encoding.
    pub fn freeze_molecule(&mut self, molecule: &Molecule) -> Result<(), EncodeError> {
        match &self.inputs {
            EncodedInputs::Molecule { space, vars } => {
                freeze_molecule(&mut self.milp, vars, space, molecule)?;
                Ok(())
            }
            _ => Err(EncodeError::Mode("encoding has no molecule inputs".into())),
        }
    }

    /// Copy of the MILP with the inputs fixed to `molecule`.
    pub fn frozen_molecule(&self, molecule: &Molecule) -> Result<MilpModel, EncodeError> {
        let mut copy = self.clone();
        copy.freeze_molecule(molecule)?;
        Ok(copy.milp)
    }

    pub fn freeze_vector(&mut self, x: &[f64]) -> Result<(), EncodeError> {
        let EncodedInputs::Vector { x: vars } = &self.inputs else {
            return Err(EncodeError::Mode("encoding has no vector inputs".into()));
        };
        if vars.len() != x.len() {
            return Err(EncodeError::Mode(format!(
                "expected {} inputs, got {}",
                vars.len(),
                x.len()
            )));
        }
        for (&v, &val) in vars.iter().zip(x) {
            self.milp.fix(v, val)?;
        }
        Ok(())
    }

    /// Molecule encoded by the input variables of `assignment`.
    pub fn decode_molecule(&self, assignment: &Assignment) -> Result<Molecule, EncodeError> {
        match &self.inputs {
            EncodedInputs::Molecule { space, vars } => {
                Ok(decode(&self.milp, vars, space, assignment)?)
            }
            _ => Err(EncodeError::Mode("encoding has no molecule inputs".into())),
        }
    }
}

/// Encodes `model` according to `cfg`.
pub fn encode(model: &GnnModel, cfg: &EncodeConfig) -> Result<Encoding, EncodeError> {
    let has_gcn = model
        .graph_layers()
        .iter()
        .any(|l| l.kind() == LayerKind::Gcn);
    if has_gcn && cfg.gcn_linearization == GcnLinearization::BilinearNote {
        return Err(EncodeError::Unsupported(
            "the bilinear GCN form is not emitted; use the exact linearisation".into(),
        ));
    }
    if !(cfg.support_scale > 0.0 && cfg.support_scale.is_finite()) {
        return Err(EncodeError::Mode(format!(
            "support_scale must be positive, got {}",
            cfg.support_scale
        )));
    }
    if let BoundSource::Uniform(m) = cfg.bound_source {
        if !(m > 0.0 && m.is_finite()) {
            return Err(EncodeError::Mode(format!(
                "uniform big-M must be positive, got {m}"
            )));
        }
    }

    let mut milp = MilpModel::new();
    let width = model.input_width();
    let (bounds, fixed, inputs, output) = match &cfg.graph_mode {
        GraphMode::Vector(input) => {
            if model.pool_index().is_some() {
                return Err(EncodeError::Mode(
                    "vector mode needs a model without pooling".into(),
                ));
            }
            if input.width() != width {
                return Err(EncodeError::Mode(format!(
                    "input box has width {}, model expects {width}",
                    input.width()
                )));
            }
            if input
                .lower
                .iter()
                .chain(&input.upper)
                .any(|v| !v.is_finite())
            {
                return Err(MilpError::Modeling("MLP inputs must be bounded".into()).into());
            }
            let bounds = bounds_table(model, 1, input, cfg);
            let fixed = activation_fixing(model, &bounds, cfg);
            let x = (0..width)
                .map(|f| milp.add_continuous(format!("X_{f}"), input.lower[f], input.upper[f]))
                .collect::<Result<Vec<_>, _>>()?;
            let out = encode_mlp(&mut milp, model.layers(), 0, &x, &bounds, &fixed)?;
            (bounds, fixed, EncodedInputs::Vector { x }, out)
        }
        GraphMode::Fixed(graph) => {
            require_graph_model(model)?;
            if graph.feature_width() != width {
                return Err(EncodeError::Mode(format!(
                    "graph has {} features, model expects {width}",
                    graph.feature_width()
                )));
            }
            if graph.max_degree() > model.d_max() {
                return Err(EncodeError::Degree {
                    found: graph.max_degree(),
                    d_max: model.d_max(),
                });
            }
            let n = graph.n_nodes();
            let input = feature_box(graph);
            let bounds = bounds_table(model, n, &input, cfg);
            let fixed = activation_fixing(model, &bounds, cfg);
            let mut x = Vec::with_capacity(n);
            for i in 0..n {
                let row = graph
                    .feature_row(i)
                    .iter()
                    .enumerate()
                    .map(|(f, &v)| milp.add_continuous(format!("X_{i}_{f}"), v, v))
                    .collect::<Result<Vec<_>, _>>()?;
                x.push(row);
            }
            let mut topo = Topology::Fixed {
                graph,
                norm: has_gcn.then(|| NormalizedAdjacency::new(graph)),
            };
            let out =
                encode_graph_model(&mut milp, model, &mut topo, x.clone(), &bounds, &fixed, cfg)?;
            let inputs = EncodedInputs::Graph {
                graph: graph.clone(),
                x,
            };
            (bounds, fixed, inputs, out)
        }
        GraphMode::Variable(space) => {
            require_graph_model(model)?;
            if space.feature_width() != width {
                return Err(EncodeError::Mode(format!(
                    "molecule space has {} features, model expects {width}",
                    space.feature_width()
                )));
            }
            if space.max_degree() > model.d_max() {
                return Err(EncodeError::Degree {
                    found: space.max_degree(),
                    d_max: model.d_max(),
                });
            }
            let n = space.n_nodes();
            let bounds = bounds_table(model, n, &Bounds::unit(width), cfg);
            let fixed = activation_fixing(model, &bounds, cfg);
            let vars = emit_input_constraints(&mut milp, space)?;
            let x: Vec<Vec<VarId>> = (0..n).map(|i| vars.features(i).to_vec()).collect();
            let mut topo = Topology::Variable {
                vars: &vars,
                space,
                selection: None,
            };
            let out = encode_graph_model(&mut milp, model, &mut topo, x, &bounds, &fixed, cfg)?;
            let inputs = EncodedInputs::Molecule {
                space: space.clone(),
                vars,
            };
            (bounds, fixed, inputs, out)
        }
    };
    milp.set_objective(
        ObjSense::Maximize,
        &LinExpr::from_terms([(output, 1.0)]),
        0.0,
    );
    set_priorities(&mut milp, model.layers().len());
    Ok(Encoding {
        milp,
        bounds,
        fixed,
        inputs,
        output,
    })
}

/// Branch on structure binaries first, then on activation indicators layer
/// by layer. Once the inputs are integral each layer's indicators are decided
/// by the previous layers, so the wrong side of such a branch is infeasible.
fn set_priorities(milp: &mut MilpModel, layers: usize) {
    let ids: Vec<VarId> = milp.binaries().collect();
    for id in ids {
        let name = &milp.variable(id).name;
        let layer = name
            .strip_prefix("Z_")
            .and_then(|rest| rest.split('_').next())
            .and_then(|k| k.parse::<usize>().ok());
        let priority = match layer {
            Some(k) => layers.saturating_sub(k) as u32,
            None => layers as u32 + 1,
        };
        milp.set_branch_priority(id, priority);
    }
}

/// GCN model on a predetermined graph.
pub fn encode_gcn_fixed(model: &GnnModel, graph: &GraphInput) -> Result<Encoding, EncodeError> {
    require_arch(model, Architecture::Gcn)?;
    encode(model, &EncodeConfig::fixed(graph.clone()))
}

/// GCN model over every molecule of `space`.
pub fn encode_gcn_variable(
    model: &GnnModel,
    space: &MoleculeSpace,
) -> Result<Encoding, EncodeError> {
    require_arch(model, Architecture::Gcn)?;
    encode(model, &EncodeConfig::variable(space.clone()))
}

/// GraphSAGE model over every molecule of `space`.
pub fn encode_sage_variable(
    model: &GnnModel,
    space: &MoleculeSpace,
) -> Result<Encoding, EncodeError> {
    require_arch(model, Architecture::Sage)?;
    encode(model, &EncodeConfig::variable(space.clone()))
}

fn require_arch(model: &GnnModel, arch: Architecture) -> Result<(), EncodeError> {
    if model.architecture() != arch {
        return Err(EncodeError::Mode(format!(
            "expected a {arch:?} model, got {:?}",
            model.architecture()
        )));
    }
    Ok(())
}

fn require_graph_model(model: &GnnModel) -> Result<(), EncodeError> {
    if model.pool_index().is_none() {
        return Err(EncodeError::Mode(
            "model has no pooling layer; encode it in vector mode".into(),
        ));
    }
    Ok(())
}

fn feature_box(graph: &GraphInput) -> Bounds {
    let w = graph.feature_width();
    let mut b = Bounds::uniform(w, f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..graph.n_nodes() {
        for (f, &v) in graph.feature_row(i).iter().enumerate() {
            b.lower[f] = b.lower[f].min(v);
            b.upper[f] = b.upper[f].max(v);
        }
    }
    b
}

fn bounds_table(model: &GnnModel, n: usize, input: &Bounds, cfg: &EncodeConfig) -> BoundsTable {
    let opts = FbbtOptions {
        neighbor_scale: cfg.neighbor_scale,
    };
    let mut table = compute_bounds(model, n, input, opts);
    if let BoundSource::Uniform(m) = cfg.bound_source {
        for (layer, lb) in model.layers().iter().zip(table.layers.iter_mut()) {
            lb.pre = Bounds::uniform(lb.pre.width(), -m, m);
            lb.post = lb.pre.activated(layer.activation());
        }
    }
    table
}

fn activation_fixing(
    model: &GnnModel,
    bounds: &BoundsTable,
    cfg: &EncodeConfig,
) -> FixedActivations {
    if cfg.fix_activations {
        fix_activations(model, bounds)
    } else {
        FixedActivations::default()
    }
}

/// Emits `act(pre)` for one neuron. `suffix` names the variables.
fn neuron(
    milp: &mut MilpModel,
    suffix: &str,
    pre: &LinExpr,
    bias: f64,
    activation: Activation,
    (lower, upper): (f64, f64),
    fixed_z: Option<bool>,
) -> Result<VarId, MilpError> {
    match activation {
        Activation::Relu => Ok(add_relu(milp, suffix, pre, bias, lower, upper, fixed_z)?.x),
        Activation::None => add_linear(
            milp,
            &format!("H_{suffix}"),
            &format!("lin_{suffix}"),
            pre,
            bias,
            lower,
            upper,
        ),
    }
}

/// Dense layers `layers` (model indices starting at `first`) applied to
/// `inputs`. Returns the output variable `OUT` of the final layer.
pub fn encode_mlp(
    milp: &mut MilpModel,
    layers: &[Layer],
    first: usize,
    inputs: &[VarId],
    bounds: &BoundsTable,
    fixed: &FixedActivations,
) -> Result<VarId, EncodeError> {
    for &v in inputs {
        let var = milp.variable(v);
        if !var.lb.is_finite() || !var.ub.is_finite() {
            return Err(MilpError::Modeling(format!("input `{}` is unbounded", var.name)).into());
        }
    }
    let mut current = inputs.to_vec();
    for (t, layer) in layers.iter().enumerate() {
        let k = first + t;
        let Layer::Dense {
            weight,
            bias,
            activation,
        } = layer
        else {
            return Err(EncodeError::Mode(format!("layer {k} is not dense")));
        };
        let pre_bounds = &bounds.layers[k].pre;
        let last = t + 1 == layers.len();
        let mut next = Vec::with_capacity(weight.rows());
        for j in 0..weight.rows() {
            let pre = LinExpr::from_terms(
                weight
                    .row(j)
                    .iter()
                    .zip(&current)
                    .filter(|(w, _)| **w != 0.0)
                    .map(|(&w, &v)| (v, w)),
            );
            let range = (pre_bounds.lower[j], pre_bounds.upper[j]);
            let v = if last {
                add_linear(milp, "OUT", "out", &pre, bias[j], range.0, range.1)?
            } else {
                neuron(
                    milp,
                    &format!("{k}_{j}"),
                    &pre,
                    bias[j],
                    *activation,
                    range,
                    fixed.get(k, 0, j),
                )?
            };
            next.push(v);
        }
        current = next;
    }
    match current.as_slice() {
        [out] => Ok(*out),
        _ => Err(EncodeError::Mode(
            "network does not end in a single output".into(),
        )),
    }
}

/// Coefficient selection of the variable-graph GCN, shared by all layers.
struct GcnSelection {
    /// `(p, g_p, C_i_i_p)` per node.
    diag: Vec<Vec<(usize, f64, VarId)>>,
    /// `(p, g_p, C_i_l_p * A_il)` per unordered pair `i < l`, restricted to
    /// degree combinations that admit an edge.
    pairs: BTreeMap<(usize, usize), Vec<(usize, f64, VarId)>>,
}

enum Topology<'a> {
    Fixed {
        graph: &'a GraphInput,
        norm: Option<NormalizedAdjacency>,
    },
    Variable {
        vars: &'a InputVars,
        space: &'a MoleculeSpace,
        selection: Option<GcnSelection>,
    },
}

fn encode_graph_model(
    milp: &mut MilpModel,
    model: &GnnModel,
    topo: &mut Topology<'_>,
    x: Vec<Vec<VarId>>,
    bounds: &BoundsTable,
    fixed: &FixedActivations,
    cfg: &EncodeConfig,
) -> Result<VarId, EncodeError> {
    let n = x.len();
    let mut h = x;
    for (k, layer) in model.graph_layers().iter().enumerate() {
        let input = bounds.input_to(k).clone();
        let pre = match layer {
            Layer::Gcn { weight, .. } => gcn_pre(milp, model, topo, k, weight, &h, &input, cfg)?,
            Layer::Sage { root, neighbor, .. } => {
                sage_pre(milp, topo, k, root, neighbor, &h, &input, cfg)?
            }
            _ => unreachable!("graph layers precede pooling"),
        };
        let lb = &bounds.layers[k].pre;
        let mut next = Vec::with_capacity(n);
        for (i, row) in pre.iter().enumerate() {
            let vars = row
                .iter()
                .enumerate()
                .map(|(j, e)| {
                    neuron(
                        milp,
                        &format!("{k}_{i}_{j}"),
                        e,
                        0.0,
                        layer.activation(),
                        (lb.lower[j], lb.upper[j]),
                        fixed.get(k, i, j),
                    )
                })
                .collect::<Result<Vec<_>, _>>()?;
            next.push(vars);
        }
        h = next;
    }

    let p = model.pool_index().expect("graph model has a pooling layer");
    let pb = &bounds.layers[p].pre;
    let width = h.first().map_or(0, Vec::len);
    let pooled = (0..width)
        .map(|j| {
            let e = LinExpr::from_terms(h.iter().map(|row| (row[j], 1.0)));
            add_linear(
                milp,
                &format!("POOL_{j}"),
                &format!("pool_{j}"),
                &e,
                0.0,
                pb.lower[j],
                pb.upper[j],
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    encode_mlp(milp, model.head_layers(), p + 1, &pooled, bounds, fixed)
}

/// `max(|lo|, |hi|)` of an input feature, the big-M of its gates.
fn gate_m(input: &Bounds, m: usize, cfg: &EncodeConfig) -> f64 {
    input.lower[m].abs().max(input.upper[m].abs()) * cfg.support_scale
}

#[allow(clippy::too_many_arguments)]
fn sage_pre(
    milp: &mut MilpModel,
    topo: &Topology<'_>,
    k: usize,
    root: &crate::model::Matrix,
    neighbor: &crate::model::Matrix,
    h: &[Vec<VarId>],
    input: &Bounds,
    cfg: &EncodeConfig,
) -> Result<Vec<Vec<LinExpr>>, EncodeError> {
    let n = h.len();
    let width = input.width();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // neighbourhood sum per input feature
        let mut agg: Vec<LinExpr> = vec![LinExpr::new(); width];
        for l in (0..n).filter(|&l| l != i) {
            match topo {
                Topology::Fixed { graph, .. } => {
                    if graph.adjacent(i, l) {
                        for (m, e) in agg.iter_mut().enumerate() {
                            e.add(h[l][m], 1.0);
                        }
                    }
                }
                Topology::Variable { vars, .. } => {
                    let a = vars.adjacency(i, l).expect("off-diagonal");
                    for (m, e) in agg.iter_mut().enumerate() {
                        let b = add_indicator_product(
                            milp,
                            &format!("B_{k}_{i}_{l}_{m}"),
                            "sup",
                            &format!("{k}_{i}_{l}_{m}"),
                            a,
                            h[l][m],
                            gate_m(input, m, cfg),
                        )?;
                        e.add(b, 1.0);
                    }
                }
            }
        }
        let row = (0..root.rows())
            .map(|j| {
                let mut e = LinExpr::new();
                for m in 0..width {
                    if root.get(j, m) != 0.0 {
                        e.add(h[i][m], root.get(j, m));
                    }
                    if neighbor.get(j, m) != 0.0 {
                        e.add_expr(&agg[m], neighbor.get(j, m));
                    }
                }
                e
            })
            .collect();
        out.push(row);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn gcn_pre(
    milp: &mut MilpModel,
    model: &GnnModel,
    topo: &mut Topology<'_>,
    k: usize,
    weight: &crate::model::Matrix,
    h: &[Vec<VarId>],
    input: &Bounds,
    cfg: &EncodeConfig,
) -> Result<Vec<Vec<LinExpr>>, EncodeError> {
    let n = h.len();
    let width = input.width();
    let aggs = match topo {
        Topology::Fixed { norm, .. } => {
            let norm = norm
                .as_ref()
                .expect("normalised adjacency built for GCN models");
            let mut aggs: Vec<Vec<LinExpr>> = Vec::with_capacity(n);
            for i in 0..n {
                let mut agg = vec![LinExpr::new(); width];
                for l in 0..n {
                    let a = norm.get(i, l);
                    if a != 0.0 {
                        for (m, e) in agg.iter_mut().enumerate() {
                            e.add(h[l][m], a);
                        }
                    }
                }
                aggs.push(agg);
            }
            aggs
        }
        Topology::Variable {
            vars,
            space,
            selection,
        } => {
            if selection.is_none() {
                *selection = Some(gcn_selection(milp, vars, space, model.d_max())?);
            }
            let sel = selection.as_ref().expect("selection built above");
            // Products are formed on the narrower side: the raw neighbour
            // features, or their projection `W H_l` when that has fewer
            // entries. Both distribute the same selection exactly.
            let project = weight.rows() < width;
            let (src, src_bounds) = if project {
                let pb = mlp_bounds(weight, None, input, true);
                let mut y = Vec::with_capacity(n);
                for (l, row) in h.iter().enumerate() {
                    let ys = (0..weight.rows())
                        .map(|j| {
                            let e = LinExpr::from_terms(
                                row.iter()
                                    .enumerate()
                                    .filter(|(m, _)| weight.get(j, *m) != 0.0)
                                    .map(|(m, &v)| (v, weight.get(j, m))),
                            );
                            let name = format!("{k}_{l}_{j}");
                            add_linear(
                                milp,
                                &format!("Y_{name}"),
                                &format!("proj_{name}"),
                                &e,
                                0.0,
                                pb.lower[j],
                                pb.upper[j],
                            )
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    y.push(ys);
                }
                (y, pb)
            } else {
                (h.to_vec(), input.clone())
            };
            let src_width = src_bounds.width();
            let mut aggs: Vec<Vec<LinExpr>> = Vec::with_capacity(n);
            for i in 0..n {
                let mut agg = vec![LinExpr::new(); src_width];
                for l in 0..n {
                    let terms = if i == l {
                        &sel.diag[i]
                    } else {
                        &sel.pairs[&(i.min(l), i.max(l))]
                    };
                    for &(p, g, c) in terms {
                        for (m, e) in agg.iter_mut().enumerate() {
                            let v = milp.variable(src[l][m]);
                            if v.lb == 0.0 && v.ub == 0.0 {
                                continue;
                            }
                            let q = add_indicator_product(
                                milp,
                                &format!("Q_{k}_{i}_{l}_{p}_{m}"),
                                "gprod",
                                &format!("{k}_{i}_{l}_{p}_{m}"),
                                c,
                                src[l][m],
                                gate_m(&src_bounds, m, cfg),
                            )?;
                            e.add(q, g);
                        }
                    }
                }
                aggs.push(agg);
            }
            if project {
                return Ok(aggs);
            }
            aggs
        }
    };
    Ok(aggs
        .iter()
        .map(|agg| {
            (0..weight.rows())
                .map(|j| {
                    let mut e = LinExpr::new();
                    for (m, a) in agg.iter().enumerate() {
                        if weight.get(j, m) != 0.0 {
                            e.add_expr(a, weight.get(j, m));
                        }
                    }
                    e
                })
                .collect()
        })
        .collect())
}

/// Degree variables, index selection and gated coefficients. Added once and
/// shared by every GCN layer.
fn gcn_selection(
    milp: &mut MilpModel,
    vars: &InputVars,
    space: &MoleculeSpace,
    d_max: usize,
) -> Result<GcnSelection, EncodeError> {
    let n = vars.n_nodes();
    let top = space.max_degree() + 1;
    let lookup = DegreeLookup::new(d_max + 1);
    let radix = lookup.radix() as f64;

    let mut deg = Vec::with_capacity(n);
    for i in 0..n {
        let e = LinExpr::from_terms(
            (0..n)
                .filter(|&l| l != i)
                .map(|l| (vars.adjacency(i, l).expect("off-diagonal"), 1.0)),
        );
        deg.push(add_linear(
            milp,
            &format!("DEG_{i}"),
            &format!("deg_{i}"),
            &e,
            1.0,
            1.0,
            top as f64,
        )?);
    }

    let onehot = degree_onehots(milp, vars, top)?;

    let mut diag = Vec::with_capacity(n);
    let mut pairs = BTreeMap::new();
    for i in 0..n {
        for l in i..n {
            let combos: Vec<(usize, usize)> = if i == l {
                (1..=top).map(|d| (d, d)).collect()
            } else {
                (1..=top)
                    .flat_map(|a| (1..=top).map(move |b| (a, b)))
                    .collect()
            };
            let pidx_expr = LinExpr::from_terms([(deg[i], radix), (deg[l], 1.0)]);
            let pidx = add_linear(
                milp,
                &format!("PIDX_{i}_{l}"),
                &format!("pidx_{i}_{l}"),
                &pidx_expr,
                0.0,
                radix + 1.0,
                radix * top as f64 + top as f64,
            )?;
            let mut sel = Vec::with_capacity(combos.len());
            for (a, b) in combos {
                let p = lookup.index(a, b);
                let c = milp.add_binary(format!("C_{i}_{l}_{p}"))?;
                sel.push((p, a, b, c));
            }
            let mut idx = LinExpr::from_terms(sel.iter().map(|&(p, _, _, c)| (c, p as f64)));
            idx.add(pidx, -1.0);
            milp.add_constraint(format!("cidx_{i}_{l}"), &idx, Sense::Eq, 0.0)?;
            let one = LinExpr::from_terms(sel.iter().map(|&(_, _, _, c)| (c, 1.0)));
            milp.add_constraint(format!("csum_{i}_{l}"), &one, Sense::Eq, 1.0)?;
            let s_expr = LinExpr::from_terms(sel.iter().map(|&(p, _, _, c)| (c, lookup.get(p))));
            let sil = add_linear(
                milp,
                &format!("SIL_{i}_{l}"),
                &format!("sil_{i}_{l}"),
                &s_expr,
                0.0,
                0.0,
                1.0,
            )?;

            // marginals of the selection are the degree one-hots
            if i == l {
                for &(p, a, _, c) in &sel {
                    let e = LinExpr::from_terms([(c, 1.0), (onehot[i][a - 1], -1.0)]);
                    milp.add_constraint(format!("cmarg_{i}_{l}_{p}"), &e, Sense::Eq, 0.0)?;
                }
            } else {
                for (side, node) in [(0, i), (1, l)] {
                    for d in 1..=top {
                        let mut e = LinExpr::from_terms(
                            sel.iter()
                                .filter(|&&(_, a, b, _)| if side == 0 { a == d } else { b == d })
                                .map(|&(_, _, _, c)| (c, 1.0)),
                        );
                        e.add(onehot[node][d - 1], -1.0);
                        milp.add_constraint(
                            format!("cmarg_{i}_{l}_{side}_{d}"),
                            &e,
                            Sense::Eq,
                            0.0,
                        )?;
                    }
                }
            }

            if i == l {
                diag.push(
                    sel.iter()
                        .map(|&(p, _, _, c)| (p, lookup.get(p), c))
                        .collect(),
                );
                continue;
            }
            let a = vars.adjacency(i, l).expect("off-diagonal");
            let shat = add_indicator_product(
                milp,
                &format!("SHAT_{i}_{l}"),
                "shat",
                &format!("{i}_{l}"),
                a,
                sil,
                1.0,
            )?;
            // an edge gives both endpoints degree at least 2
            let mut gated = Vec::new();
            let mut sum = LinExpr::from_terms([(shat, 1.0)]);
            for &(p, da, db, c) in &sel {
                if da < 2 || db < 2 {
                    continue;
                }
                let ca = add_indicator_product(
                    milp,
                    &format!("CA_{i}_{l}_{p}"),
                    "cand",
                    &format!("{i}_{l}_{p}"),
                    a,
                    c,
                    1.0,
                )?;
                sum.add(ca, -lookup.get(p));
                gated.push((p, lookup.get(p), ca));
            }
            milp.add_constraint(format!("shatsum_{i}_{l}"), &sum, Sense::Eq, 0.0)?;
            pairs.insert((i, l), gated);
        }
    }
    Ok(GcnSelection { diag, pairs })
}

/// Per node, a counting network over its adjacency binaries whose final
/// layer is the one-hot of the neighbour count (`[count = d]` at index `d`).
/// The network is integral whenever the adjacency is, which pins down the
/// coefficient selection once the structure is fixed.
fn degree_onehots(
    milp: &mut MilpModel,
    vars: &InputVars,
    top: usize,
) -> Result<Vec<Vec<VarId>>, EncodeError> {
    let n = vars.n_nodes();
    let cap = top - 1;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let others: Vec<usize> = (0..n).filter(|&l| l != i).collect();
        // count distribution after 0 steps: all mass at 0
        let start = milp.add_continuous(format!("DW_{i}_0_0"), 1.0, 1.0)?;
        let mut w: Vec<VarId> = vec![start];
        for (t, &l) in others.iter().enumerate() {
            let t = t + 1;
            let a = vars.adjacency(i, l).expect("off-diagonal");
            let mut take = LinExpr::from_terms([(a, -1.0)]);
            let mut stay = Vec::with_capacity(w.len());
            let mut step = Vec::with_capacity(w.len());
            for (c, &prev) in w.iter().enumerate() {
                let y0 = milp.add_continuous(format!("DY0_{i}_{t}_{c}"), 0.0, 1.0)?;
                let mut split = LinExpr::from_terms([(y0, 1.0), (prev, -1.0)]);
                let y1 = if c < cap {
                    let y1 = milp.add_continuous(format!("DY1_{i}_{t}_{c}"), 0.0, 1.0)?;
                    split.add(y1, 1.0);
                    take.add(y1, 1.0);
                    Some(y1)
                } else {
                    None
                };
                milp.add_constraint(format!("dsplit_{i}_{t}_{c}"), &split, Sense::Eq, 0.0)?;
                stay.push(y0);
                step.push(y1);
            }
            milp.add_constraint(format!("dtake_{i}_{t}"), &take, Sense::Eq, 0.0)?;
            let width = (w.len() + 1).min(cap + 1);
            let mut next = Vec::with_capacity(width);
            for c in 0..width {
                let wc = milp.add_continuous(format!("DW_{i}_{t}_{c}"), 0.0, 1.0)?;
                let mut merge = LinExpr::from_terms([(wc, 1.0)]);
                if let Some(&y0) = stay.get(c) {
                    merge.add(y0, -1.0);
                }
                if let Some(Some(y1)) = c.checked_sub(1).and_then(|p| step.get(p)) {
                    merge.add(*y1, -1.0);
                }
                milp.add_constraint(format!("dmerge_{i}_{t}_{c}"), &merge, Sense::Eq, 0.0)?;
                next.push(wc);
            }
            w = next;
        }
        // index by degree including the self-loop: onehot[d - 1] is [deg+ = d]
        let mut onehot = w;
        while onehot.len() < top {
            let z = milp.add_continuous(
                format!("DW_{i}_{}_{}", others.len(), onehot.len()),
                0.0,
                0.0,
            )?;
            onehot.push(z);
        }
        out.push(onehot);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, Matrix};
    use crate::solver::{solve, SolveStatus, SolverConfig};

    fn solve_value(milp: &MilpModel) -> f64 {
        let r = solve(milp, &SolverConfig::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        r.objective().unwrap()
    }

    fn identity_sage(width: usize) -> GnnModel {
        GnnModel::new(
            width,
            4,
            0.0,
            1.0,
            vec![
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
            ],
        )
        .unwrap()
    }

    #[test]
    fn mlp_affine_head() {
        let model = GnnModel::new(
            2,
            1,
            0.0,
            1.0,
            vec![Layer::Dense {
                weight: Matrix::new(1, 2, vec![2.0, -1.0]).unwrap(),
                bias: vec![0.5],
                activation: Activation::None,
            }],
        )
        .unwrap();
        let mut enc = encode(&model, &EncodeConfig::vector(Bounds::unit(2))).unwrap();
        enc.freeze_vector(&[0.25, 1.0]).unwrap();
        assert!((solve_value(&enc.milp) - 0.0).abs() < 1e-9);
    }

    #[test]
    fn mlp_dead_hidden_layer_gives_bias() {
        let model = GnnModel::new(
            2,
            1,
            0.0,
            1.0,
            vec![
                Layer::Dense {
                    weight: Matrix::new(2, 2, vec![-1.0, -1.0, -2.0, 0.0]).unwrap(),
                    bias: vec![-0.1, -0.5],
                    activation: Activation::Relu,
                },
                Layer::Dense {
                    weight: Matrix::new(1, 2, vec![3.0, 1.0]).unwrap(),
                    bias: vec![0.7],
                    activation: Activation::None,
                },
            ],
        )
        .unwrap();
        let enc = encode(&model, &EncodeConfig::vector(Bounds::unit(2))).unwrap();
        assert_eq!(enc.fixed.len(), 2);
        assert!(enc.milp.binaries().next().is_none());
        assert!((solve_value(&enc.milp) - 0.7).abs() < 1e-9);
    }

    #[test]
    fn sage_two_nodes_pools_to_two() {
        let model = identity_sage(2);
        let graph =
            GraphInput::from_edges(2, &[(0, 1)], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let enc = encode(&model, &EncodeConfig::fixed(graph.clone())).unwrap();
        let r = solve(&enc.milp, &SolverConfig::default()).unwrap();
        let inc = r.incumbent.unwrap();
        assert!((inc.value_of(&enc.milp, "POOL_0").unwrap() - 2.0).abs() < 1e-9);
        assert!((inc.value_of(&enc.milp, "POOL_1").unwrap() - 2.0).abs() < 1e-9);
        assert!((inc.objective_value - forward(&model, &graph).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn gcn_path_halves() {
        let model = GnnModel::new(
            1,
            1,
            0.0,
            1.0,
            vec![
                Layer::Gcn {
                    weight: Matrix::identity(1),
                    activation: Activation::Relu,
                },
                Layer::SumPool,
                Layer::Dense {
                    weight: Matrix::identity(1),
                    bias: vec![0.0],
                    activation: Activation::None,
                },
            ],
        )
        .unwrap();
        let graph = GraphInput::from_edges(2, &[(0, 1)], vec![vec![0.4], vec![1.0]]).unwrap();
        let enc = encode_gcn_fixed(&model, &graph).unwrap();
        let r = solve(&enc.milp, &SolverConfig::default()).unwrap();
        let inc = r.incumbent.unwrap();
        assert!((inc.value_of(&enc.milp, "H_0_0_0").unwrap() - 0.7).abs() < 1e-9);
        assert!((inc.objective_value - 1.4).abs() < 1e-9);
    }

    #[test]
    fn degree_and_mode_errors() {
        let model = identity_sage(14);
        let space = MoleculeSpace::simple(3).unwrap();
        let small = model.clone().with_d_max(1).unwrap();
        assert!(matches!(
            encode(&small, &EncodeConfig::variable(space.clone())),
            Err(EncodeError::Degree { .. })
        ));
        assert!(matches!(
            encode(&model, &EncodeConfig::vector(Bounds::unit(14))),
            Err(EncodeError::Mode(_))
        ));
        assert!(matches!(
            encode_gcn_variable(&model, &space),
            Err(EncodeError::Mode(_))
        ));
    }
}
