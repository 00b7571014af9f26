//! Feasibility-based bound tightening.
//!
//! Interval propagation of an input box through the network. Every node of
//! the graph sees the same input box, so bounds are computed once per layer
//! and feature and shared by all nodes.

use std::collections::BTreeMap;

use crate::model::{Activation, GnnModel, Layer, LayerKind, Matrix};

/// Closed interval bounds for each feature of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        Self { lower, upper }
    }

    pub fn uniform(width: usize, lo: f64, hi: f64) -> Self {
        Self::new(vec![lo; width], vec![hi; width])
    }

    /// The `[0, 1]^width` box of one-hot molecule features.
    pub fn unit(width: usize) -> Self {
        Self::uniform(width, 0.0, 1.0)
    }

    pub fn width(&self) -> usize {
        self.lower.len()
    }

    pub fn is_valid(&self) -> bool {
        self.lower.iter().zip(&self.upper).all(|(l, u)| l <= u)
    }

    pub fn contains(&self, values: &[f64], tol: f64) -> bool {
        values
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol)
    }

    /// Bounds after applying `activation` elementwise.
    pub fn activated(&self, activation: Activation) -> Bounds {
        match activation {
            Activation::Relu => self.relu(),
            Activation::None => self.clone(),
        }
    }

    pub fn relu(&self) -> Bounds {
        Bounds::new(
            self.lower.iter().map(|v| v.max(0.0)).collect(),
            self.upper.iter().map(|v| v.max(0.0)).collect(),
        )
    }

    pub fn scaled(&self, factor: f64) -> Bounds {
        assert!(factor >= 0.0);
        Bounds::new(
            self.lower.iter().map(|v| v * factor).collect(),
            self.upper.iter().map(|v| v * factor).collect(),
        )
    }
}

/// Interval bounds of `W x` over the box `x in [lo, hi]`.
fn linear_bounds(w: &Matrix, input: &Bounds) -> Bounds {
    let mut lower = Vec::with_capacity(w.rows());
    let mut upper = Vec::with_capacity(w.rows());
    for r in 0..w.rows() {
        let (mut lo, mut hi) = (0.0, 0.0);
        for (c, &wv) in w.row(r).iter().enumerate() {
            let a = wv * input.lower[c];
            let b = wv * input.upper[c];
            lo += a.min(b);
            hi += a.max(b);
        }
        lower.push(lo);
        upper.push(hi);
    }
    Bounds::new(lower, upper)
}

fn add(a: &Bounds, b: &Bounds) -> Bounds {
    Bounds::new(
        a.lower.iter().zip(&b.lower).map(|(x, y)| x + y).collect(),
        a.upper.iter().zip(&b.upper).map(|(x, y)| x + y).collect(),
    )
}

/// Pre-activation bounds of a dense layer `W x + b`.
///
/// When `first_layer` is false the inputs are outputs of a ReLU layer, so the
/// input box is clamped at zero before propagation.
pub fn mlp_bounds(w: &Matrix, b: Option<&[f64]>, input: &Bounds, first_layer: bool) -> Bounds {
    let input = if first_layer {
        input.clone()
    } else {
        input.relu()
    };
    let mut out = linear_bounds(w, &input);
    if let Some(b) = b {
        for (r, &bias) in b.iter().enumerate() {
            out.lower[r] += bias;
            out.upper[r] += bias;
        }
    }
    out
}

/// Worst-case weight of a node's normalised neighbourhood sum:
/// `sqrt((d_max + 1) / 2)`.
pub fn gcn_scale(d_max: usize) -> f64 {
    ((d_max as f64 + 1.0) / 2.0).sqrt()
}

/// Smallest total weight a normalised neighbourhood can carry:
/// `sqrt(2 / (d_max + 1))`.
pub fn gcn_min_scale(d_max: usize) -> f64 {
    (2.0 / (d_max as f64 + 1.0)).sqrt()
}

/// Bounds of a GCN layer given post-activation bounds of its input.
///
/// Each output is a nonnegative combination of per-neighbour projections
/// whose total weight lies in `[gcn_min_scale, gcn_scale]`. The large factor
/// applies to the sign-indefinite side of the interval; the small one only
/// matters when the projection interval excludes zero.
pub fn gcn_bounds(weight: &Matrix, d_max: usize, input: &Bounds) -> Bounds {
    let proj = linear_bounds(weight, input);
    let (big, small) = (gcn_scale(d_max), gcn_min_scale(d_max));
    Bounds::new(
        proj.lower
            .iter()
            .map(|&l| (big * l).min(small * l))
            .collect(),
        proj.upper
            .iter()
            .map(|&u| (big * u).max(small * u))
            .collect(),
    )
}

/// Multiplier applied to the neighbour-aggregation term of a SAGE layer.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum NeighborScale {
    /// Up to `d_max` neighbours summed without normalisation. Sound.
    #[default]
    MaxDegree,
    /// `sqrt(d_max / 2)`, borrowed from the GCN normalisation. Not a valid
    /// bound for `add` aggregation once more than a couple of neighbours are
    /// active; kept for comparison only.
    SqrtHalfDegree,
}

impl NeighborScale {
    pub fn factor(self, d_max: usize) -> f64 {
        match self {
            NeighborScale::MaxDegree => d_max as f64,
            NeighborScale::SqrtHalfDegree => (d_max as f64 / 2.0).sqrt(),
        }
    }
}

/// Bounds of a SAGE layer: root term as a bias-free dense layer plus the
/// neighbour term over `0..=d_max` aggregated neighbours.
pub fn sage_bounds(
    root: &Matrix,
    neighbor: &Matrix,
    d_max: usize,
    scale: NeighborScale,
    input: &Bounds,
) -> Bounds {
    let root_part = linear_bounds(root, input);
    let nb = linear_bounds(neighbor, input);
    let factor = scale.factor(d_max);
    let nb_part = match scale {
        NeighborScale::MaxDegree => Bounds::new(
            nb.lower.iter().map(|&l| (factor * l).min(0.0)).collect(),
            nb.upper.iter().map(|&u| (factor * u).max(0.0)).collect(),
        ),
        NeighborScale::SqrtHalfDegree => nb.scaled(factor),
    };
    add(&root_part, &nb_part)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbbtOptions {
    pub neighbor_scale: NeighborScale,
}

impl Default for FbbtOptions {
    fn default() -> Self {
        Self {
            neighbor_scale: NeighborScale::MaxDegree,
        }
    }
}

/// Bounds for one model layer. `pre` bounds the value before the
/// activation, `post` after it. For pooling both hold the pooled vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBounds {
    pub kind: LayerKind,
    pub pre: Bounds,
    pub post: Bounds,
}

/// Per-layer, per-feature bounds shared by every node of a graph with
/// `n_nodes` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsTable {
    pub n_nodes: usize,
    pub d_max: usize,
    pub input: Bounds,
    pub layers: Vec<LayerBounds>,
}

impl BoundsTable {
    /// `L[k][i][j]`; the node index only matters for range checks.
    pub fn lower(&self, layer: usize, node: usize, feature: usize) -> f64 {
        self.check_node(layer, node);
        self.layers[layer].pre.lower[feature]
    }

    pub fn upper(&self, layer: usize, node: usize, feature: usize) -> f64 {
        self.check_node(layer, node);
        self.layers[layer].pre.upper[feature]
    }

    fn check_node(&self, layer: usize, node: usize) {
        let per_node = matches!(self.layers[layer].kind, LayerKind::Gcn | LayerKind::Sage);
        assert!(node < if per_node { self.n_nodes } else { 1 });
    }

    /// Post-activation bounds of the values feeding layer `layer`.
    pub fn input_to(&self, layer: usize) -> &Bounds {
        if layer == 0 {
            &self.input
        } else {
            &self.layers[layer - 1].post
        }
    }

    pub fn is_valid(&self) -> bool {
        self.input.is_valid()
            && self
                .layers
                .iter()
                .all(|l| l.pre.is_valid() && l.post.is_valid())
    }
}

/// Propagates `input` through every layer of `model` for graphs of
/// `n_nodes` nodes with degree at most `model.d_max()`.
pub fn compute_bounds(
    model: &GnnModel,
    n_nodes: usize,
    input: &Bounds,
    opts: FbbtOptions,
) -> BoundsTable {
    assert_eq!(input.width(), model.input_width());
    let d_max = model.d_max();
    let mut layers: Vec<LayerBounds> = Vec::with_capacity(model.layers().len());
    for layer in model.layers() {
        let prev = layers.last().map_or(input, |l| &l.post);
        let pre = match layer {
            Layer::Gcn { weight, .. } => gcn_bounds(weight, d_max, prev),
            Layer::Sage { root, neighbor, .. } => {
                sage_bounds(root, neighbor, d_max, opts.neighbor_scale, prev)
            }
            Layer::SumPool => {
                // a sum of n_nodes terms each in [lo, hi]
                let n = n_nodes as f64;
                prev.scaled(n)
            }
            Layer::Dense { weight, bias, .. } => mlp_bounds(weight, Some(bias), prev, true),
        };
        let post = pre.activated(layer.activation());
        layers.push(LayerBounds {
            kind: layer.kind(),
            pre,
            post,
        });
    }
    BoundsTable {
        n_nodes,
        d_max,
        input: input.clone(),
        layers,
    }
}

/// Activation binaries whose value is implied by sign-definite bounds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FixedActivations {
    fixed: BTreeMap<(usize, usize, usize), bool>,
}

impl FixedActivations {
    pub fn get(&self, layer: usize, node: usize, feature: usize) -> Option<bool> {
        self.fixed.get(&(layer, node, feature)).copied()
    }

    pub fn len(&self) -> usize {
        self.fixed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixed.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize, usize), bool)> + '_ {
        self.fixed.iter().map(|(k, v)| (*k, *v))
    }
}

/// Decides the activation of a single neuron from its bounds.
pub fn fixed_activation(lower: f64, upper: f64) -> Option<bool> {
    if upper <= 0.0 {
        Some(false)
    } else if lower >= 0.0 {
        Some(true)
    } else {
        None
    }
}

/// Fixes `z = 1` where `L >= 0` and `z = 0` where `U <= 0`, for every ReLU
/// neuron of every node.
pub fn fix_activations(model: &GnnModel, bounds: &BoundsTable) -> FixedActivations {
    let mut fixed = BTreeMap::new();
    for (k, layer) in model.layers().iter().enumerate() {
        if layer.activation() != Activation::Relu {
            continue;
        }
        let nodes = if layer.is_graph_layer() {
            bounds.n_nodes
        } else {
            1
        };
        let lb = &bounds.layers[k].pre;
        for j in 0..lb.width() {
            if let Some(v) = fixed_activation(lb.lower[j], lb.upper[j]) {
                for i in 0..nodes {
                    fixed.insert((k, i, j), v);
                }
            }
        }
    }
    FixedActivations { fixed }
}
