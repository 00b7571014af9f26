//! Network and graph data model, the portable weights format and the
//! reference forward pass.

mod forward;
mod graph;
mod io;
mod random;

pub use forward::{forward, forward_trace, ForwardTrace};
pub use graph::{GraphInput, NormalizedAdjacency};
pub use io::{
    graph_to_json, load_graph, load_model, parse_graph, parse_model, save_graph, save_model,
    to_json,
};
pub use random::{random_graph, RandomModelSpec};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("schema error in {location}: {message}")]
    Schema { location: String, message: String },
    #[error("layer chain broken at layer {layer}: expected input width {expected}, found {found}")]
    Chain {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("graph does not match model: {0}")]
    Graph(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),
}

impl ModelError {
    pub(crate) fn schema(location: impl Into<String>, message: impl Into<String>) -> Self {
        ModelError::Schema {
            location: location.into(),
            message: message.into(),
        }
    }
}

/// Dense row-major matrix with `rows` outputs and `cols` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, ModelError> {
        if data.len() != rows * cols {
            return Err(ModelError::Invalid(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(ModelError::Invalid(format!("non-finite matrix entry {v}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `W x` for a column vector `x` of length `cols`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::None => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Gcn,
    Sage,
    SumPool,
    Dense,
}

/// One layer of a trained network. Weight matrices are stored `n_out x n_in`.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// Degree-normalised convolution over the graph with self-loops added.
    Gcn {
        weight: Matrix,
        activation: Activation,
    },
    /// GraphSAGE with `add` aggregation over all neighbours.
    Sage {
        root: Matrix,
        neighbor: Matrix,
        activation: Activation,
    },
    SumPool,
    Dense {
        weight: Matrix,
        bias: Vec<f64>,
        activation: Activation,
    },
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Gcn { .. } => LayerKind::Gcn,
            Layer::Sage { .. } => LayerKind::Sage,
            Layer::SumPool => LayerKind::SumPool,
            Layer::Dense { .. } => LayerKind::Dense,
        }
    }

    pub fn activation(&self) -> Activation {
        match self {
            Layer::Gcn { activation, .. }
            | Layer::Sage { activation, .. }
            | Layer::Dense { activation, .. } => *activation,
            Layer::SumPool => Activation::None,
        }
    }

    /// Input width, or `None` for pooling (width preserving).
    pub fn input_width(&self) -> Option<usize> {
        match self {
            Layer::Gcn { weight, .. } | Layer::Dense { weight, .. } => Some(weight.cols()),
            Layer::Sage { root, .. } => Some(root.cols()),
            Layer::SumPool => None,
        }
    }

    pub fn output_width(&self) -> Option<usize> {
        match self {
            Layer::Gcn { weight, .. } | Layer::Dense { weight, .. } => Some(weight.rows()),
            Layer::Sage { root, .. } => Some(root.rows()),
            Layer::SumPool => None,
        }
    }

    pub fn is_graph_layer(&self) -> bool {
        matches!(self, Layer::Gcn { .. } | Layer::Sage { .. })
    }
}

/// Network architecture as seen by the encoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    /// Dense layers only, no pooling.
    Mlp,
    /// Pooling over raw features, then dense layers.
    PoolOnly,
    Gcn,
    Sage,
    /// Both GCN and SAGE layers present.
    Mixed,
}

/// A trained network: graph layers, one sum pool, then a dense head ending in
/// a single linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    input_width: usize,
    d_max: usize,
    target_mean: f64,
    target_std: f64,
    layers: Vec<Layer>,
}

impl GnnModel {
    pub fn new(
        input_width: usize,
        d_max: usize,
        target_mean: f64,
        target_std: f64,
        layers: Vec<Layer>,
    ) -> Result<Self, ModelError> {
        let model = Self {
            input_width,
            d_max,
            target_mean,
            target_std,
            layers,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.input_width == 0 {
            return Err(ModelError::Invalid("input width must be positive".into()));
        }
        if self.d_max < 1 {
            return Err(ModelError::Invalid("d_max must be at least 1".into()));
        }
        if !(self.target_std > 0.0 && self.target_std.is_finite()) || !self.target_mean.is_finite()
        {
            return Err(ModelError::Invalid(
                "target_std must be positive and target_mean finite".into(),
            ));
        }
        if self.layers.is_empty() {
            return Err(ModelError::Invalid("model has no layers".into()));
        }

        let pools: Vec<usize> = self
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::SumPool))
            .map(|(k, _)| k)
            .collect();
        if pools.len() > 1 {
            return Err(ModelError::Invalid(format!(
                "expected at most one SUMPOOL layer, found {}",
                pools.len()
            )));
        }
        let pool_at = pools.first().copied();
        for (k, layer) in self.layers.iter().enumerate() {
            let before_pool = pool_at.is_some_and(|p| k < p);
            if layer.is_graph_layer() && !before_pool {
                return Err(ModelError::Invalid(format!(
                    "graph layer {k} must precede the SUMPOOL layer"
                )));
            }
            if matches!(layer, Layer::Dense { .. }) && before_pool {
                return Err(ModelError::Invalid(format!(
                    "dense layer {k} must follow the SUMPOOL layer"
                )));
            }
            if let Layer::Sage { root, neighbor, .. } = layer {
                if root.rows() != neighbor.rows() || root.cols() != neighbor.cols() {
                    return Err(ModelError::Invalid(format!(
                        "SAGE layer {k}: root {}x{} and neighbour {}x{} weights differ in shape",
                        root.rows(),
                        root.cols(),
                        neighbor.rows(),
                        neighbor.cols()
                    )));
                }
            }
            if let Layer::Dense { weight, bias, .. } = layer {
                if bias.len() != weight.rows() {
                    return Err(ModelError::Invalid(format!(
                        "dense layer {k}: bias length {} does not match {} outputs",
                        bias.len(),
                        weight.rows()
                    )));
                }
                if bias.iter().any(|b| !b.is_finite()) {
                    return Err(ModelError::Invalid(format!(
                        "dense layer {k}: non-finite bias"
                    )));
                }
            }
        }

        let mut width = self.input_width;
        for (k, layer) in self.layers.iter().enumerate() {
            if let Some(expected_in) = layer.input_width() {
                if expected_in != width {
                    return Err(ModelError::Chain {
                        layer: k,
                        expected: width,
                        found: expected_in,
                    });
                }
            }
            width = layer.output_width().unwrap_or(width);
        }

        match self.layers.last() {
            Some(Layer::Dense {
                weight, activation, ..
            }) if weight.rows() == 1 && *activation == Activation::None => Ok(()),
            _ => Err(ModelError::Invalid(
                "final layer must be DENSE with width 1 and no activation".into(),
            )),
        }
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }

    pub fn target_mean(&self) -> f64 {
        self.target_mean
    }

    pub fn target_std(&self) -> f64 {
        self.target_std
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Index of the pooling layer, if the model reads a graph.
    pub fn pool_index(&self) -> Option<usize> {
        self.layers.iter().position(|l| matches!(l, Layer::SumPool))
    }

    pub fn graph_layers(&self) -> &[Layer] {
        match self.pool_index() {
            Some(p) => &self.layers[..p],
            None => &[],
        }
    }

    pub fn head_layers(&self) -> &[Layer] {
        match self.pool_index() {
            Some(p) => &self.layers[p + 1..],
            None => &self.layers,
        }
    }

    pub fn architecture(&self) -> Architecture {
        if self.pool_index().is_none() {
            return Architecture::Mlp;
        }
        let gcn = self
            .graph_layers()
            .iter()
            .any(|l| l.kind() == LayerKind::Gcn);
        let sage = self
            .graph_layers()
            .iter()
            .any(|l| l.kind() == LayerKind::Sage);
        match (gcn, sage) {
            (false, false) => Architecture::PoolOnly,
            (true, false) => Architecture::Gcn,
            (false, true) => Architecture::Sage,
            (true, true) => Architecture::Mixed,
        }
    }

    /// Width of the vector entering the dense head.
    pub fn pooled_width(&self) -> usize {
        self.graph_layers()
            .iter()
            .rev()
            .find_map(|l| l.output_width())
            .unwrap_or(self.input_width)
    }

    /// Maps a normalised network output back to the physical property scale.
    pub fn denormalize(&self, obj: f64) -> f64 {
        denormalize(self.target_mean, self.target_std, obj)
    }

    /// Copy of the model with different denormalisation constants.
    pub fn with_target(mut self, mean: f64, std: f64) -> Result<Self, ModelError> {
        self.target_mean = mean;
        self.target_std = std;
        self.validate()?;
        Ok(self)
    }

    pub fn with_d_max(mut self, d_max: usize) -> Result<Self, ModelError> {
        self.d_max = d_max;
        self.validate()?;
        Ok(self)
    }
}

/// `mean + std * obj`.
pub fn denormalize(mean: f64, std: f64, obj: f64) -> f64 {
    mean + std * obj
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(rows: usize, cols: usize, act: Activation) -> Layer {
        Layer::Dense {
            weight: Matrix::zeros(rows, cols),
            bias: vec![0.0; rows],
            activation: act,
        }
    }

    #[test]
    fn chain_error_reports_both_widths() {
        let sage = Layer::Sage {
            root: Matrix::zeros(16, 14),
            neighbor: Matrix::zeros(16, 14),
            activation: Activation::Relu,
        };
        let err = GnnModel::new(
            14,
            4,
            0.0,
            1.0,
            vec![sage, Layer::SumPool, dense(1, 8, Activation::None)],
        )
        .unwrap_err();
        match err {
            ModelError::Chain {
                layer,
                expected,
                found,
            } => {
                assert_eq!((layer, expected, found), (2, 16, 8));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn final_layer_must_be_linear_scalar() {
        let err = GnnModel::new(2, 4, 0.0, 1.0, vec![dense(1, 2, Activation::Relu)]);
        assert!(err.is_err());
        let err = GnnModel::new(2, 4, 0.0, 1.0, vec![dense(2, 2, Activation::None)]);
        assert!(err.is_err());
    }

    #[test]
    fn graph_layers_need_a_pool() {
        let gcn = Layer::Gcn {
            weight: Matrix::zeros(2, 2),
            activation: Activation::Relu,
        };
        assert!(GnnModel::new(2, 4, 0.0, 1.0, vec![gcn, dense(1, 2, Activation::None)]).is_err());
    }

    #[test]
    fn rejects_bad_target_constants() {
        assert!(GnnModel::new(2, 4, 0.0, 0.0, vec![dense(1, 2, Activation::None)]).is_err());
        assert!(GnnModel::new(2, 0, 0.0, 1.0, vec![dense(1, 2, Activation::None)]).is_err());
    }

    #[test]
    fn denormalization_constants() {
        let m = GnnModel::new(2, 4, 312.64, 62.98, vec![dense(1, 2, Activation::None)]).unwrap();
        assert_eq!(m.denormalize(0.0), 312.64);
        assert!((m.denormalize(1.0) - 375.62).abs() < 1e-12);
        assert!((m.denormalize(0.63) - 352.3174).abs() < 1e-9);
    }

    #[test]
    fn architecture_detection() {
        let pool_only = GnnModel::new(
            3,
            4,
            0.0,
            1.0,
            vec![Layer::SumPool, dense(1, 3, Activation::None)],
        )
        .unwrap();
        assert_eq!(pool_only.architecture(), Architecture::PoolOnly);
        assert_eq!(pool_only.pooled_width(), 3);
        let mlp = GnnModel::new(3, 4, 0.0, 1.0, vec![dense(1, 3, Activation::None)]).unwrap();
        assert_eq!(mlp.architecture(), Architecture::Mlp);
    }
}
