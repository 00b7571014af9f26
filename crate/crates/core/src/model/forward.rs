use super::{GnnModel, GraphInput, Layer, ModelError, NormalizedAdjacency};

/// Pre-activation values recorded during a forward pass, indexed like the
/// model's layer list. Graph layers hold one row per node; pooling and dense
/// layers hold a single row.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub pre_activations: Vec<Vec<Vec<f64>>>,
    pub output: f64,
}

/// Scalar prediction of `model` on `graph`.
pub fn forward(model: &GnnModel, graph: &GraphInput) -> Result<f64, ModelError> {
    forward_trace(model, graph).map(|t| t.output)
}

pub fn forward_trace(model: &GnnModel, graph: &GraphInput) -> Result<ForwardTrace, ModelError> {
    if model.pool_index().is_none() {
        return Err(ModelError::Graph(
            "model has no pooling layer and reads a flat vector; use forward_vector".into(),
        ));
    }
    if graph.feature_width() != model.input_width() {
        return Err(ModelError::Chain {
            layer: 0,
            expected: model.input_width(),
            found: graph.feature_width(),
        });
    }
    let n = graph.n_nodes();
    let mut h: Vec<Vec<f64>> = (0..n).map(|i| graph.feature_row(i).to_vec()).collect();
    let mut pre_activations = Vec::with_capacity(model.layers().len());
    let mut vector: Vec<f64> = Vec::new();
    let norm = model
        .graph_layers()
        .iter()
        .any(|l| matches!(l, Layer::Gcn { .. }))
        .then(|| NormalizedAdjacency::new(graph));

    for layer in model.layers() {
        match layer {
            Layer::Gcn { weight, activation } => {
                let norm = norm
                    .as_ref()
                    .expect("normalised adjacency computed for GCN");
                let projected: Vec<Vec<f64>> = h.iter().map(|row| weight.apply(row)).collect();
                let pre: Vec<Vec<f64>> = (0..n)
                    .map(|i| {
                        let mut acc = vec![0.0; weight.rows()];
                        for (l, row) in projected.iter().enumerate() {
                            let a = norm.get(i, l);
                            if a != 0.0 {
                                for (dst, v) in acc.iter_mut().zip(row) {
                                    *dst += a * v;
                                }
                            }
                        }
                        acc
                    })
                    .collect();
                h = pre
                    .iter()
                    .map(|r| r.iter().map(|&v| activation.apply(v)).collect())
                    .collect();
                pre_activations.push(pre);
            }
            Layer::Sage {
                root,
                neighbor,
                activation,
            } => {
                let pre: Vec<Vec<f64>> = (0..n)
                    .map(|i| {
                        let mut agg = vec![0.0; h[i].len()];
                        for l in graph.neighbors(i) {
                            for (dst, v) in agg.iter_mut().zip(&h[l]) {
                                *dst += v;
                            }
                        }
                        root.apply(&h[i])
                            .into_iter()
                            .zip(neighbor.apply(&agg))
                            .map(|(a, b)| a + b)
                            .collect()
                    })
                    .collect();
                h = pre
                    .iter()
                    .map(|r| r.iter().map(|&v| activation.apply(v)).collect())
                    .collect();
                pre_activations.push(pre);
            }
            Layer::SumPool => {
                let width = h.first().map_or(0, Vec::len);
                vector = (0..width).map(|j| h.iter().map(|r| r[j]).sum()).collect();
                pre_activations.push(vec![vector.clone()]);
            }
            Layer::Dense {
                weight,
                bias,
                activation,
            } => {
                let pre: Vec<f64> = weight
                    .apply(&vector)
                    .into_iter()
                    .zip(bias)
                    .map(|(v, b)| v + b)
                    .collect();
                vector = pre.iter().map(|&v| activation.apply(v)).collect();
                pre_activations.push(vec![pre]);
            }
        }
    }
    Ok(ForwardTrace {
        pre_activations,
        output: vector[0],
    })
}

impl GnnModel {
    /// Forward pass of a pure dense model on a flat input vector.
    pub fn forward_vector(&self, x: &[f64]) -> Result<f64, ModelError> {
        if self.pool_index().is_some() {
            return Err(ModelError::Graph("model expects a graph input".into()));
        }
        if x.len() != self.input_width() {
            return Err(ModelError::Chain {
                layer: 0,
                expected: self.input_width(),
                found: x.len(),
            });
        }
        let mut v = x.to_vec();
        for layer in self.layers() {
            if let Layer::Dense {
                weight,
                bias,
                activation,
            } = layer
            {
                v = weight
                    .apply(&v)
                    .into_iter()
                    .zip(bias)
                    .map(|(a, b)| activation.apply(a + b))
                    .collect();
            }
        }
        Ok(v[0])
    }
}
