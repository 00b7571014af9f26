//! Portable weights format and graph fixtures.
//!
//! ```json
//! {
//!   "f_input_width": 14, "d_max": 4, "target_mean": 312.64, "target_std": 62.98,
//!   "layers": [
//!     {"kind": "SAGE", "activation": "RELU", "aggregation": "add",
//!      "w_root": {"rows": 16, "cols": 14, "data": [...]},
//!      "w_agg":  {"rows": 16, "cols": 14, "data": [...]}},
//!     {"kind": "SUMPOOL"},
//!     {"kind": "DENSE", "activation": "NONE", "w": {"rows": 1, "cols": 16, "data": [...]}, "b": [0.1]}
//!   ]
//! }
//! ```
//!
//! Matrices are `n_out x n_in`, flattened row-major. Graph fixtures are
//! `{"n": 3, "adjacency": [...n*n 0/1...], "features": [...n*F...]}`.

use std::path::Path;

use serde_json::{json, Map, Value};

use super::{Activation, GnnModel, GraphInput, Layer, Matrix, ModelError};

pub fn load_model(path: impl AsRef<Path>) -> Result<GnnModel, ModelError> {
    let text = std::fs::read_to_string(path)?;
    parse_model(&text)
}

pub fn save_model(model: &GnnModel, path: impl AsRef<Path>) -> Result<(), ModelError> {
    std::fs::write(path, serde_json::to_string_pretty(&to_json(model))?)?;
    Ok(())
}

pub fn parse_model(text: &str) -> Result<GnnModel, ModelError> {
    let root: Value = serde_json::from_str(text)?;
    let obj = root
        .as_object()
        .ok_or_else(|| ModelError::schema("document", "top level must be an object"))?;
    let input_width = get_usize(obj, "f_input_width", "document")?;
    let d_max = get_usize(obj, "d_max", "document")?;
    let target_mean = get_f64(obj, "target_mean", "document")?;
    let target_std = get_f64(obj, "target_std", "document")?;
    let layers = obj
        .get("layers")
        .and_then(Value::as_array)
        .ok_or_else(|| ModelError::schema("document.layers", "missing or not an array"))?;
    let layers = layers
        .iter()
        .enumerate()
        .map(|(k, v)| parse_layer(k, v))
        .collect::<Result<Vec<_>, _>>()?;
    GnnModel::new(input_width, d_max, target_mean, target_std, layers)
}

fn parse_layer(k: usize, value: &Value) -> Result<Layer, ModelError> {
    let loc = format!("layers[{k}]");
    let obj = value
        .as_object()
        .ok_or_else(|| ModelError::schema(&loc, "layer must be an object"))?;
    let kind = obj
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| ModelError::schema(format!("{loc}.kind"), "missing layer kind"))?;
    let activation = || -> Result<Activation, ModelError> {
        match obj.get("activation").and_then(Value::as_str) {
            Some(s) if s.eq_ignore_ascii_case("relu") => Ok(Activation::Relu),
            Some(s) if s.eq_ignore_ascii_case("none") => Ok(Activation::None),
            Some(s) => Err(ModelError::schema(
                format!("{loc}.activation"),
                format!("unknown activation {s:?}"),
            )),
            None => Err(ModelError::schema(format!("{loc}.activation"), "missing")),
        }
    };
    match kind.to_ascii_uppercase().as_str() {
        "GCN" => Ok(Layer::Gcn {
            weight: parse_matrix(obj, "w", &loc)?,
            activation: activation()?,
        }),
        "SAGE" => {
            if let Some(agg) = obj.get("aggregation") {
                if agg.as_str().map(str::to_ascii_lowercase).as_deref() != Some("add") {
                    return Err(ModelError::schema(
                        format!("{loc}.aggregation"),
                        format!("only `add` aggregation is supported, got {agg}"),
                    ));
                }
            }
            let root = parse_matrix(obj, "w_root", &loc)?;
            let neighbor = parse_matrix(obj, "w_agg", &loc)?;
            if (root.rows(), root.cols()) != (neighbor.rows(), neighbor.cols()) {
                return Err(ModelError::schema(
                    format!("{loc}.w_agg"),
                    format!(
                        "shape {}x{} differs from w_root {}x{}",
                        neighbor.rows(),
                        neighbor.cols(),
                        root.rows(),
                        root.cols()
                    ),
                ));
            }
            Ok(Layer::Sage {
                root,
                neighbor,
                activation: activation()?,
            })
        }
        "SUMPOOL" => Ok(Layer::SumPool),
        "DENSE" => {
            let weight = parse_matrix(obj, "w", &loc)?;
            let bias = obj
                .get("b")
                .and_then(Value::as_array)
                .ok_or_else(|| ModelError::schema(format!("{loc}.b"), "missing bias array"))?
                .iter()
                .map(|v| {
                    v.as_f64()
                        .ok_or_else(|| ModelError::schema(format!("{loc}.b"), "non-numeric entry"))
                })
                .collect::<Result<Vec<_>, _>>()?;
            if bias.len() != weight.rows() {
                return Err(ModelError::schema(
                    format!("{loc}.b"),
                    format!(
                        "length {} does not match {} rows of w",
                        bias.len(),
                        weight.rows()
                    ),
                ));
            }
            Ok(Layer::Dense {
                weight,
                bias,
                activation: activation()?,
            })
        }
        other => Err(ModelError::schema(
            format!("{loc}.kind"),
            format!("unsupported layer kind {other:?}"),
        )),
    }
}

fn parse_matrix(obj: &Map<String, Value>, field: &str, loc: &str) -> Result<Matrix, ModelError> {
    let floc = format!("{loc}.{field}");
    let m = obj
        .get(field)
        .and_then(Value::as_object)
        .ok_or_else(|| ModelError::schema(&floc, "missing matrix"))?;
    let rows = get_usize(m, "rows", &floc)?;
    let cols = get_usize(m, "cols", &floc)?;
    let data = m
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| ModelError::schema(format!("{floc}.data"), "missing data array"))?
        .iter()
        .map(|v| {
            v.as_f64()
                .ok_or_else(|| ModelError::schema(format!("{floc}.data"), "non-numeric entry"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if data.len() != rows * cols {
        return Err(ModelError::schema(
            format!("{floc}.data"),
            format!("{} entries for a {rows}x{cols} matrix", data.len()),
        ));
    }
    Matrix::new(rows, cols, data).map_err(|e| ModelError::schema(&floc, e.to_string()))
}

fn get_usize(obj: &Map<String, Value>, field: &str, loc: &str) -> Result<usize, ModelError> {
    obj.get(field)
        .and_then(Value::as_u64)
        .map(|v| v as usize)
        .ok_or_else(|| {
            ModelError::schema(
                format!("{loc}.{field}"),
                "missing or not a non-negative integer",
            )
        })
}

fn get_f64(obj: &Map<String, Value>, field: &str, loc: &str) -> Result<f64, ModelError> {
    obj.get(field)
        .and_then(Value::as_f64)
        .ok_or_else(|| ModelError::schema(format!("{loc}.{field}"), "missing or not a number"))
}

fn matrix_json(m: &Matrix) -> Value {
    json!({"rows": m.rows(), "cols": m.cols(), "data": m.data()})
}

fn activation_json(a: Activation) -> &'static str {
    match a {
        Activation::Relu => "RELU",
        Activation::None => "NONE",
    }
}

pub fn to_json(model: &GnnModel) -> Value {
    let layers: Vec<Value> = model
        .layers()
        .iter()
        .map(|layer| match layer {
            Layer::Gcn { weight, activation } => json!({
                "kind": "GCN",
                "activation": activation_json(*activation),
                "w": matrix_json(weight),
            }),
            Layer::Sage {
                root,
                neighbor,
                activation,
            } => json!({
                "kind": "SAGE",
                "activation": activation_json(*activation),
                "aggregation": "add",
                "w_root": matrix_json(root),
                "w_agg": matrix_json(neighbor),
            }),
            Layer::SumPool => json!({"kind": "SUMPOOL"}),
            Layer::Dense {
                weight,
                bias,
                activation,
            } => json!({
                "kind": "DENSE",
                "activation": activation_json(*activation),
                "w": matrix_json(weight),
                "b": bias,
            }),
        })
        .collect();
    json!({
        "f_input_width": model.input_width(),
        "d_max": model.d_max(),
        "target_mean": model.target_mean(),
        "target_std": model.target_std(),
        "layers": layers,
    })
}

pub fn parse_graph(text: &str) -> Result<GraphInput, ModelError> {
    let root: Value = serde_json::from_str(text)?;
    let obj = root
        .as_object()
        .ok_or_else(|| ModelError::schema("graph", "top level must be an object"))?;
    let n = get_usize(obj, "n", "graph")?;
    let adjacency = obj
        .get("adjacency")
        .and_then(Value::as_array)
        .ok_or_else(|| ModelError::schema("graph.adjacency", "missing array"))?
        .iter()
        .map(|v| match v.as_f64() {
            Some(x) if x == 0.0 => Ok(false),
            Some(x) if x == 1.0 => Ok(true),
            _ => v
                .as_bool()
                .ok_or_else(|| ModelError::schema("graph.adjacency", "entries must be 0 or 1")),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let features = obj
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| ModelError::schema("graph.features", "missing array"))?
        .iter()
        .map(|v| {
            v.as_f64()
                .ok_or_else(|| ModelError::schema("graph.features", "non-numeric entry"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    GraphInput::new(n, adjacency, features)
}

pub fn graph_to_json(graph: &GraphInput) -> Value {
    let adjacency: Vec<u8> = graph.adjacency().iter().map(|&a| a as u8).collect();
    json!({"n": graph.n_nodes(), "adjacency": adjacency, "features": graph.features()})
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<GraphInput, ModelError> {
    parse_graph(&std::fs::read_to_string(path)?)
}

pub fn save_graph(graph: &GraphInput, path: impl AsRef<Path>) -> Result<(), ModelError> {
    std::fs::write(path, serde_json::to_string(&graph_to_json(graph))?)?;
    Ok(())
}

impl GraphInput {
    pub fn to_json(&self) -> String {
        graph_to_json(self).to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_dense_model() {
        let text = r#"{"f_input_width": 2, "d_max": 4, "target_mean": 0.0, "target_std": 1.0,
            "layers": [{"kind": "DENSE", "activation": "NONE",
                        "w": {"rows": 1, "cols": 2, "data": [1.0, 2.0]}, "b": [0.0]}]}"#;
        let model = parse_model(text).unwrap();
        assert_eq!(model.layers().len(), 1);
        assert_eq!(model.forward_vector(&[1.0, 1.0]).unwrap(), 3.0);
    }

    #[test]
    fn mean_aggregation_is_rejected() {
        let text = r#"{"f_input_width": 1, "d_max": 4, "target_mean": 0.0, "target_std": 1.0,
            "layers": [{"kind": "SAGE", "activation": "RELU", "aggregation": "mean",
                        "w_root": {"rows": 1, "cols": 1, "data": [1.0]},
                        "w_agg": {"rows": 1, "cols": 1, "data": [1.0]}},
                       {"kind": "SUMPOOL"},
                       {"kind": "DENSE", "activation": "NONE",
                        "w": {"rows": 1, "cols": 1, "data": [1.0]}, "b": [0.0]}]}"#;
        match parse_model(text) {
            Err(ModelError::Schema { location, .. }) => {
                assert_eq!(location, "layers[0].aggregation")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn schema_error_names_field() {
        let text = r#"{"f_input_width": 2, "d_max": 4, "target_mean": 0.0, "target_std": 1.0,
            "layers": [{"kind": "DENSE", "activation": "NONE",
                        "w": {"rows": 1, "cols": 2, "data": [1.0]}, "b": [0.0]}]}"#;
        match parse_model(text) {
            Err(ModelError::Schema { location, .. }) => assert_eq!(location, "layers[0].w.data"),
            other => panic!("unexpected {other:?}"),
        }
        let text = r#"{"f_input_width": 2, "d_max": 4, "target_mean": 0.0, "target_std": 1.0,
            "layers": [{"kind": "CONV"}]}"#;
        match parse_model(text) {
            Err(ModelError::Schema { location, .. }) => assert_eq!(location, "layers[0].kind"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn graph_fixture_round_trip() {
        let g = GraphInput::from_edges(3, &[(0, 1), (1, 2)], vec![vec![1.0, 0.5]; 3]).unwrap();
        let back = parse_graph(&g.to_json()).unwrap();
        assert_eq!(g, back);
    }
}
