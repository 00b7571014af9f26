use rand::Rng;

use super::{Activation, GnnModel, GraphInput, Layer, LayerKind, Matrix, ModelError};

/// Shape of a randomly initialised network, used for property tests and the
/// exactness checks.
#[derive(Debug, Clone)]
pub struct RandomModelSpec {
    pub input_width: usize,
    /// `Gcn` or `Sage` per graph layer; may mix kinds.
    pub graph_kinds: Vec<LayerKind>,
    pub graph_widths: Vec<usize>,
    /// Hidden widths of the dense head (ReLU); the scalar output is appended.
    pub head_widths: Vec<usize>,
    pub d_max: usize,
    /// Weights and biases are drawn uniformly from `[-scale, scale]`.
    pub scale: f64,
}

impl RandomModelSpec {
    /// `layers x width` graph network of a single kind with a linear head.
    pub fn uniform(kind: LayerKind, input_width: usize, layers: usize, width: usize) -> Self {
        Self {
            input_width,
            graph_kinds: vec![kind; layers],
            graph_widths: vec![width; layers],
            head_widths: Vec::new(),
            d_max: 4,
            scale: 1.0,
        }
    }

    pub fn with_head(mut self, head_widths: Vec<usize>) -> Self {
        self.head_widths = head_widths;
        self
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<GnnModel, ModelError> {
        let s = self.scale;
        let matrix = |rows: usize, cols: usize, rng: &mut R| {
            Matrix::new(
                rows,
                cols,
                (0..rows * cols).map(|_| rng.gen_range(-s..=s)).collect(),
            )
        };
        let mut layers = Vec::new();
        let mut width = self.input_width;
        for (kind, &out) in self.graph_kinds.iter().zip(&self.graph_widths) {
            let layer = match kind {
                LayerKind::Gcn => Layer::Gcn {
                    weight: matrix(out, width, rng)?,
                    activation: Activation::Relu,
                },
                LayerKind::Sage => Layer::Sage {
                    root: matrix(out, width, rng)?,
                    neighbor: matrix(out, width, rng)?,
                    activation: Activation::Relu,
                },
                other => {
                    return Err(ModelError::Invalid(format!(
                        "{other:?} is not a graph layer kind"
                    )))
                }
            };
            layers.push(layer);
            width = out;
        }
        layers.push(Layer::SumPool);
        for &out in &self.head_widths {
            layers.push(Layer::Dense {
                weight: matrix(out, width, rng)?,
                bias: (0..out).map(|_| rng.gen_range(-s..=s)).collect(),
                activation: Activation::Relu,
            });
            width = out;
        }
        layers.push(Layer::Dense {
            weight: matrix(1, width, rng)?,
            bias: vec![rng.gen_range(-s..=s)],
            activation: Activation::None,
        });
        GnnModel::new(self.input_width, self.d_max, 0.0, 1.0, layers)
    }
}

/// Random connected graph with degrees at most `d_max` and features uniform
/// in `[0, 1]` (or 0/1 when `binary`).
pub fn random_graph<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    width: usize,
    d_max: usize,
    binary: bool,
) -> GraphInput {
    let mut degree = vec![0usize; n];
    let mut edges = Vec::new();
    for i in 1..n {
        let candidates: Vec<usize> = (0..i).filter(|&l| degree[l] < d_max).collect();
        if let Some(&l) = candidates.get(rng.gen_range(0..candidates.len().max(1))) {
            edges.push((i, l));
            degree[i] += 1;
            degree[l] += 1;
        }
    }
    for i in 0..n {
        for l in 0..i {
            let present = edges.contains(&(i, l)) || edges.contains(&(l, i));
            if !present && degree[i] < d_max && degree[l] < d_max && rng.gen_bool(0.3) {
                edges.push((i, l));
                degree[i] += 1;
                degree[l] += 1;
            }
        }
    }
    let features = (0..n)
        .map(|_| {
            (0..width)
                .map(|_| {
                    if binary {
                        f64::from(u8::from(rng.gen_bool(0.5)))
                    } else {
                        rng.gen_range(0.0..=1.0)
                    }
                })
                .collect()
        })
        .collect();
    GraphInput::from_edges(n, &edges, features).expect("generated graph is well formed")
}
