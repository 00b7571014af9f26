use super::ModelError;

/// A concrete graph: symmetric 0/1 adjacency without self-loops plus one
/// feature row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    n: usize,
    adjacency: Vec<bool>,
    features: Vec<f64>,
    width: usize,
}

impl GraphInput {
    /// `adjacency` and `features` are flat row-major arrays.
    pub fn new(n: usize, adjacency: Vec<bool>, features: Vec<f64>) -> Result<Self, ModelError> {
        if n == 0 {
            return Err(ModelError::Graph("graph needs at least one node".into()));
        }
        if adjacency.len() != n * n {
            return Err(ModelError::Graph(format!(
                "adjacency has {} entries, expected {}",
                adjacency.len(),
                n * n
            )));
        }
        if features.len() % n != 0 || features.is_empty() {
            return Err(ModelError::Graph(format!(
                "feature array of length {} does not split into {n} rows",
                features.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Graph("non-finite feature value".into()));
        }
        for i in 0..n {
            if adjacency[i * n + i] {
                return Err(ModelError::Graph(format!("self-loop stored on node {i}")));
            }
            for l in 0..i {
                if adjacency[i * n + l] != adjacency[l * n + i] {
                    return Err(ModelError::Graph(format!(
                        "adjacency not symmetric at ({i},{l})"
                    )));
                }
            }
        }
        let width = features.len() / n;
        Ok(Self {
            n,
            adjacency,
            features,
            width,
        })
    }

    /// Builds a graph from an undirected edge list.
    pub fn from_edges(
        n: usize,
        edges: &[(usize, usize)],
        features: Vec<Vec<f64>>,
    ) -> Result<Self, ModelError> {
        let mut adjacency = vec![false; n * n];
        for &(i, l) in edges {
            if i >= n || l >= n {
                return Err(ModelError::Graph(format!("edge ({i},{l}) out of range")));
            }
            adjacency[i * n + l] = true;
            adjacency[l * n + i] = true;
        }
        if features.len() != n {
            return Err(ModelError::Graph(format!(
                "{} feature rows for {n} nodes",
                features.len()
            )));
        }
        let width = features.first().map_or(0, Vec::len);
        if features.iter().any(|r| r.len() != width) {
            return Err(ModelError::Graph("ragged feature rows".into()));
        }
        Self::new(n, adjacency, features.concat())
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn feature_width(&self) -> usize {
        self.width
    }

    pub fn adjacent(&self, i: usize, l: usize) -> bool {
        self.adjacency[i * self.n + l]
    }

    pub fn adjacency(&self) -> &[bool] {
        &self.adjacency
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    pub fn degree(&self, i: usize) -> usize {
        (0..self.n).filter(|&l| self.adjacent(i, l)).count()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&l| self.adjacent(i, l))
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().filter(|&&a| a).count() / 2
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for l in self.neighbors(i) {
                if !seen[l] {
                    seen[l] = true;
                    stack.push(l);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Relabels nodes so that new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, ModelError> {
        let n = self.n;
        if perm.len() != n {
            return Err(ModelError::Graph("permutation length mismatch".into()));
        }
        let mut adjacency = vec![false; n * n];
        let mut features = Vec::with_capacity(self.features.len());
        for (a, &pa) in perm.iter().enumerate() {
            for (b, &pb) in perm.iter().enumerate() {
                adjacency[a * n + b] = self.adjacent(pa, pb);
            }
            features.extend_from_slice(self.feature_row(pa));
        }
        Self::new(n, adjacency, features)
    }
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` for a fixed graph.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    n: usize,
    entries: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn new(graph: &GraphInput) -> Self {
        let n = graph.n_nodes();
        let deg_plus: Vec<f64> = (0..n).map(|i| (graph.degree(i) + 1) as f64).collect();
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for l in 0..n {
                if i == l || graph.adjacent(i, l) {
                    entries[i * n + l] = 1.0 / (deg_plus[i] * deg_plus[l]).sqrt();
                }
            }
        }
        Self { n, entries }
    }

    pub fn get(&self, i: usize, l: usize) -> f64 {
        self.entries[i * self.n + l]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}
