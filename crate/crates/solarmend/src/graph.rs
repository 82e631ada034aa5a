//! The inverter graph and Chebyshev spectral convolution.
//!
//! Nodes are inverters; an edge carries the Gaussian kernel weight
//! `exp(−d²/σ²)` of the pair's distance, thresholded by a sparsity parameter
//! `ε`. At `ε = 0` the fleet is fully connected; at `ε = 1` only co-located
//! inverters remain connected. Spatial filtering uses Chebyshev polynomials
//! of the scaled normalized Laplacian, so a filter with `K` terms mixes
//! signal from at most `K − 1` hops away without any eigendecomposition.

use std::sync::Arc;

use crate::tensor::{NodeId, Tape, Tensor};
use crate::{Error, Result};

/// How pairwise distances between inverter coordinates are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceMetric {
    /// Euclidean distance on (lon, lat) treated as planar coordinates.
    #[default]
    Planar,
    /// Great-circle distance in kilometres.
    Haversine,
}

impl DistanceMetric {
    fn distance(self, a: (f64, f64), b: (f64, f64)) -> f64 {
        match self {
            DistanceMetric::Planar => ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt(),
            DistanceMetric::Haversine => {
                let (lon1, lat1) = (a.0.to_radians(), a.1.to_radians());
                let (lon2, lat2) = (b.0.to_radians(), b.1.to_radians());
                let dlat = lat2 - lat1;
                let dlon = lon2 - lon1;
                let h = (dlat / 2.0).sin().powi(2)
                    + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
                2.0 * 6371.0 * h.sqrt().min(1.0).asin()
            }
        }
    }
}

/// An undirected weighted edge, stored once with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// The static inverter network with its spectral decorations.
///
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone)]
pub struct FleetGraph {
    n: usize,
    epsilon: f64,
    sigma_d: f64,
    edges: Vec<Edge>,
    adjacency: Tensor,
    laplacian: Tensor,
    lambda_max: f64,
    scaled_laplacian: Arc<Tensor>,
    power_iteration_converged: bool,
}

impl FleetGraph {
    /// Builds the graph from inverter coordinates with the kernel weights
    /// `W_ij = exp(−d_ij²/σ²)` kept when `≥ ε`, where `σ` is the standard
    /// deviation of all pairwise distances.
    ///
    /// A single node yields a valid edgeless graph. When every location
    /// coincides (`σ = 0`) the kernel limit applies: weight 1 between all
    /// distinct pairs.
    pub fn from_locations(locations: &[(f64, f64)], epsilon: f64) -> Result<Self> {
        Self::from_locations_with_metric(locations, epsilon, DistanceMetric::Planar)
    }

    pub fn from_locations_with_metric(
        locations: &[(f64, f64)],
        epsilon: f64,
        metric: DistanceMetric,
    ) -> Result<Self> {
        let n = locations.len();
        if n == 0 {
            return Err(Error::InvalidArgument(
                "graph needs at least one node".into(),
            ));
        }
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must lie in [0, 1], got {epsilon}"
            )));
        }
        let mut distances = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                distances.push(metric.distance(locations[i], locations[j]));
            }
        }
        let sigma_d = population_std(&distances);

        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let d = metric.distance(locations[i], locations[j]);
                let weight = if sigma_d > 0.0 {
                    (-(d * d) / (sigma_d * sigma_d)).exp()
                } else {
                    // Co-located fleet: the kernel's limit as σ → 0 with d = 0.
                    1.0
                };
                if weight >= epsilon && weight > 0.0 {
                    edges.push(Edge { a: i, b: j, weight });
                }
            }
        }
        Self::assemble(n, epsilon, sigma_d, edges)
    }

    /// Builds a graph from explicit undirected edges (weights in `[0, 1]`).
    ///
    /// Useful for path graphs and other hand-built topologies in tests and
    /// experiments; the kernel construction above is unrelated here.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument(
                "graph needs at least one node".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut normalized = Vec::with_capacity(edges.len());
        for &(a, b, weight) in edges {
            if a == b {
                return Err(Error::InvalidArgument(format!("self-loop on node {a}")));
            }
            if a >= n || b >= n {
                return Err(Error::InvalidArgument(format!(
                    "edge ({a}, {b}) out of range for {n} nodes"
                )));
            }
            if !(0.0..=1.0).contains(&weight) {
                return Err(Error::InvalidArgument(format!(
                    "edge weight {weight} outside [0, 1]"
                )));
            }
            let key = (a.min(b), a.max(b));
            if !seen.insert(key) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate edge ({}, {})",
                    key.0, key.1
                )));
            }
            normalized.push(Edge {
                a: key.0,
                b: key.1,
                weight,
            });
        }
        Self::assemble(n, 0.0, 0.0, normalized)
    }

    fn assemble(n: usize, epsilon: f64, sigma_d: f64, edges: Vec<Edge>) -> Result<Self> {
        let mut adjacency = vec![0.0; n * n];
        for e in &edges {
            adjacency[e.a * n + e.b] = e.weight;
            adjacency[e.b * n + e.a] = e.weight;
        }

        let laplacian = normalized_laplacian(&adjacency, n);
        // The estimate approaches λ_max from below; stopping near machine
        // precision keeps the scaled spectrum inside [−1, 1] with margin far
        // beyond the 1e-8 accuracy contract.
        let (lambda_max, converged) = power_iteration_lambda_max(&laplacian, n, 1e-13, 10_000);
        let mut scaled = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                scaled[i * n + j] =
                    2.0 * laplacian[i * n + j] / lambda_max - if i == j { 1.0 } else { 0.0 };
            }
        }

        Ok(FleetGraph {
            n,
            epsilon,
            sigma_d,
            edges,
            adjacency: Tensor::from_vec(vec![n, n], adjacency)?,
            laplacian: Tensor::from_vec(vec![n, n], laplacian)?,
            lambda_max,
            scaled_laplacian: Arc::new(Tensor::from_vec(vec![n, n], scaled)?),
            power_iteration_converged: converged,
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Standard deviation of the pairwise distances the kernel used.
    pub fn sigma_d(&self) -> f64 {
        self.sigma_d
    }

    /// Each undirected edge once, `a < b`.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Edge index as a 2×m array plus the matching weights.
    pub fn edge_index(&self) -> (Vec<[usize; 2]>, Vec<f64>) {
        (
            self.edges.iter().map(|e| [e.a, e.b]).collect(),
            self.edges.iter().map(|e| e.weight).collect(),
        )
    }

    /// Dense symmetric adjacency with zero diagonal.
    pub fn adjacency(&self) -> &Tensor {
        &self.adjacency
    }

    /// Normalized Laplacian `L = I − D^{−1/2} A D^{−1/2}` (isolated nodes
    /// contribute an identity row).
    pub fn laplacian(&self) -> &Tensor {
        &self.laplacian
    }

    /// Largest Laplacian eigenvalue from power iteration (or the fallback 2.0
    /// when iteration did not converge; see [`FleetGraph::power_iteration_converged`]).
    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// `L̃ = 2L/λ_max − I`, the operator the Chebyshev basis is built from.
    pub fn scaled_laplacian(&self) -> &Arc<Tensor> {
        &self.scaled_laplacian
    }

    pub fn power_iteration_converged(&self) -> bool {
        self.power_iteration_converged
    }

    /// Number of connected components (singletons count).
    pub fn connected_components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(parent: &mut Vec<usize>, x: usize) -> usize {
            if parent[x] != x {
                let root = find(parent, parent[x]);
                parent[x] = root;
            }
            parent[x]
        }
        for e in &self.edges {
            let (ra, rb) = (find(&mut parent, e.a), find(&mut parent, e.b));
            if ra != rb {
                parent[ra] = rb;
            }
        }
        (0..self.n).filter(|&i| find(&mut parent, i) == i).count()
    }
}

fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
    var.sqrt()
}

fn normalized_laplacian(adjacency: &[f64], n: usize) -> Vec<f64> {
    let mut inv_sqrt_degree = vec![0.0; n];
    for i in 0..n {
        let degree: f64 = adjacency[i * n..(i + 1) * n].iter().sum();
        inv_sqrt_degree[i] = if degree > 0.0 {
            1.0 / degree.sqrt()
        } else {
            0.0
        };
    }
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let norm = inv_sqrt_degree[i] * adjacency[i * n + j] * inv_sqrt_degree[j];
            l[i * n + j] = if i == j { 1.0 - norm } else { -norm };
        }
    }
    l
}

/// Largest eigenvalue of a PSD matrix by power iteration on `L + I`,
/// which keeps the dominant eigenvalue strictly positive and the iteration
/// matrix nonsingular. Returns `(2.0, false)` when not converged.
fn power_iteration_lambda_max(l: &[f64], n: usize, tol: f64, max_iters: usize) -> (f64, bool) {
    let mut v: Vec<f64> = (0..n).map(|i| hash_unit(i as u64) - 0.5).collect();
    let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm0 == 0.0 {
        v[0] = 1.0;
    } else {
        v.iter_mut().for_each(|x| *x /= norm0);
    }

    let mut estimate = 0.0;
    for _ in 0..max_iters {
        let mut w = vec![0.0; n];
        for i in 0..n {
            let row = &l[i * n..(i + 1) * n];
            w[i] = row.iter().zip(&v).map(|(&a, &b)| a * b).sum::<f64>() + v[i];
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        let next = norm; // ‖(L+I)v‖ → λ_max(L) + 1 for unit v
        w.iter_mut().for_each(|x| *x /= norm);
        v = w;
        if (next - estimate).abs() < tol {
            return ((next - 1.0).max(0.0), true);
        }
        estimate = next;
    }
    (2.0, false)
}

fn hash_unit(i: u64) -> f64 {
    // SplitMix64 scramble for a deterministic start vector.
    let mut z = i.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

/// Chebyshev polynomial matrices `T_0 … T_{K−1}` of the scaled Laplacian.
///
/// `K` terms cover polynomial orders `0..K`, so the identity term is always
/// present and a `K`-term filter reaches `K − 1` hops.
#[derive(Debug, Clone)]
pub struct ChebBasis {
    order_count: usize,
    matrices: Vec<Arc<Tensor>>,
}

impl ChebBasis {
    /// Builds `T_0 = I`, `T_1 = L̃`, `T_i = 2·L̃·T_{i−1} − T_{i−2}`.
    pub fn new(graph: &FleetGraph, terms: usize) -> Result<Self> {
        if terms < 1 {
            return Err(Error::InvalidArgument(
                "chebyshev basis needs at least one term".into(),
            ));
        }
        let n = graph.node_count();
        let scaled = graph.scaled_laplacian().data();
        let mut matrices: Vec<Arc<Tensor>> = Vec::with_capacity(terms);

        let mut identity = vec![0.0; n * n];
        for i in 0..n {
            identity[i * n + i] = 1.0;
        }
        matrices.push(Arc::new(Tensor::from_vec(vec![n, n], identity)?));
        if terms > 1 {
            matrices.push(Arc::clone(graph.scaled_laplacian()));
        }
        for i in 2..terms {
            let prev = matrices[i - 1].data();
            let prev2 = matrices[i - 2].data();
            let mut next = vec![0.0; n * n];
            for r in 0..n {
                for c in 0..n {
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += scaled[r * n + k] * prev[k * n + c];
                    }
                    next[r * n + c] = 2.0 * acc - prev2[r * n + c];
                }
            }
            matrices.push(Arc::new(Tensor::from_vec(vec![n, n], next)?));
        }
        Ok(ChebBasis {
            order_count: terms,
            matrices,
        })
    }

    /// Number of polynomial terms `K`.
    pub fn terms(&self) -> usize {
        self.order_count
    }

    pub fn matrix(&self, i: usize) -> &Arc<Tensor> {
        &self.matrices[i]
    }

    pub fn node_count(&self) -> usize {
        self.matrices[0].shape()[0]
    }
}

/// Chebyshev spectral convolution: `Σ_i T_i(L̃) · x · θ_i`.
///
/// `x` is `[n × c_in]`, `theta` is `[K × c_in × c_out]`.
pub fn cheb_conv(x: &Tensor, basis: &ChebBasis, theta: &Tensor) -> Result<Tensor> {
    if theta.shape().len() != 3 || theta.shape()[0] != basis.terms() {
        return Err(Error::Shape(format!(
            "theta {:?} does not match basis with {} terms",
            theta.shape(),
            basis.terms()
        )));
    }
    let n = basis.node_count();
    if x.shape().len() != 2 || x.shape()[0] != n {
        return Err(Error::Shape(format!(
            "input {:?} does not match graph with {n} nodes",
            x.shape()
        )));
    }
    let c_in = x.shape()[1];
    if theta.shape()[1] != c_in {
        return Err(Error::Shape(format!(
            "theta {:?} expects {} input channels, x has {c_in}",
            theta.shape(),
            theta.shape()[1]
        )));
    }
    let c_out = theta.shape()[2];
    let mut out = vec![0.0; n * c_out];
    let mut mixed = vec![0.0; n * c_in];
    for term in 0..basis.terms() {
        let t = basis.matrix(term).data();
        // mixed = T_term · x
        mixed.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            for j in 0..n {
                let w = t[i * n + j];
                if w == 0.0 {
                    continue;
                }
                let xrow = &x.data()[j * c_in..(j + 1) * c_in];
                let mrow = &mut mixed[i * c_in..(i + 1) * c_in];
                for (m, &xv) in mrow.iter_mut().zip(xrow) {
                    *m += w * xv;
                }
            }
        }
        // out += mixed · θ_term
        let th = &theta.data()[term * c_in * c_out..(term + 1) * c_in * c_out];
        for i in 0..n {
            let mrow = &mixed[i * c_in..(i + 1) * c_in];
            let orow = &mut out[i * c_out..(i + 1) * c_out];
            for (ci, &mv) in mrow.iter().enumerate() {
                if mv == 0.0 {
                    continue;
                }
                let trow = &th[ci * c_out..(ci + 1) * c_out];
                for (o, &tv) in orow.iter_mut().zip(trow) {
                    *o += mv * tv;
                }
            }
        }
    }
    Tensor::from_vec(vec![n, c_out], out)
}

/// Differentiable Chebyshev convolution over a `[time × n × c]` window on a
/// tape: `Σ_i graph_mix(T_i, x) · θ_i` with one trainable `θ_i` per term.
pub fn cheb_conv_tape(
    tape: &mut Tape,
    basis: &ChebBasis,
    x: NodeId,
    thetas: &[NodeId],
) -> Result<NodeId> {
    if thetas.len() != basis.terms() {
        return Err(Error::Shape(format!(
            "{} theta tensors for a basis with {} terms",
            thetas.len(),
            basis.terms()
        )));
    }
    let mut acc: Option<NodeId> = None;
    for (i, &theta) in thetas.iter().enumerate() {
        let mixed = tape.graph_mix(Arc::clone(basis.matrix(i)), x)?;
        let term = tape.channel_mix(mixed, theta)?;
        acc = Some(match acc {
            Some(prev) => tape.add(prev, term)?,
            None => term,
        });
    }
    acc.ok_or_else(|| Error::InvalidArgument("empty chebyshev basis".into()))
}
