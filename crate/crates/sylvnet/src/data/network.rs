//! Input networks, symmetric normalization and k-NN graph construction.

use super::DataError;
use crate::sparse::CsrMatrix;
use crate::Mat;
use ndarray::Array2;

const SYMMETRY_TOL: f64 = 1e-12;

/// One input graph: a sparse adjacency matrix plus a node feature matrix.
#[derive(Debug, Clone)]
pub struct Network {
    pub adjacency: CsrMatrix,
    pub features: Mat,
    pub n: usize,
    pub d: usize,
}

impl Network {
    /// Validates and wraps an adjacency/feature pair. The adjacency must be
    /// square, symmetric within 1e-12, nonnegative, with a zero diagonal
    /// (self-connections are modeled explicitly downstream).
    pub fn new(adjacency: CsrMatrix, features: Mat) -> Result<Self, DataError> {
        if adjacency.rows() != adjacency.cols() {
            return Err(DataError::Validation(format!(
                "adjacency must be square, got {}x{}",
                adjacency.rows(),
                adjacency.cols()
            )));
        }
        if let Some((i, j, dev)) = adjacency.symmetry_violation(SYMMETRY_TOL) {
            return Err(DataError::Validation(format!(
                "adjacency not symmetric: |A({i},{j}) - A({j},{i})| = {dev:e}"
            )));
        }
        for (i, j, v) in adjacency.iter() {
            if v < 0.0 {
                return Err(DataError::Validation(format!(
                    "adjacency has negative weight {v} at ({i},{j})"
                )));
            }
            if i == j {
                return Err(DataError::Validation(format!(
                    "adjacency has a self-loop at node {i}"
                )));
            }
        }
        Self::new_unchecked_diag(adjacency, features)
    }

    // Shared tail of validation; the identity fallback keeps its diagonal.
    fn new_unchecked_diag(adjacency: CsrMatrix, features: Mat) -> Result<Self, DataError> {
        let n = adjacency.rows();
        if features.nrows() != n {
            return Err(DataError::Validation(format!(
                "feature matrix has {} rows for {} nodes",
                features.nrows(),
                n
            )));
        }
        let d = features.ncols();
        Ok(Self { adjacency, features, n, d })
    }
}

/// A symmetrically normalized network: `A~ = D^{-1/2} A D^{-1/2}`.
/// Degree-zero nodes keep all-zero rows and columns.
#[derive(Debug, Clone)]
pub struct NormalizedNetwork {
    pub adjacency: CsrMatrix,
    pub degree: Vec<f64>,
    pub n: usize,
}

/// Symmetric normalization of a network's adjacency matrix. Re-checks
/// symmetry so that a hand-mutated `Network` cannot slip through.
pub fn symmetric_normalize(net: &Network) -> Result<NormalizedNetwork, DataError> {
    if let Some((i, j, dev)) = net.adjacency.symmetry_violation(SYMMETRY_TOL) {
        return Err(DataError::Validation(format!(
            "adjacency not symmetric: |A({i},{j}) - A({j},{i})| = {dev:e}"
        )));
    }
    let degree = net.adjacency.row_sums();
    let inv_sqrt: Vec<f64> = degree
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let adjacency = net.adjacency.scale_sym(&inv_sqrt, &inv_sqrt);
    Ok(NormalizedNetwork { adjacency, degree, n: net.n })
}

/// Distance used for nearest-neighbor search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Euclidean,
    Cosine,
}

impl Metric {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" | "l2" => Some(Self::Euclidean),
            "cosine" => Some(Self::Cosine),
            _ => None,
        }
    }

    fn distance(&self, a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
        match self {
            Metric::Euclidean => {
                let mut acc = 0.0;
                for (x, y) in a.iter().zip(b.iter()) {
                    let d = x - y;
                    acc += d * d;
                }
                acc.sqrt()
            }
            Metric::Cosine => {
                let dot = a.dot(&b);
                let na = a.dot(&a).sqrt();
                let nb = b.dot(&b).sqrt();
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot / (na * nb)
                }
            }
        }
    }
}

/// Unweighted k-NN graph over feature rows. An edge (i, j) exists iff j is
/// among i's k nearest neighbors or vice versa (union symmetrization).
/// Distance ties break toward the lower index.
pub fn knn_graph(features: &Mat, k: usize, metric: Metric) -> Result<Network, DataError> {
    let n = features.nrows();
    if k == 0 || k >= n {
        return Err(DataError::Parameter(format!(
            "k must satisfy 1 <= k < n, got k = {k} for n = {n} points"
        )));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(DataError::Validation("features contain non-finite values".into()));
    }
    let mut triplets = Vec::new();
    for i in 0..n {
        let mut candidates: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (metric.distance(features.row(i), features.row(j)), j))
            .collect();
        candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        for &(_, j) in candidates.iter().take(k) {
            triplets.push((i, j, 1.0));
            triplets.push((j, i, 1.0));
        }
    }
    // Union symmetrization can record an edge from both endpoints; clamp
    // summed duplicates back to unit weight.
    let mut adjacency = CsrMatrix::from_triplets(n, n, &triplets);
    adjacency = CsrMatrix::from_triplets(
        n,
        n,
        &adjacency.iter().map(|(i, j, _)| (i, j, 1.0)).collect::<Vec<_>>(),
    );
    Network::new(adjacency, features.clone())
}

/// Fallback for datasets missing one side network: the adjacency is the
/// identity matrix (already normalized, unit spectral radius) and features
/// are identity columns truncated or zero-padded to width `d`.
pub fn identity_network(n: usize, d: usize) -> Network {
    assert!(n >= 1 && d >= 1, "identity_network requires n >= 1 and d >= 1");
    let adjacency = CsrMatrix::identity(n);
    let mut features = Array2::zeros((n, d));
    for i in 0..n.min(d) {
        features[[i, i]] = 1.0;
    }
    Network::new_unchecked_diag(adjacency, features).expect("identity network is valid")
}

/// Power-iteration estimate of the spectral radius of a sparse matrix.
pub fn power_iteration(m: &CsrMatrix, iters: usize, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = m.rows();
    let mut v = Array2::from_shape_fn((n, 1), |_| rng.random_range(0.1..1.0));
    let mut lambda = 0.0;
    for _ in 0..iters {
        let w = m.mul_dense(&v);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w / norm;
    }
    lambda
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn edge_list(edges: &[(usize, usize)], n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for &(i, j) in edges {
            t.push((i, j, 1.0));
            t.push((j, i, 1.0));
        }
        CsrMatrix::from_triplets(n, n, &t)
    }

    #[test]
    fn normalize_single_edge_has_unit_entries() {
        let net = Network::new(edge_list(&[(0, 1)], 2), Array2::eye(2)).unwrap();
        let norm = symmetric_normalize(&net).unwrap();
        assert_eq!(norm.adjacency.to_dense(), array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn normalize_triangle_gives_half_offdiagonal() {
        let net = Network::new(edge_list(&[(0, 1), (1, 2), (0, 2)], 3), Array2::eye(3)).unwrap();
        let norm = symmetric_normalize(&net).unwrap().adjacency.to_dense();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 0.0 } else { 0.5 };
                assert!((norm[[i, j]] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn normalize_star_matches_direct_evaluation() {
        // Star on 4 nodes, center 0. Oracle: form D^{-1/2} A D^{-1/2} densely.
        let net = Network::new(edge_list(&[(0, 1), (0, 2), (0, 3)], 4), Array2::eye(4)).unwrap();
        let a = net.adjacency.to_dense();
        let deg: Vec<f64> = (0..4).map(|i| a.row(i).sum()).collect();
        let mut want = Array2::zeros((4, 4));
        for i in 0..4 {
            for j in 0..4 {
                if a[[i, j]] != 0.0 {
                    want[[i, j]] = a[[i, j]] / (deg[i] * deg[j]).sqrt();
                }
            }
        }
        let got = symmetric_normalize(&net).unwrap().adjacency.to_dense();
        assert_eq!(got, want);
        for j in 1..4 {
            assert!((got[[0, j]] - 1.0 / 3.0_f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn normalize_preserves_zero_rows_for_isolated_nodes() {
        let net = Network::new(edge_list(&[(0, 1)], 3), Array2::eye(3)).unwrap();
        let norm = symmetric_normalize(&net).unwrap();
        assert_eq!(norm.degree[2], 0.0);
        assert!(norm.adjacency.row(2).count() == 0);
        assert!(norm.adjacency.to_dense().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn network_rejects_asymmetry_naming_pair() {
        let adj = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0)]);
        let err = Network::new(adj, Array2::eye(2)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("A(0,1)"), "message: {msg}");
    }

    #[test]
    fn network_rejects_self_loops_and_negative_weights() {
        let loops = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0)]);
        assert!(Network::new(loops, Array2::eye(2)).is_err());
        let neg = CsrMatrix::from_triplets(2, 2, &[(0, 1, -1.0), (1, 0, -1.0)]);
        assert!(Network::new(neg, Array2::eye(2)).is_err());
    }

    #[test]
    fn knn_line_points_brute_force() {
        // 1-D points {0, 1, 10} with k = 1: nearest of 0 is 1, of 1 is 0,
        // of 10 is 1, so the union graph is {0-1, 1-2}.
        let f = array![[0.0], [1.0], [10.0]];
        let net = knn_graph(&f, 1, Metric::Euclidean).unwrap();
        let a = net.adjacency.to_dense();
        assert_eq!(a, array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]);
    }

    #[test]
    fn knn_k_equals_n_minus_one_is_complete() {
        let f = array![[0.0, 1.0], [2.0, 0.5], [1.0, -1.0], [4.0, 4.0]];
        let net = knn_graph(&f, 3, Metric::Euclidean).unwrap();
        let a = net.adjacency.to_dense();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(a[[i, j]], if i == j { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn knn_two_separated_pairs() {
        let f = array![[0.0], [0.1], [100.0], [100.1]];
        let net = knn_graph(&f, 1, Metric::Euclidean).unwrap();
        let a = net.adjacency.to_dense();
        let want = array![
            [0.0, 1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [0.0, 0.0, 1.0, 0.0]
        ];
        assert_eq!(a, want);
    }

    #[test]
    fn knn_duplicate_points_tie_break_low_index() {
        // Points 1 and 2 coincide; node 3's single neighbor must be index 1.
        let f = array![[0.0], [5.0], [5.0], [5.2]];
        let net = knn_graph(&f, 1, Metric::Euclidean).unwrap();
        assert_eq!(net.adjacency.get(3, 1), 1.0);
        assert_eq!(net.adjacency.get(3, 2), 0.0);
    }

    #[test]
    fn knn_rejects_k_out_of_range() {
        let f = array![[0.0], [1.0]];
        assert!(knn_graph(&f, 2, Metric::Euclidean).is_err());
        assert!(knn_graph(&f, 0, Metric::Euclidean).is_err());
    }

    #[test]
    fn knn_symmetric_zero_diagonal_random_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..20 {
            let n = rng.random_range(4..20);
            let d = rng.random_range(1..5);
            let k = rng.random_range(1..n.min(6));
            let f = Array2::from_shape_fn((n, d), |_| rng.random_range(-5.0..5.0));
            let metric = if trial % 2 == 0 { Metric::Euclidean } else { Metric::Cosine };
            let net = knn_graph(&f, k, metric).unwrap();
            assert!(net.adjacency.symmetry_violation(0.0).is_none());
            for i in 0..n {
                assert_eq!(net.adjacency.get(i, i), 0.0);
            }
        }
    }

    #[test]
    fn identity_network_examples() {
        let net = identity_network(3, 3);
        let norm = symmetric_normalize(&net).unwrap();
        let eye: Mat = Array2::eye(3);
        assert_eq!(norm.adjacency.to_dense(), eye);

        let one = identity_network(1, 1);
        assert_eq!(one.adjacency.to_dense(), array![[1.0]]);

        let padded = identity_network(2, 4);
        assert_eq!(padded.features, array![[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]]);

        let truncated = identity_network(3, 2);
        assert_eq!(truncated.features, array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]);
    }

    #[test]
    fn normalized_spectral_radius_at_most_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let n = rng.random_range(3..12);
            let mut edges = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.random_range(0.0..1.0) < 0.4 {
                        edges.push((i, j));
                    }
                }
            }
            let net =
                Network::new(edge_list(&edges, n), Array2::eye(n)).expect("valid random graph");
            let norm = symmetric_normalize(&net).unwrap();
            let rho = power_iteration(&norm.adjacency, 200, 3);
            assert!(rho <= 1.0 + 1e-9, "spectral radius {rho} > 1");
        }
    }

    #[test]
    fn normalize_is_idempotent_on_regular_graphs() {
        // A cycle is 2-regular: normalizing scales all edges to 1/2; feeding
        // the normalized graph back in leaves it fixed.
        let n = 6;
        let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        let net = Network::new(edge_list(&edges, n), Array2::eye(n)).unwrap();
        let once = symmetric_normalize(&net).unwrap();
        let renet = Network { adjacency: once.adjacency.clone(), features: Array2::eye(n), n, d: n };
        let twice = symmetric_normalize(&renet).unwrap();
        let a = once.adjacency.to_dense();
        let b = twice.adjacency.to_dense();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
