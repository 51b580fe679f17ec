//! Property suites over randomized inputs.

use ndarray::Array2;
use proptest::prelude::*;
use std::sync::Arc;
use sylvnet::data::{
    knn_graph, power_iteration, split_ratings, symmetric_normalize, Metric, Network,
    PriorAssociation,
};
use sylvnet::diff::{load_archive, save_archive, Tape};
use sylvnet::sparse::CsrMatrix;
use sylvnet::Mat;

fn mat_strategy(rows: usize, cols: usize) -> impl Strategy<Value = Mat> {
    proptest::collection::vec(-10.0f64..10.0, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn knn_graphs_are_symmetric_with_zero_diagonal(
        n in 3usize..16,
        d in 1usize..4,
        k_frac in 0.0f64..1.0,
        values in proptest::collection::vec(-100.0f64..100.0, 16 * 4),
        euclidean in any::<bool>(),
    ) {
        let k = 1 + ((n - 2) as f64 * k_frac) as usize;
        let features = Array2::from_shape_fn((n, d), |(i, j)| values[i * 4 + j]);
        let metric = if euclidean { Metric::Euclidean } else { Metric::Cosine };
        let net = knn_graph(&features, k, metric).unwrap();
        prop_assert!(net.adjacency.symmetry_violation(0.0).is_none());
        for i in 0..n {
            prop_assert_eq!(net.adjacency.get(i, i), 0.0);
            // Union symmetrization keeps at least each node's own k picks.
            prop_assert!(net.adjacency.row(i).count() >= k);
        }
    }

    #[test]
    fn split_masks_are_disjoint_and_contained(
        seed in 0u64..1000,
        ft in 0.0f64..0.8,
        fv in 0.0f64..0.15,
        density in 0.1f64..0.9,
    ) {
        let n1 = 12;
        let n2 = 9;
        let mut h = Array2::zeros((n1, n2));
        let mut mask = Array2::zeros((n1, n2));
        let mut state = seed;
        for i in 0..n1 {
            for j in 0..n2 {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                if (state >> 33) as f64 / (u32::MAX as f64 * 2.0) < density {
                    h[[i, j]] = 1.0 + ((state >> 20) % 5) as f64;
                    mask[[i, j]] = 1.0;
                }
            }
        }
        let prior = PriorAssociation::new(h, mask, vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let fe = (1.0 - ft - fv).max(0.0) * 0.5;
        let split = split_ratings(&prior, (ft, fv, fe), seed).unwrap();
        // validate() checks disjointness and containment in the prior mask.
        split.validate(&prior).unwrap();
        let (tr, va, te) = split.counts();
        prop_assert!(tr + va + te <= prior.observed_count);
    }

    #[test]
    fn softmax_gram_rows_sum_to_one(
        u in mat_strategy(5, 3),
        v in mat_strategy(7, 3),
    ) {
        let mut tape = Tape::new();
        let un = tape.constant(u);
        let vn = tape.constant(v);
        let s = tape.row_softmax_gram(un, vn).unwrap();
        for row in tape.value(s).rows() {
            let sum: f64 = row.sum();
            prop_assert!((sum - 1.0).abs() < 1e-12, "row sum {}", sum);
            prop_assert!(row.iter().all(|x| *x >= 0.0 && x.is_finite()));
        }
    }

    #[test]
    fn normalized_adjacency_spectral_radius_bounded(
        n in 3usize..14,
        edge_bits in proptest::collection::vec(any::<bool>(), 14 * 14),
    ) {
        let mut triplets = Vec::new();
        let mut idx = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                if edge_bits[idx % edge_bits.len()] {
                    triplets.push((i, j, 1.0));
                    triplets.push((j, i, 1.0));
                }
                idx += 1;
            }
        }
        let adj = CsrMatrix::from_triplets(n, n, &triplets);
        let net = Network::new(adj, Array2::eye(n)).unwrap();
        let norm = symmetric_normalize(&net).unwrap();
        let rho = power_iteration(&norm.adjacency, 300, 7);
        prop_assert!(rho <= 1.0 + 1e-9, "spectral radius {}", rho);
    }

    #[test]
    fn checkpoint_round_trip(
        a in mat_strategy(3, 4),
        b in mat_strategy(1, 1),
        name in "[a-z]{1,12}(\\.[a-z0-9]{1,8}){0,2}",
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.nmat");
        save_archive(&path, &[(name.clone(), &a), ("other".into(), &b)]).unwrap();
        let back = load_archive(&path).unwrap();
        prop_assert_eq!(back.len(), 2);
        prop_assert_eq!(&back[0].0, &name);
        prop_assert!(back[0].1.iter().zip(a.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        prop_assert!(back[1].1.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn spmm_matches_dense_reference(
        vals in proptest::collection::vec(-5.0f64..5.0, 6 * 6),
        dense in mat_strategy(6, 3),
        keep in proptest::collection::vec(any::<bool>(), 36),
    ) {
        let mut triplets = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                if keep[i * 6 + j] {
                    triplets.push((i, j, vals[i * 6 + j]));
                }
            }
        }
        let sp = CsrMatrix::from_triplets(6, 6, &triplets);
        let got = sp.mul_dense(&dense);
        let want = sp.to_dense().dot(&dense);
        for (g, w) in got.iter().zip(want.iter()) {
            prop_assert!((g - w).abs() < 1e-12);
        }
        let mut tape = Tape::new();
        let d = tape.constant(dense.clone());
        let node = tape.spmm(Arc::new(sp), d).unwrap();
        for (g, w) in tape.value(node).iter().zip(want.iter()) {
            prop_assert!((g - w).abs() < 1e-12);
        }
    }
}
