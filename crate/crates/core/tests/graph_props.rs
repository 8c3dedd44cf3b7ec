use nalgebra::DMatrix;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdge::graph::{matrix_power, rw_laplacian, sym_normalize, Graph, PowerOptions};
use sdge::knn::{build_knn_graph, knn_neighbors};
use sdge::sparse::CsrMatrix;

fn random_graph(seed: u64, n: usize, p: f64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.push((i, j, 1.0));
            }
        }
    }
    Graph::from_edges(n, edges).unwrap()
}

fn eigenvalues(m: &CsrMatrix) -> Vec<f64> {
    let d = m.to_dense();
    let n = d.nrows();
    let sym = DMatrix::from_fn(n, n, |i, j| 0.5 * (d[[i, j]] + d[[j, i]]));
    sym.symmetric_eigen().eigenvalues.iter().copied().collect()
}

fn rw_eigenvalues(g: &Graph) -> Vec<f64> {
    // D^-1 L is similar to D^-1/2 L D^-1/2, which is symmetric.
    let l = rw_laplacian(g).unwrap().to_dense();
    let deg = g.degree();
    let n = g.n();
    let sym = DMatrix::from_fn(n, n, |i, j| l[[i, j]] * (deg[i] / deg[j]).sqrt());
    let sym = DMatrix::from_fn(n, n, |i, j| 0.5 * (sym[(i, j)] + sym[(j, i)]));
    sym.symmetric_eigen().eigenvalues.iter().copied().collect()
}

fn random_points(seed: u64, n: usize, d: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, d), || rng.random_range(-3.0..3.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn adjacency_is_symmetric_with_row_sum_degree(seed in any::<u64>(), n in 1usize..30, p in 0.0f64..0.6) {
        let g = random_graph(seed, n, p);
        prop_assert!(g.adjacency().is_symmetric(0.0));
        let sums = g.adjacency().row_sums();
        for i in 0..n {
            prop_assert_eq!(sums[i], g.degree()[i]);
        }
    }

    #[test]
    fn normalized_adjacency_spectrum_in_unit_interval(seed in any::<u64>(), n in 2usize..30, p in 0.05f64..0.6) {
        let g = random_graph(seed, n, p);
        let s = sym_normalize(g.adjacency()).unwrap();
        for ev in eigenvalues(&s) {
            prop_assert!((-1.0 - 1e-10..=1.0 + 1e-10).contains(&ev), "eigenvalue {}", ev);
        }
    }

    #[test]
    fn powers_match_dense_products(seed in any::<u64>(), n in 1usize..30, p in 0.0f64..0.5, r in 1usize..5) {
        let g = random_graph(seed, n, p);
        let powers = matrix_power(g.adjacency(), r, PowerOptions { budget_factor: 1e9, ..Default::default() }).unwrap();
        prop_assert_eq!(powers.len(), r);
        let a = g.adjacency().to_dense();
        let mut expected = a.clone();
        for power in &powers {
            prop_assert_eq!(&power.to_dense(), &expected);
            expected = expected.dot(&a);
        }
    }

    #[test]
    fn random_walk_laplacian_spectrum(seed in any::<u64>(), n in 2usize..25) {
        let mut g = random_graph(seed, n, 0.3);
        if !g.isolated_nodes().is_empty() {
            g = g.with_isolated_self_loops();
        }
        for ev in rw_eigenvalues(&g) {
            prop_assert!((-1e-10..=2.0 + 1e-10).contains(&ev), "eigenvalue {}", ev);
        }
    }

    #[test]
    fn knn_selects_exactly_k(seed in any::<u64>(), n in 2usize..40, d in 1usize..5, k in 1usize..8) {
        let k = k.min(n - 1);
        let x = random_points(seed, n, d);
        let lists = knn_neighbors(x.view(), k).unwrap();
        prop_assert_eq!(lists.len(), n);
        for (i, list) in lists.iter().enumerate() {
            prop_assert_eq!(list.len(), k);
            prop_assert!(!list.contains(&i));
            let mut sorted = list.clone();
            sorted.sort_unstable();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), k);
        }
    }

    #[test]
    fn knn_graph_degree_and_edge_bounds(seed in any::<u64>(), n in 2usize..40, d in 1usize..5, k in 1usize..8) {
        let k = k.min(n - 1);
        let x = random_points(seed, n, d);
        let g = build_knn_graph(x.view(), k).unwrap();
        prop_assert!(g.adjacency().is_symmetric(0.0));
        for i in 0..n {
            prop_assert!(g.neighbors(i).len() >= k);
        }
        let e = g.num_edges();
        prop_assert!(2 * e >= n * k && e <= n * k, "edges {} for n={} k={}", e, n, k);
        let again = build_knn_graph(x.view(), k).unwrap();
        prop_assert_eq!(g.adjacency(), again.adjacency());
    }
}
