use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Edge, EdgeLayer, MultiplexGraph};
use crate::error::{Error, Result};
use crate::ndauto::SparseMatrix;

/// Normalized propagation matrix of one layer.
#[derive(Clone, Debug)]
pub struct LayerAdjacency {
    pub name: String,
    pub matrix: Arc<SparseMatrix>,
    pub raw_edges: usize,
}

/// Merges all layers into one multiset of edges; parallel edges are kept.
pub fn flatten(g: &MultiplexGraph) -> MultiplexGraph {
    let name = g
        .layers()
        .iter()
        .map(|l| l.name.as_str())
        .collect::<Vec<_>>()
        .join("+");
    let edges = g
        .layers()
        .iter()
        .flat_map(|l| l.edges.iter().copied())
        .collect();
    g.with_layers_unchecked(vec![EdgeLayer::new(name, edges)])
}

/// `D^-1/2 (A + I) D^-1/2`, where every directed edge `(u, v)` adds its
/// weight (default 1) to `A[u][v]` and `D` holds the row sums of `A + I`.
/// Parallel edges therefore behave like a single heavier edge.
pub fn normalize_adjacency(
    edges: &[Edge],
    num_nodes: usize,
    weights: Option<&[f64]>,
) -> Result<SparseMatrix> {
    if let Some(w) = weights {
        if w.len() != edges.len() {
            return Err(Error::dim(
                "normalize_adjacency",
                format!("{} weights for {} edges", w.len(), edges.len()),
            ));
        }
    }
    let mut triplets = Vec::with_capacity(edges.len() + num_nodes);
    for (i, &(u, v)) in edges.iter().enumerate() {
        if u >= num_nodes || v >= num_nodes {
            return Err(Error::InvalidGraph(format!(
                "edge ({u}, {v}) outside {num_nodes} nodes"
            )));
        }
        let w = weights.map_or(1.0, |w| w[i]);
        if !w.is_finite() || w < 0.0 {
            return Err(Error::NegativeWeight { u, v, weight: w });
        }
        triplets.push((u, v, w));
    }
    triplets.extend((0..num_nodes).map(|i| (i, i, 1.0)));
    let a = SparseMatrix::from_triplets(num_nodes, num_nodes, &triplets)?;
    let deg: Vec<f64> = (0..num_nodes)
        .map(|r| a.row(r).map(|(_, v)| v).sum())
        .collect();
    let mut values = Vec::with_capacity(a.nnz());
    for r in 0..num_nodes {
        for (c, v) in a.row(r) {
            values.push(v / (deg[r] * deg[c]).sqrt());
        }
    }
    a.with_values(values)
}

/// Normalized adjacency of every layer, in layer order.
pub fn layer_adjacency(g: &MultiplexGraph) -> Result<Vec<LayerAdjacency>> {
    g.layers()
        .iter()
        .map(|l| {
            Ok(LayerAdjacency {
                name: l.name.clone(),
                matrix: Arc::new(normalize_adjacency(&l.edges, g.num_nodes(), None)?),
                raw_edges: l.len(),
            })
        })
        .collect()
}

/// Uniform permutation of `0..n` that is never the identity when `n > 1`.
pub fn corruption_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        perm.shuffle(rng);
        if n <= 1 || perm.iter().enumerate().any(|(i, &p)| i != p) {
            return perm;
        }
    }
}

/// Copy of `g` whose feature rows are shuffled; edges are untouched.
pub fn corrupt_features(g: &MultiplexGraph, seed: u64) -> MultiplexGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perm = corruption_permutation(g.num_nodes(), &mut rng);
    g.with_features(g.features().select_rows(&perm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndauto::Tensor;

    fn two_layer() -> MultiplexGraph {
        MultiplexGraph::new(
            "g",
            Tensor::from_rows(&[[1.0], [2.0], [3.0], [4.0]]).unwrap(),
            vec![
                EdgeLayer::new("a", vec![(0, 1), (1, 0), (2, 3)]),
                EdgeLayer::new("b", vec![(0, 1), (1, 2)]),
            ],
            None,
            0,
        )
        .unwrap()
    }

    #[test]
    fn flatten_keeps_parallel_edges() {
        let f = flatten(&two_layer());
        assert_eq!(f.num_layers(), 1);
        assert_eq!(
            f.layers()[0].edges.iter().filter(|&&e| e == (0, 1)).count(),
            2
        );
        assert_eq!(f.layers()[0].len(), 5);
        assert_eq!(f.layers()[0].name, "a+b");
    }

    #[test]
    fn flatten_single_layer_is_identity() {
        let g = two_layer().select_layers(&["b".to_string()]).unwrap();
        assert_eq!(flatten(&g).layers()[0].edges, g.layers()[0].edges);
    }

    #[test]
    fn isolated_node_keeps_self_loop_only() {
        let a = normalize_adjacency(&[(0, 1), (1, 0)], 3, None).unwrap();
        assert_eq!(a.row(2).collect::<Vec<_>>(), vec![(2, 1.0)]);
    }

    #[test]
    fn two_node_clique_is_half_matrix() {
        let a = normalize_adjacency(&[(0, 1), (1, 0)], 2, None).unwrap();
        assert_eq!(a.to_dense(), Tensor::full(2, 2, 0.5));
    }

    #[test]
    fn duplicate_edges_equal_weighted_edge() {
        let dup = normalize_adjacency(&[(0, 1), (1, 0), (0, 1), (1, 0), (1, 2), (2, 1)], 3, None)
            .unwrap();
        let weighted = normalize_adjacency(
            &[(0, 1), (1, 0), (1, 2), (2, 1)],
            3,
            Some(&[2.0, 2.0, 1.0, 1.0]),
        )
        .unwrap();
        assert!(dup.to_dense().max_abs_diff(&weighted.to_dense()) < 1e-15);
    }

    #[test]
    fn negative_weight_is_rejected() {
        let err = normalize_adjacency(&[(0, 1)], 2, Some(&[-0.5])).unwrap_err();
        assert!(matches!(err, Error::NegativeWeight { u: 0, v: 1, .. }));
    }

    #[test]
    fn corruption_is_seeded_non_identity_permutation() {
        let g = two_layer();
        let a = corrupt_features(&g, 3);
        let b = corrupt_features(&g, 3);
        assert_eq!(a.features(), b.features());
        assert_ne!(a.features(), g.features());
        let mut sorted: Vec<f64> = a.features().data().to_vec();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted, g.features().data());
        assert_eq!(a.layers(), g.layers());
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            assert_ne!(corruption_permutation(2, &mut rng), vec![0, 1]);
        }
    }
}
