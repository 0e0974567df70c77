use super::{Edge, EdgeLayer, MultiplexGraph};
use crate::error::{Error, Result};

/// What to do with all-zero feature rows, whose cosine similarity is undefined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ZeroNormPolicy {
    /// Fail, naming the first offending node.
    #[default]
    Reject,
    /// Treat every similarity involving the row as 0, so its neighbors are
    /// decided by the index tie-break.
    ZeroSimilarity,
}

/// Builds a `KNN` layer: every node points to its `k` most cosine-similar
/// other nodes (ties to the lower index), then every such edge is mirrored.
/// Mirrored duplicates are kept, so the layer has exactly `2 * n * k` edges.
pub fn build_knn_layer(g: &MultiplexGraph, k: usize, policy: ZeroNormPolicy) -> Result<EdgeLayer> {
    let n = g.num_nodes();
    if k == 0 {
        return Err(Error::Config("k must be ≥ 1".into()));
    }
    if k >= n {
        return Err(Error::Config(format!(
            "k = {k} must be smaller than the node count {n}"
        )));
    }
    let x = g.feature_csr();
    let norms: Vec<f64> = (0..n)
        .map(|r| x.row(r).map(|(_, v)| v * v).sum::<f64>().sqrt())
        .collect();
    if policy == ZeroNormPolicy::Reject {
        if let Some(node) = norms.iter().position(|&v| v == 0.0) {
            return Err(Error::ZeroNorm {
                node,
                what: "feature",
            });
        }
    }

    // postings[c] = (row, value) for every stored entry of column c, rows ascending
    let xt = x.transpose();
    let mut directed: Vec<Edge> = Vec::with_capacity(n * k);
    let mut dot = vec![0.0; n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    let mut sim = vec![0.0; n];
    for i in 0..n {
        dot.iter_mut().for_each(|v| *v = 0.0);
        if norms[i] > 0.0 {
            for (c, xi) in x.row(i) {
                for (j, xj) in xt.row(c) {
                    dot[j] += xi * xj;
                }
            }
        }
        for j in 0..n {
            sim[j] = if norms[i] > 0.0 && norms[j] > 0.0 {
                dot[j] / (norms[i] * norms[j])
            } else {
                0.0
            };
        }
        order.clear();
        order.extend((0..n).filter(|&j| j != i));
        let by_rank = |a: &usize, b: &usize| sim[*b].total_cmp(&sim[*a]).then(a.cmp(b));
        order.select_nth_unstable_by(k - 1, by_rank);
        order.truncate(k);
        order.sort_unstable_by(by_rank);
        directed.extend(order.iter().map(|&j| (i, j)));
    }
    let mut edges = directed.clone();
    edges.extend(directed.iter().map(|&(u, v)| (v, u)));
    Ok(EdgeLayer::new("KNN", edges))
}
