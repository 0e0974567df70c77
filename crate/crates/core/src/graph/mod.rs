//! Multiplex graph model, on-disk format, and structural transforms.

mod io;
mod knn;
mod splits;
pub mod synthetic;
mod transform;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ndauto::{SparseMatrix, Tensor};

pub use io::{
    add_layer_to_dataset, load_dataset, write_atomic, write_dataset, FeatureKind, LayerEntry,
    Manifest,
};
pub use knn::{build_knn_layer, ZeroNormPolicy};
pub use splits::{load_splits, make_splits, Split, SplitRatios};
pub use transform::{
    corrupt_features, corruption_permutation, flatten, layer_adjacency, normalize_adjacency,
    LayerAdjacency,
};

/// Directed edge `(source, target)`.
pub type Edge = (usize, usize);

/// One named relation. Edges are stored directed; undirected relations hold
/// both orientations.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeLayer {
    pub name: String,
    pub edges: Vec<Edge>,
}

impl EdgeLayer {
    pub fn new(name: impl Into<String>, edges: Vec<Edge>) -> Self {
        EdgeLayer {
            name: name.into(),
            edges,
        }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

/// Shared node set and features with `K >= 1` edge layers.
#[derive(Clone, Debug)]
pub struct MultiplexGraph {
    name: String,
    features: Tensor,
    feature_csr: Arc<SparseMatrix>,
    layers: Vec<EdgeLayer>,
    labels: Option<Vec<Option<usize>>>,
    num_classes: usize,
}

impl MultiplexGraph {
    /// Validates endpoints, layer count and label range.
    pub fn new(
        name: impl Into<String>,
        features: Tensor,
        layers: Vec<EdgeLayer>,
        labels: Option<Vec<Option<usize>>>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = features.rows();
        if layers.is_empty() {
            return Err(Error::InvalidGraph(
                "a multiplex graph needs at least one layer".into(),
            ));
        }
        for layer in &layers {
            if layer.is_empty() {
                return Err(Error::EmptyLayer(layer.name.clone()));
            }
            if let Some(&(u, v)) = layer.edges.iter().find(|&&(u, v)| u >= n || v >= n) {
                return Err(Error::InvalidGraph(format!(
                    "layer `{}` edge ({u}, {v}) is outside {n} nodes",
                    layer.name
                )));
            }
        }
        for (i, a) in layers.iter().enumerate() {
            if layers[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::InvalidGraph(format!(
                    "duplicate layer name `{}`",
                    a.name
                )));
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::InvalidGraph(format!(
                    "{} labels for {n} nodes",
                    labels.len()
                )));
            }
            if let Some(bad) = labels.iter().flatten().find(|&&c| c >= num_classes) {
                return Err(Error::InvalidGraph(format!(
                    "label {bad} >= num_classes {num_classes}"
                )));
            }
        }
        let feature_csr = Arc::new(SparseMatrix::from_dense(&features));
        Ok(MultiplexGraph {
            name: name.into(),
            features,
            feature_csr,
            layers,
            labels,
            num_classes,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    /// The feature matrix in CSR form (bag-of-words features are very sparse).
    pub fn feature_csr(&self) -> &Arc<SparseMatrix> {
        &self.feature_csr
    }

    pub fn layers(&self) -> &[EdgeLayer] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, name: &str) -> Option<&EdgeLayer> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn labels(&self) -> Option<&[Option<usize>]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Indices of nodes that carry a label.
    pub fn labeled_nodes(&self) -> Vec<usize> {
        self.labels
            .as_ref()
            .map(|l| (0..l.len()).filter(|&i| l[i].is_some()).collect())
            .unwrap_or_default()
    }

    /// Appends a layer, replacing any existing layer of the same name.
    pub fn with_layer(&self, layer: EdgeLayer) -> Result<Self> {
        let mut layers: Vec<EdgeLayer> = self
            .layers
            .iter()
            .filter(|l| l.name != layer.name)
            .cloned()
            .collect();
        layers.push(layer);
        Self::new(
            self.name.clone(),
            self.features.clone(),
            layers,
            self.labels.clone(),
            self.num_classes,
        )
    }

    /// Keeps only the named layers, in the given order.
    pub fn select_layers(&self, names: &[String]) -> Result<Self> {
        let layers = names
            .iter()
            .map(|n| {
                self.layer(n).cloned().ok_or_else(|| {
                    Error::Config(format!("unknown layer `{n}` in dataset `{}`", self.name))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            self.name.clone(),
            self.features.clone(),
            layers,
            self.labels.clone(),
            self.num_classes,
        )
    }

    pub(crate) fn with_features(&self, features: Tensor) -> Self {
        MultiplexGraph {
            feature_csr: Arc::new(SparseMatrix::from_dense(&features)),
            features,
            ..self.clone()
        }
    }

    pub(crate) fn with_layers_unchecked(&self, layers: Vec<EdgeLayer>) -> Self {
        MultiplexGraph {
            layers,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_endpoint() {
        let err = MultiplexGraph::new(
            "g",
            Tensor::zeros(2, 1),
            vec![EdgeLayer::new("a", vec![(0, 2)])],
            None,
            0,
        );
        assert!(matches!(err, Err(Error::InvalidGraph(_))));
    }

    #[test]
    fn rejects_empty_layer_and_no_layers() {
        let err = MultiplexGraph::new(
            "g",
            Tensor::zeros(2, 1),
            vec![EdgeLayer::new("a", vec![])],
            None,
            0,
        );
        assert!(matches!(err, Err(Error::EmptyLayer(n)) if n == "a"));
        let err = MultiplexGraph::new("g", Tensor::zeros(2, 1), vec![], None, 0);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_label_out_of_range() {
        let err = MultiplexGraph::new(
            "g",
            Tensor::zeros(2, 1),
            vec![EdgeLayer::new("a", vec![(0, 1)])],
            Some(vec![Some(0), Some(2)]),
            2,
        );
        assert!(err.is_err());
    }
}
