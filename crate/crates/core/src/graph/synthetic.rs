//! Seeded stochastic-block-model multiplex graphs with a planted signal layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Edge, EdgeLayer, MultiplexGraph};
use crate::error::Result;
use crate::ndauto::Tensor;

/// Two-layer planted graph: layer `A` is assortative (`p_in` within a class,
/// `p_out` across), layer `B` is uniform noise with edge probability
/// `p_noise`. Features are Gaussian with a small class-dependent mean shift.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedSbm {
    pub nodes: usize,
    pub classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub p_noise: f64,
    pub feature_dim: usize,
    /// Mean shift of the class-indicator feature block, in units of the noise std.
    pub feature_signal: f64,
}

impl Default for PlantedSbm {
    fn default() -> Self {
        PlantedSbm {
            nodes: 200,
            classes: 2,
            p_in: 0.2,
            p_out: 0.02,
            p_noise: 0.1,
            feature_dim: 32,
            feature_signal: 0.5,
        }
    }
}

fn sample_pairs<R: Rng>(
    n: usize,
    rng: &mut R,
    mut prob: impl FnMut(usize, usize) -> f64,
) -> Vec<Edge> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < prob(u, v) {
                edges.push((u, v));
            }
        }
    }
    let reversed: Vec<Edge> = edges.iter().map(|&(u, v)| (v, u)).collect();
    edges.extend(reversed);
    edges
}

impl PlantedSbm {
    /// Class of node `i` (classes are interleaved, so they stay balanced).
    pub fn class_of(&self, i: usize) -> usize {
        i % self.classes
    }

    pub fn generate(&self, seed: u64) -> Result<MultiplexGraph> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.nodes;
        let signal = sample_pairs(n, &mut rng, |u, v| {
            if self.class_of(u) == self.class_of(v) {
                self.p_in
            } else {
                self.p_out
            }
        });
        let noise = sample_pairs(n, &mut rng, |_, _| self.p_noise);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let block = (self.feature_dim / self.classes).max(1);
        let mut features = Tensor::zeros(n, self.feature_dim);
        for i in 0..n {
            let c = self.class_of(i);
            for j in 0..self.feature_dim {
                let shift = if j / block == c {
                    self.feature_signal
                } else {
                    0.0
                };
                features.set(i, j, shift + normal.sample(&mut rng));
            }
        }
        let labels = (0..n).map(|i| Some(self.class_of(i))).collect();
        MultiplexGraph::new(
            "planted",
            features,
            vec![EdgeLayer::new("A", signal), EdgeLayer::new("B", noise)],
            Some(labels),
            self.classes,
        )
    }
}
