use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use muxfuse::graph::synthetic::PlantedSbm;
use muxfuse::graph::{build_knn_layer, layer_adjacency, MultiplexGraph, ZeroNormPolicy};
use muxfuse::pipeline::{stream_rng, DgiModel, RunConfig};
use muxfuse::{Adam, ParamStore, Tape, Tensor};

fn graph(nodes: usize) -> MultiplexGraph {
    PlantedSbm {
        nodes,
        p_in: 10.0 / nodes as f64,
        p_out: 1.0 / nodes as f64,
        p_noise: 5.0 / nodes as f64,
        feature_dim: 256,
        ..PlantedSbm::default()
    }
    .generate(0)
    .unwrap()
}

fn spmm(c: &mut Criterion) {
    let g = graph(2000);
    let adj = layer_adjacency(&g).unwrap().remove(0).matrix;
    let h = Tensor::new(
        2000,
        64,
        (0..2000 * 64).map(|i| (i % 17) as f64 * 0.1).collect(),
    )
    .unwrap();
    c.bench_function("spmm 2000 nodes x 64", |b| {
        b.iter(|| adj.matmul_dense(black_box(&h)).unwrap())
    });
}

fn knn(c: &mut Criterion) {
    let g = graph(1000);
    c.bench_function("knn k=10 1000x256", |b| {
        b.iter(|| build_knn_layer(black_box(&g), 10, ZeroNormPolicy::Reject).unwrap())
    });
}

fn dgi_epoch(c: &mut Criterion) {
    let g = graph(2000);
    let adj = layer_adjacency(&g).unwrap().remove(0).matrix;
    let x = g.feature_csr().clone();
    let cfg = RunConfig::default();
    let mut rng = stream_rng(0, 0);
    let mut store = ParamStore::new();
    let model = DgiModel::new(&mut store, g.feature_dim(), &cfg, &mut rng);
    let perm: Vec<usize> = (1..g.num_nodes()).chain([0]).collect();
    let xc = Arc::new(x.permute_rows(&perm));
    let mut opt = Adam::new(cfg.lr);
    c.bench_function("dgi epoch 2000 nodes d=64", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let loss = model.loss(&mut tape, &store, &adj, &x, &xc).unwrap();
            tape.backward(loss, &mut store).unwrap();
            opt.step(&mut store).unwrap();
        })
    });
}

criterion_group!(benches, spmm, knn, dgi_epoch);
criterion_main!(benches);
