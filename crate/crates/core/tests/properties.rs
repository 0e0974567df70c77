use std::sync::Arc;

use muxfuse::encoder::{encode_layerwise, GcnEncoder, MultiplexPattern, NodeInput};
use muxfuse::fusion::{fuse_reduce, vote, AttentionFuser, ReduceKind, VoteMode};
use muxfuse::graph::{
    build_knn_layer, corrupt_features, flatten, normalize_adjacency, Edge, EdgeLayer,
    MultiplexGraph, ZeroNormPolicy,
};
use muxfuse::ndauto::grad_check;
use muxfuse::objective::{
    barlow_twins_loss, dgi_loss, link_prediction_loss, mse_loss, BtConfig, DgiHead,
};
use muxfuse::{ParamStore, SparseMatrix, Tape, Tensor, Var};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0f64..3.0, rows * cols)
        .prop_map(move |d| Tensor::new(rows, cols, d).unwrap())
}

fn sparse_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(prop_oneof![3 => Just(0.0), 2 => -3.0f64..3.0], rows * cols)
        .prop_map(move |d| Tensor::new(rows, cols, d).unwrap())
}

/// Undirected simple edge list on `n` nodes, both directions stored.
fn undirected(n: usize) -> impl Strategy<Value = Vec<Edge>> {
    prop::collection::btree_set((0..n, 0..n), 0..3 * n).prop_map(|set| {
        let mut out = Vec::new();
        for (u, v) in set {
            if u < v {
                out.push((u, v));
                out.push((v, u));
            }
        }
        out
    })
}

fn graph(n: usize, d: usize, layers: Vec<Vec<Edge>>, x: Tensor) -> MultiplexGraph {
    let layers = layers
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            EdgeLayer::new(
                format!("L{i}"),
                if e.is_empty() {
                    vec![(0, 1), (1, 0)]
                } else {
                    e
                },
            )
        })
        .collect();
    assert_eq!(x.shape(), (n, d));
    MultiplexGraph::new("p", x, layers, None, 0).unwrap()
}

fn to_na(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

fn sorted_rows(t: &Tensor) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = (0..t.rows()).map(|r| t.row(r).to_vec()).collect();
    rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
    rows
}

/// One step of a random smooth composite over a pool of `4 x 3` values.
#[derive(Clone, Debug)]
enum Step {
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Tanh(usize),
    Sigmoid(usize),
    Softplus(usize),
    Softmax(usize),
    Standardize(usize),
    Mix(usize),
}

fn step() -> impl Strategy<Value = Step> {
    let i = || 0usize..16;
    prop_oneof![
        (i(), i()).prop_map(|(a, b)| Step::Add(a, b)),
        (i(), i()).prop_map(|(a, b)| Step::Sub(a, b)),
        (i(), i()).prop_map(|(a, b)| Step::Mul(a, b)),
        i().prop_map(Step::Tanh),
        i().prop_map(Step::Sigmoid),
        i().prop_map(Step::Softplus),
        i().prop_map(Step::Softmax),
        i().prop_map(Step::Standardize),
        i().prop_map(Step::Mix),
    ]
}

fn apply(tape: &mut Tape, pool: &[Var], mix: Var, s: &Step) -> muxfuse::Result<Var> {
    let at = |i: &usize| pool[i % pool.len()];
    match s {
        Step::Add(a, b) => tape.add(at(a), at(b)),
        Step::Sub(a, b) => tape.sub(at(a), at(b)),
        Step::Mul(a, b) => tape.hadamard(at(a), at(b)),
        Step::Tanh(a) => tape.tanh(at(a)),
        Step::Sigmoid(a) => tape.sigmoid(at(a)),
        Step::Softplus(a) => tape.softplus(at(a)),
        Step::Softmax(a) => tape.softmax_rows(at(a)),
        Step::Standardize(a) => tape.colwise_standardize_with(at(a), 1e-2),
        Step::Mix(a) => tape.matmul(at(a), mix),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_composites_pass_grad_check((a, b, w) in (matrix(4, 3), matrix(4, 3), matrix(3, 3)), steps in prop::collection::vec(step(), 1..6)) {
        let mut store = ParamStore::new();
        let ids = [store.add("a", a), store.add("b", b), store.add("w", w)];
        let loss = |tape: &mut Tape, store: &ParamStore| {
            let mut pool = vec![tape.param(store, ids[0]), tape.param(store, ids[1])];
            let mix = tape.param(store, ids[2]);
            for s in &steps {
                let bounded = apply(tape, &pool, mix, s)?;
                pool.push(tape.tanh(bounded)?);
            }
            let last = *pool.last().unwrap();
            let sq = tape.hadamard(last, last)?;
            tape.mean_all(sq)
        };
        let report = grad_check(&mut store, loss, 1e-4).unwrap();
        prop_assert!(report.passed(), "{:?}", report);
    }

    #[test]
    fn spmm_equals_dense_product((a, b) in (1usize..=8, 1usize..=8, 1usize..=8).prop_flat_map(|(m, k, n)| (sparse_matrix(m, k), matrix(k, n)))) {
        let sparse = SparseMatrix::from_dense(&a);
        let got = sparse.matmul_dense(&b).unwrap();
        let want = to_na(&a) * to_na(&b);
        for r in 0..got.rows() {
            for c in 0..got.cols() {
                prop_assert!((got.get(r, c) - want[(r, c)]).abs() <= 1e-12);
            }
        }
        let mut tape = Tape::new();
        let bv = tape.constant(b.clone());
        let out = tape.spmm(&Arc::new(sparse), bv).unwrap();
        prop_assert_eq!(tape.value(out), &got);
    }

    #[test]
    fn flatten_keeps_every_edge(layers in prop::collection::vec(undirected(8), 1..4)) {
        let g = graph(8, 2, layers, Tensor::full(8, 2, 1.0));
        let total: usize = g.layers().iter().map(EdgeLayer::len).sum();
        prop_assert_eq!(flatten(&g).layers()[0].len(), total);
    }

    #[test]
    fn knn_edge_count_is_2nk((x, k) in (4usize..=15).prop_flat_map(|n| (matrix(n, 4), 1..n))) {
        prop_assume!((0..x.rows()).all(|r| x.row(r).iter().any(|&v| v != 0.0)));
        let n = x.rows();
        let g = graph(n, 4, vec![vec![(0, 1), (1, 0)]], x);
        let layer = build_knn_layer(&g, k, ZeroNormPolicy::Reject).unwrap();
        prop_assert_eq!(layer.len(), 2 * n * k);
        prop_assert!(layer.edges.iter().all(|&(u, v)| u != v));
    }

    #[test]
    fn normalized_adjacency_is_symmetric_and_contractive(edges in undirected(10), w in 0.1f64..5.0) {
        let weights = vec![w; edges.len()];
        let a = normalize_adjacency(&edges, 10, Some(&weights)).unwrap();
        prop_assert!(a.max_asymmetry().unwrap() <= 1e-12);
        let eig = to_na(&a.to_dense()).symmetric_eigen();
        prop_assert!(eig.eigenvalues.iter().all(|&l| l <= 1.0 + 1e-9), "{:?}", eig.eigenvalues);
        prop_assert!((0..10).all(|r| a.row(r).map(|(_, v)| v).sum::<f64>() > 0.0));
    }

    #[test]
    fn corruption_permutes_feature_rows(x in matrix(9, 3), seed in any::<u64>()) {
        let g = graph(9, 3, vec![vec![(0, 1), (1, 0)]], x);
        let c = corrupt_features(&g, seed);
        prop_assert_eq!(sorted_rows(c.features()), sorted_rows(g.features()));
        prop_assert_ne!(c.features(), g.features());
        prop_assert_eq!(c.layers(), g.layers());
    }

    #[test]
    fn gcn_isolated_node_sees_only_itself((x, noise) in (matrix(6, 3), matrix(6, 3)), seed in any::<u64>()) {
        // node 5 has no edges
        let edges = vec![(0, 1), (1, 0), (1, 2), (2, 1), (3, 4), (4, 3)];
        let adj = Arc::new(normalize_adjacency(&edges, 6, None).unwrap());
        let mut store = ParamStore::new();
        let enc = GcnEncoder::new(&mut store, "e", &[3, 4], &mut ChaCha8Rng::seed_from_u64(seed));
        let embed = |x: &Tensor| {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let z = enc.forward(&mut tape, &store, &adj, NodeInput::Dense(xv)).unwrap();
            tape.value(z).row(5).to_vec()
        };
        let mut perturbed = noise;
        perturbed.row_mut(5).copy_from_slice(x.row(5));
        prop_assert_eq!(embed(&x), embed(&perturbed));
    }

    #[test]
    fn layerwise_encoding_is_permutation_equivariant(
        (layers, x, perm) in (prop::collection::vec(undirected(7), 2), matrix(7, 3), Just((0..7).collect::<Vec<usize>>()).prop_shuffle()),
        seed in any::<u64>()
    ) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encs = vec![
            GcnEncoder::new(&mut store, "a", &[3, 4], &mut rng),
            GcnEncoder::new(&mut store, "b", &[3, 4], &mut rng),
        ];
        // node i of the relabelled graph is node perm[i] of the original
        let mut inv = [0; 7];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let run = |layers: &[Vec<Edge>], x: &Tensor| -> Vec<Tensor> {
            let adjs: Vec<_> = layers.iter().map(|e| Arc::new(normalize_adjacency(e, 7, None).unwrap())).collect();
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let zs = encode_layerwise(&encs, &mut tape, &store, &adjs, NodeInput::Dense(xv)).unwrap();
            zs.iter().map(|&z| tape.value(z).clone()).collect()
        };
        let relabeled: Vec<Vec<Edge>> = layers.iter().map(|l| l.iter().map(|&(u, v)| (inv[u], inv[v])).collect()).collect();
        let base = run(&layers, &x);
        let moved = run(&relabeled, &x.select_rows(&perm));
        for (b, m) in base.iter().zip(&moved) {
            prop_assert!(b.select_rows(&perm).max_abs_diff(m) <= 1e-12);
        }
    }

    #[test]
    fn equal_beta_weights_scale_the_flattened_adjacency(layers in prop::collection::vec(undirected(6), 2..4), beta in 0.1f64..3.0) {
        let g = graph(6, 1, layers, Tensor::full(6, 1, 1.0));
        let pattern = MultiplexPattern::new(&g).unwrap();
        let weights = pattern.edge_weights(&vec![beta; g.num_layers()]).unwrap();
        let flat = flatten(&g);
        let counts = SparseMatrix::from_triplets(
            6, 6, &flat.layers()[0].edges.iter().map(|&(u, v)| (u, v, 1.0)).collect::<Vec<_>>()).unwrap();
        let p = pattern.pattern();
        for r in 0..6 {
            for (e, (c, _)) in (p.row_ptr()[r]..).zip(p.row(r)) {
                prop_assert!((weights[e] - beta * counts.get(r, c)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn bt_loss_ignores_columnwise_affine_maps(
        (za, zb) in (matrix(12, 3), matrix(12, 3)),
        scale in prop::collection::vec(0.1f64..10.0, 3),
        shift in prop::collection::vec(-5.0f64..5.0, 3)
    ) {
        let cfg = BtConfig { lambda: 0.3, eps: 0.0 };
        let mut moved = za.clone();
        for r in 0..12 {
            for c in 0..3 {
                moved.set(r, c, scale[c] * za.get(r, c) + shift[c]);
            }
        }
        let loss = |a: &Tensor| {
            let mut t = Tape::new();
            let (av, bv) = (t.constant(a.clone()), t.constant(zb.clone()));
            let l = barlow_twins_loss(&mut t, av, bv, cfg).unwrap();
            t.value(l).item()
        };
        prop_assert!((loss(&za) - loss(&moved)).abs() <= 1e-9);
    }

    #[test]
    fn dgi_loss_is_symmetric_under_joint_row_permutation(
        (zp, zn, perm) in (matrix(8, 3), matrix(8, 3), Just((0..8).collect::<Vec<usize>>()).prop_shuffle()),
        seed in any::<u64>()
    ) {
        let mut store = ParamStore::new();
        let head = DgiHead::new(&mut store, "h", 3, &mut ChaCha8Rng::seed_from_u64(seed));
        let loss = |p: Tensor, n: Tensor| {
            let mut t = Tape::new();
            let (pv, nv) = (t.constant(p), t.constant(n));
            let l = dgi_loss(&head, &mut t, &store, pv, nv).unwrap();
            t.value(l).item()
        };
        let a = loss(zp.clone(), zn.clone());
        let b = loss(zp.select_rows(&perm), zn.select_rows(&perm));
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn losses_are_non_negative((za, zb) in (matrix(6, 3), matrix(6, 3)), seed in any::<u64>()) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = DgiHead::new(&mut store, "h", 3, &mut rng);
        let mut t = Tape::new();
        let (a, b) = (t.constant(za), t.constant(zb));
        let losses = [
            dgi_loss(&head, &mut t, &store, a, b).unwrap(),
            barlow_twins_loss(&mut t, a, b, BtConfig::for_dim(3)).unwrap(),
            mse_loss(&mut t, a, b).unwrap(),
            link_prediction_loss(&mut t, a, &[(0, 1), (2, 3)], &[(4, 5), (1, 3)]).unwrap(),
        ];
        for l in losses {
            prop_assert!(t.value(l).item() >= 0.0);
        }
    }

    #[test]
    fn reducers_ignore_layer_order((zs, perm) in (prop::collection::vec(matrix(4, 3), 3), Just(vec![0usize, 1, 2]).prop_shuffle())) {
        let shuffled: Vec<Tensor> = perm.iter().map(|&i| zs[i].clone()).collect();
        for kind in [ReduceKind::Min, ReduceKind::Max] {
            prop_assert_eq!(fuse_reduce(kind, &zs).unwrap(), fuse_reduce(kind, &shuffled).unwrap());
        }
        for kind in [ReduceKind::Mean, ReduceKind::Sum] {
            prop_assert!(fuse_reduce(kind, &zs).unwrap().max_abs_diff(&fuse_reduce(kind, &shuffled).unwrap()) <= 1e-12);
        }
        let cat = fuse_reduce(ReduceKind::Concat, &zs).unwrap();
        let cat_shuffled = fuse_reduce(ReduceKind::Concat, &shuffled).unwrap();
        for (block, &src) in perm.iter().enumerate() {
            for r in 0..4 {
                prop_assert_eq!(&cat_shuffled.row(r)[block * 3..block * 3 + 3], &cat.row(r)[src * 3..src * 3 + 3]);
            }
        }
    }

    #[test]
    fn attention_output_is_a_convex_combination(zs in prop::collection::vec(matrix(5, 3), 1..4), seed in any::<u64>()) {
        let mut store = ParamStore::new();
        let fuser = AttentionFuser::new(&mut store, zs.len(), 3, 4, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut t = Tape::new();
        let vars: Vec<_> = zs.iter().map(|z| t.constant(z.clone())).collect();
        let (fused, alpha) = fuser.fuse(&mut t, &store, &vars).unwrap();
        let alpha = t.value(alpha).data().to_vec();
        prop_assert!((alpha.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(alpha.iter().all(|&a| a >= 0.0));
        let fused = t.value(fused);
        for r in 0..5 {
            for c in 0..3 {
                let lo = zs.iter().map(|z| z.get(r, c)).fold(f64::INFINITY, f64::min);
                let hi = zs.iter().map(|z| z.get(r, c)).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(fused.get(r, c) >= lo - 1e-12 && fused.get(r, c) <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn soft_vote_ignores_uniform_duplication(probs in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 12), 1..4), copies in 2usize..4) {
        let normalize = |row: &[f64]| { let s: f64 = row.iter().sum(); row.iter().map(|v| v / s).collect::<Vec<_>>() };
        let clf: Vec<Tensor> = probs
            .iter()
            .map(|p| Tensor::from_rows(&p.chunks(3).map(normalize).collect::<Vec<_>>()).unwrap())
            .collect();
        let dup: Vec<Tensor> = clf.iter().flat_map(|t| std::iter::repeat_n(t.clone(), copies)).collect();
        prop_assert_eq!(vote(VoteMode::Soft, &clf).unwrap(), vote(VoteMode::Soft, &dup).unwrap());
    }

    #[test]
    fn hard_vote_ignores_row_rescaling(probs in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 12), 1..5), c in 0.1f64..10.0) {
        let normalize = |row: &[f64]| { let s: f64 = row.iter().sum(); row.iter().map(|v| v / s).collect::<Vec<_>>() };
        let clf: Vec<Tensor> = probs
            .iter()
            .map(|p| Tensor::from_rows(&p.chunks(3).map(normalize).collect::<Vec<_>>()).unwrap())
            .collect();
        let renorm = |t: &Tensor| {
            let mut out = t.clone();
            for r in 0..t.rows() {
                let s: f64 = t.row(r).iter().map(|v| v * c).sum();
                for (o, v) in out.row_mut(r).iter_mut().zip(t.row(r)) {
                    *o = v * c / s;
                }
            }
            out
        };
        let scaled: Vec<Tensor> = clf.iter().map(renorm).collect();
        prop_assert_eq!(vote(VoteMode::Hard, &clf).unwrap(), vote(VoteMode::Hard, &scaled).unwrap());
    }
}
