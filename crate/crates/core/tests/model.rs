use xgbot::graph::{gen_dataset, GeneratorConfig, Graph, Topology};
use xgbot::model::{
    load_checkpoint, save_checkpoint, train, write_checkpoint, ClassWeight, XgBotConfig, XgBotModel,
};
use xgbot::numerics::{finite_difference_gradient, meter, Matrix, Mode, RngState};
use xgbot::revblock::{
    rev_backward_in_place, rev_backward_stored, rev_forward_in_place, rev_forward_stored,
    RevBlockParams,
};

fn random_graph(n: usize, m: usize, seed: u64) -> Graph {
    let mut rng = RngState::new(seed);
    let mut edges = Vec::new();
    while edges.len() < m {
        let (a, b) = (rng.below(n), rng.below(n));
        if a != b {
            edges.push((a, b));
        }
    }
    let features = Matrix::new(n, 1, (0..n).map(|_| rng.uniform(0.5, 1.5)).collect()).unwrap();
    let labels = (0..n).map(|i| u8::from(i % 4 == 1)).collect();
    Graph::new(n, edges, features, labels).unwrap()
}

fn small(blocks: usize, channels: usize, seed: u64) -> XgBotModel {
    XgBotModel::from_seed(&XgBotConfig {
        blocks,
        channels,
        seed,
        ..XgBotConfig::default()
    })
    .unwrap()
}

fn rel_err(analytic: &Matrix, numeric: &Matrix) -> f64 {
    analytic.max_abs_diff(numeric) / numeric.max_abs().max(1e-300)
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let g = random_graph(12, 24, 5);
    let weights = (1.0, 3.0);
    let mask0: Vec<f64> = (0..g.num_edges()).map(|i| 0.3 + 0.05 * i as f64 % 0.7).collect();
    let base = small(2, 8, 11);

    let mut work = base.clone();
    let (_, dmask) = work
        .loss_and_grad_masked(&g, Some(&mask0), weights, Mode::Train)
        .unwrap();
    let analytic: Vec<Matrix> = work.params_mut().iter().map(|p| p.grad.clone()).collect();
    let count = analytic.len();
    assert_eq!(count, 4 + 2 * 2 * 6);

    for idx in 0..count {
        let x = base.clone().params_mut()[idx].value.clone();
        let numeric = finite_difference_gradient(
            |v| {
                let mut m = base.clone();
                m.params_mut()[idx].value = v.clone();
                m.loss_and_grad_masked(&g, Some(&mask0), weights, Mode::Train).unwrap().0
            },
            &x,
            1e-5,
        )
        .unwrap();
        // the pre-normalization bias has an identically zero gradient
        let is_lin1_bias = idx >= 2 && idx < count - 2 && (idx - 2) % 6 == 1;
        if is_lin1_bias {
            assert!(analytic[idx].max_abs() < 1e-12 && numeric.max_abs() < 1e-7);
        } else {
            let e = rel_err(&analytic[idx], &numeric);
            assert!(e < 1e-4, "tensor {idx}: relative error {e}");
        }
    }

    let numeric = finite_difference_gradient(
        |m| {
            base.clone()
                .loss_and_grad_masked(&g, Some(m.data()), weights, Mode::Train)
                .unwrap()
                .0
        },
        &Matrix::row_vector(&mask0),
        1e-5,
    )
    .unwrap();
    let e = rel_err(&Matrix::row_vector(&dmask.unwrap()), &numeric);
    assert!(e < 1e-4, "edge mask: relative error {e}");
}

#[test]
fn reconstructing_backward_matches_stored_reference() {
    let g = random_graph(40, 90, 2);
    let mut rng = RngState::new(17);
    let mask: Vec<f64> = (0..g.num_edges()).map(|_| rng.uniform(0.2, 1.0)).collect();
    let blocks: Vec<RevBlockParams> = (0..3).map(|_| RevBlockParams::new(16, 4, &mut rng).unwrap()).collect();
    let x = Matrix::new(40, 16, (0..640).map(|_| rng.normal()).collect()).unwrap();
    let dy = Matrix::new(40, 16, (0..640).map(|_| rng.normal()).collect()).unwrap();

    // reference: keep every activation
    let mut ref_blocks = blocks.clone();
    let mut h = x.clone();
    let mut stored = Vec::new();
    for b in &mut ref_blocks {
        let (y, s) = rev_forward_stored(&h, &g, Some(&mask), b, Mode::Train).unwrap();
        stored.push(s);
        h = y;
    }
    let ref_out = h;
    let mut d = dy.clone();
    let mut ref_dmask = vec![0.0; mask.len()];
    for (b, s) in ref_blocks.iter_mut().zip(&stored).rev() {
        let (dx, dm) = rev_backward_stored(&d, s, &g, b).unwrap();
        for (a, v) in ref_dmask.iter_mut().zip(dm.unwrap()) {
            *a += v;
        }
        d = dx;
    }

    // recomputation
    let mut rec_blocks = blocks.clone();
    let mut h = x.clone();
    let mut sides = Vec::new();
    for b in &mut rec_blocks {
        sides.push(rev_forward_in_place(&mut h, &g, Some(&mask), b, Mode::Train).unwrap());
    }
    assert_eq!(h, ref_out);
    let mut dh = dy.clone();
    let mut dmask = vec![0.0; mask.len()];
    for (b, s) in rec_blocks.iter_mut().zip(&sides).rev() {
        rev_backward_in_place(&mut h, &mut dh, &g, Some(&mask), b, s, Some(&mut dmask)).unwrap();
    }
    assert!(h.max_abs_diff(&x) < 1e-9);
    assert!(rel_err(&dh, &d) < 1e-8, "dx {}", rel_err(&dh, &d));
    let dm = Matrix::row_vector(&dmask);
    let rm = Matrix::row_vector(&ref_dmask);
    assert!(rel_err(&dm, &rm) < 1e-8);
    for (a, b) in rec_blocks.iter_mut().zip(ref_blocks.iter_mut()) {
        for (ga, gb) in a.groups.iter_mut().zip(b.groups.iter_mut()) {
            for (i, (pa, pb)) in ga.params_mut().into_iter().zip(gb.params_mut()).enumerate() {
                let diff = pa.grad.max_abs_diff(&pb.grad);
                if i == 1 {
                    // bias ahead of batch norm: zero up to rounding
                    assert!(pa.grad.max_abs() < 1e-12 && pb.grad.max_abs() < 1e-12);
                    continue;
                }
                assert!(diff <= 1e-8 * pb.grad.max_abs().max(1e-12), "param {i}: {diff:e} vs {:e}", pb.grad.max_abs());
            }
        }
        assert_eq!(a.groups.iter().map(|g| &g.running).collect::<Vec<_>>(), b.groups.iter().map(|g| &g.running).collect::<Vec<_>>());
    }
}

#[test]
fn activation_count_does_not_grow_with_depth() {
    let g = random_graph(60, 150, 8);
    let mut peaks = Vec::new();
    for blocks in [2, 8, 24] {
        let mut m = small(blocks, 16, 1);
        let _watch = meter::watch(60, 16);
        m.loss_and_grad(&g, (1.0, 3.0)).unwrap();
        peaks.push(meter::peak());
        assert_eq!(meter::live(), 0);
    }
    assert!(peaks.iter().all(|&p| p <= 3), "{peaks:?}");
    assert!(peaks.windows(2).all(|w| w[0] == w[1]), "{peaks:?}");
}

#[test]
fn receptive_field_is_blocks_times_groups() {
    // path 0 - 1 - ... - 11; perturbing node 0 reaches exactly L·C hops
    let n = 12;
    let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
    let g = Graph::new(n, edges.clone(), Matrix::filled(n, 1, 1.0), vec![0; n]).unwrap();
    let mut x = Matrix::filled(n, 1, 1.0);
    x.set(0, 0, 3.0);
    let h = Graph::new(n, edges, x, vec![0; n]).unwrap();
    let m = small(2, 8, 4);
    let a = m.logits(&g, None).unwrap();
    let b = m.logits(&h, None).unwrap();
    let changed: Vec<usize> = (0..n).filter(|&v| a.row(v) != b.row(v)).collect();
    assert_eq!(changed, (0..=4).collect::<Vec<_>>());
}

#[test]
fn eval_logits_are_permutation_equivariant() {
    let g = random_graph(50, 120, 21);
    let m = small(3, 8, 2);
    let base = m.logits(&g, None).unwrap();
    let mut rng = RngState::new(99);
    for _ in 0..3 {
        let mut perm: Vec<usize> = (0..50).collect();
        rng.shuffle(&mut perm);
        let out = m.logits(&g.permute(&perm).unwrap(), None).unwrap();
        for v in 0..50 {
            assert_eq!(out.row(perm[v]), base.row(v));
        }
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let g = random_graph(30, 60, 1);
    let mut m = small(2, 8, 7);
    m.config.lr = 0.0;
    let before: Vec<Matrix> = m.params_mut().iter().map(|p| p.value.clone()).collect();
    m.train_step(&g, (1.0, 2.0)).unwrap();
    let after: Vec<Matrix> = m.params_mut().iter().map(|p| p.value.clone()).collect();
    assert_eq!(before, after);
}

fn tiny_dataset() -> xgbot::graph::Dataset {
    let mut cfg = GeneratorConfig::new(Topology::C2, 80, 6);
    cfg.avg_degree = 3.0;
    cfg.graphs = [3, 1, 1];
    cfg.seed = 5;
    gen_dataset(&cfg).unwrap()
}

#[test]
fn training_is_deterministic_and_round_trips() {
    let ds = tiny_dataset();
    let cfg = XgBotConfig {
        blocks: 2,
        channels: 8,
        epochs: 3,
        seed: 13,
        ..XgBotConfig::default()
    };
    let mut a = XgBotModel::from_seed(&cfg).unwrap();
    let mut b = XgBotModel::from_seed(&cfg).unwrap();
    let ra = train(&mut a, &ds, |_| {}).unwrap();
    let rb = train(&mut b, &ds, |_| {}).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(ra.to_csv(), rb.to_csv());
    assert_eq!(write_checkpoint(&a), write_checkpoint(&b));
    assert_eq!(ra.epochs.len(), 3);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&a, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    for g in &ds.test {
        assert_eq!(back.logits(g, None).unwrap(), a.logits(g, None).unwrap());
    }
}

#[test]
fn zero_epochs_returns_the_initial_model() {
    let ds = tiny_dataset();
    let cfg = XgBotConfig {
        blocks: 2,
        channels: 8,
        epochs: 0,
        ..XgBotConfig::default()
    };
    let mut m = XgBotModel::from_seed(&cfg).unwrap();
    let report = train(&mut m, &ds, |_| {}).unwrap();
    assert!(report.epochs.is_empty() && report.best_epoch.is_none());
    assert_eq!(write_checkpoint(&m), write_checkpoint(&XgBotModel::from_seed(&cfg).unwrap()));
}

#[test]
fn training_graph_without_bots_is_rejected_for_auto_weights() {
    let mut ds = tiny_dataset();
    let g = &ds.train[0];
    ds.train[0] = Graph::new(g.num_nodes(), g.edges().to_vec(), g.features().clone(), vec![0; g.num_nodes()]).unwrap();
    let mut m = small(2, 8, 0);
    assert!(train(&mut m, &ds, |_| {}).is_err());
    m.config.class_weight = ClassWeight::Fixed(5.0);
    assert!(train(&mut m, &ds, |_| {}).is_ok());
}

#[test]
fn loss_decreases_on_a_small_problem() {
    let ds = tiny_dataset();
    let cfg = XgBotConfig {
        blocks: 2,
        channels: 8,
        epochs: 15,
        lr: 0.01,
        seed: 2,
        ..XgBotConfig::default()
    };
    let mut m = XgBotModel::from_seed(&cfg).unwrap();
    let report = train(&mut m, &ds, |_| {}).unwrap();
    let first = report.epochs.first().unwrap().train_loss;
    let last = report.epochs.last().unwrap().train_loss;
    assert!(last < first, "{first} -> {last}");
}
