use hunkfix_nn::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tree(rng: &mut ChaCha8Rng, n: usize) -> TreeShape {
    let mut kids = vec![Vec::new(); n];
    for i in 1..n {
        let p = rng.gen_range(0..i);
        kids[p].push(i);
    }
    fn post(v: usize, kids: &[Vec<usize>], out: &mut Vec<usize>) {
        for &c in &kids[v] {
            post(c, kids, out);
        }
        out.push(v);
    }
    let mut order = Vec::new();
    post(0, &kids, &mut order);
    let mut pos = vec![0; n];
    for (k, &v) in order.iter().enumerate() {
        pos[v] = k;
    }
    TreeShape::from_children(
        order
            .iter()
            .map(|&v| kids[v].iter().map(|&c| pos[c]).collect())
            .collect(),
    )
    .unwrap()
}

// Plain-loop reference for one Child-Sum Tree-LSTM node.
fn oracle_node(
    store: &ParamStore<f64>,
    cell: &ChildSumTreeLstmCell,
    x: &[f64],
    kids: &[(Vec<f64>, Vec<f64>)],
) -> (Vec<f64>, Vec<f64>) {
    let hs = cell.hidden;
    let w = store.get(cell.w);
    let u_iou = store.get(cell.u_iou);
    let u_f = store.get(cell.u_f);
    let b = store.get(cell.b);
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let xw = |col: usize| b.get(0, col) + (0..x.len()).map(|k| x[k] * w.get(k, col)).sum::<f64>();
    let h_sum: Vec<f64> = (0..hs)
        .map(|j| kids.iter().map(|(h, _)| h[j]).sum())
        .collect();
    let hu = |col: usize| (0..hs).map(|k| h_sum[k] * u_iou.get(k, col)).sum::<f64>();
    let mut h = vec![0.0; hs];
    let mut c = vec![0.0; hs];
    for j in 0..hs {
        let i = sig(xw(j) + hu(j));
        let o = sig(xw(hs + j) + hu(hs + j));
        let u = (xw(2 * hs + j) + hu(2 * hs + j)).tanh();
        let mut cj = i * u;
        for (hk, ck) in kids {
            let f = sig(xw(3 * hs + j) + (0..hs).map(|k| hk[k] * u_f.get(k, j)).sum::<f64>());
            cj += f * ck[j];
        }
        c[j] = cj;
        h[j] = o * cj.tanh();
    }
    (h, c)
}

#[test]
fn tree_lstm_matches_reference_on_random_trees() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for t in 0..50 {
        let mut store = ParamStore::<f64>::new();
        let (input, hidden) = (rng.gen_range(1..5), rng.gen_range(1..6));
        let cell = ChildSumTreeLstmCell::new(&mut store, "tl", input, hidden, &mut rng);
        for x in store.get_mut(cell.b).data_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
        let n = rng.gen_range(1..12);
        let shape = random_tree(&mut rng, n);
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..input).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut g = Graph::new();
        let ins: Vec<Var> = xs.iter().map(|x| g.row(x)).collect();
        let states = encode_tree(&mut g, &store, &cell, &shape, &ins).unwrap();
        let mut reference: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        for i in 0..n {
            let kids: Vec<_> = shape
                .children(i)
                .iter()
                .map(|&c| reference[c].clone())
                .collect();
            reference.push(oracle_node(&store, &cell, &xs[i], &kids));
        }
        for i in 0..n {
            let h = g.value(states[i].h).data();
            let c = g.value(states[i].c).data();
            for j in 0..hidden {
                assert!((h[j] - reference[i].0[j]).abs() < 1e-9, "tree {t} node {i}");
                assert!((c[j] - reference[i].1[j]).abs() < 1e-9, "tree {t} node {i}");
            }
        }
    }
}

#[test]
fn child_sum_is_order_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::<f64>::new();
    let cell = ChildSumTreeLstmCell::new(&mut store, "tl", 3, 4, &mut rng);
    let xs: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let root_h = |children: Vec<usize>| {
        let shape = TreeShape::from_children(vec![vec![], vec![], vec![], children]).unwrap();
        let mut g = Graph::new();
        let ins: Vec<Var> = xs.iter().map(|x| g.row(x)).collect();
        let st = encode_tree(&mut g, &store, &cell, &shape, &ins).unwrap();
        g.value(st[3].h).data().to_vec()
    };
    let a = root_h(vec![0, 1, 2]);
    let b = root_h(vec![2, 0, 1]);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn zero_parameters_give_closed_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut store = ParamStore::<f64>::new();
    let gru = GruCell::new(&mut store, "gru", 2, 3, &mut rng);
    let tl = ChildSumTreeLstmCell::new(&mut store, "tl", 2, 3, &mut rng);
    store.zero_all();
    let mut g = Graph::new();
    let x = g.row(&[0.3, -0.7]);
    // Leaf: u = tanh(0) = 0 forces c = 0 and h = 0.
    let leaf = tl.forward(&mut g, &store, x, &[]).unwrap();
    assert!(g
        .value(leaf.h)
        .data()
        .iter()
        .chain(g.value(leaf.c).data())
        .all(|&v| v == 0.0));
    let h = g.row(&[0.4, -1.0, 2.0]);
    // z = 1/2, n = 0, so h' = h / 2.
    let h1 = gru.step(&mut g, &store, x, h).unwrap();
    assert_eq!(g.value(h1).data(), &[0.2, -0.5, 1.0]);
    // A child with c = 2 under zero weights: i = o = f = 1/2, u = 0, so c = 1, h = tanh(1) / 2.
    let hc = g.row(&[0.0; 3]);
    let cc = g.row(&[2.0; 3]);
    let st = tl
        .forward(&mut g, &store, x, &[NodeState { h: hc, c: cc }])
        .unwrap();
    for &v in g.value(st.c).data() {
        assert!((v - 1.0).abs() < 1e-15);
    }
    for &v in g.value(st.h).data() {
        assert!((v - 0.5 * 1f64.tanh()).abs() < 1e-15);
    }
}

fn mapper(residual: bool) -> TreeMapperConfig {
    TreeMapperConfig {
        input: 3,
        hidden: 4,
        attention: true,
        residual,
    }
}

fn rows(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

#[test]
fn identity_maps_have_zero_cycle_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let model = CycleModel::<f64>::new(mapper(true), CycleConfig::default(), 1);
    let shape = random_tree(&mut rng, 5);
    let s = CycleSample {
        shape,
        a: rows(&mut rng, 5),
        b: rows(&mut rng, 5),
        mask: None,
        focus: None,
    };
    let l = model.losses(&[s]).unwrap();
    assert_eq!(l.cyc, 0.0);
}

#[test]
fn alpha_zero_total_is_sum_of_run_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let cfg = CycleConfig {
        alpha: 0.0,
        ..CycleConfig::default()
    };
    let model = CycleModel::<f64>::new(mapper(false), cfg, 2);
    let shape = random_tree(&mut rng, 6);
    let s = CycleSample {
        shape,
        a: rows(&mut rng, 6),
        b: rows(&mut rng, 6),
        mask: None,
        focus: None,
    };
    let l = model.losses(&[s]).unwrap();
    assert!(l.cyc > 0.0);
    assert!((l.total - (l.run_m + l.run_n)).abs() < 1e-12);
}

#[test]
fn batch_losses_match_hand_computation() {
    // M(x) = x + c and N(y) = y, via zero output weights plus the residual path.
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let cfg = CycleConfig {
        adversarial: false,
        ..CycleConfig::default()
    };
    let mut model = CycleModel::<f64>::new(mapper(true), cfg, 3);
    let shift = [0.5, -0.25, 0.125];
    let bias = model.m.out.b;
    model.store.get_mut(bias).data_mut().copy_from_slice(&shift);
    let samples: Vec<CycleSample<f64>> = [2usize, 4]
        .iter()
        .map(|&n| CycleSample {
            shape: random_tree(&mut rng, n),
            a: rows(&mut rng, n),
            b: rows(&mut rng, n),
            mask: None,
            focus: None,
        })
        .collect();
    let mut expect = LossValues::default();
    for s in &samples {
        let mut run_m = 0.0;
        let mut run_n = 0.0;
        let mut cyc = 0.0;
        for (a, b) in s.a.iter().zip(&s.b) {
            for j in 0..3 {
                run_m += (a[j] + shift[j] - b[j]).powi(2);
                run_n += (b[j] - a[j]).powi(2);
                cyc += 2.0 * f64::abs(shift[j]);
            }
        }
        expect.run_m += run_m / 2.0;
        expect.run_n += run_n / 2.0;
        expect.cyc += cyc / 2.0;
    }
    expect.total = expect.run_m + expect.run_n + 10.0 * expect.cyc;
    let got = model.losses(&samples).unwrap();
    for (g, e) in [
        (got.run_m, expect.run_m),
        (got.run_n, expect.run_n),
        (got.cyc, expect.cyc),
        (got.total, expect.total),
    ] {
        assert!((g - e).abs() < 1e-9, "{g} vs {e}");
    }
}

#[test]
fn cycle_off_trains_forward_map_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let cfg = CycleConfig {
        cycle: false,
        ..CycleConfig::default()
    };
    let model = CycleModel::<f64>::new(mapper(false), cfg, 4);
    let s = CycleSample {
        shape: random_tree(&mut rng, 3),
        a: rows(&mut rng, 3),
        b: rows(&mut rng, 3),
        mask: None,
        focus: None,
    };
    let l = model.losses(&[s]).unwrap();
    assert_eq!(l.run_n, 0.0);
    assert_eq!(l.cyc, 0.0);
    assert_eq!(l.total, l.run_m);
}

#[test]
fn empty_batch_is_an_error() {
    let model = CycleModel::<f32>::new(mapper(true), CycleConfig::default(), 5);
    assert!(matches!(model.losses(&[]), Err(NnError::EmptyBatch)));
}

#[test]
fn training_reduces_loss_and_checkpoint_roundtrips() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    // Target: a constant shift of every node vector.
    let samples: Vec<CycleSample<f32>> = (0..16)
        .map(|_| {
            let n = rng.gen_range(2..6);
            let a: Vec<Vec<f32>> = (0..n)
                .map(|_| (0..3).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
                .collect();
            let b = a
                .iter()
                .map(|r| vec![r[0] + 0.8, r[1] - 0.5, r[2]])
                .collect();
            CycleSample {
                shape: random_tree(&mut rng, n),
                a,
                b,
                mask: None,
                focus: None,
            }
        })
        .collect();
    let mut model = CycleModel::<f32>::new(mapper(true), CycleConfig::default(), 6);
    let mut opt = CycleOptimizer::new(
        &model,
        AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        },
    );
    let before = model.losses(&samples).unwrap();
    for _ in 0..100 {
        model.train_epoch(&samples, &mut opt, 4).unwrap();
    }
    let after = model.losses(&samples).unwrap();
    assert!(
        after.run_m < 0.7 * before.run_m,
        "{} -> {}",
        before.run_m,
        after.run_m
    );

    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path(), "ctl").unwrap();
    let loaded = CycleModel::<f32>::load(dir.path(), "ctl").unwrap();
    let s = &samples[0];
    assert_eq!(
        model.predict(&s.shape, &s.a).unwrap(),
        loaded.predict(&s.shape, &s.a).unwrap()
    );
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let samples: Vec<CycleSample<f32>> = (0..8)
        .map(|_| {
            let a: Vec<Vec<f32>> = (0..3)
                .map(|_| (0..3).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
                .collect();
            let b = a
                .iter()
                .map(|r| r.iter().map(|v| v * 0.5).collect())
                .collect();
            CycleSample {
                shape: random_tree(&mut rng, 3),
                a,
                b,
                mask: None,
                focus: None,
            }
        })
        .collect();
    let run = || {
        let mut model = CycleModel::<f32>::new(mapper(true), CycleConfig::default(), 7);
        let mut opt = CycleOptimizer::new(&model, AdamConfig::default());
        for _ in 0..3 {
            model.train_epoch(&samples, &mut opt, 3).unwrap();
        }
        model.predict(&samples[0].shape, &samples[0].a).unwrap()
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(vals in prop::collection::vec(-30.0f64..30.0, 1..24), cols in 1usize..6) {
        let rows = vals.len() / cols;
        prop_assume!(rows > 0);
        let t = Tensor::new(Shape::new(rows, cols), vals[..rows * cols].to_vec());
        let mut g = Graph::new();
        let v = g.constant(t);
        let s = g.softmax_rows(v).unwrap();
        let out = g.value(s);
        for r in 0..rows {
            let sum: f64 = out.row_slice(r).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(out.row_slice(r).iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn matmul_distributes_over_addition(a in prop::collection::vec(-5.0f64..5.0, 6), b in prop::collection::vec(-5.0f64..5.0, 6), c in prop::collection::vec(-5.0f64..5.0, 6)) {
        let a = Tensor::new(Shape::new(2, 3), a);
        let b = Tensor::new(Shape::new(3, 2), b);
        let c = Tensor::new(Shape::new(3, 2), c);
        let mut bc = b.clone();
        bc.add_assign(&c);
        let lhs = a.matmul(&bc);
        let mut rhs = a.matmul(&b);
        rhs.add_assign(&a.matmul(&c));
        for (x, y) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}
