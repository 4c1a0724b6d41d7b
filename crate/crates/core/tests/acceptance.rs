//! Acceptance suite: runs every criterion at its stated tolerance and time
//! limit, prints one PASS/FAIL line each, then fails if any criterion failed.
//!
//! Run with `cargo test -p hunkfix-core --test acceptance -- --nocapture`.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use hunkfix_core::config::Config;
use hunkfix_core::corpus::gen::{random_program, GenConfig};
use hunkfix_core::dataflow::MethodFlow;
use hunkfix_core::diffpair::{classify_bug_type, diff, ground_truth, pair_subtrees, render, replay, BugType, FixingChange, OpKind};
use hunkfix_core::expansion::{expand, FixedLabeler};
use hunkfix_core::lang::{parse, unparse, CoverageMatrix, Kind, TestCoverage};
use hunkfix_core::pipeline::{case_type, desk_corpus, evaluate, train_all, Evaluation};
use hunkfix_core::repair::{unweight, weight, Scheme};
use hunkfix_core::sbfl::ochiai;
use hunkfix_nn::gradcheck::{check_inputs, check_params};
use hunkfix_nn::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ochiai_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let stmts = rng.gen_range(1..=10);
        let tests = rng.gen_range(1..=8);
        let mut rows: Vec<(BTreeSet<usize>, bool)> =
            (0..tests).map(|_| ((0..stmts).filter(|_| rng.gen_bool(0.5)).collect(), rng.gen_bool(0.4))).collect();
        rows[rng.gen_range(0..tests)].1 = false;
        let cov = CoverageMatrix {
            per_test: rows.iter().enumerate().map(|(i, (e, p))| (format!("t{i}"), TestCoverage { executed: e.clone(), passed: *p })).collect(),
        };
        let report = ochiai(&cov).map_err(|e| e.to_string())?;
        let f = rows.iter().filter(|r| !r.1).count() as f64;
        let mut oracle: Vec<(usize, f64)> = (0..stmts)
            .filter_map(|s| {
                let ef = rows.iter().filter(|(e, p)| !p && e.contains(&s)).count() as f64;
                let ep = rows.iter().filter(|(e, p)| *p && e.contains(&s)).count() as f64;
                (ef + ep > 0.0).then(|| (s, ef / (f * (ef + ep)).sqrt()))
            })
            .collect();
        for &(s, v) in &oracle {
            worst = worst.max((report.score(s) - v).abs());
        }
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let got: Vec<usize> = report.ranked.iter().map(|s| s.stmt_id).collect();
        ensure!(got == oracle.iter().map(|o| o.0).collect::<Vec<_>>(), "ranking differs from the oracle sort");
    }
    ensure!(worst <= 1e-12, "max score error {worst:e}");
    Ok(format!("200 matrices, max error {worst:.1e}"))
}

fn expansion_fixture() -> Outcome {
    let p = parse(include_str!("fixtures/expansion.mini")).map_err(|e| e.to_string())?;
    let m = p.methods()[0].clone();
    let on_line = |l: u32| m.statements().into_iter().find(|s| s.span.start_line == l).map(|s| s.id);
    let (Some(seed), Some(buggy)) = (on_line(4), on_line(5)) else { return Err("fixture lines missing".into()) };
    let hunk = expand(seed, &m, &FixedLabeler(BTreeSet::from([buggy])), &MethodFlow::new(&m), 5);
    let lines: Vec<u32> = hunk.stmts.iter().map(|&s| m.find(s).unwrap().span.start_line).collect();
    ensure!(lines == vec![3, 4, 5], "hunk lines {lines:?}");
    Ok("seed line 4 -> lines 3-5".into())
}

fn expansion_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut done = 0;
    while done < 500 {
        let (p, _) = random_program(&mut rng, GenConfig::default());
        let m = p.methods()[0].clone();
        let order = m.statement_ids();
        let Some(&seed) = order.choose(&mut rng) else { continue };
        let labelled: BTreeSet<usize> = order.iter().copied().filter(|_| rng.gen_bool(0.4)).collect();
        let n = rng.gen_range(1..6);
        let flow = MethodFlow::new(&m);
        let got = expand(seed, &m, &FixedLabeler(labelled.clone()), &flow, n).stmts;
        let rule = |s: usize| labelled.contains(&s) || flow.dependent(s, seed);
        let at = order.iter().position(|&s| s == seed).unwrap();
        let mut want = vec![seed];
        for s in (1..=n).take_while(|&d| d <= at).map(|d| order[at - d]).take_while(|&s| rule(s)) {
            want.insert(0, s);
        }
        want.extend((1..=n).filter_map(|d| order.get(at + d).copied()).take_while(|&s| rule(s)));
        ensure!(got == want, "instance {done}: {got:?} vs {want:?}");
        done += 1;
    }
    Ok("500/500 instances agree".into())
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.gen_range(0.2..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
    Tensor::new(Shape::new(rows, cols), data)
}

fn chain_tree(n: usize) -> TreeShape {
    // Post-order: leaves 0..n-2 under a root n-1, with node 1 holding node 0.
    let mut kids: Vec<Vec<usize>> = vec![Vec::new(); n];
    if n > 2 {
        kids[1].push(0);
        kids[n - 1] = (1..n - 1).collect();
    } else if n == 2 {
        kids[1].push(0);
    }
    TreeShape::from_children(kids).unwrap()
}

fn gradient_checks() -> Outcome {
    const STEP: f64 = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut track = |r: hunkfix_nn::gradcheck::GradCheck| worst = worst.max(r.max_rel_error);
    let err = |e: NnError| e.to_string();

    let ins = vec![random_tensor(&mut rng, 3, 4), random_tensor(&mut rng, 3, 4)];
    track(check_inputs(&ins, STEP, |g, v| {
        let s = g.add(v[0], v[1])?;
        let d = g.sub(s, v[1])?;
        let m = g.mul(d, v[1])?;
        let t = g.tanh(m)?;
        let sg = g.sigmoid(t)?;
        let om = g.one_minus(sg)?;
        let sc = g.scale(om, 1.7)?;
        let a = g.add_scalar(sc, -0.3)?;
        let ab = g.abs(a)?;
        let q = g.mul(ab, a)?;
        let mse = g.mse(q, v[0])?;
        let mean = g.mean(q)?;
        let s = g.sum(q)?;
        let x = g.add(s, mean)?;
        g.add(x, mse)
    })
    .map_err(err)?);
    let ins = vec![random_tensor(&mut rng, 2, 3), random_tensor(&mut rng, 3, 4), random_tensor(&mut rng, 1, 4)];
    track(check_inputs(&ins, STEP, |g, v| {
        let p = g.matmul(v[0], v[1])?;
        let p = g.add_row(p, v[2])?;
        let t = g.transpose(p)?;
        let sm = g.softmax_rows(t)?;
        let c = g.concat(&[sm, t])?;
        let sl = g.slice_cols(c, 1, 3)?;
        let sr = g.slice_rows(sl, 1, 2)?;
        let st = g.stack_rows(&[sr, sr])?;
        let rs = g.sum_rows(st)?;
        let q = g.mul(rs, rs)?;
        g.sum(q)
    })
    .map_err(err)?);
    let probs = Tensor::from_f64(Shape::new(1, 4), &[0.2, 0.45, 0.7, 0.9]);
    let labels = Tensor::from_f64(Shape::new(1, 4), &[1.0, 0.0, 1.0, 0.0]);
    track(check_inputs(&[probs], STEP, |g, v| {
        let t = g.constant(labels.clone());
        g.bce(v[0], t)
    })
    .map_err(err)?);
    let ins = vec![random_tensor(&mut rng, 1, 4), random_tensor(&mut rng, 5, 4)];
    track(check_inputs(&ins, STEP, |g, v| {
        let (ctx, w) = dot_attention(g, v[0], v[1])?;
        let mean = mean_context(g, v[1])?;
        let a = g.concat(&[ctx, w, mean])?;
        let q = g.mul(a, a)?;
        g.sum(q)
    })
    .map_err(err)?);

    let mut store = ParamStore::<f64>::new();
    let gru = GruCell::new(&mut store, "gru", 3, 4, &mut rng);
    let (x0, h0) = (random_tensor(&mut rng, 1, 3), random_tensor(&mut rng, 1, 4));
    track(check_params(&mut store, STEP, |g, s| {
        let (x, h) = (g.constant(x0.clone()), g.constant(h0.clone()));
        let h = gru.step(g, s, x, h)?;
        let h = gru.step(g, s, x, h)?;
        let q = g.mul(h, h)?;
        g.sum(q)
    })
    .map_err(err)?);

    let mut store = ParamStore::<f64>::new();
    let cell = ChildSumTreeLstmCell::new(&mut store, "tl", 3, 3, &mut rng);
    for x in store.get_mut(cell.b).data_mut() {
        *x = rng.gen_range(-0.3..0.3);
    }
    let shape = chain_tree(5);
    let xs: Vec<Tensor<f64>> = (0..5).map(|_| random_tensor(&mut rng, 1, 3)).collect();
    track(check_params(&mut store, STEP, |g, s| {
        let ins: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let st = encode_tree(g, s, &cell, &shape, &ins)?;
        let root = st[shape.root()];
        let both = g.concat(&[root.h, root.c])?;
        let q = g.mul(both, both)?;
        g.sum(q)
    })
    .map_err(err)?);

    let mapper = TreeMapperConfig { input: 3, hidden: 3, attention: true, residual: false };
    let cfg = CycleConfig { focus_weight: 0.5, ..CycleConfig::default() };
    let mut model = CycleModel::<f64>::new(mapper, cfg, 11);
    let rows = |rng: &mut ChaCha8Rng| (0..4).map(|_| random_tensor(rng, 1, 3).into_data()).collect::<Vec<_>>();
    let sample = CycleSample { shape: chain_tree(4), a: rows(&mut rng), b: rows(&mut rng), mask: Some(vec![true, false, true, true]), focus: Some(2) };
    let mut store = std::mem::take(&mut model.store);
    track(check_params(&mut store, STEP, |g, s| {
        let mut probe = CycleModel::new(mapper, cfg, 11);
        probe.store = s.clone();
        Ok(probe.sample_losses(g, &sample)?.0.total)
    })
    .map_err(err)?);

    ensure!(worst < 1e-3, "max relative error {worst:e}");
    Ok(format!("ops, GRU, Tree-LSTM, attention, cycle losses; max rel error {worst:.1e}"))
}

fn weighting_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let d = rng.gen_range(1..17);
        let node: Vec<f64> = (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let ctx: Vec<f64> = (0..d).map(|_| 10f64.powf(rng.gen_range(-6.0..1.0)) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let w = weight(&node, &ctx, Scheme::Hadamard).map_err(|e| e.to_string())?;
        let back = unweight(&w, &ctx, Scheme::Hadamard).map_err(|e| e.to_string())?;
        for (a, b) in node.iter().zip(&back) {
            worst = worst.max((a - b).abs() / a.abs().max(1.0));
        }
    }
    let mut worst3 = 0.0f64;
    for _ in 0..100 {
        let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let u: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let k = dot(&u, &v) / dot(&v, &v);
        let x: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - k * b).collect();
        let back = unweight(&weight(&x, &v, Scheme::Cross3).unwrap(), &v, Scheme::Cross3).unwrap();
        for (a, b) in x.iter().zip(&back) {
            worst3 = worst3.max((a - b).abs());
        }
    }
    ensure!(worst <= 1e-9 && worst3 <= 1e-9, "hadamard {worst:e}, cross3 {worst3:e}");
    Ok(format!("hadamard 1000 max {worst:.1e}; cross3 100 max {worst3:.1e}"))
}

fn cycle_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let rows = |rng: &mut ChaCha8Rng, n: usize| (0..n).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect::<Vec<Vec<f64>>>();
    let mapper = |residual| TreeMapperConfig { input: 3, hidden: 4, attention: true, residual };
    let mut identity = CycleModel::<f64>::new(mapper(true), CycleConfig::default(), 1);
    identity.m.zero_output(&mut identity.store);
    identity.n.zero_output(&mut identity.store);
    let s = CycleSample { shape: chain_tree(5), a: rows(&mut rng, 5), b: rows(&mut rng, 5), mask: None, focus: None };
    let l = identity.losses(&[s]).map_err(|e| e.to_string())?;
    ensure!(l.cyc == 0.0, "identity cycle loss {}", l.cyc);
    let zero = CycleModel::<f64>::new(mapper(false), CycleConfig { alpha: 0.0, ..CycleConfig::default() }, 2);
    let s = CycleSample { shape: chain_tree(6), a: rows(&mut rng, 6), b: rows(&mut rng, 6), mask: None, focus: None };
    let l = zero.losses(&[s]).map_err(|e| e.to_string())?;
    ensure!(l.cyc > 0.0 && l.total == l.run_m + l.run_n, "alpha=0: total {} vs {}", l.total, l.run_m + l.run_n);
    Ok("L_cyc = 0 for identity maps; L_total = L_run_M + L_run_N at alpha = 0".into())
}

fn diff_and_pairing() -> Outcome {
    let b = parse(include_str!("fixtures/diff_before.mini")).map_err(|e| e.to_string())?;
    let a = parse(include_str!("fixtures/diff_after.mini")).map_err(|e| e.to_string())?;
    let d = diff(&b, &a);
    ensure!(d.changes.contains(&FixingChange::new(OpKind::Insert, Kind::Return, "return true;")), "no (insert, Return, \"return true;\")");
    let assign = b.preorder().into_iter().find(|n| n.kind == Kind::Assign).unwrap();
    ensure!(d.updated_statements.contains(&assign.id), "a = a + 1 not marked updated");
    let pairs = pair_subtrees(&b, &a, &d);
    ensure!(pairs.iter().any(|p| p.fixed.is_none() && p.buggy.as_ref().is_some_and(|n| render(n) == "print(a);")), "no (S, EMPTY) pair");
    let upd = pairs.iter().find(|p| p.buggy.as_ref().is_some_and(|n| n.kind == Kind::If));
    ensure!(upd.is_some_and(|p| p.fixed.as_ref().is_some_and(|f| render(f).contains("return true;"))), "if statement not paired with its fix");
    ensure!(pairs.len() == 2, "{} pairs", pairs.len());
    for c in desk_corpus(77, 300, "m") {
        let (b, a) = (c.parse_before().unwrap(), c.parse_after().unwrap());
        ensure!(replay(&b, &diff(&b, &a)).same_shape(&a), "replay differs on {}", c.id);
    }
    Ok("figure changes and rules 1-4 hold; replay exact on 300 mutation pairs".into())
}

fn parser_roundtrip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..1000 {
        let (p, _) = random_program(&mut rng, GenConfig::default());
        let q = parse(&unparse(&p)).map_err(|e| format!("program {i}: {e}"))?;
        ensure!(q.same_shape(&p), "program {i} changed shape");
    }
    Ok("1000/1000 programs".into())
}

const TYPE_FIXTURES: [(&str, &str, BugType); 5] = [
    ("func f(a: int): int { let b = a + 1; let c = b * 2; return c; }", "func f(a: int): int { let b = a - 1; let c = b * 2; return c; }", BugType::Type1),
    ("func f(a: int): int { let b = a + 1; let c = b * 2; return c; }", "func f(a: int): int { let b = a - 1; let c = b * 3; return c; }", BugType::Type2),
    (
        "func f(a: int): int { let b = a + 1; let c = b * 2; let d = c; return d; }",
        "func f(a: int): int { let b = a - 1; let c = b * 2; let d = c + 4; return d; }",
        BugType::Type3,
    ),
    (
        "func f(a: int): int { let b = a + 1; let c = b * 2; let d = c; let e = d; let g = e; return g; }",
        "func f(a: int): int { let b = a - 1; let c = b * 3; let d = c; let e = d - 1; let g = e * 5; return g; }",
        BugType::Type4,
    ),
    (
        "func f(a: int): int { let b = a + 1; let c = b * 2; let d = c; let e = d; return e; }",
        "func f(a: int): int { let b = a - 1; let c = b * 3; let d = c; let e = d - 1; return e; }",
        BugType::Type5,
    ),
];

fn bug_types() -> Outcome {
    for (b, a, ty) in TYPE_FIXTURES {
        let (_, runs, found) = ground_truth(&parse(b).unwrap(), &parse(a).unwrap());
        ensure!(found == Some(ty), "{ty:?} fixture classified {found:?}");
        ensure!(classify_bug_type(&runs.iter().map(Vec::len).collect::<Vec<_>>()) == Some(ty), "{ty:?} from run lengths");
    }
    let b = parse(include_str!("fixtures/motiv_before.mini")).map_err(|e| e.to_string())?;
    let a = parse(include_str!("fixtures/motiv_after.mini")).map_err(|e| e.to_string())?;
    let found = ground_truth(&b, &a).2;
    ensure!(found == Some(BugType::Type2), "password-check fixture classified {found:?}");
    Ok("Types 1-5 and the password-check fixture (Type 2)".into())
}

fn desk_benchmark() -> Outcome {
    let cfg = Config::default();
    let train = desk_corpus(cfg.seed.wrapping_add(100), 300, "train");
    let test = desk_corpus(cfg.seed.wrapping_add(200), 60, "bug");
    ensure!(test.len() >= 60, "only {} bugs", test.len());
    let mut per_type = [0usize; 5];
    for c in &test {
        if let Some(t) = case_type(c) {
            per_type[t.index()] += 1;
        }
    }
    ensure!(per_type.iter().all(|&n| n >= 5), "type counts {per_type:?}");
    let seen: BTreeSet<&str> = train.iter().map(|c| c.before.as_str()).collect();
    ensure!(test.iter().all(|c| !seen.contains(c.before.as_str())), "training and test corpora overlap");

    let (models, _) = train_all(&train, &cfg).map_err(|e| e.to_string())?;
    let run = |hunks: bool, expansion: bool| -> Evaluation {
        let mut c = cfg.clone();
        c.hunk_detection = hunks;
        c.expansion = expansion;
        evaluate(&test, &models, &c, 1)
    };
    let (full, no_hunks, no_expansion) = (run(true, true), run(false, true), run(true, false));
    println!("full pipeline\n{}", full.table());
    println!("hunk detection off\n{}", no_hunks.table());
    println!("expansion off\n{}", no_expansion.table());

    let top5 = full.results.iter().filter(|r| r.report.plausible_rank.is_some_and(|k| k <= 5)).count();
    let first5 = full.results.iter().filter(|r| r.plausible() && r.report.tried <= 5).count();
    let rate = top5 as f64 / test.len() as f64;
    let counts = full.per_type();
    let multi_hunk = [BugType::Type3, BugType::Type4, BugType::Type5];
    let multi_stmt = [BugType::Type2, BugType::Type4, BugType::Type5];
    let (mh, mh_off) = (full.plausible_in(&multi_hunk), no_hunks.plausible_in(&multi_hunk));
    let (ms, ms_off) = (full.plausible_in(&multi_stmt), no_expansion.plausible_in(&multi_stmt));
    let detail = format!(
        "plausible in top-5 {top5}/{} ({:.0}%), within the first 5 validated {first5}; Types 2-5: {:?}; multi-hunk {mh} vs {mh_off} without hunk detection; multi-statement {ms} vs {ms_off} without expansion",
        test.len(),
        100.0 * rate,
        counts[1..].iter().map(|c| c.plausible).collect::<Vec<_>>()
    );
    ensure!(rate >= 0.4, "{detail}");
    ensure!(counts[1..].iter().all(|c| c.plausible >= 1), "{detail}");
    ensure!(mh_off < mh, "{detail}");
    ensure!(ms_off < ms, "{detail}");
    Ok(detail)
}

#[test]
fn acceptance() {
    let criteria: [(&str, u64, fn() -> Outcome); 10] = [
        ("1 Ochiai oracle equivalence", 1, ochiai_oracle),
        ("2 expansion fixture", 1, expansion_fixture),
        ("3 expansion oracle", 5, expansion_oracle),
        ("4 gradient checks", 30, gradient_checks),
        ("5 weight/unweight algebra", 1, weighting_algebra),
        ("6 cycle-loss identities", 1, cycle_identities),
        ("7 diff/pairing fixture and replay", 5, diff_and_pairing),
        ("8 parser round-trip", 5, parser_roundtrip),
        ("9 bug-type classification", 1, bug_types),
        ("10 end-to-end desk benchmark", 30 * 60, desk_benchmark),
    ];
    let mut failed = Vec::new();
    for (name, limit, check) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(limit);
        let (status, detail) = match (&result, in_time) {
            (Ok(d), true) => ("PASS", d.clone()),
            (Ok(d), false) => ("FAIL", format!("over the {limit} s limit; {d}")),
            (Err(e), _) => ("FAIL", e.clone()),
        };
        println!("[{status}] criterion {name} ({:.2} s): {detail}", elapsed.as_secs_f64());
        if status == "FAIL" {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
