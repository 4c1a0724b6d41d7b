//! Weighting algebra, beam composition, candidate filters and re-ranking.

use std::collections::BTreeSet;

use hunkfix_core::corpus::gen::{random_program, GenConfig};
use hunkfix_core::embed::RenameDict;
use hunkfix_core::lang::types::BUILTINS;
use hunkfix_core::lang::{check, parse, unparse, Kind, Node};
use hunkfix_core::postprocess::{apply_filters, source_tokens, Candidate, FilterConfig, Reranker, ScopeDictionary, TieBreakReranker};
use hunkfix_core::repair::{compose, unweight, weight, HunkEdit, Patch, Scheme};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn component(rng: &mut ChaCha8Rng) -> f64 {
    let mag = 10f64.powf(rng.gen_range(-6.0..1.0));
    if rng.gen_bool(0.5) {
        mag
    } else {
        -mag
    }
}

#[test]
fn hadamard_roundtrip_on_random_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..1000 {
        let d = rng.gen_range(1..17);
        let node: Vec<f64> = (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let ctx: Vec<f64> = (0..d).map(|_| component(&mut rng)).collect();
        let back = unweight(&weight(&node, &ctx, Scheme::Hadamard).unwrap(), &ctx, Scheme::Hadamard).unwrap();
        for (a, b) in node.iter().zip(&back) {
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn cross3_recovers_orthogonal_node_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..100 {
        let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let u: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let k = dot(&u, &v) / dot(&v, &v);
        let x: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - k * b).collect();
        assert!(dot(&x, &v).abs() < 1e-9);
        let back = unweight(&weight(&x, &v, Scheme::Cross3).unwrap(), &v, Scheme::Cross3).unwrap();
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
    }
}

fn brute_force(lists: &[Vec<f64>], beam: usize) -> Vec<(Vec<usize>, f64)> {
    let mut all: Vec<(Vec<usize>, f64)> = vec![(vec![], 0.0)];
    for l in lists {
        all = all.into_iter().flat_map(|(c, s)| (0..l.len()).map(move |j| ([c.clone(), vec![j]].concat(), s + l[j]))).collect();
    }
    // Scores are multiples of 1/8, so sums are exact and ties are real ties.
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    all.truncate(beam);
    all
}

proptest! {
    #[test]
    fn beam_compose_equals_brute_force(
        lists in prop::collection::vec(prop::collection::vec((0u8..16).prop_map(|x| f64::from(x) / 8.0), 1..5), 1..5),
        beam in 1usize..12,
    ) {
        prop_assert_eq!(compose(&lists, beam), brute_force(&lists, beam));
    }
}

fn relabel_var(n: &Node, target: usize, to: &str) -> Node {
    let mut out = n.clone();
    if out.id == target {
        out.label = to.to_string();
    }
    out.children = out.children.iter().map(|c| relabel_var(c, target, to)).collect();
    out
}

/// Names each method of the original program may use.
fn allowed(program: &Node, method: &Node) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut vars = BTreeSet::new();
    for n in method.preorder() {
        match n.kind {
            Kind::Param => {
                vars.insert(n.label.split(':').next().unwrap().to_string());
            }
            Kind::VarDecl => {
                vars.insert(n.label.clone());
            }
            _ => {}
        }
    }
    let calls = program.methods().iter().map(|m| m.method_name().to_string()).chain(BUILTINS.iter().map(|b| b.to_string())).collect();
    (vars, calls)
}

fn names_resolve(original: &Node, candidate: &Node) -> bool {
    candidate.methods().iter().all(|m| {
        let Some(orig) = original.methods().into_iter().find(|o| o.method_name() == m.method_name()) else { return false };
        let (vars, calls) = allowed(original, orig);
        m.preorder().iter().all(|n| match n.kind {
            Kind::Var | Kind::Assign | Kind::VarDecl => vars.contains(&n.label),
            Kind::Call => calls.contains(&n.label),
            _ => true,
        })
    })
}

#[test]
fn filters_keep_exactly_the_valid_distinct_changed_candidates() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut total = 0;
    let mut kept = 0;
    while total < 200 {
        let (p, _) = random_program(&mut rng, GenConfig::default());
        let stmts = p.statements();
        let vars: Vec<&Node> = p.preorder().into_iter().filter(|n| n.kind == Kind::Var).collect();
        if vars.is_empty() {
            continue;
        }
        let mut patches = Vec::new();
        for rank in 0..8 {
            let v = vars.choose(&mut rng).unwrap();
            let s = stmts.iter().rev().find(|s| s.find(v.id).is_some()).unwrap();
            let names: Vec<String> = p.preorder().iter().filter(|n| n.kind == Kind::VarDecl).map(|n| n.label.clone()).collect();
            let to = match rng.gen_range(0..4) {
                0 => v.label.clone(),
                1 => "undeclared".to_string(),
                2 => "VAR_7".to_string(),
                _ => names.choose(&mut rng).cloned().unwrap_or_else(|| v.label.clone()),
            };
            let fixed = relabel_var(s, v.id, &to);
            patches.push(Patch {
                bug_id: "b".into(),
                edits: vec![HunkEdit { stmt_id: s.id, fixed, dict: RenameDict::default() }],
                source: String::new(),
                score_sum: 0.0,
                rank,
            });
        }
        let original = unparse(&p);
        let dict = ScopeDictionary::new(&p);
        let got: Vec<usize> = apply_filters(patches.clone(), &p, &dict, FilterConfig::default()).iter().map(|c| c.patch.rank).collect();
        let mut seen = BTreeSet::new();
        let mut expected = Vec::new();
        for patch in &patches {
            let src = unparse(&patch.apply(&p, true));
            let Ok(parsed) = parse(&src) else { continue };
            let keep = names_resolve(&p, &parsed) && src != original && seen.insert(src.clone()) && check(&parsed).is_ok();
            if keep {
                expected.push(patch.rank);
            }
        }
        assert_eq!(got, expected);
        total += patches.len() / 8;
        kept += got.len();
    }
    assert!(kept > 0);
}

fn token_levenshtein(a: &[String], b: &[String]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut cur = vec![i + 1];
        for (j, y) in b.iter().enumerate() {
            cur.push((prev[j] + usize::from(x != y)).min(prev[j + 1] + 1).min(cur[j] + 1));
        }
        prev = cur;
    }
    prev[b.len()]
}

#[test]
fn rerank_is_a_sorted_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..100 {
        let (p, _) = random_program(&mut rng, GenConfig::default());
        let buggy = unparse(&p);
        let ints: Vec<usize> = p.preorder().iter().filter(|n| n.kind == Kind::IntLit).map(|n| n.id).collect();
        let n = rng.gen_range(1..10);
        let cands: Vec<Candidate> = (0..n)
            .map(|rank| {
                let mut q = p.clone();
                for _ in 0..rng.gen_range(0..3) {
                    if let Some(&id) = ints.choose(&mut rng) {
                        q = relabel_var(&q, id, &rng.gen_range(0..9).to_string());
                    }
                }
                let source = unparse(&q);
                let score_sum = f64::from(rng.gen_range(0..3u8));
                let patch = Patch { bug_id: "b".into(), edits: vec![], source: source.clone(), score_sum, rank };
                Candidate { patch, source, program: q }
            })
            .collect();
        let out = TieBreakReranker.rerank(cands.clone(), &buggy);
        let ranks: BTreeSet<usize> = out.iter().map(|c| c.patch.rank).collect();
        assert_eq!(ranks, (0..n).collect());
        let bt = source_tokens(&buggy);
        let sim = |c: &Candidate| {
            let t = source_tokens(&c.source);
            let longest = t.len().max(bt.len()).max(1);
            1.0 - token_levenshtein(&t, &bt) as f64 / longest as f64
        };
        for w in out.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let key = |c: &Candidate| (c.patch.score_sum, sim(c), std::cmp::Reverse(c.patch.rank));
            let (ka, kb) = (key(a), key(b));
            assert!(ka.0 > kb.0 || (ka.0 == kb.0 && (ka.1 > kb.1 || (ka.1 == kb.1 && ka.2 > kb.2))), "{ka:?} {kb:?}");
        }
    }
}
