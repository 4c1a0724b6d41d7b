//! Edit-script replay, subtree pairing and alpha-renaming on generated programs.

use std::collections::{BTreeMap, BTreeSet};

use hunkfix_core::corpus::gen::{random_program, GenConfig};
use hunkfix_core::diffpair::{diff, ground_truth, pair_subtrees, replay};
use hunkfix_core::embed::{alpha_rename, alpha_rename_with, restore};
use hunkfix_core::lang::{Kind, Node};
use hunkfix_core::pipeline::desk_corpus;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn replay_rebuilds_the_fixed_tree_on_mutation_pairs() {
    let cases = desk_corpus(77, 300, "m");
    assert_eq!(cases.len(), 300);
    for c in &cases {
        let (b, a) = (c.parse_before().unwrap(), c.parse_after().unwrap());
        let d = diff(&b, &a);
        assert!(replay(&b, &d).same_shape(&a), "{}", c.id);
        let back = diff(&a, &b);
        assert!(replay(&a, &back).same_shape(&b), "{} reversed", c.id);
    }
}

#[test]
fn pairs_are_statements_and_cover_the_buggy_runs() {
    for c in desk_corpus(78, 120, "m") {
        let (b, a) = (c.parse_before().unwrap(), c.parse_after().unwrap());
        let (d, runs, _) = ground_truth(&b, &a);
        let pairs = pair_subtrees(&b, &a, &d);
        assert!(!pairs.is_empty(), "{}", c.id);
        let mut buggy = BTreeSet::new();
        for p in &pairs {
            assert!(p.buggy.is_some() || p.fixed.is_some());
            if let Some(n) = &p.buggy {
                assert!(n.kind.is_statement());
                assert!(b.find(n.id).is_some_and(|x| x.same_shape(n)));
                buggy.insert(n.id);
            }
            if let Some(n) = &p.fixed {
                assert!(n.kind.is_statement());
            }
        }
        // Every statement of a buggy run lies inside a paired subtree, unless
        // the fix inserts a statement: then the run is the insertion anchor.
        let inserts = pairs.iter().any(|p| p.buggy.is_none());
        for s in runs.iter().flatten().filter(|_| !inserts) {
            assert!(buggy.iter().any(|&r| b.find(r).unwrap().find(*s).is_some()), "{} stmt {s}", c.id);
        }
    }
}

#[test]
fn identical_programs_have_an_empty_script() {
    let mut rng = ChaCha8Rng::seed_from_u64(79);
    for _ in 0..100 {
        let (p, _) = random_program(&mut rng, GenConfig::default());
        let d = diff(&p, &p);
        assert!(d.actions.is_empty() && d.changes.is_empty() && d.updated_statements.is_empty());
    }
}

/// Names a variable-bearing node introduces, in preorder.
fn names_in_order(m: &Node) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for n in m.preorder() {
        let name = match n.kind {
            Kind::Var | Kind::VarDecl | Kind::Assign => n.label.clone(),
            Kind::Param => n.label.split(':').next().unwrap().to_string(),
            _ => continue,
        };
        if !out.contains(&name) {
            out.push(name);
        }
    }
    out
}

fn suffix_names(n: &Node) -> Node {
    let mut out = n.clone();
    match out.kind {
        Kind::Var | Kind::VarDecl | Kind::Assign => out.label.push_str("_q"),
        Kind::Param => {
            let (name, ty) = out.label.split_once(':').unwrap();
            out.label = format!("{name}_q:{ty}");
        }
        _ => {}
    }
    out.children = out.children.iter().map(suffix_names).collect();
    out
}

#[test]
fn alpha_renaming_is_canonical_and_invertible() {
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let mut methods = 0;
    while methods < 200 {
        let (p, _) = random_program(&mut rng, GenConfig::default());
        for m in p.methods() {
            let (renamed, dict) = alpha_rename(m);
            let names = names_in_order(m);
            let expected: BTreeMap<String, String> =
                names.iter().enumerate().map(|(i, n)| (format!("VAR_{}", i + 1), n.clone())).collect();
            assert_eq!(dict.names, expected);
            assert_eq!(dict.scope, m.method_name());
            assert!(restore(&renamed, &dict).same_shape(m));
            // Consistently renaming the source does not change the canonical form.
            let (again, _) = alpha_rename(&suffix_names(m));
            assert!(again.same_shape(&renamed));
            let (with, dict2) = alpha_rename_with(m, &dict);
            assert!(with.same_shape(&renamed));
            assert_eq!(dict2, dict);
            methods += 1;
        }
    }
}
