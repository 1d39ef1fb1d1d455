mod common;

use common::*;
use lambda4s::graph::{CostGraph, GraphError};
use lambda4s::lang::{Priority, PriorityOrder, Signature};
use lambda4s::sched::{is_admissible_dag, is_prompt, response_time_dag};
use num_rational::Ratio;

#[test]
fn ancestor_query_matches_path_enumeration() {
    for seed in 0..200 {
        let g = random_graph(seed, 12);
        let o = PathOracle::new(&g);
        for u in 0..g.vertex_count() {
            for v in 0..g.vertex_count() {
                assert_eq!(g.ancestor_query(u, v).unwrap(), o.ancestor(u, v), "seed {seed}: ({u}, {v})");
            }
        }
    }
}

#[test]
fn competitor_work_matches_path_enumeration() {
    for seed in 0..200 {
        let g = random_graph(seed, 12);
        let o = PathOracle::new(&g);
        for (ti, th) in g.threads.iter().enumerate() {
            assert_eq!(g.competitor_work(&th.name).unwrap(), o.competitor_work(ti), "seed {seed}: {}", th.name);
        }
    }
}

#[test]
fn well_formedness_matches_path_enumeration() {
    let mut ill = 0;
    for seed in 0..200 {
        let g = random_graph(seed, 12);
        let expected = PathOracle::new(&g).violations();
        match g.is_well_formed() {
            Ok(()) => assert!(expected.is_empty(), "seed {seed}: oracle found {expected:?}"),
            Err(GraphError::IllFormed(v)) => {
                ill += 1;
                let ti = g.thread_index(&v.thread).unwrap();
                assert!(expected.contains(&(v.kind, ti)), "seed {seed}: {v:?} not in {expected:?}");
            }
            Err(e) => panic!("seed {seed}: {e}"),
        }
    }
    assert!(ill > 0 && ill < 200, "generator should produce both outcomes, got {ill} ill-formed");
}

#[test]
fn a_span_matches_path_enumeration() {
    let mut compared = 0;
    for seed in 0..200 {
        let g = random_graph(seed, 12);
        for (ti, th) in g.threads.iter().enumerate() {
            let got = g.a_span(&th.name).ok();
            assert_eq!(got, oracle_a_span(&g, ti), "seed {seed}: {}", th.name);
            compared += usize::from(got.is_some());
        }
    }
    assert!(compared > 100);
}

fn chains(lengths: &[usize], prios: &[usize]) -> CostGraph {
    let mut g = CostGraph::new(PriorityOrder::new(["Low", "High"]).unwrap());
    for (i, (&n, &p)) in lengths.iter().zip(prios).enumerate() {
        let name = format!("c{i}");
        g.add_thread(&name, Priority(p)).unwrap();
        for _ in 0..n {
            g.append_vertex(&name, Signature::new()).unwrap();
        }
        if i > 0 {
            g.add_create(0, &name).unwrap();
        }
    }
    g
}

/// Checks the bound for every prompt schedule, with competitor work either
/// counting the thread's own vertices or not. Returns whether each reading held.
fn readings_hold(g: &CostGraph) -> (bool, bool) {
    let dag = g.dag();
    let (mut counting_own, mut excluding_own) = (true, true);
    for p in 1..=4 {
        for sched in all_prompt_schedules(&dag, p) {
            assert!(is_admissible_dag(&dag, &sched) && is_prompt(&dag, &sched));
            for (ti, th) in g.threads.iter().enumerate() {
                let rt = response_time_dag(&dag, &sched, ti).unwrap() as u64;
                let w = dag.competitor_work(ti).unwrap();
                let s = dag.a_span(ti).unwrap();
                let own = th.vertices.len();
                let b = |w: usize| Ratio::new((w + (p - 1) * s) as u64, p as u64);
                counting_own &= Ratio::from_integer(rt) <= b(w);
                excluding_own &= Ratio::from_integer(rt) <= b(w - own);
            }
        }
    }
    (counting_own, excluding_own)
}

#[test]
fn chain_oracle_pins_competitor_work_reading() {
    let mut shapes: Vec<(Vec<usize>, Vec<usize>)> = (1..=6).map(|n| (vec![n], vec![0])).collect();
    for a in 1..=4 {
        for b in 1..=6 - a {
            for (pa, pb) in [(0, 0), (0, 1), (1, 0)] {
                shapes.push((vec![a, b], vec![pa, pb]));
            }
        }
    }
    shapes.push((vec![2, 2, 2], vec![0, 1, 1]));
    let mut excluding_fails = false;
    for (lengths, prios) in &shapes {
        let (counting, excluding) = readings_hold(&chains(lengths, prios));
        assert!(counting, "bound with own vertices counted fails on {lengths:?} {prios:?}");
        excluding_fails |= !excluding;
    }
    assert!(excluding_fails, "excluding the thread's own vertices should break the bound on some chain");
}

#[test]
fn single_chain_bound_is_its_length() {
    for n in 1..=6 {
        let g = chains(&[n], &[0]);
        assert_eq!(g.competitor_work("c0").unwrap(), n);
        assert_eq!(g.a_span("c0").unwrap(), n);
        for p in 1..=4 {
            assert_eq!(lambda4s::sched::bound(&g, "c0", p).unwrap(), Ratio::from_integer(n as u64));
        }
    }
}
