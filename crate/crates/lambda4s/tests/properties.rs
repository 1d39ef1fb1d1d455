mod common;

use common::*;
use lambda4s::fuzz::{FuzzSize, Generator};
use lambda4s::graph::CostGraph;
use lambda4s::interp::{run, Policy, RunOptions, RunOutcome};
use lambda4s::parser::{parse_program, pretty_print};
use lambda4s::sched::{is_admissible_dag, is_prompt, is_valid, prompt_schedule_dag, TieBreak};
use lambda4s::typeck::check_program;
use proptest::prelude::*;

fn run_graph(program_seed: u64, run_seed: u64) -> Option<CostGraph> {
    let text = Generator::new(program_seed, FuzzSize::Small).program();
    let program = parse_program(&text).unwrap().program;
    let r = run(&program, &RunOptions { policy: Policy::Random(run_seed), ..Default::default() });
    matches!(r.outcome, RunOutcome::Completed | RunOutcome::Deadlock(_)).then_some(r.machine.graph)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn printed_programs_reparse_to_the_same_text(seed in any::<u64>()) {
        let text = Generator::new(seed, FuzzSize::Medium).program();
        let program = parse_program(&text).unwrap().program;
        let printed = pretty_print(&program);
        let again = parse_program(&printed).unwrap().program;
        prop_assert_eq!(pretty_print(&again), printed);
        prop_assert!(check_program(&again).ok);
    }

    #[test]
    fn prompt_schedules_are_valid_and_prompt(seed in 0u64..10_000, p in 1usize..=4, tie in any::<u64>()) {
        let g = random_graph(seed, 12);
        let dag = g.dag();
        let sched = prompt_schedule_dag(&dag, p, TieBreak::Seeded(tie)).unwrap();
        prop_assert!(is_valid(&dag, &sched));
        prop_assert!(is_prompt(&dag, &sched));
    }

    /// On arbitrary graphs waiting for weak parents can still leave a weak
    /// parent running after its child became ready; run graphs never do.
    #[test]
    fn prompt_schedules_of_run_graphs_are_admissible(program_seed in 0u64..5_000, run_seed in 0u64..5, p in 1usize..=4, tie in any::<u64>()) {
        let Some(g) = run_graph(program_seed, run_seed) else { return Ok(()) };
        let dag = g.dag();
        let sched = prompt_schedule_dag(&dag, p, TieBreak::Seeded(tie)).unwrap();
        prop_assert!(is_admissible_dag(&dag, &sched));
        prop_assert!(is_prompt(&dag, &sched));
    }

    #[test]
    fn ancestry_is_transitive(seed in 0u64..10_000) {
        let g = random_graph(seed, 10);
        let o = PathOracle::new(&g);
        let n = g.vertex_count();
        for u in 0..n {
            for v in 0..n {
                for w in 0..n {
                    if o.anc(u, v) && o.anc(v, w) {
                        prop_assert!(o.anc(u, w));
                    }
                }
            }
        }
    }

    #[test]
    fn runs_are_deterministic_per_seed(program_seed in 0u64..5_000, run_seed in 0u64..100) {
        let text = Generator::new(program_seed, FuzzSize::Small).program();
        let program = parse_program(&text).unwrap().program;
        let opts = RunOptions { policy: Policy::Random(run_seed), ..Default::default() };
        let (a, b) = (run(&program, &opts), run(&program, &opts));
        prop_assert_eq!(a.trace, b.trace);
        prop_assert_eq!(a.machine.graph.to_json(), b.machine.graph.to_json());
    }
}

/// Run graphs where strengthening makes a vertex ready before its parents
/// ran; see the lock-contention test below for the smallest such shape.
#[test]
#[ignore = "known failure: strengthening can make a vertex ready before it is ready in the original graph"]
fn strengthening_keeps_readiness_on_run_graphs() {
    let mut gaps = Vec::new();
    for program_seed in 0..200 {
        for run_seed in 0..5 {
            let Some(g) = run_graph(program_seed, run_seed) else { continue };
            if g.is_well_formed().is_err() {
                continue;
            }
            let dag = g.dag();
            for p in 1..=4 {
                for tie in 0..20 {
                    let sched = prompt_schedule_dag(&dag, p, TieBreak::Seeded(tie)).unwrap();
                    for th in g.threads.iter().filter(|t| !t.vertices.is_empty()) {
                        let early = readiness_gaps(&dag, &g.strengthen(&th.name).unwrap(), &sched);
                        if !early.is_empty() {
                            gaps.push((program_seed, run_seed, p, tie, th.name.clone(), early));
                        }
                    }
                }
            }
        }
    }
    assert!(gaps.is_empty(), "{} cases, first: {:?}", gaps.len(), gaps.first());
}

/// Low holder `a` = [root, lock, inside, after], High contender `b` =
/// [lock attempt, critical section, release], promoted holder `c` =
/// [inside at ceiling, unlock]. Under an admissible prompt schedule where the
/// contender attempts the lock before the holder's lock vertex runs,
/// strengthening makes the unlock ready too early and the bound fails.
#[test]
fn lock_contention_graph_breaks_readiness_and_bound() {
    use lambda4s::lang::{PriorityOrder, Signature};
    use lambda4s::sched::check_bound;
    let order = PriorityOrder::new(["Low", "High"]).unwrap();
    let (lo, hi) = (order.lowest(), order.highest());
    let mut g = CostGraph::new(order);
    for (name, prio, len) in [("a", lo, 4), ("b", hi, 3), ("c", hi, 2)] {
        g.add_thread(name, prio).unwrap();
        for _ in 0..len {
            g.append_vertex(name, Signature::new()).unwrap();
        }
    }
    g.add_create(0, "b").unwrap();
    g.add_create(2, "c").unwrap();
    g.add_weak(1, 5).unwrap();
    g.add_weak(7, 5).unwrap();
    g.add_sync(8, 5).unwrap();
    g.add_sync(8, 3).unwrap();
    assert!(g.is_well_formed().is_ok());
    let dag = g.dag();
    let sched = prompt_schedule_dag(&dag, 1, TieBreak::VertexId).unwrap();
    assert!(is_admissible_dag(&dag, &sched) && is_prompt(&dag, &sched));
    assert_eq!(readiness_gaps(&dag, &g.strengthen("b").unwrap(), &sched), vec![8]);
    let report = check_bound(&g, "b", 1, 20).unwrap();
    assert_eq!((report.response_time, report.competitor_work, report.a_span), (7, 5, 4));
    assert!(!report.satisfied);
}
