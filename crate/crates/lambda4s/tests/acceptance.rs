//! One line per acceptance criterion; exits non-zero if any fails.

mod common;

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use common::*;
use lambda4s::explore::explore;
use lambda4s::fuzz::{fuzz, FuzzConfig, FuzzSize};
use lambda4s::graph::{AncestorKind, CostGraph, EdgeKind, GraphError, WfKind};
use lambda4s::interp::{run, Policy, RunOptions, RunOutcome, ScriptItem};
use lambda4s::lang::{Priority, PriorityOrder, Program, Signature};
use lambda4s::parser::parse_program;
use lambda4s::typeck::{check_program, CheckReport, TypeErrorKind};

type Outcome = Result<String, String>;

fn corpus(name: &str) -> (String, Program) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let program = parse_program(&text).unwrap_or_else(|e| panic!("{name}: {e}")).program;
    (text, program)
}

fn expect_rejected(name: &str, kind: TypeErrorKind, site: &str) -> Result<String, String> {
    let (text, program) = corpus(name);
    let report: CheckReport = check_program(&program);
    let Some(e) = report.errors.first() else { return Err(format!("{name} accepted")) };
    if e.kind != kind {
        return Err(format!("{name}: expected {kind:?}, got {:?}", e.kind));
    }
    if !text[e.span.start..].starts_with(site) {
        return Err(format!("{name}: error at {}:{} is not at `{site}`", e.span.line, e.span.col));
    }
    Ok(format!("{name} {kind:?} at {}:{}", e.span.line, e.span.col))
}

fn expect_accepted(name: &str) -> Result<String, String> {
    let report = check_program(&corpus(name).1);
    match report.errors.first() {
        None => Ok(format!("{name} ok")),
        Some(e) => Err(format!("{name} rejected with {:?}", e.kind)),
    }
}

fn corpus_checks() -> Outcome {
    let parts = [
        expect_rejected("fut_terr.l4s", TypeErrorKind::SignalWithoutPermission, "signal(cv)")?,
        expect_rejected("pc_terr.l4s", TypeErrorKind::SpawnPermissionLeak, "spawn<High>[cv{High: owned}]")?,
        expect_accepted("pc_fixed.l4s")?,
        expect_rejected("pc_fixed_reordered.l4s", TypeErrorKind::SpawnPermissionLeak, "spawn")?,
        expect_rejected("mut_cv.l4s", TypeErrorKind::CriticalSectionFailsAtCeiling, "with (mut)")?,
        expect_accepted("mut_cv_fixed.l4s")?,
    ];
    Ok(parts.join("; "))
}

fn cv_graph_shapes() -> Outcome {
    let (_, program) = corpus("two_waiters.l4s");
    let e = explore(&program, 1000);
    if e.partial || !e.failures.is_empty() {
        return Err(format!("partial {} failures {:?}", e.partial, e.failures));
    }
    // Which of the main thread's signal vertices feed a sync edge.
    let mut patterns = BTreeSet::new();
    for g in &e.graphs {
        g.is_well_formed().map_err(|err| format!("ill-formed graph: {err}"))?;
        let main = g.thread_index("a0").unwrap();
        let pos = |v: usize| g.threads[main].vertices.iter().position(|&x| x == v);
        let sources: BTreeSet<usize> = g.sync.iter().filter_map(|&(from, _)| pos(from)).collect();
        patterns.insert(sources);
    }
    let sites: BTreeSet<usize> = patterns.iter().flatten().copied().collect();
    let [first, second] = sites.iter().copied().collect::<Vec<_>>()[..] else {
        return Err(format!("expected two signal sites, got {sites:?}"));
    };
    let wanted = [BTreeSet::from([first, second]), BTreeSet::from([first]), BTreeSet::from([second])];
    match wanted.iter().find(|w| !patterns.contains(*w)) {
        Some(missing) => Err(format!("missing sync pattern {missing:?} among {patterns:?}")),
        None => Ok(format!("{} graphs, {} sync patterns, all well-formed", e.graphs.len(), patterns.len())),
    }
}

fn strengthening_golden() -> Outcome {
    // Left: root, lock1, s, unlock1. Right: lock2, s, unlock2.
    let mut g = CostGraph::new(PriorityOrder::new(["P"]).unwrap());
    g.add_thread("left", Priority(0)).unwrap();
    g.add_thread("right", Priority(0)).unwrap();
    for _ in 0..4 {
        g.append_vertex("left", Signature::new()).unwrap();
    }
    for _ in 0..3 {
        g.append_vertex("right", Signature::new()).unwrap();
    }
    g.add_create(0, "right").unwrap();
    g.add_sync(3, 5).unwrap();
    g.add_weak(1, 5).unwrap();
    let st = g.strengthen("right").map_err(|e| e.to_string())?;
    let got: BTreeSet<(usize, usize, bool)> = st.edges.iter().map(|e| (e.from, e.to, e.kind.is_strong())).collect();
    let want: BTreeSet<(usize, usize, bool)> =
        [(0, 1), (0, 4), (2, 3), (4, 5), (5, 6), (3, 5), (4, 2)].into_iter().map(|(a, b)| (a, b, true)).collect();
    if got == want {
        Ok("weak lock1->s(right) and lock1->s(left) removed, lock2->s(left) added".into())
    } else {
        Err(format!("got {got:?}"))
    }
}

fn ceiling_dynamics() -> Outcome {
    let (_, program) = corpus("ceiling.l4s");
    let script = ScriptItem::parse_list("a0*7,a1").unwrap();
    let r = run(&program, &RunOptions { policy: Policy::Script(script), ..Default::default() });
    if r.outcome != RunOutcome::Completed {
        return Err(format!("run ended with {:?}", r.outcome));
    }
    let g = &r.machine.graph;
    let high = g.order.highest();
    let count = |k: EdgeKind| g.edges().iter().filter(|e| e.kind == k).count();
    let (creates, syncs, weaks) = (count(EdgeKind::Create), count(EdgeKind::Sync), count(EdgeKind::Weak));
    if g.threads.len() != 3 || (creates, syncs, weaks) != (2, 2, 2) {
        return Err(format!("{} threads, create {creates} sync {syncs} weak {weaks}", g.threads.len()));
    }
    let owner = |v: usize| g.thread_index(&g.thread_of(v).name).unwrap();
    let holder = g.thread_index("a0").unwrap();
    let contender = g.thread_index("a1").unwrap();
    let fresh = (0..3).find(|&i| i != holder && i != contender).unwrap();
    let (fs, ft) = (g.threads[fresh].vertices[0], *g.threads[fresh].vertices.last().unwrap());
    let lifted = g.threads[fresh].prio == high
        && g.create.iter().any(|&(from, to)| to == fresh && owner(from) == holder);
    let weak_ok = g.weak.iter().all(|&(_, to)| owner(to) == contender)
        && g.weak.iter().any(|&(from, _)| from == fs)
        && g.weak.iter().any(|&(from, _)| owner(from) == holder);
    let sync_ok = g.sync.iter().all(|&(from, _)| from == ft)
        && g.sync.iter().any(|&(_, to)| owner(to) == contender)
        && g.sync.iter().any(|&(_, to)| owner(to) == holder);
    if !(lifted && weak_ok && sync_ok) {
        return Err(format!("lifted {lifted} weak {weak_ok} sync {sync_ok}"));
    }
    g.is_well_formed().map_err(|e| e.to_string())?;
    Ok("fresh High thread created by the holder, 2 weak edges to the contender, 2 sync edges from the release".into())
}

fn fuzz_config() -> FuzzConfig {
    FuzzConfig { count: 100, size: FuzzSize::Small, runs_per_program: 5, processors: vec![1, 2, 3, 4], samples: 20, ..Default::default() }
}

fn soundness_and_bound() -> (Outcome, Outcome, Duration) {
    let start = Instant::now();
    let s = fuzz(&fuzz_config());
    let took = start.elapsed();
    let is_bound = |r: &str| r.starts_with("bound violated");
    let (bound_fail, other_fail): (Vec<_>, Vec<_>) = s.failures.iter().partition(|f| is_bound(&f.reason));
    let five = if other_fail.is_empty() && s.runs == 500 {
        Ok(format!(
            "{} programs, {} runs ({} completed, {} deadlocked), invariants held after every step",
            s.programs, s.runs, s.completed, s.deadlocked
        ))
    } else {
        Err(format!("{} failures, first: {:?}", other_fail.len(), other_fail.first().map(|f| &f.reason)))
    };
    let six = if bound_fail.is_empty() && other_fail.is_empty() {
        Ok(format!("{} thread/P checks over admissible prompt schedules", s.bound_checks))
    } else if !bound_fail.is_empty() {
        Err(format!("{} violations, first: {}", bound_fail.len(), bound_fail[0].reason))
    } else {
        Err("some graphs were not checked because earlier checks failed".into())
    };
    (five, six, took)
}

fn inversion_negative_control() -> Outcome {
    let (_, program) = corpus("pc_terr.l4s");
    // The consumer reads the empty buffer and waits before main spawns the producer.
    let script = ScriptItem::parse_list("a0*12,a1+,a0+,a2+,a1+").unwrap();
    let r = run(&program, &RunOptions { policy: Policy::Script(script), ..Default::default() });
    if r.outcome != RunOutcome::Completed {
        return Err(format!("run ended with {:?}", r.outcome));
    }
    match r.machine.graph.is_well_formed() {
        Err(GraphError::IllFormed(v)) if v.kind == WfKind::LowPriorityOnCriticalPath => {
            Ok(format!("LowPriorityOnCriticalPath on `{}` via {:?}", v.thread, v.path))
        }
        other => Err(format!("expected LowPriorityOnCriticalPath, got {other:?}")),
    }
}

fn oracle_equivalence() -> Outcome {
    let mut disagreements = Vec::new();
    let mut ill = 0;
    for seed in 0..200 {
        let g = random_graph(seed, 12);
        let o = PathOracle::new(&g);
        for u in 0..g.vertex_count() {
            for v in 0..g.vertex_count() {
                let got: AncestorKind = g.ancestor_query(u, v).unwrap();
                if got != o.ancestor(u, v) {
                    disagreements.push(format!("seed {seed}: ancestor_query({u}, {v})"));
                }
            }
        }
        let expected = o.violations();
        match g.is_well_formed() {
            Ok(()) if expected.is_empty() => {}
            Err(GraphError::IllFormed(v)) if expected.contains(&(v.kind, g.thread_index(&v.thread).unwrap())) => ill += 1,
            other => disagreements.push(format!("seed {seed}: is_well_formed {other:?} vs {expected:?}")),
        }
        for (ti, th) in g.threads.iter().enumerate() {
            if g.competitor_work(&th.name).unwrap() != o.competitor_work(ti) {
                disagreements.push(format!("seed {seed}: competitor_work({})", th.name));
            }
            if g.a_span(&th.name).ok() != oracle_a_span(&g, ti) {
                disagreements.push(format!("seed {seed}: a_span({})", th.name));
            }
        }
    }
    if disagreements.is_empty() {
        Ok(format!("200 graphs ({ill} ill-formed), 0 disagreements"))
    } else {
        Err(format!("{} disagreements, first: {}", disagreements.len(), disagreements[0]))
    }
}

fn report(n: usize, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    line(n, name, out, start.elapsed(), limit)
}

fn line(n: usize, name: &str, out: Outcome, took: Duration, limit: Duration) -> bool {
    let out = out.and_then(|msg| if took <= limit { Ok(msg) } else { Err(format!("took {took:?}, limit {limit:?}")) });
    let (tag, msg) = match &out {
        Ok(m) => ("PASS", m),
        Err(m) => ("FAIL", m),
    };
    println!("criterion {n} {name}: {tag} ({msg}) [{:.2}s]", took.as_secs_f64());
    out.is_ok()
}

fn main() {
    let secs = Duration::from_secs;
    let mut ok = true;
    ok &= report(1, "corpus", secs(1), corpus_checks);
    ok &= report(2, "cv graph shapes", secs(5), cv_graph_shapes);
    ok &= report(3, "strengthening golden", secs(1), strengthening_golden);
    ok &= report(4, "priority ceiling dynamics", secs(1), ceiling_dynamics);
    let (five, six, took) = soundness_and_bound();
    ok &= line(5, "soundness properties", five, took, secs(120));
    ok &= line(6, "bound verification", six, took, secs(180));
    ok &= report(7, "inversion negative control", secs(1), inversion_negative_control);
    ok &= report(8, "oracle equivalence", secs(60), oracle_equivalence);
    if !ok {
        std::process::exit(1);
    }
}
