//! Exhaustive exploration of schedules, collecting the distinct graphs.

use std::collections::BTreeSet;

use crate::graph::{CostGraph, EdgeKind};
use crate::interp::{Frame, Machine, StackState, StepOutcome, Thread};
use crate::lang::*;

/// A graph identified up to vertex ids: vertices are `(thread, index)`.
pub type GraphKey = (Vec<(String, usize, usize)>, Vec<KeyEdge>);

/// Edge kind plus both endpoints as `(thread, index)`.
pub type KeyEdge = (u8, (String, usize), (String, usize));

pub fn graph_key(g: &CostGraph) -> GraphKey {
    let at = |v: usize| {
        let t = g.thread_of(v);
        (t.name.clone(), t.vertices.iter().position(|&x| x == v).unwrap_or(0))
    };
    let mut threads: Vec<(String, usize, usize)> = g.threads.iter().map(|t| (t.name.clone(), t.prio.0, t.vertices.len())).collect();
    threads.sort();
    let mut edges: Vec<KeyEdge> = g
        .edges()
        .into_iter()
        .filter(|e| e.kind != EdgeKind::Thread)
        .map(|e| (e.kind as u8, at(e.from), at(e.to)))
        .collect();
    edges.sort();
    (threads, edges)
}

#[derive(Clone, Debug)]
pub struct Exploration {
    /// One representative per distinct graph of a terminated run.
    pub graphs: Vec<CostGraph>,
    /// How many of those came from runs that ended blocked.
    pub deadlocked: usize,
    pub failures: Vec<String>,
    /// The depth bound cut off at least one run.
    pub partial: bool,
    pub runs: usize,
}

/// Steps that touch nothing another thread can observe; they commute with
/// every other step, so they are taken eagerly without branching.
fn is_local(th: &Thread) -> bool {
    match &th.state {
        StackState::RunStmt(_, s) => !matches!(s.kind, StmtKind::WithLock(..) | StmtKind::TryWith(..)),
        StackState::RetStmt(k) => !matches!(k.last(), Some(Frame::Acquired(_) | Frame::Promoted(..))),
        StackState::RetVal(..) => true,
        StackState::RunInstr(_, i) => !matches!(
            i.kind,
            InstrKind::Deref(_) | InstrKind::Assign(..) | InstrKind::Wait(_) | InstrKind::Signal(_) | InstrKind::Broadcast(_)
        ),
    }
}

/// Explores every interleaving of at most `bound` steps.
pub fn explore(program: &Program, bound: usize) -> Exploration {
    let mut out = Exploration { graphs: Vec::new(), deadlocked: 0, failures: Vec::new(), partial: false, runs: 0 };
    let mut seen = BTreeSet::new();
    let mut stack = vec![(Machine::new(program), 0usize)];
    while let Some((mut m, mut depth)) = stack.pop() {
        // Run local steps eagerly.
        let mut failed = false;
        while depth < bound {
            let Some(name) = m.config.pool.iter().find(|t| is_local(t)).map(|t| t.name.clone()) else { break };
            depth += 1;
            if let StepOutcome::DynamicTypeFailure(e) = m.step(&name) {
                out.failures.push(e);
                failed = true;
                break;
            }
        }
        if failed {
            out.runs += 1;
            continue;
        }
        if m.config.pool.is_empty() {
            out.runs += 1;
            if seen.insert(graph_key(&m.graph)) {
                if m.config.has_waiters() {
                    out.deadlocked += 1;
                }
                out.graphs.push(m.graph);
            }
            continue;
        }
        if depth >= bound {
            out.partial = true;
            out.runs += 1;
            continue;
        }
        for name in m.runnable().into_iter().rev() {
            let mut next = m.clone();
            match next.step(&name) {
                StepOutcome::DynamicTypeFailure(e) => {
                    out.runs += 1;
                    out.failures.push(e);
                }
                _ => stack.push((next, depth + 1)),
            }
        }
    }
    out
}
