//! Runtime invariants over machine configurations, checked after each step.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use fixedbitset::FixedBitSet;
use serde::Serialize;

use crate::graph::{Ancestry, Dag, VertexId};
use crate::interp::{Frame, Machine, StackState, Thread, WaitKey};
use crate::lang::*;
use crate::typeck::{check_instruction, check_statement, check_value, CheckState, TypeContext};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InvariantViolation {
    /// Which invariant failed, numbered 1 to 9.
    pub clause: u8,
    pub detail: String,
}

impl fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invariant {} violated: {}", self.clause, self.detail)
    }
}

fn violation<T>(clause: u8, detail: impl Into<String>) -> Result<T, InvariantViolation> {
    Err(InvariantViolation { clause, detail: detail.into() })
}

/// Checks every invariant, stopping at the first failure.
pub fn check_invariants(m: &Machine) -> Result<(), InvariantViolation> {
    check_typed(m)?;
    if let Err(e) = m.graph.is_well_formed() {
        return violation(2, e.to_string());
    }
    let dag = m.graph.dag();
    let strong_only = Dag::new(dag.threads.clone(), dag.vertex_count(), dag.edges.iter().filter(|e| e.kind.is_strong()).copied().collect());
    let strong = match strong_only.ancestry() {
        Ok(s) => s,
        Err(e) => return violation(2, e.to_string()),
    };
    check_locks(m)?;
    check_ceilings(m)?;
    check_cv_waiters(m)?;
    check_no_signal(m, &strong)?;
    Ok(())
}

enum Hole {
    Value(Type),
    Stmt,
}

/// The priorities a hole at depth `d` must check at: the base priority and
/// the ceiling of every enclosing critical section.
fn priorities_at(th: &Thread, stack: &[Frame], d: usize) -> Result<Vec<Priority>, String> {
    let base = stack
        .iter()
        .find_map(|f| match f {
            Frame::Promoted(_, _, p) => Some(*p),
            _ => None,
        })
        .unwrap_or(th.prio);
    let mut out = vec![base];
    for f in &stack[..d] {
        if let Frame::Acquired(b) | Frame::Promoted(b, _, _) = f {
            let c = *th.sig.mutexes.get(b).ok_or_else(|| format!("mutex `{b}` missing from signature"))?;
            if !out.contains(&c) {
                out.push(c);
            }
        }
    }
    Ok(out)
}

fn type_errs<E: fmt::Debug>(what: &str, e: E) -> String {
    format!("{what} fails to check: {e:?}")
}

/// Checks a thread's stack state against its signature and permissions.
pub fn check_stack_state(order: &PriorityOrder, th: &Thread) -> Result<(), String> {
    let stack = th.state.stack();
    let running = stack
        .iter()
        .rev()
        .find_map(|f| match f {
            Frame::Promoted(b, _, _) => Some(th.sig.mutexes.get(b).copied()),
            _ => None,
        })
        .map(|c| c.ok_or("promoted mutex missing from signature"))
        .transpose()?;
    if let Some(c) = running {
        if c != th.prio {
            return Err(format!("thread `{}` runs at {} but its ceiling is {}", th.name, order.name(th.prio), order.name(c)));
        }
    }
    let st = |p: Priority, perms: &PermissionMap| CheckState { sig: th.sig.clone(), perms: perms.clone(), prio: p };
    let depth = stack.len();
    let (mut hole, mut perms) = match &th.state {
        StackState::RunStmt(_, s) => {
            let mut out = None;
            for p in priorities_at(th, stack, depth)? {
                let r = check_statement(order, &st(p, &th.perms), &TypeContext::new(), s).map_err(|e| type_errs("statement", e))?;
                out.get_or_insert(r);
            }
            (Hole::Stmt, out.expect("at least one priority"))
        }
        StackState::RunInstr(_, i) => {
            let mut out = None;
            for p in priorities_at(th, stack, depth)? {
                let r = check_instruction(order, &st(p, &th.perms), &TypeContext::new(), i).map_err(|e| type_errs("instruction", e))?;
                out.get_or_insert(r);
            }
            let (t, ps) = out.expect("at least one priority");
            (Hole::Value(t), ps)
        }
        StackState::RetVal(_, v) => {
            let t = check_value(&th.sig, &TypeContext::new(), v).map_err(|e| type_errs("value", e))?;
            (Hole::Value(t), th.perms.clone())
        }
        StackState::RetStmt(_) => (Hole::Stmt, th.perms.clone()),
    };
    for d in (0..depth).rev() {
        let prios = priorities_at(th, stack, d)?;
        match (&stack[d], hole) {
            (Frame::Let(x, s), Hole::Value(t)) => {
                let ctx = TypeContext::new().extended(x, Some(t));
                let mut out = None;
                for p in prios {
                    let r = check_statement(order, &st(p, &perms), &ctx, s).map_err(|e| type_errs("let body", e))?;
                    out.get_or_insert(r);
                }
                perms = out.expect("at least one priority");
            }
            (Frame::Seq(s), Hole::Stmt) => {
                let mut out = None;
                for p in prios {
                    let r = check_statement(order, &st(p, &perms), &TypeContext::new(), s).map_err(|e| type_errs("sequel", e))?;
                    out.get_or_insert(r);
                }
                perms = out.expect("at least one priority");
            }
            (Frame::Acquired(b) | Frame::Promoted(b, _, _), Hole::Stmt) => {
                if !th.sig.mutexes.contains_key(b) {
                    return Err(format!("mutex `{b}` missing from signature"));
                }
            }
            (f, _) => return Err(format!("frame {f:?} has a hole of the wrong kind")),
        }
        hole = Hole::Stmt;
    }
    match hole {
        Hole::Stmt => Ok(()),
        Hole::Value(_) => Err("stack ends with a value".to_string()),
    }
}

fn check_typed(m: &Machine) -> Result<(), InvariantViolation> {
    let mut owner: BTreeMap<(CvName, Priority), Vec<(String, PermissionLevel)>> = BTreeMap::new();
    for th in m.config.all_threads() {
        if let Err(e) = check_stack_state(&m.order, th) {
            return violation(1, format!("thread `{}`: {e}", th.name));
        }
        for (c, p, l) in th.perms.iter() {
            if l != PermissionLevel::None {
                owner.entry((c.clone(), p)).or_default().push((th.name.clone(), l));
            }
        }
        for (cell, t) in &th.sig.refs {
            let Some(stored) = m.config.mem.get(cell) else {
                return violation(1, format!("cell `{cell}` of `{}` is unallocated", th.name));
            };
            let mut sig = th.sig.clone();
            sig.merge(&stored.writer_sig);
            match check_value(&sig, &TypeContext::new(), &stored.value) {
                Ok(found) if &found == t => {}
                other => return violation(1, format!("cell `{cell}` holds {:?} but has type {t:?}: {other:?}", stored.value)),
            }
        }
    }
    for ((c, p), holders) in owner {
        if holders.len() > 1 && holders.iter().any(|(_, l)| *l == PermissionLevel::Owned) {
            return violation(1, format!("owned permission on `{c}` at {} is shared by {holders:?}", m.order.name(p)));
        }
    }
    Ok(())
}

fn liftable(th: &Thread, beta: &MutexName) -> bool {
    th.state.stack().iter().any(|f| matches!(f, Frame::Acquired(b) if b == beta))
}

fn check_locks(m: &Machine) -> Result<(), InvariantViolation> {
    let weak: BTreeSet<(VertexId, VertexId)> = m.graph.weak.iter().copied().collect();
    for (key, ws) in &m.config.waiting {
        let WaitKey::Mutex(beta) = key else { continue };
        if ws.is_empty() {
            continue;
        }
        let Some(lock) = m.config.locks.get(beta) else {
            return violation(4, format!("`{beta}` is unlocked with {} waiters", ws.len()));
        };
        let Some(holder) = m.config.find_thread(&lock.holder) else {
            return violation(9, format!("holder `{}` of `{beta}` is not live", lock.holder));
        };
        for w in ws {
            let ceiling = w.thread.sig.mutexes.get(beta).copied();
            if !weak.contains(&(lock.u1, w.u2)) {
                return violation(3, format!("no weak edge {} -> {} for waiter `{}` on `{beta}`", lock.u1, w.u2, w.thread.name));
            }
            if !m.order.le(w.thread.prio, holder.prio) {
                return violation(3, format!("waiter `{}` outranks holder `{}` of `{beta}`", w.thread.name, holder.name));
            }
            if Some(w.thread.prio) != ceiling && !liftable(&w.thread, beta) {
                return violation(3, format!("waiter `{}` on `{beta}` cannot be lifted", w.thread.name));
            }
            match ceiling {
                Some(c) if m.order.le(w.thread.prio, c) => {}
                _ => return violation(6, format!("waiter `{}` on `{beta}` is above the ceiling", w.thread.name)),
            }
        }
    }
    for (beta, lock) in &m.config.locks {
        let Some(holder) = m.config.find_thread(&lock.holder) else {
            return violation(9, format!("holder `{}` of `{beta}` is not live", lock.holder));
        };
        let Some(&ceiling) = holder.sig.mutexes.get(beta) else {
            return violation(9, format!("holder `{}` lacks `{beta}` in its signature", holder.name));
        };
        if holder.prio != ceiling && !liftable(holder, beta) {
            return violation(9, format!("holder `{}` of `{beta}` cannot be lifted", holder.name));
        }
    }
    Ok(())
}

fn check_ceilings(m: &Machine) -> Result<(), InvariantViolation> {
    let mut seen: BTreeMap<&MutexName, Priority> = BTreeMap::new();
    for th in m.config.all_threads() {
        for (b, p) in &th.sig.mutexes {
            if let Some(q) = seen.insert(b, *p) {
                if q != *p {
                    return violation(5, format!("`{b}` has ceilings {} and {}", m.order.name(q), m.order.name(*p)));
                }
            }
        }
    }
    Ok(())
}

fn check_cv_waiters(m: &Machine) -> Result<(), InvariantViolation> {
    for (key, w) in m.config.waiters() {
        let WaitKey::Cv(alpha) = key else { continue };
        let ok = w.thread.sig.cvs.get(alpha).is_some_and(|ps| ps.iter().any(|p| m.order.le(w.thread.prio, *p)));
        if !ok {
            return violation(7, format!("`{}` waits on `{alpha}` without a handle at or above its priority", w.thread.name));
        }
    }
    Ok(())
}

/// A thread must not be able to signal a handle that a vertex it does not
/// strongly follow may be waiting on. `strong` is reachability over strong
/// edges only; both the precedence and the descent of the thread's last
/// vertex are taken along strong paths.
fn check_no_signal(m: &Machine, strong: &Ancestry) -> Result<(), InvariantViolation> {
    let g = &m.graph;
    let n = g.vertex_count();
    let mut holders: BTreeMap<(CvName, Priority), FixedBitSet> = BTreeMap::new();
    for u in 0..n {
        for (c, ps) in &g.sig_of(u).cvs {
            for p in ps {
                holders.entry((c.clone(), *p)).or_insert_with(|| FixedBitSet::with_capacity(n)).insert(u);
            }
        }
    }
    for th in m.config.all_threads() {
        let last = match g.thread(&th.name) {
            Some(t) => t.vertices.last().copied().or_else(|| {
                let ti = g.thread_index(&th.name)?;
                g.create.iter().find(|(_, t)| *t == ti).map(|(v, _)| *v)
            }),
            None => None,
        };
        let Some(x) = last else { continue };
        for u2 in (0..n).filter(|&u2| strong.is_ancestor(u2, x)) {
            let below = strong.descendants(u2);
            for ((alpha, rho), vs) in &holders {
                if vs.difference(below).next().is_none() {
                    continue;
                }
                for q in m.order.all().filter(|q| !m.order.le(*rho, *q)) {
                    if th.perms.get(alpha, q) != PermissionLevel::None {
                        return violation(
                            8,
                            format!("`{}` holds `{alpha}` at {} below a handle at {}", th.name, m.order.name(q), m.order.name(*rho)),
                        );
                    }
                }
                if !m.order.le(*rho, g.prio_of(u2)) && m.order.le(*rho, th.prio) && th.perms.mentions(alpha) {
                    let any = m.order.all().any(|q| th.perms.get(alpha, q) != PermissionLevel::None);
                    if any {
                        return violation(
                            8,
                            format!("`{}` may signal `{alpha}` at {} past vertex {u2}", th.name, m.order.name(*rho)),
                        );
                    }
                }
            }
        }
    }
    Ok(())
}
