//! Cost semantics: a stack-machine interpreter over configurations
//! `⟨μ; σ; W; L⟩` that records the computation graph of one run.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::graph::{CostGraph, VertexId};
use crate::invariants::{check_invariants, InvariantViolation};
use crate::lang::*;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Frame {
    /// `_; s`
    Seq(Stmt),
    /// `let x = _ in s`
    Let(String, Stmt),
    /// A critical section holding the mutex at its owner's priority.
    Acquired(MutexName),
    /// A critical section re-homed at the ceiling; records the original
    /// thread and priority to return to.
    Promoted(MutexName, String, Priority),
}

/// Stacks grow to the right: the last frame is the innermost.
pub type Stack = Vec<Frame>;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum StackState {
    RunInstr(Stack, Instr),
    RetVal(Stack, Value),
    RunStmt(Stack, Stmt),
    RetStmt(Stack),
}

impl StackState {
    pub fn stack(&self) -> &Stack {
        match self {
            StackState::RunInstr(k, _) | StackState::RetVal(k, _) | StackState::RunStmt(k, _) | StackState::RetStmt(k) => k,
        }
    }

    fn stack_mut(&mut self) -> &mut Stack {
        match self {
            StackState::RunInstr(k, _) | StackState::RetVal(k, _) | StackState::RunStmt(k, _) | StackState::RetStmt(k) => k,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Thread {
    pub name: String,
    pub prio: Priority,
    pub sig: Signature,
    pub state: StackState,
    /// Permissions this thread holds, tracked alongside the static rules.
    pub perms: PermissionMap,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Waiter {
    pub thread: Thread,
    pub u1: VertexId,
    pub u2: VertexId,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WaitKey {
    Cv(CvName),
    Mutex(MutexName),
}

impl fmt::Display for WaitKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WaitKey::Cv(c) => write!(f, "{c}"),
            WaitKey::Mutex(m) => write!(f, "{m}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LockEntry {
    pub holder: String,
    pub u1: VertexId,
    pub u2: VertexId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cell {
    pub value: Value,
    pub writer: VertexId,
    pub writer_sig: Signature,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Configuration {
    pub pool: Vec<Thread>,
    pub mem: BTreeMap<CellName, Cell>,
    pub waiting: BTreeMap<WaitKey, Vec<Waiter>>,
    pub locks: BTreeMap<MutexName, LockEntry>,
}

impl Configuration {
    pub fn waiters(&self) -> impl Iterator<Item = (&WaitKey, &Waiter)> {
        self.waiting.iter().flat_map(|(k, ws)| ws.iter().map(move |w| (k, w)))
    }

    /// Every thread, runnable or blocked.
    pub fn all_threads(&self) -> impl Iterator<Item = &Thread> {
        self.pool.iter().chain(self.waiters().map(|(_, w)| &w.thread))
    }

    pub fn find_thread(&self, name: &str) -> Option<&Thread> {
        self.all_threads().find(|t| t.name == name)
    }

    pub fn has_waiters(&self) -> bool {
        self.waiting.values().any(|ws| !ws.is_empty())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Rule {
    Let1,
    Let2,
    Seq1,
    Seq2,
    Val,
    Skip,
    If1,
    If2,
    While,
    Spawn,
    NewRef,
    Deref,
    Update,
    NewCV,
    NewMutex,
    Promote,
    Wait,
    Signal1,
    Signal2,
    Broadcast,
    WithLockS1,
    WithLockS2,
    WithLockS3,
    WithLockS4,
    WithLockE1,
    WithLockE2,
    WithLockE3,
    WithLockE4,
    TryLockFail,
    Finish,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    /// The thread is still runnable (possibly under a new name).
    Progressed(Rule),
    /// The thread moved to a wait queue.
    Blocked(Rule),
    Finished,
    DynamicTypeFailure(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraceEntry {
    pub step: usize,
    pub thread: String,
    pub rule: Rule,
}

impl fmt::Display for TraceEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.step, self.thread, self.rule)
    }
}

/// One script entry: run `thread` for `count` steps, or until it leaves
/// the pool when `count` is `None`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScriptItem {
    pub thread: String,
    pub count: Option<usize>,
}

impl ScriptItem {
    /// `a1`, `a1*5` or `a1+` (until it blocks or finishes).
    pub fn parse(text: &str) -> Result<ScriptItem, String> {
        let text = text.trim();
        if let Some(name) = text.strip_suffix('+') {
            return Ok(ScriptItem { thread: name.to_string(), count: None });
        }
        match text.split_once('*') {
            Some((name, n)) => {
                let n = n.parse::<usize>().map_err(|_| format!("bad repeat count in `{text}`"))?;
                Ok(ScriptItem { thread: name.to_string(), count: Some(n) })
            }
            None if !text.is_empty() => Ok(ScriptItem { thread: text.to_string(), count: Some(1) }),
            None => Err("empty script entry".to_string()),
        }
    }

    pub fn parse_list(text: &str) -> Result<Vec<ScriptItem>, String> {
        text.split(',').filter(|s| !s.trim().is_empty()).map(ScriptItem::parse).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Policy {
    Random(u64),
    RoundRobin,
    /// Falls back to round-robin once exhausted.
    Script(Vec<ScriptItem>),
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub policy: Policy,
    pub step_limit: usize,
    /// Signal wakes the highest-priority waiter instead of the oldest.
    pub signal_highest_first: bool,
    /// Check every runtime invariant after each step.
    pub check_invariants: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { policy: Policy::RoundRobin, step_limit: 10_000, signal_highest_first: false, check_invariants: false }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum RunOutcome {
    Completed,
    /// Pool empty with threads still waiting. Lists a wait-for cycle
    /// through mutex holders as `(thread, mutex)` pairs when one exists,
    /// otherwise every blocked thread with what it waits on.
    Deadlock(Vec<(String, String)>),
    StepLimit,
    DynamicTypeFailure(String),
    InvariantViolation(InvariantViolation),
    PolicyError(String),
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub machine: Machine,
    pub trace: Vec<TraceEntry>,
    pub outcome: RunOutcome,
}

/// A configuration together with its graph and fresh-name counters.
#[derive(Clone, Debug)]
pub struct Machine {
    pub order: PriorityOrder,
    pub config: Configuration,
    pub graph: CostGraph,
    pub signal_highest_first: bool,
    next_thread: usize,
    next_cv: usize,
    next_mutex: usize,
    next_cell: usize,
}

fn fail<T>(msg: impl Into<String>) -> Result<T, String> {
    Err(msg.into())
}

/// `K ↑β,a,ρ K″`: the innermost `Acquired(β)` frame becomes
/// `Promoted(β, a, ρ)`; every other frame is unchanged.
pub fn priority_ceiling_lift(state: &StackState, beta: &MutexName, a: &str, rho: Priority) -> Result<StackState, String> {
    let mut out = state.clone();
    let stack = out.stack_mut();
    match stack.iter().rposition(|f| matches!(f, Frame::Acquired(b) if b == beta)) {
        Some(i) => {
            stack[i] = Frame::Promoted(beta.clone(), a.to_string(), rho);
            Ok(out)
        }
        None => fail(format!("no critical section for `{beta}` to lift")),
    }
}

impl Machine {
    pub fn new(program: &Program) -> Machine {
        let mut graph = CostGraph::new(program.order.clone());
        let root = "a0".to_string();
        graph.add_thread(&root, program.order.lowest()).expect("fresh graph");
        let thread = Thread {
            name: root,
            prio: program.order.lowest(),
            sig: Signature::new(),
            state: StackState::RunStmt(Vec::new(), program.body.clone()),
            perms: PermissionMap::new(),
        };
        Machine {
            order: program.order.clone(),
            config: Configuration { pool: vec![thread], ..Default::default() },
            graph,
            signal_highest_first: false,
            next_thread: 1,
            next_cv: 0,
            next_mutex: 0,
            next_cell: 0,
        }
    }

    pub fn runnable(&self) -> Vec<String> {
        self.config.pool.iter().map(|t| t.name.clone()).collect()
    }

    fn fresh_thread(&mut self) -> String {
        let n = format!("a{}", self.next_thread);
        self.next_thread += 1;
        n
    }

    fn vertex(&mut self, th: &Thread) -> Result<VertexId, String> {
        self.graph.append_vertex(&th.name, th.sig.clone()).map_err(|e| e.to_string())
    }

    fn vertex_on(&mut self, name: &str, sig: &Signature) -> Result<VertexId, String> {
        self.graph.append_vertex(name, sig.clone()).map_err(|e| e.to_string())
    }

    /// Applies one rule to the chosen runnable thread.
    pub fn step(&mut self, chosen: &str) -> StepOutcome {
        let Some(idx) = self.config.pool.iter().position(|t| t.name == chosen) else {
            return StepOutcome::DynamicTypeFailure(format!("thread `{chosen}` is not runnable"));
        };
        let th = self.config.pool.remove(idx);
        match self.step_thread(idx, th) {
            Ok(o) => o,
            Err(msg) => StepOutcome::DynamicTypeFailure(msg),
        }
    }

    fn keep(&mut self, idx: usize, th: Thread, rule: Rule) -> Result<StepOutcome, String> {
        self.config.pool.insert(idx.min(self.config.pool.len()), th);
        Ok(StepOutcome::Progressed(rule))
    }

    fn step_thread(&mut self, idx: usize, mut th: Thread) -> Result<StepOutcome, String> {
        let state = std::mem::replace(&mut th.state, StackState::RetStmt(Vec::new()));
        match state {
            StackState::RunStmt(mut k, s) => match s.kind {
                StmtKind::Let(x, i, body) => {
                    k.push(Frame::Let(x, *body));
                    th.state = StackState::RunInstr(k, i);
                    self.keep(idx, th, Rule::Let1)
                }
                StmtKind::Seq(a, b) => {
                    k.push(Frame::Seq(*b));
                    th.state = StackState::RunStmt(k, *a);
                    self.keep(idx, th, Rule::Seq1)
                }
                StmtKind::Skip => {
                    self.vertex(&th)?;
                    th.state = StackState::RetStmt(k);
                    self.keep(idx, th, Rule::Skip)
                }
                StmtKind::If(v, a, b) => {
                    let Value::Num(n) = v else { return fail(format!("`if` on non-numeral {v:?}")) };
                    self.vertex(&th)?;
                    let (branch, rule) = if n > 0 { (*a, Rule::If1) } else { (*b, Rule::If2) };
                    th.state = StackState::RunStmt(k, branch);
                    self.keep(idx, th, rule)
                }
                StmtKind::While(v, body) => {
                    self.vertex(&th)?;
                    let span = s.span;
                    let again = Stmt { kind: StmtKind::While(v.clone(), body.clone()), span };
                    let unrolled = Stmt { kind: StmtKind::Seq(body, Box::new(again)), span };
                    th.state = StackState::RunStmt(k, Stmt { kind: StmtKind::If(v, Box::new(unrolled), Box::new(Stmt::skip())), span });
                    self.keep(idx, th, Rule::While)
                }
                StmtKind::WithLock(v, body) => {
                    let Value::Mutex(beta) = v else { return fail(format!("`with` on non-mutex {v:?}")) };
                    self.with_lock(idx, th, k, beta, *body)
                }
                StmtKind::TryWith(v, body, fallback) => {
                    let Value::Mutex(beta) = v else { return fail(format!("`trywith` on non-mutex {v:?}")) };
                    if self.config.locks.contains_key(&beta) {
                        self.vertex(&th)?;
                        th.state = StackState::RunStmt(k, *fallback);
                        self.keep(idx, th, Rule::TryLockFail)
                    } else {
                        self.with_lock(idx, th, k, beta, *body)
                    }
                }
            },
            StackState::RetStmt(mut k) => match k.pop() {
                None => Ok(StepOutcome::Finished),
                Some(Frame::Seq(s)) => {
                    th.state = StackState::RunStmt(k, s);
                    self.keep(idx, th, Rule::Seq2)
                }
                Some(Frame::Acquired(beta)) => self.release(idx, th, k, beta, None),
                Some(Frame::Promoted(beta, a, rho)) => self.release(idx, th, k, beta, Some((a, rho))),
                Some(Frame::Let(..)) => fail("statement returned into a `let` hole"),
            },
            StackState::RetVal(mut k, v) => match k.pop() {
                Some(Frame::Let(x, s)) => {
                    th.state = StackState::RunStmt(k, s.subst(&x, &v));
                    self.keep(idx, th, Rule::Let2)
                }
                _ => fail("value returned outside a `let`"),
            },
            StackState::RunInstr(k, i) => self.instr(idx, th, k, i),
        }
    }

    fn instr(&mut self, idx: usize, mut th: Thread, k: Stack, i: Instr) -> Result<StepOutcome, String> {
        let unit = |k: Stack| StackState::RetVal(k, Value::Unit);
        let broadcast = matches!(i.kind, InstrKind::Broadcast(_));
        match i.kind {
            InstrKind::Val(v) => {
                if let Value::Var(x) = &v {
                    return fail(format!("free variable `{x}`"));
                }
                th.state = StackState::RetVal(k, v);
                self.keep(idx, th, Rule::Val)
            }
            InstrKind::Spawn { prio, passed, body } => {
                let u = self.vertex(&th)?;
                let mut passed_map = PermissionMap::new();
                for a in &passed {
                    let Value::Cv(c, _) = a.value() else { return fail(format!("spawn passes a non-CV {:?}", a.value())) };
                    match a {
                        PermArg::All(_) => {
                            for q in self.order.all() {
                                passed_map.set(c, q, th.perms.get(c, q));
                            }
                        }
                        PermArg::Levels(_, levels) => {
                            for (q, l) in levels {
                                passed_map.set(c, *q, *l);
                            }
                        }
                    }
                }
                let kept = split_off(&th.perms, &passed_map).unwrap_or_else(|_| th.perms.clone());
                let name = self.fresh_thread();
                self.graph.add_thread(&name, prio).map_err(|e| e.to_string())?;
                self.graph.add_create(u, &name).map_err(|e| e.to_string())?;
                let child = Thread {
                    name,
                    prio,
                    sig: th.sig.clone(),
                    state: StackState::RunStmt(Vec::new(), *body),
                    perms: passed_map,
                };
                th.perms = kept;
                th.state = unit(k);
                self.config.pool.push(child);
                self.keep(idx, th, Rule::Spawn)
            }
            InstrKind::NewRef(t, v) => {
                let u = self.vertex(&th)?;
                let cell = CellName(format!("r#{}", self.next_cell));
                self.next_cell += 1;
                self.config.mem.insert(cell.clone(), Cell { value: v, writer: u, writer_sig: th.sig.clone() });
                th.sig.refs.insert(cell.clone(), t);
                th.state = StackState::RetVal(k, Value::Ref(cell));
                self.keep(idx, th, Rule::NewRef)
            }
            InstrKind::Deref(v) => {
                let Value::Ref(c) = v else { return fail(format!("dereference of non-reference {v:?}")) };
                self.vertex(&th)?;
                let Some(cell) = self.config.mem.get(&c) else { return fail(format!("unallocated cell `{c}`")) };
                let (value, sig) = (cell.value.clone(), cell.writer_sig.clone());
                th.sig.merge(&sig);
                th.state = StackState::RetVal(k, value);
                self.keep(idx, th, Rule::Deref)
            }
            InstrKind::Assign(r, v) => {
                let Value::Ref(c) = r else { return fail(format!("assignment to non-reference {r:?}")) };
                if !self.config.mem.contains_key(&c) {
                    return fail(format!("unallocated cell `{c}`"));
                }
                let u = self.vertex(&th)?;
                self.config.mem.insert(c, Cell { value: v, writer: u, writer_sig: th.sig.clone() });
                th.state = unit(k);
                self.keep(idx, th, Rule::Update)
            }
            InstrKind::NewCv(p) => {
                self.vertex(&th)?;
                let alpha = CvName(format!("cv#{}", self.next_cv));
                self.next_cv += 1;
                th.sig.add_cv(&alpha, p);
                for q in self.order.all().filter(|q| self.order.le(p, *q)) {
                    th.perms.set(&alpha, q, PermissionLevel::Owned);
                }
                th.state = StackState::RetVal(k, Value::Cv(alpha, p));
                self.keep(idx, th, Rule::NewCV)
            }
            InstrKind::NewMutex(p) => {
                self.vertex(&th)?;
                let beta = MutexName(format!("m#{}", self.next_mutex));
                self.next_mutex += 1;
                th.sig.mutexes.insert(beta.clone(), p);
                th.state = StackState::RetVal(k, Value::Mutex(beta));
                self.keep(idx, th, Rule::NewMutex)
            }
            InstrKind::Promote(v, p2) => {
                let Value::Cv(alpha, _) = v else { return fail(format!("promote of non-CV {v:?}")) };
                self.vertex(&th)?;
                th.sig.add_cv(&alpha, p2);
                for q in self.order.all().filter(|q| !self.order.le(p2, *q)) {
                    th.perms.set(&alpha, q, PermissionLevel::None);
                }
                th.state = StackState::RetVal(k, Value::Cv(alpha, p2));
                self.keep(idx, th, Rule::Promote)
            }
            InstrKind::Wait(v) => {
                let Value::Cv(alpha, _) = v else { return fail(format!("wait on non-CV {v:?}")) };
                let u1 = self.vertex(&th)?;
                let u2 = self.vertex(&th)?;
                th.state = unit(k);
                self.config.waiting.entry(WaitKey::Cv(alpha)).or_default().push(Waiter { thread: th, u1, u2 });
                Ok(StepOutcome::Blocked(Rule::Wait))
            }
            InstrKind::Signal(v) | InstrKind::Broadcast(v) => {
                let Value::Cv(alpha, _) = v else { return fail(format!("signal on non-CV {v:?}")) };
                let u = self.vertex(&th)?;
                let queue = self.config.waiting.entry(WaitKey::Cv(alpha)).or_default();
                let woken: Vec<Waiter> = if broadcast {
                    std::mem::take(queue)
                } else if queue.is_empty() {
                    Vec::new()
                } else {
                    let pick = if self.signal_highest_first { highest_priority(queue) } else { 0 };
                    vec![queue.remove(pick)]
                };
                let rule = match (broadcast, woken.is_empty()) {
                    (true, _) => Rule::Broadcast,
                    (false, false) => Rule::Signal1,
                    (false, true) => Rule::Signal2,
                };
                for w in woken {
                    self.graph.add_sync(u, w.u2).map_err(|e| e.to_string())?;
                    self.config.pool.push(w.thread);
                }
                th.state = unit(k);
                self.keep(idx, th, rule)
            }
        }
    }

    fn ceiling(&self, th: &Thread, beta: &MutexName) -> Result<Priority, String> {
        th.sig.mutexes.get(beta).copied().ok_or_else(|| format!("mutex `{beta}` is not in the signature of `{}`", th.name))
    }

    fn with_lock(&mut self, idx: usize, mut th: Thread, mut k: Stack, beta: MutexName, body: Stmt) -> Result<StepOutcome, String> {
        let rho_beta = self.ceiling(&th, &beta)?;
        k.push(Frame::Acquired(beta.clone()));
        let entered = StackState::RunStmt(k, body);
        let Some(held) = self.config.locks.get(&beta).cloned() else {
            let u1 = self.vertex(&th)?;
            let u2 = self.vertex(&th)?;
            self.config.locks.insert(beta, LockEntry { holder: th.name.clone(), u1, u2 });
            th.state = entered;
            return self.keep(idx, th, Rule::WithLockS1);
        };
        let holder_prio = match self.config.find_thread(&held.holder) {
            Some(h) => h.prio,
            None if held.holder == th.name => th.prio,
            None => return fail(format!("holder `{}` of `{beta}` is not live", held.holder)),
        };
        if self.order.le(th.prio, holder_prio) {
            let u1 = self.vertex(&th)?;
            let u2 = self.vertex(&th)?;
            self.graph.add_weak(held.u1, u2).map_err(|e| e.to_string())?;
            th.state = entered;
            self.config.waiting.entry(WaitKey::Mutex(beta)).or_default().push(Waiter { thread: th, u1, u2 });
            return Ok(StepOutcome::Blocked(Rule::WithLockS2));
        }
        // The holder runs below the contender: re-home its critical section
        // on a fresh thread at the ceiling.
        let in_pool = self.config.pool.iter().position(|t| t.name == held.holder);
        let holder = match in_pool {
            Some(i) => self.config.pool[i].clone(),
            None => self.config.find_thread(&held.holder).cloned().expect("holder found above"),
        };
        let lifted = priority_ceiling_lift(&holder.state, &beta, &holder.name, holder.prio)?;
        let last = *self
            .graph
            .thread(&holder.name)
            .and_then(|t| t.vertices.last())
            .ok_or_else(|| format!("holder `{}` has no vertices", holder.name))?;
        let b2 = self.fresh_thread();
        self.graph.add_thread(&b2, rho_beta).map_err(|e| e.to_string())?;
        let u1c = self.vertex_on(&b2, &holder.sig)?;
        let u2c = self.vertex_on(&b2, &holder.sig)?;
        self.graph.add_create(last, &b2).map_err(|e| e.to_string())?;
        let u1 = self.vertex(&th)?;
        let u2 = self.vertex(&th)?;
        self.graph.add_weak(u1c, u2).map_err(|e| e.to_string())?;
        self.graph.add_weak(held.u1, u2).map_err(|e| e.to_string())?;
        // A holder blocked on its own mutex gets no edge back from its lifted self.
        let existing: Vec<VertexId> = self
            .config
            .waiting
            .get(&WaitKey::Mutex(beta.clone()))
            .map(|ws| ws.iter().filter(|w| w.thread.name != holder.name).map(|w| w.u2).collect())
            .unwrap_or_default();
        for w2 in existing {
            self.graph.add_weak(u1c, w2).map_err(|e| e.to_string())?;
        }
        let promoted = Thread { name: b2.clone(), prio: rho_beta, sig: holder.sig.clone(), state: lifted, perms: holder.perms.clone() };
        let rule = match in_pool {
            Some(i) => {
                self.config.pool[i] = promoted;
                Rule::WithLockS3
            }
            None => {
                let rec = self
                    .config
                    .waiting
                    .values_mut()
                    .flat_map(|ws| ws.iter_mut())
                    .find(|w| w.thread.name == holder.name)
                    .expect("holder is waiting");
                rec.thread = promoted;
                Rule::WithLockS4
            }
        };
        self.rename_holder(&holder.name, &b2);
        self.config.locks.insert(beta.clone(), LockEntry { holder: b2, u1: u1c, u2: u2c });
        th.state = entered;
        self.config.waiting.entry(WaitKey::Mutex(beta)).or_default().push(Waiter { thread: th, u1, u2 });
        Ok(StepOutcome::Blocked(rule))
    }

    fn rename_holder(&mut self, from: &str, to: &str) {
        for l in self.config.locks.values_mut() {
            if l.holder == from {
                l.holder = to.to_string();
            }
        }
    }

    fn release(&mut self, idx: usize, mut th: Thread, k: Stack, beta: MutexName, back: Option<(String, Priority)>) -> Result<StepOutcome, String> {
        let u = self.vertex(&th)?;
        let queue = self.config.waiting.entry(WaitKey::Mutex(beta.clone())).or_default();
        let next = if queue.is_empty() { None } else { Some(queue.remove(highest_priority(queue))) };
        let rest: Vec<VertexId> = queue.iter().map(|w| w.u2).collect();
        if queue.is_empty() {
            self.config.waiting.remove(&WaitKey::Mutex(beta.clone()));
        }
        let mut handoff = None;
        match &next {
            None => {
                self.config.locks.remove(&beta);
            }
            Some(w) => {
                self.graph.add_sync(u, w.u2).map_err(|e| e.to_string())?;
                for w2 in rest {
                    self.graph.add_weak(w.u1, w2).map_err(|e| e.to_string())?;
                }
                handoff = Some(LockEntry { holder: w.thread.name.clone(), u1: w.u1, u2: w.u2 });
            }
        }
        let rule = match (&back, next.is_some()) {
            (None, false) => Rule::WithLockE1,
            (None, true) => Rule::WithLockE2,
            (Some(_), false) => Rule::WithLockE3,
            (Some(_), true) => Rule::WithLockE4,
        };
        if let Some((orig, rho)) = back {
            let u_back = self.vertex_on(&orig, &th.sig)?;
            self.graph.add_sync(u, u_back).map_err(|e| e.to_string())?;
            self.rename_holder(&th.name, &orig);
            th.name = orig;
            th.prio = rho;
        }
        if let Some(entry) = handoff {
            self.config.locks.insert(beta, entry);
        }
        if let Some(w) = next {
            self.config.pool.push(w.thread);
        }
        th.state = StackState::RetStmt(k);
        self.keep(idx, th, rule)
    }

    /// Threads blocked forever once the pool is empty, as a wait-for cycle
    /// through mutex holders when there is one.
    pub fn deadlock_report(&self) -> Vec<(String, String)> {
        let waits_on: BTreeMap<&str, &MutexName> = self
            .config
            .waiting
            .iter()
            .filter_map(|(k, ws)| match k {
                WaitKey::Mutex(m) => Some(ws.iter().map(move |w| (w.thread.name.as_str(), m))),
                WaitKey::Cv(_) => None,
            })
            .flatten()
            .collect();
        for start in waits_on.keys() {
            let mut path: Vec<(String, String)> = Vec::new();
            let mut cur = *start;
            while let Some(m) = waits_on.get(cur) {
                if path.iter().any(|(t, _)| t == cur) {
                    let pos = path.iter().position(|(t, _)| t == cur).unwrap();
                    return path.split_off(pos);
                }
                path.push((cur.to_string(), m.0.clone()));
                match self.config.locks.get(*m) {
                    Some(l) => cur = l.holder.as_str(),
                    None => break,
                }
            }
        }
        self.config.waiters().map(|(k, w)| (w.thread.name.clone(), k.to_string())).collect()
    }
}

/// Index of the highest-priority waiter, oldest first among ties.
fn highest_priority(queue: &[Waiter]) -> usize {
    let mut best = 0;
    for (i, w) in queue.iter().enumerate() {
        if w.thread.prio > queue[best].thread.prio {
            best = i;
        }
    }
    best
}

struct Chooser {
    policy: Policy,
    rng: ChaCha8Rng,
    rr: usize,
    script_pos: usize,
    script_used: usize,
}

impl Chooser {
    fn new(policy: Policy) -> Self {
        let seed = if let Policy::Random(s) = policy { s } else { 0 };
        Chooser { policy, rng: ChaCha8Rng::seed_from_u64(seed), rr: 0, script_pos: 0, script_used: 0 }
    }

    fn round_robin(&mut self, pool: &[String]) -> String {
        let pick = pool[self.rr % pool.len()].clone();
        self.rr += 1;
        pick
    }

    fn choose(&mut self, pool: &[String]) -> Result<String, String> {
        match &self.policy {
            Policy::Random(_) => Ok(pool[self.rng.gen_range(0..pool.len())].clone()),
            Policy::RoundRobin => Ok(self.round_robin(pool)),
            Policy::Script(items) => {
                let items = items.clone();
                while let Some(item) = items.get(self.script_pos) {
                    let live = pool.contains(&item.thread);
                    match item.count {
                        Some(n) if self.script_used >= n => {}
                        None if !live && self.script_used > 0 => {}
                        _ => {
                            if !live {
                                return Err(format!("script thread `{}` is not runnable", item.thread));
                            }
                            self.script_used += 1;
                            return Ok(item.thread.clone());
                        }
                    }
                    self.script_pos += 1;
                    self.script_used = 0;
                }
                Ok(self.round_robin(pool))
            }
        }
    }
}

/// Runs a program until every thread finishes, a deadlock, a failure or
/// the step limit.
pub fn run(program: &Program, opts: &RunOptions) -> RunResult {
    let mut m = Machine::new(program);
    m.signal_highest_first = opts.signal_highest_first;
    let mut chooser = Chooser::new(opts.policy.clone());
    let mut trace = Vec::new();
    let outcome = loop {
        let pool = m.runnable();
        if pool.is_empty() {
            break if m.config.has_waiters() { RunOutcome::Deadlock(m.deadlock_report()) } else { RunOutcome::Completed };
        }
        if trace.len() >= opts.step_limit {
            break RunOutcome::StepLimit;
        }
        let name = match chooser.choose(&pool) {
            Ok(n) => n,
            Err(e) => break RunOutcome::PolicyError(e),
        };
        let rule = match m.step(&name) {
            StepOutcome::Progressed(r) | StepOutcome::Blocked(r) => r,
            StepOutcome::Finished => Rule::Finish,
            StepOutcome::DynamicTypeFailure(msg) => break RunOutcome::DynamicTypeFailure(msg),
        };
        trace.push(TraceEntry { step: trace.len() + 1, thread: name, rule });
        if opts.check_invariants {
            if let Err(v) = check_invariants(&m) {
                break RunOutcome::InvariantViolation(v);
            }
        }
    };
    RunResult { machine: m, trace, outcome }
}
