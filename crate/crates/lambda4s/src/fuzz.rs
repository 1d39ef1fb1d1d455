//! Random well-typed program generation and the soundness harness that
//! runs generated programs with every runtime check enabled.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::interp::{run, Policy, RunOptions, RunOutcome};
use crate::lang::*;
use crate::parser::{parse_program, pretty_print};
use crate::sched::check_bound_all;
use crate::typeck::check_program;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FuzzSize {
    Small,
    Medium,
    Large,
}

impl FuzzSize {
    fn budget(self) -> usize {
        match self {
            FuzzSize::Small => 6,
            FuzzSize::Medium => 10,
            FuzzSize::Large => 16,
        }
    }
}

impl std::str::FromStr for FuzzSize {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "small" => Ok(FuzzSize::Small),
            "medium" => Ok(FuzzSize::Medium),
            "large" => Ok(FuzzSize::Large),
            _ => Err(format!("unknown size `{s}` (small, medium, large)")),
        }
    }
}

#[derive(Clone, Debug)]
struct CvVar {
    var: String,
    id: usize,
    prio: usize,
}

/// What a generated thread body may use at the current point.
#[derive(Clone, Debug)]
struct Scope {
    /// Thread priority.
    prio: usize,
    /// Every priority the current code is checked at.
    check_at: Vec<usize>,
    cvs: Vec<CvVar>,
    /// Permission per CV id and priority.
    perms: BTreeMap<usize, BTreeMap<usize, PermissionLevel>>,
    mutexes: Vec<(String, usize)>,
    refs: Vec<String>,
}

impl Scope {
    fn perm(&self, id: usize, q: usize) -> PermissionLevel {
        self.perms.get(&id).and_then(|m| m.get(&q)).copied().unwrap_or(PermissionLevel::None)
    }

    fn set(&mut self, id: usize, q: usize, l: PermissionLevel) {
        self.perms.entry(id).or_default().insert(q, l);
    }

    fn max_check(&self) -> usize {
        *self.check_at.iter().max().expect("nonempty")
    }

    fn min_check(&self) -> usize {
        *self.check_at.iter().min().expect("nonempty")
    }
}

/// Builds programs that satisfy every typing premise by construction.
pub struct Generator {
    rng: ChaCha8Rng,
    names: Vec<String>,
    fresh: usize,
    cv_ids: usize,
    size: FuzzSize,
}

impl Generator {
    pub fn new(seed: u64, size: FuzzSize) -> Self {
        Generator { rng: ChaCha8Rng::seed_from_u64(seed), names: Vec::new(), fresh: 0, cv_ids: 0, size }
    }

    fn var(&mut self, prefix: &str) -> String {
        self.fresh += 1;
        format!("{prefix}{}", self.fresh)
    }

    fn pname(&self, p: usize) -> &str {
        &self.names[p]
    }

    /// One program as source text.
    pub fn program(&mut self) -> String {
        let levels = self.rng.gen_range(1..=3);
        self.names = ["Low", "Mid", "High"][..levels].iter().map(|s| s.to_string()).collect();
        if levels == 2 {
            self.names[1] = "High".into();
        }
        self.fresh = 0;
        self.cv_ids = 0;
        let mut scope =
            Scope { prio: 0, check_at: vec![0], cvs: Vec::new(), perms: BTreeMap::new(), mutexes: Vec::new(), refs: Vec::new() };
        let budget = self.size.budget();
        let body = self.seq(&mut scope, budget, false, 0);
        format!("priorities {};\n{body}\n", self.names.join(" < "))
    }

    /// A sequence of `n` items. `neutral` code must leave permissions as
    /// they were.
    fn seq(&mut self, sc: &mut Scope, n: usize, neutral: bool, depth: usize) -> String {
        if n == 0 {
            return "skip".into();
        }
        let top = self.names.len() - 1;
        let choice = self.rng.gen_range(0..100);
        match choice {
            0..=9 => {
                let r = self.var("r");
                let k = self.rng.gen_range(0..3);
                sc.refs.push(r.clone());
                let rest = self.seq(sc, n - 1, neutral, depth);
                format!("let {r} = newref<nat>({k}) in\n{rest}")
            }
            10..=17 if !sc.refs.is_empty() => {
                let r = sc.refs.choose(&mut self.rng).unwrap().clone();
                let k = self.rng.gen_range(0..3);
                let rest = self.seq(sc, n - 1, neutral, depth);
                format!("{r} := {k};\n{rest}")
            }
            18..=25 if !sc.refs.is_empty() && depth < 3 => {
                let r = sc.refs.choose(&mut self.rng).unwrap().clone();
                let x = self.var("x");
                let a = self.seq(&mut sc.clone(), n / 3, true, depth + 1);
                let b = self.seq(&mut sc.clone(), n / 3, true, depth + 1);
                let rest = self.seq(sc, n - 1, neutral, depth);
                format!("let {x} = !{r} in\nif {x} {{ {a} }} else {{ {b} }};\n{rest}")
            }
            26..=33 if !neutral && sc.min_check() == sc.prio => {
                let p = self.rng.gen_range(0..=sc.prio);
                let c = self.var("c");
                let id = self.cv_ids;
                self.cv_ids += 1;
                for q in p..=top {
                    sc.set(id, q, PermissionLevel::Owned);
                }
                sc.cvs.push(CvVar { var: c.clone(), id, prio: p });
                let rest = self.seq(sc, n - 1, neutral, depth);
                format!("let {c} = newcv<{}> in\n{rest}", self.pname(p))
            }
            34..=43 => {
                let usable: Vec<CvVar> =
                    sc.cvs.iter().filter(|c| sc.check_at.iter().all(|&q| sc.perm(c.id, q) != PermissionLevel::None)).cloned().collect();
                let op = if self.rng.gen_bool(0.8) { "signal" } else { "broadcast" };
                let rest = self.seq(sc, n - 1, neutral, depth);
                match usable.choose(&mut self.rng) {
                    Some(c) => format!("{op}({});\n{rest}", c.var),
                    None => rest,
                }
            }
            44..=48 => {
                let top_check = sc.max_check();
                let usable: Vec<CvVar> = sc.cvs.iter().filter(|c| top_check <= c.prio).cloned().collect();
                let rest = self.seq(sc, n - 1, neutral, depth);
                match usable.choose(&mut self.rng) {
                    Some(c) => format!("wait({});\n{rest}", c.var),
                    None => rest,
                }
            }
            49..=54 if !neutral => {
                let cands: Vec<(CvVar, usize)> = sc
                    .cvs
                    .iter()
                    .flat_map(|c| (c.prio + 1..=top).map(move |p2| (c.clone(), p2)))
                    .filter(|(c, p2)| (c.prio..*p2).all(|q| sc.perm(c.id, q) == PermissionLevel::Owned))
                    .collect();
                match cands.choose(&mut self.rng).cloned() {
                    Some((c, p2)) => {
                        let d = self.var("c");
                        for q in 0..p2 {
                            sc.set(c.id, q, PermissionLevel::None);
                        }
                        sc.cvs.push(CvVar { var: d.clone(), id: c.id, prio: p2 });
                        let rest = self.seq(sc, n - 1, neutral, depth);
                        format!("let {d} = promote<{}>({}) in\n{rest}", self.pname(p2), c.var)
                    }
                    None => self.seq(sc, n - 1, neutral, depth),
                }
            }
            55..=61 => {
                let ceil = self.rng.gen_range(sc.max_check()..=top);
                let m = self.var("m");
                sc.mutexes.push((m.clone(), ceil));
                let rest = self.seq(sc, n - 1, neutral, depth);
                format!("let {m} = newmutex<{}> in\n{rest}", self.pname(ceil))
            }
            62..=73 if depth < 3 => {
                let top_check = sc.max_check();
                let usable: Vec<(String, usize)> = sc.mutexes.iter().filter(|(_, c)| top_check <= *c).cloned().collect();
                let Some((m, ceil)) = usable.choose(&mut self.rng).cloned() else {
                    return self.seq(sc, n - 1, neutral, depth);
                };
                let mut inner = sc.clone();
                if !inner.check_at.contains(&ceil) {
                    inner.check_at.push(ceil);
                }
                let body = self.seq(&mut inner, n / 2, true, depth + 1);
                let other = if self.rng.gen_bool(0.2) { Some(self.seq(&mut sc.clone(), n / 3, true, depth + 1)) } else { None };
                let rest = self.seq(sc, n - 1, neutral, depth);
                match other {
                    Some(other) => format!("trywith ({m}) {{ {body} }} else {{ {other} }};\n{rest}"),
                    None => format!("with ({m}) {{ {body} }};\n{rest}"),
                }
            }
            74..=76 if depth < 3 => {
                let body = self.seq(&mut sc.clone(), n / 3, true, depth + 1);
                let rest = self.seq(sc, n - 1, neutral, depth);
                format!("while 0 {{ {body} }};\n{rest}")
            }
            77..=94 if depth < 3 => self.spawn(sc, n, neutral, depth),
            _ => {
                let rest = self.seq(sc, n - 1, neutral, depth);
                format!("skip;\n{rest}")
            }
        }
    }

    fn spawn(&mut self, sc: &mut Scope, n: usize, neutral: bool, depth: usize) -> String {
        let top = self.names.len() - 1;
        let child_prio = self.rng.gen_range(0..=top);
        let mut child = Scope {
            prio: child_prio,
            check_at: vec![child_prio],
            cvs: sc.cvs.clone(),
            perms: BTreeMap::new(),
            mutexes: sc.mutexes.clone(),
            refs: sc.refs.clone(),
        };
        let mut passes = Vec::new();
        if !neutral {
            let mut ids: Vec<usize> = sc.cvs.iter().map(|c| c.id).collect();
            ids.sort();
            ids.dedup();
            for id in ids {
                let allowed = sc.check_at.iter().all(|&q| sc.perm(id, q) != PermissionLevel::None);
                if !allowed || !self.rng.gen_bool(0.6) {
                    continue;
                }
                let var = sc.cvs.iter().find(|c| c.id == id).unwrap().var.clone();
                let mut levels = Vec::new();
                for q in 0..=top {
                    let have = sc.perm(id, q);
                    let give = match (have, self.rng.gen_range(0..3)) {
                        (PermissionLevel::None, _) | (_, 0) => continue,
                        (PermissionLevel::Owned, 1) => PermissionLevel::Owned,
                        _ => PermissionLevel::Shared,
                    };
                    let keep = match (have, give) {
                        (PermissionLevel::Owned, PermissionLevel::Owned) => PermissionLevel::None,
                        _ => PermissionLevel::Shared,
                    };
                    sc.set(id, q, keep);
                    child.set(id, q, give);
                    let word = if give == PermissionLevel::Owned { "owned" } else { "shared" };
                    levels.push(format!("{}: {word}", self.pname(q)));
                }
                if !levels.is_empty() {
                    passes.push(format!("{var}{{{}}}", levels.join(", ")));
                }
            }
        }
        let body = self.seq(&mut child, n / 2, false, depth + 1);
        let rest = self.seq(sc, n - 1, neutral, depth);
        format!("spawn<{}>[{}] {{\n{body}\n}};\n{rest}", self.pname(child_prio), passes.join(", "))
    }
}

/// Perturbs a program's text in a way likely to break typing.
pub fn mutate(text: &str, rng: &mut impl Rng) -> String {
    let names = ["Low", "Mid", "High"];
    let present: Vec<&str> = names.iter().copied().filter(|n| text.contains(&format!("<{n}>"))).collect();
    let pick = rng.gen_range(0..3);
    match pick {
        0 if !present.is_empty() => {
            let from = present.choose(rng).unwrap();
            let to = names.choose(rng).unwrap();
            text.replacen(&format!("<{from}>"), &format!("<{to}>"), 1)
        }
        1 if text.contains("spawn<") => {
            let owned = text.replace(": shared", ": owned");
            if owned != text {
                owned
            } else {
                text.replacen("[]", "[all(c1)]", 1)
            }
        }
        _ => text.replacen("newcv<Low>", "newcv<High>", 1),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FuzzConfig {
    pub count: usize,
    pub size: FuzzSize,
    pub seed: u64,
    pub runs_per_program: usize,
    pub processors: Vec<usize>,
    pub samples: usize,
    pub step_limit: usize,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            count: 100,
            size: FuzzSize::Small,
            seed: 7,
            runs_per_program: 5,
            processors: vec![1, 2, 3, 4],
            samples: 20,
            step_limit: 2_000,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FuzzFailure {
    pub program: String,
    pub run_seed: u64,
    pub reason: String,
}

#[derive(Clone, Debug, Default, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct FuzzSummary {
    pub programs: usize,
    pub runs: usize,
    pub completed: usize,
    pub deadlocked: usize,
    pub step_limited: usize,
    pub bound_checks: usize,
    pub mutants: usize,
    pub mutants_rejected: usize,
    pub failures: Vec<FuzzFailure>,
}

/// Why one run of a program fails the harness, if it does.
pub fn check_run(program: &Program, run_seed: u64, cfg: &FuzzConfig, summary: &mut FuzzSummary) -> Option<String> {
    let opts = RunOptions { policy: Policy::Random(run_seed), step_limit: cfg.step_limit, check_invariants: true, ..Default::default() };
    let r = run(program, &opts);
    match &r.outcome {
        RunOutcome::Completed => summary.completed += 1,
        RunOutcome::Deadlock(_) => summary.deadlocked += 1,
        RunOutcome::StepLimit => summary.step_limited += 1,
        RunOutcome::DynamicTypeFailure(e) => return Some(format!("dynamic type failure: {e}")),
        RunOutcome::InvariantViolation(v) => return Some(v.to_string()),
        RunOutcome::PolicyError(e) => return Some(format!("policy error: {e}")),
    }
    let g = &r.machine.graph;
    if let Err(e) = g.is_well_formed() {
        return Some(e.to_string());
    }
    for &p in &cfg.processors {
        match check_bound_all(g, p, cfg.samples) {
            Err(e) => return Some(format!("bound check failed on P={p}: {e}")),
            Ok(reports) => {
                summary.bound_checks += reports.iter().map(|r| r.schedules).sum::<usize>();
                if let Some(bad) = reports.iter().find(|r| !r.satisfied) {
                    return Some(format!(
                        "bound violated for `{}` on P={p}: response time {} > {}",
                        bad.thread, bad.response_time, bad.bound
                    ));
                }
            }
        }
    }
    None
}

/// Generates and checks `cfg.count` programs.
pub fn fuzz(cfg: &FuzzConfig) -> FuzzSummary {
    let mut summary = FuzzSummary::default();
    let mut mrng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    for i in 0..cfg.count {
        let mut gen = Generator::new(cfg.seed.wrapping_mul(1_000_003).wrapping_add(i as u64), cfg.size);
        let text = gen.program();
        summary.programs += 1;
        let program = match parse_program(&text) {
            Ok(p) => p.program,
            Err(e) => {
                summary.failures.push(FuzzFailure { program: text, run_seed: 0, reason: format!("generated program does not parse: {e}") });
                continue;
            }
        };
        let report = check_program(&program);
        if !report.ok {
            let reason = format!("generated program is ill-typed: {:?}", report.errors.iter().map(|e| e.kind).collect::<Vec<_>>());
            summary.failures.push(FuzzFailure { program: text, run_seed: 0, reason });
            continue;
        }
        let mutant = mutate(&text, &mut mrng);
        if mutant != text {
            summary.mutants += 1;
            let rejected = parse_program(&mutant).map(|p| !check_program(&p.program).ok).unwrap_or(true);
            if rejected {
                summary.mutants_rejected += 1;
            }
        }
        for k in 0..cfg.runs_per_program as u64 {
            summary.runs += 1;
            if let Some(reason) = check_run(&program, k, cfg, &mut summary) {
                let class = failure_class(&reason);
                let small = minimize(&program, |p| {
                    let mut scratch = FuzzSummary::default();
                    check_program(p).ok && check_run(p, k, cfg, &mut scratch).is_some_and(|r| failure_class(&r) == class)
                });
                let mut scratch = FuzzSummary::default();
                let reason = check_run(&small, k, cfg, &mut scratch).unwrap_or(reason);
                summary.failures.push(FuzzFailure { program: pretty_print(&small), run_seed: k, reason });
                break;
            }
        }
    }
    summary
}

/// The part of a failure reason that does not name threads or vertices.
fn failure_class(reason: &str) -> &str {
    reason.split([':', '`']).next().unwrap_or(reason).trim()
}

fn count_nodes(s: &Stmt) -> usize {
    1 + match &s.kind {
        StmtKind::Let(_, i, b) => count_instr(i) + count_nodes(b),
        StmtKind::WithLock(_, b) | StmtKind::While(_, b) => count_nodes(b),
        StmtKind::TryWith(_, a, b) | StmtKind::If(_, a, b) | StmtKind::Seq(a, b) => count_nodes(a) + count_nodes(b),
        StmtKind::Skip => 0,
    }
}

fn count_instr(i: &Instr) -> usize {
    match &i.kind {
        InstrKind::Spawn { body, .. } => count_nodes(body),
        _ => 0,
    }
}

/// Replaces the `target`-th node in pre-order with `skip`, or with the
/// continuation of a `let` or sequence.
fn prune(s: &Stmt, target: usize, next: &mut usize, unwrap_let: bool) -> Stmt {
    let here = *next;
    *next += 1;
    if here == target {
        return match (&s.kind, unwrap_let) {
            (StmtKind::Let(_, _, b) | StmtKind::Seq(_, b), true) => (**b).clone(),
            _ => Stmt::skip(),
        };
    }
    let kind = match &s.kind {
        StmtKind::Let(x, i, b) => {
            let i = match &i.kind {
                InstrKind::Spawn { prio, passed, body } => Instr {
                    kind: InstrKind::Spawn {
                        prio: *prio,
                        passed: passed.clone(),
                        body: Box::new(prune(body, target, next, unwrap_let)),
                    },
                    span: i.span,
                },
                _ => i.clone(),
            };
            StmtKind::Let(x.clone(), i, Box::new(prune(b, target, next, unwrap_let)))
        }
        StmtKind::WithLock(v, b) => StmtKind::WithLock(v.clone(), Box::new(prune(b, target, next, unwrap_let))),
        StmtKind::While(v, b) => StmtKind::While(v.clone(), Box::new(prune(b, target, next, unwrap_let))),
        StmtKind::TryWith(v, a, b) => {
            let a = prune(a, target, next, unwrap_let);
            StmtKind::TryWith(v.clone(), Box::new(a), Box::new(prune(b, target, next, unwrap_let)))
        }
        StmtKind::If(v, a, b) => {
            let a = prune(a, target, next, unwrap_let);
            StmtKind::If(v.clone(), Box::new(a), Box::new(prune(b, target, next, unwrap_let)))
        }
        StmtKind::Seq(a, b) => {
            let a = prune(a, target, next, unwrap_let);
            StmtKind::Seq(Box::new(a), Box::new(prune(b, target, next, unwrap_let)))
        }
        StmtKind::Skip => StmtKind::Skip,
    };
    Stmt { kind, span: s.span }
}

/// Greedily deletes statements while `still_fails` holds.
pub fn minimize(program: &Program, still_fails: impl Fn(&Program) -> bool) -> Program {
    let mut best = program.clone();
    let mut progress = true;
    while progress {
        progress = false;
        let n = count_nodes(&best.body);
        'outer: for target in 0..n {
            for unwrap_let in [true, false] {
                let body = prune(&best.body, target, &mut 0, unwrap_let);
                if body == best.body {
                    continue;
                }
                let cand = Program { order: best.order.clone(), body };
                if still_fails(&cand) {
                    best = cand;
                    progress = true;
                    break 'outer;
                }
            }
        }
    }
    best
}

/// Human-readable summary lines.
pub fn summary_text(s: &FuzzSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "programs: {}", s.programs);
    let _ = writeln!(out, "runs: {} (completed {}, deadlocked {}, step limit {})", s.runs, s.completed, s.deadlocked, s.step_limited);
    let _ = writeln!(out, "admissible schedules checked: {}", s.bound_checks);
    let _ = writeln!(out, "mutants rejected: {}/{}", s.mutants_rejected, s.mutants);
    let _ = writeln!(out, "failures: {}", s.failures.len());
    for f in &s.failures {
        let _ = writeln!(out, "  run seed {}: {}", f.run_seed, f.reason);
    }
    out
}
