//! Static semantics: value, instruction and statement typing with
//! permission threading, and the priority-inversion error taxonomy.

use std::fmt;

use serde::Serialize;

use crate::lang::*;
use crate::parser::type_text;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum TypeErrorKind {
    WaitPriorityTooHigh,
    SignalWithoutPermission,
    SpawnPermissionLeak,
    PromoteNotUpward,
    PromoteMissingOwnership,
    NewCVAboveThread,
    MutexCeilingViolation,
    CriticalSectionFailsAtCeiling,
    BranchPermissionMismatch,
    LoopPermissionNotInvariant,
    InvalidSplit,
    PlainTypeMismatch,
    UnknownName,
}

impl fmt::Display for TypeErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TypeError {
    pub kind: TypeErrorKind,
    pub span: Span,
    pub message: String,
}

impl fmt::Display for TypeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}: {}", self.span, self.kind, self.message)
    }
}

/// `Γ`. A `None` entry is a variable whose binding failed to check; it
/// is accepted wherever a value is expected so checking can continue.
#[derive(Clone, Debug, Default)]
pub struct TypeContext {
    vars: Vec<(String, Option<Type>)>,
}

impl TypeContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, x: &str, t: Option<Type>) {
        self.vars.push((x.to_string(), t));
    }

    pub fn extended(&self, x: &str, t: Option<Type>) -> Self {
        let mut c = self.clone();
        c.bind(x, t);
        c
    }

    /// Innermost binding of `x`: `None` if unbound, `Some(None)` if its
    /// type is unknown.
    pub fn lookup(&self, x: &str) -> Option<Option<&Type>> {
        self.vars.iter().rev().find(|(y, _)| y == x).map(|(_, t)| t.as_ref())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckState {
    pub sig: Signature,
    pub perms: PermissionMap,
    pub prio: Priority,
}

/// Outcome of checking a whole program.
#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub errors: Vec<TypeError>,
    pub ok: bool,
    #[serde(skip)]
    pub final_perms: PermissionMap,
}

/// Static name of the CV created at `span`.
pub fn site_cv_name(span: Span) -> CvName {
    CvName(format!("cv@{}:{}", span.line, span.col))
}

fn err(kind: TypeErrorKind, span: Span, message: impl Into<String>) -> TypeError {
    TypeError { kind, span, message: message.into() }
}

/// Type of `v`. Values bound after an earlier error have no type and are
/// reported as `UnknownName`.
pub fn check_value(sig: &Signature, ctx: &TypeContext, v: &Value) -> Result<Type, TypeError> {
    match value_type(sig, ctx, v, Span::default())? {
        Some(t) => Ok(t),
        None => Err(err(TypeErrorKind::UnknownName, Span::default(), format!("`{}` has no known type", value_name(v)))),
    }
}

fn value_name(v: &Value) -> String {
    match v {
        Value::Var(x) => x.clone(),
        Value::Unit => "()".into(),
        Value::Num(n) => n.to_string(),
        Value::Cv(c, _) => c.0.clone(),
        Value::Mutex(m) => m.0.clone(),
        Value::Ref(r) => r.0.clone(),
    }
}

fn value_type(sig: &Signature, ctx: &TypeContext, v: &Value, span: Span) -> Result<Option<Type>, TypeError> {
    let unknown = |what: &str| err(TypeErrorKind::UnknownName, span, what.to_string());
    match v {
        Value::Var(x) => match ctx.lookup(x) {
            Some(t) => Ok(t.cloned()),
            None => Err(unknown(&format!("unbound variable `{x}`"))),
        },
        Value::Unit => Ok(Some(Type::Unit)),
        Value::Num(_) => Ok(Some(Type::Nat)),
        Value::Cv(c, p) => {
            if sig.has_cv(c, *p) {
                Ok(Some(Type::Cv(c.clone(), *p)))
            } else {
                Err(unknown(&format!("condition variable `{c}` has no handle at that priority in the signature")))
            }
        }
        Value::Mutex(m) => match sig.mutexes.get(m) {
            Some(p) => Ok(Some(Type::Mutex(*p))),
            None => Err(unknown(&format!("mutex `{m}` is not in the signature"))),
        },
        Value::Ref(r) => match sig.refs.get(r) {
            Some(t) => Ok(Some(Type::Ref(Box::new(t.clone())))),
            None => Err(unknown(&format!("reference `{r}` is not in the signature"))),
        },
    }
}

/// Checks an instruction; returns its type and `Ψ′`.
pub fn check_instruction(
    order: &PriorityOrder,
    st: &CheckState,
    ctx: &TypeContext,
    i: &Instr,
) -> Result<(Type, PermissionMap), Vec<TypeError>> {
    let mut c = Checker::new(order, &st.sig);
    let (t, out) = c.instr(st.prio, &st.perms, ctx, i);
    match (c.errors.is_empty(), t) {
        (true, Some(t)) => Ok((t, out)),
        (true, None) => Err(vec![err(TypeErrorKind::UnknownName, i.span, "result type is unknown")]),
        _ => Err(c.errors),
    }
}

/// Checks a statement; returns `Ψ′`.
pub fn check_statement(
    order: &PriorityOrder,
    st: &CheckState,
    ctx: &TypeContext,
    s: &Stmt,
) -> Result<PermissionMap, Vec<TypeError>> {
    let mut c = Checker::new(order, &st.sig);
    let out = c.stmt(st.prio, &st.perms, ctx, s);
    if c.errors.is_empty() {
        Ok(out)
    } else {
        Err(c.errors)
    }
}

/// Checks the top statement at the lowest priority from empty `Σ`, `Γ`, `Ψ`.
pub fn check_program(p: &Program) -> CheckReport {
    let sig = Signature::new();
    let mut c = Checker::new(&p.order, &sig);
    let final_perms = c.stmt(p.order.lowest(), &PermissionMap::new(), &TypeContext::new(), &p.body);
    CheckReport { ok: c.errors.is_empty(), errors: c.errors, final_perms }
}

struct Checker<'a> {
    order: &'a PriorityOrder,
    sig: &'a Signature,
    errors: Vec<TypeError>,
}

impl<'a> Checker<'a> {
    fn new(order: &'a PriorityOrder, sig: &'a Signature) -> Self {
        Checker { order, sig, errors: Vec::new() }
    }

    fn pn(&self, p: Priority) -> &str {
        self.order.name(p)
    }

    fn tn(&self, t: &Type) -> String {
        type_text(self.order, t)
    }

    fn value(&mut self, ctx: &TypeContext, v: &Value, span: Span) -> Option<Type> {
        match value_type(self.sig, ctx, v, span) {
            Ok(t) => t,
            Err(e) => {
                self.errors.push(e);
                None
            }
        }
    }

    fn mismatch(&mut self, span: Span, expected: &str, got: &Type) {
        let got = self.tn(got);
        self.errors.push(err(TypeErrorKind::PlainTypeMismatch, span, format!("expected {expected}, found {got}")));
    }

    fn cv(&mut self, ctx: &TypeContext, v: &Value, span: Span) -> Option<(CvName, Priority)> {
        match self.value(ctx, v, span)? {
            Type::Cv(c, p) => Some((c, p)),
            t => {
                self.mismatch(span, "a condition variable", &t);
                None
            }
        }
    }

    fn instr(&mut self, prio: Priority, psi: &PermissionMap, ctx: &TypeContext, i: &Instr) -> (Option<Type>, PermissionMap) {
        use TypeErrorKind::*;
        let sp = i.span;
        match &i.kind {
            InstrKind::Val(v) => (self.value(ctx, v, sp), psi.clone()),
            InstrKind::NewRef(t, v) => {
                if let Some(vt) = self.value(ctx, v, sp) {
                    if &vt != t {
                        self.mismatch(sp, &self.tn(t), &vt);
                    }
                }
                (Some(Type::Ref(Box::new(t.clone()))), psi.clone())
            }
            InstrKind::Deref(v) => match self.value(ctx, v, sp) {
                Some(Type::Ref(t)) => (Some(*t), psi.clone()),
                Some(t) => {
                    self.mismatch(sp, "a reference", &t);
                    (None, psi.clone())
                }
                None => (None, psi.clone()),
            },
            InstrKind::Assign(r, v) => {
                let rt = self.value(ctx, r, sp);
                let vt = self.value(ctx, v, sp);
                match (rt, vt) {
                    (Some(Type::Ref(inner)), Some(vt)) if *inner != vt => {
                        self.mismatch(sp, &self.tn(&inner), &vt)
                    }
                    (Some(t @ (Type::Unit | Type::Nat | Type::Cv(..) | Type::Mutex(_))), _) => {
                        self.mismatch(sp, "a reference", &t)
                    }
                    _ => {}
                }
                (Some(Type::Unit), psi.clone())
            }
            InstrKind::NewMutex(p) => (Some(Type::Mutex(*p)), psi.clone()),
            InstrKind::NewCv(p) => {
                if !self.order.le(*p, prio) {
                    self.errors.push(err(
                        NewCVAboveThread,
                        sp,
                        format!("cannot create a {} condition variable from a {} thread", self.pn(*p), self.pn(prio)),
                    ));
                }
                let alpha = site_cv_name(sp);
                let mut out = psi.clone();
                out.remove_cv(&alpha);
                for q in self.order.all().filter(|q| self.order.le(*p, *q)) {
                    out.set(&alpha, q, PermissionLevel::Owned);
                }
                (Some(Type::Cv(alpha, *p)), out)
            }
            InstrKind::Wait(v) => {
                if let Some((c, p)) = self.cv(ctx, v, sp) {
                    if !self.order.le(prio, p) {
                        self.errors.push(err(
                            WaitPriorityTooHigh,
                            sp,
                            format!("a {} thread cannot wait on `{c}` with handle priority {}", self.pn(prio), self.pn(p)),
                        ));
                    }
                }
                (Some(Type::Unit), psi.clone())
            }
            InstrKind::Signal(v) | InstrKind::Broadcast(v) => {
                if let Some((c, _)) = self.cv(ctx, v, sp) {
                    if psi.get(&c, prio) == PermissionLevel::None {
                        self.errors.push(err(
                            SignalWithoutPermission,
                            sp,
                            format!("no permission on `{c}` at {}", self.pn(prio)),
                        ));
                    }
                }
                (Some(Type::Unit), psi.clone())
            }
            InstrKind::Promote(v, p2) => {
                let Some((c, p1)) = self.cv(ctx, v, sp) else { return (None, psi.clone()) };
                if !self.order.le(p1, *p2) {
                    self.errors.push(err(
                        PromoteNotUpward,
                        sp,
                        format!("cannot promote `{c}` from {} down to {}", self.pn(p1), self.pn(*p2)),
                    ));
                } else if let Some(q) = self
                    .order
                    .all()
                    .find(|q| self.order.le(p1, *q) && !self.order.le(*p2, *q) && psi.get(&c, *q) != PermissionLevel::Owned)
                {
                    self.errors.push(err(
                        PromoteMissingOwnership,
                        sp,
                        format!("promoting `{c}` needs ownership at {}", self.pn(q)),
                    ));
                }
                let mut out = psi.clone();
                for q in self.order.all().filter(|q| !self.order.le(*p2, *q)) {
                    out.set(&c, q, PermissionLevel::None);
                }
                (Some(Type::Cv(c, *p2)), out)
            }
            InstrKind::Spawn { prio: child, passed, body } => {
                let passed_map = self.passed_map(psi, ctx, passed, sp);
                let kept = match split_off(psi, &passed_map) {
                    Ok(k) => k,
                    Err((c, q)) => {
                        self.errors.push(err(
                            InvalidSplit,
                            sp,
                            format!(
                                "cannot pass {} on `{c}` at {} while holding {}",
                                passed_map.get(&c, q),
                                self.pn(q),
                                psi.get(&c, q)
                            ),
                        ));
                        psi.clone()
                    }
                };
                if let Some(c) =
                    passed_map.cvs().into_iter().find(|c| psi.get(c, prio) == PermissionLevel::None)
                {
                    self.errors.push(err(
                        SpawnPermissionLeak,
                        sp,
                        format!("passes permissions on `{c}` that the {} spawner does not hold at {}", self.pn(prio), self.pn(prio)),
                    ));
                }
                self.stmt(*child, &passed_map, ctx, body);
                (Some(Type::Unit), kept)
            }
        }
    }

    fn passed_map(&mut self, psi: &PermissionMap, ctx: &TypeContext, passed: &[PermArg], sp: Span) -> PermissionMap {
        let mut out = PermissionMap::new();
        for a in passed {
            let Some((c, _)) = self.cv(ctx, a.value(), sp) else { continue };
            match a {
                PermArg::All(_) => {
                    for q in self.order.all() {
                        let lvl = psi.get(&c, q);
                        if lvl != PermissionLevel::None {
                            out.set(&c, q, lvl);
                        }
                    }
                }
                PermArg::Levels(_, levels) => {
                    for (q, lvl) in levels {
                        out.set(&c, *q, *lvl);
                    }
                }
            }
        }
        out
    }

    /// Checks `s` at `prio` without recording errors; used for the ceiling pass.
    fn quiet_stmt(&mut self, prio: Priority, psi: &PermissionMap, ctx: &TypeContext, s: &Stmt) -> Result<PermissionMap, ()> {
        let saved = std::mem::take(&mut self.errors);
        let out = self.stmt(prio, psi, ctx, s);
        let failed = !self.errors.is_empty();
        self.errors = saved;
        if failed {
            Err(())
        } else {
            Ok(out)
        }
    }

    fn mutex(&mut self, ctx: &TypeContext, v: &Value, span: Span) -> Option<Priority> {
        match self.value(ctx, v, span)? {
            Type::Mutex(p) => Some(p),
            t => {
                self.mismatch(span, "a mutex", &t);
                None
            }
        }
    }

    fn critical_section(&mut self, prio: Priority, psi: &PermissionMap, ctx: &TypeContext, m: &Value, body: &Stmt, span: Span) -> PermissionMap {
        let ceiling = self.mutex(ctx, m, span);
        if let Some(c) = ceiling {
            if !self.order.le(prio, c) {
                self.errors.push(err(
                    TypeErrorKind::MutexCeilingViolation,
                    span,
                    format!("a {} thread cannot lock a mutex with ceiling {}", self.pn(prio), self.pn(c)),
                ));
            }
        }
        let before = self.errors.len();
        let out = self.stmt(prio, psi, ctx, body);
        if self.errors.len() > before {
            return out;
        }
        if let Some(c) = ceiling.filter(|c| *c != prio) {
            match self.quiet_stmt(c, psi, ctx, body) {
                Ok(at_ceiling) if at_ceiling == out => {}
                _ => self.errors.push(err(
                    TypeErrorKind::CriticalSectionFailsAtCeiling,
                    span,
                    format!("critical section checks at {} but not at the ceiling {}", self.pn(prio), self.pn(c)),
                )),
            }
        }
        out
    }

    fn nat(&mut self, ctx: &TypeContext, v: &Value, span: Span) {
        if let Some(t) = self.value(ctx, v, span) {
            if t != Type::Nat {
                self.mismatch(span, "nat", &t);
            }
        }
    }

    fn stmt(&mut self, prio: Priority, psi: &PermissionMap, ctx: &TypeContext, s: &Stmt) -> PermissionMap {
        match &s.kind {
            StmtKind::Skip => psi.clone(),
            StmtKind::Let(x, i, body) => {
                let (t, mid) = self.instr(prio, psi, ctx, i);
                self.stmt(prio, &mid, &ctx.extended(x, t), body)
            }
            StmtKind::Seq(a, b) => {
                let mid = self.stmt(prio, psi, ctx, a);
                self.stmt(prio, &mid, ctx, b)
            }
            StmtKind::WithLock(m, body) => self.critical_section(prio, psi, ctx, m, body, s.span),
            StmtKind::TryWith(m, body, fallback) => {
                let out = self.critical_section(prio, psi, ctx, m, body, s.span);
                let other = self.stmt(prio, psi, ctx, fallback);
                if other != out {
                    self.errors.push(err(
                        TypeErrorKind::BranchPermissionMismatch,
                        s.span,
                        "the acquired and failed branches leave different permissions",
                    ));
                }
                out
            }
            StmtKind::If(v, a, b) => {
                self.nat(ctx, v, s.span);
                let pa = self.stmt(prio, psi, ctx, a);
                let pb = self.stmt(prio, psi, ctx, b);
                if pa != pb {
                    self.errors.push(err(
                        TypeErrorKind::BranchPermissionMismatch,
                        s.span,
                        "the branches leave different permissions",
                    ));
                }
                pa
            }
            StmtKind::While(v, body) => {
                self.nat(ctx, v, s.span);
                let out = self.stmt(prio, psi, ctx, body);
                if &out != psi {
                    self.errors.push(err(
                        TypeErrorKind::LoopPermissionNotInvariant,
                        s.span,
                        "the loop body changes permissions",
                    ));
                }
                psi.clone()
            }
        }
    }
}
