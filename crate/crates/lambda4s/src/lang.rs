//! Core definitions shared by every stage: priorities, types, the program
//! AST, permission levels and maps, and signatures.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A priority, stored as its rank in the enclosing [`PriorityOrder`]
/// (0 is the lowest).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Priority(pub usize);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OrderError {
    #[error("a priority order needs at least one priority")]
    Empty,
    #[error("priority `{0}` is declared twice")]
    Duplicate(String),
    #[error("unknown priority `{0}`")]
    Unknown(String),
}

/// A program-declared total order of priorities, lowest first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorityOrder {
    names: Vec<String>,
}

impl PriorityOrder {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self, OrderError> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(OrderError::Empty);
        }
        let mut seen = BTreeSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(OrderError::Duplicate(n.clone()));
            }
        }
        Ok(PriorityOrder { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn lowest(&self) -> Priority {
        Priority(0)
    }

    pub fn highest(&self) -> Priority {
        Priority(self.names.len() - 1)
    }

    pub fn resolve(&self, name: &str) -> Option<Priority> {
        self.names.iter().position(|n| n == name).map(Priority)
    }

    pub fn name(&self, p: Priority) -> &str {
        &self.names[p.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn contains(&self, p: Priority) -> bool {
        p.0 < self.names.len()
    }

    /// All priorities, lowest first.
    pub fn all(&self) -> impl Iterator<Item = Priority> + '_ {
        (0..self.names.len()).map(Priority)
    }

    /// `a ⪯ b`.
    pub fn le(&self, a: Priority, b: Priority) -> bool {
        debug_assert!(self.contains(a) && self.contains(b));
        a.0 <= b.0
    }

    /// `a ⪯ b` on names.
    pub fn le_names(&self, a: &str, b: &str) -> Result<bool, OrderError> {
        let pa = self.resolve(a).ok_or_else(|| OrderError::Unknown(a.to_string()))?;
        let pb = self.resolve(b).ok_or_else(|| OrderError::Unknown(b.to_string()))?;
        Ok(self.le(pa, pb))
    }
}

/// `a ⪯ b` in `order`.
pub fn prio_le(order: &PriorityOrder, a: Priority, b: Priority) -> bool {
    order.le(a, b)
}

macro_rules! name_type {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub struct $name(pub String);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_string())
            }
        }
    };
}

name_type!(
    /// Name of a condition variable.
    CvName
);
name_type!(
    /// Name of a mutex.
    MutexName
);
name_type!(
    /// Name of a reference cell.
    CellName
);

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Type {
    Unit,
    Nat,
    Ref(Box<Type>),
    Cv(CvName, Priority),
    Mutex(Priority),
}

/// Source location. `start`/`end` are byte offsets, `line`/`col` are 1-based.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub line: usize,
    pub col: usize,
}

impl Span {
    pub fn to(self, other: Span) -> Span {
        Span { start: self.start, end: other.end.max(self.end), line: self.line, col: self.col }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Var(String),
    Unit,
    Num(u64),
    /// A CV handle; each handle carries its own priority.
    Cv(CvName, Priority),
    Mutex(MutexName),
    Ref(CellName),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PermissionLevel {
    None,
    Shared,
    Owned,
}

impl fmt::Display for PermissionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PermissionLevel::None => "none",
            PermissionLevel::Shared => "shared",
            PermissionLevel::Owned => "owned",
        })
    }
}

/// One entry of a spawn's passed-permission list.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum PermArg {
    /// Pass everything the spawner holds for the CV.
    All(Value),
    /// Pass the listed level at each listed priority.
    Levels(Value, Vec<(Priority, PermissionLevel)>),
}

impl PermArg {
    pub fn value(&self) -> &Value {
        match self {
            PermArg::All(v) | PermArg::Levels(v, _) => v,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum InstrKind {
    Spawn { prio: Priority, passed: Vec<PermArg>, body: Box<Stmt> },
    NewRef(Type, Value),
    Deref(Value),
    Assign(Value, Value),
    NewCv(Priority),
    Wait(Value),
    Signal(Value),
    Broadcast(Value),
    Promote(Value, Priority),
    NewMutex(Priority),
    Val(Value),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Instr {
    pub kind: InstrKind,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum StmtKind {
    Let(String, Instr, Box<Stmt>),
    WithLock(Value, Box<Stmt>),
    TryWith(Value, Box<Stmt>, Box<Stmt>),
    If(Value, Box<Stmt>, Box<Stmt>),
    While(Value, Box<Stmt>),
    Seq(Box<Stmt>, Box<Stmt>),
    Skip,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Stmt {
    pub kind: StmtKind,
    pub span: Span,
}

impl Instr {
    pub fn new(kind: InstrKind) -> Self {
        Instr { kind, span: Span::default() }
    }

    /// `[v/x]i`.
    pub fn subst(&self, x: &str, v: &Value) -> Instr {
        use InstrKind::*;
        let f = |w: &Value| subst_value(w, x, v);
        let kind = match &self.kind {
            Spawn { prio, passed, body } => Spawn {
                prio: *prio,
                passed: passed
                    .iter()
                    .map(|p| match p {
                        PermArg::All(w) => PermArg::All(f(w)),
                        PermArg::Levels(w, l) => PermArg::Levels(f(w), l.clone()),
                    })
                    .collect(),
                body: Box::new(body.subst(x, v)),
            },
            NewRef(t, w) => NewRef(t.clone(), f(w)),
            Deref(w) => Deref(f(w)),
            Assign(a, b) => Assign(f(a), f(b)),
            NewCv(p) => NewCv(*p),
            Wait(w) => Wait(f(w)),
            Signal(w) => Signal(f(w)),
            Broadcast(w) => Broadcast(f(w)),
            Promote(w, p) => Promote(f(w), *p),
            NewMutex(p) => NewMutex(*p),
            Val(w) => Val(f(w)),
        };
        Instr { kind, span: self.span }
    }
}

fn subst_value(w: &Value, x: &str, v: &Value) -> Value {
    match w {
        Value::Var(y) if y == x => v.clone(),
        other => other.clone(),
    }
}

impl Stmt {
    pub fn new(kind: StmtKind) -> Self {
        Stmt { kind, span: Span::default() }
    }

    pub fn skip() -> Self {
        Stmt::new(StmtKind::Skip)
    }

    /// `[v/x]s`. Stops at inner rebindings of `x`.
    pub fn subst(&self, x: &str, v: &Value) -> Stmt {
        use StmtKind::*;
        let f = |w: &Value| subst_value(w, x, v);
        let kind = match &self.kind {
            Let(y, i, s) => {
                let body = if y == x { (**s).clone() } else { s.subst(x, v) };
                Let(y.clone(), i.subst(x, v), Box::new(body))
            }
            WithLock(w, s) => WithLock(f(w), Box::new(s.subst(x, v))),
            TryWith(w, a, b) => TryWith(f(w), Box::new(a.subst(x, v)), Box::new(b.subst(x, v))),
            If(w, a, b) => If(f(w), Box::new(a.subst(x, v)), Box::new(b.subst(x, v))),
            While(w, s) => While(f(w), Box::new(s.subst(x, v))),
            Seq(a, b) => Seq(Box::new(a.subst(x, v)), Box::new(b.subst(x, v))),
            Skip => Skip,
        };
        Stmt { kind, span: self.span }
    }

    /// Copy with every span reset, for structural comparison.
    pub fn erase_spans(&self) -> Stmt {
        use StmtKind::*;
        let kind = match &self.kind {
            Let(x, i, s) => Let(x.clone(), i.erase_spans(), Box::new(s.erase_spans())),
            WithLock(v, s) => WithLock(v.clone(), Box::new(s.erase_spans())),
            TryWith(v, a, b) => TryWith(v.clone(), Box::new(a.erase_spans()), Box::new(b.erase_spans())),
            If(v, a, b) => If(v.clone(), Box::new(a.erase_spans()), Box::new(b.erase_spans())),
            While(v, s) => While(v.clone(), Box::new(s.erase_spans())),
            Seq(a, b) => Seq(Box::new(a.erase_spans()), Box::new(b.erase_spans())),
            Skip => Skip,
        };
        Stmt { kind, span: Span::default() }
    }
}

impl Instr {
    pub fn erase_spans(&self) -> Instr {
        let kind = match &self.kind {
            InstrKind::Spawn { prio, passed, body } => {
                InstrKind::Spawn { prio: *prio, passed: passed.clone(), body: Box::new(body.erase_spans()) }
            }
            k => k.clone(),
        };
        Instr { kind, span: Span::default() }
    }
}

/// A parsed program: its priority order and its top-level statement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    pub order: PriorityOrder,
    pub body: Stmt,
}

/// `Ψ`: (CV, priority) → level. Only non-`None` entries are stored.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PermissionMap {
    entries: BTreeMap<(CvName, Priority), PermissionLevel>,
}

impl PermissionMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, cv: &CvName, p: Priority) -> PermissionLevel {
        self.entries.get(&(cv.clone(), p)).copied().unwrap_or(PermissionLevel::None)
    }

    pub fn set(&mut self, cv: &CvName, p: Priority, level: PermissionLevel) {
        if level == PermissionLevel::None {
            self.entries.remove(&(cv.clone(), p));
        } else {
            self.entries.insert((cv.clone(), p), level);
        }
    }

    pub fn with(mut self, cv: &str, p: Priority, level: PermissionLevel) -> Self {
        self.set(&CvName::from(cv), p, level);
        self
    }

    /// Non-`None` entries in key order.
    pub fn iter(&self) -> impl Iterator<Item = (&CvName, Priority, PermissionLevel)> {
        self.entries.iter().map(|((c, p), l)| (c, *p, *l))
    }

    pub fn cvs(&self) -> BTreeSet<CvName> {
        self.entries.keys().map(|(c, _)| c.clone()).collect()
    }

    pub fn mentions(&self, cv: &CvName) -> bool {
        self.entries.keys().any(|(c, _)| c == cv)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn remove_cv(&mut self, cv: &CvName) {
        self.entries.retain(|(c, _), _| c != cv);
    }
}

/// All `(kept, passed)` pairs that `π` can be split into.
pub fn split_permission(pi: PermissionLevel) -> Vec<(PermissionLevel, PermissionLevel)> {
    use PermissionLevel::*;
    match pi {
        Owned => vec![(Owned, None), (None, Owned), (Shared, Shared)],
        Shared => vec![(None, Shared), (Shared, None), (Shared, Shared)],
        None => vec![(None, None)],
    }
}

/// True iff every `(kept, passed)` pair is a legal split of `whole`.
pub fn validate_split(whole: &PermissionMap, kept: &PermissionMap, passed: &PermissionMap) -> bool {
    let keys: BTreeSet<(CvName, Priority)> = whole
        .entries
        .keys()
        .chain(kept.entries.keys())
        .chain(passed.entries.keys())
        .cloned()
        .collect();
    keys.iter().all(|(c, p)| {
        split_permission(whole.get(c, *p)).contains(&(kept.get(c, *p), passed.get(c, *p)))
    })
}

/// The largest map the spawner can keep after passing `passed`, or the first
/// entry that cannot be split off.
pub fn split_off(whole: &PermissionMap, passed: &PermissionMap) -> Result<PermissionMap, (CvName, Priority)> {
    use PermissionLevel::*;
    let mut kept = whole.clone();
    for (c, p, lvl) in passed.iter() {
        let k = match (whole.get(c, p), lvl) {
            (Owned, Owned) => None,
            (Owned, Shared) | (Shared, Shared) => Shared,
            (_, None) => whole.get(c, p),
            _ => return Err((c.clone(), p)),
        };
        kept.set(c, p, k);
    }
    debug_assert!(validate_split(whole, &kept, passed));
    Ok(kept)
}

/// `Σ`: reference cell types, mutex ceilings and CV handle priorities.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Signature {
    pub refs: BTreeMap<CellName, Type>,
    pub mutexes: BTreeMap<MutexName, Priority>,
    pub cvs: BTreeMap<CvName, BTreeSet<Priority>>,
}

impl Signature {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_cv(&mut self, cv: &CvName, p: Priority) {
        self.cvs.entry(cv.clone()).or_default().insert(p);
    }

    pub fn has_cv(&self, cv: &CvName, p: Priority) -> bool {
        self.cvs.get(cv).is_some_and(|s| s.contains(&p))
    }

    /// `Σ, Σ'`. Entries of `self` win on conflicting cells or mutexes.
    pub fn merge(&mut self, other: &Signature) {
        for (k, v) in &other.refs {
            self.refs.entry(k.clone()).or_insert_with(|| v.clone());
        }
        for (k, v) in &other.mutexes {
            self.mutexes.entry(k.clone()).or_insert(*v);
        }
        for (k, v) in &other.cvs {
            self.cvs.entry(k.clone()).or_default().extend(v.iter().copied());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use PermissionLevel::*;

    fn lmh() -> PriorityOrder {
        PriorityOrder::new(["Low", "Med", "High"]).unwrap()
    }

    #[test]
    fn prio_le_examples() {
        let o = lmh();
        assert!(o.le_names("Low", "High").unwrap());
        assert!(o.le_names("High", "High").unwrap());
        assert!(!o.le_names("Med", "Low").unwrap());
        assert_eq!(o.le_names("Low", "Top"), Err(OrderError::Unknown("Top".into())));
    }

    #[test]
    fn order_rejects_bad_declarations() {
        assert_eq!(PriorityOrder::new(Vec::<String>::new()), Err(OrderError::Empty));
        assert_eq!(PriorityOrder::new(["A", "B", "A"]), Err(OrderError::Duplicate("A".into())));
    }

    #[test]
    fn split_table() {
        assert_eq!(split_permission(Owned), vec![(Owned, None), (None, Owned), (Shared, Shared)]);
        assert_eq!(split_permission(Shared), vec![(None, Shared), (Shared, None), (Shared, Shared)]);
        assert_eq!(split_permission(None), vec![(None, None)]);
    }

    #[test]
    fn validate_split_examples() {
        let h = Priority(2);
        let e = PermissionMap::new();
        assert!(validate_split(&e, &e, &e));
        let whole = PermissionMap::new().with("a", h, Owned);
        let half = PermissionMap::new().with("a", h, Shared);
        assert!(validate_split(&whole, &half, &half));
        let whole = PermissionMap::new().with("a", h, Shared);
        let kept = PermissionMap::new().with("a", h, Owned);
        assert!(!validate_split(&whole, &kept, &e));
    }

    #[test]
    fn split_off_keeps_maximum() {
        let h = Priority(1);
        let whole = PermissionMap::new().with("a", h, Owned).with("b", h, Shared);
        let passed = PermissionMap::new().with("a", h, Owned).with("b", h, Shared);
        let kept = split_off(&whole, &passed).unwrap();
        assert_eq!(kept, PermissionMap::new().with("b", h, Shared));
        let bad = PermissionMap::new().with("b", h, Owned);
        assert_eq!(split_off(&whole, &bad), Err((CvName::from("b"), h)));
    }

    #[test]
    fn map_lookup_defaults_to_none() {
        let m = PermissionMap::new().with("a", Priority(0), None);
        assert!(m.is_empty());
        assert_eq!(m.get(&"zz".into(), Priority(3)), None);
    }

    #[test]
    fn subst_respects_shadowing() {
        let body = Stmt::new(StmtKind::Let(
            "x".into(),
            Instr::new(InstrKind::Wait(Value::Var("x".into()))),
            Box::new(Stmt::new(StmtKind::If(Value::Var("x".into()), Box::new(Stmt::skip()), Box::new(Stmt::skip())))),
        ));
        let out = body.subst("x", &Value::Num(7));
        match out.kind {
            StmtKind::Let(_, i, s) => {
                assert_eq!(i.kind, InstrKind::Wait(Value::Num(7)));
                assert!(matches!(s.kind, StmtKind::If(Value::Var(_), _, _)));
            }
            _ => unreachable!(),
        }
    }
}
