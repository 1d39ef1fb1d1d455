//! Cost graphs: threads as vertex chains plus create, sync and weak edges.
//! Ancestry, well-formedness, a-strengthening, competitor work and a-span.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::{Priority, PriorityOrder, Signature};

pub type VertexId = usize;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreadInfo {
    pub name: String,
    pub prio: Priority,
    pub vertices: Vec<VertexId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Thread,
    Create,
    Sync,
    Weak,
    /// Added by strengthening.
    Strengthened,
}

impl EdgeKind {
    pub fn is_strong(self) -> bool {
        self != EdgeKind::Weak
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub kind: EdgeKind,
    pub from: VertexId,
    pub to: VertexId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum AncestorKind {
    NotAncestor,
    StrongAncestor,
    WeakAncestor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum WfKind {
    LowPriorityOnCriticalPath,
    MissingWeakEdgeWitness,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WfViolation {
    pub kind: WfKind,
    pub thread: String,
    pub vertex: VertexId,
    /// A path ending at the thread's last vertex through the offending vertex.
    pub path: Vec<VertexId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("unknown thread `{0}`")]
    UnknownThread(String),
    #[error("thread `{0}` already exists")]
    DuplicateThread(String),
    #[error("unknown vertex {0}")]
    UnknownVertex(VertexId),
    #[error("thread `{0}` has no vertices")]
    EmptyThread(String),
    #[error("the graph has a cycle through vertices {0:?}")]
    Cyclic(Vec<VertexId>),
    #[error("graph is not well-formed: {kind:?} on thread `{thread}` at vertex {vertex}", kind = .0.kind, thread = .0.thread, vertex = .0.vertex)]
    IllFormed(WfViolation),
    #[error("no weak-edge witness for strong edge {0} -> {1}")]
    MissingWitness(VertexId, VertexId),
    #[error("invalid graph description: {0}")]
    Invalid(String),
}

/// A cost graph under construction. Vertex ids are global and sequential.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostGraph {
    pub order: PriorityOrder,
    pub threads: Vec<ThreadInfo>,
    vertex_thread: Vec<usize>,
    vertex_sig: Vec<Signature>,
    /// `(vertex, thread index)`.
    pub create: Vec<(VertexId, usize)>,
    pub sync: Vec<(VertexId, VertexId)>,
    pub weak: Vec<(VertexId, VertexId)>,
}

impl CostGraph {
    pub fn new(order: PriorityOrder) -> Self {
        CostGraph {
            order,
            threads: Vec::new(),
            vertex_thread: Vec::new(),
            vertex_sig: Vec::new(),
            create: Vec::new(),
            sync: Vec::new(),
            weak: Vec::new(),
        }
    }

    pub fn add_thread(&mut self, name: &str, prio: Priority) -> Result<usize, GraphError> {
        if self.thread_index(name).is_some() {
            return Err(GraphError::DuplicateThread(name.to_string()));
        }
        self.threads.push(ThreadInfo { name: name.to_string(), prio, vertices: Vec::new() });
        Ok(self.threads.len() - 1)
    }

    pub fn thread_index(&self, name: &str) -> Option<usize> {
        self.threads.iter().position(|t| t.name == name)
    }

    pub fn thread(&self, name: &str) -> Option<&ThreadInfo> {
        self.threads.iter().find(|t| t.name == name)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_thread.len()
    }

    /// `g ⊕a [u:Σ]`.
    pub fn append_vertex(&mut self, thread: &str, sig: Signature) -> Result<VertexId, GraphError> {
        let ti = self.thread_index(thread).ok_or_else(|| GraphError::UnknownThread(thread.to_string()))?;
        let v = self.vertex_thread.len();
        self.vertex_thread.push(ti);
        self.vertex_sig.push(sig);
        self.threads[ti].vertices.push(v);
        Ok(v)
    }

    fn check_vertex(&self, v: VertexId) -> Result<(), GraphError> {
        if v < self.vertex_count() {
            Ok(())
        } else {
            Err(GraphError::UnknownVertex(v))
        }
    }

    pub fn add_create(&mut self, from: VertexId, thread: &str) -> Result<(), GraphError> {
        self.check_vertex(from)?;
        let ti = self.thread_index(thread).ok_or_else(|| GraphError::UnknownThread(thread.to_string()))?;
        self.create.push((from, ti));
        Ok(())
    }

    pub fn add_sync(&mut self, from: VertexId, to: VertexId) -> Result<(), GraphError> {
        self.check_vertex(from)?;
        self.check_vertex(to)?;
        self.sync.push((from, to));
        Ok(())
    }

    pub fn add_weak(&mut self, from: VertexId, to: VertexId) -> Result<(), GraphError> {
        self.check_vertex(from)?;
        self.check_vertex(to)?;
        self.weak.push((from, to));
        Ok(())
    }

    pub fn thread_of(&self, v: VertexId) -> &ThreadInfo {
        &self.threads[self.vertex_thread[v]]
    }

    pub fn prio_of(&self, v: VertexId) -> Priority {
        self.thread_of(v).prio
    }

    pub fn sig_of(&self, v: VertexId) -> &Signature {
        &self.vertex_sig[v]
    }

    /// Explicit edge list: thread edges, then create, sync and weak edges.
    /// Create edges into threads with no vertices yet are omitted.
    pub fn edges(&self) -> Vec<Edge> {
        let mut out = Vec::new();
        for t in &self.threads {
            for w in t.vertices.windows(2) {
                out.push(Edge { kind: EdgeKind::Thread, from: w[0], to: w[1] });
            }
        }
        for &(u, ti) in &self.create {
            if let Some(&first) = self.threads[ti].vertices.first() {
                out.push(Edge { kind: EdgeKind::Create, from: u, to: first });
            }
        }
        out.extend(self.sync.iter().map(|&(f, t)| Edge { kind: EdgeKind::Sync, from: f, to: t }));
        out.extend(self.weak.iter().map(|&(f, t)| Edge { kind: EdgeKind::Weak, from: f, to: t }));
        out
    }

    pub fn dag(&self) -> Dag {
        Dag::new(self.threads.clone(), self.vertex_count(), self.edges())
    }

    /// Structural checks: every vertex in exactly one thread and every
    /// non-root thread with exactly one incoming create edge.
    pub fn check_structure(&self) -> Result<(), GraphError> {
        let mut seen = vec![false; self.vertex_count()];
        for t in &self.threads {
            for &v in &t.vertices {
                if v >= seen.len() || std::mem::replace(&mut seen[v], true) {
                    return Err(GraphError::Invalid(format!("vertex {v} is not in exactly one thread")));
                }
            }
        }
        if let Some(v) = seen.iter().position(|s| !s) {
            return Err(GraphError::Invalid(format!("vertex {v} belongs to no thread")));
        }
        for (ti, t) in self.threads.iter().enumerate().skip(1) {
            let n = self.create.iter().filter(|(_, x)| *x == ti).count();
            if n != 1 {
                return Err(GraphError::Invalid(format!("thread `{}` has {n} incoming create edges", t.name)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let doc = GraphJson {
            priorities: self.order.names().to_vec(),
            threads: self
                .threads
                .iter()
                .map(|t| ThreadJson {
                    name: t.name.clone(),
                    prio: self.order.name(t.prio).to_string(),
                    vertices: t.vertices.clone(),
                })
                .collect(),
            edges: self
                .create
                .iter()
                .map(|&(u, ti)| EdgeJson {
                    kind: EdgeKind::Create,
                    from: u,
                    to: self.threads[ti].vertices.first().copied(),
                    thread: Some(self.threads[ti].name.clone()),
                })
                .chain(self.sync.iter().map(|&(f, t)| EdgeJson { kind: EdgeKind::Sync, from: f, to: Some(t), thread: None }))
                .chain(self.weak.iter().map(|&(f, t)| EdgeJson { kind: EdgeKind::Weak, from: f, to: Some(t), thread: None }))
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("graph serializes")
    }

    pub fn from_json(text: &str) -> Result<CostGraph, GraphError> {
        let doc: GraphJson = serde_json::from_str(text).map_err(|e| GraphError::Invalid(e.to_string()))?;
        let order = PriorityOrder::new(doc.priorities).map_err(|e| GraphError::Invalid(e.to_string()))?;
        let n = doc.threads.iter().map(|t| t.vertices.len()).sum::<usize>();
        let mut g = CostGraph::new(order);
        g.vertex_thread = vec![usize::MAX; n];
        g.vertex_sig = vec![Signature::new(); n];
        for t in &doc.threads {
            let prio = g.order.resolve(&t.prio).ok_or_else(|| GraphError::Invalid(format!("unknown priority `{}`", t.prio)))?;
            let ti = g.add_thread(&t.name, prio)?;
            for &v in &t.vertices {
                if v >= n || g.vertex_thread[v] != usize::MAX {
                    return Err(GraphError::Invalid(format!("vertex {v} is out of range or repeated")));
                }
                g.vertex_thread[v] = ti;
            }
            g.threads[ti].vertices = t.vertices.clone();
        }
        let first_of: BTreeMap<VertexId, usize> =
            g.threads.iter().enumerate().filter_map(|(i, t)| t.vertices.first().map(|&v| (v, i))).collect();
        for e in doc.edges {
            match e.kind {
                EdgeKind::Create => {
                    let ti = match (&e.thread, e.to) {
                        (Some(name), _) => g.thread_index(name).ok_or_else(|| GraphError::UnknownThread(name.clone()))?,
                        (None, Some(to)) => *first_of
                            .get(&to)
                            .ok_or_else(|| GraphError::Invalid(format!("create edge target {to} is not a first vertex")))?,
                        (None, None) => return Err(GraphError::Invalid("create edge without a target".into())),
                    };
                    g.check_vertex(e.from)?;
                    g.create.push((e.from, ti));
                }
                EdgeKind::Sync | EdgeKind::Weak => {
                    let to = e.to.ok_or_else(|| GraphError::Invalid("edge without a target".into()))?;
                    if e.kind == EdgeKind::Sync {
                        g.add_sync(e.from, to)?;
                    } else {
                        g.add_weak(e.from, to)?;
                    }
                }
                k => return Err(GraphError::Invalid(format!("edge kind {k:?} is implied, not listed"))),
            }
        }
        Ok(g)
    }

    /// Graphviz text. Strong edges are solid, weak edges dashed.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph cost {\n  rankdir=TB;\n  node [shape=box, style=rounded];\n");
        for (i, t) in self.threads.iter().enumerate() {
            let prio = self.order.name(t.prio);
            let _ = writeln!(out, "  subgraph cluster_{i} {{\n    label=\"{} ({prio})\";", t.name);
            for &v in &t.vertices {
                let _ = writeln!(out, "    v{v} [label=\"{v}\\n{}@{prio}\"];", t.name);
            }
            out.push_str("  }\n");
        }
        let mut edges = self.edges();
        edges.sort_by_key(|e| (e.from, e.to, e.kind));
        for e in edges {
            let attrs = match e.kind {
                EdgeKind::Thread => String::new(),
                EdgeKind::Weak => " [style=dashed]".to_string(),
                k => format!(" [label=\"{}\"]", format!("{k:?}").to_lowercase()),
            };
            let _ = writeln!(out, "  v{} -> v{}{attrs};", e.from, e.to);
        }
        out.push_str("}\n");
        out
    }

    pub fn ancestor_query(&self, u: VertexId, v: VertexId) -> Result<AncestorKind, GraphError> {
        self.check_vertex(u)?;
        self.check_vertex(v)?;
        Ok(self.dag().ancestry()?.query(u, v))
    }

    pub fn is_well_formed(&self) -> Result<(), GraphError> {
        self.dag().is_well_formed()
    }

    pub fn strengthen(&self, a: &str) -> Result<Dag, GraphError> {
        let dag = self.dag();
        let ti = self.thread_index(a).ok_or_else(|| GraphError::UnknownThread(a.to_string()))?;
        dag.strengthen(ti)
    }

    pub fn competitor_work(&self, a: &str) -> Result<usize, GraphError> {
        let ti = self.thread_index(a).ok_or_else(|| GraphError::UnknownThread(a.to_string()))?;
        self.dag().competitor_work(ti)
    }

    pub fn a_span(&self, a: &str) -> Result<usize, GraphError> {
        let ti = self.thread_index(a).ok_or_else(|| GraphError::UnknownThread(a.to_string()))?;
        self.dag().a_span(ti)
    }
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    priorities: Vec<String>,
    threads: Vec<ThreadJson>,
    edges: Vec<EdgeJson>,
}

#[derive(Serialize, Deserialize)]
struct ThreadJson {
    name: String,
    prio: String,
    vertices: Vec<VertexId>,
}

#[derive(Serialize, Deserialize)]
struct EdgeJson {
    kind: EdgeKind,
    from: VertexId,
    to: Option<VertexId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    thread: Option<String>,
}

/// Analysis view of a cost graph with every edge explicit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dag {
    pub threads: Vec<ThreadInfo>,
    pub edges: Vec<Edge>,
    n: usize,
    thread_of: Vec<usize>,
    pos: Vec<usize>,
}

/// Reflexive ancestry. `reach[u]` holds every `v` with `u ⪯ v`; `weak[u]`
/// holds those reached by some path through a weak edge.
#[derive(Clone, Debug)]
pub struct Ancestry {
    reach: Vec<FixedBitSet>,
    weak: Vec<FixedBitSet>,
}

impl Ancestry {
    pub fn is_ancestor(&self, u: VertexId, v: VertexId) -> bool {
        self.reach[u].contains(v)
    }

    pub fn is_proper_ancestor(&self, u: VertexId, v: VertexId) -> bool {
        u != v && self.reach[u].contains(v)
    }

    pub fn is_strong(&self, u: VertexId, v: VertexId) -> bool {
        self.reach[u].contains(v) && !self.weak[u].contains(v)
    }

    pub fn is_weak(&self, u: VertexId, v: VertexId) -> bool {
        self.weak[u].contains(v)
    }

    pub fn query(&self, u: VertexId, v: VertexId) -> AncestorKind {
        if self.is_weak(u, v) {
            AncestorKind::WeakAncestor
        } else if self.is_ancestor(u, v) {
            AncestorKind::StrongAncestor
        } else {
            AncestorKind::NotAncestor
        }
    }

    pub fn descendants(&self, u: VertexId) -> &FixedBitSet {
        &self.reach[u]
    }

    pub fn weak_descendants(&self, u: VertexId) -> &FixedBitSet {
        &self.weak[u]
    }
}

struct Witness {
    weak_edge: (VertexId, VertexId),
    parent: VertexId,
}

impl Dag {
    pub fn new(threads: Vec<ThreadInfo>, n: usize, edges: Vec<Edge>) -> Dag {
        let mut thread_of = vec![0; n];
        let mut pos = vec![0; n];
        for (ti, t) in threads.iter().enumerate() {
            for (i, &v) in t.vertices.iter().enumerate() {
                thread_of[v] = ti;
                pos[v] = i;
            }
        }
        Dag { threads, edges, n, thread_of, pos }
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn prio(&self, v: VertexId) -> Priority {
        self.threads[self.thread_of[v]].prio
    }

    pub fn thread_index_of(&self, v: VertexId) -> usize {
        self.thread_of[v]
    }

    /// The previous vertex in `v`'s thread.
    pub fn thread_parent(&self, v: VertexId) -> Option<VertexId> {
        let p = self.pos[v];
        (p > 0).then(|| self.threads[self.thread_of[v]].vertices[p - 1])
    }

    pub fn out_edges(&self) -> Vec<Vec<Edge>> {
        let mut out = vec![Vec::new(); self.n];
        for e in &self.edges {
            out[e.from].push(*e);
        }
        out
    }

    pub fn in_edges(&self) -> Vec<Vec<Edge>> {
        let mut inn = vec![Vec::new(); self.n];
        for e in &self.edges {
            inn[e.to].push(*e);
        }
        inn
    }

    /// Topological order over all edges.
    pub fn topo_order(&self) -> Result<Vec<VertexId>, GraphError> {
        let mut indeg = vec![0usize; self.n];
        for e in &self.edges {
            indeg[e.to] += 1;
        }
        let out = self.out_edges();
        let mut queue: VecDeque<VertexId> = (0..self.n).filter(|&v| indeg[v] == 0).collect();
        let mut order = Vec::with_capacity(self.n);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for e in &out[v] {
                indeg[e.to] -= 1;
                if indeg[e.to] == 0 {
                    queue.push_back(e.to);
                }
            }
        }
        if order.len() == self.n {
            Ok(order)
        } else {
            Err(GraphError::Cyclic((0..self.n).filter(|&v| indeg[v] > 0).collect()))
        }
    }

    pub fn ancestry(&self) -> Result<Ancestry, GraphError> {
        let order = self.topo_order()?;
        let out = self.out_edges();
        let mut reach = vec![FixedBitSet::with_capacity(self.n); self.n];
        let mut weak = vec![FixedBitSet::with_capacity(self.n); self.n];
        for &v in order.iter().rev() {
            let mut r = FixedBitSet::with_capacity(self.n);
            let mut w = FixedBitSet::with_capacity(self.n);
            r.insert(v);
            for e in &out[v] {
                r.union_with(&reach[e.to]);
                if e.kind.is_strong() {
                    w.union_with(&weak[e.to]);
                } else {
                    w.union_with(&reach[e.to]);
                }
            }
            reach[v] = r;
            weak[v] = w;
        }
        Ok(Ancestry { reach, weak })
    }

    fn ends(&self, ti: usize) -> Option<(VertexId, VertexId)> {
        let vs = &self.threads[ti].vertices;
        Some((*vs.first()?, *vs.last()?))
    }

    /// A vertex path from `u` to `to` using strong edges only.
    fn strong_path(&self, out: &[Vec<Edge>], u: VertexId, to: VertexId) -> Vec<VertexId> {
        let mut prev = vec![usize::MAX; self.n];
        let mut queue = VecDeque::from([u]);
        prev[u] = u;
        while let Some(v) = queue.pop_front() {
            if v == to {
                break;
            }
            for e in out[v].iter().filter(|e| e.kind.is_strong()) {
                if prev[e.to] == usize::MAX {
                    prev[e.to] = v;
                    queue.push_back(e.to);
                }
            }
        }
        if prev[to] == usize::MAX {
            return vec![u];
        }
        let mut path = vec![to];
        let mut v = to;
        while v != u {
            v = prev[v];
            path.push(v);
        }
        path.reverse();
        path
    }

    /// The weak edge justifying strong edge `(u1, u)` for a thread
    /// spanning `s..t`, preferring a target on thread `ti`.
    fn witness(
        &self,
        anc: &Ancestry,
        out: &[Vec<Edge>],
        inn: &[Vec<Edge>],
        ti: usize,
        (s, t): (VertexId, VertexId),
        (u1, u): (VertexId, VertexId),
    ) -> Option<Witness> {
        let mut best: Option<Witness> = None;
        for e in out[u1].iter().filter(|e| e.kind == EdgeKind::Weak) {
            let w = e.to;
            if !anc.is_strong(w, t) || anc.is_ancestor(w, s) {
                continue;
            }
            let Some(parent) = self.thread_parent(w) else { continue };
            let others_ok = inn[w]
                .iter()
                .filter(|x| x.kind.is_strong() && !(x.kind == EdgeKind::Thread && x.from == parent))
                .all(|x| anc.is_ancestor(u, x.from));
            if !others_ok {
                continue;
            }
            let cand = Witness { weak_edge: (u1, w), parent };
            let better = match &best {
                None => true,
                Some(b) => {
                    let on_a = |v: VertexId| self.thread_of[v] == ti;
                    (on_a(w), std::cmp::Reverse(w)) > (on_a(b.weak_edge.1), std::cmp::Reverse(b.weak_edge.1))
                }
            };
            if better {
                best = Some(cand);
            }
        }
        best
    }

    /// Strong edges `(u′, u)` with `u′ ⪯w t`, `u ⪯s t` and `u ⋠ s`, other
    /// than edges along thread `ti` itself.
    fn rewritable_edges(&self, anc: &Ancestry, ti: usize, (s, t): (VertexId, VertexId)) -> Vec<Edge> {
        self.edges
            .iter()
            .filter(|e| e.kind.is_strong() && anc.is_weak(e.from, t) && anc.is_strong(e.to, t) && !anc.is_ancestor(e.to, s))
            .filter(|e| !(e.kind == EdgeKind::Thread && self.thread_of[e.from] == ti))
            .copied()
            .collect()
    }

    pub fn is_well_formed(&self) -> Result<(), GraphError> {
        let anc = self.ancestry()?;
        let out = self.out_edges();
        let inn = self.in_edges();
        for (ti, th) in self.threads.iter().enumerate() {
            let Some((s, t)) = self.ends(ti) else { continue };
            for u in 0..self.n {
                if anc.is_strong(u, t) && !anc.is_ancestor(u, s) && self.prio(u) < th.prio {
                    return Err(GraphError::IllFormed(WfViolation {
                        kind: WfKind::LowPriorityOnCriticalPath,
                        thread: th.name.clone(),
                        vertex: u,
                        path: self.strong_path(&out, u, t),
                    }));
                }
            }
            for e in self.rewritable_edges(&anc, ti, (s, t)) {
                if self.witness(&anc, &out, &inn, ti, (s, t), (e.from, e.to)).is_none() {
                    let mut path = vec![e.from];
                    path.extend(self.strong_path(&out, e.to, t));
                    return Err(GraphError::IllFormed(WfViolation {
                        kind: WfKind::MissingWeakEdgeWitness,
                        thread: th.name.clone(),
                        vertex: e.to,
                        path,
                    }));
                }
            }
        }
        Ok(())
    }

    /// The a-strengthening for thread index `ti`.
    pub fn strengthen(&self, ti: usize) -> Result<Dag, GraphError> {
        let Some(ends) = self.ends(ti) else { return Err(GraphError::EmptyThread(self.threads[ti].name.clone())) };
        let anc = self.ancestry()?;
        let out = self.out_edges();
        let inn = self.in_edges();
        let mut remove: BTreeSet<Edge> = BTreeSet::new();
        let mut add: Vec<Edge> = Vec::new();
        for e in self.rewritable_edges(&anc, ti, ends) {
            let w = self
                .witness(&anc, &out, &inn, ti, ends, (e.from, e.to))
                .ok_or(GraphError::MissingWitness(e.from, e.to))?;
            remove.insert(Edge { kind: EdgeKind::Weak, from: w.weak_edge.0, to: w.weak_edge.1 });
            remove.insert(e);
            let new = Edge { kind: EdgeKind::Strengthened, from: w.parent, to: e.to };
            if !add.contains(&new) {
                add.push(new);
            }
        }
        let mut edges: Vec<Edge> = self.edges.iter().filter(|e| !remove.contains(e)).copied().collect();
        edges.extend(add);
        Ok(Dag::new(self.threads.clone(), self.n, edges))
    }

    /// Vertices at or above thread `ti`'s priority that are neither proper
    /// ancestors of its first vertex nor proper descendants of its last.
    pub fn competitor_work(&self, ti: usize) -> Result<usize, GraphError> {
        let (s, t) = self.ends(ti).ok_or_else(|| GraphError::EmptyThread(self.threads[ti].name.clone()))?;
        let anc = self.ancestry()?;
        let rho = self.threads[ti].prio;
        Ok((0..self.n)
            .filter(|&u| !anc.is_proper_ancestor(u, s) && !anc.is_proper_ancestor(t, u) && self.prio(u) >= rho)
            .count())
    }

    /// Vertex count of the longest strong path in the strengthening that
    /// ends at the thread's last vertex and avoids proper ancestors of its
    /// first vertex.
    pub fn a_span(&self, ti: usize) -> Result<usize, GraphError> {
        let st = self.strengthen(ti)?;
        st.span_to_last(ti)
    }

    /// The a-span computation on a graph that is already strengthened.
    pub fn span_to_last(&self, ti: usize) -> Result<usize, GraphError> {
        let (s, t) = self.ends(ti).ok_or_else(|| GraphError::EmptyThread(self.threads[ti].name.clone()))?;
        let anc = self.ancestry()?;
        let order = self.topo_order()?;
        let inn = self.in_edges();
        let mut len = vec![0usize; self.n];
        for &v in &order {
            if anc.is_proper_ancestor(v, s) {
                continue;
            }
            let best = inn[v].iter().filter(|e| e.kind.is_strong()).map(|e| len[e.from]).max().unwrap_or(0);
            len[v] = best + 1;
        }
        Ok(len[t])
    }
}
