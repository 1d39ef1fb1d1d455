//! Random cost graphs and brute-force path-enumeration oracles.
#![allow(dead_code)]

use std::collections::BTreeSet;

use lambda4s::graph::{AncestorKind, CostGraph, Edge, EdgeKind, VertexId, WfKind};
use lambda4s::lang::{Priority, PriorityOrder, Signature};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A graph of at most `max_vertices` vertices. Vertex ids are handed out in
/// a random interleaving of threads and every cross-thread edge goes from a
/// smaller id to a larger one, so the result is acyclic.
pub fn random_graph(seed: u64, max_vertices: usize) -> CostGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = CostGraph::new(PriorityOrder::new(["Low", "Mid", "High"]).unwrap());
    let threads = rng.gen_range(1..=4);
    for i in 0..threads {
        g.add_thread(&format!("t{i}"), Priority(rng.gen_range(0..3))).unwrap();
    }
    let n = rng.gen_range(threads..=max_vertices);
    // Every thread gets at least one vertex; the rest are spread at random.
    let mut owner: Vec<usize> = (0..threads).collect();
    owner.extend((threads..n).map(|_| rng.gen_range(0..threads)));
    owner.shuffle(&mut rng);
    for &t in &owner {
        g.append_vertex(&format!("t{t}"), Signature::new()).unwrap();
    }
    for ti in 1..threads {
        let s = g.threads[ti].vertices[0];
        if s > 0 && rng.gen_bool(0.7) {
            let from = rng.gen_range(0..s);
            if g.thread_of(from).name != g.threads[ti].name {
                g.add_create(from, &format!("t{ti}")).unwrap();
            }
        }
    }
    let extra = rng.gen_range(0..=n);
    for _ in 0..extra {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        let (u, v) = (a.min(b), a.max(b));
        if u == v || g.thread_of(u).name == g.thread_of(v).name {
            continue;
        }
        if rng.gen_bool(0.5) {
            g.add_sync(u, v).unwrap();
        } else {
            g.add_weak(u, v).unwrap();
        }
    }
    g
}

/// Brute-force view of a graph: every question is answered by enumerating
/// simple paths.
pub struct PathOracle {
    pub n: usize,
    pub edges: Vec<Edge>,
    pub prio: Vec<Priority>,
    pub threads: Vec<(Vec<VertexId>, Priority)>,
}

impl PathOracle {
    pub fn new(g: &CostGraph) -> Self {
        PathOracle::from_parts(g, g.edges())
    }

    pub fn from_parts(g: &CostGraph, edges: Vec<Edge>) -> Self {
        let n = g.vertex_count();
        PathOracle {
            n,
            edges,
            prio: (0..n).map(|v| g.prio_of(v)).collect(),
            threads: g.threads.iter().map(|t| (t.vertices.clone(), t.prio)).collect(),
        }
    }

    /// Visits every simple path from `u` to `v`, reporting whether it uses a weak edge.
    fn paths(&self, u: VertexId, v: VertexId, visit: &mut dyn FnMut(bool)) {
        fn go(o: &PathOracle, at: VertexId, v: VertexId, weak: bool, on: &mut Vec<bool>, visit: &mut dyn FnMut(bool)) {
            if at == v {
                visit(weak);
            }
            on[at] = true;
            for e in o.edges.iter().filter(|e| e.from == at) {
                if !on[e.to] {
                    go(o, e.to, v, weak || !e.kind.is_strong(), on, visit);
                }
            }
            on[at] = false;
        }
        go(self, u, v, false, &mut vec![false; self.n], visit);
    }

    pub fn has_cycle(&self) -> bool {
        self.edges.iter().any(|e| e.from == e.to || self.anc(e.to, e.from))
    }

    pub fn ancestor(&self, u: VertexId, v: VertexId) -> AncestorKind {
        let (mut any, mut weak) = (false, false);
        self.paths(u, v, &mut |w| {
            any = true;
            weak |= w;
        });
        match (any, weak) {
            (_, true) => AncestorKind::WeakAncestor,
            (true, false) => AncestorKind::StrongAncestor,
            _ => AncestorKind::NotAncestor,
        }
    }

    pub fn anc(&self, u: VertexId, v: VertexId) -> bool {
        self.ancestor(u, v) != AncestorKind::NotAncestor
    }

    pub fn sanc(&self, u: VertexId, v: VertexId) -> bool {
        self.ancestor(u, v) == AncestorKind::StrongAncestor
    }

    pub fn wanc(&self, u: VertexId, v: VertexId) -> bool {
        self.ancestor(u, v) == AncestorKind::WeakAncestor
    }

    fn ends(&self, ti: usize) -> (VertexId, VertexId) {
        let vs = &self.threads[ti].0;
        (vs[0], *vs.last().unwrap())
    }

    fn thread_index(&self, v: VertexId) -> usize {
        self.threads.iter().position(|(vs, _)| vs.contains(&v)).unwrap()
    }

    fn thread_parent(&self, v: VertexId) -> Option<VertexId> {
        let vs = &self.threads[self.thread_index(v)].0;
        let i = vs.iter().position(|&x| x == v).unwrap();
        (i > 0).then(|| vs[i - 1])
    }

    pub fn competitor_work(&self, ti: usize) -> usize {
        let (s, t) = self.ends(ti);
        let rho = self.threads[ti].1;
        (0..self.n)
            .filter(|&u| self.prio[u] >= rho && !(u != s && self.anc(u, s)) && !(u != t && self.anc(t, u)))
            .count()
    }

    /// Strong edges `(u′, u)` needing a witness, skipping edges along thread `ti`.
    fn rewritable(&self, ti: usize) -> Vec<Edge> {
        let (s, t) = self.ends(ti);
        self.edges
            .iter()
            .filter(|e| e.kind.is_strong() && self.wanc(e.from, t) && self.sanc(e.to, t) && !self.anc(e.to, s))
            .filter(|e| !(e.kind == EdgeKind::Thread && self.thread_index(e.from) == ti))
            .copied()
            .collect()
    }

    /// Weak edges `(u′, u″)` that justify strong edge `(u′, u)`, with the
    /// parent of `u″`; the preferred one comes first.
    fn witnesses(&self, ti: usize, e: Edge) -> Vec<(VertexId, VertexId)> {
        let (s, t) = self.ends(ti);
        let mut out: Vec<(VertexId, VertexId)> = Vec::new();
        for w in self.edges.iter().filter(|x| x.kind == EdgeKind::Weak && x.from == e.from).map(|x| x.to) {
            if !self.sanc(w, t) || self.anc(w, s) {
                continue;
            }
            let Some(parent) = self.thread_parent(w) else { continue };
            let others_ok = self
                .edges
                .iter()
                .filter(|x| x.to == w && x.kind.is_strong() && !(x.kind == EdgeKind::Thread && x.from == parent))
                .all(|x| self.anc(e.to, x.from));
            if others_ok && !out.iter().any(|&(x, _)| x == w) {
                out.push((w, parent));
            }
        }
        out.sort_by_key(|&(w, _)| (self.thread_index(w) != ti, w));
        out
    }

    /// All violations as `(kind, thread index)`.
    pub fn violations(&self) -> BTreeSet<(WfKind, usize)> {
        let mut out = BTreeSet::new();
        for ti in 0..self.threads.len() {
            let (s, t) = self.ends(ti);
            for u in 0..self.n {
                if self.sanc(u, t) && !self.anc(u, s) && self.prio[u] < self.threads[ti].1 {
                    out.insert((WfKind::LowPriorityOnCriticalPath, ti));
                }
            }
            for e in self.rewritable(ti) {
                if self.witnesses(ti, e).is_empty() {
                    out.insert((WfKind::MissingWeakEdgeWitness, ti));
                }
            }
        }
        out
    }

    /// The strengthened edge set, or `None` when a witness is missing.
    pub fn strengthen(&self, ti: usize) -> Option<Vec<Edge>> {
        let mut remove = BTreeSet::new();
        let mut add = BTreeSet::new();
        for e in self.rewritable(ti) {
            let &(w, parent) = self.witnesses(ti, e).first()?;
            remove.insert(Edge { kind: EdgeKind::Weak, from: e.from, to: w });
            remove.insert(e);
            add.insert(Edge { kind: EdgeKind::Strengthened, from: parent, to: e.to });
        }
        let mut edges: Vec<Edge> = self.edges.iter().filter(|e| !remove.contains(e)).copied().collect();
        edges.extend(add);
        Some(edges)
    }

    /// Longest strong path, counted in vertices, ending at the last vertex of
    /// `ti` and avoiding proper ancestors of its first vertex.
    pub fn longest_strong_path_to_last(&self, ti: usize) -> usize {
        let (s, t) = self.ends(ti);
        let avoid: Vec<bool> = (0..self.n).map(|u| u != s && self.anc(u, s)).collect();
        fn go(o: &PathOracle, at: VertexId, t: VertexId, len: usize, avoid: &mut Vec<bool>, best: &mut usize) {
            if at == t {
                *best = (*best).max(len);
            }
            avoid[at] = true;
            let next: Vec<VertexId> =
                o.edges.iter().filter(|e| e.from == at && e.kind.is_strong() && !avoid[e.to]).map(|e| e.to).collect();
            for v in next {
                go(o, v, t, len + 1, avoid, best);
            }
            avoid[at] = false;
        }
        let mut best = 0;
        for u in (0..self.n).filter(|&u| !avoid[u]) {
            go(self, u, t, 1, &mut avoid.clone(), &mut best);
        }
        best
    }
}

/// A-span by enumeration over the independently strengthened graph.
pub fn oracle_a_span(g: &CostGraph, ti: usize) -> Option<usize> {
    let o = PathOracle::new(g);
    let strengthened = PathOracle::from_parts(g, o.strengthen(ti)?);
    if strengthened.has_cycle() {
        return None;
    }
    Some(strengthened.longest_strong_path_to_last(ti))
}

/// Every prompt schedule of `dag` on `p` processors, with weak parents
/// treated as prerequisites.
pub fn all_prompt_schedules(dag: &lambda4s::graph::Dag, p: usize) -> Vec<lambda4s::sched::Schedule> {
    fn go(
        dag: &lambda4s::graph::Dag,
        p: usize,
        done: &mut Vec<bool>,
        steps: &mut Vec<Vec<VertexId>>,
        out: &mut Vec<lambda4s::sched::Schedule>,
    ) {
        let n = dag.vertex_count();
        if done.iter().all(|&d| d) {
            out.push(lambda4s::sched::Schedule { p, steps: steps.clone() });
            return;
        }
        let mut ready: Vec<VertexId> =
            (0..n).filter(|&v| !done[v] && dag.edges.iter().filter(|e| e.to == v).all(|e| done[e.from])).collect();
        ready.sort_by_key(|&v| std::cmp::Reverse(dag.prio(v)));
        let picks: Vec<Vec<VertexId>> = if ready.len() <= p {
            vec![ready]
        } else {
            // Everything strictly above the p-th priority runs; the tie class is chosen from.
            let cut = dag.prio(ready[p - 1]);
            let above: Vec<VertexId> = ready.iter().copied().filter(|&v| dag.prio(v) > cut).collect();
            let tie: Vec<VertexId> = ready.iter().copied().filter(|&v| dag.prio(v) == cut).collect();
            combinations(&tie, p - above.len())
                .into_iter()
                .map(|c| above.iter().copied().chain(c).collect())
                .collect()
        };
        for pick in picks {
            for &v in &pick {
                done[v] = true;
            }
            steps.push(pick.clone());
            go(dag, p, done, steps, out);
            steps.pop();
            for &v in &pick {
                done[v] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(dag, p, &mut vec![false; dag.vertex_count()], &mut Vec::new(), &mut out);
    out
}

fn combinations(items: &[VertexId], k: usize) -> Vec<Vec<VertexId>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    if items.len() < k {
        return Vec::new();
    }
    let mut with: Vec<Vec<VertexId>> = combinations(&items[1..], k - 1);
    for c in &mut with {
        c.insert(0, items[0]);
    }
    with.extend(combinations(&items[1..], k));
    with
}

/// Vertices ready in `strong` at some step of `sched` that are not ready in `dag`.
pub fn readiness_gaps(dag: &lambda4s::graph::Dag, strong: &lambda4s::graph::Dag, sched: &lambda4s::sched::Schedule) -> Vec<usize> {
    let n = dag.vertex_count();
    let at = sched.exec_steps(n);
    let ready_in = |d: &lambda4s::graph::Dag, v: usize, now: usize| {
        at[v] >= now && d.edges.iter().filter(|e| e.to == v && e.kind.is_strong()).all(|e| at[e.from] < now)
    };
    let mut gaps = Vec::new();
    for now in 1..=sched.steps.len() {
        for v in 0..n {
            if ready_in(strong, v, now) && !ready_in(dag, v, now) && !gaps.contains(&v) {
                gaps.push(v);
            }
        }
    }
    gaps
}
