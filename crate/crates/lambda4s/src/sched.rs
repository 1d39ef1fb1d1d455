//! Prompt schedules of cost graphs on `P` processors, admissibility,
//! response times and the response-time bound.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::graph::{CostGraph, Dag, GraphError, VertexId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TieBreak {
    VertexId,
    Seeded(u64),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Schedule {
    #[serde(rename = "P")]
    pub p: usize,
    /// `steps[k]` runs at time `k + 1`.
    pub steps: Vec<Vec<VertexId>>,
}

impl Schedule {
    /// 1-based execution step of every vertex, 0 if it never runs.
    pub fn exec_steps(&self, n: usize) -> Vec<usize> {
        let mut at = vec![0; n];
        for (k, step) in self.steps.iter().enumerate() {
            for &v in step {
                if v < n {
                    at[v] = k + 1;
                }
            }
        }
        at
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SchedError {
    #[error("processor count must be at least 1")]
    NoProcessors,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("schedule does not cover thread `{0}`")]
    Incomplete(String),
}

fn ratio_text<S: Serializer>(r: &Ratio<u64>, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{}/{}", r.numer(), r.denom()))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ScheduleReport {
    pub thread: String,
    #[serde(rename = "P")]
    pub p: usize,
    /// Worst response time over the checked schedules.
    pub response_time: usize,
    pub competitor_work: usize,
    pub a_span: usize,
    #[serde(serialize_with = "ratio_text")]
    pub bound: Ratio<u64>,
    pub satisfied: bool,
    /// Number of admissible schedules checked.
    pub schedules: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub violation: Option<Schedule>,
}

/// Greedy prioritized schedule: each step runs up to `p` ready vertices,
/// highest priority first. A vertex is ready once all its strong parents
/// ran in earlier steps and all its weak parents have run.
pub fn prompt_schedule(g: &CostGraph, p: usize, tie: TieBreak) -> Result<Schedule, SchedError> {
    prompt_schedule_dag(&g.dag(), p, tie)
}

pub fn prompt_schedule_dag(dag: &Dag, p: usize, tie: TieBreak) -> Result<Schedule, SchedError> {
    if p == 0 {
        return Err(SchedError::NoProcessors);
    }
    let n = dag.vertex_count();
    let keys: Vec<u64> = match tie {
        TieBreak::VertexId => (0..n as u64).collect(),
        TieBreak::Seeded(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| rng.gen()).collect()
        }
    };
    let out = dag.out_edges();
    let mut pending = vec![0usize; n];
    for e in &dag.edges {
        pending[e.to] += 1;
    }
    let mut heap: BinaryHeap<(usize, Reverse<u64>, Reverse<VertexId>)> = BinaryHeap::new();
    let push = |heap: &mut BinaryHeap<_>, v: VertexId| heap.push((dag.prio(v).0, Reverse(keys[v]), Reverse(v)));
    for v in (0..n).filter(|&v| pending[v] == 0) {
        push(&mut heap, v);
    }
    let mut steps = Vec::new();
    let mut done = 0;
    while done < n {
        if heap.is_empty() {
            return Err(GraphError::Cyclic((0..n).filter(|&v| pending[v] > 0).collect()).into());
        }
        let mut step = Vec::with_capacity(p);
        while step.len() < p {
            let Some((_, _, Reverse(v))) = heap.pop() else { break };
            step.push(v);
        }
        for &v in &step {
            for e in &out[v] {
                pending[e.to] -= 1;
                if pending[e.to] == 0 {
                    push(&mut heap, e.to);
                }
            }
        }
        done += step.len();
        steps.push(step);
    }
    Ok(Schedule { p, steps })
}

/// Step at which each vertex becomes ready: one after its last strong parent.
fn ready_steps(dag: &Dag, at: &[usize]) -> Vec<usize> {
    let mut ready = vec![1; dag.vertex_count()];
    for e in dag.edges.iter().filter(|e| e.kind.is_strong()) {
        ready[e.to] = ready[e.to].max(at[e.from] + 1);
    }
    ready
}

/// Every vertex runs exactly once, at most `p` per step, after its strong parents.
pub fn is_valid(dag: &Dag, sched: &Schedule) -> bool {
    let n = dag.vertex_count();
    let mut count = vec![0; n];
    for step in &sched.steps {
        if step.len() > sched.p || sched.p == 0 {
            return false;
        }
        for &v in step {
            if v >= n {
                return false;
            }
            count[v] += 1;
        }
    }
    if count.iter().any(|&c| c != 1) {
        return false;
    }
    let at = sched.exec_steps(n);
    dag.edges.iter().filter(|e| e.kind.is_strong()).all(|e| at[e.from] < at[e.to])
}

/// Valid, and every weak parent of a vertex ran before the vertex became ready.
pub fn is_admissible(g: &CostGraph, sched: &Schedule) -> bool {
    is_admissible_dag(&g.dag(), sched)
}

pub fn is_admissible_dag(dag: &Dag, sched: &Schedule) -> bool {
    if !is_valid(dag, sched) {
        return false;
    }
    let at = sched.exec_steps(dag.vertex_count());
    let ready = ready_steps(dag, &at);
    dag.edges.iter().filter(|e| !e.kind.is_strong()).all(|e| at[e.from] < ready[e.to])
}

/// No step leaves a processor idle, or busy with lower-priority work, while
/// a higher-priority vertex is ready and unexecuted.
pub fn is_prompt(dag: &Dag, sched: &Schedule) -> bool {
    let n = dag.vertex_count();
    let at = sched.exec_steps(n);
    let inn = dag.in_edges();
    for (k, step) in sched.steps.iter().enumerate() {
        let now = k + 1;
        let lowest_run = step.iter().map(|&v| dag.prio(v)).min();
        for v in 0..n {
            if at[v] <= now {
                continue;
            }
            let ready = inn[v].iter().all(|e| at[e.from] != 0 && at[e.from] < now);
            if !ready {
                continue;
            }
            if step.len() < sched.p || lowest_run.is_some_and(|lo| lo < dag.prio(v)) {
                return false;
            }
        }
    }
    true
}

/// Inclusive steps from the first vertex of `a` becoming ready to its last
/// vertex running.
pub fn response_time(g: &CostGraph, sched: &Schedule, a: &str) -> Result<usize, SchedError> {
    let dag = g.dag();
    let ti = g.thread_index(a).ok_or_else(|| GraphError::UnknownThread(a.to_string()))?;
    response_time_dag(&dag, sched, ti)
}

pub fn response_time_dag(dag: &Dag, sched: &Schedule, ti: usize) -> Result<usize, SchedError> {
    let th = &dag.threads[ti];
    let (Some(&s), Some(&t)) = (th.vertices.first(), th.vertices.last()) else {
        return Err(GraphError::EmptyThread(th.name.clone()).into());
    };
    let at = sched.exec_steps(dag.vertex_count());
    if at[t] == 0 {
        return Err(SchedError::Incomplete(th.name.clone()));
    }
    let ready = ready_steps(dag, &at);
    Ok(at[t] + 1 - ready[s])
}

/// `(W + (P−1)·S) / P` for competitor work `W` and a-span `S`.
pub fn bound(g: &CostGraph, a: &str, p: usize) -> Result<Ratio<u64>, SchedError> {
    let ti = g.thread_index(a).ok_or_else(|| GraphError::UnknownThread(a.to_string()))?;
    let dag = g.dag();
    dag.is_well_formed()?;
    Ok(bound_terms(&dag, ti, p)?.2)
}

fn bound_terms(dag: &Dag, ti: usize, p: usize) -> Result<(usize, usize, Ratio<u64>), SchedError> {
    if p == 0 {
        return Err(SchedError::NoProcessors);
    }
    let w = dag.competitor_work(ti)?;
    let s = dag.a_span(ti)?;
    let b = Ratio::new((w + (p - 1) * s) as u64, p as u64);
    Ok((w, s, b))
}

fn schedules(dag: &Dag, p: usize, samples: usize) -> Result<Vec<Schedule>, SchedError> {
    let mut out = vec![prompt_schedule_dag(dag, p, TieBreak::VertexId)?];
    for seed in 0..samples as u64 {
        out.push(prompt_schedule_dag(dag, p, TieBreak::Seeded(seed))?);
    }
    Ok(out)
}

fn report(dag: &Dag, ti: usize, p: usize, scheds: &[Schedule]) -> Result<ScheduleReport, SchedError> {
    let (w, s, b) = bound_terms(dag, ti, p)?;
    let mut worst = 0;
    let mut checked = 0;
    let mut violation = None;
    for sched in scheds.iter().filter(|sc| is_admissible_dag(dag, sc)) {
        checked += 1;
        let rt = response_time_dag(dag, sched, ti)?;
        worst = worst.max(rt);
        if Ratio::from_integer(rt as u64) > b && violation.is_none() {
            violation = Some(sched.clone());
        }
    }
    Ok(ScheduleReport {
        thread: dag.threads[ti].name.clone(),
        p,
        response_time: worst,
        competitor_work: w,
        a_span: s,
        bound: b,
        satisfied: violation.is_none(),
        schedules: checked,
        violation,
    })
}

/// Checks the bound for thread `a` over the deterministic schedule plus
/// `samples` seeded ones; reports the worst case.
pub fn check_bound(g: &CostGraph, a: &str, p: usize, samples: usize) -> Result<ScheduleReport, SchedError> {
    let ti = g.thread_index(a).ok_or_else(|| GraphError::UnknownThread(a.to_string()))?;
    let dag = g.dag();
    dag.is_well_formed()?;
    report(&dag, ti, p, &schedules(&dag, p, samples)?)
}

/// [`check_bound`] for every non-empty thread, sharing the schedules.
pub fn check_bound_all(g: &CostGraph, p: usize, samples: usize) -> Result<Vec<ScheduleReport>, SchedError> {
    let dag = g.dag();
    dag.is_well_formed()?;
    let scheds = schedules(&dag, p, samples)?;
    (0..dag.threads.len())
        .filter(|&ti| !dag.threads[ti].vertices.is_empty())
        .map(|ti| report(&dag, ti, p, &scheds))
        .collect()
}
