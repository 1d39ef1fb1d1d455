//! Prioritized parallelism with condition variables and mutexes: a checker
//! that rules out priority inversions, a cost-semantics interpreter that
//! records the computation DAG, and analyses over that DAG.

pub mod lang;
pub mod parser;
pub mod typeck;
pub mod graph;
pub mod sched;
pub mod interp;
pub mod invariants;
pub mod explore;
pub mod fuzz;
