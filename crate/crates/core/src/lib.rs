//! Scientific contribution graphs: extraction of contributions and their
//! prerequisites from paper text through a generation backend, alignment of
//! prerequisites onto earlier contributions, and the prerequisite-prediction
//! ranking benchmark built on top of the graph.

pub mod embed;
pub mod eval;
pub mod frontier;
pub mod graph;
pub mod jsonl;
pub mod pipeline;
pub mod roadmap;
pub mod taskgen;
