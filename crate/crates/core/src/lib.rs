//! Data synthesis and reward machinery for reflective long-form writing.
//!
//! The crate covers the full offline pipeline: curating open-ended writing
//! queries, generating evaluation rubrics, synthesizing thinking trajectories
//! enriched with reflection and revision through an iterative writer-judge
//! loop, and computing the gated answer+process reward that an external RL
//! trainer consumes. Every model call goes through the pluggable [`backend`]
//! abstraction, so the whole control flow and all reward formulas run
//! deterministically under scripted judges.

pub mod backend;
pub mod corpus;
pub mod patterns;
pub mod processbench;
pub mod prompts;
pub mod reward;
pub mod rubric;
pub mod synthesis;
