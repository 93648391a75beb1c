//! Fault localization for student programs: judge, prompt ensembles of
//! chat models to annotate faulty lines, vote, and evaluate.

pub mod annotate;
pub mod context;
pub mod corpus;
pub mod diff;
pub mod eval;
pub mod judge;
pub mod llm;
pub mod par;
pub mod pipeline;
pub mod repair;
pub mod sbfl;
pub mod vector;
pub mod vote;
