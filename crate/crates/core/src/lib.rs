//! Multi-hunk, multi-statement automated program repair for a small
//! imperative language.

pub mod config;
pub mod corpus;
pub mod dataflow;
pub mod diffpair;
pub mod embed;
pub mod expansion;
pub mod hunkdetect;
pub mod lang;
pub mod pipeline;
pub mod postprocess;
pub mod repair;
pub mod sbfl;
