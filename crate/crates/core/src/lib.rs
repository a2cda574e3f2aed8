//! Knowledge-flow analysis of security protocols.

pub mod dsl;
pub mod engine;
pub mod model;
pub mod protocols;
pub mod rules;
pub mod terms;
