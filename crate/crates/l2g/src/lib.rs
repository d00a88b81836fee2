pub mod config;
pub mod corpus;
pub mod evalmod;
pub mod fuzzing;
pub mod geometry;
pub mod goalgen;
pub mod grounding;
pub mod instructions;
pub mod nn;
pub mod oracle;
pub mod semantics;
