pub mod catops;
pub mod cli;
pub mod depflow;
pub mod derivation;
pub mod dsl;
pub mod exec;
pub mod graph;
pub mod metamodel;
pub mod process;
pub mod weaving;
