//! Library surface of the `esvf` binary: scenario loading and the command
//! implementations, exposed so integration tests can drive them directly.

pub mod commands;
pub mod scenario;
