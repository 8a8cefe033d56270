//! Scenario parsing, report assembly, and the command runners behind the
//! `conhist` binary. Split out as a library so integration tests can drive
//! the pieces directly.

pub mod commands;
pub mod report;
pub mod scenario;
