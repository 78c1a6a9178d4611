//! Library side of the `hbtrain` command: configuration, CSV output, and
//! the self-check suite.

pub mod config;
pub mod output;
pub mod selfcheck;
