//! HTTP service for human observers, plus the pieces shared with the
//! `bayesbench` binary.

pub mod server;
