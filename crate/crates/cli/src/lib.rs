//! Command-line pipeline and HTTP review API over a taxoscope run store.

pub mod api;
pub mod commands;
pub mod workspace;
