//! HTTP service and command-line front end for virtual datasets.

pub mod client;
pub mod config;
pub mod server;
