//! Library half of the `iouattack` binary, kept separate so integration
//! tests can call commands directly.

pub mod artifacts;
pub mod commands;
pub mod manifest;
