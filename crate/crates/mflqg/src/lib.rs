//! Std front end for `mflqg-core`: scenario files, parallel ensembles, the
//! verification harness, result files and the command line.

pub mod cli;
pub mod ensemble;
pub mod errata;
pub mod output;
pub mod scenario;
pub mod verify;
