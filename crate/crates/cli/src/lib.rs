//! Configuration-driven front end for the `hopfid` library.

pub mod config;
pub mod input;
pub mod presets;
pub mod report;
pub mod run;
