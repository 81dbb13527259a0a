//! Toolchain for ACS Summary File releases: ingest the raw layout,
//! reconstruct tables with adjacent margins of error, write a dictionary and
//! serve a searchable catalog.

pub mod assemble;
pub mod dictionary;
pub mod fixture;
pub mod ingest;
pub mod model;
pub mod stats;
pub mod pipeline;
pub mod catalog;
pub mod cli;
