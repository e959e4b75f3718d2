//! Network front end for lbsn: HTTP API, persistence, map tiles and the
//! command-line client.

pub mod api;
pub mod app;
pub mod client;
pub mod config;
pub mod demo;
pub mod tiles;
pub mod wal;
