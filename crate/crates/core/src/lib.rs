pub mod content;
pub mod error;
pub mod events;
pub mod gazetteer;
pub mod geomath;
pub mod geostore;
pub mod identity;
pub mod localinfo;
pub mod localization;
pub mod messaging;
pub mod platform;
pub mod service;
pub mod social;

pub use error::{Error, Result};

/// Internal account identifier.
pub type UserId = u64;
