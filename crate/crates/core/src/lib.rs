//! Deterministic orchestration of Language Server Protocol servers.

pub mod bundle;
pub mod cli;
pub mod edits;
pub mod error;
pub mod facts;
pub mod jcs;
pub mod mockls;
pub mod orchestrator;
pub mod par;
pub mod pyparse;
pub mod relocate;
pub mod reward;
pub mod schema;
pub mod selector;
pub mod text;
pub mod trace;
pub mod winnow;
pub mod workspace;

pub use error::{ErrorCode, LanserError, Result};
