//! Session service, HTTP API and batch commands around `splatseg-core`.

pub mod api;
pub mod backend;
pub mod bench;
pub mod cli;
pub mod evaluate;
pub mod export;
pub mod params;
pub mod session;
pub mod sweep;

pub use backend::BackendSpec;
pub use params::SessionParams;
pub use session::{Session, SessionError, SessionManager, Target};
