//! Interactive assembly sessions for partforge models, served as JSON over
//! HTTP.

pub mod http;
pub mod session;
pub mod wire;

pub use http::{router, AppState};
pub use session::{Catalog, CreateSession, Session, SessionError, SessionSettings, SessionState};
