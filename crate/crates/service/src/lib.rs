//! Live mode: telemetry in over `/ingest`, assessment out over `/feedback`.

pub mod feedback;
pub mod server;
pub mod session;
pub mod wire;

pub use feedback::{Broadcaster, FeedbackMessage, SessionSnapshot, Warning};
pub use server::{router, serve, AppState, ServiceConfig};
pub use session::{IngestError, LiveSession};
