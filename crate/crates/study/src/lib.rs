//! Trial service for the human baseline.
//!
//! A session walks a participant through up to 50 trials. Each trial shows
//! both agents side by side, one step at a time; at 11 evenly spaced
//! checkpoints the participant must submit a 0 to 100 slider rating (0 means
//! "definitely agent A") before advancing. The first trials are habituation
//! examples and are left out of the export.
//!
//! Every state change is appended to a JSON-lines log that is replayed on
//! start-up, so a restarted server resumes all sessions.

pub mod server;
pub mod session;
pub mod suite;

pub use server::{router, AppState, CreateSession, SessionInfo, SubmitResponse};
pub use session::{Ack, Export, ExportRecord, Session, StepPayload, Store};
pub use suite::{StudyTrial, Suite};

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("rejected: {0}")]
    Conflict(String),
    #[error("invalid: {0}")]
    Invalid(String),
    #[error("suite: {0}")]
    Suite(String),
    #[error("store: {0}")]
    Store(String),
    #[error(transparent)]
    Core(#[from] whodunit_core::Error),
}

/// Serve `router` on `addr` until ctrl-c.
pub async fn serve(state: server::Shared, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
