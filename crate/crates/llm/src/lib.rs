//! Gateway to a chat-completion model.
//!
//! Every call goes through [`Gateway::complete`], which enforces a concurrency cap,
//! retries transient failures and, depending on the backend mode, either talks to
//! the live endpoint, talks to it while appending each exchange to a cassette, or
//! answers purely from a cassette.

pub mod cassette;
mod gateway;
pub mod http;
mod semaphore;

pub use cassette::{prompt_digest, Cassette, Exchange, Usage};
pub use gateway::{BackendConfig, BackendKind, Gateway, GatewayError, RetryPolicy, API_KEY_ENV};
pub use http::{Completion, CompletionRequest, HttpTransport, Transport, TransportError};
