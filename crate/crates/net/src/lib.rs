//! Network side of the two-path downloader: a range-request client with
//! persistent connections and per-path source binding, server failover
//! within a network, a live session runner, and a small origin server for
//! loopback testing.

pub mod failover;
pub mod http;
pub mod live;
pub mod origin;
pub mod transport;

pub use failover::{Exhausted, ServerPool};
pub use live::{run_live, LiveConfig, LiveError, LiveOutcome};
pub use origin::{Origin, OriginConfig};
pub use transport::{FetchResult, FetchTiming, PathBinding, PathClient, SourceEndpoint, TransportError};
