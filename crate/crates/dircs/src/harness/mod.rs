//! Server/node communication layer: message schema and wire format,
//! the deterministic in-memory transport, and the loopback TCP transport
//! with exact scalar accounting.

pub mod socket;
pub mod transport;
pub mod wire;

pub use socket::{connect_worker, worker_loop, SocketTransport, WorkerParams, DEFAULT_TIMEOUT};
pub use transport::{InMemoryTransport, RoundTransport, TransportCounters};
pub use wire::{decode, encode, read_frame, Message, MsgKind};
