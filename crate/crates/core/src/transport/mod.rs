//! Wire protocol, service configuration, TCP services and clients.

pub mod client;
pub mod config;
pub mod envelope;
pub mod keyfiles;
pub mod node;
pub mod server;

pub use client::{AuthReply, RemoteWorker, ServiceClient};
pub use config::{Role, ServiceConfig};
pub use envelope::{Envelope, MessageType};
pub use server::{Handler, MainService, Server, WorkerService};

/// Header names.
pub mod headers {
    pub const STATUS: &str = "status";
    pub const PARAMS_DIGEST: &str = "params-digest";
    pub const USER_ID: &str = "user-id";
    pub const GLOBAL_INDEX: &str = "global-index";
    pub const GROUPS: &str = "groups";
    pub const LENGTHS: &str = "lengths";
    pub const OCCUPANCY: &str = "occupancy";
    pub const OCCUPANCY_LEN: &str = "occupancy-len";
    pub const ROLE: &str = "role";
    pub const REGISTERED: &str = "registered";
    pub const SHARDS: &str = "shards";
}
