//! HTTP services for the sign-on system: identity provider, relying party and
//! retrieval authority, plus a blocking client and an in-process server runner.

pub mod api;
pub mod authority;
pub mod client;
pub mod config;
pub mod flows;
pub mod http;
pub mod idp;
pub mod local;
pub mod rp;
pub mod server;
pub mod store;

pub use client::{Client, ClientError};
pub use server::{spawn, ServerHandle};
