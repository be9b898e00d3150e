//! Core of the hardware-presence gateway: WebAuthn wire codecs, the
//! attestation verification engine, the MDS trust store, encrypted
//! presence tokens and a software authenticator used as a test oracle.

pub mod codec;
pub mod engine;
pub mod mds;
pub mod sig;
pub mod soft;
pub mod time;
pub mod token;

pub use time::UnixMillis;
