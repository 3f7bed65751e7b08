//! Optimistic verifiable inference: receipts, data availability, threshold
//! key management, the challenge protocol and its economics.

pub mod da;
pub mod econ;
pub mod encoding;
pub mod hash;
pub mod privacy;
pub mod protocol;
pub mod ratio;
pub mod receipts;
pub mod registry;
pub mod signing;

pub use hash::{hash_commit, Hash32};
pub use ratio::Ratio;
