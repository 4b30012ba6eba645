pub mod crypto;
pub mod handle;
pub mod refmodel;
pub mod registry;
pub mod resolver;
pub mod service;

/// Seconds since the Unix epoch. Every time-dependent operation takes the
/// current time as an explicit argument.
pub type Timestamp = u64;
