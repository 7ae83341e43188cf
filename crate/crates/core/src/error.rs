use alloc::string::String;

/// Invalid configuration values, reported before a run starts.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("{0} is out of range")]
    OutOfRange(&'static str),
    #[error("packet of {length} B violates 0 < length <= MTU ({mtu} B)")]
    PacketLength { length: u32, mtu: u32 },
    #[error("unknown subscriber {0}")]
    UnknownSubscriber(u32),
    #[error("{0}")]
    Invalid(String),
}

/// A run-time invariant failed during simulation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invariant violated at t={at}s: {what}")]
    Invariant { at: f64, what: String },
}
