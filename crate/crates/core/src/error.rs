use thiserror::Error;

/// Errors surfaced by the library. The CLI maps these onto its exit-code
/// taxonomy, so keep the variants coarse and stable.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty or degenerate distribution: {0}")]
    Domain(String),

    #[error("premium schedule infeasible (total slack {slack:.6}); binding agents: {agents:?}")]
    Infeasible { agents: Vec<usize>, slack: f64 },

    #[error("unsupported evaluation mode: {0}")]
    UnsupportedMode(String),

    #[error("unsupported input: {0}")]
    UnsupportedInput(String),

    #[error("enumeration bound exceeded: ~{estimate:.3e} candidates (limit {limit:.1e})")]
    OracleBound { estimate: f64, limit: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
