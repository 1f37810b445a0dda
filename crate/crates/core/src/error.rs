use thiserror::Error;

/// Errors raised by the laboratory's components.
#[derive(Debug, Error)]
pub enum Error {
    #[error("step overflow: prefix at step {step} cannot be extended past horizon {horizon}")]
    StepOverflow { step: usize, horizon: usize },

    #[error("token {token} is outside the vocabulary of size {vocab_size}")]
    InvalidToken { token: u32, vocab_size: usize },

    #[error("prompt id {prompt_id} is out of range ({num_prompts} prompts)")]
    InvalidPrompt { prompt_id: usize, num_prompts: usize },

    #[error("prefix already ends with the terminal token")]
    Terminated,

    #[error("trajectory is incomplete ({len} of {horizon} tokens, no terminal token)")]
    IncompleteTrajectory { len: usize, horizon: usize },

    #[error("instance too large: {required} exceeds the enumeration cap of {cap}")]
    TooLarge { required: u128, cap: u128 },

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("base policy does not cover the optimal policy at {0}")]
    NoCoverage(String),

    #[error("no distribution stored for prefix {0}")]
    MissingPrefix(String),

    #[error("value fit requires a non-empty dataset")]
    EmptyDataset,

    #[error("normal equations are singular (rank {rank} of {dim})")]
    SingularSystem { rank: usize, dim: usize },

    #[error("invalid MDP specification: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("chunk length {chunk} does not divide horizon {horizon}")]
    IndivisibleChunk { horizon: usize, chunk: usize },

    #[error("beta schedule outside its domain: {0}")]
    ScheduleDomain(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
