use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("invalid interval [{lo}..{hi}]: need 1 <= lo <= hi")]
    InvalidInterval { lo: u64, hi: u64 },

    #[error("interval [{lo}..{hi}] does not fit in [1..{t}]")]
    IntervalOutOfRange { lo: u64, hi: u64, t: u64 },

    #[error("intervals [{a_lo}..{a_hi}] and [{b_lo}..{b_hi}] overlap")]
    OverlappingIntervals {
        a_lo: u64,
        a_hi: u64,
        b_lo: u64,
        b_hi: u64,
    },

    #[error("shift by {shift} moves the system outside [1..{host}]")]
    ShiftOutOfRange { shift: i64, host: u64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("refinement needs k <= t/6, got k={k}, t={t}")]
    RefinePrecondition { k: u64, t: u64 },

    #[error("tractability guard: {0}")]
    Guard(String),

    #[error("set sizes {sizes:?} violate the promise sampler bounds for n={n}")]
    SizeViolation { sizes: Vec<u64>, n: u64 },

    #[error("size mismatch: sets have sizes {sets:?}, intervals have sizes {intervals:?}")]
    SizeMismatch {
        sets: Vec<u64>,
        intervals: Vec<u64>,
    },

    #[error("player {player} exceeded its budget of {budget} bits")]
    Metering { player: usize, budget: u64 },

    #[error("protocol declares {declared} players but the instance has {actual}")]
    PlayerCount { declared: usize, actual: usize },

    #[error("detector {name} used {used} state bits, budget is {budget}")]
    SpaceExceeded { name: String, used: u64, budget: u64 },

    #[error("detector {name} supports {supported} passes, {requested} requested")]
    PassLimit {
        name: String,
        supported: usize,
        requested: usize,
    },
}
