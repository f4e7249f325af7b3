use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("time index {j} outside explicit schedule of length {len}")]
    ScheduleRange { j: i64, len: usize },
    #[error("invalid stage: {0}")]
    InvalidStage(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("covering not reached within horizon {horizon}")]
    CoveringFailed { horizon: usize, image: Vec<(f64, f64)> },
    #[error("density minimum {min:e} at time {j} below singular threshold")]
    SingularDensity { j: i64, min: f64 },
    #[error("non-positive input to Hilbert metric")]
    NonPositive,
    #[error("cone parameter a={a} must exceed V={v}")]
    ConeParameter { a: f64, v: f64 },
    #[error("operator index mismatch: expected time {expected}, got {got}")]
    IndexMismatch { expected: i64, got: i64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("adjacency not mixing: {0}")]
    NotMixing(String),
    #[error("tail of series not decaying after {steps} steps (last norm {last:e})")]
    TailNotDecaying { steps: usize, last: f64 },
    #[error("twist z={z} outside perturbative radius (residual {residual:e})")]
    OutOfRadius { z: String, residual: f64 },
    #[error("branch tracking jump {jump} exceeds pi/2")]
    BranchJump { jump: f64 },
    #[error("magnitude underflow in window generating function")]
    Underflow,
    #[error("variance bounded: sigma_n does not diverge (max {max_var})")]
    SigmaBounded { max_var: f64 },
    #[error("rejection sampling efficiency {0} below 1%")]
    DensityTooPeaked(f64),
    #[error("block variance overshoot: increment {increment} with B={b}")]
    BlockOvershoot { increment: f64, b: f64 },
    #[error("test function rejected: {0}")]
    RejectedTestFunction(String),
    #[error("anchor rule failed for symbol {symbol} at time {j}")]
    AnchorFailure { j: i64, symbol: usize },
    #[error("not enough points for fit ({0})")]
    FitPoints(usize),
    #[error("derivative circle leaves analyticity region (residual {0:e})")]
    CircleTooLarge(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
