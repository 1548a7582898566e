use thiserror::Error;

/// Errors raised by the geometric and dynamical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("tangency unresolved at arclength {t:.6e} (distance to level {gap:.3e})")]
    TangencyUnresolved { t: f64, gap: f64 },

    #[error("trajectory left the table by {excess:.3e}")]
    EscapedDomain { excess: f64 },

    #[error("point is not on wall {wall} (residual {residual:.3e})")]
    NotOnWall { wall: usize, residual: f64 },

    #[error("degenerate normal: gradient norm {norm:.3e}")]
    DegenerateNormal { norm: f64 },

    #[error("no sample point fell inside the requested zone")]
    EmptySample,

    #[error("step underflow at t = {t:.6e}, position ({x:.6}, {y:.6}, {z:.6})")]
    StepUnderflow { t: f64, x: f64, y: f64, z: f64 },

    #[error("no branch of the surface over ({theta:.6}, {phi:.6})")]
    NoSuchBranch { theta: f64, phi: f64 },

    #[error("horizon precondition failed: rescaled horizon {scaled_horizon:.4} >= {limit:.4}")]
    HorizonPreconditionFailed { scaled_horizon: f64, limit: f64 },

    #[error("outside chart domain (radicand {radicand:.3e})")]
    OutsideDomain { radicand: f64 },

    #[error("invalid linkage parameters: {}", violated.join(", "))]
    InvalidParams { violated: Vec<String> },

    #[error("assumption failed: {name}")]
    AssumptionFailed { name: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
