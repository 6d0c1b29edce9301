use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid map: {0}")]
    InvalidMap(String),

    #[error("orbit escaped to infinity at step {step}")]
    Escaped { step: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("resource limit exceeded: {requested} grid nodes requested, limit {limit}")]
    ResourceLimit { requested: usize, limit: usize },

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("mollification radius {radius} exceeds a quarter of the box ({limit})")]
    BoundaryContamination { radius: f64, limit: f64 },

    #[error("node {0:?} is within one stencil width of the boundary")]
    BoundaryNode([usize; 4]),

    #[error("sublevel nesting infeasible: {0}; use a smaller mollification radius or a larger box")]
    NestingInfeasible(String),

    #[error("empty measure (raw total {0:e})")]
    EmptyMeasure(f64),

    #[error("clipped fraction {fraction:.4} exceeds ceiling {ceiling}; use a larger mollification radius")]
    ClippedFraction { fraction: f64, ceiling: f64 },

    #[error("escape-dominated evaluation at lag {lag}: {fraction:.3} of the mass escapes; use a smaller lag or extended observables")]
    EscapeDominated { lag: usize, fraction: f64 },

    #[error("observable is unbounded on the region: {0}")]
    Unbounded(String),

    #[error("{0}")]
    NoUsableLags(String),

    #[error("bad cache file: {0}")]
    Format(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
