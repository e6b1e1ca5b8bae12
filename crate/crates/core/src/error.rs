use thiserror::Error;

/// Problems found while validating or expanding a p.c.f. structure.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum StructureError {
    #[error("alphabet size must be at least 2, got {0}")]
    AlphabetTooSmall(usize),
    #[error("structure needs at least 2 boundary vertices, got {0}")]
    BoundaryTooSmall(usize),
    #[error("letter {letter} out of range for alphabet of size {size}")]
    LetterOutOfRange { letter: usize, size: usize },
    #[error("unknown boundary label `{0}`")]
    UnknownLabel(String),
    #[error("gluing {0} must relate two distinct letters")]
    SelfGluing(String),
    #[error("malformed rule `{0}`")]
    Malformed(String),
    #[error("boundary vertex `{0}` is not a vertex of any level-1 cell")]
    BoundaryNotFixed(String),
    #[error("cell {cell} has two boundary vertices identified ({a} and {b})")]
    Degenerate { cell: usize, a: String, b: String },
    #[error("boundary vertices `{0}` and `{1}` are identified")]
    BoundaryCollapse(String, String),
    #[error("level-1 cell graph is not connected")]
    Disconnected,
    #[error("geometry mismatch: {0}")]
    Geometry(String),
    #[error("measure weights invalid: {0}")]
    Measure(String),
    #[error("{0}")]
    Config(String),
}

/// Failures of the convex solvers and the fixed-point iteration.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { residual: f64, iterations: usize },
    #[error("inner minimization failed at grid direction {direction}: {source}")]
    Direction {
        direction: usize,
        #[source]
        source: Box<SolveError>,
    },
    #[error("function lives on level {found}, expected level {expected}")]
    LevelMismatch { expected: usize, found: usize },
    #[error("value count {found} does not match |V_n| = {expected}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("vertex {0} appears in both constraint sets")]
    Overlap(usize),
    #[error("vertex id {id} out of range ({count} vertices)")]
    VertexOutOfRange { id: usize, count: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("depth {depth} too shallow for output level {level} (need depth >= level + {margin})")]
    InsufficientDepth {
        depth: usize,
        level: usize,
        margin: usize,
    },
}

/// Import/export failures.
#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Configuration failures.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("config schema: {0}")]
    Schema(String),
    #[error("config `{path}`: {message}")]
    Invalid { path: String, message: String },
}

/// Failures of a pipeline run.
#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}
