use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("map has no inverse")]
    MissingInverse,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("dyadic level {0} exceeds 40")]
    LevelOverflow(u32),
    #[error("sets intersect (distance 0)")]
    SetsIntersect,
    #[error("bad radii: inner {inner} must be below outer {outer}")]
    BadRadii { inner: f64, outer: f64 },
    #[error("no domination: per-step gap {gap:.4} below threshold {threshold} at point {index}")]
    NoDomination { gap: f64, threshold: f64, index: usize },
    #[error("orbit escaped the working region: {0}")]
    OrbitEscape(String),
    #[error("empty result: {0}")]
    EmptyResult(String),
    #[error("too few points: {0}")]
    TooFewPoints(String),
    #[error("splitting missing: {0}")]
    SplittingMissing(String),
    #[error("chart failure near point {index}: {reason}")]
    ChartFailure { index: usize, reason: String },
    #[error("Whitney quotient {quotient:.3e} exceeds tolerance {tol:.3e}")]
    ResidualTooLarge { quotient: f64, tol: f64 },
    #[error("graph obstruction: {0}")]
    GraphObstruction(String),
    #[error("tubular properties unachievable: {0}")]
    PropertiesUnachievable(String),
    #[error("no valid epsilon for m = {m:.3e}: {reason}")]
    NoValidEpsilon { m: f64, reason: String },
    #[error("Newton divergence at node {node}: {reason}")]
    NewtonDivergence { node: usize, reason: String },
    #[error("Lipschitz violation: slope {slope:.4e} exceeds beta {beta:.4e} at node {node}")]
    LipschitzViolation { slope: f64, beta: f64, node: usize },
    #[error("no contraction: ratio {ratio:.4} after {iterations} iterations")]
    NoContraction { ratio: f64, iterations: usize },
    #[error("projection failure: {0}")]
    ProjectionFailure(String),
    #[error("intersection degenerate: surfaces meet at {angle:.3} degrees")]
    IntersectionDegenerate { angle: f64 },
    #[error("dimension unsupported: {0}")]
    DimensionUnsupported(String),
    #[error("bunching failure: measured rate {rate:.4}")]
    BunchingFailure { rate: f64 },
    #[error("strong connection found: {0}")]
    ConnectionFound(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Short machine-readable name used in reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MissingInverse => "MissingInverse",
            Error::NonFinite(_) => "NonFinite",
            Error::NotFound(_) => "NotFound",
            Error::LevelOverflow(_) => "LevelOverflow",
            Error::SetsIntersect => "SetsIntersect",
            Error::BadRadii { .. } => "BadRadii",
            Error::NoDomination { .. } => "NoDomination",
            Error::OrbitEscape(_) => "OrbitEscape",
            Error::EmptyResult(_) => "EmptyResult",
            Error::TooFewPoints(_) => "TooFewPoints",
            Error::SplittingMissing(_) => "SplittingMissing",
            Error::ChartFailure { .. } => "ChartFailure",
            Error::ResidualTooLarge { .. } => "ResidualTooLarge",
            Error::GraphObstruction(_) => "GraphObstruction",
            Error::PropertiesUnachievable(_) => "PropertiesUnachievable",
            Error::NoValidEpsilon { .. } => "NoValidEpsilon",
            Error::NewtonDivergence { .. } => "NewtonDivergence",
            Error::LipschitzViolation { .. } => "LipschitzViolation",
            Error::NoContraction { .. } => "NoContraction",
            Error::ProjectionFailure(_) => "ProjectionFailure",
            Error::IntersectionDegenerate { .. } => "IntersectionDegenerate",
            Error::DimensionUnsupported(_) => "DimensionUnsupported",
            Error::BunchingFailure { .. } => "BunchingFailure",
            Error::ConnectionFound(_) => "ConnectionFound",
            Error::Config(_) => "Config",
            Error::Io(_) => "Io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
