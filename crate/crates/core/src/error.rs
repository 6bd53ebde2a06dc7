use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter {value} lies outside the domain [0, 1]")]
    Domain { value: f64 },

    #[error("invalid knot vector: {0}")]
    KnotVector(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("knot refinement error: {0}")]
    Refinement(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("parametrization error: {0}")]
    Parametrization(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("feasibility error: {0}")]
    Feasibility(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Prefixes the message of string-carrying variants with `ctx`.
    pub(crate) fn context(self, ctx: impl std::fmt::Display) -> Self {
        let wrap = |m: String| format!("{ctx}: {m}");
        match self {
            Error::KnotVector(m) => Error::KnotVector(wrap(m)),
            Error::Size(m) => Error::Size(wrap(m)),
            Error::Refinement(m) => Error::Refinement(wrap(m)),
            Error::Numerical(m) => Error::Numerical(wrap(m)),
            Error::Feasibility(m) => Error::Feasibility(wrap(m)),
            other => other,
        }
    }

    /// The innermost error, looking through stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors caused by bad or unreadable inputs and configuration
    /// rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self.root(),
            Error::Input(_)
                | Error::Ingestion(_)
                | Error::Config(_)
                | Error::Geometry(_)
                | Error::Domain { .. }
                | Error::Json(_)
                | Error::Io(_)
        )
    }
}
