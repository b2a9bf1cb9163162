use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NONCONVERGENCE: i32 = 2;
pub const EXIT_CRITICALITY: i32 = 3;
pub const EXIT_VERIFICATION: i32 = 4;
pub const EXIT_CERTIFICATE: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: line {line}, column {column}: {message}")]
    Config {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] thermopt_core::Error),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("optimizer did not converge: {0}")]
    OptimizerStalled(String),

    #[error("convergence study stopped at level {level}: {message}")]
    Study {
        level: usize,
        message: String,
        criticality: bool,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("could not serialize the report: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use thermopt_core::Error as E;
        match self {
            Self::Config { .. } | Self::Usage(_) | Self::Io { .. } | Self::Json(_) => EXIT_CONFIG,
            Self::Verification(_) => EXIT_VERIFICATION,
            Self::OptimizerStalled(_) => EXIT_NONCONVERGENCE,
            Self::Study { criticality: true, .. } => EXIT_CRITICALITY,
            Self::Study { .. } => EXIT_NONCONVERGENCE,
            Self::Core(e) => match e {
                E::Config(_) | E::InvalidMesh(_) | E::MeshFormat { .. } | E::Domain(_) | E::Assembly(_) | E::Io(_) => {
                    EXIT_CONFIG
                }
                E::NonConvergence { .. } | E::LinearSolver { .. } | E::Adjoint(_) | E::Estimation(_) => {
                    EXIT_NONCONVERGENCE
                }
                E::Criticality { .. } => EXIT_CRITICALITY,
                E::CertificateInfeasible(_) => EXIT_CERTIFICATE,
            },
        }
    }

    /// Short machine-readable name for the report.
    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            EXIT_CONFIG => "configuration",
            EXIT_NONCONVERGENCE => "nonconvergence",
            EXIT_CRITICALITY => "criticality",
            EXIT_VERIFICATION => "verification",
            EXIT_CERTIFICATE => "certificate_infeasible",
            _ => "other",
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
