use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate level-set gradient at {point:?} (|grad d| = {norm:e})")]
    DegenerateGradient { point: [f64; 3], norm: f64 },

    #[error("projection onto the surface did not converge from {point:?}: |d| = {residual:e} after {iterations} iterations")]
    Projection {
        point: [f64; 3],
        residual: f64,
        iterations: usize,
    },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("invalid mesh: {0}")]
    Mesh(String),

    #[error("degenerate element {element} (area {area:e})")]
    DegenerateElement { element: usize, area: f64 },

    #[error("node velocities have not been computed for this mesh snapshot")]
    MissingVelocity,

    #[error("linear solver failed: {0}")]
    Solver(String),

    #[error("iterative solver did not converge: relative residual {residual:e} after {iterations} iterations")]
    NotConverged { residual: f64, iterations: usize },

    #[error("non-finite values detected at t = {time}: {what}")]
    BlowUp { time: f64, what: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(vec![msg.into()])
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::Io { .. } => 4,
            _ => 3,
        }
    }
}
