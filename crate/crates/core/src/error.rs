use thiserror::Error;

use crate::sim::Diagnostic;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or invalid architecture document. `path` is the dotted
    /// field path (e.g. `mesh.x`).
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("coordinate ({x},{y}) is outside the {mesh_x}x{mesh_y} mesh")]
    OutOfMesh { x: u32, y: u32, mesh_x: u32, mesh_y: u32 },

    #[error("collective does not fit in the mesh: {0}")]
    CollectiveSpan(String),

    #[error("hardware collectives requested but `noc.hw_collectives` is false")]
    HwCollectivesUnavailable,

    #[error("invalid task graph: {}", format_diagnostics(.0))]
    InvalidGraph(Vec<Diagnostic>),

    #[error("task {task} references absent resource: {resource}")]
    AbsentResource { task: u32, resource: String },

    #[error("simulation deadlocked; waiting chain: {}", format_chain(.witness))]
    Deadlock { witness: Vec<u32> },

    #[error("infeasible configuration ({constraint}): {detail}")]
    Infeasible { constraint: &'static str, detail: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no points")]
    EmptySweep,

    /// A functional-replay consistency check failed.
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { path: path.into(), message: message.into() }
    }
}

fn format_diagnostics(d: &[Diagnostic]) -> String {
    d.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; ")
}

fn format_chain(ids: &[u32]) -> String {
    ids.iter().map(|i| format!("#{i}")).collect::<Vec<_>>().join(" <- ")
}
