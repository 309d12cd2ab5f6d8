use std::fmt;

use thiserror::Error;

/// A single scenario-validation failure with a stable machine-readable code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub code: &'static str,
    pub message: String,
}

impl Violation {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.code, self.message)
    }
}

/// Location of a lattice cell, used to name the offending node in numerical errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeRef {
    pub step: usize,
    pub stock_idx: usize,
    pub y_idx: usize,
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(n={}, stock_idx={}, y_idx={})",
            self.step, self.stock_idx, self.y_idx
        )
    }
}

#[derive(Debug, Error)]
pub enum MfeError {
    #[error("index out of range: {0}")]
    Range(String),
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error(
        "path enumeration capacity exceeded: step {step} > cap {cap}; use the node-based solver"
    )]
    Capacity { step: usize, cap: usize },
    #[error("missing table entry: {0}")]
    MissingEntry(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numerical overflow at node {node}: {detail}")]
    NumericalOverflow { node: NodeRef, detail: String },
    #[error("scenario infeasible at node {node}: {detail}")]
    ScenarioInfeasible { node: NodeRef, detail: String },
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("internal consistency failure at node {node}: {detail}")]
    InternalConsistency { node: NodeRef, detail: String },
    #[error("scenario validation failed:\n{}", format_violations(.0))]
    Validation(Vec<Violation>),
    #[error("conditioning error: {0}")]
    Conditioning(String),
    #[error("diagnostics not retained: {0}")]
    DiagnosticsNotRetained(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("optimum at bracket edge: {0}")]
    Bracket(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

impl MfeError {
    /// True for failures caused by the inputs rather than by the numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            MfeError::Range(_)
                | MfeError::InvalidLattice(_)
                | MfeError::Capacity { .. }
                | MfeError::MissingEntry(_)
                | MfeError::Domain(_)
                | MfeError::Validation(_)
                | MfeError::Conditioning(_)
                | MfeError::DiagnosticsNotRetained(_)
                | MfeError::Input(_)
                | MfeError::Parse(_)
        )
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| format!("  {x}"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub type Result<T> = std::result::Result<T, MfeError>;
