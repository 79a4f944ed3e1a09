use thiserror::Error;

/// Errors raised anywhere in the analysis pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NonSymmetric(f64),
    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("matrix is not positive definite: {0}")]
    NotPd(String),
    #[error("empty list of ellipsoids")]
    EmptyList,
    #[error("both summands are degenerate (zero shape)")]
    BothDegenerate,
    #[error("pair (F, C) is not detectable")]
    NotDetectable,
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("open-loop matrix is unstable: rho[F] = {0} >= 1")]
    UnstableF(f64),
    #[error("closed loop is unstable: rho[F + GK] = {0} >= 1")]
    UnstableClosedLoop(f64),
    #[error("estimator is unstable: rho[F - LC] = {0} >= 1")]
    UnstableFilter(f64),
    #[error("argument out of domain: {0}")]
    Domain(String),
    #[error("invalid attack specification: {0}")]
    InvalidSpec(String),
    #[error("LMI infeasible at a = {0}")]
    Infeasible(f64),
    #[error("LMI infeasible for every a on the search grid")]
    AllInfeasible,
    #[error("LMI objective unbounded: {0}")]
    Unbounded(String),
    #[error("geometric sum did not converge within {0} terms")]
    MaxTermsExceeded(usize),
    #[error("point cloud is degenerate: {0}")]
    DegenerateCloud(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("scenario error at {path}: {message}")]
    Schema { path: String, message: String },
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input shape or parameters.
    Input,
    /// A numerical routine failed (no convergence, infeasible program).
    Numeric,
    /// A model invariant is violated (unstable loop, undetectable pair).
    Invariant,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NoConvergence(_)
            | Error::Infeasible(_)
            | Error::AllInfeasible
            | Error::Unbounded(_)
            | Error::MaxTermsExceeded(_)
            | Error::DegenerateCloud(_) => ErrorClass::Numeric,
            Error::UnstableF(_)
            | Error::UnstableClosedLoop(_)
            | Error::UnstableFilter(_)
            | Error::NotDetectable
            | Error::NonSymmetric(_)
            | Error::NotPsd(_)
            | Error::NotPd(_) => ErrorClass::Invariant,
            _ => ErrorClass::Input,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
