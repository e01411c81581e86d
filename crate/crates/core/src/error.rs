use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("facet {0} is a boundary facet: no patch")]
    NoPatch(usize),
    #[error("degenerate cut on element {0}")]
    DegenerateCut(usize),
    #[error("inconsistent classification on element {0}")]
    InconsistentClassification(usize),
    #[error("isolated cut region: element {0} has no interior element within {1} facet crossings")]
    IsolatedCutRegion(usize, usize),
    #[error("patch rooted at element {root} has {size} elements (bound {bound})")]
    PatchTooLarge { root: usize, size: usize, bound: usize },
    #[error("element {0} is not active")]
    InactiveElement(usize),
    #[error("singular local Gram matrix on element {0}")]
    SingularGram(usize),
    #[error("unstable patch rooted at element {0}")]
    UnstablePatch(usize),
    #[error("unstable post-processing patch rooted at element {0}")]
    UnstablePpPatch(usize),
    #[error("degenerate boundary constraint on element {0}")]
    DegenerateBoundaryConstraint(usize),
    #[error("singular local block on element {0}; retry with a regularization such as eps_reg = 1e-10")]
    SingularLocalBlock(usize),
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("singular pivot at index {0}")]
    SingularPivot(usize),
    #[error("relative residual {residual:.3e} exceeds tolerance {tol:.1e}")]
    Residual { residual: f64, tol: f64 },
    #[error("solve failed for k={k}, level={level}: {source}")]
    Experiment {
        k: usize,
        level: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
