use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("pattern `{pattern}` needs {requirement} (lattice is {n_rows}x{n_cols})")]
    Incommensurate {
        pattern: &'static str,
        requirement: &'static str,
        n_rows: usize,
        n_cols: usize,
    },

    #[error("filling fraction {0} outside [0, 1]")]
    FillingOutOfRange(f64),

    #[error("cannot place {requested} excitons/electrons on {available} free sites")]
    Overfilled { requested: usize, available: usize },

    #[error("sites {0} and {1} coincide")]
    DuplicateSites(usize, usize),

    #[error("zero separation has no off-diagonal Green's tensor value")]
    ZeroSeparation,

    #[error("invalid model parameters: {0}")]
    InvalidParameters(String),

    #[error(
        "{active} active sites exceed the exact-solver limit of {limit} \
         (density matrix too large); use the cumulant solver instead"
    )]
    ExactSizeGuard { active: usize, limit: usize },

    #[error("{active} active sites exceed the cumulant-solver limit of {limit}")]
    CumulantSizeGuard { active: usize, limit: usize },

    #[error("collective decay matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    NonPsdGamma(f64),

    #[error("excitation sector {sector} out of range for {sites} sites")]
    SectorOutOfRange { sector: usize, sites: usize },

    #[error("integrator step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },

    #[error("integrator exceeded {steps} steps at t = {t}")]
    TooManySteps { steps: usize, t: f64 },

    #[error("cumulant closure broke down at t = {t}: <n_{site}> = {value}")]
    ClosureBreakdown { t: f64, site: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("runs are not comparable: {0}")]
    MismatchedRuns(String),

    #[error("inconsistent time grids: {0}")]
    InconsistentGrids(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
