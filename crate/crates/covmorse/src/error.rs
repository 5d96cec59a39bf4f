use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("resolution {0} is too coarse (need at least 4 points per axis)")]
    ResolutionTooCoarse(usize),
    #[error("group element {element} fixes site {site}")]
    NonFreeAction { element: usize, site: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("total flux {flux_over_2pi} (in units of 2π) in plane {plane} is not an integer")]
    NonIntegralFlux { plane: usize, flux_over_2pi: f64 },
    #[error("curvature matrix at site {site} is not Hermitian (defect {defect:e})")]
    NotHermitian { site: usize, defect: f64 },
    #[error("unsupported curvature field: {0}")]
    UnsupportedField(String),
    #[error("degenerate curvature point")]
    DegeneratePoint,
    #[error("invalid density parameters: {0}")]
    InvalidDensityParams(String),
    #[error("truncation P = {truncation} omits a level at {omitted_level} ≤ λ = {lambda}")]
    TruncationInsufficient {
        truncation: usize,
        omitted_level: f64,
        lambda: f64,
    },
    #[error("link data inconsistent with model: {0}")]
    InconsistentLinks(String),
    #[error("potential at site {site} is not Hermitian")]
    NonHermitianPotential { site: usize },
    #[error("cutoff width {s} is below twice the mesh size {h}")]
    WidthTooSmall { s: f64, h: f64 },
    #[error("factorization broke down near λ = {lambda} after {retries} retries")]
    FactorizationBreakdown { lambda: f64, retries: usize },
    #[error("eigensolver did not converge: {0}")]
    NoConvergence(String),
    #[error("λ = {lambda} lies within {margin:e} of a density jump at {level}")]
    LambdaOnJump {
        lambda: f64,
        level: f64,
        margin: f64,
    },
    #[error("not a projection: {0}")]
    NotAProjection(String),
    #[error("uncertified Bloch fibres carry {weight:.4} of the quadrature weight at λ = {lambda}")]
    LambdaOnSpectrumEdge { lambda: f64, weight: f64 },
    #[error("quadratic form bound violated: h(f,f) = {value} > λ (f,f) = {bound}")]
    FormBoundViolated {
        value: f64,
        bound: f64,
        witness: Vec<(f64, f64)>,
    },
    #[error("perturbation check failed: {0}")]
    PerturbationBelowMu(String),
    #[error("not a complex: {0}")]
    NotAComplex(String),
    #[error("series needs at least two k values")]
    InsufficientSeries,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error("at k={k}, q={q}, λ={lambda:?}: {source}")]
    At {
        k: u32,
        q: usize,
        lambda: Option<f64>,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn at(self, k: u32, q: usize, lambda: Option<f64>) -> Error {
        Error::At {
            k,
            q,
            lambda,
            source: Box::new(self),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
