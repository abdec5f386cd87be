//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("lattice mismatch: {0}")]
    LatticeMismatch(String),

    #[error("invalid lattice window [{n_min}, {n_max}]: {reason}")]
    InvalidLattice {
        n_min: i64,
        n_max: i64,
        reason: String,
    },

    #[error("field is identically zero")]
    AllZeroField,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Newton iteration diverged after {iterations} iterations (residual {residual:.3e})")]
    NewtonDiverged { iterations: usize, residual: f64 },

    #[error("converged solution changes sign; not a ground state")]
    SignChange,

    #[error("linearized operator is singular along the branch (fold point)")]
    FoldPoint,

    #[error("overflow in Jost recursion at site {site}")]
    JostOverflow { site: i64 },

    #[error("Wronskian magnitude {value:.3e} below singularity threshold")]
    SingularWronskian { value: f64 },

    #[error("spectral parameter {z} lies on the band [0,4]; a side (+/-) is required")]
    OnBand { z: f64 },

    #[error("nonzero-sum potential: band-edge resolvent limit diverges (sum = {sum:.3e})")]
    DivergentLimit { sum: f64 },

    #[error("moment functional is nonnegative ({moment:.3e}); no bound-state prediction")]
    NonnegativeMoment { moment: f64 },

    #[error("indeterminate certificate: {0}; grow the window")]
    Indeterminate(String),

    #[error("eigenvalue not found in predicted interval [{lo:.6}, {hi:.6}]")]
    MissingEigenvalue { lo: f64, hi: f64 },

    #[error("sigma3 normalization impossible: <xi, sigma3 xi> = {value:.3e} <= 0")]
    IndefiniteNormalization { value: f64 },

    #[error("biorthogonality degeneracy: {0}")]
    DegenerateBiorthogonality(String),

    #[error("small divisor: {kappa:.6e} within margin {margin:.3e} of the windowed continuous cluster")]
    SmallDivisor { kappa: f64, margin: f64 },

    #[error("resonant monomial (m={m}, n={n}) must remain in the normal form")]
    ResonantMonomial { m: i64, n: i64 },

    #[error("polynomial interpolation residual {residual:.3e} exceeds tolerance {tol:.3e}")]
    NotPolynomial { residual: f64, tol: f64 },

    #[error("time grid cannot be fitted: {0}")]
    Unfittable(String),

    #[error("boundary reflection contamination: outer-window mass {mass:.3e}")]
    ReflectionContamination { mass: f64 },

    #[error("trajectory left the orbital tube at t = {t}: {norm:.3e}")]
    TubeExit { t: f64, norm: f64 },

    #[error("omega {omega} outside stored branch range [{lo}, {hi}]")]
    BranchRange { omega: f64, lo: f64, hi: f64 },

    #[error("quadrature failed to converge: {0}")]
    QuadratureNonConvergence(String),

    #[error("{0}")]
    Io(String),

    #[error("{0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
