use thiserror::Error;

/// Errors surfaced by the library. Numerical diagnostics that are expected
/// to fail sometimes (lemma checks, statistical verdicts) are reported as
/// data, not as errors; `Error` is reserved for contract violations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input to {0}")]
    NonFinite(&'static str),

    #[error("matrix [[{a},{b}],[{c},{d}]] must have determinant 1 and trace >= 3")]
    NotHyperbolic { a: i64, b: i64, c: i64, d: i64 },

    #[error("matrix power |{k}| exceeds the configured maximum {max}")]
    PowerTooLarge { k: i64, max: u64 },

    #[error("singular matrix in a cone-image test")]
    SingularMatrix,

    #[error("zero vector passed to a direction test")]
    ZeroVector,

    #[error(
        "center plane is not invariant: shear {index} targets fiber coordinate {target} \
         with base frequencies ({kx},{ky}); use the full 4x4 derivative"
    )]
    CenterNotInvariant {
        index: usize,
        target: usize,
        kx: i64,
        ky: i64,
    },

    #[error("frame renormalization degenerated to a zero vector after {steps} steps")]
    DegenerateFrame { steps: usize },

    #[error("unstable fiber component underflowed at N={n}; bound only verifiable for N <= {cap}")]
    AlphaUnderflow { n: u32, cap: u32 },

    #[error("sequence entry {value} at index {index} violates the precondition value > {alpha1}")]
    PlissPrecondition {
        index: usize,
        value: f64,
        alpha1: f64,
    },

    #[error("exhaustive subdivision needs ~{needed:.3e} pieces, over the cap {cap}; use sampled mode")]
    PieceCapExceeded { needed: f64, cap: u64 },

    #[error("quadrature did not converge after {refinements} refinements (last relative delta {delta:.3e})")]
    QuadratureDiverged { refinements: u32, delta: f64 },

    #[error("derivative entries are not finite at N={n} (fiber block overflows f64)")]
    DerivativeOverflow { n: u32 },

    #[error("shear target index {0} must be in 0..=3")]
    ShearTarget(usize),

    #[error("shear frequency at its own target must be zero (target {target}, freq {freq})")]
    ShearFrequency { target: usize, freq: i64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
