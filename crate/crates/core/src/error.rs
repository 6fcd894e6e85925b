//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("unknown coefficient family `{0}`")]
    UnknownFamily(String),

    #[error("bad parameter: {0}")]
    BadParam(String),

    #[error(
        "z-window too small: boundary density {boundary:.3e} exceeds 1e-8 of the peak {peak:.3e}"
    )]
    WindowTooSmall { boundary: f64, peak: f64 },

    #[error("fast component unstable: |xi| = {xi:.3e} exceeded {bound:.3e} at t = {t:.6}")]
    Unstable { t: f64, xi: f64, bound: f64 },

    #[error(
        "degenerate averaged diffusion along the target (B^2_nu = {b2:.3e} < {floor:.1e} with \
         nonzero drift mismatch); regularize with beta > 0"
    )]
    DegenerateDiffusion { b2: f64, floor: f64 },

    #[error("bandwidth {0} too small: smoothed density reached zero on the grid")]
    BandwidthTooSmall(f64),

    #[error("constraint infeasible: y = {y} outside the achievable range [{lo}, {hi}]")]
    Infeasible { y: f64, lo: f64, hi: f64 },

    #[error("slow diffusion coefficient is not identically zero; contraction requires B = 0")]
    NotDegenerate,

    #[error("zero-hit estimate at eps = {0}; slope fit aborted")]
    ZeroHits(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
