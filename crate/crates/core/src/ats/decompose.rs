//! Splitting a large combination into a basket of smaller ones.
//!
//! Chunks are whole multiples of the smallest leg ratio, so every chunk keeps
//! the legs in integral proportion. Whatever cannot be chunked that way is
//! left as a residual, which must not exceed ε.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decomposition {
    pub chunks: Vec<u64>,
    pub residual: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecomposeError {
    #[error("chunk bound must be at least 1")]
    ZeroBound,
    #[error("combination has no legs")]
    NoLegs,
    #[error("chunk bound {bound} is below the leg granularity {granularity}")]
    BoundBelowGranularity { bound: u64, granularity: u64 },
    #[error("residual {residual} exceeds epsilon {epsilon}")]
    ResidualTooLarge { residual: u64, epsilon: u64 },
}

pub fn decompose_combination(
    qty: u64,
    ratios: &[u64],
    chunk_bound: u64,
    epsilon: u64,
) -> Result<Decomposition, DecomposeError> {
    if chunk_bound == 0 {
        return Err(DecomposeError::ZeroBound);
    }
    let g = ratios
        .iter()
        .copied()
        .min()
        .ok_or(DecomposeError::NoLegs)?
        .max(1);
    let chunk = chunk_bound / g * g;
    if chunk == 0 {
        return Err(DecomposeError::BoundBelowGranularity {
            bound: chunk_bound,
            granularity: g,
        });
    }
    let full = qty / chunk;
    let rem = qty % chunk;
    let last = rem / g * g;
    let residual = rem - last;
    if residual > epsilon {
        return Err(DecomposeError::ResidualTooLarge { residual, epsilon });
    }
    let mut chunks = vec![chunk; full as usize];
    if last > 0 {
        chunks.push(last);
    }
    Ok(Decomposition { chunks, residual })
}
