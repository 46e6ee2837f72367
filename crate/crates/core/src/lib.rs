//! Data-oblivious vector quantization for 3D reconstruction parameters.
//!
//! Vectors are split into a norm and a unit direction. The direction is rotated by a
//! seeded Haar-random orthogonal matrix, which makes every coordinate follow the
//! hypersphere coordinate law (a symmetric Beta density on `[-1, 1]`). Each coordinate
//! is then scalar-quantized with the Lloyd-Max codebook for that density, which depends
//! only on the dimension and the bit width. Nothing is learned from the data.
//!
//! Modules:
//! - [`codebook`]: the coordinate density and its Lloyd-Max solver.
//! - [`rotation`]: seeded Haar rotations.
//! - [`quantizer`]: norm-separated quantization, bit packing and entry grouping.
//! - [`gsplat`]: 3D Gaussian Splatting PLY I/O, pruning and the `TQ3D` container.
//! - [`tensors`]: matrix files, row-wise KV compression and an attention error harness.
//! - [`eval`]: empirical distortion measurements against the theoretical bounds.

pub mod codebook;
pub mod error;
pub mod eval;
pub mod gsplat;
pub mod matrix;
pub mod par;
pub mod quantizer;
pub mod rotation;
pub mod tensors;

mod bytes;

pub use codebook::{BetaCodebook, SolverOptions};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use quantizer::{QuantizedVector, Quantizer};
pub use rotation::Rotation;

/// Smallest supported bit width.
pub const MIN_BITS: u8 = 1;
/// Largest supported bit width.
pub const MAX_BITS: u8 = 8;

pub(crate) fn check_bits(bits: u8) -> Result<()> {
    if !(MIN_BITS..=MAX_BITS).contains(&bits) {
        return Err(Error::Range {
            what: "bits",
            value: bits.to_string(),
            allowed: "1..=8",
        });
    }
    Ok(())
}
