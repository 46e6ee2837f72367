//! Norm-separated vector quantization.
//!
//! A vector `f` is stored as its norm `γ = ‖f‖₂` (f32) followed by the bit-packed
//! nearest-centroid indices of the rotated unit direction `Π f / γ`. Dequantization
//! looks up the centroids, rotates back with `Πᵀ` and rescales by `γ`.
//!
//! A zero vector is stored as norm 0 with all index bits zero and decodes to zeros.

mod bitpack;
mod group;

use std::sync::Arc;

pub use bitpack::{pack_indices, packed_len, pad_bits_clear, unpack_indices};
pub use group::{group_entries, ungroup_entries, GroupedTable, DEFAULT_TARGET_DIM};

use crate::{par, BetaCodebook, Error, Matrix, Result, Rotation};

/// One quantized record.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedVector {
    pub norm: f32,
    pub packed: Vec<u8>,
}

impl QuantizedVector {
    pub fn zero(dim: usize, bits: u8) -> Self {
        Self {
            norm: 0.0,
            packed: vec![0; packed_len(dim, bits)],
        }
    }

    /// Record size on the wire: 4 norm bytes plus the packed indices.
    pub const fn record_len(dim: usize, bits: u8) -> usize {
        4 + packed_len(dim, bits)
    }

    /// Appends the wire record (norm f32 LE, then packed bytes).
    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.norm.to_le_bytes());
        out.extend_from_slice(&self.packed);
    }

    pub fn from_record(record: &[u8]) -> Result<Self> {
        if record.len() < 4 {
            return Err(Error::format("quantized record shorter than its norm"));
        }
        let norm = f32::from_le_bytes([record[0], record[1], record[2], record[3]]);
        if !norm.is_finite() || norm < 0.0 {
            return Err(Error::format(format!("invalid record norm {norm}")));
        }
        Ok(Self {
            norm,
            packed: record[4..].to_vec(),
        })
    }
}

/// A rotation and codebook of matching dimension.
#[derive(Debug, Clone)]
pub struct Quantizer {
    rotation: Arc<Rotation>,
    codebook: BetaCodebook,
}

impl Quantizer {
    pub fn new(rotation: Arc<Rotation>, codebook: BetaCodebook) -> Result<Self> {
        if rotation.dim() != codebook.dim() {
            return Err(Error::shape(
                format!("codebook of dimension {}", rotation.dim()),
                format!("dimension {}", codebook.dim()),
            ));
        }
        Ok(Self { rotation, codebook })
    }

    /// Haar rotation for `seed` plus the solved codebook for `(dim, bits)`.
    pub fn build(dim: usize, bits: u8, seed: u64) -> Result<Self> {
        let codebook = BetaCodebook::solve(dim, bits)?;
        Self::new(Arc::new(Rotation::haar(dim, seed)?), codebook)
    }

    pub fn dim(&self) -> usize {
        self.rotation.dim()
    }

    pub fn bits(&self) -> u8 {
        self.codebook.bits()
    }

    pub fn rotation(&self) -> &Arc<Rotation> {
        &self.rotation
    }

    pub fn codebook(&self) -> &BetaCodebook {
        &self.codebook
    }

    pub fn record_len(&self) -> usize {
        QuantizedVector::record_len(self.dim(), self.bits())
    }

    pub fn quantize(&self, f: &[f32]) -> Result<QuantizedVector> {
        let x: Vec<f64> = f.iter().map(|&v| f64::from(v)).collect();
        self.quantize_f64(&x)
    }

    pub fn quantize_f64(&self, f: &[f64]) -> Result<QuantizedVector> {
        let dim = self.dim();
        if f.len() != dim {
            return Err(Error::shape(format!("vector of length {dim}"), f.len()));
        }
        if let Some(j) = f.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "input vector".into(),
                coordinate: j,
            });
        }
        let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || norm as f32 == 0.0 {
            return Ok(QuantizedVector::zero(dim, self.bits()));
        }
        let unit: Vec<f64> = f.iter().map(|v| v / norm).collect();
        let mut rotated = vec![0.0; dim];
        self.rotation.apply_into(&unit, &mut rotated);
        let indices: Vec<u8> = rotated
            .iter()
            .map(|&y| self.codebook.quantize(y) as u8)
            .collect();
        Ok(QuantizedVector {
            norm: norm as f32,
            packed: pack_indices(&indices, self.bits())?,
        })
    }

    pub fn dequantize(&self, qv: &QuantizedVector) -> Result<Vec<f32>> {
        Ok(self
            .dequantize_f64(qv)?
            .into_iter()
            .map(|v| v as f32)
            .collect())
    }

    pub fn dequantize_f64(&self, qv: &QuantizedVector) -> Result<Vec<f64>> {
        let dim = self.dim();
        let indices = unpack_indices(&qv.packed, dim, self.bits())?;
        if qv.norm == 0.0 {
            return Ok(vec![0.0; dim]);
        }
        let scale = f64::from(qv.norm);
        let centroids: Vec<f64> = indices
            .iter()
            .map(|&i| scale * self.codebook.centroid(usize::from(i)))
            .collect();
        let mut out = vec![0.0; dim];
        self.rotation.apply_inverse_into(&centroids, &mut out);
        Ok(out)
    }

    /// Quantizes every row, in parallel when enabled.
    pub fn quantize_rows(&self, rows: &Matrix) -> Result<Vec<QuantizedVector>> {
        if rows.cols() != self.dim() {
            return Err(Error::shape(format!("{} columns", self.dim()), rows.cols()));
        }
        par::try_map_range(rows.rows(), |r| {
            self.quantize(rows.row(r)).map_err(|e| match e {
                Error::NonFinite { coordinate, .. } => Error::NonFinite {
                    context: format!("row {r}"),
                    coordinate,
                },
                other => other,
            })
        })
    }

    pub fn dequantize_rows(&self, records: &[QuantizedVector]) -> Result<Matrix> {
        let dim = self.dim();
        let mut out = Matrix::zeros(records.len(), dim);
        let results = par::map_range(records.len(), |r| self.dequantize(&records[r]));
        for (r, row) in results.into_iter().enumerate() {
            out.row_mut(r).copy_from_slice(&row?);
        }
        Ok(out)
    }
}

/// Quantizes `f` with an explicit rotation and codebook.
pub fn quantize_vector(rot: &Rotation, cb: &BetaCodebook, f: &[f32]) -> Result<QuantizedVector> {
    Quantizer::new(Arc::new(rot.clone()), cb.clone())?.quantize(f)
}

/// Reconstructs a vector from an explicit rotation and codebook.
pub fn dequantize_vector(
    rot: &Rotation,
    cb: &BetaCodebook,
    qv: &QuantizedVector,
) -> Result<Vec<f32>> {
    Quantizer::new(Arc::new(rot.clone()), cb.clone())?.dequantize(qv)
}
