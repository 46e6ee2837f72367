//! Matrix files, row-wise KV compression and an exact-vs-quantized attention harness.
//!
//! `TQTN` tensor file:
//! ```text
//! "TQTN" | version u16 = 1 | ndim u16 (2 or 3) | dims u32 x ndim | f32 LE row-major data
//! ```
//!
//! `TQKV` compressed tensor:
//! ```text
//! "TQKV" | version u16 = 1 | rows u64 | d u32 | bits u8 | 0u8 x3 | seed u64
//! TQCB codebook block
//! rows x (norm f32 + ceil(d*b/8) packed bytes)
//! ```

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bytes::{put_f32s, read_f32s, Reader};
use crate::quantizer::QuantizedVector;
use crate::{check_bits, par, BetaCodebook, Error, Matrix, Quantizer, Result, Rotation};

const TENSOR_MAGIC: &[u8; 4] = b"TQTN";
const KV_MAGIC: &[u8; 4] = b"TQKV";
const VERSION: u16 = 1;
const KV_FIXED_HEADER_LEN: usize = 30;

/// Head size used for the default attention scale `1/sqrt(d_h)`.
pub const DEFAULT_HEAD_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    dims: Vec<u32>,
    data: Vec<f32>,
}

impl TensorFile {
    pub fn new(dims: Vec<u32>, data: Vec<f32>) -> Result<Self> {
        if !(2..=3).contains(&dims.len()) {
            return Err(Error::shape(
                "2 or 3 dimensions",
                format!("{} dimensions", dims.len()),
            ));
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .ok_or_else(|| Error::format("tensor dims overflow"))?;
        if count != data.len() {
            return Err(Error::shape(
                format!("{count} values for dims {dims:?}"),
                data.len(),
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        Self {
            dims: vec![m.rows() as u32, m.cols() as u32],
            data: m.as_slice().to_vec(),
        }
    }

    pub fn dims(&self) -> &[u32] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Flattens all leading dimensions into rows; the last dimension is the row width.
    pub fn to_matrix(&self) -> Matrix {
        let cols = *self.dims.last().expect("ndim >= 2") as usize;
        let rows = self.dims[..self.dims.len() - 1]
            .iter()
            .map(|&d| d as usize)
            .product();
        Matrix::new(rows, cols, self.data.clone()).expect("validated on construction")
    }
}

pub fn write_tensor(t: &TensorFile) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.dims.len() + 4 * t.data.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.dims.len() as u16).to_le_bytes());
    for d in &t.dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    put_f32s(&mut out, &t.data);
    out
}

pub fn read_tensor(bytes: &[u8]) -> Result<TensorFile> {
    let mut r = Reader::new(bytes, "TQTN tensor");
    r.magic(TENSOR_MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported TQTN version {version}")));
    }
    let ndim = r.u16()? as usize;
    if !(2..=3).contains(&ndim) {
        return Err(Error::format(format!("tensor ndim {ndim} is not 2 or 3")));
    }
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(r.u32()?);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| Error::format("tensor dims overflow"))?;
    if r.remaining() != count {
        return Err(Error::format(format!(
            "dims {dims:?} need {count} data bytes, found {}",
            r.remaining()
        )));
    }
    let data = read_f32s(r.take(count)?);
    TensorFile::new(dims, data)
}

/// Row-quantized matrix with its codebook.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedTensor {
    rows: usize,
    seed: u64,
    codebook: BetaCodebook,
    records: Vec<u8>,
}

impl CompressedTensor {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.codebook.dim()
    }

    pub fn bits(&self) -> u8 {
        self.codebook.bits()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn codebook(&self) -> &BetaCodebook {
        &self.codebook
    }

    pub fn record_len(&self) -> usize {
        QuantizedVector::record_len(self.dim(), self.bits())
    }

    pub fn record(&self, row: usize) -> Result<QuantizedVector> {
        let len = self.record_len();
        QuantizedVector::from_record(&self.records[row * len..(row + 1) * len])
    }

    pub fn header_len(&self) -> usize {
        KV_FIXED_HEADER_LEN + self.codebook.encoded_len()
    }

    /// `rows · (4 + ceil(d·b/8))`.
    pub fn payload_len(&self) -> usize {
        self.records.len()
    }

    pub fn total_len(&self) -> usize {
        self.header_len() + self.payload_len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.total_len());
        out.extend_from_slice(KV_MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        out.push(self.bits());
        out.extend_from_slice(&[0u8; 3]);
        out.extend_from_slice(&self.seed.to_le_bytes());
        self.codebook.write_to(&mut out);
        out.extend_from_slice(&self.records);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "TQKV tensor");
        r.magic(KV_MAGIC)?;
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::format(format!("unsupported TQKV version {version}")));
        }
        let rows = usize::try_from(r.u64()?).map_err(|_| Error::format("row count overflows"))?;
        let dim = r.u32()? as usize;
        let bits = r.u8()?;
        r.zeros(3)?;
        let seed = r.u64()?;
        check_bits(bits).map_err(|_| Error::format(format!("bit width {bits} not in 1..=8")))?;
        let codebook = BetaCodebook::read_from(&mut r)?;
        if codebook.dim() != dim || codebook.bits() != bits {
            return Err(Error::format(format!(
                "codebook is ({}, {} bits) but header says ({dim}, {bits} bits)",
                codebook.dim(),
                codebook.bits()
            )));
        }
        let len = rows
            .checked_mul(QuantizedVector::record_len(dim, bits))
            .ok_or_else(|| Error::format("row count overflows"))?;
        let records = r.take(len)?.to_vec();
        r.finish()?;
        Ok(Self {
            rows,
            seed,
            codebook,
            records,
        })
    }

    /// Quantizer with the stored codebook and the rotation regenerated from the seed.
    pub fn quantizer(&self) -> Result<Quantizer> {
        let rotation = Rotation::haar(self.dim(), self.seed)?;
        Quantizer::new(Arc::new(rotation), self.codebook.clone())
    }
}

pub fn compress_tensor(t: &Matrix, bits: u8, seed: u64) -> Result<CompressedTensor> {
    check_bits(bits)?;
    let codebook = BetaCodebook::solve(t.cols(), bits)?.rounded_to_f32()?;
    let quantizer = Quantizer::new(Arc::new(Rotation::haar(t.cols(), seed)?), codebook)?;
    compress_with(t, &quantizer)
}

/// Compresses with a caller-supplied quantizer.
pub fn compress_with(t: &Matrix, quantizer: &Quantizer) -> Result<CompressedTensor> {
    let mut records = Vec::with_capacity(t.rows() * quantizer.record_len());
    for qv in quantizer.quantize_rows(t)? {
        qv.write_to(&mut records);
    }
    Ok(CompressedTensor {
        rows: t.rows(),
        seed: quantizer.rotation().seed(),
        codebook: quantizer.codebook().clone(),
        records,
    })
}

pub fn decompress_tensor(ct: &CompressedTensor) -> Result<Matrix> {
    decompress_with(ct, &ct.quantizer()?)
}

pub fn decompress_with(ct: &CompressedTensor, quantizer: &Quantizer) -> Result<Matrix> {
    if quantizer.dim() != ct.dim() || quantizer.bits() != ct.bits() {
        return Err(Error::shape(
            format!("quantizer for ({}, {} bits)", ct.dim(), ct.bits()),
            format!("({}, {} bits)", quantizer.dim(), quantizer.bits()),
        ));
    }
    let rows = par::try_map_range(ct.rows(), |r| quantizer.dequantize(&ct.record(r)?))?;
    let mut out = Matrix::zeros(ct.rows(), ct.dim());
    for (r, row) in rows.into_iter().enumerate() {
        out.row_mut(r).copy_from_slice(&row);
    }
    Ok(out)
}

/// KV compression ratio `32d / (b·d + 32)`: f32 rows against packed indices plus an f32 norm.
pub fn kv_ratio(dim: usize, bits: u8) -> f64 {
    let d = dim as f64;
    32.0 * d / (f64::from(bits) * d + 32.0)
}

pub fn default_scale() -> f64 {
    1.0 / (DEFAULT_HEAD_DIM as f64).sqrt()
}

fn to_f64(m: &Matrix) -> Vec<f64> {
    m.as_slice().iter().map(|&v| f64::from(v)).collect()
}

fn check_attention_shapes(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<()> {
    if q.cols() != k.cols() {
        return Err(Error::shape(format!("Q width {}", k.cols()), q.cols()));
    }
    if k.rows() != v.rows() {
        return Err(Error::shape(format!("{} value rows", k.rows()), v.rows()));
    }
    if k.rows() == 0 && q.rows() > 0 {
        return Err(Error::shape("at least one key", 0));
    }
    Ok(())
}

/// `softmax(scale · Q Kᵀ) V` in `f64`, row-major `n × d_v`.
fn attention_f64(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    n: usize,
    m: usize,
    d: usize,
    dv: usize,
    scale: f64,
) -> Vec<f64> {
    let rows = par::map_range(n, |i| {
        let qi = &q[i * d..(i + 1) * d];
        let logits: Vec<f64> = (0..m)
            .map(|j| scale * crate::rotation::dot(qi, &k[j * d..(j + 1) * d]))
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut out = vec![0.0; dv];
        for (j, w) in weights.iter().enumerate() {
            let p = w / total;
            for (o, vj) in out.iter_mut().zip(&v[j * dv..(j + 1) * dv]) {
                *o += p * vj;
            }
        }
        out
    });
    rows.concat()
}

/// Row-wise softmax attention probabilities, `n × m`.
pub fn attention_weights(q: &Matrix, k: &Matrix, scale: f64) -> Result<Matrix> {
    let m = k.rows();
    let eye = Matrix::from_fn(m, m, |r, c| if r == c { 1.0 } else { 0.0 });
    attention(q, k, &eye, scale)
}

pub fn attention(q: &Matrix, k: &Matrix, v: &Matrix, scale: f64) -> Result<Matrix> {
    check_attention_shapes(q, k, v)?;
    let out = attention_f64(
        &to_f64(q),
        &to_f64(k),
        &to_f64(v),
        q.rows(),
        k.rows(),
        q.cols(),
        v.cols(),
        scale,
    );
    Matrix::new(
        q.rows(),
        v.cols(),
        out.into_iter().map(|x| x as f32).collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMetrics {
    pub bits: u8,
    /// Mean squared elementwise error of the attention output.
    pub output_mse: f64,
    /// Mean over rows of `‖k - k̃‖²`.
    pub key_mse: f64,
    /// Mean over rows of `‖v - ṽ‖²`.
    pub value_mse: f64,
    /// Mean over nonzero rows of `‖k - k̃‖² / ‖k‖²`.
    pub key_relative_mse: f64,
    pub value_relative_mse: f64,
    pub kv_ratio: f64,
}

/// Quantizes `K` with `seed` and `V` with `seed + 1`, then compares attention outputs.
pub fn attention_error(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    bits: u8,
    seed: u64,
    scale: f64,
) -> Result<AttentionMetrics> {
    check_attention_shapes(q, k, v)?;
    let kq = Quantizer::build(k.cols(), bits, seed)?;
    let vq = if v.cols() == k.cols() {
        Quantizer::new(
            Arc::new(Rotation::haar(v.cols(), seed.wrapping_add(1))?),
            kq.codebook().clone(),
        )?
    } else {
        Quantizer::build(v.cols(), bits, seed.wrapping_add(1))?
    };
    attention_error_with(q, k, v, &kq, &vq, scale)
}

/// [`attention_error`] with explicit quantizers, so rotations can be reused across bit widths.
pub fn attention_error_with(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    key_quantizer: &Quantizer,
    value_quantizer: &Quantizer,
    scale: f64,
) -> Result<AttentionMetrics> {
    check_attention_shapes(q, k, v)?;
    if key_quantizer.bits() != value_quantizer.bits() {
        return Err(Error::shape(
            format!("value quantizer with {} bits", key_quantizer.bits()),
            value_quantizer.bits(),
        ));
    }
    let round_trip = |m: &Matrix, quantizer: &Quantizer| -> Result<Vec<f64>> {
        if m.cols() != quantizer.dim() {
            return Err(Error::shape(
                format!("{} columns", quantizer.dim()),
                m.cols(),
            ));
        }
        let rows = par::try_map_range(m.rows(), |r| {
            let x: Vec<f64> = m.row(r).iter().map(|&v| f64::from(v)).collect();
            quantizer.dequantize_f64(&quantizer.quantize_f64(&x)?)
        })?;
        Ok(rows.concat())
    };
    let (qf, kf, vf) = (to_f64(q), to_f64(k), to_f64(v));
    let kt = round_trip(k, key_quantizer)?;
    let vt = round_trip(v, value_quantizer)?;

    let (n, m, d, dv) = (q.rows(), k.rows(), q.cols(), v.cols());
    let exact = attention_f64(&qf, &kf, &vf, n, m, d, dv, scale);
    let approx = attention_f64(&qf, &kt, &vt, n, m, d, dv, scale);
    let output_mse = if exact.is_empty() {
        0.0
    } else {
        exact
            .iter()
            .zip(&approx)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / exact.len() as f64
    };

    let row_errors = |orig: &[f64], recon: &[f64], width: usize| -> (f64, f64) {
        if m == 0 || width == 0 {
            return (0.0, 0.0);
        }
        let (mut abs, mut rel, mut nonzero) = (0.0, 0.0, 0usize);
        for (a, b) in orig.chunks_exact(width).zip(recon.chunks_exact(width)) {
            let err: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
            let norm: f64 = a.iter().map(|x| x * x).sum();
            abs += err;
            if norm > 0.0 {
                rel += err / norm;
                nonzero += 1;
            }
        }
        (
            abs / m as f64,
            if nonzero > 0 {
                rel / nonzero as f64
            } else {
                0.0
            },
        )
    };
    let (key_mse, key_relative_mse) = row_errors(&kf, &kt, d);
    let (value_mse, value_relative_mse) = row_errors(&vf, &vt, dv);

    Ok(AttentionMetrics {
        bits: key_quantizer.bits(),
        output_mse,
        key_mse,
        value_mse,
        key_relative_mse,
        value_relative_mse,
        kv_ratio: kv_ratio(d, key_quantizer.bits()),
    })
}

/// `rows × cols` matrix of independent standard normal entries from `(seed, stream)`.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64, stream: u64) -> Matrix {
    let mut g = crate::rotation::GaussianStream::new(seed, stream);
    Matrix::from_fn(rows, cols, |_, _| g.next_gaussian() as f32)
}
