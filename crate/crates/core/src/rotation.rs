//! Seeded Haar-random rotations.
//!
//! The generator is pinned: ChaCha20 (`rand_chacha` 0.3, seeded with
//! `SeedableRng::seed_from_u64`) feeding Box-Muller on 53-bit uniforms. The `d × d`
//! Gaussian matrix is filled column by column from stream 0, factored with Householder
//! QR in `f64`, and the columns of `Q` are multiplied by `sign(R[j, j])` (with
//! `sign(0) = +1`). Containers only store the seed, so this recipe must not change
//! without bumping the container version.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::{par, Error, Result};

pub const MIN_DIM: usize = 2;
pub const MAX_DIM: usize = 8192;

/// Standard normal variates from a pinned ChaCha20 stream.
pub struct GaussianStream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, spare: None }
    }

    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        // u1 in (0, 1] keeps the log finite; u2 in [0, 1)
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * SCALE;
        let u2 = (self.rng.next_u64() >> 11) as f64 * SCALE;
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.next_gaussian();
        }
    }

    /// A uniformly distributed unit vector (normalized Gaussian sample).
    pub fn unit_vector(&mut self, dim: usize) -> Vec<f64> {
        loop {
            let mut v = vec![0.0; dim];
            self.fill(&mut v);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.iter_mut().for_each(|x| *x /= norm);
                return v;
            }
        }
    }
}

/// A `d × d` orthogonal matrix derived from `(dim, seed)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rotation {
    dim: usize,
    seed: u64,
    // row-major
    matrix: Vec<f64>,
}

fn check_dim(dim: usize) -> Result<()> {
    if !(MIN_DIM..=MAX_DIM).contains(&dim) {
        return Err(Error::InvalidDimension {
            dim,
            reason: "rotation dimension must be in 2..=8192",
        });
    }
    Ok(())
}

/// Generates the Haar rotation for `(dim, seed)`.
pub fn haar_rotation(dim: usize, seed: u64) -> Result<Rotation> {
    Rotation::haar(dim, seed)
}

impl Rotation {
    pub fn haar(dim: usize, seed: u64) -> Result<Self> {
        check_dim(dim)?;
        let n = dim;
        // column-major working copy: column j is cols[j*n..(j+1)*n]
        let mut cols = vec![0.0; n * n];
        GaussianStream::new(seed, 0).fill(&mut cols);

        let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut r_diag = vec![0.0; n];
        for k in 0..n {
            let x = &cols[k * n + k..(k + 1) * n];
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let alpha = if x[0] >= 0.0 { -norm } else { norm };
            let mut v = x.to_vec();
            v[0] -= alpha;
            let vv: f64 = v.iter().map(|a| a * a).sum();
            r_diag[k] = alpha;
            if vv > 0.0 {
                let (_, rest) = cols.split_at_mut((k + 1) * n);
                par::for_each_chunk_mut(rest, n, |_, col| reflect(&v, vv, &mut col[k..]));
            }
            reflectors.push(if vv > 0.0 { v } else { Vec::new() });
        }

        // Q = H_0 H_1 ... H_{n-1}, accumulated right to left into the identity.
        let mut q = vec![0.0; n * n];
        for j in 0..n {
            q[j * n + j] = 1.0;
        }
        for k in (0..n).rev() {
            let v = &reflectors[k];
            if v.is_empty() {
                continue;
            }
            let vv: f64 = v.iter().map(|a| a * a).sum();
            par::for_each_chunk_mut(&mut q[k * n..], n, |_, col| reflect(v, vv, &mut col[k..]));
        }

        let mut matrix = vec![0.0; n * n];
        for j in 0..n {
            let sign = if r_diag[j] < 0.0 { -1.0 } else { 1.0 };
            for i in 0..n {
                matrix[i * n + j] = sign * q[j * n + i];
            }
        }
        Ok(Self { dim, seed, matrix })
    }

    /// First column of [`Rotation::haar`]`(dim, seed)` (equal up to rounding), computed
    /// in `O(d)`: the first column of `Q` is the normalized first Gaussian column.
    pub fn haar_first_column(dim: usize, seed: u64) -> Result<Vec<f64>> {
        check_dim(dim)?;
        Ok(GaussianStream::new(seed, 0).unit_vector(dim))
    }

    /// Wraps an explicit row-major matrix (e.g. one embedded in a container).
    pub fn from_matrix(dim: usize, seed: u64, matrix: Vec<f64>, tolerance: f64) -> Result<Self> {
        check_dim(dim)?;
        if matrix.len() != dim * dim {
            return Err(Error::shape(format!("{} entries", dim * dim), matrix.len()));
        }
        let rot = Self { dim, seed, matrix };
        let err = rot.orthogonality_error();
        if !(err <= tolerance) {
            return Err(Error::format(format!(
                "embedded rotation is not orthogonal (Frobenius error {err:e})"
            )));
        }
        Ok(rot)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Row-major entries.
    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    /// Frobenius norm of `ΠᵀΠ - I`.
    pub fn orthogonality_error(&self) -> f64 {
        let n = self.dim;
        let rows: Vec<f64> = par::map_range(n, |i| {
            let mut acc = 0.0;
            for j in 0..n {
                let dot: f64 = (0..n)
                    .map(|k| self.matrix[k * n + i] * self.matrix[k * n + j])
                    .sum();
                let target = if i == j { 1.0 } else { 0.0 };
                acc += (dot - target).powi(2);
            }
            acc
        });
        rows.iter().sum::<f64>().sqrt()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::shape(format!("vector of length {}", self.dim), len));
        }
        Ok(())
    }

    /// `Π x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        let mut out = vec![0.0; self.dim];
        self.apply_into(x, &mut out);
        Ok(out)
    }

    /// `Πᵀ y`.
    pub fn apply_inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y.len())?;
        let mut out = vec![0.0; self.dim];
        self.apply_inverse_into(y, &mut out);
        Ok(out)
    }

    /// `Π x` into `out`. Lengths must equal `dim`.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        for (o, row) in out.iter_mut().zip(self.matrix.chunks_exact(self.dim)) {
            *o = dot(row, x);
        }
    }

    /// `Πᵀ y` into `out`. Lengths must equal `dim`.
    pub fn apply_inverse_into(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.dim);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (&yi, row) in y.iter().zip(self.matrix.chunks_exact(self.dim)) {
            if yi != 0.0 {
                for (o, &r) in out.iter_mut().zip(row) {
                    *o += yi * r;
                }
            }
        }
    }

    /// Applies `Π` to every row of a row-major batch of `dim`-vectors.
    pub fn apply_batch(&self, batch: &[f64]) -> Result<Vec<f64>> {
        if batch.len() % self.dim != 0 {
            return Err(Error::shape(
                format!("a multiple of {}", self.dim),
                batch.len(),
            ));
        }
        let mut out = vec![0.0; batch.len()];
        par::for_each_chunk_mut(&mut out, self.dim, |i, o| {
            self.apply_into(&batch[i * self.dim..(i + 1) * self.dim], o)
        });
        Ok(out)
    }
}

fn reflect(v: &[f64], vv: f64, col: &mut [f64]) {
    let s = 2.0 * dot(v, col) / vv;
    if s != 0.0 {
        for (c, &vi) in col.iter_mut().zip(v) {
            *c -= s * vi;
        }
    }
}

/// Dot product with four independent accumulators (fixed order, so results are
/// reproducible).
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in 4 * chunks..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
