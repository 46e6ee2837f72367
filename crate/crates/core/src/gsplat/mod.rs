//! 3D Gaussian Splatting scenes: PLY I/O, training-free pruning, and SH compression.
//!
//! Only the SH rest coefficients are quantized. Positions, quaternions, scales, opacity
//! and DC color stay `f32` (56 bytes per Gaussian).

mod container;
mod ply;

use std::sync::Arc;

pub use container::{
    scene_len, CompressedScene, SceneHeader, FLAG_EMBEDDED_ROTATION, FLAG_SH_PASSTHROUGH,
    RAW_RECORD_LEN,
};
pub use ply::{parse_ply, ply_size, write_ply};

use crate::quantizer::QuantizedVector;
use crate::{check_bits, par, BetaCodebook, Error, Matrix, Quantizer, Result, Rotation};

/// Structure-of-arrays Gaussian cloud, stored exactly as read from the PLY.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianCloud {
    pub count: usize,
    /// `N × 3`
    pub positions: Vec<f32>,
    /// `N × 4`, `rot_0..rot_3` as stored (unnormalized)
    pub quaternions: Vec<f32>,
    /// `N × 3`, log scale
    pub scales: Vec<f32>,
    /// `N`, logit opacity
    pub opacities: Vec<f32>,
    /// `N × 3`
    pub dc: Vec<f32>,
    /// `N × sh_dim`, channel-major (all coefficients of red, then green, then blue)
    pub sh_rest: Vec<f32>,
    pub sh_dim: usize,
}

/// SH degree for a rest-coefficient count, `d = 3((l+1)^2 - 1)`.
pub fn degree_for_sh_dim(sh_dim: usize) -> Option<u32> {
    match sh_dim {
        0 => Some(0),
        9 => Some(1),
        24 => Some(2),
        45 => Some(3),
        _ => None,
    }
}

pub const fn sh_dim_for_degree(degree: u32) -> usize {
    let k = (degree as usize + 1) * (degree as usize + 1) - 1;
    3 * k
}

fn sigmoid(x: f32) -> f64 {
    1.0 / (1.0 + (-f64::from(x)).exp())
}

impl GaussianCloud {
    pub fn with_capacity(count: usize, sh_dim: usize) -> Self {
        Self {
            count: 0,
            positions: Vec::with_capacity(count * 3),
            quaternions: Vec::with_capacity(count * 4),
            scales: Vec::with_capacity(count * 3),
            opacities: Vec::with_capacity(count),
            dc: Vec::with_capacity(count * 3),
            sh_rest: Vec::with_capacity(count * sh_dim),
            sh_dim,
        }
    }

    pub fn sh_degree(&self) -> u32 {
        degree_for_sh_dim(self.sh_dim).expect("validated on construction")
    }

    pub fn position(&self, i: usize) -> &[f32] {
        &self.positions[3 * i..3 * i + 3]
    }

    pub fn quaternion(&self, i: usize) -> &[f32] {
        &self.quaternions[4 * i..4 * i + 4]
    }

    pub fn scale(&self, i: usize) -> &[f32] {
        &self.scales[3 * i..3 * i + 3]
    }

    pub fn dc_of(&self, i: usize) -> &[f32] {
        &self.dc[3 * i..3 * i + 3]
    }

    pub fn sh_row(&self, i: usize) -> &[f32] {
        &self.sh_rest[self.sh_dim * i..self.sh_dim * (i + 1)]
    }

    /// Checks that every array has the right length for `count`.
    pub fn validate(&self) -> Result<()> {
        if degree_for_sh_dim(self.sh_dim).is_none() {
            return Err(Error::UnsupportedDegree(self.sh_dim));
        }
        let n = self.count;
        let checks = [
            ("positions", self.positions.len(), 3 * n),
            ("quaternions", self.quaternions.len(), 4 * n),
            ("scales", self.scales.len(), 3 * n),
            ("opacities", self.opacities.len(), n),
            ("dc", self.dc.len(), 3 * n),
            ("sh_rest", self.sh_rest.len(), self.sh_dim * n),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::shape(format!("{name} of length {want}"), got));
            }
        }
        Ok(())
    }

    /// Appends record `i` of `other`.
    fn push_from(&mut self, other: &GaussianCloud, i: usize) {
        self.positions.extend_from_slice(other.position(i));
        self.quaternions.extend_from_slice(other.quaternion(i));
        self.scales.extend_from_slice(other.scale(i));
        self.opacities.push(other.opacities[i]);
        self.dc.extend_from_slice(other.dc_of(i));
        self.sh_rest.extend_from_slice(other.sh_row(i));
        self.count += 1;
    }

    pub fn sh_matrix(&self) -> Matrix {
        Matrix::new(self.count, self.sh_dim, self.sh_rest.clone()).expect("validated cloud")
    }

    /// Mean of `‖f_i‖²` over the SH rows.
    pub fn mean_sh_norm_sq(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        self.sh_rest
            .iter()
            .map(|&v| f64::from(v).powi(2))
            .sum::<f64>()
            / self.count as f64
    }
}

/// Keeps the Gaussians with `sigmoid(opacity) >= tau`, preserving order.
pub fn prune_opacity(cloud: &GaussianCloud, tau: f64) -> Result<GaussianCloud> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Range {
            what: "opacity threshold",
            value: tau.to_string(),
            allowed: "[0, 1]",
        });
    }
    cloud.validate()?;
    let mut out = GaussianCloud::with_capacity(cloud.count, cloud.sh_dim);
    for i in 0..cloud.count {
        if tau == 0.0 || sigmoid(cloud.opacities[i]) >= tau {
            out.push_from(cloud, i);
        }
    }
    Ok(out)
}

/// Truncates the SH rest block to degree `degree`.
pub fn reduce_sh_degree(cloud: &GaussianCloud, degree: u32) -> Result<GaussianCloud> {
    cloud.validate()?;
    let current = cloud.sh_degree();
    if degree > current {
        return Err(Error::Range {
            what: "SH degree",
            value: degree.to_string(),
            allowed: "<= current degree",
        });
    }
    let per_channel = cloud.sh_dim / 3;
    let keep = sh_dim_for_degree(degree) / 3;
    let mut out = cloud.clone();
    out.sh_dim = 3 * keep;
    out.sh_rest = Vec::with_capacity(cloud.count * out.sh_dim);
    for i in 0..cloud.count {
        let row = cloud.sh_row(i);
        for c in 0..3 {
            out.sh_rest
                .extend_from_slice(&row[c * per_channel..c * per_channel + keep]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CompressOptions {
    /// Store the full `f32` rotation matrix instead of relying on seed regeneration.
    pub embed_rotation: bool,
}

fn check_finite(cloud: &GaussianCloud) -> Result<()> {
    let fields: [(&str, &[f32], usize); 6] = [
        ("position", &cloud.positions, 3),
        ("quaternion", &cloud.quaternions, 4),
        ("scale", &cloud.scales, 3),
        ("opacity", &cloud.opacities, 1),
        ("dc", &cloud.dc, 3),
        ("sh_rest", &cloud.sh_rest, cloud.sh_dim.max(1)),
    ];
    for (name, data, width) in fields {
        if let Some(p) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("record {} ({name})", p / width),
                coordinate: p % width,
            });
        }
    }
    Ok(())
}

/// Builds the quantizer stored in a scene: codebook rounded through `f32` and either the
/// seeded rotation or its `f32`-rounded copy when the matrix is embedded.
fn scene_quantizer(sh_dim: usize, bits: u8, seed: u64, embed: bool) -> Result<Quantizer> {
    let codebook = BetaCodebook::solve(sh_dim, bits)?.rounded_to_f32()?;
    let mut rotation = Rotation::haar(sh_dim, seed)?;
    if embed {
        let rounded = rotation.matrix().iter().map(|&v| v as f32 as f64).collect();
        rotation = Rotation::from_matrix(sh_dim, seed, rounded, 1e-3)?;
    }
    Quantizer::new(Arc::new(rotation), codebook)
}

pub fn compress_cloud(
    cloud: &GaussianCloud,
    bits: u8,
    seed: u64,
    opts: &CompressOptions,
) -> Result<CompressedScene> {
    check_bits(bits)?;
    cloud.validate()?;
    check_finite(cloud)?;
    let n = cloud.count;

    let mut raw = Vec::with_capacity(n * RAW_RECORD_LEN);
    for i in 0..n {
        for v in cloud
            .position(i)
            .iter()
            .chain(cloud.quaternion(i))
            .chain(cloud.scale(i))
            .chain(std::iter::once(&cloud.opacities[i]))
            .chain(cloud.dc_of(i))
        {
            raw.extend_from_slice(&v.to_le_bytes());
        }
    }

    if cloud.sh_dim == 0 {
        let header = SceneHeader {
            flags: FLAG_SH_PASSTHROUGH,
            count: n as u64,
            sh_dim: 0,
            bits,
            seed,
        };
        let quant = vec![0u8; n * QuantizedVector::record_len(0, bits)];
        return CompressedScene::new(header, None, None, raw, quant);
    }

    let quantizer = scene_quantizer(cloud.sh_dim, bits, seed, opts.embed_rotation)?;
    let records = quantizer
        .quantize_rows(&cloud.sh_matrix())
        .map_err(|e| match e {
            Error::NonFinite {
                context,
                coordinate,
            } => Error::NonFinite {
                context: context.replace("row", "record"),
                coordinate,
            },
            other => other,
        })?;
    let mut quant = Vec::with_capacity(n * quantizer.record_len());
    for r in &records {
        r.write_to(&mut quant);
    }
    let header = SceneHeader {
        flags: if opts.embed_rotation {
            FLAG_EMBEDDED_ROTATION
        } else {
            0
        },
        count: n as u64,
        sh_dim: cloud.sh_dim as u32,
        bits,
        seed,
    };
    let matrix = opts.embed_rotation.then(|| {
        quantizer
            .rotation()
            .matrix()
            .iter()
            .map(|&v| v as f32)
            .collect()
    });
    CompressedScene::new(
        header,
        Some(quantizer.codebook().clone()),
        matrix,
        raw,
        quant,
    )
}

pub fn decompress_cloud(scene: &CompressedScene) -> Result<GaussianCloud> {
    let header = scene.header();
    let n = header.count as usize;
    let sh_dim = header.sh_dim as usize;
    let mut cloud = GaussianCloud::with_capacity(n, sh_dim);
    cloud.count = n;
    let raw = crate::bytes::read_f32s(scene.raw_block());
    for rec in raw.chunks_exact(RAW_RECORD_LEN / 4) {
        cloud.positions.extend_from_slice(&rec[0..3]);
        cloud.quaternions.extend_from_slice(&rec[3..7]);
        cloud.scales.extend_from_slice(&rec[7..10]);
        cloud.opacities.push(rec[10]);
        cloud.dc.extend_from_slice(&rec[11..14]);
    }
    if sh_dim == 0 {
        return Ok(cloud);
    }

    let quantizer = scene.quantizer()?;
    let record_len = quantizer.record_len();
    let quant = scene.quant_block();
    let rows = par::try_map_range(n, |i| {
        let qv = QuantizedVector::from_record(&quant[i * record_len..(i + 1) * record_len])?;
        quantizer.dequantize(&qv)
    })?;
    for row in rows {
        cloud.sh_rest.extend_from_slice(&row);
    }
    Ok(cloud)
}

/// `original_ply_bytes / container bytes`.
pub fn exact_ratio(scene: &CompressedScene, original_ply_bytes: u64) -> f64 {
    original_ply_bytes as f64 / scene.total_len() as f64
}

/// Closed-form estimate `(1/ρ) · 32 / (b·r + 56/d_sh)` for pruning fraction `ρ`, bit
/// width `b` and SH reduction factor `r`. It ignores norms and headers and counts the
/// original as 32-bit SH only, so it overstates the byte-exact ratio.
pub fn approx_ratio(keep_fraction: f64, bits: u8, sh_factor: f64, sh_dim: usize) -> Result<f64> {
    let unit = 0.0..=1.0;
    if !unit.contains(&keep_fraction) || keep_fraction == 0.0 {
        return Err(Error::Range {
            what: "keep fraction",
            value: keep_fraction.to_string(),
            allowed: "(0, 1]",
        });
    }
    if !unit.contains(&sh_factor) || sh_factor == 0.0 {
        return Err(Error::Range {
            what: "SH reduction factor",
            value: sh_factor.to_string(),
            allowed: "(0, 1]",
        });
    }
    if sh_dim == 0 {
        return Err(Error::Range {
            what: "d_sh",
            value: "0".into(),
            allowed: "> 0",
        });
    }
    check_bits(bits)?;
    Ok(32.0 / (f64::from(bits) * sh_factor + 56.0 / sh_dim as f64) / keep_fraction)
}
