//! The `TQ3D` container.
//!
//! ```text
//! "TQ3D" | version u16 = 1 | flags u16 | N u64 | d_sh u32 | bits u8 | 0u8 x3 | seed u64
//! TQCB codebook block                     (absent when FLAG_SH_PASSTHROUGH)
//! rotation matrix, d_sh^2 f32 row-major   (present when FLAG_EMBEDDED_ROTATION)
//! raw block:   N x 56 bytes  (position xyz, quaternion rot_0..3, scale xyz, opacity, dc rgb)
//! quant block: N x (4 + ceil(d_sh*b/8)) bytes (norm f32, packed indices)
//! ```
//!
//! All integers and floats are little-endian.

use std::sync::Arc;

use crate::bytes::{put_f32s, read_f32s, Reader};
use crate::quantizer::QuantizedVector;
use crate::{check_bits, BetaCodebook, Error, Quantizer, Result, Rotation};

const MAGIC: &[u8; 4] = b"TQ3D";
const VERSION: u16 = 1;
const FIXED_HEADER_LEN: usize = 32;

pub const FLAG_EMBEDDED_ROTATION: u16 = 1;
/// The scene has no SH rest coefficients; no codebook is stored and norms are zero.
pub const FLAG_SH_PASSTHROUGH: u16 = 1 << 1;
const KNOWN_FLAGS: u16 = FLAG_EMBEDDED_ROTATION | FLAG_SH_PASSTHROUGH;

/// Unquantized bytes per Gaussian: 14 floats.
pub const RAW_RECORD_LEN: usize = 56;

/// Container size for `count` Gaussians without building one.
pub fn scene_len(count: usize, sh_dim: usize, bits: u8, embed_rotation: bool) -> usize {
    let mut header = FIXED_HEADER_LEN;
    if sh_dim > 0 {
        header += 14 + 4 * (1usize << bits);
        if embed_rotation {
            header += 4 * sh_dim * sh_dim;
        }
    }
    header + count * (RAW_RECORD_LEN + QuantizedVector::record_len(sh_dim, bits))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SceneHeader {
    pub flags: u16,
    pub count: u64,
    pub sh_dim: u32,
    pub bits: u8,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedScene {
    header: SceneHeader,
    codebook: Option<BetaCodebook>,
    rotation: Option<Vec<f32>>,
    raw: Vec<u8>,
    quant: Vec<u8>,
}

impl CompressedScene {
    pub(crate) fn new(
        header: SceneHeader,
        codebook: Option<BetaCodebook>,
        rotation: Option<Vec<f32>>,
        raw: Vec<u8>,
        quant: Vec<u8>,
    ) -> Result<Self> {
        let scene = Self {
            header,
            codebook,
            rotation,
            raw,
            quant,
        };
        scene.check()?;
        Ok(scene)
    }

    fn check(&self) -> Result<()> {
        let h = &self.header;
        check_bits(h.bits)
            .map_err(|_| Error::format(format!("bit width {} not in 1..=8", h.bits)))?;
        if h.flags & !KNOWN_FLAGS != 0 {
            return Err(Error::format(format!("unknown flags {:#06x}", h.flags)));
        }
        let passthrough = h.flags & FLAG_SH_PASSTHROUGH != 0;
        let embedded = h.flags & FLAG_EMBEDDED_ROTATION != 0;
        if passthrough != (h.sh_dim == 0) {
            return Err(Error::format(
                "passthrough flag must be set exactly when d_sh = 0",
            ));
        }
        match (&self.codebook, passthrough) {
            (Some(cb), false) => {
                if cb.dim() != h.sh_dim as usize || cb.bits() != h.bits {
                    return Err(Error::format(format!(
                        "codebook is ({}, {} bits) but header says ({}, {} bits)",
                        cb.dim(),
                        cb.bits(),
                        h.sh_dim,
                        h.bits
                    )));
                }
            }
            (None, true) => {}
            _ => return Err(Error::format("codebook presence does not match flags")),
        }
        if embedded != self.rotation.is_some() || (embedded && passthrough) {
            return Err(Error::format("embedded rotation does not match flags"));
        }
        if let Some(m) = &self.rotation {
            if m.len() != (h.sh_dim as usize).pow(2) {
                return Err(Error::format("embedded rotation has the wrong size"));
            }
        }
        let n = usize::try_from(h.count).map_err(|_| Error::format("record count overflows"))?;
        if self.raw.len() != n * RAW_RECORD_LEN {
            return Err(Error::format("raw block size does not match record count"));
        }
        if self.quant.len() != n * QuantizedVector::record_len(h.sh_dim as usize, h.bits) {
            return Err(Error::format(
                "quant block size does not match record count",
            ));
        }
        Ok(())
    }

    pub fn header(&self) -> &SceneHeader {
        &self.header
    }

    pub fn codebook(&self) -> Option<&BetaCodebook> {
        self.codebook.as_ref()
    }

    pub fn embedded_rotation(&self) -> Option<&[f32]> {
        self.rotation.as_deref()
    }

    pub fn raw_block(&self) -> &[u8] {
        &self.raw
    }

    pub fn quant_block(&self) -> &[u8] {
        &self.quant
    }

    /// Bytes before the raw block. Independent of the record count.
    pub fn header_len(&self) -> usize {
        FIXED_HEADER_LEN
            + self.codebook.as_ref().map_or(0, BetaCodebook::encoded_len)
            + self.rotation.as_ref().map_or(0, |m| 4 * m.len())
    }

    /// Raw plus quant block bytes: `N · (60 + ceil(d_sh·b/8))`.
    pub fn payload_len(&self) -> usize {
        self.raw.len() + self.quant.len()
    }

    pub fn total_len(&self) -> usize {
        self.header_len() + self.payload_len()
    }

    /// Quantizer for decoding: embedded matrix if present, otherwise regenerated from
    /// the seed.
    pub fn quantizer(&self) -> Result<Quantizer> {
        let codebook = self
            .codebook
            .clone()
            .ok_or_else(|| Error::format("scene has no codebook"))?;
        let dim = self.header.sh_dim as usize;
        let rotation = match &self.rotation {
            Some(m) => Rotation::from_matrix(
                dim,
                self.header.seed,
                m.iter().map(|&v| f64::from(v)).collect(),
                1e-3,
            )?,
            None => Rotation::haar(dim, self.header.seed)?,
        };
        Quantizer::new(Arc::new(rotation), codebook)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(self.total_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&h.flags.to_le_bytes());
        out.extend_from_slice(&h.count.to_le_bytes());
        out.extend_from_slice(&h.sh_dim.to_le_bytes());
        out.push(h.bits);
        out.extend_from_slice(&[0u8; 3]);
        out.extend_from_slice(&h.seed.to_le_bytes());
        if let Some(cb) = &self.codebook {
            cb.write_to(&mut out);
        }
        if let Some(m) = &self.rotation {
            put_f32s(&mut out, m);
        }
        out.extend_from_slice(&self.raw);
        out.extend_from_slice(&self.quant);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "TQ3D container");
        r.magic(MAGIC)?;
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::format(format!("unsupported TQ3D version {version}")));
        }
        let header = SceneHeader {
            flags: r.u16()?,
            count: r.u64()?,
            sh_dim: r.u32()?,
            bits: r.u8()?,
            seed: {
                r.zeros(3)?;
                r.u64()?
            },
        };
        check_bits(header.bits)
            .map_err(|_| Error::format(format!("bit width {} not in 1..=8", header.bits)))?;
        let codebook = if header.flags & FLAG_SH_PASSTHROUGH == 0 {
            Some(BetaCodebook::read_from(&mut r)?)
        } else {
            None
        };
        let rotation = if header.flags & FLAG_EMBEDDED_ROTATION != 0 {
            let d = header.sh_dim as usize;
            Some(read_f32s(r.take(4 * d * d)?))
        } else {
            None
        };
        let n =
            usize::try_from(header.count).map_err(|_| Error::format("record count overflows"))?;
        let raw_len = n
            .checked_mul(RAW_RECORD_LEN)
            .ok_or_else(|| Error::format("record count overflows"))?;
        let raw = r.take(raw_len)?.to_vec();
        let quant_len = n
            .checked_mul(QuantizedVector::record_len(
                header.sh_dim as usize,
                header.bits,
            ))
            .ok_or_else(|| Error::format("record count overflows"))?;
        let quant = r.take(quant_len)?.to_vec();
        r.finish()?;
        debug_assert_eq!(r.position(), bytes.len());
        Self::new(header, codebook, rotation, raw, quant)
    }
}
