//! Fixed-width index packing.
//!
//! Index `j` occupies stream bits `[j*b, (j+1)*b)`, and stream bit `k` is bit `k % 8`
//! of byte `k / 8` (LSB first). Trailing pad bits are zero.

use crate::{check_bits, Error, Result};

/// Packed length in bytes of `count` indices of `bits` bits each.
pub const fn packed_len(count: usize, bits: u8) -> usize {
    (count * bits as usize).div_ceil(8)
}

pub fn pack_indices(indices: &[u8], bits: u8) -> Result<Vec<u8>> {
    check_bits(bits)?;
    let limit = 1u32 << bits;
    if let Some((j, &idx)) = indices
        .iter()
        .enumerate()
        .find(|(_, &i)| u32::from(i) >= limit)
    {
        return Err(Error::Range {
            what: "index",
            value: format!("{idx} at position {j}"),
            allowed: "0..2^bits",
        });
    }
    let mut out = Vec::with_capacity(packed_len(indices.len(), bits));
    let mut acc: u32 = 0;
    let mut filled = 0u32;
    for &idx in indices {
        acc |= u32::from(idx) << filled;
        filled += u32::from(bits);
        while filled >= 8 {
            out.push(acc as u8);
            acc >>= 8;
            filled -= 8;
        }
    }
    if filled > 0 {
        out.push(acc as u8);
    }
    Ok(out)
}

/// Inverse of [`pack_indices`]. Nonzero pad bits are tolerated with a warning.
pub fn unpack_indices(bytes: &[u8], count: usize, bits: u8) -> Result<Vec<u8>> {
    check_bits(bits)?;
    let expected = packed_len(count, bits);
    if bytes.len() != expected {
        return Err(Error::format(format!(
            "packed index block has {} bytes, expected {expected} for {count} x {bits}-bit indices",
            bytes.len()
        )));
    }
    if !pad_bits_clear(bytes, count, bits) {
        log::warn!("nonzero pad bits in packed index block");
    }
    let mask = (1u32 << bits) - 1;
    let mut out = Vec::with_capacity(count);
    let mut acc: u32 = 0;
    let mut filled = 0u32;
    let mut src = bytes.iter();
    for _ in 0..count {
        while filled < u32::from(bits) {
            acc |= u32::from(*src.next().expect("length checked above")) << filled;
            filled += 8;
        }
        out.push((acc & mask) as u8);
        acc >>= bits;
        filled -= u32::from(bits);
    }
    Ok(out)
}

/// True when every bit after the last index is zero.
pub fn pad_bits_clear(bytes: &[u8], count: usize, bits: u8) -> bool {
    let used = count * bits as usize;
    match bytes.last() {
        Some(&last) if used % 8 != 0 => last >> (used % 8) == 0,
        _ => true,
    }
}
