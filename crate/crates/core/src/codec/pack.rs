//! K-bit code packing.
//!
//! Codes form one little-endian bit stream: element `i` occupies stream bits
//! `i·K .. i·K + K`, least significant bit first, and stream bit `b` lives in
//! byte `b / 8` at bit position `b % 8`. The final byte is zero-padded.

use crate::error::{Result, VqError};

pub fn packed_len(n: usize, bits: u8) -> usize {
    (n * bits as usize).div_ceil(8)
}

fn check_bits(bits: u8) -> Result<()> {
    if (1..=8).contains(&bits) {
        Ok(())
    } else {
        Err(VqError::Encoding(format!("bit width {bits} outside 1..=8")))
    }
}

pub fn pack_codes(codes: &[u8], bits: u8) -> Result<Vec<u8>> {
    check_bits(bits)?;
    let limit = 1u16 << bits;
    let mut out = Vec::with_capacity(packed_len(codes.len(), bits));
    let mut acc: u32 = 0;
    let mut filled = 0u32;
    for (i, &c) in codes.iter().enumerate() {
        if c as u16 >= limit {
            return Err(VqError::Encoding(format!(
                "code {c} at index {i} does not fit in {bits} bits"
            )));
        }
        acc |= (c as u32) << filled;
        filled += bits as u32;
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

pub fn unpack_codes(bytes: &[u8], bits: u8, n: usize) -> Result<Vec<u8>> {
    check_bits(bits)?;
    let need = packed_len(n, bits);
    if bytes.len() < need {
        return Err(VqError::Encoding(format!(
            "{n} codes of {bits} bits need {need} bytes, got {}",
            bytes.len()
        )));
    }
    let mask = ((1u32 << bits) - 1) as u32;
    let mut out = Vec::with_capacity(n);
    let mut acc: u32 = 0;
    let mut filled = 0u32;
    let mut src = bytes.iter();
    for _ in 0..n {
        while filled < bits as u32 {
            acc |= (*src.next().expect("length checked") as u32) << filled;
            filled += 8;
        }
        out.push((acc & mask) as u8);
        acc >>= bits;
        filled -= bits as u32;
    }
    Ok(out)
}

/// Packs booleans as 1-bit codes (`true` = 1).
pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let codes: Vec<u8> = bits.iter().map(|&b| b as u8).collect();
    pack_codes(&codes, 1).expect("1-bit codes are always in range")
}

pub fn unpack_bits(bytes: &[u8], n: usize) -> Result<Vec<bool>> {
    Ok(unpack_codes(bytes, 1, n)?.into_iter().map(|c| c == 1).collect())
}
