//! `.vqtq` quantized-tensor files.
//!
//! Little-endian layout:
//!
//! ```text
//! size        field
//! 4           magic "VQTQ"
//! 2           format version (u16) = 1
//! 1           bits K (u8, 1..=8)
//! 1           mode (u8): 0 = V-Quant, 1 = RV-Quant
//! 1           range policy (u8): 0 = symmetric, 1 = asymmetric, 2 = nonnegative
//! 1           outlier precision in bits (u8): 32 or 16
//! 8           large ratio AR (f64)
//! 4           qmin (f32)
//! 4           qmax (f32)
//! 8           element count n (u64)
//! 1 + 8·rank  shape: rank (u8) then dims (u64 each); Π dims = n
//! ⌈n·K/8⌉     packed codes (see `pack`)
//! 8           outlier count m (u64)
//! 8·m         outlier flat indices (u64, strictly increasing)
//! 4·m | 2·m   outlier values (f32, or IEEE binary16 bits as u16)
//! 1           mask flag (u8): 0 = none, 1 = present (V-Quant only)
//! ⌈n/8⌉       ReLU mask bits, present only when the flag is 1
//! ```

use std::path::Path;

use super::config::{CodecMode, OutlierPrecision, QuantConfig, RangePolicy};
use super::pack::{packed_len, unpack_codes};
use super::quantizer::{outlier_count, OutlierSet, QuantizedTensor};
use crate::error::{Result, VqError};
use crate::io::{read_file, read_shape, write_file, write_shape, ByteReader};

pub const QUANT_MAGIC: &[u8; 4] = b"VQTQ";
pub const QUANT_VERSION: u16 = 1;

pub fn encode_quantized(q: &QuantizedTensor) -> Result<Vec<u8>> {
    let cfg = q.config();
    let n = q.len();
    let mut out = Vec::with_capacity(64 + q.packed_codes().len() + 12 * q.outliers().len());
    out.extend_from_slice(QUANT_MAGIC);
    out.extend_from_slice(&QUANT_VERSION.to_le_bytes());
    out.push(cfg.bits);
    out.push(cfg.mode.code());
    out.push(cfg.range_policy.code());
    out.push(cfg.outlier_precision.bits());
    out.extend_from_slice(&cfg.large_ratio.to_le_bytes());
    let (qmin, qmax) = q.range();
    out.extend_from_slice(&qmin.to_le_bytes());
    out.extend_from_slice(&qmax.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    write_shape(&mut out, q.shape())?;
    out.extend_from_slice(q.packed_codes());
    let outliers = q.outliers();
    out.extend_from_slice(&(outliers.len() as u64).to_le_bytes());
    for &i in outliers.indices() {
        out.extend_from_slice(&(i as u64).to_le_bytes());
    }
    for &v in outliers.values() {
        match outliers.precision() {
            OutlierPrecision::F32 => out.extend_from_slice(&v.to_le_bytes()),
            OutlierPrecision::F16 => out.extend_from_slice(&half::f16::from_f32(v).to_bits().to_le_bytes()),
        }
    }
    match q.relu_mask() {
        Some(mask) => {
            out.push(1);
            out.extend_from_slice(mask);
        }
        None => out.push(0),
    }
    Ok(out)
}

pub fn decode_quantized(bytes: &[u8]) -> Result<QuantizedTensor> {
    let fmt = |m: String| VqError::Format(m);
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != QUANT_MAGIC {
        return Err(fmt("bad magic, expected VQTQ".into()));
    }
    let version = r.u16()?;
    if version != QUANT_VERSION {
        return Err(fmt(format!("unsupported quantized-tensor version {version}")));
    }
    let bits = r.u8()?;
    let mode = CodecMode::from_code(r.u8()?).ok_or_else(|| fmt("unknown codec mode".into()))?;
    let range_policy = RangePolicy::from_code(r.u8()?).ok_or_else(|| fmt("unknown range policy".into()))?;
    let precision =
        OutlierPrecision::from_bits(r.u8()?).ok_or_else(|| fmt("unknown outlier precision".into()))?;
    let large_ratio = r.f64()?;
    let config = QuantConfig::new(bits, large_ratio, mode, range_policy, precision)
        .map_err(|e| fmt(e.to_string()))?;
    let qmin = r.f32()?;
    let qmax = r.f32()?;
    if !(qmin.is_finite() && qmax.is_finite() && qmin <= qmax) {
        return Err(fmt(format!("invalid range [{qmin}, {qmax}]")));
    }
    let n = r.usize("element count")?;
    let shape = read_shape(&mut r)?;
    if shape.iter().product::<usize>() != n {
        return Err(fmt(format!("shape {shape:?} does not hold {n} elements")));
    }
    let codes = r.take(packed_len(n, bits))?.to_vec();
    let m = r.usize("outlier count")?;
    if m != outlier_count(n, large_ratio) {
        return Err(fmt(format!("{m} outliers stored, ratio {large_ratio} implies {}", outlier_count(n, large_ratio))));
    }
    let indices = (0..m).map(|_| r.usize("outlier index")).collect::<Result<Vec<_>>>()?;
    let values = (0..m)
        .map(|_| match precision {
            OutlierPrecision::F32 => r.f32(),
            OutlierPrecision::F16 => r.u16().map(|b| half::f16::from_bits(b).to_f32()),
        })
        .collect::<Result<Vec<_>>>()?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(fmt("non-finite outlier value".into()));
    }
    let outliers = OutlierSet::new(indices, values, precision, n).map_err(|e| fmt(e.to_string()))?;
    let relu_mask = match r.u8()? {
        0 => None,
        1 if mode == CodecMode::VQuant => Some(r.take(n.div_ceil(8))?.to_vec()),
        1 => return Err(fmt("RV-Quant tensors carry no mask".into())),
        f => return Err(fmt(format!("bad mask flag {f}"))),
    };
    r.finish()?;

    let unpacked = unpack_codes(&codes, bits, n)?;
    if outliers.indices().iter().any(|&i| unpacked[i] != 0) {
        return Err(fmt("outlier positions must carry code 0".into()));
    }
    Ok(QuantizedTensor { shape, config, codes, qmin, qmax, outliers, relu_mask })
}

pub fn write_quantized(path: impl AsRef<Path>, q: &QuantizedTensor) -> Result<()> {
    write_file(path.as_ref(), &encode_quantized(q)?)
}

pub fn read_quantized(path: impl AsRef<Path>) -> Result<QuantizedTensor> {
    decode_quantized(&read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::quantize;
    use crate::rng::{sample, Dist, RngStream};
    use crate::tensor::DenseTensor;

    #[test]
    fn round_trip_variants() {
        let x = sample(&Dist::Lognormal { mu: 0.0, sigma: 1.0 }, &[7, 9], &mut RngStream::new(4)).unwrap();
        let configs = [
            QuantConfig::vquant(3, 0.05, RangePolicy::Asymmetric).unwrap(),
            QuantConfig::rvquant(2, 0.02).unwrap(),
            QuantConfig::vquant(5, 0.1, RangePolicy::Nonnegative)
                .unwrap()
                .with_outlier_precision(OutlierPrecision::F16),
        ];
        for cfg in configs {
            let q = quantize(&x, &cfg).unwrap();
            let q = if cfg.mode == CodecMode::VQuant { q.with_relu_mask(&x).unwrap() } else { q };
            let bytes = encode_quantized(&q).unwrap();
            let back = decode_quantized(&bytes).unwrap();
            assert_eq!(back, q);
            assert_eq!(encode_quantized(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn header_layout() {
        let x = DenseTensor::vector(vec![1.0, 2.0, 3.0, 4.0]);
        let q = quantize(&x, &QuantConfig::rvquant(3, 0.25).unwrap()).unwrap();
        let b = encode_quantized(&q).unwrap();
        assert_eq!(&b[..4], b"VQTQ");
        assert_eq!(&b[4..10], &[1, 0, 3, 1, 2, 32]);
        assert_eq!(&b[10..18], &0.25f64.to_le_bytes());
        assert_eq!(&b[18..22], &0.0f32.to_le_bytes());
        assert_eq!(&b[22..26], &3.0f32.to_le_bytes());
        assert_eq!(&b[26..34], &4u64.to_le_bytes());
        assert_eq!(b[34], 1);
        // 4 codes x 3 bits = 2 bytes, then one outlier (index 3, value 4.0), no mask
        assert_eq!(b.len(), 35 + 8 + 2 + 8 + 8 + 4 + 1);
    }

    #[test]
    fn corruption_detected() {
        let x = DenseTensor::vector(vec![1.0, 2.0, 3.0, 4.0]);
        let q = quantize(&x, &QuantConfig::rvquant(3, 0.25).unwrap()).unwrap();
        let good = encode_quantized(&q).unwrap();
        let mut bad = good.clone();
        bad[1] = 0;
        assert!(matches!(decode_quantized(&bad), Err(VqError::Format(_))));
        assert!(matches!(decode_quantized(&good[..good.len() - 2]), Err(VqError::Format(_))));
        let mut bad_bits = good.clone();
        bad_bits[6] = 9;
        assert!(matches!(decode_quantized(&bad_bits), Err(VqError::Format(_))));
    }
}
