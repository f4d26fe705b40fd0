//! Seeded random streams and distribution sampling.
//!
//! The generator is xoshiro256** with its 256-bit state filled by four
//! consecutive SplitMix64 outputs of the 64-bit seed. Every distribution is
//! derived from that stream with closed-form transforms so that any other
//! implementation can reproduce the same values:
//!
//! * `u ∈ [0,1)`:   `(next_u64 >> 11) · 2⁻⁵³`
//! * `u ∈ (0,1)`:   `((next_u64 >> 11) + 0.5) · 2⁻⁵³`
//! * uniform(a,b):  `a + (b − a)·u`, `u ∈ [0,1)`
//! * gaussian(μ,σ): Box–Muller cosine branch, `μ + σ·√(−2 ln u₁)·cos(2π u₂)`,
//!   `u₁, u₂ ∈ (0,1)`, two draws per sample
//! * laplace(μ,b):  inverse CDF with `u ∈ (0,1)`, `p = u − ½`,
//!   `μ − b·sgn(p)·ln(1 − 2|p|)`
//! * lognormal(μ,σ): `exp(gaussian(μ,σ))`
//!
//! Sampling runs in `f64` and rounds to `f32` once per element.
//!
//! Reference vectors (first outputs of `next_u64`):
//!
//! | seed | outputs |
//! |------|---------|
//! | 0 | `0x99ec5f36cb75f2b4`, `0xbf6e1f784956452a`, `0x1a5f849d4933e6e0`, `0x6aa594f1262d2d2c` |
//! | 7 | `0xb358faf74ef9765a`, `0x475c3d964f482cd2`, `0xd6f1d349952c7996`, `0xfb2938731e807240` |

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::{SplitMix64, Xoshiro256StarStar};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VqError};
use crate::tensor::DenseTensor;

const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: Xoshiro256StarStar,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        let mut sm = SplitMix64::seed_from_u64(seed);
        let inner = Xoshiro256StarStar::from_rng(&mut sm);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_NEG_53
    }

    /// Uniform on the open interval `(0, 1)`.
    pub fn next_f64_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * TWO_POW_NEG_53
    }

    /// Uniform integer in `0..bound` by rejection on the top bits (no modulo bias).
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        let zone = u64::MAX - (u64::MAX - bound + 1) % bound;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return v % bound;
            }
        }
    }

    /// Fisher–Yates shuffle, walking from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    pub fn gaussian(&mut self, mean: f64, std: f64) -> f64 {
        let u1 = self.next_f64_open();
        let u2 = self.next_f64_open();
        mean + std * (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }
}

/// Distribution specification for [`sample`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Dist {
    Uniform { low: f64, high: f64 },
    Gaussian { mean: f64, std: f64 },
    Laplace { loc: f64, scale: f64 },
    Lognormal { mu: f64, sigma: f64 },
}

impl Dist {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Dist::Uniform { low, high } => low.is_finite() && high.is_finite() && low <= high,
            Dist::Gaussian { mean, std } => mean.is_finite() && std.is_finite() && std > 0.0,
            Dist::Laplace { loc, scale } => loc.is_finite() && scale.is_finite() && scale > 0.0,
            Dist::Lognormal { mu, sigma } => mu.is_finite() && sigma.is_finite() && sigma > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(VqError::Parameter(format!("invalid distribution parameters: {self}")))
        }
    }

    fn draw(&self, rng: &mut RngStream) -> f64 {
        match *self {
            Dist::Uniform { low, high } => low + (high - low) * rng.next_f64(),
            Dist::Gaussian { mean, std } => rng.gaussian(mean, std),
            Dist::Laplace { loc, scale } => {
                let p = rng.next_f64_open() - 0.5;
                loc - scale * p.signum() * (1.0 - 2.0 * p.abs()).ln()
            }
            Dist::Lognormal { mu, sigma } => rng.gaussian(mu, sigma).exp(),
        }
    }
}

impl fmt::Display for Dist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dist::Uniform { low, high } => write!(f, "uniform:{low},{high}"),
            Dist::Gaussian { mean, std } => write!(f, "gaussian:{mean},{std}"),
            Dist::Laplace { loc, scale } => write!(f, "laplace:{loc},{scale}"),
            Dist::Lognormal { mu, sigma } => write!(f, "lognormal:{mu},{sigma}"),
        }
    }
}

/// Parses `name:p1,p2`, e.g. `laplace:0,1`.
impl FromStr for Dist {
    type Err = VqError;

    fn from_str(s: &str) -> Result<Self> {
        let (name, params) = s
            .split_once(':')
            .ok_or_else(|| VqError::Parameter(format!("expected name:p1,p2, got '{s}'")))?;
        let nums: Vec<f64> = params
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| VqError::Parameter(format!("bad distribution parameter in '{s}': {e}")))?;
        let [a, b] = nums[..] else {
            return Err(VqError::Parameter(format!("'{s}' needs exactly two parameters")));
        };
        let dist = match name {
            "uniform" => Dist::Uniform { low: a, high: b },
            "gaussian" | "normal" => Dist::Gaussian { mean: a, std: b },
            "laplace" => Dist::Laplace { loc: a, scale: b },
            "lognormal" => Dist::Lognormal { mu: a, sigma: b },
            other => return Err(VqError::Parameter(format!("unknown distribution '{other}'"))),
        };
        dist.validate()?;
        Ok(dist)
    }
}

/// Draws a tensor of the given shape, elements in row-major order.
pub fn sample(dist: &Dist, shape: &[usize], rng: &mut RngStream) -> Result<DenseTensor> {
    dist.validate()?;
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| dist.draw(rng) as f32).collect();
    DenseTensor::new_finite(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_vectors() {
        let mut r = RngStream::new(0);
        let got: Vec<u64> = (0..4).map(|_| r.next_u64()).collect();
        assert_eq!(
            got,
            [0x99ec5f36cb75f2b4, 0xbf6e1f784956452a, 0x1a5f849d4933e6e0, 0x6aa594f1262d2d2c]
        );
        let mut r = RngStream::new(7);
        let got: Vec<u64> = (0..4).map(|_| r.next_u64()).collect();
        assert_eq!(
            got,
            [0xb358faf74ef9765a, 0x475c3d964f482cd2, 0xd6f1d349952c7996, 0xfb2938731e807240]
        );
    }

    #[test]
    fn equal_seeds_equal_streams() {
        let mut a = RngStream::new(1234);
        let mut b = RngStream::new(1234);
        for _ in 0..1_000_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn degenerate_uniform_is_zero() {
        let t = sample(&Dist::Uniform { low: 0.0, high: 0.0 }, &[3, 5], &mut RngStream::new(1)).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gaussian_moments() {
        let n = 100_000;
        let t = sample(&Dist::Gaussian { mean: 0.0, std: 1.0 }, &[n], &mut RngStream::new(7)).unwrap();
        let mean = t.data().iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let var = t.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.02, "std {}", var.sqrt());
    }

    #[test]
    fn laplace_tail_quantiles() {
        let n = 100_000;
        let t = sample(&Dist::Laplace { loc: 0.0, scale: 1.0 }, &[n], &mut RngStream::new(7)).unwrap();
        let mut signed: Vec<f64> = t.data().iter().map(|&v| v as f64).collect();
        signed.sort_by(f64::total_cmp);
        let mut mags: Vec<f64> = signed.iter().map(|v| v.abs()).collect();
        mags.sort_by(f64::total_cmp);
        let q = |v: &[f64], p: f64| v[((v.len() as f64 * p) as usize).min(v.len() - 1)];
        // P(X > t) = ½e^{-t}: 99th signed percentile is ln 50.
        let want_signed = -(0.02f64).ln();
        assert!((q(&signed, 0.99) - want_signed).abs() / want_signed < 0.10);
        // P(|X| > t) = e^{-t}: 99th magnitude percentile is ln 100.
        let want_mag = (100.0f64).ln();
        assert!((q(&mags, 0.99) - want_mag).abs() / want_mag < 0.10);
    }

    #[test]
    fn invalid_parameters_rejected() {
        let mut r = RngStream::new(0);
        assert!(sample(&Dist::Gaussian { mean: 0.0, std: 0.0 }, &[2], &mut r).is_err());
        assert!(sample(&Dist::Laplace { loc: 0.0, scale: -1.0 }, &[2], &mut r).is_err());
        assert!(sample(&Dist::Uniform { low: 1.0, high: 0.0 }, &[2], &mut r).is_err());
        assert!("gaussian:0".parse::<Dist>().is_err());
        assert!("cauchy:0,1".parse::<Dist>().is_err());
        assert_eq!(
            "laplace:0,1".parse::<Dist>().unwrap(),
            Dist::Laplace { loc: 0.0, scale: 1.0 }
        );
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut v: Vec<usize> = (0..100).collect();
        RngStream::new(3).shuffle(&mut v);
        let mut s = v.clone();
        s.sort();
        assert_eq!(s, (0..100).collect::<Vec<_>>());
        assert_ne!(v, s);
    }
}
