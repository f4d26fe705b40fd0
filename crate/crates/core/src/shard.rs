//! Per-worker ("local") outlier selection, as in data-parallel training where
//! each worker quantizes its own shard at the same ratio without exchanging
//! activations, compared against selection over the whole tensor.
//!
//! Each shard also derives its own `[qmin, qmax]` range.

use std::collections::HashSet;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{dequantize, profile_threshold, quant_error, quantize, QuantConfig, QuantizedTensor};
use crate::error::{Result, VqError};
use crate::tensor::DenseTensor;

/// Contiguous equal-size chunks of the flattened tensor; the remainder goes
/// to the last shard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardPlan {
    pub num_workers: usize,
}

impl ShardPlan {
    pub fn new(num_workers: usize) -> Result<Self> {
        if num_workers == 0 {
            return Err(VqError::Plan("at least one worker is required".into()));
        }
        Ok(Self { num_workers })
    }

    pub fn ranges(&self, n: usize) -> Result<Vec<Range<usize>>> {
        let w = self.num_workers;
        if w == 0 || w > n {
            return Err(VqError::Plan(format!("{w} workers cannot split {n} elements")));
        }
        let size = n / w;
        Ok((0..w)
            .map(|i| i * size..if i + 1 == w { n } else { (i + 1) * size })
            .collect())
    }
}

#[derive(Debug, Clone)]
pub struct LocalQuantization {
    pub shards: Vec<QuantizedTensor>,
    pub ranges: Vec<Range<usize>>,
    /// Concatenated shard reconstructions in the input's shape.
    pub reconstruction: DenseTensor,
}

impl LocalQuantization {
    /// Union of per-shard outliers as global flat indices, ascending.
    pub fn outlier_indices(&self) -> Vec<usize> {
        self.shards
            .iter()
            .zip(&self.ranges)
            .flat_map(|(q, r)| q.outliers().indices().iter().map(move |&i| i + r.start))
            .collect()
    }
}

/// Quantizes every shard independently with the same config. Shards run in
/// parallel; results are gathered in shard order.
pub fn local_quantize(t: &DenseTensor, cfg: &QuantConfig, plan: &ShardPlan) -> Result<LocalQuantization> {
    let ranges = plan.ranges(t.len())?;
    let shards = ranges
        .par_iter()
        .map(|r| quantize(&DenseTensor::vector(t.data()[r.clone()].to_vec()), cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut data = Vec::with_capacity(t.len());
    for q in &shards {
        data.extend_from_slice(dequantize(q).data());
    }
    let reconstruction = DenseTensor::new(t.shape().to_vec(), data)?;
    Ok(LocalQuantization { shards, ranges, reconstruction })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub workers: usize,
    pub elements: usize,
    pub global_outliers: usize,
    pub local_outliers: usize,
    /// `|local ∩ global| / |local ∪ global|`; 1 when both are empty.
    pub jaccard: f64,
    pub mse_local: f64,
    pub mse_global: f64,
    /// `mse_local / mse_global`; 1 when both are zero, `None` when only the
    /// global error is zero.
    pub mse_ratio: Option<f64>,
}

pub fn selection_divergence(t: &DenseTensor, cfg: &QuantConfig, plan: &ShardPlan) -> Result<Divergence> {
    let local = local_quantize(t, cfg, plan)?;
    let global_q = quantize(t, cfg)?;
    let global: HashSet<usize> = profile_threshold(t, cfg.large_ratio)?.indices.into_iter().collect();
    let local_set: HashSet<usize> = local.outlier_indices().into_iter().collect();
    let inter = local_set.intersection(&global).count();
    let union = local_set.union(&global).count();
    let jaccard = if union == 0 { 1.0 } else { inter as f64 / union as f64 };

    let mse_global = quant_error(t, &global_q)?.mse;
    let n = t.len() as f64;
    let mse_local = t
        .data()
        .iter()
        .zip(local.reconstruction.data())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        / n;
    let mse_ratio = if mse_global > 0.0 {
        Some(mse_local / mse_global)
    } else if mse_local == 0.0 {
        Some(1.0)
    } else {
        None
    };
    Ok(Divergence {
        workers: plan.num_workers,
        elements: t.len(),
        global_outliers: global.len(),
        local_outliers: local_set.len(),
        jaccard,
        mse_local,
        mse_global,
        mse_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{outlier_count, RangePolicy};
    use crate::rng::{sample, Dist, RngStream};

    fn cfg() -> QuantConfig {
        QuantConfig::vquant(3, 0.01, RangePolicy::Symmetric).unwrap()
    }

    #[test]
    fn ranges_cover_everything() {
        let r = ShardPlan::new(3).unwrap().ranges(10).unwrap();
        assert_eq!(r, vec![0..3, 3..6, 6..10]);
        assert!(ShardPlan::new(0).is_err());
        assert!(matches!(ShardPlan::new(11).unwrap().ranges(10), Err(VqError::Plan(_))));
    }

    #[test]
    fn single_worker_is_global() {
        let x = sample(&Dist::Laplace { loc: 0.0, scale: 1.0 }, &[50, 20], &mut RngStream::new(2)).unwrap();
        let plan = ShardPlan::new(1).unwrap();
        let local = local_quantize(&x, &cfg(), &plan).unwrap();
        let global = quantize(&x, &cfg()).unwrap();
        assert_eq!(local.shards[0].packed_codes(), global.packed_codes());
        assert_eq!(local.shards[0].outliers(), global.outliers());
        assert_eq!(local.reconstruction, dequantize(&global));
        let d = selection_divergence(&x, &cfg(), &plan).unwrap();
        assert_eq!(d.jaccard, 1.0);
        assert_eq!(d.mse_ratio, Some(1.0));
    }

    #[test]
    fn per_shard_counts() {
        let x = sample(&Dist::Laplace { loc: 0.0, scale: 1.0 }, &[10_003], &mut RngStream::new(8)).unwrap();
        let plan = ShardPlan::new(4).unwrap();
        let local = local_quantize(&x, &cfg(), &plan).unwrap();
        let want: usize = local.ranges.iter().map(|r| outlier_count(r.len(), 0.01)).sum();
        assert_eq!(local.outlier_indices().len(), want);
        let k = outlier_count(x.len(), 0.01);
        assert!(want + 4 >= k && want <= k + 4);
        assert_eq!(local.reconstruction.len(), x.len());
    }

    #[test]
    fn concentrated_outliers_diverge() {
        // All large values live in the first quarter; each worker keeps its own 1 %.
        let mut v = vec![0.1f32; 400];
        for (i, x) in v.iter_mut().take(100).enumerate() {
            *x = 10.0 + i as f32;
        }
        let x = DenseTensor::vector(v);
        let cfg = QuantConfig::vquant(3, 0.04, RangePolicy::Symmetric).unwrap();
        let d = selection_divergence(&x, &cfg, &ShardPlan::new(4).unwrap()).unwrap();
        // Global keeps 16 of the first shard's values; locally only 4 come from there.
        assert_eq!(d.global_outliers, 16);
        assert_eq!(d.local_outliers, 16);
        assert!((d.jaccard - 4.0 / 28.0).abs() < 1e-12);
        assert!(d.jaccard < 1.0);
    }

    #[test]
    fn sorted_input_reports_partial_overlap() {
        let mut v = sample(&Dist::Laplace { loc: 0.0, scale: 1.0 }, &[4000], &mut RngStream::new(1))
            .unwrap()
            .into_data();
        v.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
        let x = DenseTensor::vector(v);
        let d = selection_divergence(&x, &cfg(), &ShardPlan::new(4).unwrap()).unwrap();
        assert!(d.jaccard < 1.0);
        assert!(d.mse_ratio.is_some());
    }
}
