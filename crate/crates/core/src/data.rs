//! Synthetic classification datasets and their `.vqtn` storage.
//!
//! A dataset on disk is two tensors: features `[N × D]` and labels `[N]`
//! holding class indices as exact small floats.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VqError};
use crate::io::{read_tensor, write_tensor};
use crate::rng::RngStream;
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DenseTensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: DenseTensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rank() != 2 || features.rows() != labels.len() {
            return Err(VqError::Dimension(format!(
                "features {:?} do not match {} labels",
                features.shape(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(VqError::Argument(format!("label {bad} outside {num_classes} classes")));
        }
        Ok(Self { features, labels, num_classes })
    }

    pub fn features(&self) -> &DenseTensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Gathers the given rows into a batch.
    pub fn batch(&self, rows: &[usize]) -> (DenseTensor, Vec<usize>) {
        let d = self.dim();
        let mut x = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            x.extend_from_slice(self.features.row(r));
        }
        let y = rows.iter().map(|&r| self.labels[r]).collect();
        (DenseTensor::new(vec![rows.len(), d], x).expect("row gather"), y)
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        let (features, labels) = self.batch(rows);
        Self { features, labels, num_classes: self.num_classes }
    }

    /// Writes `<stem>.x.vqtn` and `<stem>.y.vqtn`.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        write_tensor(dir.join(format!("{stem}.x.vqtn")), &self.features)?;
        let y = DenseTensor::vector(self.labels.iter().map(|&l| l as f32).collect());
        write_tensor(dir.join(format!("{stem}.y.vqtn")), &y)
    }

    /// Loads a dataset saved by [`Dataset::save`]. The class count is
    /// `max label + 1`.
    pub fn load(dir: impl AsRef<Path>, stem: &str) -> Result<Self> {
        let dir = dir.as_ref();
        let features = read_tensor(dir.join(format!("{stem}.x.vqtn")))?;
        let y = read_tensor(dir.join(format!("{stem}.y.vqtn")))?;
        let labels = y
            .data()
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 && v < 65536.0 {
                    Ok(v as usize)
                } else {
                    Err(VqError::Format(format!("label {v} is not a class index")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        Self::new(features, labels, num_classes).map_err(|e| VqError::Format(e.to_string()))
    }
}

/// Which synthetic task to generate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TaskSpec {
    /// Isotropic Gaussian clusters with centres drawn from N(0, separation²).
    Blobs { classes: usize, dim: usize, per_class: usize, separation: f64 },
    /// Noisy, randomly shifted 8×8 renderings of the glyphs 0–9.
    Digits { per_class: usize, noise: f64 },
}

/// Layer sizes of the MLP trained on [`TaskSpec::toy`].
pub const TOY_SIZES: [usize; 4] = [64, 64, 64, 10];

impl TaskSpec {
    /// The task the acceptance suite and the CLI default to.
    pub fn toy() -> Self {
        TaskSpec::Digits { per_class: 250, noise: 0.3 }
    }

    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        let mut rng = RngStream::new(seed);
        match *self {
            TaskSpec::Blobs { classes, dim, per_class, separation } => {
                gaussian_blobs(classes, dim, per_class, separation, &mut rng)
            }
            TaskSpec::Digits { per_class, noise } => digits(per_class, noise, &mut rng),
        }
    }
}

/// Samples are interleaved by class (`0, 1, …, C−1, 0, 1, …`).
pub fn gaussian_blobs(
    classes: usize,
    dim: usize,
    per_class: usize,
    separation: f64,
    rng: &mut RngStream,
) -> Result<Dataset> {
    if classes < 2 || dim == 0 || per_class == 0 || !(separation > 0.0) {
        return Err(VqError::Parameter("blobs need ≥2 classes, dim ≥1, ≥1 sample, separation >0".into()));
    }
    let centres: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| rng.gaussian(0.0, separation)).collect())
        .collect();
    let mut x = Vec::with_capacity(classes * per_class * dim);
    let mut y = Vec::with_capacity(classes * per_class);
    for _ in 0..per_class {
        for (c, centre) in centres.iter().enumerate() {
            x.extend(centre.iter().map(|&m| rng.gaussian(m, 1.0) as f32));
            y.push(c);
        }
    }
    Dataset::new(DenseTensor::new(vec![y.len(), dim], x)?, y, classes)
}

const GLYPHS: [[&str; 8]; 10] = [
    ["..####..", ".##..##.", ".##..##.", ".##..##.", ".##..##.", ".##..##.", "..####..", "........"],
    ["...##...", "..###...", "...##...", "...##...", "...##...", "...##...", ".######.", "........"],
    ["..####..", ".##..##.", ".....##.", "....##..", "...##...", "..##....", ".######.", "........"],
    ["..####..", ".##..##.", ".....##.", "...###..", ".....##.", ".##..##.", "..####..", "........"],
    ["....##..", "...###..", "..####..", ".##.##..", ".######.", "....##..", "....##..", "........"],
    [".######.", ".##.....", ".#####..", ".....##.", ".....##.", ".##..##.", "..####..", "........"],
    ["..####..", ".##.....", ".#####..", ".##..##.", ".##..##.", ".##..##.", "..####..", "........"],
    [".######.", ".....##.", "....##..", "...##...", "..##....", "..##....", "..##....", "........"],
    ["..####..", ".##..##.", ".##..##.", "..####..", ".##..##.", ".##..##.", "..####..", "........"],
    ["..####..", ".##..##.", ".##..##.", "..#####.", ".....##.", "....##..", "..###...", "........"],
];

/// Noisy 8×8 digit images. Each sample shifts its glyph by −1..=1 pixels in
/// both directions, scales its ink by a factor in [0.7, 1.3) and adds
/// Gaussian pixel noise of standard deviation `noise`.
pub fn digits(per_class: usize, noise: f64, rng: &mut RngStream) -> Result<Dataset> {
    if per_class == 0 || !(noise >= 0.0) {
        return Err(VqError::Parameter("digits need ≥1 sample per class and noise ≥ 0".into()));
    }
    let mut x = Vec::with_capacity(10 * per_class * 64);
    let mut y = Vec::with_capacity(10 * per_class);
    for _ in 0..per_class {
        for (class, glyph) in GLYPHS.iter().enumerate() {
            let dx = rng.below(3) as i32 - 1;
            let dy = rng.below(3) as i32 - 1;
            let ink = 0.7 + 0.6 * rng.next_f64();
            for r in 0..8i32 {
                for c in 0..8i32 {
                    let (sr, sc) = (r - dy, c - dx);
                    let on = (0..8).contains(&sr)
                        && (0..8).contains(&sc)
                        && glyph[sr as usize].as_bytes()[sc as usize] == b'#';
                    let base = if on { ink } else { 0.0 };
                    let v = if noise > 0.0 { rng.gaussian(base, noise) } else { base };
                    x.push(v as f32);
                }
            }
            y.push(class);
        }
    }
    Dataset::new(DenseTensor::new(vec![y.len(), 64], x)?, y, 10)
}

/// Splits a dataset into its first `train_fraction` and the remainder. The
/// generators interleave classes, so both halves stay balanced.
pub fn split(ds: &Dataset, train_fraction: f64) -> (Dataset, Dataset) {
    let cut = ((ds.len() as f64 * train_fraction).round() as usize).clamp(1, ds.len().saturating_sub(1).max(1));
    let train: Vec<usize> = (0..cut).collect();
    let test: Vec<usize> = (cut..ds.len()).collect();
    (ds.subset(&train), ds.subset(&test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glyphs_are_8x8() {
        for g in GLYPHS {
            assert!(g.iter().all(|row| row.len() == 8));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = TaskSpec::toy().generate(5).unwrap();
        let b = TaskSpec::toy().generate(5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 64);
        assert_eq!(a.num_classes(), 10);
        assert_ne!(a, TaskSpec::toy().generate(6).unwrap());
    }

    #[test]
    fn save_load_round_trip() {
        let ds = gaussian_blobs(3, 4, 5, 3.0, &mut RngStream::new(1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path(), "blobs").unwrap();
        assert_eq!(Dataset::load(dir.path(), "blobs").unwrap(), ds);
    }

    #[test]
    fn split_is_balanced() {
        let ds = TaskSpec::Digits { per_class: 10, noise: 0.1 }.generate(1).unwrap();
        let (tr, te) = split(&ds, 0.8);
        assert_eq!((tr.len(), te.len()), (80, 20));
        for c in 0..10 {
            assert_eq!(te.labels().iter().filter(|&&l| l == c).count(), 2);
        }
    }

    #[test]
    fn bad_labels_rejected() {
        let x = DenseTensor::zeros(vec![2, 2]);
        assert!(Dataset::new(x.clone(), vec![0, 3], 2).is_err());
        assert!(Dataset::new(x, vec![0], 2).is_err());
    }
}
