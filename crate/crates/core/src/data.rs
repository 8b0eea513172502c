//! Labelled datasets, mini-batches and the seeded batch/partition schedule.

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::randomness::{stream_rng, Domain};

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("dataset is empty")]
    Empty,
    #[error("feature buffer of length {features} is not a multiple of dimension {dim}")]
    Shape { features: usize, dim: usize },
    #[error("{samples} samples but {labels} labels")]
    LabelCount { samples: usize, labels: usize },
    #[error("non-finite feature at sample {sample}")]
    NonFinite { sample: usize },
    #[error("cannot split {samples} samples across {parts} clients")]
    Partition { samples: usize, parts: usize },
    #[error("{file}: bad IDX magic 0x{found:08x}, expected 0x{expected:08x}")]
    IdxMagic {
        file: String,
        expected: u32,
        found: u32,
    },
    #[error("{file}: truncated IDX file, need {needed} bytes, have {actual}")]
    IdxTruncated {
        file: String,
        needed: usize,
        actual: usize,
    },
    #[error("IDX count mismatch: {images} images vs {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },
    #[error("{file}: {reason}")]
    Io { file: String, reason: String },
}

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>) -> Result<Self, DataError> {
        if dim == 0 || !features.len().is_multiple_of(dim) {
            return Err(DataError::Shape {
                features: features.len(),
                dim,
            });
        }
        let samples = features.len() / dim;
        if samples != labels.len() {
            return Err(DataError::LabelCount {
                samples,
                labels: labels.len(),
            });
        }
        if let Some(i) = features.iter().position(|x| !x.is_finite()) {
            return Err(DataError::NonFinite { sample: i / dim });
        }
        Ok(Self {
            features,
            dim,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// One past the largest label, or 0 when empty.
    pub fn class_count(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// The samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            dim: self.dim,
            labels,
        }
    }

    pub fn batch(&self, indices: &[usize]) -> MiniBatch {
        let d = self.subset(indices);
        MiniBatch {
            inputs: d.features,
            dim: d.dim,
            labels: d.labels,
        }
    }

    /// The whole dataset as one batch.
    pub fn as_batch(&self) -> MiniBatch {
        MiniBatch {
            inputs: self.features.clone(),
            dim: self.dim,
            labels: self.labels.clone(),
        }
    }
}

/// A batch of `len()` inputs (row-major, `dim` columns) with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    inputs: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
}

impl MiniBatch {
    pub fn new(inputs: Vec<f64>, dim: usize, labels: Vec<usize>) -> Result<Self, DataError> {
        let d = Dataset::new(inputs, dim, labels)?;
        if d.is_empty() {
            return Err(DataError::Empty);
        }
        Ok(Self {
            inputs: d.features,
            dim: d.dim,
            labels: d.labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Shuffles `0..len` with `rng` and cuts it into batches of `batch_size`;
/// the final short batch is kept.
pub fn epoch_batches<R: Rng>(len: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

/// Seeded IID split of `0..samples` into `parts` disjoint, covering index
/// sets whose sizes differ by at most one.
pub fn partition_iid(
    samples: usize,
    parts: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, DataError> {
    if parts == 0 || samples < parts {
        return Err(DataError::Partition { samples, parts });
    }
    let mut order: Vec<usize> = (0..samples).collect();
    order.shuffle(&mut stream_rng(seed, Domain::Partition, 0));
    let base = samples / parts;
    let extra = samples % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        out.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn shape_errors() {
        assert!(matches!(
            Dataset::new(vec![0.0; 5], 2, vec![0, 0]),
            Err(DataError::Shape { .. })
        ));
        assert!(matches!(
            Dataset::new(vec![0.0; 4], 2, vec![0]),
            Err(DataError::LabelCount { .. })
        ));
        assert_eq!(MiniBatch::new(vec![], 2, vec![]), Err(DataError::Empty));
    }

    #[test]
    fn batches_keep_short_tail() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let b = epoch_batches(10, 4, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn partition_is_disjoint_cover() {
        let parts = partition_iid(103, 4, 9).unwrap();
        assert_eq!(
            parts.iter().map(Vec::len).collect::<Vec<_>>(),
            vec![26, 26, 26, 25]
        );
        let mut all = parts.concat();
        all.sort_unstable();
        assert_eq!(all, (0..103).collect::<Vec<_>>());
        assert!(partition_iid(3, 4, 0).is_err());
    }
}
