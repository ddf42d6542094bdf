//! MNIST ingestion, normalization and per-client partitioning.

mod idx;
mod normalize;
mod partition;

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;

pub use idx::{load_idx_images, load_idx_labels, pack_idx_images, pack_idx_labels, IMAGE_MAGIC, LABEL_MAGIC};
pub use normalize::{normalize, zscore, PixelStats};
pub use partition::{partition_iid, partition_label_subset};

use crate::error::{Error, Result};
use crate::rng;

/// Raw grayscale images, row-major, one byte per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSet {
    pub pixels: Vec<u8>,
    pub rows: usize,
    pub cols: usize,
    pub count: usize,
}

impl ImageSet {
    pub fn pixels_per_image(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let d = self.pixels_per_image();
        &self.pixels[i * d..(i + 1) * d]
    }
}

/// Dense feature matrix (samples x dim) with class labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Vec<f64>,
    pub dim: usize,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("feature dimension must be positive".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::Shape(format!(
                "{} feature values do not form {} rows of width {}",
                features.len(),
                labels.len(),
                dim
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Shape(format!("label {bad} outside [0, {num_classes})")));
        }
        Ok(Self {
            features,
            dim,
            labels,
            num_classes,
        })
    }

    pub fn empty(dim: usize, num_classes: usize) -> Self {
        Self {
            features: Vec::new(),
            dim,
            labels: Vec::new(),
            num_classes,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self {
            features,
            dim: self.dim,
            labels,
            num_classes: self.num_classes,
        }
    }

    /// Appends the rows of `other`.
    pub fn extend(&mut self, other: &LabeledDataset) -> Result<()> {
        if other.dim != self.dim || other.num_classes != self.num_classes {
            return Err(Error::Shape(format!(
                "cannot append {}-dim/{}-class rows to {}-dim/{}-class dataset",
                other.dim, other.num_classes, self.dim, self.num_classes
            )));
        }
        self.features.extend_from_slice(&other.features);
        self.labels.extend_from_slice(&other.labels);
        Ok(())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn present_labels(&self) -> BTreeSet<usize> {
        self.labels.iter().copied().collect()
    }
}

/// One client's shard of a parent dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub client_id: usize,
    pub indices: Vec<usize>,
    pub present_labels: BTreeSet<usize>,
}

impl Partition {
    pub(crate) fn from_indices(client_id: usize, mut indices: Vec<usize>, labels: &[usize]) -> Self {
        indices.sort_unstable();
        let present_labels = indices.iter().map(|&i| labels[i]).collect();
        Self {
            client_id,
            indices,
            present_labels,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Keeps at most `cap` samples while preserving the class proportions.
///
/// Per-class quotas are `floor(cap * n_c / n)`; leftover slots go to the
/// classes with the largest fractional remainders (lower class id on ties).
pub fn stratified_subsample(ds: &LabeledDataset, cap: usize, seed: u64) -> LabeledDataset {
    let n = ds.len();
    if cap >= n {
        return ds.clone();
    }
    let counts = ds.class_counts();
    let mut quotas: Vec<usize> = counts.iter().map(|&c| c * cap / n).collect();
    let mut remainders: Vec<(usize, usize)> = counts
        .iter()
        .enumerate()
        .map(|(class, &c)| (c * cap % n, class))
        .collect();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let missing = cap - quotas.iter().sum::<usize>();
    for &(_, class) in remainders.iter().take(missing) {
        quotas[class] += 1;
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes];
    for (i, &y) in ds.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut keep = Vec::with_capacity(cap);
    for (class, members) in by_class.iter_mut().enumerate() {
        let mut rng = rng::stream(seed, "subsample", &[class as u64]);
        members.shuffle(&mut rng);
        keep.extend_from_slice(&members[..quotas[class]]);
    }
    keep.sort_unstable();
    ds.subset(&keep)
}

/// Train/test MNIST as found in `dir` (uncompressed IDX files with the
/// canonical names).
pub struct Mnist {
    pub train_images: ImageSet,
    pub train_labels: Vec<u8>,
    pub test_images: ImageSet,
    pub test_labels: Vec<u8>,
}

impl Mnist {
    pub const TRAIN_IMAGES: &'static str = "train-images-idx3-ubyte";
    pub const TRAIN_LABELS: &'static str = "train-labels-idx1-ubyte";
    pub const TEST_IMAGES: &'static str = "t10k-images-idx3-ubyte";
    pub const TEST_LABELS: &'static str = "t10k-labels-idx1-ubyte";

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read(&path).map_err(|e| Error::io(path, e))
        };
        let mnist = Self {
            train_images: load_idx_images(&read(Self::TRAIN_IMAGES)?)?,
            train_labels: load_idx_labels(&read(Self::TRAIN_LABELS)?)?,
            test_images: load_idx_images(&read(Self::TEST_IMAGES)?)?,
            test_labels: load_idx_labels(&read(Self::TEST_LABELS)?)?,
        };
        if mnist.train_images.count != mnist.train_labels.len() || mnist.test_images.count != mnist.test_labels.len() {
            return Err(Error::Format("image and label counts disagree".into()));
        }
        Ok(mnist)
    }

    /// Normalized train/test sets; statistics come from the train images only.
    pub fn to_datasets(&self) -> Result<(LabeledDataset, LabeledDataset, PixelStats)> {
        let stats = PixelStats::fit(&self.train_images)?;
        let labels = |raw: &[u8]| raw.iter().map(|&y| usize::from(y)).collect::<Vec<_>>();
        let dim = self.train_images.pixels_per_image();
        let train = LabeledDataset::new(stats.apply(&self.train_images), dim, labels(&self.train_labels), 10)?;
        let test = LabeledDataset::new(stats.apply(&self.test_images), dim, labels(&self.test_labels), 10)?;
        Ok((train, test, stats))
    }
}
