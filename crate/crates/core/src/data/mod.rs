//! Datasets, fixed-pattern masking, synthetic generation and batch sampling.

mod batching;
mod digits;
mod mask;
mod synthetic;
mod tabular;

pub use batching::{balanced_source_batches, BalancedBatches, UniformBatches};
pub use digits::{expected_split_size, load_digits, resolve_data_dir, DATA_DIR_ENV};
pub use mask::{make_horizontal_patch_mask, patch_rows, BlockDescriptor, FixedMask, ImageShape};
pub use synthetic::{
    make_synthetic_multimodal, ShiftParams, SyntheticConfig, SyntheticOracle, SyntheticPair,
};
pub use tabular::{load_tabular, write_tabular, TabularFiles, LABEL_COLUMN};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(&self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

/// One sample split into its observed block `x1` and missing-component slot `x2`.
///
/// Labels are zero-based class indices. Target samples may carry their true
/// label for evaluation; trainers never read it.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedSample {
    pub x1: Vec<f32>,
    pub x2: Vec<f32>,
    pub label: Option<usize>,
    pub domain: Domain,
}

/// How a flattened sample is laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputLayout {
    Flat { dim: usize },
    Image(ImageShape),
}

impl InputLayout {
    pub fn len(&self) -> usize {
        match self {
            InputLayout::Flat { dim } => *dim,
            InputLayout::Image(shape) => shape.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    Mnist,
    Usps,
    Svhn,
    Mnistm,
    Synthetic,
    Tabular,
}

impl DatasetName {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::Usps => "usps",
            DatasetName::Svhn => "svhn",
            DatasetName::Mnistm => "mnistm",
            DatasetName::Synthetic => "synthetic",
            DatasetName::Tabular => "tabular",
        }
    }

    pub fn is_digits(&self) -> bool {
        matches!(
            self,
            DatasetName::Mnist | DatasetName::Usps | DatasetName::Svhn | DatasetName::Mnistm
        )
    }

    pub fn native_channels(&self) -> usize {
        match self {
            DatasetName::Svhn | DatasetName::Mnistm => 3,
            _ => 1,
        }
    }
}

impl std::str::FromStr for DatasetName {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mnist" => DatasetName::Mnist,
            "usps" => DatasetName::Usps,
            "svhn" => DatasetName::Svhn,
            "mnistm" | "mnist-m" | "mnist_m" => DatasetName::Mnistm,
            "synthetic" => DatasetName::Synthetic,
            "tabular" => DatasetName::Tabular,
            other => return config(format!("unknown dataset `{other}`")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => config(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: DatasetName,
    pub split: Split,
    pub subsample: Option<usize>,
    pub patch_fraction: f64,
    pub seed: u64,
    /// Output channel count; single-channel digits are triplicated when 3.
    pub channels: Option<usize>,
}

impl DatasetSpec {
    pub fn new(name: DatasetName, split: Split) -> Self {
        Self {
            name,
            split,
            subsample: None,
            patch_fraction: 0.0,
            seed: 0,
            channels: None,
        }
    }
}

/// A homogeneous collection of samples sharing one layout and one mask.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub layout: InputLayout,
    pub mask: FixedMask,
    pub num_classes: usize,
    pub samples: Vec<MaskedSample>,
    /// False when the `x2` slots were zero-filled by masking.
    pub x2_observed: bool,
}

impl Dataset {
    /// Builds an unmasked dataset from full vectors.
    pub fn from_full(
        name: impl Into<String>,
        layout: InputLayout,
        num_classes: usize,
        domain: Domain,
        rows: Vec<(Vec<f32>, Option<usize>)>,
    ) -> Result<Self> {
        let n = layout.len();
        let mut samples = Vec::with_capacity(rows.len());
        for (x, label) in rows {
            if x.len() != n {
                return config(format!("sample of length {} for layout of {n}", x.len()));
            }
            if let Some(y) = label {
                if y >= num_classes {
                    return config(format!("label {y} out of range for {num_classes} classes"));
                }
            }
            samples.push(MaskedSample {
                x1: x,
                x2: Vec::new(),
                label,
                domain,
            });
        }
        Ok(Self {
            name: name.into(),
            layout,
            mask: FixedMask::none(n),
            num_classes,
            samples,
            x2_observed: true,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim_x1(&self) -> usize {
        self.mask.observed_count()
    }

    pub fn dim_x2(&self) -> usize {
        self.mask.missing_count()
    }

    /// Reassembles the full vector of sample `i` (masked entries read as stored).
    pub fn full_vector(&self, i: usize) -> Vec<f32> {
        let s = &self.samples[i];
        self.mask.merge(&s.x1, &s.x2)
    }

    pub fn labels(&self) -> Vec<Option<usize>> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            if let Some(y) = s.label {
                counts[y] += 1;
            }
        }
        counts
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            layout: self.layout,
            mask: self.mask.clone(),
            num_classes: self.num_classes,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            x2_observed: self.x2_observed,
        }
    }

    /// Deterministic split into two disjoint parts; `first` gets `fraction` of the samples.
    pub fn split_off(&self, fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut stream_rng(seed, Stream::Data));
        let cut = ((self.len() as f64) * fraction).round() as usize;
        let (a, b) = idx.split_at(cut.min(self.len()));
        (self.select(a), self.select(b))
    }
}

/// Splits every sample by `mask`; samples from `domains_to_mask` get zeroed `x2` slots.
///
/// The current split of `dataset` is undone first, so masking is idempotent.
pub fn apply_mask(dataset: &Dataset, mask: &FixedMask, domains_to_mask: &[Domain]) -> Result<Dataset> {
    if mask.len() != dataset.layout.len() {
        return config(format!(
            "mask length {} does not match sample dimension {}",
            mask.len(),
            dataset.layout.len()
        ));
    }
    let mut zeroed_any = false;
    let samples = dataset
        .samples
        .iter()
        .map(|s| {
            let full = dataset.mask.merge(&s.x1, &s.x2);
            let (x1, mut x2) = mask.split(&full);
            if domains_to_mask.contains(&s.domain) && !x2.is_empty() {
                x2.iter_mut().for_each(|v| *v = 0.0);
                zeroed_any = true;
            }
            MaskedSample {
                x1,
                x2,
                label: s.label,
                domain: s.domain,
            }
        })
        .collect();
    Ok(Dataset {
        name: dataset.name.clone(),
        layout: dataset.layout,
        mask: mask.clone(),
        num_classes: dataset.num_classes,
        samples,
        x2_observed: dataset.x2_observed && !zeroed_any,
    })
}

/// Seeded class-stratified subsample of `count` indices out of `labels`.
///
/// Each class receives its proportional share (largest remainder), so the
/// label distribution of the subsample tracks the full split.
pub fn stratified_subsample(labels: &[Option<usize>], count: usize, seed: u64) -> Result<Vec<usize>> {
    if count > labels.len() {
        return config(format!(
            "subsample of {count} exceeds dataset size {}",
            labels.len()
        ));
    }
    let mut by_class: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
    for (i, y) in labels.iter().enumerate() {
        by_class.entry(*y).or_default().push(i);
    }
    let total = labels.len() as f64;
    let mut quotas: Vec<(Option<usize>, usize, f64)> = by_class
        .iter()
        .map(|(y, idx)| {
            let exact = idx.len() as f64 * count as f64 / total;
            (*y, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.1).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].2.total_cmp(&quotas[a].2).then(a.cmp(&b)));
    for &k in order.iter().take(count - assigned) {
        quotas[k].1 += 1;
    }
    let mut rng = stream_rng(seed, Stream::Subsample);
    let mut chosen = Vec::with_capacity(count);
    for (y, quota, _) in quotas {
        let mut idx = by_class[&y].clone();
        idx.shuffle(&mut rng);
        chosen.extend_from_slice(&idx[..quota]);
    }
    chosen.sort_unstable();
    chosen.shuffle(&mut rng);
    Ok(chosen)
}
