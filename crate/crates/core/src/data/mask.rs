use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

/// Shape of an image sample stored channel-major as `(channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Structured description of the missing block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BlockDescriptor {
    /// Rows `first_missing_row..height` are missing in every channel.
    ImageRows {
        shape: ImageShape,
        first_missing_row: usize,
    },
    /// Named tabular columns are missing.
    Columns { names: Vec<String> },
}

/// Binary missingness mask shared by every sample of a dataset (`true` = missing).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedMask {
    bits: Vec<bool>,
    block: Option<BlockDescriptor>,
}

impl FixedMask {
    /// The all-observed mask ("full data").
    pub fn none(len: usize) -> Self {
        Self {
            bits: vec![false; len],
            block: None,
        }
    }

    pub fn from_bits(bits: Vec<bool>, block: Option<BlockDescriptor>) -> Result<Self> {
        if bits.is_empty() {
            return config("mask must cover at least one entry");
        }
        let missing = bits.iter().filter(|&&b| b).count();
        if missing == bits.len() {
            return config("mask leaves no observed entry");
        }
        Ok(Self { bits, block })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn block(&self) -> Option<&BlockDescriptor> {
        self.block.as_ref()
    }

    pub fn is_missing(&self, index: usize) -> bool {
        self.bits[index]
    }

    /// Whether any entry is masked.
    pub fn is_active(&self) -> bool {
        self.bits.iter().any(|&b| b)
    }

    pub fn missing_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn observed_count(&self) -> usize {
        self.len() - self.missing_count()
    }

    pub fn observed_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.bits[i]).collect()
    }

    pub fn missing_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.bits[i]).collect()
    }

    /// Splits a full vector into its observed and missing blocks.
    pub fn split(&self, full: &[f32]) -> (Vec<f32>, Vec<f32>) {
        let mut x1 = Vec::with_capacity(self.observed_count());
        let mut x2 = Vec::with_capacity(self.missing_count());
        for (&v, &missing) in full.iter().zip(&self.bits) {
            if missing {
                x2.push(v);
            } else {
                x1.push(v);
            }
        }
        (x1, x2)
    }

    /// Inverse of [`FixedMask::split`].
    pub fn merge(&self, x1: &[f32], x2: &[f32]) -> Vec<f32> {
        let mut it1 = x1.iter();
        let mut it2 = x2.iter();
        self.bits
            .iter()
            .map(|&missing| {
                let v = if missing { it2.next() } else { it1.next() };
                *v.expect("block lengths match the mask")
            })
            .collect()
    }
}

/// Number of bottom rows removed by a patch of the given fraction.
pub fn patch_rows(height: usize, patch_fraction: f64) -> usize {
    // the epsilon absorbs representation error such as 0.7 * 10 = 7.000000000000001
    ((patch_fraction * height as f64) + 1e-9).floor() as usize
}

/// Marks the bottom `patch_fraction` of image rows (all channels) as missing.
pub fn make_horizontal_patch_mask(shape: ImageShape, patch_fraction: f64) -> Result<FixedMask> {
    if !(0.0..=1.0).contains(&patch_fraction) {
        return config(format!("patch fraction {patch_fraction} outside [0, 1]"));
    }
    if shape.is_empty() {
        return config("empty image shape");
    }
    let masked_rows = patch_rows(shape.height, patch_fraction).min(shape.height);
    if masked_rows == 0 {
        return Ok(FixedMask::none(shape.len()));
    }
    let first_missing_row = shape.height - masked_rows;
    let mut bits = vec![false; shape.len()];
    for c in 0..shape.channels {
        for r in first_missing_row..shape.height {
            let start = (c * shape.height + r) * shape.width;
            bits[start..start + shape.width].fill(true);
        }
    }
    FixedMask::from_bits(
        bits,
        Some(BlockDescriptor::ImageRows {
            shape,
            first_missing_row,
        }),
    )
}
