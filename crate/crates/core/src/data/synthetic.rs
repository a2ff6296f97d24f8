//! Two-domain synthetic data with a bimodal missing block.
//!
//! Samples are stored as a one-channel `rows x 2` image. Each row is a 2D
//! point. The top half of the rows are noisy copies of a class centre placed
//! on a circle. The bottom half are noisy copies of that centre pushed
//! tangentially by `±mode_offset` and moved by a constant `block_offset`,
//! with the sign drawn once per sample, so the bottom block has two equally
//! likely modes given the top block.
//! The target domain applies an affine map (rotation, scale, translation) to
//! the top rows only. The bottom rows given the class are identical in both
//! domains.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, Domain, FixedMask, ImageShape, InputLayout};
use crate::error::{config, Result};
use crate::rng::{substream_rng, Stream};

/// Affine map applied to target class rows: `scale * R(rotation) * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftParams {
    pub rotation: f64,
    pub scale: f64,
    pub translation: [f64; 2],
}

impl ShiftParams {
    pub fn identity() -> Self {
        Self {
            rotation: 0.0,
            scale: 1.0,
            translation: [0.0, 0.0],
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotation.sin_cos();
        [
            self.scale * (c * p[0] - s * p[1]) + self.translation[0],
            self.scale * (s * p[0] + c * p[1]) + self.translation[1],
        ]
    }

    pub fn invert(&self, q: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotation.sin_cos();
        let x = (q[0] - self.translation[0]) / self.scale;
        let y = (q[1] - self.translation[1]) / self.scale;
        [c * x + s * y, -s * x + c * y]
    }
}

impl Default for ShiftParams {
    fn default() -> Self {
        Self {
            rotation: 0.35,
            scale: 1.2,
            translation: [0.8, -0.6],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_per_domain: usize,
    pub num_classes: usize,
    /// Image rows; the top `rows / 2` carry the class, the rest the mode.
    pub rows: usize,
    pub radius: f64,
    pub class_noise: f64,
    pub mode_offset: f64,
    pub mode_noise: f64,
    /// Constant added to every point of the bottom rows.
    pub block_offset: [f64; 2],
    pub shift: ShiftParams,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_per_domain: 2000,
            num_classes: 4,
            rows: 10,
            radius: 2.0,
            class_noise: 1.2,
            mode_offset: 1.0,
            mode_noise: 0.3,
            block_offset: [2.0, 0.0],
            shift: ShiftParams::default(),
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn shape(&self) -> ImageShape {
        ImageShape::new(1, self.rows, 2)
    }

    pub fn class_rows(&self) -> usize {
        self.rows / 2
    }
}

/// Ground truth for a generated pair.
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    pub config: SyntheticConfig,
    pub source_labels: Vec<usize>,
    pub target_labels: Vec<usize>,
    /// Per-sample sign of the tangential mode offset (`false` = negative).
    pub source_modes: Vec<bool>,
    pub target_modes: Vec<bool>,
}

pub struct SyntheticPair {
    pub source: Dataset,
    pub target: Dataset,
    pub oracle: SyntheticOracle,
}

impl SyntheticOracle {
    fn centre(&self, y: usize) -> [f64; 2] {
        let a = 2.0 * std::f64::consts::PI * y as f64 / self.config.num_classes as f64;
        [self.config.radius * a.cos(), self.config.radius * a.sin()]
    }

    /// Centre of the bottom rows of class `y`, before the mode offset.
    fn block_centre(&self, y: usize) -> [f64; 2] {
        let c = self.centre(y);
        [c[0] + self.config.block_offset[0], c[1] + self.config.block_offset[1]]
    }

    fn tangent(&self, y: usize) -> [f64; 2] {
        let a = 2.0 * std::f64::consts::PI * y as f64 / self.config.num_classes as f64;
        [-a.sin(), a.cos()]
    }

    /// Noise-free full vector of component `(y, mode)` in `domain`.
    pub fn component_mean(&self, y: usize, mode: bool, domain: Domain) -> Vec<f32> {
        let c = self.centre(y);
        let t = self.tangent(y);
        let sign = if mode { 1.0 } else { -1.0 };
        let class_point = match domain {
            Domain::Source => c,
            Domain::Target => self.config.shift.apply(c),
        };
        let b = self.block_centre(y);
        let mode_point = [
            b[0] + sign * self.config.mode_offset * t[0],
            b[1] + sign * self.config.mode_offset * t[1],
        ];
        (0..self.config.rows)
            .flat_map(|r| {
                let p = if r < self.config.class_rows() { class_point } else { mode_point };
                [p[0] as f32, p[1] as f32]
            })
            .collect()
    }

    fn entry_std(&self, index: usize, domain: Domain) -> f64 {
        let row = index / 2;
        if row < self.config.class_rows() {
            match domain {
                Domain::Source => self.config.class_noise,
                Domain::Target => self.config.class_noise * self.config.shift.scale,
            }
        } else {
            self.config.mode_noise
        }
    }

    /// Log joint density of the entries not marked missing, for every `(y, mode)`.
    fn log_joint(&self, full: &[f32], domain: Domain, mask: &FixedMask) -> Vec<[f64; 2]> {
        let k = self.config.num_classes;
        (0..k)
            .map(|y| {
                let mut out = [0.0; 2];
                for (m, slot) in out.iter_mut().enumerate() {
                    let mean = self.component_mean(y, m == 1, domain);
                    let mut lp = -(k as f64).ln() - 2f64.ln();
                    for (i, (&x, &mu)) in full.iter().zip(&mean).enumerate() {
                        if mask.is_missing(i) {
                            continue;
                        }
                        let sd = self.entry_std(i, domain);
                        let z = (x as f64 - mu as f64) / sd;
                        lp += -0.5 * z * z - sd.ln();
                    }
                    *slot = lp;
                }
                out
            })
            .collect()
    }

    fn normalise(log_joint: &[[f64; 2]]) -> Vec<[f64; 2]> {
        let max = log_joint
            .iter()
            .flat_map(|p| p.iter().copied())
            .fold(f64::NEG_INFINITY, f64::max);
        let mut w: Vec<[f64; 2]> = log_joint
            .iter()
            .map(|p| [(p[0] - max).exp(), (p[1] - max).exp()])
            .collect();
        let total: f64 = w.iter().map(|p| p[0] + p[1]).sum();
        w.iter_mut().for_each(|p| {
            p[0] /= total;
            p[1] /= total;
        });
        w
    }

    /// Class posterior from the observed entries of a full vector.
    pub fn posterior(&self, full: &[f32], domain: Domain, mask: &FixedMask) -> Vec<f64> {
        Self::normalise(&self.log_joint(full, domain, mask))
            .iter()
            .map(|p| p[0] + p[1])
            .collect()
    }

    /// Bayes-optimal label from the observed entries.
    pub fn bayes_predict(&self, full: &[f32], domain: Domain, mask: &FixedMask) -> usize {
        let post = self.posterior(full, domain, mask);
        (0..post.len())
            .max_by(|&a, &b| post[a].total_cmp(&post[b]).then(b.cmp(&a)))
            .unwrap_or(0)
    }

    /// Weighted means of the missing block given the observed block, one per `(y, mode)`.
    pub fn conditional_modes(&self, full: &[f32], domain: Domain, mask: &FixedMask) -> Vec<(f64, Vec<f32>)> {
        let w = Self::normalise(&self.log_joint(full, domain, mask));
        let mut out = Vec::with_capacity(2 * w.len());
        for (y, p) in w.iter().enumerate() {
            for m in 0..2 {
                let (_, x2) = mask.split(&self.component_mean(y, m == 1, domain));
                out.push((p[m], x2));
            }
        }
        out
    }

    /// The two noise-free missing blocks of a sample with known class.
    pub fn true_modes(&self, y: usize, mask: &FixedMask) -> [Vec<f32>; 2] {
        // the missing block never depends on the domain
        [false, true].map(|m| mask.split(&self.component_mean(y, m, Domain::Source)).1)
    }

    /// Maps target class rows back into source coordinates.
    pub fn canonical(&self, full: &[f32], domain: Domain) -> Vec<f32> {
        let mut out = full.to_vec();
        if domain == Domain::Target {
            for r in 0..self.config.class_rows() {
                let q = self.config.shift.invert([full[2 * r] as f64, full[2 * r + 1] as f64]);
                out[2 * r] = q[0] as f32;
                out[2 * r + 1] = q[1] as f32;
            }
        }
        out
    }
}

fn sample_domain(
    oracle_cfg: &SyntheticConfig,
    oracle: &SyntheticOracle,
    domain: Domain,
    rng: &mut ChaCha8Rng,
) -> (Vec<(Vec<f32>, Option<usize>)>, Vec<usize>, Vec<bool>) {
    let mut rows = Vec::with_capacity(oracle_cfg.n_per_domain);
    let mut labels = Vec::with_capacity(oracle_cfg.n_per_domain);
    let mut modes = Vec::with_capacity(oracle_cfg.n_per_domain);
    for i in 0..oracle_cfg.n_per_domain {
        // exactly balanced classes in each domain
        let y = i % oracle_cfg.num_classes;
        let mode: bool = rng.random();
        let c = oracle.centre(y);
        let t = oracle.tangent(y);
        let sign = if mode { 1.0 } else { -1.0 };
        let mut x = Vec::with_capacity(2 * oracle_cfg.rows);
        for r in 0..oracle_cfg.rows {
            let e: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
            let p = if r < oracle_cfg.class_rows() {
                let p = [c[0] + oracle_cfg.class_noise * e[0], c[1] + oracle_cfg.class_noise * e[1]];
                match domain {
                    Domain::Source => p,
                    Domain::Target => oracle_cfg.shift.apply(p),
                }
            } else {
                let b = oracle.block_centre(y);
                [
                    b[0] + sign * oracle_cfg.mode_offset * t[0] + oracle_cfg.mode_noise * e[0],
                    b[1] + sign * oracle_cfg.mode_offset * t[1] + oracle_cfg.mode_noise * e[1],
                ]
            };
            x.push(p[0] as f32);
            x.push(p[1] as f32);
        }
        rows.push((x, Some(y)));
        labels.push(y);
        modes.push(mode);
    }
    // shuffle so class order is not a function of position
    let mut order: Vec<usize> = (0..rows.len()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
    let rows = order.iter().map(|&i| rows[i].clone()).collect();
    let labels = order.iter().map(|&i| labels[i]).collect();
    let modes = order.iter().map(|&i| modes[i]).collect();
    (rows, labels, modes)
}

/// Generates unmasked source and target sets plus their ground truth.
pub fn make_synthetic_multimodal(cfg: &SyntheticConfig) -> Result<SyntheticPair> {
    if cfg.num_classes < 2 {
        return config("synthetic data needs at least 2 classes");
    }
    if cfg.n_per_domain < 100 {
        return config("synthetic data needs at least 100 samples per domain");
    }
    if cfg.rows < 2 {
        return config("synthetic data needs at least 2 rows");
    }
    if cfg.shift.scale <= 0.0 {
        return config("shift scale must be positive");
    }
    let mut oracle = SyntheticOracle {
        config: cfg.clone(),
        source_labels: Vec::new(),
        target_labels: Vec::new(),
        source_modes: Vec::new(),
        target_modes: Vec::new(),
    };
    let layout = InputLayout::Image(cfg.shape());
    let (src_rows, src_labels, src_modes) =
        sample_domain(cfg, &oracle, Domain::Source, &mut substream_rng(cfg.seed, Stream::Data, 0));
    let (tgt_rows, tgt_labels, tgt_modes) =
        sample_domain(cfg, &oracle, Domain::Target, &mut substream_rng(cfg.seed, Stream::Data, 1));
    oracle.source_labels = src_labels;
    oracle.target_labels = tgt_labels;
    oracle.source_modes = src_modes;
    oracle.target_modes = tgt_modes;
    Ok(SyntheticPair {
        source: Dataset::from_full("synthetic", layout, cfg.num_classes, Domain::Source, src_rows)?,
        target: Dataset::from_full("synthetic", layout, cfg.num_classes, Domain::Target, tgt_rows)?,
        oracle,
    })
}
