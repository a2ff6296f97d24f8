use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use super::diagnostics::joint_latents;
use crate::data::Dataset;
use crate::error::{contract, Result};
use crate::nets::{ComponentBundle, EncodingPath};

/// Top-two principal axes of a set of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection2d {
    pub mean: Vec<f64>,
    pub axes: [Vec<f64>; 2],
    /// Variance captured by each axis, descending.
    pub variances: [f64; 2],
}

impl Projection2d {
    /// Fits on the rows. Each axis is signed so that its largest-magnitude
    /// coordinate is positive, which makes the output independent of the
    /// eigen-solver's sign choice.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let Some(d) = rows.first().map(Vec::len) else {
            return contract("projection needs at least one row");
        };
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return contract("projection rows must share a nonzero width");
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for r in rows {
            let c: Vec<f64> = r.iter().zip(&mean).map(|(v, m)| v - m).collect();
            for i in 0..d {
                for j in i..d {
                    cov[(i, j)] += c[i] * c[j] / n;
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                cov[(i, j)] = cov[(j, i)];
            }
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let axis = |k: usize| -> (Vec<f64>, f64) {
            let Some(&col) = order.get(k) else {
                return (vec![0.0; d], 0.0);
            };
            let mut v: Vec<f64> = eig.eigenvectors.column(col).iter().copied().collect();
            let pivot = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if pivot < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            (v, eig.eigenvalues[col].max(0.0))
        };
        let (a0, v0) = axis(0);
        let (a1, v1) = axis(1);
        Ok(Self {
            mean,
            axes: [a0, a1],
            variances: [v0, v1],
        })
    }

    pub fn project(&self, row: &[f64]) -> [f64; 2] {
        let dot = |a: &[f64]| row.iter().zip(&self.mean).zip(a).map(|((v, m), w)| (v - m) * w).sum::<f64>();
        [dot(&self.axes[0]), dot(&self.axes[1])]
    }
}

/// Projects joint latents of each dataset onto the top-two principal axes
/// of the pooled latents and writes `id,domain,label,x,y` rows.
/// Returns the number of rows written.
pub fn export_embeddings(
    bundle: &ComponentBundle,
    sets: &[(&Dataset, EncodingPath)],
    out: &Path,
    batch_size: usize,
) -> Result<usize> {
    let mut rows = Vec::new();
    let mut meta = Vec::new();
    for (ds, path) in sets {
        let z = joint_latents(bundle, ds, *path, batch_size)?;
        for (i, (zi, s)) in z.into_iter().zip(&ds.samples).enumerate() {
            meta.push((i, s.domain.as_str(), s.label));
            rows.push(zi);
        }
    }
    let proj = Projection2d::fit(&rows)?;
    let mut w = csv::Writer::from_path(out)?;
    w.write_record(["id", "domain", "label", "x", "y"])?;
    for ((id, domain, label), row) in meta.iter().zip(&rows) {
        let [x, y] = proj.project(row);
        w.write_record([
            id.to_string(),
            domain.to_string(),
            label.map(|l| l.to_string()).unwrap_or_default(),
            format!("{x}"),
            format!("{y}"),
        ])?;
    }
    w.flush()?;
    Ok(rows.len())
}
