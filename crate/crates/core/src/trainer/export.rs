//! Learned features and their 2-D principal-component projection.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::networks::ModelState;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExport {
    /// `n x p` output of the feature extractor.
    pub features: Tensor,
    /// `n x 2` projection onto the top two principal components.
    pub projection: Tensor,
    pub labels: Vec<Option<usize>>,
}

impl FeatureExport {
    /// `id,pc1,pc2,label`; unlabeled rows carry label `-1`.
    pub fn projection_csv(&self) -> String {
        let mut s = String::from("id,pc1,pc2,label\n");
        for (r, y) in self.labels.iter().enumerate() {
            let p = self.projection.row(r);
            let label = y.map_or(-1, |y| y as i64);
            let _ = writeln!(s, "{r},{:e},{:e},{label}", p[0], p[1]);
        }
        s
    }

    /// `id,f1,...,fp`.
    pub fn features_csv(&self) -> String {
        let mut s = String::from("id");
        for k in 1..=self.features.cols() {
            let _ = write!(s, ",f{k}");
        }
        s.push('\n');
        for r in 0..self.features.rows() {
            let _ = write!(s, "{r}");
            for v in self.features.row(r) {
                let _ = write!(s, ",{v:e}");
            }
            s.push('\n');
        }
        s
    }
}

/// Projects the centered rows of `x` onto its two leading principal axes.
/// Each axis is oriented so that its largest-magnitude loading is positive.
pub fn pca_2d(x: &Tensor) -> Result<Tensor> {
    let (n, p) = (x.rows(), x.cols());
    if n < 2 {
        return Err(Error::InvalidArgument(format!("PCA needs at least 2 rows, got {n}")));
    }
    if p < 2 {
        return Err(Error::InvalidArgument(format!("PCA to 2-D needs at least 2 columns, got {p}")));
    }
    let m = DMatrix::from_row_slice(n, p, x.values());
    let mean = m.row_mean();
    let mut centered = m;
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut axes = Vec::with_capacity(2);
    for &k in &order[..2] {
        let mut v = eig.eigenvectors.column(k).into_owned();
        let lead = v.iter().copied().fold(0.0_f64, |best, e| if e.abs() > best.abs() { e } else { best });
        if lead < 0.0 {
            v = -v;
        }
        axes.push(v);
    }
    let mut out = Vec::with_capacity(2 * n);
    for row in centered.row_iter() {
        for a in &axes {
            out.push(row.dot(&a.transpose()));
        }
    }
    Tensor::matrix(n, 2, out)
}

/// Features of every row of `dataset` under `state` plus their projection.
pub fn export_features(state: &ModelState, dataset: &Dataset) -> Result<FeatureExport> {
    let features = state.extract_features(&dataset.features)?;
    let projection = pca_2d(&features)?;
    Ok(FeatureExport {
        features,
        projection,
        labels: dataset.labels.clone(),
    })
}
