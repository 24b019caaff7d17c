//! Label conversions between the two branches.
//!
//! Classifier predictions become pair targets for `S`; similarities of an
//! unlabeled sample to one labeled center per class become a soft target
//! for `C`. Pairs are sampled stochastically so that a batch costs `m` pair
//! evaluations instead of `n^2`.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::ModelState;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Where a pair's target came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairSource {
    /// Both endpoints carry ground-truth labels.
    TrueLabel,
    /// At least one endpoint uses the classifier's prediction.
    PseudoLabel,
    /// Supplied directly as a same/different-class weak label.
    WeakLabel,
}

/// Batch-local pair with a binary similarity target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairSample {
    pub i: usize,
    pub j: usize,
    pub target: u8,
    pub source: PairSource,
}

pub fn true_similarity_target(y_i: usize, y_j: usize) -> u8 {
    u8::from(y_i == y_j)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// 1 iff the two probability rows have the same argmax class.
pub fn pseudo_similarity_target(probs_i: &[f64], probs_j: &[f64]) -> u8 {
    true_similarity_target(argmax(probs_i), argmax(probs_j))
}

/// Class information for one batch: labeled rows come first, unlabeled
/// rows follow with their predicted class and max-probability confidence.
#[derive(Debug, Clone, Copy)]
pub struct BatchLabels<'a> {
    pub labels: &'a [usize],
    pub predicted: &'a [usize],
    pub confidence: &'a [f64],
}

impl BatchLabels<'_> {
    pub fn n_labeled(&self) -> usize {
        self.labels.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len() + self.predicted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn class_of(&self, r: usize) -> usize {
        if r < self.labels.len() {
            self.labels[r]
        } else {
            self.predicted[r - self.labels.len()]
        }
    }

    fn eligible(&self, r: usize, tau: f64) -> bool {
        r < self.labels.len() || self.confidence[r - self.labels.len()] >= tau
    }
}

/// Result of [`sample_pairs`].
#[derive(Debug, Clone, PartialEq)]
pub struct PairSampling {
    pub pairs: Vec<PairSample>,
    /// Number of eligible unordered pairs in the batch.
    pub eligible: usize,
    /// Set when fewer than `m` pairs were eligible.
    pub truncated: bool,
}

/// Draws `m` distinct unordered pairs uniformly without replacement from
/// the eligible pairs of a batch. A pair is eligible when each unlabeled
/// endpoint has confidence at least `tau`.
pub fn sample_pairs(batch: &BatchLabels<'_>, m: usize, tau: f64, rng: &mut Rng) -> Result<PairSampling> {
    if batch.predicted.len() != batch.confidence.len() {
        return Err(Error::Contract(
            "one confidence value is needed per unlabeled row".into(),
        ));
    }
    if tau.is_nan() || tau < 0.0 {
        return Err(Error::InvalidArgument(format!("tau must be non-negative, got {tau}")));
    }
    let n = batch.len();
    let ok: Vec<bool> = (0..n).map(|r| batch.eligible(r, tau)).collect();
    let mut pool = Vec::new();
    for i in 0..n {
        if !ok[i] {
            continue;
        }
        for j in (i + 1)..n {
            if ok[j] {
                pool.push((i, j));
            }
        }
    }
    let eligible = pool.len();
    let chosen: Vec<(usize, usize)> = if m == 0 {
        Vec::new()
    } else if m >= eligible {
        pool
    } else {
        index::sample(rng, eligible, m)
            .into_iter()
            .map(|k| pool[k])
            .collect()
    };
    let n_l = batch.n_labeled();
    let pairs = chosen
        .into_iter()
        .map(|(i, j)| PairSample {
            i,
            j,
            target: true_similarity_target(batch.class_of(i), batch.class_of(j)),
            source: if i < n_l && j < n_l {
                PairSource::TrueLabel
            } else {
                PairSource::PseudoLabel
            },
        })
        .collect();
    Ok(PairSampling {
        pairs,
        eligible,
        truncated: m > eligible,
    })
}

/// One labeled center per class present in a batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CenterMap {
    pub num_classes: usize,
    /// class -> batch index of its center
    pub centers: BTreeMap<usize, usize>,
}

impl CenterMap {
    pub fn covered_classes(&self) -> Vec<usize> {
        self.centers.keys().copied().collect()
    }

    pub fn covers_all(&self) -> bool {
        self.centers.len() == self.num_classes
    }

    /// Center indices ordered by class, when every class is covered.
    pub fn ordered_indices(&self) -> Option<Vec<usize>> {
        self.covers_all().then(|| self.centers.values().copied().collect())
    }
}

/// Picks, for every class in the batch, one of its labeled rows uniformly
/// at random. `batch_labels` holds `(batch index, class)`.
pub fn select_class_centers(
    batch_labels: &[(usize, usize)],
    num_classes: usize,
    rng: &mut Rng,
) -> Result<CenterMap> {
    if batch_labels.is_empty() {
        return Err(Error::InvalidArgument("center selection needs a non-empty batch".into()));
    }
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(idx, class) in batch_labels {
        if class >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "class {class} out of range for {num_classes} classes"
            )));
        }
        members.entry(class).or_default().push(idx);
    }
    let centers = members
        .into_iter()
        .map(|(class, idx)| {
            let pick = rng.random_range(0..idx.len());
            (class, idx[pick])
        })
        .collect();
    Ok(CenterMap {
        num_classes,
        centers,
    })
}

/// Normalized class-similarity vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabel {
    pub probs: Vec<f64>,
}

impl SoftLabel {
    /// Divides raw similarities by their sum; falls back to uniform when
    /// the sum is below `1e-9`.
    pub fn from_similarities(raw: &[f64]) -> SoftLabel {
        let k = raw.len();
        let s: f64 = raw.iter().sum();
        let probs = if s < 1e-9 {
            vec![1.0 / k as f64; k]
        } else {
            raw.iter().map(|v| v / s).collect()
        };
        SoftLabel { probs }
    }
}

/// Soft label of one sample from its similarity to each class center.
/// `center_feats` row `k` holds the features of the center of class `k`.
/// Returns `None` unless every class has a center.
pub fn soft_label(
    state: &ModelState,
    x_feat: &[f64],
    centers: &CenterMap,
    center_feats: &Tensor,
) -> Result<Option<SoftLabel>> {
    Ok(soft_labels(state, &Tensor::matrix(1, x_feat.len(), x_feat.to_vec())?, centers, center_feats)?
        .map(|mut v| v.remove(0)))
}

/// Batched [`soft_label`] for every row of `feats`.
pub fn soft_labels(
    state: &ModelState,
    feats: &Tensor,
    centers: &CenterMap,
    center_feats: &Tensor,
) -> Result<Option<Vec<SoftLabel>>> {
    if !centers.covers_all() {
        return Ok(None);
    }
    let k = centers.num_classes;
    if center_feats.rows() != k {
        return Err(Error::Contract(format!(
            "{} center rows for {k} classes",
            center_feats.rows()
        )));
    }
    let n = feats.rows();
    let left: Vec<usize> = (0..n).flat_map(|r| std::iter::repeat_n(r, k)).collect();
    let right: Vec<usize> = (0..n).flat_map(|_| 0..k).collect();
    let sims = state.similarity_rows(&feats.select_rows(&left), &center_feats.select_rows(&right))?;
    Ok(Some(sims.chunks(k).map(SoftLabel::from_similarities).collect()))
}
