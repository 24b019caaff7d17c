//! Datasets, semi-supervised splits and weak pair labels.
//!
//! Dataset CSV: header `f1,...,fd,label`, one sample per row, label in
//! `[0, K)` or `-1` for unlabeled. Weak-pair CSV: header `i,j,same` with
//! 0-based data-row indices and `same` in `{0, 1}`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub num_classes: usize,
    pub features: Tensor,
    /// `None` marks an unlabeled row.
    pub labels: Vec<Option<usize>>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        num_classes: usize,
        features: Tensor,
        labels: Vec<Option<usize>>,
    ) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().flatten().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            name: name.into(),
            num_classes,
            features,
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
        self.features.cols()
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.labels.iter().all(Option::is_some)
    }

    /// Labels of a fully labeled dataset.
    pub fn hard_labels(&self) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, y)| {
                y.ok_or_else(|| Error::InvalidArgument(format!("row {i} of {} is unlabeled", self.name)))
            })
            .collect()
    }

    /// Rows `idx` in order. Empty selections are not representable.
    pub fn subset(&self, name: &str, idx: &[usize], keep_labels: bool) -> Dataset {
        Dataset {
            name: name.to_string(),
            num_classes: self.num_classes,
            features: self.features.select_rows(idx),
            labels: idx
                .iter()
                .map(|&i| if keep_labels { self.labels[i] } else { None })
                .collect(),
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::new();
        let d = self.dim();
        for k in 1..=d {
            let _ = write!(s, "f{k},");
        }
        s.push_str("label\n");
        for r in 0..self.len() {
            for v in self.features.row(r) {
                let _ = write!(s, "{v},");
            }
            match self.labels[r] {
                Some(y) => {
                    let _ = writeln!(s, "{y}");
                }
                None => s.push_str("-1\n"),
            }
        }
        s
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

/// Parses a dataset CSV. `num_classes` defaults to the largest label + 1
/// (at least 2).
pub fn parse_csv_dataset(text: &str, name: &str, num_classes: Option<usize>) -> Result<Dataset> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: name.to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 2 || cols.last() != Some(&"label") {
        return Err(perr(1, "header must list feature columns followed by `label`".into()));
    }
    let d = cols.len() - 1;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != d + 1 {
            return Err(perr(
                lineno,
                format!("expected {} columns, found {}", d + 1, fields.len()),
            ));
        }
        for f in &fields[..d] {
            let v: f64 = f
                .parse()
                .map_err(|_| perr(lineno, format!("invalid feature value `{f}`")))?;
            if !v.is_finite() {
                return Err(perr(lineno, format!("non-finite feature value `{f}`")));
            }
            values.push(v);
        }
        let y: i64 = fields[d]
            .parse()
            .map_err(|_| perr(lineno, format!("invalid label `{}`", fields[d])))?;
        labels.push(match y {
            -1 => None,
            y if y >= 0 => Some(y as usize),
            y => return Err(perr(lineno, format!("label {y} is neither -1 nor a class index"))),
        });
    }
    if labels.is_empty() {
        return Err(perr(2, "no data rows".into()));
    }
    let max_label = labels.iter().flatten().copied().max().unwrap_or(0);
    let k = num_classes.unwrap_or((max_label + 1).max(2));
    let features = Tensor::matrix(labels.len(), d, values)?;
    Dataset::new(name, k, features, labels)
}

pub fn load_csv_dataset(path: impl AsRef<Path>, num_classes: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv_dataset(&text, &path.display().to_string(), num_classes)
}

/// Two interleaving half circles, `n / 2` points per class.
pub fn gen_two_moons(n: usize, noise_sigma: f64, rng: &mut Rng) -> Result<Dataset> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "two-moons needs an even n >= 2, got {n}"
        )));
    }
    if noise_sigma.is_nan() || noise_sigma < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "noise must be non-negative, got {noise_sigma}"
        )));
    }
    let half = n / 2;
    let mut values = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    let noise = (noise_sigma > 0.0).then(|| Normal::new(0.0, noise_sigma).expect("valid sigma"));
    for class in 0..2 {
        for _ in 0..half {
            let t: f64 = rng.random_range(0.0..=PI);
            let (mut x, mut y) = if class == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            if let Some(nd) = &noise {
                x += nd.sample(rng);
                y += nd.sample(rng);
            }
            values.extend([x, y]);
            labels.push(Some(class));
        }
    }
    Dataset::new("two-moons", 2, Tensor::matrix(n, 2, values)?, labels)
}

/// Labeled, unlabeled and test partitions of one source dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SSLSplit {
    pub labeled: Dataset,
    pub unlabeled: Option<Dataset>,
    pub test: Dataset,
    /// Source row of each labeled / unlabeled / test row.
    pub labeled_rows: Vec<usize>,
    pub unlabeled_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

impl SSLSplit {
    /// Position of a source row in the training pool (labeled rows first,
    /// then unlabeled rows), or `None` for held-out rows.
    pub fn pool_position(&self, source_row: usize) -> Option<usize> {
        self.labeled_rows
            .iter()
            .chain(&self.unlabeled_rows)
            .position(|&r| r == source_row)
    }

    pub fn pool_len(&self) -> usize {
        self.labeled_rows.len() + self.unlabeled_rows.len()
    }

    /// Fits per-column statistics on the training rows and applies them to
    /// every partition.
    pub fn standardize(&mut self) -> Standardizer {
        let mut parts: Vec<&Tensor> = vec![&self.labeled.features];
        if let Some(u) = &self.unlabeled {
            parts.push(&u.features);
        }
        let pool = Tensor::vstack(&parts).expect("equal widths");
        let st = Standardizer::fit(&pool);
        st.apply(&mut self.labeled.features);
        if let Some(u) = &mut self.unlabeled {
            st.apply(&mut u.features);
        }
        st.apply(&mut self.test.features);
        st
    }
}

/// Holds out `round(test_fraction * n)` labeled rows for testing, then
/// picks `n_labeled` of the remaining labeled rows (equal counts per class
/// when `stratified`). Everything else becomes unlabeled.
pub fn split_ssl(
    dataset: &Dataset,
    n_labeled: usize,
    test_fraction: f64,
    stratified: bool,
    rng: &mut Rng,
) -> Result<SSLSplit> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must lie in [0, 1), got {test_fraction}"
        )));
    }
    if n_labeled == 0 {
        return Err(Error::InvalidArgument("n_labeled must be positive".into()));
    }
    let mut with_label: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset.labels[i].is_some())
        .collect();
    let without_label: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset.labels[i].is_none())
        .collect();
    with_label.shuffle(rng);
    let n_test = (test_fraction * dataset.len() as f64).round() as usize;
    if n_test == 0 {
        return Err(Error::InvalidArgument("test split would be empty".into()));
    }
    if n_test + n_labeled > with_label.len() {
        return Err(Error::InvalidArgument(format!(
            "{n_test} test rows plus {n_labeled} labeled rows exceed {} labeled rows available",
            with_label.len()
        )));
    }
    let test_rows = with_label[..n_test].to_vec();
    let rest = &with_label[n_test..];
    let labeled_rows: Vec<usize> = if stratified {
        let k = dataset.num_classes;
        if !n_labeled.is_multiple_of(k) {
            return Err(Error::InvalidArgument(format!(
                "stratified split needs n_labeled divisible by {k}, got {n_labeled}"
            )));
        }
        let per = n_labeled / k;
        let mut taken = vec![0usize; k];
        let mut chosen = Vec::with_capacity(n_labeled);
        for &r in rest {
            let y = dataset.labels[r].expect("labeled row");
            if taken[y] < per {
                taken[y] += 1;
                chosen.push(r);
            }
        }
        if let Some(short) = taken.iter().position(|&t| t < per) {
            return Err(Error::InvalidArgument(format!(
                "class {short} has fewer than {per} rows outside the test split"
            )));
        }
        chosen
    } else {
        rest[..n_labeled].to_vec()
    };
    let mut is_labeled = vec![false; dataset.len()];
    labeled_rows.iter().for_each(|&r| is_labeled[r] = true);
    let unlabeled_rows: Vec<usize> = rest
        .iter()
        .copied()
        .filter(|&r| !is_labeled[r])
        .chain(without_label)
        .collect();
    let unlabeled =
        (!unlabeled_rows.is_empty()).then(|| dataset.subset("unlabeled", &unlabeled_rows, false));
    Ok(SSLSplit {
        labeled: dataset.subset("labeled", &labeled_rows, true),
        unlabeled,
        test: dataset.subset("test", &test_rows, true),
        labeled_rows,
        unlabeled_rows,
        test_rows,
    })
}

/// Per-column affine normalization to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Tensor) -> Standardizer {
        let (n, d) = (x.rows() as f64, x.cols());
        let mut mean = vec![0.0; d];
        for r in 0..x.rows() {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in 0..x.rows() {
            for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, x: &mut Tensor) {
        let d = x.cols();
        for row in x.values_mut().chunks_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WeakPair {
    pub i: usize,
    pub j: usize,
    pub same_class: u8,
}

/// Pair-level supervision: whether two rows share a class, nothing more.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WeakPairSet {
    pub pairs: Vec<WeakPair>,
}

impl WeakPairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("i,j,same\n");
        for p in &self.pairs {
            let _ = writeln!(s, "{},{},{}", p.i, p.j, p.same_class);
        }
        s
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn parse_csv(text: &str, name: &str) -> Result<WeakPairSet> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: name.to_string(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols != ["i", "j", "same"] {
            return Err(perr(1, "header must be `i,j,same`".into()));
        }
        let mut pairs = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 3 {
                return Err(perr(lineno, format!("expected 3 columns, found {}", f.len())));
            }
            let parse = |s: &str| -> Result<usize> {
                s.parse()
                    .map_err(|_| perr(lineno, format!("invalid integer `{s}`")))
            };
            let (a, b, same) = (parse(f[0])?, parse(f[1])?, parse(f[2])?);
            if a == b {
                return Err(perr(lineno, "a pair must join two distinct rows".into()));
            }
            if same > 1 {
                return Err(perr(lineno, format!("same must be 0 or 1, got {same}")));
            }
            pairs.push(WeakPair {
                i: a,
                j: b,
                same_class: same as u8,
            });
        }
        Ok(WeakPairSet { pairs })
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<WeakPairSet> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, &path.display().to_string())
    }

    /// Rewrites source-row indices as training-pool positions of `split`.
    /// Pairs touching a held-out row are dropped; the count is returned.
    pub fn remap_to_pool(&self, split: &SSLSplit, source_rows: usize) -> Result<(WeakPairSet, usize)> {
        let span = split
            .labeled_rows
            .iter()
            .chain(&split.unlabeled_rows)
            .chain(&split.test_rows)
            .max()
            .map_or(0, |m| m + 1)
            .max(source_rows);
        let mut pos = vec![None; span];
        for (k, &r) in split
            .labeled_rows
            .iter()
            .chain(&split.unlabeled_rows)
            .enumerate()
        {
            pos[r] = Some(k);
        }
        let mut kept = Vec::with_capacity(self.pairs.len());
        let mut dropped = 0;
        for p in &self.pairs {
            if p.i >= source_rows || p.j >= source_rows {
                return Err(Error::InvalidArgument(format!(
                    "weak pair ({}, {}) out of range for {source_rows} rows",
                    p.i, p.j
                )));
            }
            match (pos[p.i], pos[p.j]) {
                (Some(i), Some(j)) => kept.push(WeakPair { i, j, ..*p }),
                _ => dropped += 1,
            }
        }
        Ok((WeakPairSet { pairs: kept }, dropped))
    }
}

/// Maps a flat index over the `n (n - 1) / 2` unordered pairs to `(i, j)`,
/// `i < j`.
fn unrank_pair(mut k: usize, n: usize) -> (usize, usize) {
    let mut i = 0;
    loop {
        let row = n - 1 - i;
        if k < row {
            return (i, i + 1 + k);
        }
        k -= row;
        i += 1;
    }
}

/// Samples `n_pairs` distinct unordered row pairs uniformly and records
/// whether each pair shares a class.
pub fn gen_weak_pairs(dataset: &Dataset, n_pairs: usize, rng: &mut Rng) -> Result<WeakPairSet> {
    let labels = dataset.hard_labels()?;
    let n = labels.len();
    let total = n * n.saturating_sub(1) / 2;
    if n_pairs > total {
        return Err(Error::InvalidArgument(format!(
            "{n_pairs} pairs requested but only {total} exist"
        )));
    }
    let pairs = index::sample(rng, total, n_pairs)
        .into_iter()
        .map(|k| {
            let (i, j) = unrank_pair(k, n);
            WeakPair {
                i,
                j,
                same_class: u8::from(labels[i] == labels[j]),
            }
        })
        .collect();
    Ok(WeakPairSet { pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use std::collections::HashSet;

    fn rng(seed: u64) -> Rng {
        stream(seed, Stream::Data)
    }

    #[test]
    fn two_moons_balanced_and_deterministic() {
        let d = gen_two_moons(100, 0.15, &mut rng(1)).unwrap();
        assert_eq!(d.labels.iter().filter(|y| **y == Some(0)).count(), 50);
        assert_eq!(d.labels.iter().filter(|y| **y == Some(1)).count(), 50);
        assert_eq!(d, gen_two_moons(100, 0.15, &mut rng(1)).unwrap());
        assert!(gen_two_moons(7, 0.1, &mut rng(1)).is_err());
    }

    /// Distance from a point to the half circle of radius 1 around `c`,
    /// on the side `up` (y >= c.y) or below.
    fn dist_to_arc(p: (f64, f64), c: (f64, f64), up: bool) -> f64 {
        let (dx, dy) = (p.0 - c.0, p.1 - c.1);
        if (dy >= 0.0) == up || dy == 0.0 {
            ((dx * dx + dy * dy).sqrt() - 1.0).abs()
        } else {
            let e1 = ((dx - 1.0).powi(2) + dy * dy).sqrt();
            let e2 = ((dx + 1.0).powi(2) + dy * dy).sqrt();
            e1.min(e2)
        }
    }

    #[test]
    fn noiseless_moons_lie_on_curves() {
        let d = gen_two_moons(200, 0.0, &mut rng(2)).unwrap();
        for r in 0..d.len() {
            let p = (d.features.row(r)[0], d.features.row(r)[1]);
            let d0 = dist_to_arc(p, (0.0, 0.0), true);
            let d1 = dist_to_arc(p, (1.0, 0.5), false);
            if d.labels[r] == Some(0) {
                assert!((p.0 * p.0 + p.1 * p.1 - 1.0).abs() < 1e-9);
            }
            let nearest = if d0 < d1 { 0 } else { 1 };
            assert_eq!(Some(nearest), d.labels[r]);
        }
    }

    #[test]
    fn csv_schema_mapping() {
        let d = parse_csv_dataset("f1,f2,label\n0.5,1,0\n2,3,-1\n4,5.25,1\n", "t", None).unwrap();
        assert_eq!(d.labels, vec![Some(0), None, Some(1)]);
        assert_eq!(d.num_classes, 2);
        assert!(matches!(
            parse_csv_dataset("f1,f2,label\n", "t", None),
            Err(Error::Parse { .. })
        ));
        match parse_csv_dataset("f1,f2,label\n1,2,0\n1,x,0\n", "t", None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(parse_csv_dataset("f1,f2,label\n1,2,0\n1,0\n", "t", None).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let d = gen_two_moons(40, 0.2, &mut rng(5)).unwrap();
        let mut d = d.subset("two-moons", &(0..40).collect::<Vec<_>>(), true);
        d.labels[3] = None;
        let back = parse_csv_dataset(&d.to_csv_string(), "two-moons", Some(2)).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn split_stratified_and_exhaustive() {
        let d = gen_two_moons(100, 0.1, &mut rng(3)).unwrap();
        let s = split_ssl(&d, 6, 0.2, true, &mut stream(3, Stream::Split)).unwrap();
        let lab = s.labeled.hard_labels().unwrap();
        assert_eq!(lab.iter().filter(|&&y| y == 0).count(), 3);
        assert_eq!(lab.iter().filter(|&&y| y == 1).count(), 3);
        let mut all: Vec<usize> = s
            .labeled_rows
            .iter()
            .chain(&s.unlabeled_rows)
            .chain(&s.test_rows)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(s.test.len(), 20);
        assert!(s.unlabeled.as_ref().unwrap().labels.iter().all(Option::is_none));
        assert_eq!(s, split_ssl(&d, 6, 0.2, true, &mut stream(3, Stream::Split)).unwrap());
    }

    #[test]
    fn split_boundaries() {
        let d = gen_two_moons(100, 0.1, &mut rng(3)).unwrap();
        let s = split_ssl(&d, 80, 0.2, false, &mut stream(3, Stream::Split)).unwrap();
        assert!(s.unlabeled.is_none());
        assert!(split_ssl(&d, 81, 0.2, false, &mut stream(3, Stream::Split)).is_err());
        assert!(split_ssl(&d, 5, 0.2, true, &mut stream(3, Stream::Split)).is_err());
    }

    #[test]
    fn standardize_uses_training_rows() {
        let d = gen_two_moons(200, 0.1, &mut rng(4)).unwrap();
        let mut s = split_ssl(&d, 10, 0.25, true, &mut stream(4, Stream::Split)).unwrap();
        s.standardize();
        let pool = Tensor::vstack(&[&s.labeled.features, &s.unlabeled.as_ref().unwrap().features])
            .unwrap();
        let again = Standardizer::fit(&pool);
        assert!(again.mean.iter().all(|m| m.abs() < 1e-12));
        assert!(again.scale.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn weak_pairs_cases() {
        let one_class = Dataset::new(
            "c",
            2,
            Tensor::zeros(vec![20, 1]),
            vec![Some(1); 20],
        )
        .unwrap();
        let w = gen_weak_pairs(&one_class, 50, &mut rng(1)).unwrap();
        assert!(w.pairs.iter().all(|p| p.same_class == 1 && p.i < p.j));
        assert!(gen_weak_pairs(&one_class, 0, &mut rng(1)).unwrap().is_empty());
        assert!(gen_weak_pairs(&one_class, 191, &mut rng(1)).is_err());
        let all = gen_weak_pairs(&one_class, 190, &mut rng(1)).unwrap();
        let set: HashSet<(usize, usize)> = all.pairs.iter().map(|p| (p.i, p.j)).collect();
        assert_eq!(set.len(), 190);
    }

    #[test]
    fn weak_pair_same_fraction_balanced_ten_classes() {
        let n = 1000;
        let d = Dataset::new(
            "ten",
            10,
            Tensor::zeros(vec![n, 1]),
            (0..n).map(|i| Some(i % 10)).collect(),
        )
        .unwrap();
        let w = gen_weak_pairs(&d, 10_000, &mut rng(9)).unwrap();
        let frac = w.pairs.iter().filter(|p| p.same_class == 1).count() as f64 / 1e4;
        // (n/K - 1) / (n - 1)
        let expected = (100.0 - 1.0) / 999.0;
        assert!((frac - expected).abs() < 0.02, "{frac}");
    }

    #[test]
    fn weak_pair_csv_and_remap() {
        let w = WeakPairSet::parse_csv("i,j,same\n0,3,1\n2,1,0\n", "w").unwrap();
        assert_eq!(WeakPairSet::parse_csv(&w.to_csv_string(), "w").unwrap(), w);
        assert!(WeakPairSet::parse_csv("i,j,same\n1,1,0\n", "w").is_err());
        let d = gen_two_moons(10, 0.1, &mut rng(2)).unwrap();
        let s = split_ssl(&d, 2, 0.2, true, &mut stream(1, Stream::Split)).unwrap();
        let test_row = s.test_rows[0];
        let keep_a = s.labeled_rows[0];
        let keep_b = s.unlabeled_rows[0];
        let w = WeakPairSet {
            pairs: vec![
                WeakPair { i: keep_a, j: keep_b, same_class: 1 },
                WeakPair { i: keep_a, j: test_row, same_class: 0 },
            ],
        };
        let (m, dropped) = w.remap_to_pool(&s, 10).unwrap();
        assert_eq!(dropped, 1);
        assert_eq!(m.pairs[0].i, 0);
        assert_eq!(m.pairs[0].j, s.labeled_rows.len());
        let far = WeakPairSet {
            pairs: vec![WeakPair { i: 0, j: 50, same_class: 0 }],
        };
        assert!(far.remap_to_pool(&s, 10).is_err());
    }
}
