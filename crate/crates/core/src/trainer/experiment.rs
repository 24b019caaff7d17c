//! Multi-seed runs of the method variants on paired splits.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, train, train_weak_label_mode, TrainConfig};
use crate::data::{split_ssl, Dataset, SSLSplit, Standardizer, WeakPairSet};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

/// How each seed's split is drawn from the source dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub n_labeled: usize,
    pub test_fraction: f64,
    pub stratified: bool,
    pub standardize: bool,
    /// Draw a new split per seed; otherwise every seed shares the split of
    /// the first one.
    pub fresh_per_seed: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            n_labeled: 100,
            test_fraction: 0.2,
            stratified: true,
            standardize: true,
            fresh_per_seed: true,
        }
    }
}

/// Split of `dataset` under `seed`, standardized on the training pool when
/// requested.
pub fn prepare_split(
    dataset: &Dataset,
    spec: &SplitSpec,
    seed: u64,
) -> Result<(SSLSplit, Option<Standardizer>)> {
    let mut split = split_ssl(
        dataset,
        spec.n_labeled,
        spec.test_fraction,
        spec.stratified,
        &mut stream(seed, Stream::Split),
    )?;
    let st = spec.standardize.then(|| split.standardize());
    Ok((split, st))
}

/// Variants compared in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Cross-entropy on the labeled rows only.
    Supervised,
    /// Adds the teacher consistency term.
    MeanTeacher,
    /// Mean-Teacher plus the similarity and co-training terms.
    Mlsn,
    /// [`Method::Mlsn`] with pair targets taken from weak labels.
    WeakLabel,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Supervised => "supervised",
            Method::MeanTeacher => "mt",
            Method::Mlsn => "mlsn",
            Method::WeakLabel => "weak",
        }
    }

    pub fn from_name(s: &str) -> Option<Method> {
        match s {
            "supervised" => Some(Method::Supervised),
            "mt" => Some(Method::MeanTeacher),
            "mlsn" => Some(Method::Mlsn),
            "weak" => Some(Method::WeakLabel),
            _ => None,
        }
    }

    /// `base` with the branch flags of this method.
    pub fn configure(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        let (cons, sim, cot) = match self {
            Method::Supervised => (false, false, false),
            Method::MeanTeacher => (true, false, false),
            Method::Mlsn | Method::WeakLabel => (true, true, true),
        };
        c.enable_consistency = cons;
        c.enable_similarity = sim;
        c.enable_cotraining = cot;
        c
    }
}

/// Final test errors of one method over a seed list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub method: String,
    pub seeds: Vec<u64>,
    pub errors: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
    pub n_runs: usize,
}

impl ExperimentSummary {
    pub fn from_errors(method: &str, seeds: Vec<u64>, errors: Vec<f64>) -> Result<Self> {
        let n = errors.len();
        if n == 0 || seeds.len() != n {
            return Err(Error::InvalidArgument(
                "a summary needs one error per seed and at least one seed".into(),
            ));
        }
        let mean = errors.iter().sum::<f64>() / n as f64;
        let std = if n == 1 {
            0.0
        } else {
            (errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Ok(Self {
            method: method.to_string(),
            seeds,
            errors,
            mean,
            std,
            n_runs: n,
        })
    }
}

/// Data shared by every run of an experiment. Weak pairs index rows of
/// `dataset` and are remapped onto each seed's training pool.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub dataset: Dataset,
    pub split: SplitSpec,
    pub weak_pairs: Option<WeakPairSet>,
}

fn run_one(config: &TrainConfig, data: &ExperimentData, method: Method, seed: u64, split_seed: u64) -> Result<f64> {
    let (split, _) = prepare_split(&data.dataset, &data.split, split_seed)?;
    let mut c = method.configure(config);
    c.seed = seed;
    c.record_batches = false;
    let outcome = if method == Method::WeakLabel {
        let weak = data.weak_pairs.as_ref().ok_or_else(|| {
            Error::InvalidArgument("the weak method needs a weak pair file".into())
        })?;
        let (pool_pairs, _) = weak.remap_to_pool(&split, data.dataset.len())?;
        train_weak_label_mode(&c, &split, &pool_pairs)?
    } else {
        train(&c, &split)?
    };
    evaluate(outcome.eval_model(c.eval_with), &split.test)
}

/// Trains `method` once per seed (in parallel) and summarizes the final
/// test errors. Seed `s` uses split seed `s`, or the first seed when splits
/// are shared, so different methods see paired splits.
pub fn run_experiment(
    config: &TrainConfig,
    data: &ExperimentData,
    method: Method,
    seeds: &[u64],
) -> Result<ExperimentSummary> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one seed is required".into()));
    }
    let errors = seeds
        .par_iter()
        .map(|&s| {
            let split_seed = if data.split.fresh_per_seed { s } else { seeds[0] };
            run_one(config, data, method, s, split_seed)
        })
        .collect::<Result<Vec<f64>>>()?;
    ExperimentSummary::from_errors(method.name(), seeds.to_vec(), errors)
}

/// [`run_experiment`] for several methods on the same seeds.
pub fn run_methods(
    config: &TrainConfig,
    data: &ExperimentData,
    methods: &[Method],
    seeds: &[u64],
) -> Result<Vec<ExperimentSummary>> {
    methods
        .par_iter()
        .map(|&m| run_experiment(config, data, m, seeds))
        .collect()
}

/// One row per method: mean ± std in percent, then the per-seed errors.
pub fn format_summary_table(rows: &[ExperimentSummary]) -> String {
    let width = rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max(6);
    let mut s = String::new();
    let _ = writeln!(s, "{:<width$}  runs  error % (mean ± std)  per-seed %", "method");
    for r in rows {
        let per: Vec<String> = r.errors.iter().map(|e| format!("{:.2}", 100.0 * e)).collect();
        let _ = writeln!(
            s,
            "{:<width$}  {:>4}  {:>8.2} ± {:<10.2}  {}",
            r.method,
            r.n_runs,
            100.0 * r.mean,
            100.0 * r.std,
            per.join(" ")
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std_by_hand() {
        let s = ExperimentSummary::from_errors("x", vec![1, 2, 3], vec![0.1, 0.2, 0.3]).unwrap();
        assert!((s.mean - 0.2).abs() < 1e-12);
        assert!((s.std - 0.1).abs() < 1e-12);
        assert_eq!(s.n_runs, 3);
    }

    #[test]
    fn single_run_has_zero_std() {
        let s = ExperimentSummary::from_errors("x", vec![4], vec![0.37]).unwrap();
        assert_eq!(s.std, 0.0);
        assert_eq!(s.mean, 0.37);
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::Supervised, Method::MeanTeacher, Method::Mlsn, Method::WeakLabel] {
            assert_eq!(Method::from_name(m.name()), Some(m));
        }
        assert_eq!(Method::from_name("pi"), None);
    }

    #[test]
    fn table_has_one_row_per_method() {
        let rows = vec![
            ExperimentSummary::from_errors("supervised", vec![0], vec![0.25]).unwrap(),
            ExperimentSummary::from_errors("mlsn", vec![0], vec![0.125]).unwrap(),
        ];
        let t = format_summary_table(&rows);
        assert_eq!(t.lines().count(), 3);
        assert!(t.contains("25.00 ±"));
    }
}
