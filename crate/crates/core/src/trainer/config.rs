//! Training hyperparameters and their flat `key = value` text form.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::ModelSpec;
use crate::objectives::ScheduleSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    SgdMomentum,
    Sgd,
}

/// Which parameters `evaluate` reads after training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalWith {
    Teacher,
    Student,
}

/// Rows of the batch that enter the consistency loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConsistencyScope {
    Both,
    Labeled,
    Unlabeled,
}

/// Confidence that admits an unlabeled row into the co-training loss: the
/// largest entry of its similarity soft label, or the classifier's own
/// max probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CotrainingGate {
    Similarity,
    Classifier,
}

/// Layer widths; input width and class count come from the data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub hidden_widths: Vec<usize>,
    pub feature_dim: usize,
    pub classifier_hidden: Vec<usize>,
    pub similarity_hidden: Vec<usize>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            hidden_widths: vec![64, 64],
            feature_dim: 32,
            classifier_hidden: Vec::new(),
            similarity_hidden: vec![32],
        }
    }
}

impl ArchConfig {
    pub fn spec(&self, input_dim: usize, num_classes: usize) -> ModelSpec {
        ModelSpec::new(
            input_dim,
            self.hidden_widths.clone(),
            self.feature_dim,
            self.classifier_hidden.clone(),
            self.similarity_hidden.clone(),
            num_classes,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub labeled_batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub pairs_per_batch: usize,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub tau: f64,
    pub consistency: ScheduleSpec,
    pub similarity: ScheduleSpec,
    pub cotraining: ScheduleSpec,
    pub noise_sigma: f64,
    pub alpha_max: f64,
    pub seed: u64,
    pub eval_with: EvalWith,
    pub enable_consistency: bool,
    pub enable_similarity: bool,
    pub enable_cotraining: bool,
    pub consistency_scope: ConsistencyScope,
    pub cotraining_gate: CotrainingGate,
    /// Weak-label mode only: add in-batch pseudo-pairs once the similarity
    /// ramp is complete.
    pub weak_mix_pseudo: bool,
    pub model: ArchConfig,
    /// Keep the per-step batch indices in the outcome (tests, debugging).
    #[serde(skip)]
    pub record_batches: bool,
}

/// Ramp length used when a config does not set one: 40% of the epochs.
pub fn default_ramp(epochs: usize) -> usize {
    (epochs * 2).div_ceil(5)
}

impl Default for TrainConfig {
    fn default() -> Self {
        let epochs = 60;
        let ramp = default_ramp(epochs);
        Self {
            epochs,
            batch_size: 64,
            labeled_batch_size: 32,
            learning_rate: 0.05,
            optimizer: OptimizerKind::SgdMomentum,
            momentum: 0.9,
            pairs_per_batch: 128,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            tau: 0.95,
            consistency: ScheduleSpec { w_max: 1.0, ramp_epochs: ramp },
            similarity: ScheduleSpec { w_max: 1.0, ramp_epochs: ramp },
            cotraining: ScheduleSpec { w_max: 0.3, ramp_epochs: ramp },
            noise_sigma: 0.1,
            alpha_max: 0.99,
            seed: 0,
            eval_with: EvalWith::Teacher,
            enable_consistency: true,
            enable_similarity: true,
            enable_cotraining: true,
            consistency_scope: ConsistencyScope::Both,
            cotraining_gate: CotrainingGate::Similarity,
            weak_mix_pseudo: false,
            model: ArchConfig::default(),
            record_batches: false,
        }
    }
}

/// Keys accepted by [`TrainConfig::set`], in the order they are written.
pub const TRAIN_KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "labeled_batch_size",
    "learning_rate",
    "optimizer",
    "momentum",
    "pairs_per_batch",
    "focal_gamma",
    "focal_alpha",
    "tau",
    "lambda1_max",
    "lambda1_ramp",
    "lambda2_max",
    "lambda2_ramp",
    "lambda3_max",
    "lambda3_ramp",
    "noise_sigma",
    "alpha_max",
    "seed",
    "eval_with",
    "enable_consistency",
    "enable_similarity",
    "enable_cotraining",
    "consistency_scope",
    "cotraining_gate",
    "weak_mix_pseudo",
    "hidden_widths",
    "feature_dim",
    "classifier_hidden",
    "similarity_hidden",
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
    v.parse()
        .map_err(|_| format!("{key}: cannot parse `{v}`"))
}

fn parse_bool(key: &str, v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got `{v}`")),
    }
}

fn parse_widths(key: &str, v: &str) -> std::result::Result<Vec<usize>, String> {
    if v.is_empty() || v == "none" {
        return Ok(Vec::new());
    }
    v.split(',').map(|w| parse_num(key, w.trim())).collect()
}

fn widths(v: &[usize]) -> String {
    if v.is_empty() {
        "none".into()
    } else {
        v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    }
}

impl TrainConfig {
    /// Sets one key from its text value. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key {
            "epochs" => self.epochs = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "labeled_batch_size" => self.labeled_batch_size = parse_num(key, v)?,
            "learning_rate" => self.learning_rate = parse_num(key, v)?,
            "optimizer" => {
                self.optimizer = match v {
                    "sgd-momentum" => OptimizerKind::SgdMomentum,
                    "sgd" => OptimizerKind::Sgd,
                    _ => return Err(format!("optimizer: expected sgd-momentum or sgd, got `{v}`")),
                }
            }
            "momentum" => self.momentum = parse_num(key, v)?,
            "pairs_per_batch" => self.pairs_per_batch = parse_num(key, v)?,
            "focal_gamma" => self.focal_gamma = parse_num(key, v)?,
            "focal_alpha" => self.focal_alpha = parse_num(key, v)?,
            "tau" => self.tau = parse_num(key, v)?,
            "lambda1_max" => self.consistency.w_max = parse_num(key, v)?,
            "lambda1_ramp" => self.consistency.ramp_epochs = parse_num(key, v)?,
            "lambda2_max" => self.similarity.w_max = parse_num(key, v)?,
            "lambda2_ramp" => self.similarity.ramp_epochs = parse_num(key, v)?,
            "lambda3_max" => self.cotraining.w_max = parse_num(key, v)?,
            "lambda3_ramp" => self.cotraining.ramp_epochs = parse_num(key, v)?,
            "noise_sigma" => self.noise_sigma = parse_num(key, v)?,
            "alpha_max" => self.alpha_max = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "eval_with" => {
                self.eval_with = match v {
                    "teacher" => EvalWith::Teacher,
                    "student" => EvalWith::Student,
                    _ => return Err(format!("eval_with: expected teacher or student, got `{v}`")),
                }
            }
            "enable_consistency" => self.enable_consistency = parse_bool(key, v)?,
            "enable_similarity" => self.enable_similarity = parse_bool(key, v)?,
            "enable_cotraining" => self.enable_cotraining = parse_bool(key, v)?,
            "consistency_scope" => {
                self.consistency_scope = match v {
                    "both" => ConsistencyScope::Both,
                    "labeled" => ConsistencyScope::Labeled,
                    "unlabeled" => ConsistencyScope::Unlabeled,
                    _ => {
                        return Err(format!(
                            "consistency_scope: expected both, labeled or unlabeled, got `{v}`"
                        ))
                    }
                }
            }
            "cotraining_gate" => {
                self.cotraining_gate = match v {
                    "similarity" => CotrainingGate::Similarity,
                    "classifier" => CotrainingGate::Classifier,
                    _ => {
                        return Err(format!(
                            "cotraining_gate: expected similarity or classifier, got `{v}`"
                        ))
                    }
                }
            }
            "weak_mix_pseudo" => self.weak_mix_pseudo = parse_bool(key, v)?,
            "hidden_widths" => self.model.hidden_widths = parse_widths(key, v)?,
            "feature_dim" => self.model.feature_dim = parse_num(key, v)?,
            "classifier_hidden" => self.model.classifier_hidden = parse_widths(key, v)?,
            "similarity_hidden" => self.model.similarity_hidden = parse_widths(key, v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Every key with its current value, in [`TRAIN_KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let b = |x: bool| x.to_string();
        let vals = vec![
            self.epochs.to_string(),
            self.batch_size.to_string(),
            self.labeled_batch_size.to_string(),
            format!("{:?}", self.learning_rate),
            match self.optimizer {
                OptimizerKind::SgdMomentum => "sgd-momentum".into(),
                OptimizerKind::Sgd => "sgd".into(),
            },
            format!("{:?}", self.momentum),
            self.pairs_per_batch.to_string(),
            format!("{:?}", self.focal_gamma),
            format!("{:?}", self.focal_alpha),
            format!("{:?}", self.tau),
            format!("{:?}", self.consistency.w_max),
            self.consistency.ramp_epochs.to_string(),
            format!("{:?}", self.similarity.w_max),
            self.similarity.ramp_epochs.to_string(),
            format!("{:?}", self.cotraining.w_max),
            self.cotraining.ramp_epochs.to_string(),
            format!("{:?}", self.noise_sigma),
            format!("{:?}", self.alpha_max),
            self.seed.to_string(),
            match self.eval_with {
                EvalWith::Teacher => "teacher".into(),
                EvalWith::Student => "student".into(),
            },
            b(self.enable_consistency),
            b(self.enable_similarity),
            b(self.enable_cotraining),
            match self.consistency_scope {
                ConsistencyScope::Both => "both".into(),
                ConsistencyScope::Labeled => "labeled".into(),
                ConsistencyScope::Unlabeled => "unlabeled".into(),
            },
            match self.cotraining_gate {
                CotrainingGate::Similarity => "similarity".into(),
                CotrainingGate::Classifier => "classifier".into(),
            },
            b(self.weak_mix_pseudo),
            widths(&self.model.hidden_widths),
            self.model.feature_dim.to_string(),
            widths(&self.model.classifier_hidden),
            widths(&self.model.similarity_hidden),
        ];
        TRAIN_KEYS.iter().copied().zip(vals).collect()
    }

    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Checks every field and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                errs.push(msg.to_string());
            }
        };
        need(self.batch_size > 0, "batch_size must be positive");
        need(self.labeled_batch_size > 0, "labeled_batch_size must be positive");
        need(
            self.labeled_batch_size <= self.batch_size,
            "labeled_batch_size must not exceed batch_size",
        );
        need(
            self.learning_rate.is_finite() && self.learning_rate > 0.0,
            "learning_rate must be positive",
        );
        need(
            (0.0..1.0).contains(&self.momentum),
            "momentum must lie in [0, 1)",
        );
        need(
            self.focal_gamma.is_finite() && self.focal_gamma >= 0.0,
            "focal_gamma must be non-negative",
        );
        need(
            (0.0..=1.0).contains(&self.focal_alpha),
            "focal_alpha must lie in [0, 1]",
        );
        need((0.0..=1.0).contains(&self.tau), "tau must lie in [0, 1]");
        for (name, s) in [
            ("lambda1_max", &self.consistency),
            ("lambda2_max", &self.similarity),
            ("lambda3_max", &self.cotraining),
        ] {
            need(
                s.w_max.is_finite() && s.w_max >= 0.0,
                &format!("{name} must be non-negative"),
            );
        }
        need(
            self.noise_sigma.is_finite() && self.noise_sigma >= 0.0,
            "noise_sigma must be non-negative",
        );
        need(
            (0.0..1.0).contains(&self.alpha_max),
            "alpha_max must lie in [0, 1)",
        );
        need(
            !self.model.hidden_widths.is_empty(),
            "hidden_widths needs at least one layer",
        );
        need(self.model.feature_dim >= 2, "feature_dim must be at least 2");
        let all = self
            .model
            .hidden_widths
            .iter()
            .chain(&self.model.classifier_hidden)
            .chain(&self.model.similarity_hidden);
        need(all.into_iter().all(|&w| w > 0), "layer widths must be positive");
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_form_round_trips() {
        let mut c = TrainConfig {
            learning_rate: 0.1 + 0.2,
            eval_with: EvalWith::Student,
            ..TrainConfig::default()
        };
        c.model.classifier_hidden = vec![16];
        let mut back = TrainConfig::default();
        for (k, v) in c.entries() {
            back.set(k, &v).unwrap();
        }
        assert_eq!(back, c);
    }

    #[test]
    fn validation_lists_every_problem() {
        let c = TrainConfig {
            labeled_batch_size: 100,
            learning_rate: 0.0,
            tau: 2.0,
            ..TrainConfig::default()
        };
        match c.validate() {
            Err(Error::Config(errs)) => assert_eq!(errs.len(), 3, "{errs:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(TrainConfig::default().set("epoch", "3").is_err());
        assert!(TrainConfig::default().set("optimizer", "adam").is_err());
    }

    #[test]
    fn default_ramp_is_forty_percent() {
        assert_eq!(default_ramp(60), 24);
        assert_eq!(default_ramp(10), 4);
        assert_eq!(default_ramp(0), 0);
    }
}
