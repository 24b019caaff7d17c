//! The mini-batch training loop.
//!
//! Each step draws a labeled batch `BL` (cycled, reshuffled on exhaustion)
//! and an unlabeled batch `BU` (one pass per epoch), then combines
//!
//! * `L_C`: cross-entropy of the student on `BL`,
//! * `L_T`: squared distance between student and teacher predictions on
//!   independently perturbed inputs,
//! * `L_S`: focal loss of the similarity network on sampled pairs,
//! * `L_SC`: soft cross-entropy against class-center similarity targets,
//!
//! into `L_C + λ1 L_T + λ2 L_S + λ3 L_SC`, takes one optimizer step and
//! updates the EMA teacher.

mod config;
mod experiment;
mod export;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::{Dataset, SSLSplit, WeakPairSet};
use crate::error::{Error, Result};
use crate::networks::{BoundModel, ModelSpec, ModelState};
use crate::objectives::{
    consistency_loss, cross_entropy, ramp_weight, similarity_loss, soft_cross_entropy, total_loss,
    LossBreakdown,
};
use crate::pseudo_labels::{
    argmax, sample_pairs, select_class_centers, soft_labels, BatchLabels, PairSample, PairSource,
};
use crate::rng::{stream, Rng, Stream};
use crate::teacher::{perturb, TeacherState};
use crate::tensor::Tensor;

pub use config::{
    default_ramp, ArchConfig, ConsistencyScope, CotrainingGate, EvalWith, OptimizerKind, TrainConfig, TRAIN_KEYS,
};
pub use experiment::{
    format_summary_table, prepare_split, run_experiment, run_methods, ExperimentData,
    ExperimentSummary, Method, SplitSpec,
};
pub use export::{export_features, pca_2d, FeatureExport};

/// Per-epoch averages of the loss terms plus error rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub l_c: f64,
    pub l_t: f64,
    pub l_s: f64,
    pub l_sc: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub train_error: f64,
    pub test_error: f64,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str =
        "epoch,l_c,l_t,l_s,l_sc,total,lambda1,lambda2,lambda3,train_error,test_error";

    pub fn to_csv_line(&self) -> String {
        let f = |v: f64| format!("{v:.12e}");
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            f(self.l_c),
            f(self.l_t),
            f(self.l_s),
            f(self.l_sc),
            f(self.total),
            f(self.lambda1),
            f(self.lambda2),
            f(self.lambda3),
            f(self.train_error),
            f(self.test_error)
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(MetricsRow::CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv_line());
        s.push('\n');
    }
    s
}

/// Labeled and unlabeled indices consumed by one step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchRecord {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub student: ModelState,
    pub teacher: TeacherState,
    pub metrics: Vec<MetricsRow>,
    /// Filled only when `TrainConfig::record_batches` is set.
    pub batches: Vec<BatchRecord>,
}

impl TrainOutcome {
    /// The model selected by `eval_with`.
    pub fn eval_model(&self, eval_with: EvalWith) -> &ModelState {
        match eval_with {
            EvalWith::Teacher => &self.teacher.params,
            EvalWith::Student => &self.student,
        }
    }
}

/// Fraction of rows whose argmax prediction differs from the label.
pub fn evaluate(model: &ModelState, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty set".into()));
    }
    let labels = test.hard_labels()?;
    let probs = model.predict(&test.features)?;
    let wrong = (0..labels.len())
        .filter(|&r| argmax(probs.row(r)) != labels[r])
        .count();
    Ok(wrong as f64 / labels.len() as f64)
}

/// SGD, optionally with heavy-ball momentum `v <- μ v + g; θ <- θ - lr v`.
#[derive(Debug, Clone)]
struct Optimizer {
    lr: f64,
    momentum: Option<f64>,
    velocity: Vec<Vec<f64>>,
}

impl Optimizer {
    fn new(config: &TrainConfig) -> Self {
        Self {
            lr: config.learning_rate,
            momentum: match config.optimizer {
                OptimizerKind::SgdMomentum => Some(config.momentum),
                OptimizerKind::Sgd => None,
            },
            velocity: Vec::new(),
        }
    }

    /// Applies and clears the gradients accumulated on `model`.
    fn step(&mut self, model: &mut ModelState) {
        let mut slot = 0;
        for set in model.param_sets_mut() {
            for (_, t) in set.iter_mut() {
                let Some(g) = t.grad().map(<[f64]>::to_vec) else {
                    slot += 1;
                    continue;
                };
                if self.velocity.len() <= slot {
                    self.velocity.push(vec![0.0; g.len()]);
                }
                let v = &mut self.velocity[slot];
                let lr = self.lr;
                match self.momentum {
                    Some(mu) => {
                        for ((p, vi), gi) in t.values_mut().iter_mut().zip(v.iter_mut()).zip(&g) {
                            *vi = mu * *vi + gi;
                            *p -= lr * *vi;
                        }
                    }
                    None => {
                        for (p, gi) in t.values_mut().iter_mut().zip(&g) {
                            *p -= lr * gi;
                        }
                    }
                }
                t.zero_grad();
                slot += 1;
            }
        }
    }
}

/// Draws labeled indices in reshuffled passes over the labeled set.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    fn new(n: usize, rng: &mut Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    fn take(&mut self, k: usize, rng: &mut Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Shared batch schedule so that every training loop sees the same batches
/// for the same seed.
struct BatchPlan {
    labeled: Cycler,
    labeled_rng: Rng,
    unlabeled_rng: Rng,
    n_unlabeled: usize,
    lb: usize,
    bu: usize,
    perm: Vec<usize>,
}

impl BatchPlan {
    fn new(config: &TrainConfig, split: &SSLSplit) -> Self {
        let mut labeled_rng = stream(config.seed, Stream::LabeledShuffle);
        let labeled = Cycler::new(split.labeled.len(), &mut labeled_rng);
        Self {
            labeled,
            labeled_rng,
            unlabeled_rng: stream(config.seed, Stream::UnlabeledShuffle),
            n_unlabeled: split.unlabeled.as_ref().map_or(0, Dataset::len),
            lb: config.labeled_batch_size,
            bu: config.batch_size - config.labeled_batch_size,
            perm: Vec::new(),
        }
    }

    fn steps_per_epoch(&self) -> usize {
        if self.n_unlabeled > 0 && self.bu > 0 {
            self.n_unlabeled.div_ceil(self.bu)
        } else {
            self.labeled.order.len().div_ceil(self.lb)
        }
    }

    fn start_epoch(&mut self) {
        self.perm = (0..self.n_unlabeled).collect();
        self.perm.shuffle(&mut self.unlabeled_rng);
    }

    fn batch(&mut self, step: usize) -> BatchRecord {
        let labeled = self.labeled.take(self.lb, &mut self.labeled_rng);
        let lo = (step * self.bu).min(self.n_unlabeled);
        let hi = ((step + 1) * self.bu).min(self.n_unlabeled);
        BatchRecord {
            labeled,
            unlabeled: self.perm[lo..hi].to_vec(),
        }
    }
}

fn check_inputs(config: &TrainConfig, split: &SSLSplit) -> Result<ModelSpec> {
    config.validate()?;
    if split.labeled.is_empty() {
        return Err(Error::InvalidArgument("the labeled set is empty".into()));
    }
    let k = split.labeled.num_classes;
    Ok(config.model.spec(split.labeled.dim(), k))
}

/// Builds a trainable graph over `x`, returning (graph, bound model,
/// features, probabilities).
fn student_forward(
    model: &ModelState,
    x: Tensor,
) -> Result<(Graph, BoundModel, crate::autodiff::NodeId, crate::autodiff::NodeId)> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, true)?;
    let xin = g.input(x)?;
    let feats = bound.features(&mut g, xin)?;
    let probs = bound.class_probs(&mut g, feats)?;
    Ok((g, bound, feats, probs))
}

/// Runs the full objective. See the module docs.
pub fn train(config: &TrainConfig, split: &SSLSplit) -> Result<TrainOutcome> {
    run(config, split, None)
}

/// Like [`train`], except that the pairs for `L_S` are drawn from
/// `weak_pairs`, whose indices address the training pool (labeled rows
/// first, then unlabeled rows). With `weak_mix_pseudo` set, in-batch
/// pseudo-pairs are added once the similarity ramp has completed.
pub fn train_weak_label_mode(
    config: &TrainConfig,
    split: &SSLSplit,
    weak_pairs: &WeakPairSet,
) -> Result<TrainOutcome> {
    let pool = split.labeled.len() + split.unlabeled.as_ref().map_or(0, Dataset::len);
    if let Some(p) = weak_pairs
        .pairs
        .iter()
        .find(|p| p.i >= pool || p.j >= pool || p.i == p.j)
    {
        return Err(Error::InvalidArgument(format!(
            "weak pair ({}, {}) is invalid for a training pool of {pool} rows",
            p.i, p.j
        )));
    }
    run(config, split, Some(weak_pairs))
}

#[derive(Default)]
struct StepLosses {
    l_c: f64,
    l_t: f64,
    l_s: f64,
    l_sc: f64,
}

fn run(config: &TrainConfig, split: &SSLSplit, weak: Option<&WeakPairSet>) -> Result<TrainOutcome> {
    let spec = check_inputs(config, split)?;
    let k = spec.classifier.num_classes;
    let mut student = ModelState::init(spec, &mut stream(config.seed, Stream::Init))?;
    let mut teacher = TeacherState::new(&student, config.alpha_max, config.noise_sigma)?;
    let mut optimizer = Optimizer::new(config);
    let mut plan = BatchPlan::new(config, split);
    let mut pair_rng = stream(config.seed, Stream::Pairs);
    let mut center_rng = stream(config.seed, Stream::Centers);
    let mut noise_student = stream(config.seed, Stream::NoiseStudent);
    let mut noise_teacher = stream(config.seed, Stream::NoiseTeacher);

    let labeled_y = split.labeled.hard_labels()?;
    let n_labeled = split.labeled.len();
    let empty_unlabeled;
    let unlabeled = match &split.unlabeled {
        Some(u) => u,
        None => {
            empty_unlabeled = Dataset {
                name: "unlabeled".into(),
                num_classes: k,
                features: Tensor::zeros(vec![1, split.labeled.dim()]),
                labels: Vec::new(),
            };
            &empty_unlabeled
        }
    };
    let pool_row = |r: usize| -> &[f64] {
        if r < n_labeled {
            split.labeled.features.row(r)
        } else {
            unlabeled.features.row(r - n_labeled)
        }
    };

    let consistency_on = config.enable_consistency && config.consistency.w_max > 0.0;
    let similarity_on = config.enable_similarity && config.similarity.w_max > 0.0;
    let cotraining_on = config.enable_cotraining && config.cotraining.w_max > 0.0;

    let mut metrics = Vec::with_capacity(config.epochs);
    let mut batches = Vec::new();
    let steps = plan.steps_per_epoch();

    for epoch in 0..config.epochs {
        let lambda1 = if consistency_on { ramp_weight(&config.consistency, epoch) } else { 0.0 };
        let lambda2 = if similarity_on { ramp_weight(&config.similarity, epoch) } else { 0.0 };
        let lambda3 = if cotraining_on { ramp_weight(&config.cotraining, epoch) } else { 0.0 };
        let mix_pseudo = config.weak_mix_pseudo && epoch >= config.similarity.ramp_epochs;
        plan.start_epoch();
        let mut sums = StepLosses::default();

        for step in 0..steps {
            let record = plan.batch(step);
            let lb = record.labeled.len();
            let uses_unlabeled = consistency_on || cotraining_on || (similarity_on && weak.is_none()) || mix_pseudo;
            let bu_rows: &[usize] = if uses_unlabeled { &record.unlabeled } else { &[] };
            let bu = bu_rows.len();

            // Weak pairs address pool rows that are appended after BL and BU.
            let mut weak_batch: Vec<PairSample> = Vec::new();
            let mut extra_rows: Vec<usize> = Vec::new();
            if let (Some(w), true) = (weak, similarity_on) {
                let take = config.pairs_per_batch.min(w.len());
                let base = lb + bu;
                for idx in index::sample(&mut pair_rng, w.len(), take) {
                    let p = w.pairs[idx];
                    let mut slot = |r: usize| -> usize {
                        match extra_rows.iter().position(|&e| e == r) {
                            Some(pos) => base + pos,
                            None => {
                                extra_rows.push(r);
                                base + extra_rows.len() - 1
                            }
                        }
                    };
                    let (i, j) = (slot(p.i), slot(p.j));
                    weak_batch.push(PairSample {
                        i,
                        j,
                        target: p.same_class,
                        source: PairSource::WeakLabel,
                    });
                }
            }

            let mut rows: Vec<&[f64]> = Vec::with_capacity(lb + bu + extra_rows.len());
            rows.extend(record.labeled.iter().map(|&r| split.labeled.features.row(r)));
            rows.extend(bu_rows.iter().map(|&r| unlabeled.features.row(r)));
            rows.extend(extra_rows.iter().map(|&r| pool_row(r)));
            let clean = Tensor::matrix(rows.len(), split.labeled.dim(), rows.concat())?;
            let x_student = perturb(&clean, config.noise_sigma, &mut noise_student)?;

            let (mut g, bound, feats, probs) = student_forward(&student, x_student)?;
            let n_rows = g.value(probs).rows();
            let y_batch: Vec<usize> = record.labeled.iter().map(|&r| labeled_y[r]).collect();

            let probs_bl = if n_rows == lb {
                probs
            } else {
                g.gather_rows(probs, &(0..lb).collect::<Vec<_>>())?
            };
            let l_c = cross_entropy(&mut g, probs_bl, &y_batch)?;
            let mut total = l_c;
            let mut losses = StepLosses {
                l_c: g.value(l_c).item(),
                ..StepLosses::default()
            };

            if consistency_on {
                let scope: Vec<usize> = match config.consistency_scope {
                    ConsistencyScope::Both => (0..lb + bu).collect(),
                    ConsistencyScope::Labeled => (0..lb).collect(),
                    ConsistencyScope::Unlabeled => (lb..lb + bu).collect(),
                };
                if !scope.is_empty() {
                    let teacher_in = clean.select_rows(&scope);
                    let teacher_probs = teacher.predict(&teacher_in, &mut noise_teacher)?;
                    let student_probs = if scope.len() == n_rows {
                        probs
                    } else {
                        g.gather_rows(probs, &scope)?
                    };
                    let l_t = consistency_loss(&mut g, student_probs, &teacher_probs)?;
                    losses.l_t = g.value(l_t).item();
                    let w = g.scale(l_t, lambda1)?;
                    total = g.add(total, w)?;
                }
            }

            // Detached predictions for the unlabeled rows of this batch.
            let probs_val = g.value(probs).clone();
            let predicted: Vec<usize> = (lb..lb + bu).map(|r| argmax(probs_val.row(r))).collect();
            let confidence: Vec<f64> = (lb..lb + bu)
                .map(|r| probs_val.row(r).iter().copied().fold(0.0, f64::max))
                .collect();

            if similarity_on {
                let mut pairs = weak_batch;
                if weak.is_none() || mix_pseudo {
                    let labels = BatchLabels {
                        labels: &y_batch,
                        predicted: &predicted,
                        confidence: &confidence,
                    };
                    pairs.extend(sample_pairs(&labels, config.pairs_per_batch, config.tau, &mut pair_rng)?.pairs);
                }
                if let Some(l_s) = similarity_loss(
                    &mut g,
                    &bound,
                    feats,
                    &pairs,
                    config.focal_gamma,
                    config.focal_alpha,
                )? {
                    losses.l_s = g.value(l_s).item();
                    let w = g.scale(l_s, lambda2)?;
                    total = g.add(total, w)?;
                }
            }

            if cotraining_on && bu > 0 {
                let members: Vec<(usize, usize)> = y_batch.iter().copied().enumerate().collect();
                let centers = select_class_centers(&members, k, &mut center_rng)?;
                if let Some(center_idx) = centers.ordered_indices() {
                    let feats_val = g.value(feats);
                    let center_feats = feats_val.select_rows(&center_idx);
                    let bu_idx: Vec<usize> = (lb..lb + bu).collect();
                    let bu_feats = feats_val.select_rows(&bu_idx);
                    let soft = soft_labels(&student, &bu_feats, &centers, &center_feats)?
                        .expect("centers cover every class");
                    let (gated, targets): (Vec<usize>, Vec<Vec<f64>>) = soft
                        .into_iter()
                        .enumerate()
                        .filter(|(u, s)| {
                            let conf = match config.cotraining_gate {
                                CotrainingGate::Similarity => s.probs.iter().copied().fold(0.0, f64::max),
                                CotrainingGate::Classifier => confidence[*u],
                            };
                            conf >= config.tau
                        })
                        .map(|(u, s)| (lb + u, s.probs))
                        .unzip();
                    if !gated.is_empty() {
                        let targets = Tensor::from_rows(&targets)?;
                        let gp = g.gather_rows(probs, &gated)?;
                        let l = soft_cross_entropy(&mut g, gp, &targets)?;
                        let l_sc = g.scale(l, gated.len() as f64 / bu as f64)?;
                        losses.l_sc = g.value(l_sc).item();
                        let w = g.scale(l_sc, lambda3)?;
                        total = g.add(total, w)?;
                    }
                }
            }

            g.backward(total)?;
            let grads = g.parameter_grads();
            for set in student.param_sets_mut() {
                set.accumulate_grads(&grads);
            }
            optimizer.step(&mut student);
            teacher.ema_update(&student)?;

            sums.l_c += losses.l_c;
            sums.l_t += losses.l_t;
            sums.l_s += losses.l_s;
            sums.l_sc += losses.l_sc;
            if config.record_batches {
                batches.push(record);
            }
        }

        let n = steps as f64;
        let b: LossBreakdown = total_loss(
            sums.l_c / n,
            sums.l_t / n,
            sums.l_s / n,
            sums.l_sc / n,
            lambda1,
            lambda2,
            lambda3,
        );
        let eval_model = match config.eval_with {
            EvalWith::Teacher => &teacher.params,
            EvalWith::Student => &student,
        };
        metrics.push(MetricsRow {
            epoch,
            l_c: b.l_c,
            l_t: b.l_t,
            l_s: b.l_s,
            l_sc: b.l_sc,
            total: b.total,
            lambda1,
            lambda2,
            lambda3,
            train_error: evaluate(eval_model, &split.labeled)?,
            test_error: evaluate(eval_model, &split.test)?,
        });
    }

    Ok(TrainOutcome {
        student,
        teacher,
        metrics,
        batches,
    })
}

/// Plain supervised loop: cross-entropy on `BL` only, same initialization,
/// batches and optimizer as [`train`]. Used as the reference that the full
/// objective must reproduce when every extra term is switched off.
pub fn train_supervised_reference(config: &TrainConfig, split: &SSLSplit) -> Result<ModelState> {
    let spec = check_inputs(config, split)?;
    let mut model = ModelState::init(spec, &mut stream(config.seed, Stream::Init))?;
    let mut optimizer = Optimizer::new(config);
    let mut plan = BatchPlan::new(config, split);
    let labels = split.labeled.hard_labels()?;
    let steps = plan.steps_per_epoch();
    for _ in 0..config.epochs {
        plan.start_epoch();
        for step in 0..steps {
            let record = plan.batch(step);
            let x = split.labeled.features.select_rows(&record.labeled);
            let y: Vec<usize> = record.labeled.iter().map(|&r| labels[r]).collect();
            let (mut g, _, _, probs) = student_forward(&model, x)?;
            let loss = cross_entropy(&mut g, probs, &y)?;
            g.backward(loss)?;
            let grads = g.parameter_grads();
            for set in model.param_sets_mut() {
                set.accumulate_grads(&grads);
            }
            optimizer.step(&mut model);
        }
    }
    Ok(model)
}

/// Number of `S` evaluations in one step: `m` sampled pairs plus one per
/// (unlabeled sample, class center) combination.
pub fn pair_evaluations_per_step(m: usize, unlabeled_batch: usize, num_classes: usize) -> usize {
    m + unlabeled_batch * num_classes
}
