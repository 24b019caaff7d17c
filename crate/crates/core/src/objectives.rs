//! Loss terms and ramp-up weights of the training objective
//! `L_C + λ1(t) L_T + λ2(t) L_S + λ3(t) L_SC`.
//!
//! Each loss has a graph form used during training and a `*_value` form
//! for plain tensors.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::networks::{BoundModel, ModelState};
use crate::pseudo_labels::PairSample;
use crate::tensor::Tensor;

/// Clamp applied to focal-loss predictions.
pub const PROB_CLAMP: f64 = 1e-12;

/// Sigmoid ramp-up `w_max * exp(-5 (1 - min(t, T)/T)^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub w_max: f64,
    pub ramp_epochs: usize,
}

pub fn ramp_weight(spec: &ScheduleSpec, epoch: usize) -> f64 {
    let t_r = spec.ramp_epochs.max(1);
    let progress = epoch.min(t_r) as f64 / t_r as f64;
    let phase = 1.0 - progress;
    spec.w_max * (-5.0 * phase * phase).exp()
}

/// Per-term values of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_c: f64,
    pub l_t: f64,
    pub l_s: f64,
    pub l_sc: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    l_c: f64,
    l_t: f64,
    l_s: f64,
    l_sc: f64,
    lambda1: f64,
    lambda2: f64,
    lambda3: f64,
) -> LossBreakdown {
    LossBreakdown {
        l_c,
        l_t,
        l_s,
        l_sc,
        total: l_c + lambda1 * l_t + lambda2 * l_s + lambda3 * l_sc,
        lambda1,
        lambda2,
        lambda3,
    }
}

fn one_hot(labels: &[usize], k: usize) -> Result<Tensor> {
    let mut v = vec![0.0; labels.len() * k];
    for (r, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::InvalidArgument(format!(
                "label {y} out of range for {k} classes"
            )));
        }
        v[r * k + y] = 1.0;
    }
    Tensor::matrix(labels.len(), k, v)
}

fn probs_shape(g: &Graph, probs: NodeId) -> (usize, usize) {
    let t = g.value(probs);
    (t.rows(), t.cols())
}

/// `-(1/n) sum_r sum_k w[r,k] ln p[r,k]` with constant weights `w`.
fn weighted_nll(g: &mut Graph, probs: NodeId, weights: Tensor) -> Result<NodeId> {
    let n = weights.rows();
    let w = g.input(weights)?;
    let lp = g.log(probs)?;
    let picked = g.product(lp, w)?;
    let s = g.reduce_sum(picked)?;
    Ok(g.scale(s, -1.0 / n as f64)?)
}

/// Mean negative log-probability of the true class.
pub fn cross_entropy(g: &mut Graph, probs: NodeId, labels: &[usize]) -> Result<NodeId> {
    let (n, k) = probs_shape(g, probs);
    if labels.len() != n {
        return Err(Error::Contract(format!(
            "{} labels for {n} probability rows",
            labels.len()
        )));
    }
    weighted_nll(g, probs, one_hot(labels, k)?)
}

pub fn cross_entropy_value(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.input(probs.clone())?;
    let l = cross_entropy(&mut g, p, labels)?;
    Ok(g.value(l).item())
}

fn check_stochastic(targets: &Tensor) -> Result<()> {
    for r in 0..targets.rows() {
        let row = targets.row(r);
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 || row.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "target row {r} is not a probability vector (sum {s})"
            )));
        }
    }
    Ok(())
}

/// Mean over rows of `-sum_k targets[k] ln probs[k]`.
pub fn soft_cross_entropy(g: &mut Graph, probs: NodeId, targets: &Tensor) -> Result<NodeId> {
    let (n, k) = probs_shape(g, probs);
    if targets.rows() != n || targets.cols() != k {
        return Err(Error::Contract(format!(
            "soft targets {:?} do not match probabilities {n}x{k}",
            targets.shape()
        )));
    }
    check_stochastic(targets)?;
    let t = Tensor::matrix(n, k, targets.values().to_vec())?;
    weighted_nll(g, probs, t)
}

pub fn soft_cross_entropy_value(probs: &Tensor, targets: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.input(probs.clone())?;
    let l = soft_cross_entropy(&mut g, p, targets)?;
    Ok(g.value(l).item())
}

/// Mean squared difference over all `n * K` entries. The teacher enters as
/// a constant.
pub fn consistency_loss(g: &mut Graph, student: NodeId, teacher: &Tensor) -> Result<NodeId> {
    if g.value(student).shape() != teacher.shape() {
        return Err(Error::Contract(format!(
            "student {:?} vs teacher {:?}",
            g.value(student).shape(),
            teacher.shape()
        )));
    }
    let t = g.input(teacher.clone())?;
    let d = g.abs_diff(student, t)?;
    let sq = g.power(d, 2.0)?;
    Ok(g.reduce_mean(sq)?)
}

pub fn consistency_loss_value(student: &Tensor, teacher: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let s = g.input(student.clone())?;
    let l = consistency_loss(&mut g, s, teacher)?;
    Ok(g.value(l).item())
}

fn check_focal_args(gamma: f64, alpha_pos: f64) -> Result<()> {
    if gamma.is_nan() || gamma < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "focal gamma must be non-negative, got {gamma}"
        )));
    }
    if !(alpha_pos > 0.0 && alpha_pos < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "focal alpha must lie in (0, 1), got {alpha_pos}"
        )));
    }
    Ok(())
}

/// `-α_t (1 - p_t)^γ ln p_t` for one prediction.
pub fn focal_loss(pred: f64, target: u8, gamma: f64, alpha_pos: f64) -> Result<f64> {
    check_focal_args(gamma, alpha_pos)?;
    let p = pred.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let (p_t, alpha_t) = match target {
        1 => (p, alpha_pos),
        0 => (1.0 - p, 1.0 - alpha_pos),
        other => {
            return Err(Error::InvalidArgument(format!(
                "focal target must be 0 or 1, got {other}"
            )))
        }
    };
    Ok(-alpha_t * (1.0 - p_t).powf(gamma) * p_t.ln())
}

/// Mean focal loss of a column of predictions (`m x 1`) against 0/1 targets.
pub fn focal_loss_mean(
    g: &mut Graph,
    preds: NodeId,
    targets: &[u8],
    gamma: f64,
    alpha_pos: f64,
) -> Result<NodeId> {
    check_focal_args(gamma, alpha_pos)?;
    let m = g.value(preds).len();
    if targets.len() != m {
        return Err(Error::Contract(format!(
            "{} targets for {m} predictions",
            targets.len()
        )));
    }
    if let Some(bad) = targets.iter().find(|&&t| t > 1) {
        return Err(Error::InvalidArgument(format!(
            "focal target must be 0 or 1, got {bad}"
        )));
    }
    let shape = g.value(preds).shape().to_vec();
    let col = |f: &dyn Fn(u8) -> f64| -> Result<Tensor> {
        Tensor::new(shape.clone(), targets.iter().map(|&t| f(t)).collect())
    };
    // p_t = (2t - 1) p + (1 - t)
    let slope = g.input(col(&|t| 2.0 * t as f64 - 1.0)?)?;
    let offset = g.input(col(&|t| 1.0 - t as f64)?)?;
    let alpha = g.input(col(&|t| if t == 1 { alpha_pos } else { 1.0 - alpha_pos })?)?;
    let scaled = g.product(preds, slope)?;
    let p_t = g.add(scaled, offset)?;
    let neg = g.scale(p_t, -1.0)?;
    let one_minus = g.add_scalar(neg, 1.0)?;
    let modulator = g.power(one_minus, gamma)?;
    let log_pt = g.log(p_t)?;
    let term = g.product(modulator, log_pt)?;
    let weighted = g.product(term, alpha)?;
    let mean = g.reduce_mean(weighted)?;
    Ok(g.scale(mean, -1.0)?)
}

/// Mean focal loss of `S` over sampled pairs of batch rows. `None` when
/// there are no pairs (the loss is 0).
pub fn similarity_loss(
    g: &mut Graph,
    model: &BoundModel,
    features: NodeId,
    pairs: &[PairSample],
    gamma: f64,
    alpha_pos: f64,
) -> Result<Option<NodeId>> {
    check_focal_args(gamma, alpha_pos)?;
    if pairs.is_empty() {
        return Ok(None);
    }
    let n = g.value(features).rows();
    if let Some(p) = pairs.iter().find(|p| p.i >= n || p.j >= n) {
        return Err(Error::InvalidArgument(format!(
            "pair ({}, {}) out of range for {n} rows",
            p.i, p.j
        )));
    }
    let idx: Vec<(usize, usize)> = pairs.iter().map(|p| (p.i, p.j)).collect();
    let targets: Vec<u8> = pairs.iter().map(|p| p.target).collect();
    let s = model.similarity_of_pairs(g, features, &idx)?;
    Ok(Some(focal_loss_mean(g, s, &targets, gamma, alpha_pos)?))
}

pub fn similarity_loss_value(
    state: &ModelState,
    pairs: &[PairSample],
    features: &Tensor,
    gamma: f64,
    alpha_pos: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let m = state.bind(&mut g, false)?;
    let f = g.input(features.clone())?;
    Ok(match similarity_loss(&mut g, &m, f, pairs, gamma, alpha_pos)? {
        Some(l) => g.value(l).item(),
        None => 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::ModelSpec;
    use crate::pseudo_labels::PairSource;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let perfect = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(cross_entropy_value(&perfect, &[0, 1]).unwrap().abs() < 1e-11);
        let uniform = Tensor::matrix(3, 10, vec![0.1; 30]).unwrap();
        let ce = cross_entropy_value(&uniform, &[0, 4, 9]).unwrap();
        assert!((ce - 10f64.ln()).abs() < 1e-12);
        let ce = cross_entropy_value(&m(&[&[0.75, 0.25]]), &[1]).unwrap();
        assert!((ce - 1.386294361119891).abs() < 1e-12);
        assert!(cross_entropy_value(&perfect, &[0, 2]).is_err());
    }

    #[test]
    fn soft_cross_entropy_closed_forms() {
        let u4 = Tensor::matrix(2, 4, vec![0.25; 8]).unwrap();
        assert!((soft_cross_entropy_value(&u4, &u4).unwrap() - 4f64.ln()).abs() < 1e-12);
        let half = m(&[&[0.5, 0.5]]);
        assert!((soft_cross_entropy_value(&half, &half).unwrap() - 2f64.ln()).abs() < 1e-12);
        let p = m(&[&[0.2, 0.5, 0.3]]);
        let hard = cross_entropy_value(&p, &[1]).unwrap();
        let soft = soft_cross_entropy_value(&p, &m(&[&[0.0, 1.0, 0.0]])).unwrap();
        assert_eq!(hard, soft);
        assert!(soft_cross_entropy_value(&p, &m(&[&[0.5, 0.6, 0.0]])).is_err());
    }

    #[test]
    fn consistency_by_hand() {
        let a = m(&[&[1.0, 0.0]]);
        let b = m(&[&[0.5, 0.5]]);
        assert_eq!(consistency_loss_value(&a, &b).unwrap(), 0.25);
        assert_eq!(consistency_loss_value(&b, &a).unwrap(), 0.25);
        assert_eq!(consistency_loss_value(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn consistency_gradient_skips_teacher() {
        let mut g = Graph::new();
        let s = g.input_with_grad(m(&[&[0.7, 0.3]])).unwrap();
        let teacher = m(&[&[0.4, 0.6]]);
        let l = consistency_loss(&mut g, s, &teacher).unwrap();
        g.backward(l).unwrap();
        let gs = g.grad(s).unwrap();
        assert!((gs[0] - 0.3).abs() < 1e-12 && (gs[1] + 0.3).abs() < 1e-12);
        assert!(g.parameter_grads().is_empty());
    }

    #[test]
    fn focal_closed_forms() {
        assert!(focal_loss(1.0, 1, 2.0, 0.5).unwrap().abs() < 1e-10);
        let v = focal_loss(0.5, 1, 0.0, 0.5).unwrap();
        assert!((v - 0.5 * 2f64.ln()).abs() < 1e-15);
        let v = focal_loss(0.9, 1, 2.0, 0.5).unwrap();
        let expected = 0.5 * 0.01 * -(0.9f64.ln());
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 5.2681e-4).abs() < 1e-8);
        assert!(focal_loss(0.5, 1, -1.0, 0.5).is_err());
    }

    #[test]
    fn focal_graph_matches_scalar() {
        let preds = [0.1, 0.35, 0.5, 0.8, 0.97];
        let targets = [1u8, 0, 1, 0, 1];
        for gamma in [0.0, 0.5, 2.0] {
            let mut g = Graph::new();
            let p = g.input(Tensor::matrix(5, 1, preds.to_vec()).unwrap()).unwrap();
            let l = focal_loss_mean(&mut g, p, &targets, gamma, 0.25).unwrap();
            let scalar: f64 = preds
                .iter()
                .zip(&targets)
                .map(|(&p, &t)| focal_loss(p, t, gamma, 0.25).unwrap())
                .sum::<f64>()
                / 5.0;
            assert!((g.value(l).item() - scalar).abs() < 1e-14, "gamma={gamma}");
        }
    }

    #[test]
    fn similarity_loss_cases() {
        let spec = ModelSpec::new(2, vec![3], 2, vec![], vec![3], 2);
        let st = ModelState::zeros(spec).unwrap();
        let f = m(&[&[0.3, 1.0], &[2.0, 0.5]]);
        assert_eq!(similarity_loss_value(&st, &[], &f, 2.0, 0.25).unwrap(), 0.0);
        let pair = PairSample {
            i: 0,
            j: 1,
            target: 1,
            source: PairSource::TrueLabel,
        };
        let v = similarity_loss_value(&st, &[pair], &f, 0.0, 0.5).unwrap();
        assert!((v - 0.346573590279973).abs() < 1e-12);
        let bad = PairSample { j: 5, ..pair };
        assert!(similarity_loss_value(&st, &[bad], &f, 0.0, 0.5).is_err());
    }

    #[test]
    fn ramp_closed_forms() {
        let s = ScheduleSpec {
            w_max: 2.0,
            ramp_epochs: 80,
        };
        assert_eq!(ramp_weight(&s, 80), 2.0);
        assert_eq!(ramp_weight(&s, 500), 2.0);
        assert!((ramp_weight(&s, 0) - 2.0 * (-5f64).exp()).abs() < 1e-12);
        let unit = ScheduleSpec {
            w_max: 1.0,
            ramp_epochs: 80,
        };
        let w: Vec<f64> = (0..=80).map(|t| ramp_weight(&unit, t)).collect();
        assert!(w.windows(2).all(|p| p[1] >= p[0]));
    }

    #[test]
    fn total_loss_cases() {
        assert_eq!(total_loss(1.5, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0).total, 1.5);
        assert_eq!(total_loss(1.0, 2.0, 3.0, 4.0, 0.5, 0.5, 0.5).total, 5.5);
        assert_eq!(total_loss(0.0, 0.0, 0.0, 0.0, 0.3, 0.2, 0.1).total, 0.0);
    }

    proptest! {
        #[test]
        fn focal_gamma_zero_is_half_bce(p in 1e-6f64..(1.0 - 1e-6), t in 0u8..2) {
            let bce = if t == 1 { -p.ln() } else { -(1.0 - p).ln() };
            let fl = focal_loss(p, t, 0.0, 0.5).unwrap();
            prop_assert!((fl - 0.5 * bce).abs() < 1e-12);
        }

        #[test]
        fn focal_non_increasing_in_pt(
            a in 1e-6f64..(1.0 - 1e-6),
            b in 1e-6f64..(1.0 - 1e-6),
            gamma in 0.0f64..5.0,
            alpha in 0.05f64..0.95,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(focal_loss(hi, 1, gamma, alpha).unwrap() <= focal_loss(lo, 1, gamma, alpha).unwrap());
        }

        #[test]
        fn ramp_bounded_and_monotone(w_max in 0.0f64..10.0, t_r in 1usize..200, t in 0usize..300) {
            let s = ScheduleSpec { w_max, ramp_epochs: t_r };
            let w = ramp_weight(&s, t);
            prop_assert!(w >= w_max * (-5f64).exp() - 1e-15 && w <= w_max);
            prop_assert!(ramp_weight(&s, t + 1) >= w);
        }

        #[test]
        fn total_is_linear_in_lambda2(
            l in proptest::array::uniform4(0.0f64..10.0),
            lam in proptest::array::uniform3(0.0f64..5.0),
        ) {
            let a = total_loss(l[0], l[1], l[2], l[3], lam[0], lam[1], lam[2]);
            let b = total_loss(l[0], l[1], l[2], l[3], lam[0], 2.0 * lam[1], lam[2]);
            prop_assert!((b.total - a.total - lam[1] * l[2]).abs() < 1e-12);
            let recomputed = a.l_c + a.lambda1 * a.l_t + a.lambda2 * a.l_s + a.lambda3 * a.l_sc;
            prop_assert!((a.total - recomputed).abs() < 1e-12);
        }
    }
}
