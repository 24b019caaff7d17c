//! The gradient-check suite: one finite-difference check per primitive and
//! one per loss composition used in training.

use rand::Rng as _;

use crate::autodiff::{Graph, NodeId, OpKind};
use crate::error::Result;
use crate::gradcheck::grad_check_with_fault;
use crate::networks::{ModelSpec, ModelState};
use crate::objectives::{consistency_loss, cross_entropy, similarity_loss, soft_cross_entropy};
use crate::params::ParamSet;
use crate::pseudo_labels::{PairSample, PairSource};
use crate::rng::{stream, Rng, Stream};
use crate::tensor::Tensor;

/// A check passes when its max relative error is below this.
pub const GRAD_TOLERANCE: f64 = 1e-5;
pub const GRAD_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRow {
    pub name: String,
    pub max_relative_error: f64,
    pub checked: usize,
}

impl SuiteRow {
    pub fn passed(&self) -> bool {
        self.max_relative_error < GRAD_TOLERANCE
    }
}

/// Uniform values in `[lo, hi]` with magnitude at least `margin`, so that
/// no check sits on a kink.
fn values(rng: &mut Rng, n: usize, lo: f64, hi: f64, margin: f64) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let v: f64 = rng.random_range(lo..hi);
            if v.abs() >= margin {
                break v;
            }
        })
        .collect()
}

fn param(name: &str, shape: Vec<usize>, vals: Vec<f64>) -> ParamSet {
    let mut p = ParamSet::new();
    p.insert(name, Tensor::new(shape, vals).expect("valid shape"))
        .expect("unique");
    p
}

/// `sum(x * w)` with a fixed weight tensor, so every output entry of the
/// primitive under test reaches the root with a distinct factor.
fn probe(g: &mut Graph, x: NodeId, w: &Tensor) -> Result<NodeId> {
    let w = g.input(w.clone())?;
    let xw = g.product(x, w)?;
    Ok(g.reduce_sum(xw)?)
}

/// `sum(x^2)`, for the product check itself: a product inside the probe
/// would also flip under an injected product fault and cancel it out.
fn square_probe(g: &mut Graph, x: NodeId, _w: &Tensor) -> Result<NodeId> {
    let sq = g.power(x, 2.0)?;
    Ok(g.reduce_sum(sq)?)
}

type Check = (OpKind, ParamSet, Box<dyn Fn(&mut Graph, &ParamSet) -> Result<NodeId>>);

fn primitive_checks(rng: &mut Rng) -> Vec<Check> {
    let w23 = Tensor::matrix(2, 3, values(rng, 6, -1.0, 1.0, 0.1)).expect("shape");
    let mut checks: Vec<Check> = Vec::new();

    let mut p = param("x", vec![2, 4], values(rng, 8, -1.0, 1.0, 0.1));
    p.insert("w", Tensor::matrix(3, 4, values(rng, 12, -1.0, 1.0, 0.1)).expect("shape"))
        .expect("unique");
    p.insert("b", Tensor::new(vec![3], values(rng, 3, -1.0, 1.0, 0.1)).expect("shape"))
        .expect("unique");
    let w = w23.clone();
    checks.push((
        OpKind::Affine,
        p,
        Box::new(move |g, p| {
            let x = g.parameter("x", p.get("x").expect("x"))?;
            let wt = g.parameter("w", p.get("w").expect("w"))?;
            let b = g.parameter("b", p.get("b").expect("b"))?;
            let y = g.affine(x, wt, b)?;
            probe(g, y, &w)
        }),
    ));

    macro_rules! unary {
        ($kind:expr, $lo:expr, $hi:expr, $op:expr) => {{
            let w = w23.clone();
            checks.push((
                $kind,
                param("x", vec![2, 3], values(rng, 6, $lo, $hi, 0.1)),
                Box::new(move |g, p| {
                    let x = g.parameter("x", p.get("x").expect("x"))?;
                    #[allow(clippy::redundant_closure_call)]
                    let y = ($op)(g, x)?;
                    probe(g, y, &w)
                }),
            ));
        }};
    }
    unary!(OpKind::Relu, -1.0, 1.0, |g: &mut Graph, x| g.relu(x));
    unary!(OpKind::Sigmoid, -2.0, 2.0, |g: &mut Graph, x| g.sigmoid(x));
    unary!(OpKind::SoftmaxRows, -2.0, 2.0, |g: &mut Graph, x| g.softmax_rows(x));
    unary!(OpKind::Log, 0.2, 1.0, |g: &mut Graph, x| g.log(x));
    unary!(OpKind::Power, 0.2, 2.0, |g: &mut Graph, x| g.power(x, 2.5));
    unary!(OpKind::ScalarScale, -1.0, 1.0, |g: &mut Graph, x| g.scale(x, -1.7));
    unary!(OpKind::ScalarAdd, -1.0, 1.0, |g: &mut Graph, x| g.add_scalar(x, 0.3));
    unary!(OpKind::GatherRows, -1.0, 1.0, |g: &mut Graph, x| g.gather_rows(x, &[1, 0]));

    macro_rules! binary {
        ($kind:expr, $wcols:expr, $op:expr) => {
            binary!($kind, $wcols, $op, probe)
        };
        ($kind:expr, $wcols:expr, $op:expr, $probe:expr) => {{
            let mut p = param("a", vec![2, 3], values(rng, 6, -1.0, 1.0, 0.1));
            // Keep |a - b| away from zero for the abs-diff kink.
            let b: Vec<f64> = p.get("a").expect("a").values().iter().map(|v| v + 0.5).collect();
            p.insert("b", Tensor::matrix(2, 3, b).expect("shape")).expect("unique");
            let w = Tensor::matrix(2, $wcols, values(rng, 2 * $wcols, -1.0, 1.0, 0.1)).expect("shape");
            checks.push((
                $kind,
                p,
                Box::new(move |g, p| {
                    let a = g.parameter("a", p.get("a").expect("a"))?;
                    let b = g.parameter("b", p.get("b").expect("b"))?;
                    #[allow(clippy::redundant_closure_call)]
                    let y = ($op)(g, a, b)?;
                    $probe(g, y, &w)
                }),
            ));
        }};
    }
    binary!(OpKind::ConcatColumns, 6, |g: &mut Graph, a, b| g.concat_columns(a, b));
    binary!(OpKind::AbsDiff, 3, |g: &mut Graph, a, b| g.abs_diff(a, b));
    binary!(OpKind::Product, 3, |g: &mut Graph, a, b| g.product(a, b), square_probe);
    binary!(OpKind::Add, 3, |g: &mut Graph, a, b| g.add(a, b));

    for kind in [OpKind::ReduceMean, OpKind::ReduceSum] {
        checks.push((
            kind,
            param("x", vec![2, 3], values(rng, 6, -1.0, 1.0, 0.1)),
            Box::new(move |g, p| {
                let x = g.parameter("x", p.get("x").expect("x"))?;
                let sq = g.power(x, 2.0)?;
                Ok(if kind == OpKind::ReduceMean {
                    g.reduce_mean(sq)?
                } else {
                    g.reduce_sum(sq)?
                })
            }),
        ));
    }
    checks.sort_by_key(|(k, _, _)| OpKind::DIFFERENTIABLE.iter().position(|d| d == k));
    checks
}

/// All model parameters in one set, as the gradient checker expects.
fn merged(state: &ModelState) -> ParamSet {
    let mut p = ParamSet::new();
    for set in state.param_sets() {
        for (n, t) in set.iter() {
            p.insert(n, t.clone()).expect("prefixed names are unique");
        }
    }
    p
}

fn split_back(spec: &ModelSpec, p: &ParamSet) -> ModelState {
    let pick = |prefix: &str| {
        let mut s = ParamSet::new();
        for (n, t) in p.iter().filter(|(n, _)| n.starts_with(prefix)) {
            s.insert(n, t.clone()).expect("unique");
        }
        s
    };
    ModelState {
        spec: spec.clone(),
        h: pick("h."),
        c: pick("c."),
        s: pick("s."),
    }
}

/// Fixtures for the loss compositions: a small model and a 4-row batch
/// with two labeled rows first.
struct Batch {
    spec: ModelSpec,
    params: ParamSet,
    x: Tensor,
    labels: Vec<usize>,
    teacher: Tensor,
    pairs: Vec<PairSample>,
    soft: Tensor,
}

fn batch(rng: &mut Rng) -> Batch {
    let spec = ModelSpec::new(3, vec![5], 4, vec![], vec![4], 3);
    let state = ModelState::init(spec.clone(), &mut stream(11, Stream::Init)).expect("valid spec");
    let x = Tensor::matrix(4, 3, values(rng, 12, -1.5, 1.5, 0.1)).expect("shape");
    let teacher_rows: Vec<Vec<f64>> = (0..4)
        .map(|_| {
            let raw = values(rng, 3, 0.2, 1.0, 0.0);
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect()
        })
        .collect();
    let soft_rows: Vec<Vec<f64>> = (0..2)
        .map(|_| {
            let raw = values(rng, 3, 0.1, 1.0, 0.0);
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect()
        })
        .collect();
    let pair = |i, j, target, source| PairSample { i, j, target, source };
    Batch {
        spec,
        params: merged(&state),
        x,
        labels: vec![0, 2],
        teacher: Tensor::from_rows(&teacher_rows).expect("rows"),
        pairs: vec![
            pair(0, 1, 0, PairSource::TrueLabel),
            pair(0, 2, 1, PairSource::PseudoLabel),
            pair(1, 3, 1, PairSource::PseudoLabel),
            pair(2, 3, 0, PairSource::PseudoLabel),
        ],
        soft: Tensor::from_rows(&soft_rows).expect("rows"),
    }
}

#[derive(Clone, Copy)]
enum Term {
    Supervised,
    Consistency,
    Similarity(f64),
    CoTraining,
    Total,
}

fn composition(b: &Batch, term: Term) -> impl Fn(&mut Graph, &ParamSet) -> Result<NodeId> + '_ {
    move |g, p| {
        let state = split_back(&b.spec, p);
        let m = state.bind(g, true)?;
        let x = g.input(b.x.clone())?;
        let f = m.features(g, x)?;
        let probs = m.class_probs(g, f)?;
        let labeled = g.gather_rows(probs, &[0, 1])?;
        let unlabeled = g.gather_rows(probs, &[2, 3])?;
        let sup = |g: &mut Graph| cross_entropy(g, labeled, &b.labels);
        let cons = |g: &mut Graph| consistency_loss(g, probs, &b.teacher);
        let sim = |g: &mut Graph, gamma: f64| -> Result<NodeId> {
            Ok(similarity_loss(g, &m, f, &b.pairs, gamma, 0.25)?.expect("pairs present"))
        };
        let cot = |g: &mut Graph| soft_cross_entropy(g, unlabeled, &b.soft);
        match term {
            Term::Supervised => sup(g),
            Term::Consistency => cons(g),
            Term::Similarity(gamma) => sim(g, gamma),
            Term::CoTraining => cot(g),
            Term::Total => {
                let mut total = sup(g)?;
                for (l, w) in [(cons(g)?, 0.7), (sim(g, 2.0)?, 1.3), (cot(g)?, 0.4)] {
                    let scaled = g.scale(l, w)?;
                    total = g.add(total, scaled)?;
                }
                Ok(total)
            }
        }
    }
}

/// Runs every check. `fault` flips the sign of one primitive's backward
/// pass to prove that the suite notices.
pub fn run_grad_suite(fault: Option<OpKind>) -> Result<Vec<SuiteRow>> {
    let mut rng = stream(2024, Stream::Data);
    let mut rows = Vec::new();
    for (kind, params, build) in primitive_checks(&mut rng) {
        let r = grad_check_with_fault(&params, GRAD_EPSILON, fault, build)?;
        rows.push(SuiteRow {
            name: kind.name().to_string(),
            max_relative_error: r.max_relative_error,
            checked: r.checked,
        });
    }
    let b = batch(&mut rng);
    for (name, term) in [
        ("loss:supervised", Term::Supervised),
        ("loss:consistency", Term::Consistency),
        ("loss:similarity-gamma0", Term::Similarity(0.0)),
        ("loss:similarity-gamma2", Term::Similarity(2.0)),
        ("loss:cotraining", Term::CoTraining),
        ("loss:total", Term::Total),
    ] {
        let r = grad_check_with_fault(&b.params, GRAD_EPSILON, fault, composition(&b, term))?;
        rows.push(SuiteRow {
            name: name.to_string(),
            max_relative_error: r.max_relative_error,
            checked: r.checked,
        });
    }
    Ok(rows)
}
