//! Feature extractor `h`, classifier head `C`, and similarity network `S`.
//!
//! `C` and `S` both consume the shared features `h(x)`. `S` scores a pair
//! through the symmetric encoding `[|f_i - f_j|, f_i * f_j]`, so
//! `S(a, b) == S(b, a)` holds bit for bit.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::params::{glorot_uniform, ParamSet};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureExtractorSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub feature_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub feature_dim: usize,
    pub num_classes: usize,
    /// Empty means a linear head.
    pub hidden_widths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimilarityNetSpec {
    pub feature_dim: usize,
    pub hidden_widths: Vec<usize>,
}

impl SimilarityNetSpec {
    pub fn input_width(&self) -> usize {
        2 * self.feature_dim
    }
}

/// Architecture of all three networks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub extractor: FeatureExtractorSpec,
    pub classifier: ClassifierSpec,
    pub similarity: SimilarityNetSpec,
}

impl ModelSpec {
    /// Desk-scale defaults: `h = [64, 64] -> 32`, linear `C`, `S = [32] -> 1`.
    pub fn desk_scale(input_dim: usize, num_classes: usize) -> Self {
        Self::new(input_dim, vec![64, 64], 32, vec![], vec![32], num_classes)
    }

    pub fn new(
        input_dim: usize,
        hidden_widths: Vec<usize>,
        feature_dim: usize,
        classifier_hidden: Vec<usize>,
        similarity_hidden: Vec<usize>,
        num_classes: usize,
    ) -> Self {
        Self {
            extractor: FeatureExtractorSpec {
                input_dim,
                hidden_widths,
                feature_dim,
            },
            classifier: ClassifierSpec {
                feature_dim,
                num_classes,
                hidden_widths: classifier_hidden,
            },
            similarity: SimilarityNetSpec {
                feature_dim,
                hidden_widths: similarity_hidden,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let e = &self.extractor;
        if e.input_dim == 0 {
            errs.push("input_dim must be positive".to_string());
        }
        if e.hidden_widths.is_empty() {
            errs.push("feature extractor needs at least one hidden layer".to_string());
        }
        if e.feature_dim < 2 {
            errs.push("feature_dim must be at least 2".to_string());
        }
        if self.classifier.num_classes < 2 {
            errs.push("num_classes must be at least 2".to_string());
        }
        if self.classifier.feature_dim != e.feature_dim || self.similarity.feature_dim != e.feature_dim
        {
            errs.push("classifier and similarity heads must read feature_dim inputs".to_string());
        }
        let all_hidden = e
            .hidden_widths
            .iter()
            .chain(&self.classifier.hidden_widths)
            .chain(&self.similarity.hidden_widths);
        if all_hidden.into_iter().any(|&w| w == 0) {
            errs.push("hidden widths must be positive".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    fn extractor_dims(&self) -> Vec<usize> {
        let e = &self.extractor;
        std::iter::once(e.input_dim)
            .chain(e.hidden_widths.iter().copied())
            .chain(std::iter::once(e.feature_dim))
            .collect()
    }

    fn classifier_dims(&self) -> Vec<usize> {
        let c = &self.classifier;
        std::iter::once(c.feature_dim)
            .chain(c.hidden_widths.iter().copied())
            .chain(std::iter::once(c.num_classes))
            .collect()
    }

    fn similarity_dims(&self) -> Vec<usize> {
        let s = &self.similarity;
        std::iter::once(s.input_width())
            .chain(s.hidden_widths.iter().copied())
            .chain(std::iter::once(1))
            .collect()
    }
}

/// Parameters of `h`, `C` and `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub spec: ModelSpec,
    pub h: ParamSet,
    pub c: ParamSet,
    pub s: ParamSet,
}

fn layer_names(prefix: &str, i: usize) -> (String, String) {
    (format!("{prefix}.{i}.weight"), format!("{prefix}.{i}.bias"))
}

fn init_mlp(prefix: &str, dims: &[usize], rng: &mut Rng) -> ParamSet {
    let mut p = ParamSet::new();
    for (i, w) in dims.windows(2).enumerate() {
        let (wn, bn) = layer_names(prefix, i);
        p.insert(wn, glorot_uniform(w[0], w[1], rng)).expect("unique");
        p.insert(bn, Tensor::zeros(vec![w[1]])).expect("unique");
    }
    p
}

fn zero_mlp(prefix: &str, dims: &[usize]) -> ParamSet {
    let mut p = ParamSet::new();
    for (i, w) in dims.windows(2).enumerate() {
        let (wn, bn) = layer_names(prefix, i);
        p.insert(wn, Tensor::zeros(vec![w[1], w[0]])).expect("unique");
        p.insert(bn, Tensor::zeros(vec![w[1]])).expect("unique");
    }
    p
}

impl ModelState {
    /// Glorot-uniform weights and zero biases, drawn in the order h, C, S.
    pub fn init(spec: ModelSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let h = init_mlp("h", &spec.extractor_dims(), rng);
        let c = init_mlp("c", &spec.classifier_dims(), rng);
        let s = init_mlp("s", &spec.similarity_dims(), rng);
        Ok(Self { spec, h, c, s })
    }

    /// All-zero parameters.
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let h = zero_mlp("h", &spec.extractor_dims());
        let c = zero_mlp("c", &spec.classifier_dims());
        let s = zero_mlp("s", &spec.similarity_dims());
        Ok(Self { spec, h, c, s })
    }

    pub fn param_sets(&self) -> [&ParamSet; 3] {
        [&self.h, &self.c, &self.s]
    }

    pub fn param_sets_mut(&mut self) -> [&mut ParamSet; 3] {
        [&mut self.h, &mut self.c, &mut self.s]
    }

    /// Checks that parameter names and shapes match the spec.
    pub fn check_layout(&self) -> Result<()> {
        let expected = ModelState::zeros(self.spec.clone())?;
        for (a, b) in self.param_sets().into_iter().zip(expected.param_sets()) {
            if !a.same_layout(b) {
                return Err(Error::Contract(
                    "parameter shapes do not match the model spec".into(),
                ));
            }
        }
        Ok(())
    }

    /// Records every parameter on `g`. Trainable parameters receive
    /// gradients; otherwise they enter as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<BoundModel> {
        let bind_set = |g: &mut Graph, set: &ParamSet, prefix: &str| -> Result<Vec<Layer>> {
            let n = set.len() / 2;
            (0..n)
                .map(|i| {
                    let (wn, bn) = layer_names(prefix, i);
                    let (w, b) = (set.get(&wn), set.get(&bn));
                    let (w, b) = w.zip(b).ok_or_else(|| {
                        Error::Contract(format!("missing parameters for {prefix} layer {i}"))
                    })?;
                    let (w, b) = if trainable {
                        (g.parameter(&wn, w)?, g.parameter(&bn, b)?)
                    } else {
                        (g.input(w.clone())?, g.input(b.clone())?)
                    };
                    Ok(Layer { w, b })
                })
                .collect()
        };
        Ok(BoundModel {
            spec: self.spec.clone(),
            h: bind_set(g, &self.h, "h")?,
            c: bind_set(g, &self.c, "c")?,
            s: bind_set(g, &self.s, "s")?,
        })
    }

    /// `h(x)` for each row of `x_batch` (`n x d`).
    pub fn extract_features(&self, x_batch: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let m = self.bind(&mut g, false)?;
        let x = g.input(x_batch.clone())?;
        let f = m.features(&mut g, x)?;
        Ok(g.value(f).clone())
    }

    /// Class probabilities (`n x K`) for a batch of features.
    pub fn classify(&self, features: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let m = self.bind(&mut g, false)?;
        let f = g.input(features.clone())?;
        let p = m.class_probs(&mut g, f)?;
        Ok(g.value(p).clone())
    }

    /// `classify(extract_features(x))`.
    pub fn predict(&self, x_batch: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let m = self.bind(&mut g, false)?;
        let x = g.input(x_batch.clone())?;
        let f = m.features(&mut g, x)?;
        let p = m.class_probs(&mut g, f)?;
        Ok(g.value(p).clone())
    }

    /// `S(f_i, f_j)`.
    pub fn similarity(&self, f_i: &[f64], f_j: &[f64]) -> Result<f64> {
        let a = Tensor::matrix(1, f_i.len(), f_i.to_vec())?;
        let b = Tensor::matrix(1, f_j.len(), f_j.to_vec())?;
        Ok(self.similarity_rows(&a, &b)?[0])
    }

    /// Row-wise `S(left[r], right[r])`.
    pub fn similarity_rows(&self, left: &Tensor, right: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let m = self.bind(&mut g, false)?;
        let a = g.input(left.clone())?;
        let b = g.input(right.clone())?;
        let s = m.similarity(&mut g, a, b)?;
        Ok(g.value(s).values().to_vec())
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    w: NodeId,
    b: NodeId,
}

/// A [`ModelState`] recorded on a particular graph.
#[derive(Debug, Clone)]
pub struct BoundModel {
    spec: ModelSpec,
    h: Vec<Layer>,
    c: Vec<Layer>,
    s: Vec<Layer>,
}

impl BoundModel {
    fn mlp(g: &mut Graph, layers: &[Layer], x: NodeId, relu_last: bool) -> Result<NodeId> {
        let mut cur = x;
        for (i, l) in layers.iter().enumerate() {
            cur = g.affine(cur, l.w, l.b)?;
            if relu_last || i + 1 < layers.len() {
                cur = g.relu(cur)?;
            }
        }
        Ok(cur)
    }

    pub fn features(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let d = g.value(x).cols();
        if d != self.spec.extractor.input_dim {
            return Err(Error::Contract(format!(
                "input has {d} columns, extractor expects {}",
                self.spec.extractor.input_dim
            )));
        }
        Self::mlp(g, &self.h, x, true)
    }

    pub fn class_probs(&self, g: &mut Graph, features: NodeId) -> Result<NodeId> {
        let logits = self.class_logits(g, features)?;
        Ok(g.softmax_rows(logits)?)
    }

    pub fn class_logits(&self, g: &mut Graph, features: NodeId) -> Result<NodeId> {
        self.check_features(g, features)?;
        Self::mlp(g, &self.c, features, false)
    }

    /// Row-wise similarity probabilities (`m x 1`) for two aligned feature
    /// matrices.
    pub fn similarity(&self, g: &mut Graph, left: NodeId, right: NodeId) -> Result<NodeId> {
        self.check_features(g, left)?;
        self.check_features(g, right)?;
        let pair = pair_featurize_nodes(g, left, right)?;
        let logit = Self::mlp(g, &self.s, pair, false)?;
        Ok(g.sigmoid(logit)?)
    }

    /// Similarity of rows `pairs[k] = (i, j)` of a feature matrix.
    pub fn similarity_of_pairs(
        &self,
        g: &mut Graph,
        features: NodeId,
        pairs: &[(usize, usize)],
    ) -> Result<NodeId> {
        let left: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let right: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let a = g.gather_rows(features, &left)?;
        let b = g.gather_rows(features, &right)?;
        self.similarity(g, a, b)
    }

    fn check_features(&self, g: &Graph, f: NodeId) -> Result<()> {
        let p = g.value(f).cols();
        if p != self.spec.extractor.feature_dim {
            return Err(Error::Contract(format!(
                "features have {p} columns, expected {}",
                self.spec.extractor.feature_dim
            )));
        }
        Ok(())
    }
}

/// `[|a - b|, a * b]` row-wise, on the graph.
pub fn pair_featurize_nodes(g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
    let diff = g.abs_diff(a, b)?;
    let prod = g.product(a, b)?;
    Ok(g.concat_columns(diff, prod)?)
}

/// `[|f_i - f_j|, f_i * f_j]`.
pub fn pair_featurize(f_i: &[f64], f_j: &[f64]) -> Result<Vec<f64>> {
    if f_i.len() != f_j.len() {
        return Err(Error::Contract(format!(
            "pair features differ in length: {} vs {}",
            f_i.len(),
            f_j.len()
        )));
    }
    let diff = f_i.iter().zip(f_j).map(|(a, b)| (a - b).abs());
    let prod = f_i.iter().zip(f_j).map(|(a, b)| a * b);
    Ok(diff.chain(prod).collect())
}
