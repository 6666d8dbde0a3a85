//! Stacked feature layers with ReLU, per-layer averaging, concatenation and a
//! softmax classifier.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::{self, ForwardTrace, LayerGrads, LayerParams};

/// Probabilities are clamped to this floor before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Architecture and regularization settings of a [`Model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// n-gram order of every layer.
    pub order: usize,
    /// Feature dimension `h` of every layer.
    pub hidden: usize,
    /// Number of stacked feature layers.
    pub layers: usize,
    /// Length decay `λ ∈ [0, 1)`.
    pub decay: f64,
    /// Dropout probability on each layer's output, in `[0, 1)`.
    pub dropout: f64,
    /// Word vector dimension `d`.
    pub word_dim: usize,
    pub labels: Vec<String>,
}

impl ModelConfig {
    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 || self.hidden == 0 || self.layers == 0 || self.word_dim == 0 {
            return Err(Error::invalid(
                "order, hidden, layers and word_dim must all be positive",
            ));
        }
        if !(0.0..1.0).contains(&self.decay) {
            return Err(Error::invalid(format!(
                "decay must lie in [0, 1), got {}",
                self.decay
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.labels.len() < 2 {
            return Err(Error::invalid("need at least two labels"));
        }
        Ok(())
    }
}

/// A full classifier: feature layers plus the softmax matrix `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub layers: Vec<LayerParams>,
    /// `(T·h) × m`, no bias.
    pub classifier: Array2<f64>,
}

/// Whether dropout is sampled during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-layer record kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerRecord {
    pub trace: ForwardTrace,
    /// Post-dropout activations: the layer's output as seen downstream.
    pub activations: Array2<f64>,
    /// Inverted-dropout multipliers (`0` or `1/(1-p)`), absent when no dropout was applied.
    pub mask: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub mode: Mode,
    pub probs: Array1<f64>,
    pub logits: Array1<f64>,
    /// Mean post-activation feature vector of each layer.
    pub layer_means: Vec<Array1<f64>>,
    pub records: Vec<LayerRecord>,
}

impl ModelOutput {
    /// The concatenation `[z̄⁽¹⁾; …; z̄⁽ᵀ⁾]` fed to the classifier.
    pub fn features(&self) -> Array1<f64> {
        let views: Vec<ArrayView1<f64>> = self.layer_means.iter().map(|m| m.view()).collect();
        ndarray::concatenate(Axis(0), &views).expect("layer means are 1-d")
    }
}

/// Gradients for every trainable tensor of a [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
    pub biases: Vec<Array1<f64>>,
    pub classifier: Array2<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGrads {
                    slots: l.slots.iter().map(|u| Array2::zeros(u.dim())).collect(),
                    output: Array2::zeros(l.output.dim()),
                })
                .collect(),
            biases: model
                .layers
                .iter()
                .map(|l| Array1::zeros(l.bias.len()))
                .collect(),
            classifier: Array2::zeros(model.classifier.dim()),
        }
    }

    /// Every gradient tensor as a flat slice, in [`Model::tensor_names`] order.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for (l, b) in self.layers.iter().zip(&self.biases) {
            for u in &l.slots {
                out.push(u.as_slice().expect("standard layout"));
            }
            out.push(l.output.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out.push(self.classifier.as_slice().expect("standard layout"));
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for (l, b) in self.layers.iter_mut().zip(self.biases.iter_mut()) {
            for u in l.slots.iter_mut() {
                out.push(u.as_slice_mut().expect("standard layout"));
            }
            out.push(l.output.as_slice_mut().expect("standard layout"));
            out.push(b.as_slice_mut().expect("standard layout"));
        }
        out.push(self.classifier.as_slice_mut().expect("standard layout"));
        out
    }

    /// `self += other`, tensor by tensor.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
}

impl Model {
    /// Initializes all layers from `rng`; the classifier starts at zero.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::with_capacity(config.layers);
        for t in 0..config.layers {
            let input_dim = if t == 0 {
                config.word_dim
            } else {
                config.hidden
            };
            layers.push(layer::init_layer(
                input_dim,
                config.hidden,
                config.order,
                rng,
            )?);
        }
        let classifier = Array2::zeros((config.layers * config.hidden, config.num_labels()));
        Ok(Model {
            config,
            layers,
            classifier,
        })
    }

    /// Assembles a model from existing tensors and checks that they chain.
    pub fn from_parts(
        config: ModelConfig,
        layers: Vec<LayerParams>,
        classifier: Array2<f64>,
    ) -> Result<Self> {
        let model = Model {
            config,
            layers,
            classifier,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = &self.config;
        cfg.validate()?;
        if self.layers.len() != cfg.layers {
            return Err(Error::shape(format!(
                "config declares {} layers, model has {}",
                cfg.layers,
                self.layers.len()
            )));
        }
        for (t, l) in self.layers.iter().enumerate() {
            l.validate()?;
            let input_dim = if t == 0 { cfg.word_dim } else { cfg.hidden };
            if l.order() != cfg.order || l.hidden() != cfg.hidden || l.input_dim() != input_dim {
                return Err(Error::shape(format!(
                    "layer {} has order {} and shape {}→{}, expected order {} and {}→{}",
                    t + 1,
                    l.order(),
                    l.input_dim(),
                    l.hidden(),
                    cfg.order,
                    input_dim,
                    cfg.hidden
                )));
            }
        }
        let expected = (cfg.layers * cfg.hidden, cfg.num_labels());
        if self.classifier.dim() != expected {
            return Err(Error::shape(format!(
                "classifier is {:?}, expected {expected:?}",
                self.classifier.dim()
            )));
        }
        if !self.classifier.is_standard_layout() {
            return Err(Error::shape("classifier must be in row-major layout"));
        }
        if !self.classifier.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("classifier contains NaN or infinity".into()));
        }
        Ok(())
    }

    pub fn num_labels(&self) -> usize {
        self.classifier.ncols()
    }

    /// Names of the trainable tensors, in the order used by
    /// [`Model::param_slices`] and [`Gradients::slices`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (t, l) in self.layers.iter().enumerate() {
            for m in 0..l.order() {
                names.push(format!("layer{}.U{}", t + 1, m + 1));
            }
            names.push(format!("layer{}.O", t + 1));
            names.push(format!("layer{}.b", t + 1));
        }
        names.push("W".to_string());
        names
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            for u in &l.slots {
                out.push(u.as_slice().expect("standard layout"));
            }
            out.push(l.output.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out.push(self.classifier.as_slice().expect("standard layout"));
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in self.layers.iter_mut() {
            for u in l.slots.iter_mut() {
                out.push(u.as_slice_mut().expect("standard layout"));
            }
            out.push(l.output.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.classifier.as_slice_mut().expect("standard layout"));
        out
    }

    /// Sum of squared entries over every trainable tensor.
    pub fn squared_norm(&self) -> f64 {
        self.param_slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum()
    }

    /// Deterministic forward pass without dropout.
    pub fn forward_eval(&self, inputs: ArrayView2<f64>) -> Result<ModelOutput> {
        self.forward_impl(inputs, Masks::None)
    }

    /// Forward pass sampling one inverted-dropout mask per layer from `rng`.
    pub fn forward_train(
        &self,
        inputs: ArrayView2<f64>,
        rng: &mut dyn RngCore,
    ) -> Result<ModelOutput> {
        self.forward_impl(inputs, Masks::Sample(rng))
    }

    /// Forward pass in train mode reusing the dropout masks of an earlier pass.
    pub fn forward_with_masks(
        &self,
        inputs: ArrayView2<f64>,
        masks: &[Option<Array2<f64>>],
    ) -> Result<ModelOutput> {
        if masks.len() != self.layers.len() {
            return Err(Error::invalid("one mask slot per layer is required"));
        }
        self.forward_impl(inputs, Masks::Replay(masks))
    }

    fn forward_impl(&self, inputs: ArrayView2<f64>, mut masks: Masks<'_>) -> Result<ModelOutput> {
        if inputs.ncols() != self.config.word_dim {
            return Err(Error::shape(format!(
                "input has {} columns, model expects word_dim {}",
                inputs.ncols(),
                self.config.word_dim
            )));
        }
        let mode = match masks {
            Masks::None => Mode::Eval,
            _ => Mode::Train,
        };
        let len = inputs.nrows();
        let mut records: Vec<LayerRecord> = Vec::with_capacity(self.layers.len());
        let mut layer_means = Vec::with_capacity(self.layers.len());
        for (t, params) in self.layers.iter().enumerate() {
            let (pre, trace) = match records.last() {
                Some(prev) => layer::forward(params, prev.activations.view(), self.config.decay)?,
                None => layer::forward(params, inputs, self.config.decay)?,
            };
            let mut activations = layer::relu_with_bias(&pre, &params.bias);
            let mask = match &mut masks {
                Masks::None => None,
                Masks::Sample(rng) => {
                    sample_mask(activations.dim(), self.config.dropout, &mut **rng)
                }
                Masks::Replay(all) => all[t].clone(),
            };
            if let Some(mask) = &mask {
                if mask.dim() != activations.dim() {
                    return Err(Error::shape("dropout mask does not match layer output"));
                }
                activations *= mask;
            }
            layer_means.push(activations.sum_axis(Axis(0)) / len as f64);
            records.push(LayerRecord {
                trace,
                activations,
                mask,
            });
        }
        let features = {
            let views: Vec<ArrayView1<f64>> = layer_means.iter().map(|m| m.view()).collect();
            ndarray::concatenate(Axis(0), &views).expect("layer means are 1-d")
        };
        let logits = self.classifier.t().dot(&features);
        let probs = softmax(logits.view());
        Ok(ModelOutput {
            mode,
            probs,
            logits,
            layer_means,
            records,
        })
    }

    /// Exact gradients of `cross_entropy(forward(x), target)` for the pass
    /// recorded in `output`. The gradient reaching the word vectors is dropped.
    pub fn backward(&self, output: &ModelOutput, target: ArrayView1<f64>) -> Result<Gradients> {
        let m = self.num_labels();
        check_distribution(target, m)?;
        if output.records.len() != self.layers.len() {
            return Err(Error::InvalidState(
                "model output carries no traces for this model".into(),
            ));
        }
        let h = self.config.hidden;
        let target_mass: f64 = target.sum();
        // d loss / d logits for softmax + cross-entropy
        let grad_logits = &output.probs * target_mass - target;
        let features = output.features();
        let grad_classifier = layer::standard_layout(
            features
                .view()
                .insert_axis(Axis(1))
                .dot(&grad_logits.view().insert_axis(Axis(0))),
        );
        let grad_features = self.classifier.dot(&grad_logits);

        let mut layer_grads = Vec::with_capacity(self.layers.len());
        let mut bias_grads = Vec::with_capacity(self.layers.len());
        let mut downstream: Option<Array2<f64>> = None;
        for t in (0..self.layers.len()).rev() {
            let params = &self.layers[t];
            let record = &output.records[t];
            let len = record.activations.nrows();
            let grad_mean = grad_features.slice(s![t * h..(t + 1) * h]);
            let mut grad_act = match downstream.take() {
                Some(g) => g,
                None => Array2::zeros((len, h)),
            };
            grad_act += &(&grad_mean / len as f64);
            if let Some(mask) = &record.mask {
                grad_act *= mask;
            }
            layer::relu_backward(&mut grad_act, &record.trace.output, &params.bias);
            bias_grads.push(grad_act.sum_axis(Axis(0)));
            let (grads, grad_input) =
                layer::backward(params, &record.trace, self.config.decay, grad_act.view())?;
            layer_grads.push(grads);
            if t > 0 {
                downstream = Some(grad_input);
            }
        }
        layer_grads.reverse();
        bias_grads.reverse();
        Ok(Gradients {
            layers: layer_grads,
            biases: bias_grads,
            classifier: grad_classifier,
        })
    }

    /// Argmax of the eval-mode probabilities; ties go to the lowest index.
    pub fn predict(&self, inputs: ArrayView2<f64>) -> Result<usize> {
        let out = self.forward_eval(inputs)?;
        Ok(argmax(out.probs.view()))
    }

    /// Applies the classifier to each position's concatenated layer features
    /// (post-activation, no dropout) instead of their average.
    pub fn per_position_scores(
        &self,
        inputs: ArrayView2<f64>,
        score_values: &[f64],
    ) -> Result<PositionScores> {
        let m = self.num_labels();
        if score_values.len() != m {
            return Err(Error::invalid(format!(
                "{} score values given for {m} labels",
                score_values.len()
            )));
        }
        let out = self.forward_eval(inputs)?;
        let views: Vec<ArrayView2<f64>> =
            out.records.iter().map(|r| r.activations.view()).collect();
        let per_position = ndarray::concatenate(Axis(1), &views).expect("equal row counts");
        let logits = per_position.dot(&self.classifier);
        let mut probs = Array2::zeros(logits.dim());
        for (mut dst, row) in probs.rows_mut().into_iter().zip(logits.rows()) {
            dst.assign(&softmax(row));
        }
        let scores = Array1::from(score_values.to_vec());
        let expected = probs.dot(&scores);
        Ok(PositionScores { probs, expected })
    }
}

/// Per-position class probabilities and expected scores.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionScores {
    /// `L × m`.
    pub probs: Array2<f64>,
    /// `Σ_s s·p_i(s)` per position.
    pub expected: Array1<f64>,
}

enum Masks<'a> {
    None,
    Sample(&'a mut dyn RngCore),
    Replay(&'a [Option<Array2<f64>>]),
}

fn sample_mask(dim: (usize, usize), p: f64, rng: &mut dyn RngCore) -> Option<Array2<f64>> {
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some(Array2::from_shape_simple_fn(dim, || {
        if rng.gen::<f64>() < p {
            0.0
        } else {
            keep
        }
    }))
}

/// Max-subtracted exponential normalization.
pub fn softmax(v: ArrayView1<f64>) -> Array1<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = v.mapv(|x| (x - max).exp());
    let total = out.sum();
    out /= total;
    out
}

fn check_distribution(y: ArrayView1<f64>, m: usize) -> Result<()> {
    if y.len() != m {
        return Err(Error::invalid(format!(
            "target has {} entries, expected {m}",
            y.len()
        )));
    }
    if y.iter().any(|&v| v < 0.0 || !v.is_finite()) || (y.sum() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("target is not a probability distribution"));
    }
    Ok(())
}

/// `−Σ_l y_l·ln(max(p_l, 1e-12))`.
pub fn cross_entropy(probs: ArrayView1<f64>, target: ArrayView1<f64>) -> Result<f64> {
    check_distribution(target, probs.len())?;
    let loss: f64 = probs
        .iter()
        .zip(target.iter())
        .filter(|(_, &y)| y > 0.0)
        .map(|(&p, &y)| -y * p.max(PROB_FLOOR).ln())
        .sum();
    Ok(loss.max(0.0))
}

/// One-hot vector of length `m`.
pub fn one_hot(label: usize, m: usize) -> Array1<f64> {
    let mut y = Array1::zeros(m);
    y[label] = 1.0;
    y
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config(layers: usize, order: usize, hidden: usize, word_dim: usize) -> ModelConfig {
        ModelConfig {
            order,
            hidden,
            layers,
            decay: 0.5,
            dropout: 0.0,
            word_dim,
            labels: vec!["a".into(), "b".into(), "c".into()],
        }
    }

    fn random_inputs(rng: &mut ChaCha8Rng, len: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((len, d), || rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(array![0.0, 0.0, 0.0].view());
        for v in p.iter() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let p = softmax(array![1f64.ln(), 2f64.ln(), 3f64.ln()].view());
        assert_abs_diff_eq!(p[0], 1.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 2.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[2], 3.0 / 6.0, epsilon = 1e-15);
        let v = array![0.3, -2.0, 5.0];
        let shifted = &v + 1000.0;
        let (a, b) = (softmax(v.view()), softmax(shifted.view()));
        for (x, y) in a.iter().zip(b.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let y = array![0.0, 1.0, 0.0];
        assert_eq!(cross_entropy(y.view(), y.view()).unwrap(), 0.0);
        let uniform = Array1::from_elem(5, 0.2);
        let loss = cross_entropy(uniform.view(), one_hot(3, 5).view()).unwrap();
        assert_abs_diff_eq!(loss, 5f64.ln(), epsilon = 1e-12);
        let loss = cross_entropy(array![0.5, 0.5].view(), array![1.0, 0.0].view()).unwrap();
        assert_abs_diff_eq!(loss, std::f64::consts::LN_2, epsilon = 1e-12);
        assert!(cross_entropy(array![0.5, 0.5].view(), array![0.7, 0.7].view()).is_err());
        assert!(
            cross_entropy(array![1.0, 0.0].view(), array![0.0, 1.0].view())
                .unwrap()
                .is_finite()
        );
    }

    #[test]
    fn zero_classifier_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Model::new(config(2, 3, 4, 3), &mut rng).unwrap();
        let x = random_inputs(&mut rng, 5, 3);
        let out = model.forward_eval(x.view()).unwrap();
        for p in out.probs.iter() {
            assert_abs_diff_eq!(*p, 1.0 / 3.0, epsilon = 1e-15);
        }
        assert_eq!(model.predict(x.view()).unwrap(), 0);
        let scores = model
            .per_position_scores(x.view(), &[-1.0, 0.0, 4.0])
            .unwrap();
        for e in scores.expected.iter() {
            assert_abs_diff_eq!(*e, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_position_layer_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = Model::new(config(1, 2, 4, 3), &mut rng).unwrap();
        let x = random_inputs(&mut rng, 1, 3);
        let out = model.forward_eval(x.view()).unwrap();
        let l = &model.layers[0];
        let expected =
            (l.output.t().dot(&l.slots[0].dot(&x.row(0))) + &l.bias).mapv(|v| v.max(0.0));
        for (a, b) in out.layer_means[0].iter().zip(expected.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn zero_input_activations_equal_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = Model::new(config(2, 3, 4, 3), &mut rng).unwrap();
        let out = model.forward_eval(Array2::zeros((4, 3)).view()).unwrap();
        assert!(out.records[0].activations.iter().all(|&v| v == 0.01));
    }

    #[test]
    fn eval_is_deterministic_and_train_depends_on_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut cfg = config(2, 2, 6, 3);
        cfg.dropout = 0.5;
        let model = Model::new(cfg, &mut rng).unwrap();
        let x = random_inputs(&mut rng, 6, 3);
        let a = model.forward_eval(x.view()).unwrap();
        let b = model.forward_eval(x.view()).unwrap();
        assert_eq!(a.layer_means, b.layer_means);
        assert!(a.records.iter().all(|r| r.mask.is_none()));
        let t1 = model
            .forward_train(x.view(), &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        let t2 = model
            .forward_train(x.view(), &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        assert_eq!(t1.layer_means, t2.layer_means);
        assert_eq!(t1.mode, Mode::Train);
        let mask = t1.records[0].mask.as_ref().unwrap();
        assert!(mask.iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn classifier_gradient_at_zero_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = Model::new(config(2, 2, 3, 3), &mut rng).unwrap();
        let x = random_inputs(&mut rng, 4, 3);
        let out = model.forward_eval(x.view()).unwrap();
        let y = one_hot(1, 3);
        let grads = model.backward(&out, y.view()).unwrap();
        let features = out.features();
        for i in 0..features.len() {
            for l in 0..3 {
                let expected = features[i] * (1.0 / 3.0 - y[l]);
                assert_abs_diff_eq!(grads.classifier[[i, l]], expected, epsilon = 1e-14);
            }
        }
        // no signal reaches the layers through a zero classifier
        assert!(grads
            .biases
            .iter()
            .flat_map(|b| b.iter())
            .all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_vanishes_at_fit_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut model = Model::new(config(1, 2, 3, 3), &mut rng).unwrap();
        model.classifier.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
        let x = random_inputs(&mut rng, 3, 3);
        let out = model.forward_eval(x.view()).unwrap();
        let grads = model.backward(&out, out.probs.view()).unwrap();
        for s in grads.slices() {
            assert!(s.iter().all(|v| v.abs() < 1e-15));
        }
    }

    #[test]
    fn backward_requires_traces() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = Model::new(config(2, 2, 3, 3), &mut rng).unwrap();
        let x = random_inputs(&mut rng, 3, 3);
        let mut out = model.forward_eval(x.view()).unwrap();
        out.records.clear();
        assert!(matches!(
            model.backward(&out, one_hot(0, 3).view()),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn per_position_scores_single_position_matches_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut model = Model::new(config(2, 3, 4, 3), &mut rng).unwrap();
        model.classifier.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
        let x = random_inputs(&mut rng, 1, 3);
        let out = model.forward_eval(x.view()).unwrap();
        let scores = model
            .per_position_scores(x.view(), &[-1.0, 0.0, 1.0])
            .unwrap();
        for (a, b) in scores.probs.row(0).iter().zip(out.probs.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
        assert!(model.per_position_scores(x.view(), &[1.0]).is_err());
    }

    #[test]
    fn expected_scores_are_convex_combinations() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut model = Model::new(config(1, 2, 4, 3), &mut rng).unwrap();
        model.classifier.mapv_inplace(|_| rng.gen_range(-5.0..5.0));
        let x = random_inputs(&mut rng, 12, 3);
        let scores = model
            .per_position_scores(x.view(), &[-2.0, 0.5, 2.0])
            .unwrap();
        assert!(scores.expected.iter().all(|&e| (-2.0..=2.0).contains(&e)));
        for row in scores.probs.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(array![0.2, 0.4, 0.4].view()), 1);
        assert_eq!(argmax(array![0.5, 0.5].view()), 0);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let model = Model::new(config(1, 2, 4, 3), &mut rng).unwrap();
        assert!(matches!(
            model.forward_eval(Array2::zeros((2, 5)).view()),
            Err(Error::Shape(_))
        ));
        let mut broken = model.clone();
        broken.classifier = Array2::zeros((3, 3));
        assert!(broken.validate().is_err());
    }
}
