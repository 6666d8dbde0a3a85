//! Verification oracles: dense tensor materialization, dynamic program vs
//! enumeration, initialization statistics and finite-difference gradients.

use ndarray::{Array1, Array2, ArrayD, ArrayView1, IxDyn};
use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::{self, LayerParams};
use crate::network::{cross_entropy, one_hot, Model, ModelConfig};

/// Largest number of entries [`materialize_full_tensor`] will allocate.
pub const MAX_TENSOR_ENTRIES: usize = 1_000_000;

/// Maximum absolute deviation allowed between the dynamic program and enumeration.
pub const DP_TOLERANCE: f64 = 1e-9;

/// Dense order-(n+1) tensor of shape `d × … × d × h`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullTensor {
    pub entries: ArrayD<f64>,
}

/// Expands the Kruskal form `Σ_r U[1]_r ⊗ … ⊗ U[n]_r ⊗ O_r` of a layer.
pub fn materialize_full_tensor(params: &LayerParams) -> Result<FullTensor> {
    let (n, d, h) = (params.order(), params.input_dim(), params.hidden());
    let size = d
        .checked_pow(n as u32)
        .and_then(|v| v.checked_mul(h))
        .filter(|&v| v <= MAX_TENSOR_ENTRIES)
        .ok_or_else(|| {
            Error::invalid(format!(
                "full tensor with d={d}, n={n}, h={h} exceeds {MAX_TENSOR_ENTRIES} entries"
            ))
        })?;
    let mut shape = vec![d; n];
    shape.push(h);
    let mut entries = ArrayD::zeros(IxDyn(&shape));
    debug_assert_eq!(entries.len(), size);
    for (idx, value) in entries.indexed_iter_mut() {
        let l = idx[n];
        *value = (0..h)
            .map(|r| {
                let mut prod = params.output[[r, l]];
                for m in 0..n {
                    prod *= params.slots[m][[r, idx[m]]];
                }
                prod
            })
            .sum();
    }
    Ok(FullTensor { entries })
}

impl FullTensor {
    /// `z_l = Σ T[i1,…,in,l]·x1[i1]⋯xn[in]`.
    pub fn contract(&self, words: &[ArrayView1<f64>]) -> Result<Array1<f64>> {
        let shape = self.entries.shape();
        let n = shape.len() - 1;
        if words.len() != n || words.iter().any(|w| w.len() != shape[0]) {
            return Err(Error::shape(format!(
                "contraction needs {n} vectors of length {}",
                shape[0]
            )));
        }
        let mut z = Array1::zeros(shape[n]);
        for (idx, &t) in self.entries.indexed_iter() {
            let mut prod = t;
            for (m, w) in words.iter().enumerate() {
                prod *= w[idx[m]];
            }
            z[idx[n]] += prod;
        }
        Ok(z)
    }
}

/// One randomly drawn layer/input pair of the equivalence harness.
#[derive(Debug, Clone)]
pub struct DpInstance {
    pub seed: u64,
    pub params: LayerParams,
    pub inputs: Array2<f64>,
    pub decay: f64,
}

const DECAY_GRID: [f64; 4] = [0.0, 0.3, 0.5, 0.9];

/// Rebuilds the instance drawn from `seed`: `L ∈ 1..=8`, `d_in ∈ 1..=5`,
/// `h ∈ 1..=4`, `n ∈ {2, 3}`, `λ ∈ {0, 0.3, 0.5, 0.9}`, unit-norm inputs.
pub fn dp_instance(seed: u64) -> DpInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = rng.gen_range(1..=8);
    let d = rng.gen_range(1..=5);
    let h = rng.gen_range(1..=4);
    let n = rng.gen_range(2..=3);
    let decay = DECAY_GRID[rng.gen_range(0..DECAY_GRID.len())];
    let params = layer::init_layer(d, h, n, &mut rng).expect("positive dimensions");
    let inputs = random_unit_rows(&mut rng, len, d);
    DpInstance {
        seed,
        params,
        inputs,
        decay,
    }
}

pub(crate) fn random_unit_rows<R: Rng + ?Sized>(rng: &mut R, len: usize, d: usize) -> Array2<f64> {
    let dist = Uniform::<f64>::new_inclusive(-1.0, 1.0);
    let mut x = Array2::from_shape_simple_fn((len, d), || dist.sample(rng));
    for mut row in x.rows_mut() {
        let norm: f64 = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpReport {
    pub instances: usize,
    pub max_abs_dev: f64,
    pub pass: bool,
    /// Seed of the instance with the largest deviation; replay with [`dp_instance`].
    pub worst_seed: Option<u64>,
}

impl DpReport {
    pub fn summary(&self) -> String {
        let worst = self
            .worst_seed
            .map_or_else(|| "-".to_string(), |s| s.to_string());
        format!(
            "dp-vs-enumeration: {} instances, max |dev| = {:.3e}, worst seed {}, {}",
            self.instances,
            self.max_abs_dev,
            worst,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

/// Compares [`layer::forward`] with [`layer::forward_reference`] on `count`
/// random instances whose seeds are drawn from `rng`.
pub fn check_dp_equivalence<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Result<DpReport> {
    let mut max_abs_dev = 0.0f64;
    let mut worst_seed = None;
    for _ in 0..count {
        let inst = dp_instance(rng.gen());
        let (z, _) = layer::forward(&inst.params, inst.inputs.view(), inst.decay)?;
        let z_ref = layer::forward_reference(&inst.params, inst.inputs.view(), inst.decay)?;
        let dev = z
            .iter()
            .zip(z_ref.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if worst_seed.is_none() || dev > max_abs_dev {
            max_abs_dev = dev;
            worst_seed = Some(inst.seed);
        }
    }
    Ok(DpReport {
        instances: count,
        max_abs_dev,
        pass: max_abs_dev < DP_TOLERANCE,
        worst_seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitVarianceReport {
    pub samples: usize,
    /// Monte-Carlo mean of `‖P_r ⊗ Q_r ⊗ R_r ⊗ O_r‖²`.
    pub estimate: f64,
    /// Standard error of the mean.
    pub std_error: f64,
    pub pass: bool,
}

/// Estimates the expected squared norm of one rank-1 slice of a freshly
/// initialized order-3 layer. Each slice norm factorizes into the product of
/// its rows' squared norms. Passes iff the estimate lies in `[0.9, 1.1]`.
pub fn check_init_variance<R: Rng + ?Sized>(
    input_dim: usize,
    hidden: usize,
    samples: usize,
    rng: &mut R,
) -> Result<InitVarianceReport> {
    if samples < 10_000 {
        return Err(Error::invalid(format!(
            "need at least 10000 samples, got {samples}"
        )));
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut taken = 0;
    while taken < samples {
        let params = layer::init_layer(input_dim, hidden, 3, rng)?;
        for r in 0..hidden {
            if taken == samples {
                break;
            }
            let mut norm = params.output.row(r).dot(&params.output.row(r));
            for u in &params.slots {
                norm *= u.row(r).dot(&u.row(r));
            }
            sum += norm;
            sum_sq += norm * norm;
            taken += 1;
        }
    }
    let mean = sum / samples as f64;
    let var =
        (sum_sq / samples as f64 - mean * mean).max(0.0) * samples as f64 / (samples - 1) as f64;
    Ok(InitVarianceReport {
        samples,
        estimate: mean,
        std_error: (var / samples as f64).sqrt(),
        pass: (0.9..=1.1).contains(&mean),
    })
}

/// Settings for [`gradient_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub layers: usize,
    pub order: usize,
    pub hidden: usize,
    pub word_dim: usize,
    pub length: usize,
    pub labels: usize,
    pub decay: f64,
    /// Dropout masks are sampled once and held fixed for every evaluation.
    pub dropout: f64,
    pub seed: u64,
    pub epsilon: f64,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            layers: 2,
            order: 3,
            hidden: 5,
            word_dim: 4,
            length: 6,
            labels: 3,
            decay: 0.5,
            dropout: 0.0,
            seed: 0,
            epsilon: 1e-5,
            tolerance: 1e-4,
        }
    }
}

/// Denominator floor of the relative error, so that coordinates whose true
/// gradient is (near) zero are compared absolutely.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / scale
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_rel_error)
            .fold(0.0, f64::max)
    }
}

/// Builds a random model (classifier included) and input, then compares
/// the analytic gradient of the cross-entropy with central differences for
/// every coordinate of every trainable tensor.
pub fn gradient_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let config = ModelConfig {
        order: cfg.order,
        hidden: cfg.hidden,
        layers: cfg.layers,
        decay: cfg.decay,
        dropout: cfg.dropout,
        word_dim: cfg.word_dim,
        labels: (0..cfg.labels).map(|i| format!("c{i}")).collect(),
    };
    let mut model = Model::new(config, &mut rng)?;
    let bound = (3.0 / model.classifier.nrows() as f64).sqrt();
    model
        .classifier
        .mapv_inplace(|_| rng.gen_range(-bound..=bound));
    for l in model.layers.iter_mut() {
        l.bias.mapv_inplace(|_| rng.gen_range(-0.5..=0.5));
    }
    if cfg.length == 0 {
        return Err(Error::invalid("sequence length must be positive"));
    }
    let inputs = random_unit_rows(&mut rng, cfg.length, cfg.word_dim);
    let target = one_hot(rng.gen_range(0..cfg.labels), cfg.labels);

    let output = model.forward_train(inputs.view(), &mut rng)?;
    let masks: Vec<_> = output.records.iter().map(|r| r.mask.clone()).collect();
    let grads = model.backward(&output, target.view())?;
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();

    let loss_at = |m: &Model| -> Result<f64> {
        let out = m.forward_with_masks(inputs.view(), &masks)?;
        cross_entropy(out.probs.view(), target.view())
    };

    let names = model.tensor_names();
    let mut tensors = Vec::with_capacity(names.len());
    let mut probe = model.clone();
    for (t, name) in names.into_iter().enumerate() {
        let len = analytic[t].len();
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for i in 0..len {
            let original = probe.param_slices()[t][i];
            probe.param_slices_mut()[t][i] = original + cfg.epsilon;
            let up = loss_at(&probe)?;
            probe.param_slices_mut()[t][i] = original - cfg.epsilon;
            let down = loss_at(&probe)?;
            probe.param_slices_mut()[t][i] = original;
            let numeric = (up - down) / (2.0 * cfg.epsilon);
            let a = analytic[t][i];
            max_rel = max_rel.max(relative_error(a, numeric));
            max_abs = max_abs.max((a - numeric).abs());
        }
        tensors.push(TensorCheck {
            name,
            entries: len,
            max_rel_error: max_rel,
            max_abs_error: max_abs,
        });
    }
    let pass = tensors.iter().all(|t| t.max_rel_error < cfg.tolerance);
    Ok(GradCheckReport {
        tensors,
        tolerance: cfg.tolerance,
        pass,
    })
}
