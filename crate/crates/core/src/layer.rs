//! Low-rank tensor feature layer over all (possibly non-consecutive) n-grams.
//!
//! A layer of order `n` owns `n` slot matrices `U[1..n]` (each `h × d_in`),
//! an output matrix `O` (`h × h`) and an activation bias `b`. The feature of
//! one n-gram `(x_{i1}, .., x_{in})` is `Oᵀ(U[1]x_{i1} ⊙ .. ⊙ U[n]x_{in})`,
//! which is the contraction of the Kruskal tensor `Σ_r U[1]_r ⊗ .. ⊗ O_r`
//! against the word vectors.
//!
//! At every position `k` the layer emits the decayed sum of all 1..n-gram
//! features ending at `k`, where an m-gram spanning positions `i1 < .. < k`
//! is weighted by `λ^((k - i1) - (m - 1))`, i.e. by `λ` per skipped word.
//! [`forward`] evaluates this in `O(L·n)` matrix-vector work through the
//! decayed prefix tables `f_m` / `s_m`; [`forward_reference`] enumerates the
//! n-grams directly and exists as an oracle for small inputs.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use crate::error::{Error, Result};

/// Initial value of every activation bias entry.
pub const BIAS_INIT: f64 = 0.01;

/// Parameters of one feature-mapping layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `U[1..n]`, each `h × d_in`.
    pub slots: Vec<Array2<f64>>,
    /// `O`, `h × h`.
    pub output: Array2<f64>,
    /// Activation bias `b`, length `h`. Applied by the network, not by [`forward`].
    pub bias: Array1<f64>,
}

impl LayerParams {
    /// Builds a layer from its tensors, checking shapes and finiteness.
    pub fn new(slots: Vec<Array2<f64>>, output: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        let params = LayerParams {
            slots,
            output,
            bias,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn order(&self) -> usize {
        self.slots.len()
    }

    pub fn input_dim(&self) -> usize {
        self.slots.first().map_or(0, |u| u.ncols())
    }

    pub fn hidden(&self) -> usize {
        self.output.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden();
        let d = self.input_dim();
        if self.slots.is_empty() || h == 0 || d == 0 {
            return Err(Error::invalid(
                "layer needs order, input dim and hidden dim >= 1",
            ));
        }
        for (m, u) in self.slots.iter().enumerate() {
            if u.dim() != (h, d) {
                return Err(Error::shape(format!(
                    "slot {} is {:?}, expected ({h}, {d})",
                    m + 1,
                    u.dim()
                )));
            }
        }
        if self.output.dim() != (h, h) {
            return Err(Error::shape(format!(
                "output matrix is {:?}, expected ({h}, {h})",
                self.output.dim()
            )));
        }
        if self.bias.len() != h {
            return Err(Error::shape(format!(
                "bias has length {}, expected {h}",
                self.bias.len()
            )));
        }
        let row_major = self.slots.iter().all(|u| u.is_standard_layout())
            && self.output.is_standard_layout()
            && self.bias.is_standard_layout();
        if !row_major {
            return Err(Error::shape("layer tensors must be in row-major layout"));
        }
        let finite = self
            .slots
            .iter()
            .flat_map(|u| u.iter())
            .chain(self.output.iter())
            .chain(self.bias.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Numeric(
                "layer parameters contain NaN or infinity".into(),
            ));
        }
        Ok(())
    }
}

/// Draws a fresh layer: slot entries uniform on `±√(3/d_in)`, output entries
/// uniform on `±√(3/h)`, bias constant [`BIAS_INIT`]. Each row then has unit
/// expected squared norm.
pub fn init_layer<R: Rng + ?Sized>(
    input_dim: usize,
    hidden: usize,
    order: usize,
    rng: &mut R,
) -> Result<LayerParams> {
    if input_dim == 0 || hidden == 0 || order == 0 {
        return Err(Error::invalid(format!(
            "init_layer: dimensions must be positive (d_in={input_dim}, h={hidden}, n={order})"
        )));
    }
    let slot_bound = (3.0 / input_dim as f64).sqrt();
    let slot_dist = Uniform::new_inclusive(-slot_bound, slot_bound);
    let slots = (0..order)
        .map(|_| Array2::from_shape_simple_fn((hidden, input_dim), || slot_dist.sample(rng)))
        .collect();
    let out_bound = (3.0 / hidden as f64).sqrt();
    let out_dist = Uniform::new_inclusive(-out_bound, out_bound);
    let output = Array2::from_shape_simple_fn((hidden, hidden), || out_dist.sample(rng));
    Ok(LayerParams {
        slots,
        output,
        bias: Array1::from_elem(hidden, BIAS_INIT),
    })
}

/// Everything [`backward`] needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub decay: f64,
    /// Input sequence, `L × d_in`.
    pub inputs: Array2<f64>,
    /// `U[m] x_k` for every slot, each `L × h`.
    pub projections: Vec<Array2<f64>>,
    /// `f_m[k]` for `m = 1..n`, each `L × h`.
    pub f: Vec<Array2<f64>>,
    /// `s_m` for `m = 1..n-1`, each `(L+1) × h`. Row 0 is the zero state and
    /// row `k + 1` holds the value at position `k`.
    pub s: Vec<Array2<f64>>,
    /// `Σ_m f_m`, `L × h`.
    pub total: Array2<f64>,
    /// Pre-activation output `z`, `L × h`.
    pub output: Array2<f64>,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }
}

/// Gradients of a layer's slot and output matrices. The bias gradient is
/// produced by the network, which owns the activation.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub slots: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

fn check_decay(decay: f64) -> Result<()> {
    if !(0.0..1.0).contains(&decay) {
        return Err(Error::invalid(format!(
            "decay must lie in [0, 1), got {decay}"
        )));
    }
    Ok(())
}

fn check_inputs(params: &LayerParams, inputs: &ArrayView2<f64>) -> Result<()> {
    if inputs.nrows() == 0 {
        return Err(Error::invalid("input sequence is empty"));
    }
    if inputs.ncols() != params.input_dim() {
        return Err(Error::shape(format!(
            "input has {} columns, layer expects {}",
            inputs.ncols(),
            params.input_dim()
        )));
    }
    if !inputs.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric(
            "input sequence contains NaN or infinity".into(),
        ));
    }
    Ok(())
}

/// `s[k+1] = λ·s[k] + f[k]` with `s[0] = 0`.
fn decayed_prefix(f: &Array2<f64>, decay: f64) -> Array2<f64> {
    let (len, h) = f.dim();
    let mut s = Array2::zeros((len + 1, h));
    for k in 0..len {
        let (done, mut rest) = s.view_mut().split_at(Axis(0), k + 1);
        let mut cur = rest.row_mut(0);
        cur.assign(&f.row(k));
        cur.scaled_add(decay, &done.row(k));
    }
    s
}

/// Evaluates the layer on `inputs` (`L × d_in`) with decay `λ ∈ [0, 1)`.
///
/// Returns the pre-activation outputs (`L × h`) and the trace of all
/// intermediate tables.
pub fn forward(
    params: &LayerParams,
    inputs: ArrayView2<f64>,
    decay: f64,
) -> Result<(Array2<f64>, ForwardTrace)> {
    check_decay(decay)?;
    check_inputs(params, &inputs)?;
    let len = inputs.nrows();

    let projections: Vec<Array2<f64>> = params.slots.iter().map(|u| inputs.dot(&u.t())).collect();

    let mut f = Vec::with_capacity(params.order());
    let mut s = Vec::with_capacity(params.order() - 1);
    f.push(projections[0].clone());
    for proj in &projections[1..] {
        let prefix = decayed_prefix(f.last().expect("f is nonempty"), decay);
        // f_m[k] = s_{m-1}[k-1] ⊙ U[m]x_k
        let fm = &prefix.slice(s![..len, ..]) * proj;
        s.push(prefix);
        f.push(fm);
    }

    let mut total = f[0].clone();
    for fm in &f[1..] {
        total += fm;
    }
    let output = total.dot(&params.output);

    let trace = ForwardTrace {
        decay,
        inputs: inputs.to_owned(),
        projections,
        f,
        s,
        total,
        output: output.clone(),
    };
    Ok((output, trace))
}

/// Direct enumeration of every m-gram (`m = 1..n`) ending at each position.
///
/// Cost grows as `O(Lⁿ)`; intended as an oracle for [`forward`] on short
/// sequences. Uses `0⁰ = 1`, so `λ = 0` keeps exactly the consecutive n-grams.
pub fn forward_reference(
    params: &LayerParams,
    inputs: ArrayView2<f64>,
    decay: f64,
) -> Result<Array2<f64>> {
    check_decay(decay)?;
    check_inputs(params, &inputs)?;
    let len = inputs.nrows();
    let h = params.hidden();

    let mut out = Array2::zeros((len, h));
    let mut tuple = Vec::with_capacity(params.order());
    for k in 0..len {
        let mut z = Array1::zeros(h);
        for m in 1..=params.order() {
            tuple.clear();
            enumerate_tuples(params, &inputs, decay, k, m, 0, &mut tuple, &mut z);
        }
        out.row_mut(k).assign(&z);
    }
    Ok(out)
}

/// Recursively picks `m - 1` strictly increasing indices below `k`, then
/// adds the weighted feature of the tuple `(.., k)` into `acc`.
#[allow(clippy::too_many_arguments)]
fn enumerate_tuples(
    params: &LayerParams,
    inputs: &ArrayView2<f64>,
    decay: f64,
    k: usize,
    m: usize,
    start: usize,
    tuple: &mut Vec<usize>,
    acc: &mut Array1<f64>,
) {
    if tuple.len() + 1 == m {
        tuple.push(k);
        let first = tuple[0];
        let gaps = (k - first) - (m - 1);
        let weight = decay.powi(gaps as i32);
        let mut product = Array1::from_elem(params.hidden(), 1.0);
        for (slot, &pos) in tuple.iter().enumerate() {
            product *= &params.slots[slot].dot(&inputs.row(pos));
        }
        acc.scaled_add(weight, &params.output.t().dot(&product));
        tuple.pop();
        return;
    }
    let remaining = m - 1 - tuple.len();
    // leave room for the remaining indices below k
    for i in start..=(k.saturating_sub(remaining)) {
        if i + remaining > k {
            break;
        }
        tuple.push(i);
        enumerate_tuples(params, inputs, decay, k, m, i + 1, tuple, acc);
        tuple.pop();
    }
}

/// Reverse-mode gradients of `Σ_k ⟨dZ[k], z[k]⟩`.
///
/// Returns the slot and output matrix gradients and the gradient with
/// respect to the input sequence.
pub fn backward(
    params: &LayerParams,
    trace: &ForwardTrace,
    decay: f64,
    grad_output: ArrayView2<f64>,
) -> Result<(LayerGrads, Array2<f64>)> {
    let n = params.order();
    let h = params.hidden();
    let len = trace.len();
    if trace.decay != decay {
        return Err(Error::invalid(format!(
            "trace was recorded with decay {}, backward called with {decay}",
            trace.decay
        )));
    }
    if trace.f.len() != n
        || trace.s.len() + 1 != n
        || trace.inputs.ncols() != params.input_dim()
        || trace.total.ncols() != h
    {
        return Err(Error::invalid(
            "trace does not belong to these layer parameters",
        ));
    }
    if grad_output.dim() != (len, h) {
        return Err(Error::shape(format!(
            "output gradient is {:?}, expected ({len}, {h})",
            grad_output.dim()
        )));
    }

    let grad_output_matrix = standard_layout(trace.total.t().dot(&grad_output));
    // every f_m feeds z directly through O
    let grad_total = grad_output.dot(&params.output.t());

    let mut grad_proj: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); n];
    // gradient w.r.t. rows 0..L of the next-lower s table
    let mut pending: Option<Array2<f64>> = None;
    for m in (0..n).rev() {
        let mut grad_f = grad_total.clone();
        if let Some(direct) = pending.take() {
            // s[r] = λ·s[r-1] + f[r-1]  (1-based rows); run it backwards
            let mut carry = Array1::<f64>::zeros(h);
            for r in (1..=len).rev() {
                carry *= decay;
                if r < len {
                    carry += &direct.row(r);
                }
                let mut g = grad_f.row_mut(r - 1);
                g += &carry;
            }
        }
        if m == 0 {
            grad_proj[0] = grad_f;
        } else {
            let prev_s = trace.s[m - 1].slice(s![..len, ..]);
            grad_proj[m] = &grad_f * &prev_s;
            pending = Some(&grad_f * &trace.projections[m]);
        }
    }

    let mut grad_inputs = Array2::zeros(trace.inputs.dim());
    let mut grad_slots = Vec::with_capacity(n);
    for (gp, u) in grad_proj.iter().zip(&params.slots) {
        grad_slots.push(standard_layout(gp.t().dot(&trace.inputs)));
        grad_inputs += &gp.dot(u);
    }

    Ok((
        LayerGrads {
            slots: grad_slots,
            output: grad_output_matrix,
        },
        grad_inputs,
    ))
}

pub(crate) fn standard_layout(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// Elementwise `max(z + b, 0)` over every row.
pub fn relu_with_bias(pre: &Array2<f64>, bias: &Array1<f64>) -> Array2<f64> {
    let mut out = pre + &bias.view().insert_axis(Axis(0));
    out.mapv_inplace(|v| v.max(0.0));
    out
}

/// Zeroes `grad` wherever the activation was inactive (`z + b <= 0`).
pub(crate) fn relu_backward(grad: &mut Array2<f64>, pre: &Array2<f64>, bias: &Array1<f64>) {
    Zip::from(grad.rows_mut())
        .and(pre.rows())
        .for_each(|mut g, z| {
            Zip::from(&mut g).and(&z).and(bias).for_each(|g, &z, &b| {
                if z + b <= 0.0 {
                    *g = 0.0;
                }
            });
        });
}
