//! Small feed-forward function approximators with exact analytic derivatives.
//!
//! Policy networks map a state encoding to a masked softmax over actions;
//! value networks map the same encoding to a scalar. Parameters live in flat
//! [`ParamVector`]s so update rules stay plain vector arithmetic. Besides
//! forward passes and gradients, the module provides Hessian-vector products
//! (Pearlmutter's forward-over-reverse scheme) for differentiating through a
//! gradient step, and a central-finite-difference checker.
//!
//! Everything here is pure: forward passes, gradients and HVPs depend only on
//! their arguments, and parameter updates produce new vectors.

use rand::Rng;

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Shapes and parameters
// ---------------------------------------------------------------------------

/// Activation applied elementwise after a layer's affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// First derivative expressed through the activation output `y`.
    #[inline]
    fn d_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
        }
    }

    /// Second derivative expressed through the activation output `y`.
    #[inline]
    fn dd_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => -2.0 * y * (1.0 - y * y),
            Activation::Linear => 0.0,
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Activation::Tanh => write!(f, "tanh"),
            Activation::Linear => write!(f, "linear"),
        }
    }
}

/// One dense layer: `outputs x inputs` weights followed by `outputs` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        (self.inputs + 1) * self.outputs
    }
}

/// Layer-shape descriptor of a network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetShape {
    pub layers: Vec<LayerSpec>,
}

impl NetShape {
    pub fn new(layers: Vec<LayerSpec>) -> Result<NetShape> {
        if layers.is_empty() {
            return Err(Error::config("a network needs at least one layer"));
        }
        for l in &layers {
            if l.inputs == 0 || l.outputs == 0 {
                return Err(Error::config("layer dimensions must be positive"));
            }
        }
        for w in layers.windows(2) {
            if w[0].outputs != w[1].inputs {
                return Err(Error::config(format!(
                    "layer output {} does not feed layer input {}",
                    w[0].outputs, w[1].inputs
                )));
            }
        }
        Ok(NetShape { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// Offset of layer `l`'s weights within the flat parameter vector.
    fn layer_offset(&self, l: usize) -> usize {
        self.layers[..l].iter().map(LayerSpec::param_count).sum()
    }
}

/// Hidden-layer widths shared by policy and value networks; the heads differ
/// only in output dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetArch {
    pub hidden: Vec<usize>,
}

impl Default for NetArch {
    fn default() -> Self {
        NetArch {
            hidden: vec![64, 64],
        }
    }
}

impl NetArch {
    fn shape(&self, input_dim: usize, output_dim: usize) -> NetShape {
        let mut layers = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = input_dim;
        for &h in &self.hidden {
            layers.push(LayerSpec {
                inputs: prev,
                outputs: h,
                activation: Activation::Tanh,
            });
            prev = h;
        }
        layers.push(LayerSpec {
            inputs: prev,
            outputs: output_dim,
            activation: Activation::Linear,
        });
        NetShape::new(layers).expect("arch dimensions are chained by construction")
    }

    /// Policy head: one logit per location (clusters plus origin).
    pub fn policy_shape(&self, num_locations: usize) -> NetShape {
        self.shape(num_locations + 1, num_locations)
    }

    /// Value head: a single scalar.
    pub fn value_shape(&self, num_locations: usize) -> NetShape {
        self.shape(num_locations + 1, 1)
    }
}

/// Flat parameter vector with its layer-shape descriptor.
///
/// Layout per layer: weights row-major (`w[out][in]`), then biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    shape: NetShape,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(shape: NetShape, values: Vec<f64>) -> Result<ParamVector> {
        if values.len() != shape.param_count() {
            return Err(Error::contract(format!(
                "shape wants {} parameters, got {}",
                shape.param_count(),
                values.len()
            )));
        }
        Ok(ParamVector { shape, values })
    }

    pub fn zeros(shape: NetShape) -> ParamVector {
        let n = shape.param_count();
        ParamVector {
            shape,
            values: vec![0.0; n],
        }
    }

    /// Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer, weights
    /// then biases, in layer order.
    pub fn init_uniform(shape: NetShape, rng: &mut impl Rng) -> ParamVector {
        let mut values = Vec::with_capacity(shape.param_count());
        for layer in &shape.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for _ in 0..layer.param_count() {
                values.push(bound * (2.0 * rng.gen::<f64>() - 1.0));
            }
        }
        ParamVector { shape, values }
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `self += s * other`; shapes must match.
    pub fn add_scaled(&mut self, other: &ParamVector, s: f64) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Weight block of layer `l` (row-major `out x in`).
    fn weights(&self, l: usize) -> &[f64] {
        let spec = self.shape.layers[l];
        let off = self.shape.layer_offset(l);
        &self.values[off..off + spec.inputs * spec.outputs]
    }

    /// Bias block of layer `l`.
    fn biases(&self, l: usize) -> &[f64] {
        let spec = self.shape.layers[l];
        let off = self.shape.layer_offset(l) + spec.inputs * spec.outputs;
        &self.values[off..off + spec.outputs]
    }
}

// ---------------------------------------------------------------------------
// State encoding
// ---------------------------------------------------------------------------

/// Network input: one-hot location (clusters then origin) plus normalized
/// remaining time in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct StateEncoding {
    values: Vec<f64>,
}

impl StateEncoding {
    pub fn new(
        location_index: usize,
        num_locations: usize,
        time_fraction: f64,
    ) -> Result<StateEncoding> {
        if location_index >= num_locations {
            return Err(Error::contract(format!(
                "location index {location_index} out of {num_locations}"
            )));
        }
        if !(-1e-9..=1.0 + 1e-9).contains(&time_fraction) {
            return Err(Error::contract(format!(
                "time fraction must be in [0, 1], got {time_fraction}"
            )));
        }
        let mut values = vec![0.0; num_locations + 1];
        values[location_index] = 1.0;
        values[num_locations] = time_fraction.clamp(0.0, 1.0);
        Ok(StateEncoding { values })
    }

    /// Free-form feature vector, for custom inputs and tests.
    pub fn from_values(values: Vec<f64>) -> StateEncoding {
        StateEncoding { values }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

/// Post-activation outputs of every layer, cached for backprop.
struct Trace {
    /// `act[0]` is the input; `act[l]` the output of layer l (1-based).
    act: Vec<Vec<f64>>,
}

fn forward_trace(params: &ParamVector, input: &[f64]) -> Result<Trace> {
    let shape = params.shape();
    if input.len() != shape.input_dim() {
        return Err(Error::contract(format!(
            "input dim {} does not match network input {}",
            input.len(),
            shape.input_dim()
        )));
    }
    let mut act = Vec::with_capacity(shape.layers.len() + 1);
    act.push(input.to_vec());
    for (l, layer) in shape.layers.iter().enumerate() {
        let w = params.weights(l);
        let b = params.biases(l);
        let prev = &act[l];
        let mut out = Vec::with_capacity(layer.outputs);
        for o in 0..layer.outputs {
            let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
            let z = b[o] + row.iter().zip(prev).map(|(wi, xi)| wi * xi).sum::<f64>();
            out.push(layer.activation.apply(z));
        }
        act.push(out);
    }
    if act.last().unwrap().iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("network produced a non-finite output"));
    }
    Ok(Trace { act })
}

/// Numerically stable masked softmax. Masked-out entries get probability
/// exactly zero (their logits are never exponentiated).
fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != mask.len() {
        return Err(Error::contract(format!(
            "mask length {} does not match {} actions",
            mask.len(),
            logits.len()
        )));
    }
    let mut max = f64::NEG_INFINITY;
    for (i, &l) in logits.iter().enumerate() {
        if mask[i] && l > max {
            max = l;
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(Error::contract("action mask is empty"));
    }
    let mut probs = vec![0.0; logits.len()];
    let mut total = 0.0;
    for i in 0..logits.len() {
        if mask[i] {
            let e = (logits[i] - max).exp();
            probs[i] = e;
            total += e;
        }
    }
    for p in &mut probs {
        *p /= total;
    }
    Ok(probs)
}

/// Strategy over actions at one state: masked softmax of the policy logits.
pub fn forward_policy(
    params: &ParamVector,
    enc: &StateEncoding,
    mask: &[bool],
) -> Result<Vec<f64>> {
    let trace = forward_trace(params, enc.as_slice())?;
    masked_softmax(trace.act.last().unwrap(), mask)
}

/// Log-probability of `action` under the masked policy.
pub fn log_prob(
    params: &ParamVector,
    enc: &StateEncoding,
    mask: &[bool],
    action: usize,
) -> Result<f64> {
    if action >= mask.len() || !mask[action] {
        return Err(Error::domain(format!("action {action} is not in the mask")));
    }
    let trace = forward_trace(params, enc.as_slice())?;
    let logits = trace.act.last().unwrap();
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| (l - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    Ok(logits[action] - lse)
}

/// Scalar output of a value network.
pub fn forward_value(params: &ParamVector, enc: &StateEncoding) -> Result<f64> {
    let trace = forward_trace(params, enc.as_slice())?;
    let out = trace.act.last().unwrap();
    if out.len() != 1 {
        return Err(Error::contract(format!(
            "value network must have one output, has {}",
            out.len()
        )));
    }
    Ok(out[0])
}

/// Shannon entropy (nats) of a probability vector; zero entries contribute 0.
pub fn entropy(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}

// ---------------------------------------------------------------------------
// Reverse pass
// ---------------------------------------------------------------------------

/// Backpropagate `seed` (the cotangent on the final layer's outputs) to a
/// parameter gradient.
fn backprop(params: &ParamVector, trace: &Trace, seed: &[f64]) -> ParamVector {
    let shape = params.shape();
    let num_layers = shape.layers.len();
    let mut grad = ParamVector::zeros(shape.clone());

    // delta over pre-activations of the current layer.
    let top = &trace.act[num_layers];
    let top_act = shape.layers[num_layers - 1].activation;
    let mut delta: Vec<f64> = seed
        .iter()
        .zip(top)
        .map(|(s, y)| s * top_act.d_from_output(*y))
        .collect();

    for l in (0..num_layers).rev() {
        let layer = shape.layers[l];
        let prev = &trace.act[l];
        let w_off = shape.layer_offset(l);
        let b_off = w_off + layer.inputs * layer.outputs;
        for o in 0..layer.outputs {
            let d = delta[o];
            let row = &mut grad.values[w_off + o * layer.inputs..w_off + (o + 1) * layer.inputs];
            for (g, x) in row.iter_mut().zip(prev) {
                *g += d * x;
            }
            grad.values[b_off + o] += d;
        }
        if l > 0 {
            let w = params.weights(l);
            let below_act = shape.layers[l - 1].activation;
            let below = &trace.act[l];
            let _ = below;
            let mut next_delta = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                let d = delta[o];
                let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
                for (nd, wi) in next_delta.iter_mut().zip(row) {
                    *nd += d * wi;
                }
            }
            for (nd, y) in next_delta.iter_mut().zip(&trace.act[l]) {
                *nd *= below_act.d_from_output(*y);
            }
            delta = next_delta;
        }
    }
    grad
}

/// Gradient of the value output with respect to the parameters, plus the
/// value itself.
pub fn value_and_grad(params: &ParamVector, enc: &StateEncoding) -> Result<(f64, ParamVector)> {
    let trace = forward_trace(params, enc.as_slice())?;
    let out = trace.act.last().unwrap();
    if out.len() != 1 {
        return Err(Error::contract("value network must have one output"));
    }
    let grad = backprop(params, &trace, &[1.0]);
    if !grad.all_finite() {
        return Err(Error::numeric("value gradient is non-finite"));
    }
    Ok((out[0], grad))
}

pub fn grad_value(params: &ParamVector, enc: &StateEncoding) -> Result<ParamVector> {
    value_and_grad(params, enc).map(|(_, g)| g)
}

/// Exact gradient of `log pi(action | enc)` for the masked softmax policy.
pub fn grad_log_prob(
    params: &ParamVector,
    enc: &StateEncoding,
    mask: &[bool],
    action: usize,
) -> Result<ParamVector> {
    if action >= mask.len() || !mask[action] {
        return Err(Error::domain(format!("action {action} is not in the mask")));
    }
    let trace = forward_trace(params, enc.as_slice())?;
    let probs = masked_softmax(trace.act.last().unwrap(), mask)?;
    // d log p(a) / d logit_j = 1{j == a} - p_j on the mask, 0 elsewhere.
    let seed: Vec<f64> = probs
        .iter()
        .enumerate()
        .map(|(j, p)| {
            if mask[j] {
                (j == action) as u8 as f64 - p
            } else {
                0.0
            }
        })
        .collect();
    let grad = backprop(params, &trace, &seed);
    if !grad.all_finite() {
        return Err(Error::numeric("policy gradient is non-finite"));
    }
    Ok(grad)
}

// ---------------------------------------------------------------------------
// Hessian-vector products (forward-over-reverse)
// ---------------------------------------------------------------------------

struct RTrace {
    /// Tangent of each layer's post-activation output along the direction.
    r_act: Vec<Vec<f64>>,
}

/// Forward tangent propagation along parameter direction `dir` (input held
/// fixed).
fn r_forward(params: &ParamVector, dir: &ParamVector, trace: &Trace) -> RTrace {
    let shape = params.shape();
    let mut r_act: Vec<Vec<f64>> = Vec::with_capacity(shape.layers.len() + 1);
    r_act.push(vec![0.0; trace.act[0].len()]);
    for (l, layer) in shape.layers.iter().enumerate() {
        let w = params.weights(l);
        let vw = dir.weights(l);
        let vb = dir.biases(l);
        let prev = &trace.act[l];
        let r_prev = &r_act[l];
        let out = &trace.act[l + 1];
        let mut r_out = Vec::with_capacity(layer.outputs);
        for o in 0..layer.outputs {
            let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
            let vrow = &vw[o * layer.inputs..(o + 1) * layer.inputs];
            let mut rz = vb[o];
            for i in 0..layer.inputs {
                rz += vrow[i] * prev[i] + row[i] * r_prev[i];
            }
            r_out.push(layer.activation.d_from_output(out[o]) * rz);
        }
        r_act.push(r_out);
    }
    RTrace { r_act }
}

/// Reverse pass carrying both the adjoint and its tangent; returns H·dir for
/// the scalar whose final-layer cotangent is `seed` with tangent `r_seed`.
fn r_backprop(
    params: &ParamVector,
    dir: &ParamVector,
    trace: &Trace,
    rtrace: &RTrace,
    seed: &[f64],
    r_seed: &[f64],
) -> ParamVector {
    let shape = params.shape();
    let num_layers = shape.layers.len();
    let mut hv = ParamVector::zeros(shape.clone());

    let top_act = shape.layers[num_layers - 1].activation;
    let top = &trace.act[num_layers];
    let r_top_pre = pre_tangent(top_act, top, &rtrace.r_act[num_layers]);
    let mut delta: Vec<f64> = Vec::with_capacity(top.len());
    let mut r_delta: Vec<f64> = Vec::with_capacity(top.len());
    for o in 0..top.len() {
        let y = top[o];
        delta.push(seed[o] * top_act.d_from_output(y));
        r_delta.push(
            r_seed[o] * top_act.d_from_output(y)
                + seed[o] * top_act.dd_from_output(y) * r_top_pre[o],
        );
    }

    for l in (0..num_layers).rev() {
        let layer = shape.layers[l];
        let prev = &trace.act[l];
        let r_prev = &rtrace.r_act[l];
        let w_off = shape.layer_offset(l);
        let b_off = w_off + layer.inputs * layer.outputs;
        for o in 0..layer.outputs {
            let d = delta[o];
            let rd = r_delta[o];
            let row = &mut hv.values[w_off + o * layer.inputs..w_off + (o + 1) * layer.inputs];
            for i in 0..layer.inputs {
                row[i] += rd * prev[i] + d * r_prev[i];
            }
            hv.values[b_off + o] += rd;
        }
        if l > 0 {
            let w = params.weights(l);
            let vw = dir.weights(l);
            let below_act = shape.layers[l - 1].activation;
            let below = &trace.act[l];
            let r_below_pre = pre_tangent(below_act, below, &rtrace.r_act[l]);
            let mut e = vec![0.0; layer.inputs];
            let mut re = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                let d = delta[o];
                let rd = r_delta[o];
                let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
                let vrow = &vw[o * layer.inputs..(o + 1) * layer.inputs];
                for i in 0..layer.inputs {
                    e[i] += d * row[i];
                    re[i] += d * vrow[i] + rd * row[i];
                }
            }
            let mut next_delta = Vec::with_capacity(layer.inputs);
            let mut next_r_delta = Vec::with_capacity(layer.inputs);
            for i in 0..layer.inputs {
                let y = below[i];
                next_delta.push(e[i] * below_act.d_from_output(y));
                next_r_delta.push(
                    re[i] * below_act.d_from_output(y)
                        + e[i] * below_act.dd_from_output(y) * r_below_pre[i],
                );
            }
            delta = next_delta;
            r_delta = next_r_delta;
        }
    }
    hv
}

/// Recover the pre-activation tangent Rz from the post-activation tangent
/// Ra = act'(z) * Rz.
fn pre_tangent(act: Activation, outputs: &[f64], r_outputs: &[f64]) -> Vec<f64> {
    outputs
        .iter()
        .zip(r_outputs)
        .map(|(y, ra)| {
            let d = act.d_from_output(*y);
            if d == 0.0 {
                0.0
            } else {
                ra / d
            }
        })
        .collect()
}

/// Hessian-vector product of the scalar value output.
pub fn hvp_value(
    params: &ParamVector,
    enc: &StateEncoding,
    dir: &ParamVector,
) -> Result<ParamVector> {
    let trace = forward_trace(params, enc.as_slice())?;
    if trace.act.last().unwrap().len() != 1 {
        return Err(Error::contract("value network must have one output"));
    }
    let rtrace = r_forward(params, dir, &trace);
    let hv = r_backprop(params, dir, &trace, &rtrace, &[1.0], &[0.0]);
    if !hv.all_finite() {
        return Err(Error::numeric("value HVP is non-finite"));
    }
    Ok(hv)
}

/// Hessian-vector product of `log pi(action | enc)`.
pub fn hvp_log_prob(
    params: &ParamVector,
    enc: &StateEncoding,
    mask: &[bool],
    action: usize,
    dir: &ParamVector,
) -> Result<ParamVector> {
    if action >= mask.len() || !mask[action] {
        return Err(Error::domain(format!("action {action} is not in the mask")));
    }
    let trace = forward_trace(params, enc.as_slice())?;
    let rtrace = r_forward(params, dir, &trace);
    let probs = masked_softmax(trace.act.last().unwrap(), mask)?;
    let r_logits = &rtrace.r_act[rtrace.r_act.len() - 1];
    // Tangent of the softmax along the direction: Rp = p * (Rz - <p, Rz>).
    let mean_r: f64 = probs
        .iter()
        .zip(r_logits)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((p, rz), _)| p * rz)
        .sum();
    let mut seed = vec![0.0; probs.len()];
    let mut r_seed = vec![0.0; probs.len()];
    for j in 0..probs.len() {
        if mask[j] {
            seed[j] = (j == action) as u8 as f64 - probs[j];
            r_seed[j] = -(probs[j] * (r_logits[j] - mean_r));
        }
    }
    let hv = r_backprop(params, dir, &trace, &rtrace, &seed, &r_seed);
    if !hv.all_finite() {
        return Err(Error::numeric("policy HVP is non-finite"));
    }
    Ok(hv)
}

// ---------------------------------------------------------------------------
// Finite-difference checking
// ---------------------------------------------------------------------------

/// Compare `analytic` against central finite differences of `f` at `params`.
///
/// Returns the worst per-coordinate error relative to the finite-difference
/// reference, with coordinates much smaller than the largest gradient entry
/// measured against 1% of that scale so that rounding noise on near-zero
/// entries does not dominate.
pub fn finite_diff_check(
    f: &mut dyn FnMut(&ParamVector) -> f64,
    params: &ParamVector,
    analytic: &ParamVector,
    step: f64,
) -> f64 {
    assert_eq!(params.shape(), analytic.shape(), "gradient shape mismatch");
    let n = params.len();
    let mut fd = vec![0.0; n];
    let mut work = params.clone();
    for i in 0..n {
        let orig = work.values[i];
        work.values[i] = orig + step;
        let up = f(&work);
        work.values[i] = orig - step;
        let down = f(&work);
        work.values[i] = orig;
        fd[i] = (up - down) / (2.0 * step);
    }
    let scale = fd
        .iter()
        .chain(analytic.values())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let floor = 0.01 * scale;
    fd.iter()
        .zip(analytic.values())
        .map(|(&fdi, &ani)| (fdi - ani).abs() / fdi.abs().max(floor))
        .fold(0.0, f64::max)
}
