//! Dense multilayer perceptrons with exact backpropagation and Adam.
//!
//! Hidden layers use ReLU, the output layer is linear. All arithmetic is
//! `f64`. Batched passes go through `matrixmultiply::dgemm`; the
//! single-sample entry points are thin wrappers over the batched ones.

use rand::Rng;

use crate::error::{Error, Result};

/// Row-major matrix of `rows` samples by `cols` features.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::DimensionMismatch {
                    context: "matrix rows",
                    expected: cols,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// A fully connected network: ReLU hidden layers, identity output.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    layer_sizes: Vec<usize>,
    /// `weights[l]` is `layer_sizes[l + 1]` rows by `layer_sizes[l]` columns.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Gradients (or any other per-parameter quantity) shaped like a [`DenseNet`].
#[derive(Clone, Debug, PartialEq)]
pub struct NetGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl NetGrads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    /// `self += other`, shapes must agree.
    pub fn add_assign(&mut self, other: &NetGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().flatten().chain(self.biases.iter().flatten())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .flatten()
            .chain(self.biases.iter_mut().flatten())
    }

    pub fn max_abs(&self) -> f64 {
        self.values().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Activations retained by a batched forward pass for use in backprop.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// `activations[0]` is the input, `activations[l]` the post-activation
    /// output of layer `l` (the last one is the linear output).
    pub activations: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("cache holds at least the input")
    }
}

impl DenseNet {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Result<Self> {
        Self::check_sizes(layer_sizes)?;
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-limit..=limit))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    /// All parameters zero.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        Self::check_sizes(layer_sizes)?;
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights: layer_sizes.windows(2).map(|p| vec![0.0; p[0] * p[1]]).collect(),
            biases: layer_sizes.windows(2).map(|p| vec![0.0; p[1]]).collect(),
        })
    }

    /// Builds a net from explicit parameters, validating every shape.
    pub fn from_parts(
        layer_sizes: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        Self::check_sizes(&layer_sizes)?;
        let layers = layer_sizes.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::DimensionMismatch {
                context: "layer count",
                expected: layers,
                actual: weights.len().min(biases.len()),
            });
        }
        for (l, pair) in layer_sizes.windows(2).enumerate() {
            if weights[l].len() != pair[0] * pair[1] {
                return Err(Error::DimensionMismatch {
                    context: "weight matrix",
                    expected: pair[0] * pair[1],
                    actual: weights[l].len(),
                });
            }
            if biases[l].len() != pair[1] {
                return Err(Error::DimensionMismatch {
                    context: "bias vector",
                    expected: pair[1],
                    actual: biases[l].len(),
                });
            }
        }
        let net = Self {
            layer_sizes,
            weights,
            biases,
        };
        if !net.is_finite() {
            return Err(Error::NonFinite {
                context: "network parameters",
                detail: "parameters must be finite".into(),
            });
        }
        Ok(net)
    }

    fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "a network needs at least 2 layer sizes, got {}",
                layer_sizes.len()
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::InvalidInput("layer sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().flatten().chain(self.biases.iter().flatten())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .flatten()
            .chain(self.biases.iter_mut().flatten())
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|v| v.is_finite())
    }

    pub fn same_architecture(&self, other: &DenseNet) -> bool {
        self.layer_sizes == other.layer_sizes
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let batch = Matrix {
            rows: 1,
            cols: input.len(),
            data: input.to_vec(),
        };
        let cache = self.forward_batch(&batch)?;
        Ok(cache.output().data.clone())
    }

    pub fn forward_batch(&self, inputs: &Matrix) -> Result<ForwardCache> {
        if inputs.cols != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_dim(),
                actual: inputs.cols,
            });
        }
        let last = self.weights.len() - 1;
        let mut activations = Vec::with_capacity(self.weights.len() + 1);
        activations.push(inputs.clone());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let prev = activations.last().expect("input pushed");
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let mut out = Matrix::zeros(prev.rows, fan_out);
            for r in 0..out.rows {
                out.row_mut(r).copy_from_slice(b);
            }
            // out (B x out) += prev (B x in) * W^T (in x out)
            gemm(
                prev.rows,
                fan_in,
                fan_out,
                &prev.data,
                (fan_in as isize, 1),
                w,
                (1, fan_in as isize),
                &mut out.data,
                1.0,
            );
            if l != last {
                out.data.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            activations.push(out);
        }
        Ok(ForwardCache { activations })
    }

    pub fn backward(&self, input: &[f64], output_gradient: &[f64]) -> Result<NetGrads> {
        let batch = Matrix {
            rows: 1,
            cols: input.len(),
            data: input.to_vec(),
        };
        let cache = self.forward_batch(&batch)?;
        let grad = Matrix {
            rows: 1,
            cols: output_gradient.len(),
            data: output_gradient.to_vec(),
        };
        self.backward_batch(&cache, &grad)
    }

    /// Parameter gradients of `sum_b <output_gradient[b], output[b]>`.
    pub fn backward_batch(&self, cache: &ForwardCache, output_gradient: &Matrix) -> Result<NetGrads> {
        let out = cache.output();
        if output_gradient.cols != self.output_dim() || output_gradient.rows != out.rows {
            return Err(Error::DimensionMismatch {
                context: "output gradient",
                expected: out.rows * self.output_dim(),
                actual: output_gradient.rows * output_gradient.cols,
            });
        }
        if cache.activations.len() != self.weights.len() + 1 {
            return Err(Error::DimensionMismatch {
                context: "forward cache depth",
                expected: self.weights.len() + 1,
                actual: cache.activations.len(),
            });
        }
        let mut grads = NetGrads::zeros_like(self);
        let mut delta = output_gradient.clone();
        for l in (0..self.weights.len()).rev() {
            let prev = &cache.activations[l];
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            // dW (out x in) = delta^T (out x B) * prev (B x in)
            gemm(
                fan_out,
                delta.rows,
                fan_in,
                &delta.data,
                (1, fan_out as isize),
                &prev.data,
                (fan_in as isize, 1),
                &mut grads.weights[l],
                0.0,
            );
            let db = &mut grads.biases[l];
            for r in 0..delta.rows {
                db.iter_mut().zip(delta.row(r)).for_each(|(a, d)| *a += d);
            }
            if l > 0 {
                // dA (B x in) = delta (B x out) * W (out x in), masked by ReLU
                let mut next = Matrix::zeros(delta.rows, fan_in);
                gemm(
                    delta.rows,
                    fan_out,
                    fan_in,
                    &delta.data,
                    (fan_out as isize, 1),
                    &self.weights[l],
                    (fan_in as isize, 1),
                    &mut next.data,
                    0.0,
                );
                for (g, a) in next.data.iter_mut().zip(&prev.data) {
                    if *a <= 0.0 {
                        *g = 0.0;
                    }
                }
                delta = next;
            }
        }
        Ok(grads)
    }

    /// Smallest |pre-activation| over hidden units for this input; a
    /// finite-difference check is unreliable when this is near zero.
    pub fn min_kink_distance(&self, input: &[f64]) -> Result<f64> {
        let mut act = input.to_vec();
        if act.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_dim(),
                actual: act.len(),
            });
        }
        let mut closest = f64::INFINITY;
        for l in 0..self.weights.len() - 1 {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let mut next = self.biases[l].clone();
            for (o, z) in next.iter_mut().enumerate() {
                let row = &self.weights[l][o * fan_in..(o + 1) * fan_in];
                *z += row.iter().zip(&act).map(|(w, x)| w * x).sum::<f64>();
                closest = closest.min(z.abs());
            }
            debug_assert_eq!(next.len(), fan_out);
            act = next.into_iter().map(|z| z.max(0.0)).collect();
        }
        Ok(closest)
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        let mut out = String::from("densenet v1\n");
        out.push_str("layers ");
        out.push_str(
            &self
                .layer_sizes
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(" "),
        );
        out.push('\n');
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push_str("weights ");
            out.push_str(&join(w));
            out.push('\n');
            out.push_str("biases ");
            out.push_str(&join(b));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some("densenet v1") {
            return Err(Error::Parse("missing `densenet v1` header".into()));
        }
        let sizes_line = lines
            .next()
            .and_then(|l| l.strip_prefix("layers "))
            .ok_or_else(|| Error::Parse("missing layers line".into()))?;
        let layer_sizes = sizes_line
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| Error::Parse(format!("layer size `{t}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let parse_values = |line: Option<&str>, prefix: &str| -> Result<Vec<f64>> {
            let body = line
                .and_then(|l| l.strip_prefix(prefix))
                .ok_or_else(|| Error::Parse(format!("expected `{}` line", prefix.trim())))?;
            body.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("value `{t}`: {e}"))))
                .collect()
        };
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for _ in 1..layer_sizes.len() {
            weights.push(parse_values(lines.next(), "weights ")?);
            biases.push(parse_values(lines.next(), "biases ")?);
        }
        Self::from_parts(layer_sizes, weights, biases)
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: every stride pair addresses in-bounds elements of the given
    // slices for the stated m, k, n; c is row-major m x n and uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Adam moments and hyperparameters for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: NetGrads,
    pub second_moment: NetGrads,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_stability: f64,
}

impl AdamState {
    pub fn new(net: &DenseNet) -> Self {
        Self {
            first_moment: NetGrads::zeros_like(net),
            second_moment: NetGrads::zeros_like(net),
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps_stability: 1e-8,
        }
    }
}

/// One bias-corrected Adam step descending `grads`.
pub fn adam_step(net: &mut DenseNet, grads: &NetGrads, state: &mut AdamState, learning_rate: f64) -> Result<()> {
    let shapes_match = grads.weights.len() == net.weights.len()
        && grads.weights.iter().zip(&net.weights).all(|(g, w)| g.len() == w.len())
        && grads.biases.iter().zip(&net.biases).all(|(g, b)| g.len() == b.len());
    if !shapes_match {
        return Err(Error::DimensionMismatch {
            context: "adam gradients",
            expected: net.param_count(),
            actual: grads.values().count(),
        });
    }
    if let Some((idx, bad)) = grads.values().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "adam gradients",
            detail: format!("parameter #{idx} has gradient {bad}"),
        });
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps_stability);
    let correction1 = 1.0 - b1.powi(t);
    let correction2 = 1.0 - b2.powi(t);
    let moments = state
        .first_moment
        .values_mut()
        .zip(state.second_moment.values_mut());
    for ((p, g), (m, v)) in net.params_mut().zip(grads.values()).zip(moments) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / correction1;
        let v_hat = *v / correction2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + eps);
    }
    if !net.is_finite() {
        return Err(Error::NonFinite {
            context: "adam update",
            detail: "parameters became non-finite".into(),
        });
    }
    Ok(())
}

/// Max-subtracted softmax.
pub fn softmax_distribution(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::InvalidInput("softmax of empty logits".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "softmax logits",
            detail: format!("{logits:?}"),
        });
    }
    Ok(softmax_unchecked(logits))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

/// Pulls a gradient on softmax probabilities back to the logits:
/// `dz_k = p_k (g_k - <p, g>)`.
pub fn softmax_backward(probs: &[f64], grad_probs: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(grad_probs).map(|(p, g)| p * g).sum();
    probs.iter().zip(grad_probs).map(|(p, g)| p * (g - dot)).collect()
}

/// Categorical policy head: logits from a [`DenseNet`] through softmax.
#[derive(Clone, Copy, Debug)]
pub struct PolicyHead {
    pub logits_dim: usize,
}

impl PolicyHead {
    pub fn for_net(net: &DenseNet) -> Self {
        Self {
            logits_dim: net.output_dim(),
        }
    }

    pub fn distribution(&self, net: &DenseNet, input: &[f64]) -> Result<Vec<f64>> {
        let logits = net.forward(input)?;
        softmax_distribution(&logits)
    }

    pub fn distributions(&self, cache: &ForwardCache) -> Result<Vec<Vec<f64>>> {
        let out = cache.output();
        (0..out.rows).map(|r| softmax_distribution(out.row(r))).collect()
    }
}

/// A differentiable scalar loss on the network output.
pub trait ScalarLoss {
    fn value(&self, output: &[f64]) -> f64;
    fn gradient(&self, output: &[f64]) -> Vec<f64>;
}

/// `½‖output − target‖²`.
pub struct SquaredError {
    pub target: Vec<f64>,
}

impl ScalarLoss for SquaredError {
    fn value(&self, output: &[f64]) -> f64 {
        0.5 * output.iter().zip(&self.target).map(|(o, t)| (o - t).powi(2)).sum::<f64>()
    }

    fn gradient(&self, output: &[f64]) -> Vec<f64> {
        output.iter().zip(&self.target).map(|(o, t)| o - t).collect()
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub passed: bool,
    pub max_relative_error: f64,
    /// Flat index (weights then biases, layer by layer) of the worst entry.
    pub worst_index: usize,
    pub checked: usize,
}

/// Central finite-difference step used by [`gradient_check`].
pub const FD_STEP: f64 = 1e-5;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares `backward` against central finite differences over all parameters.
pub fn gradient_check(net: &DenseNet, loss: &dyn ScalarLoss, input: &[f64], tolerance: f64) -> Result<GradCheckReport> {
    let output = net.forward(input)?;
    let analytic = net.backward(input, &loss.gradient(&output))?;
    compare_with_finite_differences(net, loss, input, &analytic, tolerance)
}

/// Like [`gradient_check`] but against caller-supplied analytic gradients.
pub fn compare_with_finite_differences(
    net: &DenseNet,
    loss: &dyn ScalarLoss,
    input: &[f64],
    analytic: &NetGrads,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let analytic: Vec<f64> = analytic.values().copied().collect();
    if analytic.len() != net.param_count() {
        return Err(Error::DimensionMismatch {
            context: "gradient check",
            expected: net.param_count(),
            actual: analytic.len(),
        });
    }
    let mut probe = net.clone();
    let mut worst = (0.0_f64, 0_usize);
    for (idx, a) in analytic.iter().enumerate() {
        let original = *probe.params().nth(idx).expect("index in range");
        set_param(&mut probe, idx, original + FD_STEP);
        let up = loss.value(&probe.forward(input)?);
        set_param(&mut probe, idx, original - FD_STEP);
        let down = loss.value(&probe.forward(input)?);
        set_param(&mut probe, idx, original);
        let numeric = (up - down) / (2.0 * FD_STEP);
        let err = relative_error(*a, numeric);
        if err > worst.0 || !err.is_finite() {
            worst = (err, idx);
        }
    }
    Ok(GradCheckReport {
        passed: worst.0 < tolerance,
        max_relative_error: worst.0,
        worst_index: worst.1,
        checked: analytic.len(),
    })
}

fn set_param(net: &mut DenseNet, idx: usize, value: f64) {
    if let Some(p) = net.params_mut().nth(idx) {
        *p = value;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straight-line scalar forward pass, independent of the gemm path.
    fn scalar_forward(net: &DenseNet, input: &[f64]) -> Vec<f64> {
        let sizes = net.layer_sizes();
        let mut act = input.to_vec();
        for l in 0..sizes.len() - 1 {
            let mut next = Vec::with_capacity(sizes[l + 1]);
            for o in 0..sizes[l + 1] {
                let mut z = net.biases()[l][o];
                for i in 0..sizes[l] {
                    z += net.weights()[l][o * sizes[l] + i] * act[i];
                }
                next.push(if l + 2 < sizes.len() { z.max(0.0) } else { z });
            }
            act = next;
        }
        act
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = DenseNet::zeros(&[3, 5, 2]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_linear_layer() {
        let net = DenseNet::from_parts(vec![3, 3], vec![vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]], vec![vec![0.0; 3]])
            .unwrap();
        assert_eq!(net.forward(&[0.5, -1.5, 2.0]).unwrap(), vec![0.5, -1.5, 2.0]);
    }

    #[test]
    fn forward_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut net = DenseNet::new(&[4, 6, 5, 3], &mut rng).unwrap();
        for b in net.biases_mut().iter_mut().flatten() {
            *b = rng.random_range(-0.3..0.3);
        }
        let input: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fast = net.forward(&input).unwrap();
        let slow = scalar_forward(&net, &input);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = DenseNet::zeros(&[3, 2]).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn too_few_layers_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(DenseNet::new(&[3], &mut rng).is_err());
    }

    #[test]
    fn zero_output_gradient_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::new(&[3, 4, 2], &mut rng).unwrap();
        let grads = net.backward(&[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn linear_layer_gradient_is_input_on_selected_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = DenseNet::new(&[3, 2], &mut rng).unwrap();
        let input = [0.5, -1.0, 2.0];
        let grads = net.backward(&input, &[0.0, 1.0]).unwrap();
        assert_eq!(&grads.weights[0][0..3], &[0.0, 0.0, 0.0]);
        assert_eq!(&grads.weights[0][3..6], &input);
        assert_eq!(grads.biases[0], vec![0.0, 1.0]);
    }

    #[test]
    fn backward_rejects_bad_output_gradient() {
        let net = DenseNet::zeros(&[2, 2]).unwrap();
        assert!(net.backward(&[1.0, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn random_net_passes_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNet::new(&[4, 8, 6, 3], &mut rng).unwrap();
        let input = vec![0.3, -0.7, 1.1, 0.2];
        assert!(net.min_kink_distance(&input).unwrap() > 1e-6);
        let loss = SquaredError {
            target: vec![0.5, -0.25, 1.0],
        };
        let report = gradient_check(&net, &loss, &input, 1e-4).unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn linear_net_gradient_check_is_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = DenseNet::new(&[3, 2], &mut rng).unwrap();
        let loss = SquaredError { target: vec![1.0, -1.0] };
        let report = gradient_check(&net, &loss, &[0.4, 0.1, -0.8], 1e-7).unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn corrupted_gradient_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = DenseNet::new(&[3, 5, 2], &mut rng).unwrap();
        let input = [0.2, 0.9, -0.4];
        let loss = SquaredError { target: vec![0.3, 0.3] };
        let out = net.forward(&input).unwrap();
        let mut grads = net.backward(&input, &loss.gradient(&out)).unwrap();
        let idx = grads.weights[0].iter().position(|g| g.abs() > 1e-3).unwrap();
        grads.weights[0][idx] *= 2.0;
        let report = compare_with_finite_differences(&net, &loss, &input, &grads, 1e-4).unwrap();
        assert!(!report.passed);
        assert_eq!(report.worst_index, idx);
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut net = DenseNet::new(&[2, 3, 1], &mut rng).unwrap();
        let before = net.clone();
        let mut state = AdamState::new(&net);
        let grads = NetGrads::zeros_like(&net);
        adam_step(&mut net, &grads, &mut state, 0.1).unwrap();
        assert_eq!(net, before);
        assert_eq!(state.first_moment.max_abs(), 0.0);
        assert_eq!(state.second_moment.max_abs(), 0.0);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut net = DenseNet::new(&[2, 2], &mut rng).unwrap();
        let before: Vec<f64> = net.params().copied().collect();
        let mut grads = NetGrads::zeros_like(&net);
        for (k, g) in grads.values_mut().enumerate() {
            *g = if k % 2 == 0 { 0.37 * (k + 1) as f64 } else { -1.9 };
        }
        let lr = 0.01;
        let mut state = AdamState::new(&net);
        adam_step(&mut net, &grads, &mut state, lr).unwrap();
        for ((after, before), g) in net.params().zip(&before).zip(grads.values()) {
            let expected = -lr * g.signum();
            assert!(((after - before) - expected).abs() <= 1e-6 * lr, "{} vs {expected}", after - before);
        }
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut net = DenseNet::zeros(&[1, 1]).unwrap();
        let mut state = AdamState::new(&net);
        let mut grads = NetGrads::zeros_like(&net);
        grads.biases[0][0] = f64::NAN;
        assert!(matches!(adam_step(&mut net, &grads, &mut state, 0.1), Err(Error::NonFinite { .. })));
        assert_eq!(state.step_count, 0);
    }

    #[test]
    fn adam_descends_quadratic() {
        // Scalar oracle: theta_{k+1} from the same recurrence, written out.
        let mut theta = 1.0_f64;
        let (mut m, mut v) = (0.0, 0.0);
        let mut trace = vec![theta.abs()];
        for k in 1..=100 {
            let g = theta;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9_f64.powi(k));
            let vh = v / (1.0 - 0.999_f64.powi(k));
            theta -= 0.1 * mh / (vh.sqrt() + 1e-8);
            trace.push(theta.abs());
        }
        let mut net = DenseNet::from_parts(vec![1, 1], vec![vec![1.0]], vec![vec![0.0]]).unwrap();
        let mut state = AdamState::new(&net);
        for k in 0..100 {
            let mut g = NetGrads::zeros_like(&net);
            g.weights[0][0] = net.weights()[0][0];
            adam_step(&mut net, &g, &mut state, 0.1).unwrap();
            assert!((net.weights()[0][0].abs() - trace[k + 1]).abs() < 1e-12);
        }
        // |theta| decreases monotonically until it first drops below 0.5.
        let first_below = trace.iter().position(|t| *t < 0.5).unwrap();
        assert!(trace[..=first_below].windows(2).all(|w| w[1] < w[0]));
        assert!(net.weights()[0][0].abs() < 0.5);
    }

    #[test]
    fn softmax_cases() {
        let uniform = softmax_distribution(&[0.3; 4]).unwrap();
        assert!(uniform.iter().all(|p| (p - 0.25).abs() < 1e-15));
        let extreme = softmax_distribution(&[500.0, -500.0]).unwrap();
        assert!((extreme[0] - 1.0).abs() < 1e-15 && extreme[1] < 1e-300);
        let logs = softmax_distribution(&[1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
        for (p, e) in logs.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((p - e).abs() < 1e-9);
        }
        assert!(softmax_distribution(&[]).is_err());
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let z = [0.2, -1.0, 0.7];
        let g = [0.5, -2.0, 1.0];
        let analytic = softmax_backward(&softmax_unchecked(&z), &g);
        for k in 0..3 {
            let mut up = z;
            up[k] += 1e-6;
            let mut down = z;
            down[k] -= 1e-6;
            let f = |zz: &[f64]| softmax_unchecked(zz).iter().zip(&g).map(|(p, w)| p * w).sum::<f64>();
            let numeric = (f(&up) - f(&down)) / 2e-6;
            assert!((analytic[k] - numeric).abs() < 1e-8);
        }
    }

    #[test]
    fn text_round_trip_is_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = DenseNet::new(&[3, 4, 2], &mut rng).unwrap();
        net.biases_mut()[0][1] = std::f64::consts::PI * 1e-17;
        let back = DenseNet::from_text(&net.to_text()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn from_parts_rejects_bad_shapes() {
        assert!(DenseNet::from_parts(vec![2, 2], vec![vec![0.0; 3]], vec![vec![0.0; 2]]).is_err());
        assert!(DenseNet::from_parts(vec![2, 2], vec![vec![0.0; 4]], vec![vec![0.0; 1]]).is_err());
    }
}
