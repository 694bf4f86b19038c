//! Small convolutional network with hand-written forward and backward
//! passes in f64.
//!
//! Encoders operate on `(channels, height, width)` maps through conv /
//! relu / 2x2-maxpool layers; heads operate on flattened feature vectors
//! through dense / relu layers. Backward passes expose both parameter
//! gradients (training) and input gradients (attribution), plus a guided
//! mode where relu backward passes only positive gradients through
//! positively-activated units.

use ndarray::{Array1, Array2, Array3, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture element. Conv layers use stride 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        padding: usize,
    },
    Relu,
    MaxPool2,
    Dense {
        units: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvLayer {
    /// (out_channels, in_channels, kernel, kernel)
    pub weights: Array4<f64>,
    pub bias: Array1<f64>,
    pub padding: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseLayer {
    /// (units, in_features)
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Layer {
    Conv(ConvLayer),
    Relu,
    MaxPool2,
    Dense(DenseLayer),
}

/// Per-layer parameter gradients, aligned with the layer stack.
#[derive(Debug, Clone)]
pub enum LayerGrads {
    Conv { weights: Array4<f64>, bias: Array1<f64> },
    Dense { weights: Array2<f64>, bias: Array1<f64> },
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    Standard,
    /// Guided backpropagation: relu backward additionally masks out
    /// negative upstream gradients. Other layers are unchanged.
    Guided,
}

// --- convolution helpers -------------------------------------------------

/// Valid j-range so that both the output column `j` and the source column
/// `j + dj - padding` are in bounds; the copyable strip is contiguous.
#[inline]
fn strip_range(out_w: usize, w: usize, dj: usize, padding: usize) -> (usize, usize) {
    let j_lo = padding.saturating_sub(dj);
    let j_hi = (w + padding - dj).min(out_w);
    (j_lo, j_hi.max(j_lo))
}

fn im2col(input: &Array3<f64>, kernel: usize, padding: usize) -> (Array2<f64>, usize, usize) {
    let (c_in, h, w) = input.dim();
    let out_h = h + 2 * padding - kernel + 1;
    let out_w = w + 2 * padding - kernel + 1;
    let mut cols = Array2::<f64>::zeros((c_in * kernel * kernel, out_h * out_w));
    let input_slice = input.as_slice().expect("standard layout");
    let cols_slice = cols.as_slice_mut().expect("standard layout");
    for c in 0..c_in {
        for di in 0..kernel {
            for dj in 0..kernel {
                let row = c * kernel * kernel + di * kernel + dj;
                let row_base = row * out_h * out_w;
                let (j_lo, j_hi) = strip_range(out_w, w, dj, padding);
                if j_hi <= j_lo {
                    continue;
                }
                for i in 0..out_h {
                    let src_i = (i + di) as isize - padding as isize;
                    if src_i < 0 || src_i >= h as isize {
                        continue;
                    }
                    let src_base = (c * h + src_i as usize) * w + (j_lo + dj - padding);
                    let dst_base = row_base + i * out_w + j_lo;
                    let len = j_hi - j_lo;
                    cols_slice[dst_base..dst_base + len]
                        .copy_from_slice(&input_slice[src_base..src_base + len]);
                }
            }
        }
    }
    (cols, out_h, out_w)
}

fn col2im(
    d_cols: &Array2<f64>,
    input_dim: (usize, usize, usize),
    kernel: usize,
    padding: usize,
) -> Array3<f64> {
    let (c_in, h, w) = input_dim;
    let out_h = h + 2 * padding - kernel + 1;
    let out_w = w + 2 * padding - kernel + 1;
    let mut d_input = Array3::<f64>::zeros(input_dim);
    let cols_slice = d_cols.as_slice().expect("standard layout");
    let d_slice = d_input.as_slice_mut().expect("standard layout");
    for c in 0..c_in {
        for di in 0..kernel {
            for dj in 0..kernel {
                let row = c * kernel * kernel + di * kernel + dj;
                let row_base = row * out_h * out_w;
                let (j_lo, j_hi) = strip_range(out_w, w, dj, padding);
                if j_hi <= j_lo {
                    continue;
                }
                for i in 0..out_h {
                    let src_i = (i + di) as isize - padding as isize;
                    if src_i < 0 || src_i >= h as isize {
                        continue;
                    }
                    let dst_base = (c * h + src_i as usize) * w + (j_lo + dj - padding);
                    let src_base = row_base + i * out_w + j_lo;
                    for k in 0..j_hi - j_lo {
                        d_slice[dst_base + k] += cols_slice[src_base + k];
                    }
                }
            }
        }
    }
    d_input
}

impl ConvLayer {
    pub fn out_shape(&self, in_shape: (usize, usize, usize)) -> (usize, usize, usize) {
        let (_, h, w) = in_shape;
        let k = self.weights.dim().2;
        (
            self.weights.dim().0,
            h + 2 * self.padding - k + 1,
            w + 2 * self.padding - k + 1,
        )
    }

    fn forward(&self, input: &Array3<f64>) -> Array3<f64> {
        let (out_c, in_c, k, _) = self.weights.dim();
        debug_assert_eq!(in_c, input.dim().0);
        let (cols, out_h, out_w) = im2col(input, k, self.padding);
        let w2 = self
            .weights
            .view()
            .into_shape_with_order((out_c, in_c * k * k))
            .expect("conv weights are standard layout");
        let mut out2 = w2.dot(&cols);
        for (o, mut row) in out2.outer_iter_mut().enumerate() {
            row += self.bias[o];
        }
        out2.into_shape_with_order((out_c, out_h, out_w))
            .expect("conv output reshape")
    }

    fn backward(
        &self,
        input: &Array3<f64>,
        d_out: &Array3<f64>,
    ) -> (LayerGrads, Array3<f64>) {
        let (out_c, in_c, k, _) = self.weights.dim();
        let (cols, out_h, out_w) = im2col(input, k, self.padding);
        let d_out2 = d_out
            .view()
            .into_shape_with_order((out_c, out_h * out_w))
            .expect("conv grad reshape");
        let d_bias = d_out2.sum_axis(ndarray::Axis(1));
        let d_w2 = d_out2.dot(&cols.t());
        let d_weights = d_w2
            .into_shape_with_order((out_c, in_c, k, k))
            .expect("conv weight grad reshape");
        let w2 = self
            .weights
            .view()
            .into_shape_with_order((out_c, in_c * k * k))
            .expect("conv weights are standard layout");
        let d_cols = w2.t().dot(&d_out2);
        let d_input = col2im(&d_cols, input.dim(), k, self.padding);
        (
            LayerGrads::Conv {
                weights: d_weights,
                bias: d_bias,
            },
            d_input,
        )
    }
}

fn maxpool2_forward(input: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = input.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array3::<f64>::zeros((c, oh, ow));
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let mut best = f64::NEG_INFINITY;
                for di in 0..2 {
                    for dj in 0..2 {
                        best = best.max(input[[ch, 2 * i + di, 2 * j + dj]]);
                    }
                }
                out[[ch, i, j]] = best;
            }
        }
    }
    out
}

fn maxpool2_backward(input: &Array3<f64>, d_out: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = input.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut d_input = Array3::<f64>::zeros((c, h, w));
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                // First maximum in scan order wins ties, matching forward.
                let (mut bi, mut bj, mut best) = (0, 0, f64::NEG_INFINITY);
                for di in 0..2 {
                    for dj in 0..2 {
                        let v = input[[ch, 2 * i + di, 2 * j + dj]];
                        if v > best {
                            best = v;
                            bi = di;
                            bj = dj;
                        }
                    }
                }
                d_input[[ch, 2 * i + bi, 2 * j + bj]] += d_out[[ch, i, j]];
            }
        }
    }
    d_input
}

// --- encoder stack --------------------------------------------------------

/// Cached activations from an encoder pass: `inputs[i]` is the input to
/// layer `i`, `output` the final feature map.
pub struct EncoderTrace {
    pub inputs: Vec<Array3<f64>>,
    pub output: Array3<f64>,
}

pub fn encoder_forward(layers: &[Layer], input: &Array3<f64>) -> EncoderTrace {
    let mut inputs = Vec::with_capacity(layers.len());
    let mut current = input.clone();
    for layer in layers {
        inputs.push(current.clone());
        current = match layer {
            Layer::Conv(conv) => conv.forward(&current),
            Layer::Relu => current.mapv(|v| v.max(0.0)),
            Layer::MaxPool2 => maxpool2_forward(&current),
            Layer::Dense(_) => unreachable!("dense layer inside an encoder"),
        };
    }
    EncoderTrace {
        inputs,
        output: current,
    }
}

/// Backward through the encoder. Returns parameter gradients, the gradient
/// at the model input, and the gradient at every layer input (index i =
/// input of layer i) for activation-map methods.
pub fn encoder_backward(
    layers: &[Layer],
    trace: &EncoderTrace,
    d_output: Array3<f64>,
    mode: GradMode,
) -> (Vec<LayerGrads>, Array3<f64>, Vec<Array3<f64>>) {
    let mut grads = vec![LayerGrads::None; layers.len()];
    let mut d_inputs: Vec<Option<Array3<f64>>> = vec![None; layers.len()];
    let mut d = d_output;
    for (i, layer) in layers.iter().enumerate().rev() {
        let input = &trace.inputs[i];
        d = match layer {
            Layer::Conv(conv) => {
                let (g, d_in) = conv.backward(input, &d);
                grads[i] = g;
                d_in
            }
            Layer::Relu => {
                let mut d_in = d;
                d_in.zip_mut_with(input, |g, &x| {
                    if x <= 0.0 {
                        *g = 0.0;
                    }
                });
                if mode == GradMode::Guided {
                    d_in.mapv_inplace(|g| g.max(0.0));
                }
                d_in
            }
            Layer::MaxPool2 => maxpool2_backward(input, &d),
            Layer::Dense(_) => unreachable!("dense layer inside an encoder"),
        };
        d_inputs[i] = Some(d.clone());
    }
    let collected: Vec<Array3<f64>> = d_inputs.into_iter().map(|d| d.unwrap()).collect();
    (grads, d, collected)
}

// --- head stack -----------------------------------------------------------

pub struct HeadTrace {
    pub inputs: Vec<Array1<f64>>,
    pub output: f64,
}

pub fn head_forward(layers: &[Layer], features: &Array1<f64>) -> HeadTrace {
    let mut inputs = Vec::with_capacity(layers.len());
    let mut current = features.clone();
    for layer in layers {
        inputs.push(current.clone());
        current = match layer {
            Layer::Dense(dense) => dense.weights.dot(&current) + &dense.bias,
            Layer::Relu => current.mapv(|v| v.max(0.0)),
            _ => unreachable!("head layers are dense or relu"),
        };
    }
    debug_assert_eq!(current.len(), 1, "head must end in a scalar");
    HeadTrace {
        output: current[0],
        inputs,
    }
}

/// Backward through a head from a scalar output gradient. Returns parameter
/// gradients and the gradient w.r.t. the feature vector.
pub fn head_backward(
    layers: &[Layer],
    trace: &HeadTrace,
    d_output: f64,
    mode: GradMode,
) -> (Vec<LayerGrads>, Array1<f64>) {
    let mut grads = vec![LayerGrads::None; layers.len()];
    let mut d = Array1::from_elem(1, d_output);
    for (i, layer) in layers.iter().enumerate().rev() {
        let input = &trace.inputs[i];
        d = match layer {
            Layer::Dense(dense) => {
                let d_weights = outer(&d, input);
                grads[i] = LayerGrads::Dense {
                    weights: d_weights,
                    bias: d.clone(),
                };
                dense.weights.t().dot(&d)
            }
            Layer::Relu => {
                let mut d_in = d;
                d_in.zip_mut_with(input, |g, &x| {
                    if x <= 0.0 {
                        *g = 0.0;
                    }
                });
                if mode == GradMode::Guided {
                    d_in.mapv_inplace(|g| g.max(0.0));
                }
                d_in
            }
            _ => unreachable!("head layers are dense or relu"),
        };
    }
    (grads, d)
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((a.len(), b.len()));
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[[i, j]] = ai * bj;
        }
    }
    out
}

// --- initialization -------------------------------------------------------

fn kaiming_uniform(fan_in: usize, rng: &mut impl Rng) -> impl FnMut() -> f64 + '_ {
    let limit = (6.0 / fan_in as f64).sqrt();
    move || rng.gen_range(-limit..limit)
}

/// Build encoder layers from specs, validating shapes as they flow through.
/// Returns the layers and the output feature-map shape.
pub fn init_encoder(
    specs: &[LayerSpec],
    input_shape: (usize, usize, usize),
    rng: &mut impl Rng,
) -> Result<(Vec<Layer>, (usize, usize, usize))> {
    let mut layers = Vec::with_capacity(specs.len());
    let mut shape = input_shape;
    for spec in specs {
        match spec {
            LayerSpec::Conv {
                out_channels,
                kernel,
                padding,
            } => {
                let (c_in, h, w) = shape;
                if h + 2 * padding < *kernel || w + 2 * padding < *kernel {
                    return Err(Error::InvalidModelSpec(format!(
                        "conv kernel {kernel} too large for {h}x{w} input"
                    )));
                }
                let mut draw = kaiming_uniform(c_in * kernel * kernel, rng);
                let weights =
                    Array4::from_shape_simple_fn((*out_channels, c_in, *kernel, *kernel), &mut draw);
                layers.push(Layer::Conv(ConvLayer {
                    weights,
                    bias: Array1::zeros(*out_channels),
                    padding: *padding,
                }));
                shape = (
                    *out_channels,
                    h + 2 * padding - kernel + 1,
                    w + 2 * padding - kernel + 1,
                );
            }
            LayerSpec::Relu => layers.push(Layer::Relu),
            LayerSpec::MaxPool2 => {
                let (c, h, w) = shape;
                if h < 2 || w < 2 {
                    return Err(Error::InvalidModelSpec(format!(
                        "maxpool on {h}x{w} feature map"
                    )));
                }
                layers.push(Layer::MaxPool2);
                shape = (c, h / 2, w / 2);
            }
            LayerSpec::Dense { .. } => {
                return Err(Error::InvalidModelSpec(
                    "dense layers belong to heads, not the encoder".into(),
                ))
            }
        }
    }
    Ok((layers, shape))
}

/// Build head layers from specs; the last layer must be `Dense { units: 1 }`.
pub fn init_head(
    specs: &[LayerSpec],
    in_features: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Layer>> {
    let mut layers = Vec::with_capacity(specs.len());
    let mut features = in_features;
    for spec in specs {
        match spec {
            LayerSpec::Dense { units } => {
                let mut draw = kaiming_uniform(features, rng);
                let weights = Array2::from_shape_simple_fn((*units, features), &mut draw);
                layers.push(Layer::Dense(DenseLayer {
                    weights,
                    bias: Array1::zeros(*units),
                }));
                features = *units;
            }
            LayerSpec::Relu => layers.push(Layer::Relu),
            _ => {
                return Err(Error::InvalidModelSpec(
                    "head layers must be dense or relu".into(),
                ))
            }
        }
    }
    match specs.last() {
        Some(LayerSpec::Dense { units: 1 }) => Ok(layers),
        _ => Err(Error::InvalidModelSpec(
            "head must end in a scalar dense layer".into(),
        )),
    }
}

// --- parameter visitation and the optimizer --------------------------------

/// Visit every parameter of a layer stack in a fixed order.
pub fn visit_layer_params(layers: &[Layer], f: &mut impl FnMut(f64)) {
    for layer in layers {
        match layer {
            Layer::Conv(conv) => {
                conv.weights.iter().for_each(|&w| f(w));
                conv.bias.iter().for_each(|&b| f(b));
            }
            Layer::Dense(dense) => {
                dense.weights.iter().for_each(|&w| f(w));
                dense.bias.iter().for_each(|&b| f(b));
            }
            _ => {}
        }
    }
}

pub fn visit_layer_params_mut(layers: &mut [Layer], f: &mut impl FnMut(&mut f64)) {
    for layer in layers {
        match layer {
            Layer::Conv(conv) => {
                conv.weights.iter_mut().for_each(|w| f(w));
                conv.bias.iter_mut().for_each(|b| f(b));
            }
            Layer::Dense(dense) => {
                dense.weights.iter_mut().for_each(|w| f(w));
                dense.bias.iter_mut().for_each(|b| f(b));
            }
            _ => {}
        }
    }
}

/// Flatten gradients in the same order as [`visit_layer_params`].
pub fn flatten_grads(grads: &[LayerGrads], out: &mut Vec<f64>) {
    for g in grads {
        match g {
            LayerGrads::Conv { weights, bias } => {
                out.extend(weights.iter());
                out.extend(bias.iter());
            }
            LayerGrads::Dense { weights, bias } => {
                out.extend(weights.iter());
                out.extend(bias.iter());
            }
            LayerGrads::None => {}
        }
    }
}

/// Accumulate `src` gradients into `dst` (same stack structure).
pub fn accumulate_grads(dst: &mut Vec<LayerGrads>, src: Vec<LayerGrads>) {
    if dst.is_empty() {
        *dst = src;
        return;
    }
    for (d, s) in dst.iter_mut().zip(src.into_iter()) {
        match (d, s) {
            (
                LayerGrads::Conv { weights, bias },
                LayerGrads::Conv {
                    weights: sw,
                    bias: sb,
                },
            ) => {
                *weights += &sw;
                *bias += &sb;
            }
            (
                LayerGrads::Dense { weights, bias },
                LayerGrads::Dense {
                    weights: sw,
                    bias: sb,
                },
            ) => {
                *weights += &sw;
                *bias += &sb;
            }
            (LayerGrads::None, LayerGrads::None) => {}
            _ => unreachable!("gradient stacks must align"),
        }
    }
}

pub fn scale_grads(grads: &mut [LayerGrads], factor: f64) {
    for g in grads {
        match g {
            LayerGrads::Conv { weights, bias } => {
                weights.mapv_inplace(|v| v * factor);
                bias.mapv_inplace(|v| v * factor);
            }
            LayerGrads::Dense { weights, bias } => {
                weights.mapv_inplace(|v| v * factor);
                bias.mapv_inplace(|v| v * factor);
            }
            LayerGrads::None => {}
        }
    }
}

/// Zero-initialized gradient stack matching `layers`.
pub fn zero_grads(layers: &[Layer]) -> Vec<LayerGrads> {
    layers
        .iter()
        .map(|layer| match layer {
            Layer::Conv(conv) => LayerGrads::Conv {
                weights: Array4::zeros(conv.weights.dim()),
                bias: Array1::zeros(conv.bias.len()),
            },
            Layer::Dense(dense) => LayerGrads::Dense {
                weights: Array2::zeros(dense.weights.dim()),
                bias: Array1::zeros(dense.bias.len()),
            },
            _ => LayerGrads::None,
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerSpec {
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    Sgd {
        #[serde(default)]
        momentum: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// First-order optimizer over the flat parameter vector.
pub struct Optimizer {
    spec: OptimizerSpec,
    lr: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Optimizer {
    pub fn new(spec: OptimizerSpec, lr: f64, param_count: usize) -> Self {
        Self {
            spec,
            lr,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    /// Compute the per-parameter update for the given flat gradient.
    pub fn deltas(&mut self, grads: &[f64]) -> Vec<f64> {
        assert_eq!(grads.len(), self.m.len(), "gradient length mismatch");
        self.step += 1;
        match self.spec {
            OptimizerSpec::Adam { beta1, beta2, eps } => {
                let t = self.step as f64;
                let bc1 = 1.0 - beta1.powf(t);
                let bc2 = 1.0 - beta2.powf(t);
                grads
                    .iter()
                    .enumerate()
                    .map(|(i, &g)| {
                        self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                        self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                        let m_hat = self.m[i] / bc1;
                        let v_hat = self.v[i] / bc2;
                        self.lr * m_hat / (v_hat.sqrt() + eps)
                    })
                    .collect()
            }
            OptimizerSpec::Sgd { momentum } => grads
                .iter()
                .enumerate()
                .map(|(i, &g)| {
                    self.m[i] = momentum * self.m[i] + g;
                    self.lr * self.m[i]
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let mut r = rng();
        let conv = ConvLayer {
            weights: Array4::from_shape_simple_fn((2, 3, 3, 3), || r.gen_range(-1.0..1.0)),
            bias: Array1::from_vec(vec![0.3, -0.1]),
            padding: 1,
        };
        let input = Array3::from_shape_simple_fn((3, 5, 6), || r.gen_range(-1.0..1.0));
        let out = conv.forward(&input);
        assert_eq!(out.dim(), (2, 5, 6));
        // Direct nested-loop convolution as the oracle.
        for o in 0..2 {
            for i in 0..5usize {
                for j in 0..6usize {
                    let mut acc = conv.bias[o];
                    for c in 0..3 {
                        for di in 0..3usize {
                            for dj in 0..3usize {
                                let si = i as isize + di as isize - 1;
                                let sj = j as isize + dj as isize - 1;
                                if si >= 0 && si < 5 && sj >= 0 && sj < 6 {
                                    acc += conv.weights[[o, c, di, dj]]
                                        * input[[c, si as usize, sj as usize]];
                                }
                            }
                        }
                    }
                    assert_relative_eq!(out[[o, i, j]], acc, max_relative = 1e-12);
                }
            }
        }
    }

    #[test]
    fn maxpool_truncates_odd_edges() {
        let input = Array3::from_shape_fn((1, 5, 5), |(_, i, j)| (i * 5 + j) as f64);
        let out = maxpool2_forward(&input);
        assert_eq!(out.dim(), (1, 2, 2));
        assert_eq!(out[[0, 0, 0]], 6.0);
        assert_eq!(out[[0, 1, 1]], 18.0);
    }

    #[test]
    fn encoder_input_gradient_matches_finite_differences() {
        let mut r = rng();
        let (layers, out_shape) = init_encoder(
            &[
                LayerSpec::Conv {
                    out_channels: 2,
                    kernel: 3,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
            ],
            (1, 6, 6),
            &mut r,
        )
        .unwrap();
        let input = Array3::from_shape_simple_fn((1, 6, 6), || r.gen_range(-1.0..1.0));
        // Scalar function: sum of encoder outputs.
        let trace = encoder_forward(&layers, &input);
        let d_out = Array3::ones(out_shape);
        let (_, d_input, _) = encoder_backward(&layers, &trace, d_out, GradMode::Standard);

        let h = 1e-6;
        for idx in [[0usize, 0, 0], [0, 2, 3], [0, 5, 5]] {
            let mut plus = input.clone();
            plus[idx] += h;
            let mut minus = input.clone();
            minus[idx] -= h;
            let fd = (encoder_forward(&layers, &plus).output.sum()
                - encoder_forward(&layers, &minus).output.sum())
                / (2.0 * h);
            assert_relative_eq!(d_input[idx], fd, max_relative = 1e-5, epsilon = 1e-9);
        }
    }

    #[test]
    fn guided_relu_masks_negative_upstream() {
        let layers = vec![Layer::Relu];
        let input = Array3::from_shape_vec((1, 1, 4), vec![1.0, -1.0, 2.0, 3.0]).unwrap();
        let trace = encoder_forward(&layers, &input);
        let d_out = Array3::from_shape_vec((1, 1, 4), vec![-2.0, 5.0, 3.0, -1.0]).unwrap();
        let (_, std_grad, _) =
            encoder_backward(&layers, &trace, d_out.clone(), GradMode::Standard);
        assert_eq!(
            std_grad.as_slice().unwrap(),
            &[-2.0, 0.0, 3.0, -1.0],
            "standard: mask by activation sign only"
        );
        let (_, guided, _) = encoder_backward(&layers, &trace, d_out, GradMode::Guided);
        assert_eq!(
            guided.as_slice().unwrap(),
            &[0.0, 0.0, 3.0, 0.0],
            "guided: also mask negative gradients"
        );
    }

    #[test]
    fn head_shapes_validated() {
        let mut r = rng();
        assert!(init_head(&[LayerSpec::Dense { units: 4 }], 8, &mut r).is_err());
        assert!(init_head(
            &[
                LayerSpec::Dense { units: 4 },
                LayerSpec::Relu,
                LayerSpec::Dense { units: 1 }
            ],
            8,
            &mut r
        )
        .is_ok());
        assert!(init_encoder(&[LayerSpec::Dense { units: 1 }], (1, 4, 4), &mut r).is_err());
    }

    #[test]
    fn param_visitation_matches_grad_flattening() {
        let mut r = rng();
        let (layers, shape) = init_encoder(
            &[
                LayerSpec::Conv {
                    out_channels: 2,
                    kernel: 3,
                    padding: 0,
                },
                LayerSpec::Relu,
            ],
            (1, 5, 5),
            &mut r,
        )
        .unwrap();
        let grads = zero_grads(&layers);
        let mut flat = Vec::new();
        flatten_grads(&grads, &mut flat);
        let mut count = 0;
        visit_layer_params(&layers, &mut |_| count += 1);
        assert_eq!(flat.len(), count);
        assert_eq!(count, 2 * 9 + 2);
        assert_eq!(shape, (2, 3, 3));
    }
}
