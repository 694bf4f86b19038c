//! Attribution maps explaining which pixels drive the estimated CATE
//! (predictive features) versus the control-head output (prognostic
//! features).

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio;
use crate::model::{Model, ModelMode};
use crate::nn::{encoder_backward, head_backward, GradMode, Layer};
use crate::rng;

/// Which scalar the map explains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionTarget {
    /// Treatment-head output minus control-head output.
    Cate,
    ControlHead,
    TreatmentHead,
}

impl AttributionTarget {
    /// Signed weights over head outputs defining the target scalar.
    fn head_weights(&self) -> &'static [(usize, f64)] {
        match self {
            AttributionTarget::Cate => &[(1, 1.0), (0, -1.0)],
            AttributionTarget::ControlHead => &[(0, 1.0)],
            AttributionTarget::TreatmentHead => &[(1, 1.0)],
        }
    }
}

impl std::str::FromStr for AttributionTarget {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cate" => Ok(AttributionTarget::Cate),
            "control_head" | "control" => Ok(AttributionTarget::ControlHead),
            "treatment_head" | "treatment" => Ok(AttributionTarget::TreatmentHead),
            other => Err(Error::Config(format!("unknown attribution target `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionMethod {
    ExpectedGradients,
    GuidedGradcam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMetadata {
    /// Interpolation sample count (expected gradients only).
    pub n_samples: usize,
    /// Human-readable description of the baseline set.
    pub baseline: String,
    pub seed: u64,
}

/// Signed per-pixel, per-channel contributions to a target scalar.
#[derive(Debug, Clone)]
pub struct AttributionMap {
    pub values: Array3<f64>,
    pub target: AttributionTarget,
    pub method: AttributionMethod,
    pub metadata: MapMetadata,
}

/// Gradient of the target scalar w.r.t. the input image, plus activation
/// and gradient at the last conv layer's output for class-activation
/// mapping.
struct BackwardPass {
    d_input: Array3<f64>,
    conv_activation: Option<Array3<f64>>,
    conv_grad: Option<Array3<f64>>,
}

fn require_two_head(model: &Model) -> Result<()> {
    if model.spec.mode != ModelMode::TwoHead {
        return Err(Error::WrongMode {
            expected: "two_head",
            actual: model.spec.mode.as_str(),
        });
    }
    Ok(())
}

fn backward_pass(
    model: &Model,
    image: &Array3<f64>,
    target: AttributionTarget,
    mode: GradMode,
) -> Result<BackwardPass> {
    require_two_head(model)?;
    let (trace, head_traces) = model.forward(image)?;

    let mut d_features = ndarray::Array1::<f64>::zeros(model.feature_len);
    for &(head, weight) in target.head_weights() {
        let (_, df) = head_backward(&model.heads[head], &head_traces[head], weight, mode);
        d_features += &df;
    }

    let d_map = Array3::from_shape_vec(trace.output.dim(), d_features.to_vec())
        .expect("feature gradient matches encoder output shape");
    let (_, d_input, d_layer_inputs) =
        encoder_backward(&model.encoder, &trace, d_map.clone(), mode);

    let last_conv = model
        .encoder
        .iter()
        .rposition(|l| matches!(l, Layer::Conv(_)));
    let (conv_activation, conv_grad) = match last_conv {
        Some(idx) => {
            let activation = if idx + 1 < model.encoder.len() {
                trace.inputs[idx + 1].clone()
            } else {
                trace.output.clone()
            };
            let grad = if idx + 1 < model.encoder.len() {
                d_layer_inputs[idx + 1].clone()
            } else {
                d_map
            };
            (Some(activation), Some(grad))
        }
        None => (None, None),
    };

    Ok(BackwardPass {
        d_input,
        conv_activation,
        conv_grad,
    })
}

/// Target scalar for one image (e.g. the estimated CATE).
pub fn target_value(model: &Model, image: &Array3<f64>, target: AttributionTarget) -> Result<f64> {
    require_two_head(model)?;
    let outputs = model.head_outputs(image)?;
    Ok(target
        .head_weights()
        .iter()
        .map(|&(head, weight)| weight * outputs[head])
        .sum())
}

/// Expected gradients: average over `k` draws of a baseline `x'` and an
/// interpolation coefficient `alpha ~ U(0,1)` of
/// `(x - x') * grad f(x' + alpha (x - x'))`. Deterministic given the seed.
pub fn expected_gradients(
    model: &Model,
    image: &Array3<f64>,
    baselines: &[Array3<f64>],
    target: AttributionTarget,
    k: usize,
    seed: u64,
) -> Result<AttributionMap> {
    if k == 0 {
        return Err(Error::InvalidParameter {
            name: "k",
            reason: "need at least one interpolation sample".into(),
        });
    }
    if baselines.is_empty() {
        return Err(Error::InvalidParameter {
            name: "baselines",
            reason: "baseline set must be non-empty".into(),
        });
    }
    for baseline in baselines {
        if baseline.dim() != image.dim() {
            return Err(Error::ShapeMismatch {
                context: "expected_gradients baseline".into(),
                expected: format!("{:?}", image.dim()),
                actual: format!("{:?}", baseline.dim()),
            });
        }
    }

    // Variance-reduced sampling with the specified marginals: baseline
    // draws cycle through random permutations of the set (uniform
    // marginally, and exactly balanced when k is a multiple of the set
    // size), and each path's alphas are stratified over [0, 1) with a
    // uniform draw inside each stratum, so alpha ~ U(0, 1) marginally
    // while every path integral is covered evenly.
    let mut stream = rng::stream(seed, "expected-gradients", b"");
    use rand::seq::SliceRandom;
    let mut baseline_order = Vec::with_capacity(k);
    while baseline_order.len() < k {
        let mut block: Vec<usize> = (0..baselines.len()).collect();
        block.shuffle(&mut stream);
        baseline_order.extend(block);
    }
    baseline_order.truncate(k);

    let mut alphas = vec![0.0f64; k];
    let mut draws_of_baseline: HashMap<usize, Vec<usize>> = HashMap::new();
    for (draw, &b) in baseline_order.iter().enumerate() {
        draws_of_baseline.entry(b).or_default().push(draw);
    }
    let mut baseline_ids: Vec<usize> = draws_of_baseline.keys().copied().collect();
    baseline_ids.sort_unstable();
    for b in baseline_ids {
        let draws = &draws_of_baseline[&b];
        let m = draws.len();
        let mut strata: Vec<usize> = (0..m).collect();
        strata.shuffle(&mut stream);
        for (slot, &draw) in draws.iter().enumerate() {
            alphas[draw] = (strata[slot] as f64 + stream.gen::<f64>()) / m as f64;
        }
    }

    let mut acc = Array3::<f64>::zeros(image.dim());
    for draw in 0..k {
        let baseline = &baselines[baseline_order[draw]];
        let alpha = alphas[draw];
        let interp = baseline + &((image - baseline) * alpha);
        let pass = backward_pass(model, &interp, target, GradMode::Standard)?;
        acc.zip_mut_with(&(&pass.d_input * &(image - baseline)), |a, &v| *a += v);
    }
    acc.mapv_inplace(|v| v / k as f64);
    if let Some(bad) = acc.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "expected gradients map".into(),
            value: *bad,
        });
    }
    Ok(AttributionMap {
        values: acc,
        target,
        method: AttributionMethod::ExpectedGradients,
        metadata: MapMetadata {
            n_samples: k,
            baseline: format!("{} baseline images", baselines.len()),
            seed,
        },
    })
}

fn bilinear_upsample(map: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = map.dim();
    let mut out = Array2::<f64>::zeros((out_h, out_w));
    let scale_y = h as f64 / out_h as f64;
    let scale_x = w as f64 / out_w as f64;
    for y in 0..out_h {
        let sy = ((y as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for x in 0..out_w {
            let sx = ((x as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            out[[y, x]] = map[[y0, x0]] * (1.0 - fy) * (1.0 - fx)
                + map[[y0, x1]] * (1.0 - fy) * fx
                + map[[y1, x0]] * fy * (1.0 - fx)
                + map[[y1, x1]] * fy * fx;
        }
    }
    out
}

/// Guided Grad-CAM: the guided-backpropagation input gradient multiplied
/// elementwise by the rectified, gradient-weighted activation map of the
/// last convolutional layer, bilinearly upsampled to input size.
pub fn guided_gradcam(
    model: &Model,
    image: &Array3<f64>,
    target: AttributionTarget,
) -> Result<AttributionMap> {
    let guided = backward_pass(model, image, target, GradMode::Guided)?;
    let standard = backward_pass(model, image, target, GradMode::Standard)?;
    let (activation, grad) = match (standard.conv_activation, standard.conv_grad) {
        (Some(a), Some(g)) => (a, g),
        _ => return Err(Error::NoConvLayer),
    };

    // Channel weights: spatial mean of the gradient; CAM: rectified
    // weighted sum of activation channels.
    let (channels, h, w) = activation.dim();
    let mut cam = Array2::<f64>::zeros((h, w));
    for c in 0..channels {
        let weight = grad.index_axis(ndarray::Axis(0), c).mean().unwrap_or(0.0);
        let act = activation.index_axis(ndarray::Axis(0), c);
        cam.zip_mut_with(&act, |v, &a| *v += weight * a);
    }
    cam.mapv_inplace(|v| v.max(0.0));

    let (in_c, in_h, in_w) = image.dim();
    let cam_up = bilinear_upsample(&cam, in_h, in_w);
    let mut values = guided.d_input;
    for c in 0..in_c {
        let mut channel = values.index_axis_mut(ndarray::Axis(0), c);
        channel.zip_mut_with(&cam_up, |v, &m| *v *= m);
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "guided grad-cam map".into(),
            value: *bad,
        });
    }
    Ok(AttributionMap {
        values,
        target,
        method: AttributionMethod::GuidedGradcam,
        metadata: MapMetadata {
            n_samples: 0,
            baseline: String::new(),
            seed: 0,
        },
    })
}

// --- rendering --------------------------------------------------------------

fn overlay_signal(signal: &Array2<f64>, image: &Array3<f64>) -> Array3<f64> {
    let (_, h, w) = image.dim();
    let peak = signal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out = Array3::<f64>::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            let gray = (image[[0, y, x]] + image[[1, y, x]] + image[[2, y, x]]) / 3.0;
            let t = if peak > 0.0 { signal[[y, x]] / peak } else { 0.0 };
            let alpha = t.abs() * 0.75;
            // Diverging palette: negative red, positive blue.
            let color = if t >= 0.0 {
                [0.0, 0.0, 1.0]
            } else {
                [1.0, 0.0, 0.0]
            };
            for c in 0..3 {
                out[[c, y, x]] = (1.0 - alpha) * gray + alpha * color[c];
            }
        }
    }
    out
}

/// Render the map as a diverging-color overlay on a grayscale version of
/// the image. With `per_channel`, one panel file per input channel is
/// written (suffixes `_r`, `_g`, `_b`); otherwise the channel-summed map
/// yields a single file. Returns the written paths.
pub fn render_overlay(
    map: &AttributionMap,
    image: &Array3<f64>,
    out_path: &Path,
    per_channel: bool,
) -> Result<Vec<PathBuf>> {
    if map.values.dim() != image.dim() {
        return Err(Error::ShapeMismatch {
            context: "render_overlay".into(),
            expected: format!("{:?}", image.dim()),
            actual: format!("{:?}", map.values.dim()),
        });
    }
    let stem = out_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("attribution");
    let parent = out_path.parent().unwrap_or(Path::new("."));
    let mut written = Vec::new();
    if per_channel {
        let names = ["r", "g", "b"];
        for c in 0..map.values.dim().0 {
            let suffix = names.get(c).map(|s| s.to_string()).unwrap_or(format!("c{c}"));
            let signal = map.values.index_axis(ndarray::Axis(0), c).to_owned();
            let overlay = overlay_signal(&signal, image);
            let path = parent.join(format!("{stem}_{suffix}.png"));
            imageio::save_rgb_png(&overlay, &path)?;
            written.push(path);
        }
    } else {
        let signal = map.values.sum_axis(ndarray::Axis(0));
        let overlay = overlay_signal(&signal, image);
        let path = out_path.to_path_buf();
        imageio::save_rgb_png(&overlay, &path)?;
        written.push(path);
    }
    Ok(written)
}

// --- persistence --------------------------------------------------------------

const MAP_MAGIC: &[u8; 8] = b"ATRMAP01";

/// Self-describing binary: magic, JSON metadata blob, shape header, then
/// little-endian f64 values.
pub fn save_map(map: &AttributionMap, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(MAP_MAGIC)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    #[derive(Serialize)]
    struct Header<'a> {
        target: AttributionTarget,
        method: AttributionMethod,
        metadata: &'a MapMetadata,
    }
    let meta = serde_json::to_vec(&Header {
        target: map.target,
        method: map.method,
        metadata: &map.metadata,
    })?;
    let mut write = |bytes: &[u8]| {
        file.write_all(bytes)
            .map_err(|e| Error::io(path.display().to_string(), e))
    };
    write(&(meta.len() as u32).to_le_bytes())?;
    write(&meta)?;
    let dim = map.values.dim();
    write(&[3u8])?;
    for d in [dim.0, dim.1, dim.2] {
        write(&(d as u64).to_le_bytes())?;
    }
    for v in map.values.iter() {
        write(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_map(path: &Path) -> Result<AttributionMap> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let fail = |msg: &str| Error::MapFormat(msg.to_string());

    if buf.len() < 13 || &buf[..8] != MAP_MAGIC {
        return Err(fail("bad magic"));
    }
    let meta_len = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let meta_end = 12 + meta_len;
    if buf.len() < meta_end + 1 {
        return Err(fail("truncated metadata"));
    }
    #[derive(Deserialize)]
    struct Header {
        target: AttributionTarget,
        method: AttributionMethod,
        metadata: MapMetadata,
    }
    let header: Header =
        serde_json::from_slice(&buf[12..meta_end]).map_err(|e| Error::MapFormat(e.to_string()))?;
    let ndim = buf[meta_end] as usize;
    if ndim != 3 {
        return Err(fail("expected 3-dimensional map"));
    }
    let mut offset = meta_end + 1;
    let mut dims = [0usize; 3];
    for d in dims.iter_mut() {
        if buf.len() < offset + 8 {
            return Err(fail("truncated shape header"));
        }
        *d = u64::from_le_bytes(buf[offset..offset + 8].try_into().unwrap()) as usize;
        offset += 8;
    }
    let count = dims[0] * dims[1] * dims[2];
    if buf.len() != offset + 8 * count {
        return Err(fail("value payload length mismatch"));
    }
    let mut values = Vec::with_capacity(count);
    for i in 0..count {
        let start = offset + 8 * i;
        values.push(f64::from_le_bytes(buf[start..start + 8].try_into().unwrap()));
    }
    Ok(AttributionMap {
        values: Array3::from_shape_vec((dims[0], dims[1], dims[2]), values)
            .map_err(|e| Error::MapFormat(e.to_string()))?,
        target: header.target,
        method: header.method,
        metadata: header.metadata,
    })
}
