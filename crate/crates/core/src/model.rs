//! The image-to-outcome estimator in its two flavors: a two-headed model
//! (shared convolutional encoder, one outcome head per arm, CATE by head
//! subtraction) and a one-headed baseline that regresses outcomes from all
//! samples regardless of arm.

use std::path::Path;

use ndarray::{Array1, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    self, encoder_backward, encoder_forward, head_backward, head_forward, EncoderTrace, GradMode,
    HeadTrace, Layer, LayerSpec, Optimizer, OptimizerSpec,
};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    TwoHead,
    SingleHead,
}

impl ModelMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelMode::TwoHead => "two_head",
            ModelMode::SingleHead => "single_head",
        }
    }
}

impl std::str::FromStr for ModelMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_head" => Ok(ModelMode::TwoHead),
            "single_head" => Ok(ModelMode::SingleHead),
            other => Err(Error::Config(format!("unknown model mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub mode: ModelMode,
    pub encoder: Vec<LayerSpec>,
    /// Head architecture; in two-head mode both heads share it but are
    /// independently parameterized.
    pub head: Vec<LayerSpec>,
    /// (channels, height, width)
    pub input_shape: (usize, usize, usize),
}

impl ModelSpec {
    /// Default desk-scale CNN: three conv/relu/pool blocks and a two-layer
    /// scalar head.
    pub fn small_cnn(mode: ModelMode, input_shape: (usize, usize, usize)) -> Self {
        let conv = |out_channels| LayerSpec::Conv {
            out_channels,
            kernel: 3,
            padding: 1,
        };
        Self {
            mode,
            encoder: vec![
                conv(8),
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
                conv(16),
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
                conv(24),
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
            ],
            head: vec![
                LayerSpec::Dense { units: 32 },
                LayerSpec::Relu,
                LayerSpec::Dense { units: 1 },
            ],
            input_shape,
        }
    }

    pub fn head_count(&self) -> usize {
        match self.mode {
            ModelMode::TwoHead => 2,
            ModelMode::SingleHead => 1,
        }
    }
}

/// A (possibly trained) estimator: spec plus parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model {
    pub spec: ModelSpec,
    pub encoder: Vec<Layer>,
    pub heads: Vec<Vec<Layer>>,
    pub feature_len: usize,
}

impl Model {
    /// Initialize with Kaiming-uniform weights from a seeded stream. Heads
    /// are independently parameterized.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut stream = rng::stream(seed, "model-init", b"");
        let (encoder, out_shape) = nn::init_encoder(&spec.encoder, spec.input_shape, &mut stream)?;
        let feature_len = out_shape.0 * out_shape.1 * out_shape.2;
        let heads = (0..spec.head_count())
            .map(|_| nn::init_head(&spec.head, feature_len, &mut stream))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec,
            encoder,
            heads,
            feature_len,
        })
    }

    /// Copy head 0's parameters into every other head. With identical
    /// heads the estimated CATE is exactly zero everywhere.
    pub fn copy_heads_from_first(&mut self) {
        let first = self.heads[0].clone();
        for head in self.heads.iter_mut().skip(1) {
            *head = first.clone();
        }
    }

    pub fn check_image_shape(&self, image: &Array3<f64>) -> Result<()> {
        if image.dim() != self.spec.input_shape {
            return Err(Error::ShapeMismatch {
                context: "model input".into(),
                expected: format!("{:?}", self.spec.input_shape),
                actual: format!("{:?}", image.dim()),
            });
        }
        Ok(())
    }

    /// Forward one image through the encoder and all heads.
    pub fn forward(&self, image: &Array3<f64>) -> Result<(EncoderTrace, Vec<HeadTrace>)> {
        self.check_image_shape(image)?;
        let trace = encoder_forward(&self.encoder, image);
        let features = flatten_features(&trace.output);
        let head_traces = self
            .heads
            .iter()
            .map(|head| head_forward(head, &features))
            .collect();
        Ok((trace, head_traces))
    }

    /// Scalar outputs of every head for one image.
    pub fn head_outputs(&self, image: &Array3<f64>) -> Result<Vec<f64>> {
        let (_, heads) = self.forward(image)?;
        Ok(heads.into_iter().map(|t| t.output).collect())
    }

    pub fn param_count(&self) -> usize {
        let mut count = 0;
        nn::visit_layer_params(&self.encoder, &mut |_| count += 1);
        for head in &self.heads {
            nn::visit_layer_params(head, &mut |_| count += 1);
        }
        count
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        nn::visit_layer_params(&self.encoder, &mut |p| out.push(p));
        for head in &self.heads {
            nn::visit_layer_params(head, &mut |p| out.push(p));
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) {
        let mut iter = params.iter();
        let mut set = |p: &mut f64| *p = *iter.next().expect("parameter count mismatch");
        nn::visit_layer_params_mut(&mut self.encoder, &mut set);
        for head in &mut self.heads {
            nn::visit_layer_params_mut(head, &mut set);
        }
        assert!(iter.next().is_none(), "parameter count mismatch");
    }

    pub fn apply_deltas(&mut self, deltas: &[f64]) {
        let mut iter = deltas.iter();
        let mut update = |p: &mut f64| *p -= *iter.next().expect("delta count mismatch");
        nn::visit_layer_params_mut(&mut self.encoder, &mut update);
        for head in &mut self.heads {
            nn::visit_layer_params_mut(head, &mut update);
        }
    }
}

pub fn flatten_features(map: &Array3<f64>) -> Array1<f64> {
    Array1::from_iter(map.iter().copied())
}

fn unflatten_features(v: &Array1<f64>, shape: (usize, usize, usize)) -> Array3<f64> {
    Array3::from_shape_vec(shape, v.to_vec()).expect("feature length matches map shape")
}

// --- training ---------------------------------------------------------------

/// One training example: image, arm, simulated outcome.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub image: Array3<f64>,
    pub treatment: u8,
    pub outcome: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    SquaredError,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
    pub seed: u64,
    #[serde(default)]
    pub loss: LossKind,
    /// Early stopping: restore the best-validation-loss parameters after
    /// this many epochs without improvement. Ignored without a val set.
    #[serde(default)]
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: OptimizerSpec::default(),
            seed: 0,
            loss: LossKind::SquaredError,
            patience: Some(5),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    #[serde(with = "crate::stats::float_scalar")]
    pub train_loss: f64,
    #[serde(with = "crate::stats::float_scalar")]
    pub train_control: f64,
    #[serde(with = "crate::stats::float_scalar")]
    pub train_treatment: f64,
    #[serde(with = "crate::stats::float_scalar")]
    pub val_loss: f64,
    #[serde(with = "crate::stats::float_scalar")]
    pub val_control: f64,
    #[serde(with = "crate::stats::float_scalar")]
    pub val_treatment: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs_run: usize,
    #[serde(with = "crate::stats::float_scalar")]
    pub final_train_loss: f64,
    #[serde(with = "crate::stats::float_scalar")]
    pub final_val_loss: f64,
    #[serde(with = "crate::stats::float_scalar")]
    pub final_loss_control: f64,
    #[serde(with = "crate::stats::float_scalar")]
    pub final_loss_treatment: f64,
    pub curve: Vec<EpochStats>,
}

/// A trained estimator with its training metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedEstimator {
    pub model: Model,
    pub meta: TrainMeta,
}

/// Route a sample to its head index: by arm for two-head, always head 0
/// for the baseline.
fn head_index(mode: ModelMode, treatment: u8) -> usize {
    match mode {
        ModelMode::TwoHead => treatment as usize,
        ModelMode::SingleHead => 0,
    }
}

/// Mean routed squared error over `samples`, total and per arm. Arms with
/// no samples report NaN.
pub fn evaluate_loss(model: &Model, samples: &[TrainSample]) -> Result<(f64, f64, f64)> {
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for sample in samples {
        let (_, heads) = model.forward(&sample.image)?;
        let h = head_index(model.spec.mode, sample.treatment);
        let err = heads[h].output - sample.outcome;
        sums[sample.treatment as usize] += err * err;
        counts[sample.treatment as usize] += 1;
    }
    let total = (sums[0] + sums[1]) / samples.len().max(1) as f64;
    let per_arm = |arm: usize| {
        if counts[arm] > 0 {
            sums[arm] / counts[arm] as f64
        } else {
            f64::NAN
        }
    };
    Ok((total, per_arm(0), per_arm(1)))
}

/// Per-sample squared errors through the matching head, for loss
/// decomposition checks.
pub fn routed_squared_errors(model: &Model, samples: &[TrainSample]) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|sample| {
            let (_, heads) = model.forward(&sample.image)?;
            let h = head_index(model.spec.mode, sample.treatment);
            Ok((heads[h].output - sample.outcome).powi(2))
        })
        .collect()
}

/// One gradient step over a batch. Returns the mean routed squared error
/// and accumulates per-arm error sums and counts into `arm_sums` /
/// `arm_counts`. Samples contribute gradients only through their matching
/// head; a batch without one arm simply contributes zero gradient to that
/// head.
fn train_batch(
    model: &mut Model,
    samples: &[TrainSample],
    indices: &[usize],
    optimizer: &mut Optimizer,
    arm_sums: &mut [f64; 2],
    arm_counts: &mut [usize; 2],
) -> Result<f64> {
    let batch = indices.len() as f64;
    let mut encoder_grads = nn::zero_grads(&model.encoder);
    let mut head_grads: Vec<_> = model.heads.iter().map(|h| nn::zero_grads(h)).collect();
    let mut loss = 0.0;

    for &i in indices {
        let sample = &samples[i];
        let (trace, head_traces) = model.forward(&sample.image)?;
        let h = head_index(model.spec.mode, sample.treatment);
        let err = head_traces[h].output - sample.outcome;
        loss += err * err;
        arm_sums[sample.treatment as usize] += err * err;
        arm_counts[sample.treatment as usize] += 1;
        // d(mean squared error)/d(head output)
        let d_out = 2.0 * err / batch;
        let (hg, d_features) =
            head_backward(&model.heads[h], &head_traces[h], d_out, GradMode::Standard);
        nn::accumulate_grads(&mut head_grads[h], hg);
        let d_map = unflatten_features(&d_features, trace.output.dim());
        let (eg, _, _) = encoder_backward(&model.encoder, &trace, d_map, GradMode::Standard);
        nn::accumulate_grads(&mut encoder_grads, eg);
    }
    loss /= batch;

    let mut flat = Vec::with_capacity(model.param_count());
    nn::flatten_grads(&encoder_grads, &mut flat);
    for hg in &head_grads {
        nn::flatten_grads(hg, &mut flat);
    }
    let deltas = optimizer.deltas(&flat);
    model.apply_deltas(&deltas);
    Ok(loss)
}

/// Train an estimator. Two-head mode requires both arms present in the
/// training set; the shuffle order, initialization and every update are
/// deterministic functions of the seed.
pub fn train(
    train_samples: &[TrainSample],
    val_samples: &[TrainSample],
    spec: ModelSpec,
    cfg: &TrainConfig,
) -> Result<TrainedEstimator> {
    if train_samples.is_empty() {
        return Err(Error::EmptyDataset("no training samples".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidParameter {
            name: "train config",
            reason: "epochs and batch_size must be positive".into(),
        });
    }
    if spec.mode == ModelMode::TwoHead {
        for arm in [0u8, 1] {
            if !train_samples.iter().any(|s| s.treatment == arm) {
                return Err(Error::ArmAbsent { arm });
            }
        }
    }

    let mut model = Model::init(spec, cfg.seed)?;
    let mut optimizer = Optimizer::new(cfg.optimizer.clone(), cfg.learning_rate, model.param_count());

    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut indices: Vec<usize> = (0..train_samples.len()).collect();
    let mut best: Option<(f64, Vec<f64>, usize)> = None;
    let mut stale = 0usize;
    let mut epochs_run = 0usize;

    for epoch in 0..cfg.epochs {
        epochs_run = epoch + 1;
        use rand::seq::SliceRandom;
        indices.shuffle(&mut rng::stream(cfg.seed, "shuffle", &epoch.to_le_bytes()));
        // Running (pre-update) training losses accumulated from the batch
        // passes themselves; no extra sweep over the training set.
        let mut arm_sums = [0.0f64; 2];
        let mut arm_counts = [0usize; 2];
        for (batch_idx, chunk) in indices.chunks(cfg.batch_size).enumerate() {
            let loss = train_batch(
                &mut model,
                train_samples,
                chunk,
                &mut optimizer,
                &mut arm_sums,
                &mut arm_counts,
            )?;
            if !loss.is_finite() {
                return Err(Error::NanLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
        }
        let train_loss = (arm_sums[0] + arm_sums[1]) / train_samples.len() as f64;
        let per_arm = |arm: usize| {
            if arm_counts[arm] > 0 {
                arm_sums[arm] / arm_counts[arm] as f64
            } else {
                f64::NAN
            }
        };
        let (train_control, train_treatment) = (per_arm(0), per_arm(1));

        let (val_loss, val_control, val_treatment) = if val_samples.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            evaluate_loss(&model, val_samples)?
        };
        curve.push(EpochStats {
            epoch,
            train_loss,
            train_control,
            train_treatment,
            val_loss,
            val_control,
            val_treatment,
        });

        if let Some(patience) = cfg.patience {
            if val_loss.is_finite() {
                let improved = best.as_ref().map_or(true, |(b, _, _)| val_loss < *b);
                if improved {
                    best = Some((val_loss, model.params_flat(), epoch));
                    stale = 0;
                } else {
                    stale += 1;
                    if stale > patience {
                        break;
                    }
                }
            }
        }
    }

    if let Some((_, params, _)) = &best {
        model.set_params_flat(params);
    }

    let (final_train_loss, final_loss_control, final_loss_treatment) =
        evaluate_loss(&model, train_samples)?;
    let final_val_loss = if val_samples.is_empty() {
        f64::NAN
    } else {
        evaluate_loss(&model, val_samples)?.0
    };

    Ok(TrainedEstimator {
        model,
        meta: TrainMeta {
            seed: cfg.seed,
            epochs_run,
            final_train_loss,
            final_val_loss,
            final_loss_control,
            final_loss_treatment,
            curve,
        },
    })
}

// --- inference -----------------------------------------------------------

/// Per-image scalar pair (control-head, treatment-head). Two-head only.
pub fn predict_outcomes(
    estimator: &TrainedEstimator,
    images: &[Array3<f64>],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if estimator.model.spec.mode != ModelMode::TwoHead {
        return Err(Error::WrongMode {
            expected: "two_head",
            actual: estimator.model.spec.mode.as_str(),
        });
    }
    let mut control = Vec::with_capacity(images.len());
    let mut treated = Vec::with_capacity(images.len());
    for image in images {
        let outputs = estimator.model.head_outputs(image)?;
        control.push(outputs[0]);
        treated.push(outputs[1]);
    }
    Ok((control, treated))
}

/// Estimated CATE per image: treatment-head output minus control-head
/// output.
pub fn estimate_cate(estimator: &TrainedEstimator, images: &[Array3<f64>]) -> Result<Vec<f64>> {
    let (control, treated) = predict_outcomes(estimator, images)?;
    Ok(treated
        .iter()
        .zip(control.iter())
        .map(|(t, c)| t - c)
        .collect())
}

/// The single head's output per image: the baseline biomarker candidate.
pub fn baseline_candidate(
    estimator: &TrainedEstimator,
    images: &[Array3<f64>],
) -> Result<Vec<f64>> {
    if estimator.model.spec.mode != ModelMode::SingleHead {
        return Err(Error::WrongMode {
            expected: "single_head",
            actual: estimator.model.spec.mode.as_str(),
        });
    }
    images
        .iter()
        .map(|image| Ok(estimator.model.head_outputs(image)?[0]))
        .collect()
}

// --- persistence -----------------------------------------------------------

/// Write a self-describing checkpoint (spec, parameters, training
/// metadata). JSON preserves every f64 bit-exactly.
pub fn save_checkpoint(estimator: &TrainedEstimator, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::to_writer(std::io::BufWriter::new(file), estimator)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedEstimator> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let estimator: TrainedEstimator = serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| Error::CheckpointFormat(e.to_string()))?;
    if estimator.model.heads.len() != estimator.model.spec.head_count() {
        return Err(Error::CheckpointFormat(format!(
            "{} heads stored for {} mode",
            estimator.model.heads.len(),
            estimator.model.spec.mode.as_str()
        )));
    }
    Ok(estimator)
}

/// Training curve CSV: epoch, train and val loss, per-arm breakdown.
pub fn write_curve_csv(meta: &TrainMeta, path: &Path) -> Result<()> {
    use std::io::Write;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    writeln!(
        file,
        "epoch,train_loss,train_control,train_treatment,val_loss,val_control,val_treatment"
    )
    .map_err(|e| Error::io(path.display().to_string(), e))?;
    let fmt = |v: f64| if v.is_finite() { v.to_string() } else { String::new() };
    for s in &meta.curve {
        writeln!(
            file,
            "{},{},{},{},{},{},{}",
            s.epoch,
            fmt(s.train_loss),
            fmt(s.train_control),
            fmt(s.train_treatment),
            fmt(s.val_loss),
            fmt(s.val_control),
            fmt(s.val_treatment)
        )
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::Array3;
    use rand::Rng;

    fn toy_spec(mode: ModelMode) -> ModelSpec {
        ModelSpec {
            mode,
            encoder: vec![
                LayerSpec::Conv {
                    out_channels: 2,
                    kernel: 3,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
            ],
            head: vec![
                LayerSpec::Dense { units: 4 },
                LayerSpec::Relu,
                LayerSpec::Dense { units: 1 },
            ],
            input_shape: (1, 6, 6),
        }
    }

    fn toy_samples(n: usize, seed: u64) -> Vec<TrainSample> {
        let mut stream = rng::stream(seed, "toy-samples", b"");
        (0..n)
            .map(|i| TrainSample {
                image: Array3::from_shape_simple_fn((1, 6, 6), || stream.gen_range(0.0..1.0)),
                treatment: (i % 2) as u8,
                outcome: stream.gen_range(-1.0..1.0),
            })
            .collect()
    }

    #[test]
    fn identical_heads_give_zero_cate() {
        let mut model = Model::init(toy_spec(ModelMode::TwoHead), 3).unwrap();
        model.copy_heads_from_first();
        let estimator = TrainedEstimator {
            model,
            meta: TrainMeta {
                seed: 3,
                epochs_run: 0,
                final_train_loss: f64::NAN,
                final_val_loss: f64::NAN,
                final_loss_control: f64::NAN,
                final_loss_treatment: f64::NAN,
                curve: vec![],
            },
        };
        let images: Vec<_> = toy_samples(5, 1).into_iter().map(|s| s.image).collect();
        let (c, t) = predict_outcomes(&estimator, &images).unwrap();
        assert_eq!(c, t);
        let cate = estimate_cate(&estimator, &images).unwrap();
        assert!(cate.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mode_errors() {
        let two = TrainedEstimator {
            model: Model::init(toy_spec(ModelMode::TwoHead), 0).unwrap(),
            meta: TrainMeta {
                seed: 0,
                epochs_run: 0,
                final_train_loss: 0.0,
                final_val_loss: 0.0,
                final_loss_control: 0.0,
                final_loss_treatment: 0.0,
                curve: vec![],
            },
        };
        let single = TrainedEstimator {
            model: Model::init(toy_spec(ModelMode::SingleHead), 0).unwrap(),
            meta: two.meta.clone(),
        };
        let images: Vec<_> = toy_samples(2, 2).into_iter().map(|s| s.image).collect();
        assert!(matches!(
            estimate_cate(&single, &images),
            Err(Error::WrongMode { .. })
        ));
        assert!(matches!(
            baseline_candidate(&two, &images),
            Err(Error::WrongMode { .. })
        ));
        assert_eq!(baseline_candidate(&single, &images).unwrap().len(), 2);
    }

    #[test]
    fn two_head_training_requires_both_arms() {
        let mut samples = toy_samples(8, 4);
        for s in &mut samples {
            s.treatment = 0;
        }
        let err = train(
            &samples,
            &[],
            toy_spec(ModelMode::TwoHead),
            &TrainConfig {
                epochs: 1,
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::ArmAbsent { arm: 1 }));
    }

    #[test]
    fn constant_outcome_is_fit_by_both_heads() {
        let mut samples = toy_samples(24, 5);
        for s in &mut samples {
            s.outcome = 0.75;
        }
        let cfg = TrainConfig {
            epochs: 300,
            batch_size: 24,
            learning_rate: 1e-2,
            seed: 9,
            patience: None,
            ..Default::default()
        };
        let est = train(&samples, &[], toy_spec(ModelMode::TwoHead), &cfg).unwrap();
        assert!(
            est.meta.final_train_loss < 1e-3,
            "loss = {}",
            est.meta.final_train_loss
        );
        // Each head fits the constant on the arm it was trained on.
        let images: Vec<_> = samples.iter().map(|s| s.image.clone()).collect();
        let (c, t) = predict_outcomes(&est, &images).unwrap();
        for (i, sample) in samples.iter().enumerate() {
            let routed = if sample.treatment == 0 { c[i] } else { t[i] };
            assert_relative_eq!(routed, 0.75, max_relative = 0.1);
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        // 2-layer toy network (conv encoder + dense head), 4-sample batch.
        let spec = ModelSpec {
            mode: ModelMode::TwoHead,
            encoder: vec![
                LayerSpec::Conv {
                    out_channels: 2,
                    kernel: 3,
                    padding: 0,
                },
                LayerSpec::Relu,
            ],
            head: vec![LayerSpec::Dense { units: 1 }],
            input_shape: (1, 5, 5),
        };
        let samples = toy_samples(4, 7)
            .into_iter()
            .map(|mut s| {
                s.image = s
                    .image
                    .slice(ndarray::s![.., ..5, ..5])
                    .to_owned();
                s
            })
            .collect::<Vec<_>>();
        let model = Model::init(spec, 11).unwrap();

        let batch_loss = |m: &Model| -> f64 {
            samples
                .iter()
                .map(|s| {
                    let (_, heads) = m.forward(&s.image).unwrap();
                    let h = head_index(m.spec.mode, s.treatment);
                    (heads[h].output - s.outcome).powi(2)
                })
                .sum::<f64>()
                / samples.len() as f64
        };

        // Analytic gradient of the batch loss.
        let mut encoder_grads = nn::zero_grads(&model.encoder);
        let mut head_grads: Vec<_> = model.heads.iter().map(|h| nn::zero_grads(h)).collect();
        for s in &samples {
            let (trace, head_traces) = model.forward(&s.image).unwrap();
            let h = head_index(model.spec.mode, s.treatment);
            let d_out = 2.0 * (head_traces[h].output - s.outcome) / samples.len() as f64;
            let (hg, d_features) =
                head_backward(&model.heads[h], &head_traces[h], d_out, GradMode::Standard);
            nn::accumulate_grads(&mut head_grads[h], hg);
            let d_map = unflatten_features(&d_features, trace.output.dim());
            let (eg, _, _) =
                encoder_backward(&model.encoder, &trace, d_map, GradMode::Standard);
            nn::accumulate_grads(&mut encoder_grads, eg);
        }
        let mut analytic = Vec::new();
        nn::flatten_grads(&encoder_grads, &mut analytic);
        for hg in &head_grads {
            nn::flatten_grads(hg, &mut analytic);
        }

        // Central finite differences over every parameter.
        let params = model.params_flat();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..params.len() {
            let mut m_plus = model.clone();
            let mut p = params.clone();
            p[i] += h;
            m_plus.set_params_flat(&p);
            let mut m_minus = model.clone();
            p[i] = params[i] - h;
            m_minus.set_params_flat(&p);
            let fd = (batch_loss(&m_plus) - batch_loss(&m_minus)) / (2.0 * h);
            let denom = analytic[i].abs().max(fd.abs()).max(1e-8);
            worst = worst.max((analytic[i] - fd).abs() / denom);
        }
        assert!(worst < 1e-4, "worst relative gradient error {worst}");
    }

    #[test]
    fn loss_decomposes_into_routed_per_sample_errors() {
        let samples = toy_samples(10, 8);
        let model = Model::init(toy_spec(ModelMode::TwoHead), 13).unwrap();
        let per_sample = routed_squared_errors(&model, &samples).unwrap();
        let (total, control, treatment) = evaluate_loss(&model, &samples).unwrap();
        let direct_total: f64 = per_sample.iter().sum::<f64>() / samples.len() as f64;
        assert_relative_eq!(total, direct_total, max_relative = 1e-12);
        let control_sum: f64 = samples
            .iter()
            .zip(&per_sample)
            .filter(|(s, _)| s.treatment == 0)
            .map(|(_, e)| e)
            .sum();
        let n_control = samples.iter().filter(|s| s.treatment == 0).count() as f64;
        assert_relative_eq!(control, control_sum / n_control, max_relative = 1e-12);
        let _ = treatment;
    }

    #[test]
    fn training_is_deterministic() {
        let samples = toy_samples(16, 21);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            seed: 33,
            patience: None,
            ..Default::default()
        };
        let a = train(&samples, &[], toy_spec(ModelMode::TwoHead), &cfg).unwrap();
        let b = train(&samples, &[], toy_spec(ModelMode::TwoHead), &cfg).unwrap();
        assert_eq!(a.model.params_flat(), b.model.params_flat());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_identical() {
        let samples = toy_samples(12, 2);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            seed: 5,
            patience: None,
            ..Default::default()
        };
        let est = train(&samples, &[], toy_spec(ModelMode::TwoHead), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&est, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        let images: Vec<_> = samples.iter().map(|s| s.image.clone()).collect();
        let tau_a = estimate_cate(&est, &images).unwrap();
        let tau_b = estimate_cate(&back, &images).unwrap();
        for (a, b) in tau_a.iter().zip(tau_b.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn curve_csv_has_header_and_rows() {
        let samples = toy_samples(8, 2);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            seed: 5,
            patience: None,
            ..Default::default()
        };
        let est = train(&samples, &[], toy_spec(ModelMode::TwoHead), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        write_curve_csv(&est.meta, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,train_loss,train_control,train_treatment,val_loss,val_control,val_treatment"
        );
        assert_eq!(lines.count(), 2);
    }

    #[test]
    fn shape_mismatch_detected() {
        let model = Model::init(toy_spec(ModelMode::TwoHead), 0).unwrap();
        let bad = Array3::<f64>::zeros((1, 4, 4));
        assert!(matches!(
            model.head_outputs(&bad),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
