//! Grid orchestration: simulate, train and evaluate over a grid of
//! (b_prog, b_pred) strengths for both model modes, then aggregate the
//! t-ratio metric into bins over b_pred/b_prog.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{DatasetManifest, Split};
use crate::digits::FeatureRoles;
use crate::error::{Error, Result};
use crate::imageio;
use crate::model::{
    baseline_candidate, estimate_cate, train, ModelMode, ModelSpec, TrainConfig, TrainSample,
};
use crate::sim::{build_rct_dataset, OutcomeSimConfig, RctRecord};
use crate::stats::{compute_bounds, fit_interaction_ols, predictive_strength};

/// The grid to sweep: every (b_prog, b_pred) pair from `b_values`, crossed
/// with seeds and model modes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub dataset_id: String,
    pub model_spec_id: String,
    pub feature_set: FeatureRoles,
    pub b_values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub modes: Vec<ModelMode>,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default = "default_p_treat")]
    pub p_treat: f64,
}

fn default_p_treat() -> f64 {
    0.5
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.b_values.is_empty() || self.seeds.is_empty() || self.modes.is_empty() {
            return Err(Error::Config(
                "grid needs non-empty b_values, seeds and modes".into(),
            ));
        }
        for &b in &self.b_values {
            if !b.is_finite() || b < 0.0 {
                return Err(Error::Config(format!("b values must be >= 0, got {b}")));
            }
        }
        Ok(())
    }

    pub fn task_count(&self) -> usize {
        self.b_values.len() * self.b_values.len() * self.seeds.len() * self.modes.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Done,
    Failed,
}

/// One completed grid run, in the results JSONL schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_key: String,
    pub b_prog: f64,
    pub b_pred: f64,
    pub mode: ModelMode,
    pub seed: u64,
    pub feature_set: String,
    #[serde(with = "crate::stats::float_scalar")]
    pub t_pred: f64,
    #[serde(with = "crate::stats::float_scalar")]
    pub t_prog: f64,
    #[serde(with = "crate::stats::float_scalar")]
    pub ratio: f64,
    pub degenerate: bool,
    #[serde(with = "crate::stats::float_scalar")]
    pub bound_lower: f64,
    #[serde(with = "crate::stats::float_scalar")]
    pub bound_upper: f64,
    pub status: RunStatus,
    pub wall_time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Stable identity of one run within a grid.
pub fn run_key(
    dataset_id: &str,
    b_prog: f64,
    b_pred: f64,
    mode: ModelMode,
    seed: u64,
    model_spec_id: &str,
) -> String {
    let canonical = format!(
        "{dataset_id}|{b_prog}|{b_pred}|{}|{seed}|{model_spec_id}",
        mode.as_str()
    );
    let digest = Sha256::digest(canonical.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// In-memory dataset the grid trains on: manifest plus loaded images.
pub struct GridData {
    pub manifest: DatasetManifest,
    images: HashMap<String, ndarray::Array3<f64>>,
}

impl GridData {
    pub fn load(manifest: DatasetManifest) -> Result<Self> {
        if manifest.is_empty() {
            return Err(Error::EmptyDataset("grid manifest has no rows".into()));
        }
        let mut images = HashMap::with_capacity(manifest.len());
        for row in &manifest.rows {
            images.insert(
                row.sample_id.clone(),
                imageio::load_rgb_png(Path::new(&row.image_path))?,
            );
        }
        Ok(Self { manifest, images })
    }

    /// For tests: supply images directly instead of reading files.
    pub fn from_parts(
        manifest: DatasetManifest,
        images: HashMap<String, ndarray::Array3<f64>>,
    ) -> Result<Self> {
        for row in &manifest.rows {
            if !images.contains_key(&row.sample_id) {
                return Err(Error::MissingImage(row.sample_id.clone()));
            }
        }
        Ok(Self { manifest, images })
    }

    pub fn image(&self, sample_id: &str) -> &ndarray::Array3<f64> {
        &self.images[sample_id]
    }
}

/// Execution knobs independent of the scientific grid definition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridRunConfig {
    pub model: ModelSpec,
    pub train: TrainConfig,
    /// Worker threads; grid runs are independent.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Stop after this many newly executed runs (smoke runs, resume tests).
    #[serde(default)]
    pub limit: Option<usize>,
}

fn default_parallelism() -> usize {
    1
}

fn split_samples(
    data: &GridData,
    records: &[RctRecord],
    split: Split,
) -> (Vec<TrainSample>, Vec<f64>, Vec<f64>, Vec<u8>, Vec<f64>) {
    let by_id: HashMap<&str, &RctRecord> =
        records.iter().map(|r| (r.sample_id.as_str(), r)).collect();
    let mut samples = Vec::new();
    let mut x_prog = Vec::new();
    let mut x_pred = Vec::new();
    let mut arms = Vec::new();
    let mut outcomes = Vec::new();
    for row in data.manifest.split_rows(split) {
        let record = by_id[row.sample_id.as_str()];
        samples.push(TrainSample {
            image: data.image(&row.sample_id).clone(),
            treatment: record.treatment,
            outcome: record.outcome,
        });
        x_prog.push(record.x_prog);
        x_pred.push(record.x_pred);
        arms.push(record.treatment);
        outcomes.push(record.outcome);
    }
    (samples, x_prog, x_pred, arms, outcomes)
}

/// Simulate, train and evaluate one grid point. The model candidate is
/// computed on the test split: estimated CATE for the two-headed model,
/// the single head's output for the baseline.
pub fn execute_run(
    data: &GridData,
    spec: &GridSpec,
    cfg: &GridRunConfig,
    b_prog: f64,
    b_pred: f64,
    mode: ModelMode,
    seed: u64,
) -> Result<RunRecord> {
    let start = Instant::now();
    let sim_cfg = OutcomeSimConfig {
        b_prog,
        b_pred,
        noise_sd: spec.noise_sd,
        p_treat: spec.p_treat,
        seed,
    };
    let records = build_rct_dataset(&data.manifest, &sim_cfg)?;

    let (train_samples, ..) = split_samples(data, &records, Split::Train);
    let (val_samples, ..) = split_samples(data, &records, Split::Val);
    let (test_samples, x_prog, x_pred, arms, outcomes) =
        split_samples(data, &records, Split::Test);
    if test_samples.is_empty() {
        return Err(Error::EmptyDataset("test split is empty".into()));
    }

    let mut model_spec = cfg.model.clone();
    model_spec.mode = mode;
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let estimator = train(&train_samples, &val_samples, model_spec, &train_cfg)?;

    let test_images: Vec<_> = test_samples.iter().map(|s| s.image.clone()).collect();
    let candidate = match mode {
        ModelMode::TwoHead => estimate_cate(&estimator, &test_images)?,
        ModelMode::SingleHead => baseline_candidate(&estimator, &test_images)?,
    };

    let report = fit_interaction_ols(&candidate, &arms, &outcomes)?;
    let strength = predictive_strength(&report);
    let (lower, upper) = compute_bounds(&x_prog, &x_pred, &arms, &outcomes)?;

    Ok(RunRecord {
        run_key: run_key(
            &spec.dataset_id,
            b_prog,
            b_pred,
            mode,
            seed,
            &spec.model_spec_id,
        ),
        b_prog,
        b_pred,
        mode,
        seed,
        feature_set: spec.feature_set.label().to_string(),
        t_pred: strength.t_pred,
        t_prog: strength.t_prog,
        ratio: strength.ratio,
        degenerate: strength.degenerate,
        bound_lower: lower.ratio,
        bound_upper: upper.ratio,
        status: RunStatus::Done,
        wall_time_s: start.elapsed().as_secs_f64(),
        error: None,
    })
}

/// Append-only results store: one JSON line per record.
pub fn read_results(path: &Path) -> Result<Vec<RunRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut records = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}

pub fn append_result(file: &mut std::fs::File, record: &RunRecord) -> Result<()> {
    let mut line = serde_json::to_vec(record)?;
    line.push(b'\n');
    file.write_all(&line)
        .and_then(|_| file.flush())
        .map_err(|e| Error::io("results store", e))
}

/// Run every task of the grid not already completed in `results_path`.
/// Completed (done) runs are skipped on restart; failed runs are retried.
/// Individual failures are recorded with `status = failed` and do not stop
/// the grid. Returns all records (prior done + newly executed).
pub fn run_grid(
    data: &GridData,
    spec: &GridSpec,
    cfg: &GridRunConfig,
    results_path: &Path,
) -> Result<Vec<RunRecord>> {
    spec.validate()?;
    let existing = read_results(results_path)?;
    let done: std::collections::HashSet<String> = existing
        .iter()
        .filter(|r| r.status == RunStatus::Done)
        .map(|r| r.run_key.clone())
        .collect();

    let mut tasks = Vec::new();
    for &b_prog in &spec.b_values {
        for &b_pred in &spec.b_values {
            for &seed in &spec.seeds {
                for &mode in &spec.modes {
                    let key = run_key(
                        &spec.dataset_id,
                        b_prog,
                        b_pred,
                        mode,
                        seed,
                        &spec.model_spec_id,
                    );
                    if !done.contains(&key) {
                        tasks.push((b_prog, b_pred, mode, seed));
                    }
                }
            }
        }
    }
    if let Some(limit) = cfg.limit {
        tasks.truncate(limit);
    }

    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(results_path)
        .map_err(|e| Error::io(results_path.display().to_string(), e))?;
    let sink = Mutex::new(file);

    let execute = |&(b_prog, b_pred, mode, seed): &(f64, f64, ModelMode, u64)| -> Result<RunRecord> {
        let record = match execute_run(data, spec, cfg, b_prog, b_pred, mode, seed) {
            Ok(record) => record,
            Err(err) => RunRecord {
                run_key: run_key(
                    &spec.dataset_id,
                    b_prog,
                    b_pred,
                    mode,
                    seed,
                    &spec.model_spec_id,
                ),
                b_prog,
                b_pred,
                mode,
                seed,
                feature_set: spec.feature_set.label().to_string(),
                t_pred: f64::NAN,
                t_prog: f64::NAN,
                ratio: f64::NAN,
                degenerate: true,
                bound_lower: f64::NAN,
                bound_upper: f64::NAN,
                status: RunStatus::Failed,
                wall_time_s: 0.0,
                error: Some(err.to_string()),
            },
        };
        let mut file = sink.lock().expect("results sink poisoned");
        append_result(&mut file, &record)?;
        Ok(record)
    };

    let new_records: Vec<RunRecord> = if cfg.parallelism > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.parallelism)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| tasks.par_iter().map(execute).collect::<Result<Vec<_>>>())?
    } else {
        tasks.iter().map(execute).collect::<Result<Vec<_>>>()?
    };

    let mut all: Vec<RunRecord> = existing
        .into_iter()
        .filter(|r| r.status == RunStatus::Done)
        .collect();
    all.extend(new_records);
    Ok(all)
}

// --- binned aggregation ------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinStats {
    #[serde(with = "crate::stats::float_scalar")]
    pub lo: f64,
    #[serde(with = "crate::stats::float_scalar")]
    pub hi: f64,
    pub count: usize,
    #[serde(with = "crate::stats::float_scalar")]
    pub median: f64,
    #[serde(with = "crate::stats::float_scalar")]
    pub q1: f64,
    #[serde(with = "crate::stats::float_scalar")]
    pub q3: f64,
    #[serde(with = "crate::stats::float_scalar")]
    pub min: f64,
    #[serde(with = "crate::stats::float_scalar")]
    pub max: f64,
}

/// Boxplot statistics of `|t_pred/t_prog|` per b_pred/b_prog bin for one
/// model mode. Runs with b_prog = 0 land in the dedicated infinite-ratio
/// bin; degenerate-flagged runs are excluded and counted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinnedSummary {
    pub mode: ModelMode,
    pub bins: Vec<BinStats>,
    pub infinite: Option<BinStats>,
    pub degenerate_count: usize,
    pub done_total: usize,
    pub failed_count: usize,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    // Linear interpolation between order statistics (type 7).
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn bin_stats(lo: f64, hi: f64, mut values: Vec<f64>) -> BinStats {
    values.sort_by(|a, b| a.partial_cmp(b).expect("ratios are comparable"));
    BinStats {
        lo,
        hi,
        count: values.len(),
        median: quantile(&values, 0.5),
        q1: quantile(&values, 0.25),
        q3: quantile(&values, 0.75),
        min: values[0],
        max: *values.last().unwrap(),
    }
}

/// Default edges: first edge 0, then logarithmically spaced over the
/// observed positive finite ratios r = b_pred/b_prog.
pub fn default_bin_edges(records: &[RunRecord], bins: usize) -> Vec<f64> {
    let mut positive: Vec<f64> = records
        .iter()
        .filter(|r| r.status == RunStatus::Done && r.b_prog > 0.0 && r.b_pred > 0.0)
        .map(|r| r.b_pred / r.b_prog)
        .collect();
    positive.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if positive.is_empty() {
        return vec![0.0, 1.0];
    }
    let lo = positive[0];
    let hi = *positive.last().unwrap() * (1.0 + 1e-12);
    let mut edges = vec![0.0];
    if hi > lo {
        let bins = bins.max(1);
        for i in 1..bins {
            edges.push(lo * (hi / lo).powf(i as f64 / bins as f64));
        }
    }
    edges.push(hi.max(lo * (1.0 + 1e-12)));
    edges
}

/// Aggregate done records into per-mode binned summaries.
pub fn aggregate_bins(records: &[RunRecord], edges: &[f64]) -> Result<Vec<BinnedSummary>> {
    if records.is_empty() {
        return Err(Error::EmptyDataset("no run records to aggregate".into()));
    }
    if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("bin edges must be strictly increasing".into()));
    }

    let mut modes: Vec<ModelMode> = Vec::new();
    for r in records {
        if !modes.contains(&r.mode) {
            modes.push(r.mode);
        }
    }

    let mut summaries = Vec::new();
    for mode in modes {
        let mode_records: Vec<&RunRecord> =
            records.iter().filter(|r| r.mode == mode).collect();
        let failed_count = mode_records
            .iter()
            .filter(|r| r.status == RunStatus::Failed)
            .count();
        let done: Vec<&&RunRecord> = mode_records
            .iter()
            .filter(|r| r.status == RunStatus::Done)
            .collect();

        let mut degenerate_count = 0usize;
        let mut infinite_values = Vec::new();
        let mut bin_values: Vec<Vec<f64>> = vec![Vec::new(); edges.len() - 1];
        for record in &done {
            if record.degenerate {
                degenerate_count += 1;
                continue;
            }
            if record.b_prog == 0.0 {
                infinite_values.push(record.ratio);
                continue;
            }
            let r = record.b_pred / record.b_prog;
            let last = edges.len() - 2;
            let idx = match edges.windows(2).position(|w| r >= w[0] && r < w[1]) {
                Some(idx) => idx,
                // The last bin is closed on the right.
                None if r == edges[edges.len() - 1] => last,
                None => return Err(Error::RatioOutOfRange(r)),
            };
            bin_values[idx].push(record.ratio);
        }

        let bins: Vec<BinStats> = bin_values
            .into_iter()
            .enumerate()
            .map(|(i, values)| {
                if values.is_empty() {
                    // Empty-bin marker: count 0, NaN statistics.
                    BinStats {
                        lo: edges[i],
                        hi: edges[i + 1],
                        count: 0,
                        median: f64::NAN,
                        q1: f64::NAN,
                        q3: f64::NAN,
                        min: f64::NAN,
                        max: f64::NAN,
                    }
                } else {
                    bin_stats(edges[i], edges[i + 1], values)
                }
            })
            .collect();
        let infinite = if infinite_values.is_empty() {
            None
        } else {
            Some(bin_stats(f64::INFINITY, f64::INFINITY, infinite_values))
        };

        summaries.push(BinnedSummary {
            mode,
            bins,
            infinite,
            degenerate_count,
            done_total: done.len(),
            failed_count,
        });
    }
    Ok(summaries)
}

// --- report emission -----------------------------------------------------------

fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

/// Write the results JSONL, the binned-summary CSV and the comparison
/// figure. Output is deterministic: records sorted by run key, fixed float
/// formatting.
pub fn emit_report(
    summaries: &[BinnedSummary],
    records: &[RunRecord],
    out_dir: &Path,
) -> Result<()> {
    if records.is_empty() {
        return Err(Error::EmptyDataset(
            "emit_report called with no run records".into(),
        ));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let mut sorted: Vec<&RunRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.run_key.cmp(&b.run_key));
    let jsonl_path = out_dir.join("records.jsonl");
    let mut file = std::fs::File::create(&jsonl_path)
        .map_err(|e| Error::io(jsonl_path.display().to_string(), e))?;
    for record in sorted {
        serde_json::to_writer(&mut file, record)?;
        file.write_all(b"\n")
            .map_err(|e| Error::io(jsonl_path.display().to_string(), e))?;
    }

    let csv_path = out_dir.join("binned_summary.csv");
    let mut csv = String::from("mode,bin_lo,bin_hi,count,median,q1,q3,min,max\n");
    for summary in summaries {
        let mut rows: Vec<&BinStats> = summary.bins.iter().collect();
        if let Some(inf) = &summary.infinite {
            rows.push(inf);
        }
        for b in rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                summary.mode.as_str(),
                fmt_float(b.lo),
                fmt_float(b.hi),
                b.count,
                fmt_float(b.median),
                fmt_float(b.q1),
                fmt_float(b.q3),
                fmt_float(b.min),
                fmt_float(b.max),
            ));
        }
    }
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(csv_path.display().to_string(), e))?;

    crate::plot::render_ratio_boxplot(summaries, records, &out_dir.join("ratio_boxplot.png"))?;
    Ok(())
}
