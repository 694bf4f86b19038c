// Development-time calibration probe: timing and t-ratio behavior of the
// two-headed model vs the baseline on colored digits.
use std::time::Instant;

use predmarker::dataset::Split;
use predmarker::digits::{build_colored_digits_corpus, ColoredDigitSpec};
use predmarker::experiment::{execute_run, GridData, GridRunConfig, GridSpec};
use predmarker::model::{ModelMode, ModelSpec, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1);

    let dir = std::env::temp_dir().join(format!("cmnist_probe42_{n}"));
    let spec = ColoredDigitSpec::default();
    let t0 = Instant::now();
    let manifest = if dir.join("manifest.csv").exists() {
        predmarker::dataset::DatasetManifest::read_csv(&dir.join("manifest.csv")).unwrap()
    } else {
        std::fs::create_dir_all(&dir).unwrap();
        build_colored_digits_corpus(n, &spec, &[0.6, 0.1, 0.3], 42, &dir).unwrap()
    };
    eprintln!("corpus: {:?} ({} rows)", t0.elapsed(), manifest.len());
    eprintln!("train/val/test = {}/{}/{}",
        manifest.split_rows(Split::Train).count(),
        manifest.split_rows(Split::Val).count(),
        manifest.split_rows(Split::Test).count());

    let t0 = Instant::now();
    let data = GridData::load(manifest).unwrap();
    eprintln!("image load: {:?}", t0.elapsed());

    let grid = GridSpec {
        dataset_id: "probe".into(),
        model_spec_id: "small_cnn".into(),
        feature_set: predmarker::digits::FeatureRoles::ColorPrognostic,
        b_values: vec![1.0],
        seeds: vec![seed],
        modes: vec![ModelMode::TwoHead, ModelMode::SingleHead],
        noise_sd: 0.0,
        p_treat: 0.5,
    };
    let cfg = GridRunConfig {
        model: ModelSpec::small_cnn(ModelMode::TwoHead, (3, 28, 28)),
        train: TrainConfig {
            epochs,
            batch_size: 32,
            learning_rate: 1.5e-3,
            seed,
            patience: Some(4),
            ..Default::default()
        },
        parallelism: 1,
        limit: None,
    };

    for mode in [ModelMode::TwoHead, ModelMode::SingleHead] {
        let t0 = Instant::now();
        let rec = execute_run(&data, &grid, &cfg, 1.0, 1.0, mode, seed).unwrap();
        eprintln!(
            "{}: t_pred={:.3} t_prog={:.3} ratio={:.3} degenerate={} lower={:.4} upper={:.2} wall={:.1}s (total {:?})",
            rec.mode.as_str(), rec.t_pred, rec.t_prog, rec.ratio, rec.degenerate,
            rec.bound_lower, rec.bound_upper, rec.wall_time_s, t0.elapsed()
        );
    }
}
