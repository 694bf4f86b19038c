// Criterion-4 probe: with b_pred = 0 the interaction p-value should be
// non-significant in most seeds.
use predmarker::dataset::{DatasetManifest, Split};
use predmarker::digits::{build_colored_digits_corpus, ColoredDigitSpec};
use predmarker::experiment::{GridData, GridRunConfig, GridSpec};
use predmarker::model::{ModelMode, ModelSpec, TrainConfig};
use predmarker::sim::build_rct_dataset;
use predmarker::stats::{fit_interaction_ols, COEF_INTERACTION};

fn main() {
    let n = 2000;
    let dir = std::env::temp_dir().join(format!("cmnist_null_{n}"));
    let manifest = if dir.join("manifest.csv").exists() {
        DatasetManifest::read_csv(&dir.join("manifest.csv")).unwrap()
    } else {
        std::fs::create_dir_all(&dir).unwrap();
        build_colored_digits_corpus(n, &ColoredDigitSpec::default(), &[0.6, 0.1, 0.3], 42, &dir)
            .unwrap()
    };
    let data = GridData::load(manifest).unwrap();
    let grid = GridSpec {
        dataset_id: "null".into(),
        model_spec_id: "small_cnn".into(),
        feature_set: predmarker::digits::FeatureRoles::ColorPrognostic,
        b_values: vec![0.0, 1.0],
        seeds: vec![],
        modes: vec![ModelMode::TwoHead],
        noise_sd: 0.05,
        p_treat: 0.5,
    };
    let cfg = GridRunConfig {
        model: ModelSpec::small_cnn(ModelMode::TwoHead, (3, 28, 28)),
        train: TrainConfig {
            epochs: 14,
            batch_size: 32,
            learning_rate: 1.5e-3,
            patience: Some(3),
            ..Default::default()
        },
        parallelism: 1,
        limit: None,
    };
    let mut nonsig = 0;
    let t0 = std::time::Instant::now();
    for seed in 1..=10u64 {
        let sim = predmarker::sim::OutcomeSimConfig {
            b_prog: 1.0,
            b_pred: 0.0,
            noise_sd: 0.05,
            p_treat: 0.5,
            seed,
        };
        let records = build_rct_dataset(&data.manifest, &sim).unwrap();
        let by_id: std::collections::HashMap<&str, _> =
            records.iter().map(|r| (r.sample_id.as_str(), r)).collect();
        let mk = |split: Split| {
            data.manifest
                .split_rows(split)
                .map(|row| {
                    let r = by_id[row.sample_id.as_str()];
                    predmarker::model::TrainSample {
                        image: data.image(&row.sample_id).clone(),
                        treatment: r.treatment,
                        outcome: r.outcome,
                    }
                })
                .collect::<Vec<_>>()
        };
        let train_set = mk(Split::Train);
        let val_set = mk(Split::Val);
        let test_set = mk(Split::Test);
        let mut spec = cfg.model.clone();
        spec.mode = ModelMode::TwoHead;
        let est = predmarker::model::train(
            &train_set,
            &val_set,
            spec,
            &TrainConfig { seed, ..cfg.train.clone() },
        )
        .unwrap();
        let images: Vec<_> = test_set.iter().map(|s| s.image.clone()).collect();
        let tau = predmarker::model::estimate_cate(&est, &images).unwrap();
        let arms: Vec<u8> = test_set.iter().map(|s| s.treatment).collect();
        let outcomes: Vec<f64> = test_set.iter().map(|s| s.outcome).collect();
        let report = fit_interaction_ols(&tau, &arms, &outcomes).unwrap();
        let p = report.p[COEF_INTERACTION];
        if p > 0.05 {
            nonsig += 1;
        }
        println!("seed {seed}: p_interaction = {p:.4} {}", if p > 0.05 { "ok" } else { "SIGNIFICANT" });
    }
    println!("non-significant: {nonsig}/10 in {:?}", t0.elapsed());
    let _ = grid;
}
