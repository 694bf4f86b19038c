// Criterion-5 probe: expected-gradients completeness on a trained model.
use predmarker::attribution::{expected_gradients, target_value, AttributionTarget};
use predmarker::dataset::{DatasetManifest, Split};
use predmarker::experiment::GridData;
use predmarker::model::{train, ModelMode, ModelSpec, TrainConfig, TrainSample};
use predmarker::sim::{build_rct_dataset, OutcomeSimConfig};

fn main() {
    let dir = std::env::temp_dir().join("cmnist_probe42_5000");
    let manifest = DatasetManifest::read_csv(&dir.join("manifest.csv")).unwrap();
    let data = GridData::load(manifest).unwrap();
    let sim = OutcomeSimConfig::new(1.0, 1.0, 1);
    let records = build_rct_dataset(&data.manifest, &sim).unwrap();
    let by_id: std::collections::HashMap<&str, _> =
        records.iter().map(|r| (r.sample_id.as_str(), r)).collect();
    let mk = |split: Split| {
        data.manifest
            .split_rows(split)
            .map(|row| {
                let r = by_id[row.sample_id.as_str()];
                TrainSample {
                    image: data.image(&row.sample_id).clone(),
                    treatment: r.treatment,
                    outcome: r.outcome,
                }
            })
            .collect::<Vec<_>>()
    };
    let train_set = mk(Split::Train);
    let val_set = mk(Split::Val);
    let t0 = std::time::Instant::now();
    let est = train(
        &train_set,
        &val_set,
        ModelSpec::small_cnn(ModelMode::TwoHead, (3, 28, 28)),
        &TrainConfig {
            epochs: 18,
            batch_size: 32,
            learning_rate: 1.5e-3,
            seed: 1,
            patience: Some(4),
            ..Default::default()
        },
    )
    .unwrap();
    eprintln!("train: {:?}", t0.elapsed());

    // Baselines: first 64 training images in manifest order.
    let baselines: Vec<_> = train_set.iter().take(50).map(|s| s.image.clone()).collect();
    let mean_baseline: f64 = baselines
        .iter()
        .map(|b| target_value(&est.model, b, AttributionTarget::Cate).unwrap())
        .sum::<f64>()
        / baselines.len() as f64;

    let test_rows: Vec<_> = data.manifest.split_rows(Split::Test).take(10).collect();
    let t0 = std::time::Instant::now();
    let mut worst: f64 = 0.0;
    for (i, row) in test_rows.iter().enumerate() {
        let image = data.image(&row.sample_id);
        let f_x = target_value(&est.model, image, AttributionTarget::Cate).unwrap();
        let diff = f_x - mean_baseline;
        let eg_seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
        let map = expected_gradients(&est.model, image, &baselines, AttributionTarget::Cate, 200, eg_seed)
            .unwrap();
        let total: f64 = map.values.sum();
        let rel = (total - diff).abs() / diff.abs();
        worst = worst.max(rel);
        println!(
            "img {i}: f(x)={f_x:+.4} diff={diff:+.4} sum_attr={total:+.4} rel_err={:.2}%",
            rel * 100.0
        );
    }
    println!("worst relative error: {:.2}%  ({:?} for 10 x k=200)", worst * 100.0, t0.elapsed());
}
