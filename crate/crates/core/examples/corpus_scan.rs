use predmarker::dataset::Split;
use predmarker::digits::{generate_colored_digits, synthesize_digits, ColoredDigitSpec};

fn main() {
    let spec = ColoredDigitSpec::default();
    for seed in [7u64, 17, 23, 42, 99, 123, 2024] {
        let digits = synthesize_digits(5000, spec.image_size, seed).unwrap();
        let samples = generate_colored_digits(&digits, &spec, seed).unwrap();
        let rows: Vec<_> = samples
            .iter()
            .map(|s| predmarker::dataset::ManifestRow {
                sample_id: s.sample_id.clone(),
                image_path: String::new(),
                x_prog: s.x_prog,
                x_pred: s.x_pred,
                split: Split::Train,
            })
            .collect();
        let manifest = predmarker::dataset::DatasetManifest::new(rows).unwrap();
        let manifest =
            predmarker::dataset::split_dataset(&manifest, &[0.6, 0.1, 0.3], seed).unwrap();
        for (label, split) in [("full", None), ("test", Some(Split::Test))] {
            let rows: Vec<_> = match split {
                None => manifest.rows.iter().collect(),
                Some(s) => manifest.split_rows(s).collect(),
            };
            let n = rows.len() as f64;
            let mp: f64 = rows.iter().map(|r| r.x_prog).sum::<f64>() / n;
            let mq: f64 = rows.iter().map(|r| r.x_pred).sum::<f64>() / n;
            let mut cov = 0.0;
            let mut vp = 0.0;
            let mut vq = 0.0;
            for r in &rows {
                cov += (r.x_prog - mp) * (r.x_pred - mq);
                vp += (r.x_prog - mp).powi(2);
                vq += (r.x_pred - mq).powi(2);
            }
            let corr = cov / (vp.sqrt() * vq.sqrt());
            print!(
                "seed {seed} {label}: n={n} r={corr:+.4} z={:+.2}  ",
                corr * n.sqrt()
            );
        }
        println!();
    }
}
