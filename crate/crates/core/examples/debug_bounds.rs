use predmarker::dataset::{DatasetManifest, Split};
use predmarker::sim::{build_rct_dataset, OutcomeSimConfig};
use predmarker::stats::{fit_interaction_ols, predictive_strength};

fn main() {
    let dir = std::env::temp_dir().join("cmnist_probe_5000");
    let manifest = DatasetManifest::read_csv(&dir.join("manifest.csv")).unwrap();
    let cfg = OutcomeSimConfig::new(1.0, 1.0, 1);
    let records = build_rct_dataset(&manifest, &cfg).unwrap();
    let by_id: std::collections::HashMap<&str, _> =
        records.iter().map(|r| (r.sample_id.as_str(), r)).collect();

    let mut x_prog = vec![];
    let mut x_pred = vec![];
    let mut arms = vec![];
    let mut outcomes = vec![];
    for row in manifest.split_rows(Split::Test) {
        let r = by_id[row.sample_id.as_str()];
        x_prog.push(r.x_prog);
        x_pred.push(r.x_pred);
        arms.push(r.treatment);
        outcomes.push(r.outcome);
    }
    println!("n_test = {}", arms.len());
    let n = arms.len() as f64;
    let mp: f64 = x_prog.iter().sum::<f64>() / n;
    let mq: f64 = x_pred.iter().sum::<f64>() / n;
    let mut cov = 0.0; let mut vp = 0.0; let mut vq = 0.0;
    for i in 0..arms.len() {
        cov += (x_prog[i]-mp)*(x_pred[i]-mq);
        vp += (x_prog[i]-mp).powi(2);
        vq += (x_pred[i]-mq).powi(2);
    }
    println!("corr(x_prog, x_pred) on test = {:.4}", cov/(vp.sqrt()*vq.sqrt()));
    let treated = arms.iter().filter(|&&t| t==1).count();
    println!("treated = {treated}");

    for (name, cand) in [("x_prog (lower)", &x_prog), ("x_pred (upper)", &x_pred)] {
        let rep = fit_interaction_ols(cand, &arms, &outcomes).unwrap();
        let s = predictive_strength(&rep);
        println!("{name}: beta={:?}", rep.beta);
        println!("   t={:?}", rep.t);
        println!("   ratio={:.3} degenerate={}", s.ratio, s.degenerate);
    }
}
