//! Interaction-term OLS and the relative predictive strength metric.
//!
//! A biomarker candidate is regressed against outcomes with the design
//! `[1, T, c, c*T]`. The t-value of the interaction column measures how
//! predictive the candidate is, the t-value of the main-effect column how
//! prognostic; their absolute ratio is the headline metric. Ground-truth
//! biomarkers substituted for the candidate give experimental lower and
//! upper bounds for that ratio.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute RSS threshold (scaled by n) below which a fit counts as an
/// exact interpolation and t-values lose meaning.
const ZERO_RESIDUAL_TOL: f64 = 1e-12;

/// Degenerate-fit conditions. Both leave the report usable for bookkeeping
/// while signalling that its t-values must not enter aggregates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportFlags {
    pub rank_deficient: bool,
    pub zero_residual: bool,
}

impl ReportFlags {
    pub fn any(&self) -> bool {
        self.rank_deficient || self.zero_residual
    }
}

/// Fitted coefficients and test statistics for the design `[1, T, c, c*T]`.
///
/// Index order everywhere: 0 = intercept, 1 = treatment main effect,
/// 2 = candidate main effect, 3 = candidate-treatment interaction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionReport {
    #[serde(with = "float_array")]
    pub beta: [f64; 4],
    #[serde(with = "float_array")]
    pub se: [f64; 4],
    #[serde(with = "float_array")]
    pub t: [f64; 4],
    #[serde(with = "float_array")]
    pub p: [f64; 4],
    pub dof: usize,
    #[serde(with = "float_scalar")]
    pub rss: f64,
    pub flags: ReportFlags,
}

pub const COEF_INTERCEPT: usize = 0;
pub const COEF_TREATMENT: usize = 1;
pub const COEF_CANDIDATE: usize = 2;
pub const COEF_INTERACTION: usize = 3;

/// The t-ratio summary derived from a [`RegressionReport`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictiveStrength {
    /// t-value of the candidate-treatment interaction coefficient.
    #[serde(with = "float_scalar")]
    pub t_pred: f64,
    /// t-value of the candidate main-effect coefficient.
    #[serde(with = "float_scalar")]
    pub t_prog: f64,
    /// `|t_pred / t_prog|`; `inf` sentinel when undefined.
    #[serde(with = "float_scalar")]
    pub ratio: f64,
    pub degenerate: bool,
}

/// Fit ordinary least squares on `[1, T, candidate, candidate*T]`.
///
/// The candidate column is z-scored internally for conditioning and the
/// coefficients, standard errors and covariance are mapped back to the raw
/// candidate scale afterwards, so reported values match a direct fit on the
/// raw design. Rank deficiency (constant candidate, single-arm treatment)
/// yields a flagged report rather than a silent pseudo-inverse solution; an
/// interpolating fit yields `zero_residual` with `+inf` t sentinels.
pub fn fit_interaction_ols(
    candidate: &[f64],
    treatment: &[u8],
    outcome: &[f64],
) -> Result<RegressionReport> {
    let n = candidate.len();
    if treatment.len() != n || outcome.len() != n {
        return Err(Error::ShapeMismatch {
            context: "fit_interaction_ols".into(),
            expected: format!("{n} treatments / outcomes"),
            actual: format!("{} / {}", treatment.len(), outcome.len()),
        });
    }
    if n < 5 {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: format!("need n >= 5 for dof = n - 4 >= 1, got {n}"),
        });
    }
    for (name, values) in [("candidate", candidate), ("outcome", outcome)] {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: name.into(),
                value: *v,
            });
        }
    }
    for &t in treatment {
        if t > 1 {
            return Err(Error::InvalidParameter {
                name: "treatment",
                reason: format!("arm labels must be 0 or 1, got {t}"),
            });
        }
    }

    let dof = n - 4;
    let mean = candidate.iter().sum::<f64>() / n as f64;
    let var = candidate.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if sd <= 0.0 || !sd.is_finite() {
        // Constant candidate is collinear with the intercept.
        return Ok(flagged_report(
            dof,
            ReportFlags {
                rank_deficient: true,
                zero_residual: false,
            },
        ));
    }

    let mut x = Array2::<f64>::zeros((n, 4));
    for i in 0..n {
        let cz = (candidate[i] - mean) / sd;
        let t = treatment[i] as f64;
        x[[i, 0]] = 1.0;
        x[[i, 1]] = t;
        x[[i, 2]] = cz;
        x[[i, 3]] = cz * t;
    }
    let y = Array1::from_iter(outcome.iter().copied());

    let qr = match pivoted_qr_solve(&x, &y) {
        Some(qr) => qr,
        None => {
            return Ok(flagged_report(
                dof,
                ReportFlags {
                    rank_deficient: true,
                    zero_residual: false,
                },
            ))
        }
    };

    let fitted = x.dot(&qr.beta);
    let rss: f64 = outcome
        .iter()
        .zip(fitted.iter())
        .map(|(y, f)| (y - f).powi(2))
        .sum();

    // Map z-space estimates back to the raw candidate scale:
    // beta_raw = J beta_z, cov_raw = J cov_z J^T with J the chain-rule
    // Jacobian of the reparameterization cz = (c - mean)/sd.
    let r = mean / sd;
    let jac = [
        [1.0, 0.0, -r, 0.0],
        [0.0, 1.0, 0.0, -r],
        [0.0, 0.0, 1.0 / sd, 0.0],
        [0.0, 0.0, 0.0, 1.0 / sd],
    ];
    let mut beta = [0.0; 4];
    for (j, row) in jac.iter().enumerate() {
        beta[j] = row.iter().zip(qr.beta.iter()).map(|(a, b)| a * b).sum();
    }
    let sigma2 = rss / dof as f64;
    let mut cov = [[0.0; 4]; 4];
    for j in 0..4 {
        for k in 0..4 {
            let mut acc = 0.0;
            for a in 0..4 {
                for b in 0..4 {
                    acc += jac[j][a] * qr.xtx_inv[[a, b]] * jac[k][b];
                }
            }
            cov[j][k] = sigma2 * acc;
        }
    }

    let zero_residual = rss < ZERO_RESIDUAL_TOL * n as f64;
    let mut se = [0.0; 4];
    let mut t = [0.0; 4];
    let mut p = [0.0; 4];
    for j in 0..4 {
        se[j] = cov[j][j].max(0.0).sqrt();
        if zero_residual {
            t[j] = f64::INFINITY;
            p[j] = 0.0;
        } else {
            t[j] = beta[j] / se[j];
            p[j] = student_t_two_sided_p(t[j], dof);
        }
    }

    Ok(RegressionReport {
        beta,
        se,
        t,
        p,
        dof,
        rss,
        flags: ReportFlags {
            rank_deficient: false,
            zero_residual,
        },
    })
}

fn flagged_report(dof: usize, flags: ReportFlags) -> RegressionReport {
    RegressionReport {
        beta: [f64::NAN; 4],
        se: [f64::NAN; 4],
        t: [f64::NAN; 4],
        p: [f64::NAN; 4],
        dof,
        rss: f64::NAN,
        flags,
    }
}

/// Extract the t-ratio summary from a fitted report.
pub fn predictive_strength(report: &RegressionReport) -> PredictiveStrength {
    let t_pred = report.t[COEF_INTERACTION];
    let t_prog = report.t[COEF_CANDIDATE];
    let degenerate = report.flags.any() || t_prog == 0.0 || !t_prog.is_finite() || !t_pred.is_finite();
    let raw = (t_pred / t_prog).abs();
    let ratio = if raw.is_nan() { f64::INFINITY } else { raw };
    PredictiveStrength {
        t_pred,
        t_prog,
        ratio,
        degenerate,
    }
}

/// Experimental lower and upper bounds for the relative predictive
/// strength, obtained by substituting the purely prognostic and the purely
/// predictive ground-truth biomarker for the candidate.
pub fn compute_bounds(
    x_prog: &[f64],
    x_pred: &[f64],
    treatment: &[u8],
    outcome: &[f64],
) -> Result<(PredictiveStrength, PredictiveStrength)> {
    let lower = predictive_strength(&fit_interaction_ols(x_prog, treatment, outcome)?);
    let upper = predictive_strength(&fit_interaction_ols(x_pred, treatment, outcome)?);
    Ok((lower, upper))
}

struct QrSolution {
    beta: Array1<f64>,
    xtx_inv: Array2<f64>,
}

/// Householder QR with column pivoting on the n x 4 design. Returns `None`
/// when the numerical rank is below 4.
fn pivoted_qr_solve(x: &Array2<f64>, y: &Array1<f64>) -> Option<QrSolution> {
    let n = x.nrows();
    let p = x.ncols();
    let mut a = x.clone();
    let mut qty = y.clone();
    let mut perm: Vec<usize> = (0..p).collect();
    let mut col_norms: Vec<f64> = (0..p)
        .map(|j| (0..n).map(|i| a[[i, j]] * a[[i, j]]).sum())
        .collect();

    for k in 0..p {
        // Pivot: bring the column with the largest remaining norm to front.
        let (jmax, _) = col_norms
            .iter()
            .enumerate()
            .skip(k)
            .fold((k, -1.0), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
        if jmax != k {
            for i in 0..n {
                a.swap([i, k], [i, jmax]);
            }
            perm.swap(k, jmax);
            col_norms.swap(k, jmax);
        }

        let norm_x: f64 = (k..n).map(|i| a[[i, k]] * a[[i, k]]).sum::<f64>().sqrt();
        if norm_x > 0.0 {
            let alpha = if a[[k, k]] >= 0.0 { -norm_x } else { norm_x };
            let mut v: Vec<f64> = (k..n).map(|i| a[[i, k]]).collect();
            v[0] -= alpha;
            let vtv: f64 = v.iter().map(|vi| vi * vi).sum();
            if vtv > 0.0 {
                for j in k..p {
                    let dot: f64 = (k..n).map(|i| v[i - k] * a[[i, j]]).sum();
                    let scale = 2.0 * dot / vtv;
                    for i in k..n {
                        a[[i, j]] -= scale * v[i - k];
                    }
                }
                let dot: f64 = (k..n).map(|i| v[i - k] * qty[i]).sum();
                let scale = 2.0 * dot / vtv;
                for i in k..n {
                    qty[i] -= scale * v[i - k];
                }
            }
            a[[k, k]] = alpha;
        }
        for j in k + 1..p {
            col_norms[j] -= a[[k, j]] * a[[k, j]];
        }
    }

    // Numerical rank from the R diagonal.
    let r00 = a[[0, 0]].abs();
    let tol = (n.max(p) as f64) * f64::EPSILON * r00;
    if r00 == 0.0 || (0..p).any(|k| a[[k, k]].abs() <= tol) {
        return None;
    }

    // Back-substitution for the permuted coefficients.
    let mut beta_perm = vec![0.0; p];
    for k in (0..p).rev() {
        let mut acc = qty[k];
        for j in k + 1..p {
            acc -= a[[k, j]] * beta_perm[j];
        }
        beta_perm[k] = acc / a[[k, k]];
    }

    // (X^T X)^-1 = P R^-1 R^-T P^T, via the inverse of the 4x4 R.
    let mut rinv = Array2::<f64>::zeros((p, p));
    for col in 0..p {
        let mut e = vec![0.0; p];
        e[col] = 1.0;
        for k in (0..p).rev() {
            let mut acc = e[k];
            for j in k + 1..p {
                acc -= a[[k, j]] * rinv[[j, col]];
            }
            rinv[[k, col]] = acc / a[[k, k]];
        }
    }
    let g = rinv.dot(&rinv.t());

    let mut beta = Array1::<f64>::zeros(p);
    let mut xtx_inv = Array2::<f64>::zeros((p, p));
    for k in 0..p {
        beta[perm[k]] = beta_perm[k];
        for l in 0..p {
            xtx_inv[[perm[k], perm[l]]] = g[[k, l]];
        }
    }
    Some(QrSolution { beta, xtx_inv })
}

/// Two-sided p-value for a Student t statistic with `dof` degrees of
/// freedom, via the regularized incomplete beta function:
/// `p = I_x(dof/2, 1/2)` with `x = dof / (dof + t^2)`.
pub fn student_t_two_sided_p(t: f64, dof: usize) -> f64 {
    if !t.is_finite() {
        return if t.is_nan() { f64::NAN } else { 0.0 };
    }
    let v = dof as f64;
    let x = v / (v + t * t);
    regularized_incomplete_beta(v / 2.0, 0.5, x)
}

/// Regularized incomplete beta `I_x(a, b)` by Lentz's continued fraction.
/// Accurate to ~1e-14 for the (a, b) ranges used here.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0, "shape parameters must be positive");
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 400;
    const EPS: f64 = 1e-15;
    const FPMIN: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Lanczos approximation of ln Gamma, g = 7, 9 coefficients.
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    debug_assert!(x > 0.0);
    if x < 0.5 {
        // Reflection, only reachable for b = 0.5 arguments.
        return std::f64::consts::PI.ln()
            - (std::f64::consts::PI * x).sin().ln()
            - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEFFS[0];
    for (i, c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Serde helpers mapping non-finite floats to JSON strings so reports stay
/// valid JSON and round-trip losslessly.
pub mod float_scalar {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Tag(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Tag(tag) => match tag.as_str() {
                "nan" => Ok(f64::NAN),
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!(
                    "unrecognized float tag `{other}`"
                ))),
            },
        }
    }
}

/// Same convention as [`float_scalar`] for fixed-size arrays.
pub mod float_array {
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Tag(String),
    }

    pub fn serialize<S: Serializer>(v: &[f64; 4], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(4))?;
        for x in v {
            if x.is_finite() {
                seq.serialize_element(x)?;
            } else if x.is_nan() {
                seq.serialize_element("nan")?;
            } else if *x > 0.0 {
                seq.serialize_element("inf")?;
            } else {
                seq.serialize_element("-inf")?;
            }
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; 4], D::Error> {
        let raw: Vec<Repr> = Vec::deserialize(d)?;
        if raw.len() != 4 {
            return Err(serde::de::Error::custom("expected 4 coefficients"));
        }
        let mut out = [0.0; 4];
        for (i, r) in raw.into_iter().enumerate() {
            out[i] = match r {
                Repr::Num(v) => v,
                Repr::Tag(tag) => match tag.as_str() {
                    "nan" => f64::NAN,
                    "inf" => f64::INFINITY,
                    "-inf" => f64::NEG_INFINITY,
                    other => {
                        return Err(serde::de::Error::custom(format!(
                            "unrecognized float tag `{other}`"
                        )))
                    }
                },
            };
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // Frozen from an independent normal-equations computation (numpy/scipy)
    // on the raw design [1, T, c, c*T].
    const HAND_CANDIDATE: [f64; 8] = [0.5, 1.2, -0.3, 2.0, 0.8, 1.5, -1.0, 0.1];
    const HAND_TREATMENT: [u8; 8] = [0, 1, 0, 1, 1, 0, 1, 0];
    const HAND_OUTCOME: [f64; 8] = [0.4, 2.1, -0.2, 3.5, 1.6, 1.1, -0.9, 0.3];
    const HAND_BETA: [f64; 4] = [
        0.09329608938547487,
        0.39862937645303426,
        0.6815642458100561,
        0.7625351330719315,
    ];
    const HAND_SE: [f64; 4] = [
        0.07586465645253551,
        0.10753459633765879,
        0.09409852527791723,
        0.11016363218156322,
    ];
    const HAND_T: [f64; 4] = [
        1.229770142620303,
        3.7069872397282957,
        7.243091682861938,
        6.9218408831616935,
    ];
    const HAND_P: [f64; 4] = [
        0.2861688257350174,
        0.02070848551856535,
        0.001928360922006,
        0.00228627396926008,
    ];

    #[test]
    fn hand_dataset_matches_frozen_oracle() {
        let report =
            fit_interaction_ols(&HAND_CANDIDATE, &HAND_TREATMENT, &HAND_OUTCOME).unwrap();
        for j in 0..4 {
            assert_relative_eq!(report.beta[j], HAND_BETA[j], max_relative = 1e-8);
            assert_relative_eq!(report.se[j], HAND_SE[j], max_relative = 1e-8);
            assert_relative_eq!(report.t[j], HAND_T[j], max_relative = 1e-8);
            assert_relative_eq!(report.p[j], HAND_P[j], max_relative = 1e-8);
        }
        assert_relative_eq!(report.rss, 0.0633984524098684, max_relative = 1e-8);
        assert_eq!(report.dof, 4);
        assert!(!report.flags.any());
    }

    #[test]
    fn constant_candidate_is_rank_deficient() {
        let candidate = [2.5; 8];
        let report = fit_interaction_ols(&candidate, &HAND_TREATMENT, &HAND_OUTCOME).unwrap();
        assert!(report.flags.rank_deficient);
        assert!(report.t[COEF_INTERACTION].is_nan());
        assert!(predictive_strength(&report).degenerate);
    }

    #[test]
    fn single_arm_is_rank_deficient() {
        let treatment = [0u8; 8];
        let report = fit_interaction_ols(&HAND_CANDIDATE, &treatment, &HAND_OUTCOME).unwrap();
        assert!(report.flags.rank_deficient);
    }

    #[test]
    fn exact_interaction_fit_sets_zero_residual() {
        // Y = candidate * T exactly, both arms present.
        let outcome: Vec<f64> = HAND_CANDIDATE
            .iter()
            .zip(HAND_TREATMENT.iter())
            .map(|(c, t)| c * *t as f64)
            .collect();
        let report = fit_interaction_ols(&HAND_CANDIDATE, &HAND_TREATMENT, &outcome).unwrap();
        assert!(report.flags.zero_residual);
        assert_relative_eq!(report.beta[COEF_INTERACTION], 1.0, max_relative = 1e-6);
        assert!(report.t.iter().all(|t| *t == f64::INFINITY));
    }

    #[test]
    fn strength_ratio_definition() {
        let mut report =
            fit_interaction_ols(&HAND_CANDIDATE, &HAND_TREATMENT, &HAND_OUTCOME).unwrap();
        report.t[COEF_INTERACTION] = 4.0;
        report.t[COEF_CANDIDATE] = 2.0;
        let s = predictive_strength(&report);
        assert_eq!(s.ratio, 2.0);
        assert!(!s.degenerate);

        report.t[COEF_INTERACTION] = -3.0;
        report.t[COEF_CANDIDATE] = 1.5;
        assert_eq!(predictive_strength(&report).ratio, 2.0);

        report.t[COEF_CANDIDATE] = 0.0;
        let s = predictive_strength(&report);
        assert!(s.degenerate);
        assert_eq!(s.ratio, f64::INFINITY);
    }

    #[test]
    fn too_few_samples_rejected() {
        let err = fit_interaction_ols(&[1.0; 4], &[0, 1, 0, 1], &[0.0; 4]).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { name: "n", .. }));
    }

    #[test]
    fn non_finite_rejected() {
        let mut candidate = HAND_CANDIDATE;
        candidate[3] = f64::NAN;
        let err = fit_interaction_ols(&candidate, &HAND_TREATMENT, &HAND_OUTCOME).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn incomplete_beta_matches_reference() {
        // Reference values from scipy.special.betainc.
        let cases = [
            (0.5, 0.5, 0.3, 0.36901011956554536),
            (2.0, 0.5, 0.7, 0.2605745473680253),
            (5.0, 0.5, 0.2, 8.630216153154252e-5),
            (1.5, 0.5, 0.9, 0.6041813035905921),
            (10.0, 0.5, 0.99, 0.6579281751567845),
        ];
        for (a, b, x, want) in cases {
            assert_relative_eq!(
                regularized_incomplete_beta(a, b, x),
                want,
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn student_t_p_matches_reference() {
        // Reference values from scipy.stats.t.sf.
        let cases = [
            (2.0, 4, 0.1161165235168155),
            (0.5, 10, 0.6278936057429729),
            (3.3, 1, 0.18731554186375862),
            (0.001, 7, 0.9992300172449988),
        ];
        for (t, dof, want) in cases {
            assert_relative_eq!(student_t_two_sided_p(t, dof), want, max_relative = 1e-10);
            assert_relative_eq!(student_t_two_sided_p(-t, dof), want, max_relative = 1e-10);
        }
        assert_eq!(student_t_two_sided_p(f64::INFINITY, 5), 0.0);
    }

    #[test]
    fn report_json_round_trips_non_finite() {
        let report = RegressionReport {
            beta: [1.0, f64::NAN, f64::INFINITY, -2.0],
            se: [0.0; 4],
            t: [f64::INFINITY; 4],
            p: [0.0; 4],
            dof: 10,
            rss: f64::NAN,
            flags: ReportFlags {
                rank_deficient: false,
                zero_residual: true,
            },
        };
        let json = serde_json::to_string(&report).unwrap();
        let back: RegressionReport = serde_json::from_str(&json).unwrap();
        assert!(back.beta[1].is_nan());
        assert_eq!(back.beta[2], f64::INFINITY);
        assert_eq!(back.t, [f64::INFINITY; 4]);
        assert!(back.rss.is_nan());
    }
}
