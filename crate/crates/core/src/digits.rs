//! Synthetic colored-digits corpus.
//!
//! Digits are drawn procedurally from stroke templates (no external digit
//! corpus is needed at desk scale), then colored green or red by a
//! per-sample Bernoulli draw. The two binary imaging biomarkers are the
//! color (green or not) and whether the digit class contains a circle or
//! loop, i.e. {0, 6, 8, 9} as opposed to {1, 2, 3, 4, 5, 7}.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, ManifestRow, Split};
use crate::error::{Error, Result};
use crate::imageio;
use crate::rng;

/// Which binary image feature plays which role in the outcome simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureRoles {
    /// Feature set (a): color is prognostic, circle is predictive.
    #[serde(rename = "a")]
    ColorPrognostic,
    /// Feature set (b): circle is prognostic, color is predictive.
    #[serde(rename = "b")]
    CirclePrognostic,
}

impl FeatureRoles {
    pub fn label(&self) -> &'static str {
        match self {
            FeatureRoles::ColorPrognostic => "a",
            FeatureRoles::CirclePrognostic => "b",
        }
    }

    /// Map `(x_color, x_circle)` to `(x_prog, x_pred)`.
    pub fn assign(&self, x_color: f64, x_circle: f64) -> (f64, f64) {
        match self {
            FeatureRoles::ColorPrognostic => (x_color, x_circle),
            FeatureRoles::CirclePrognostic => (x_circle, x_color),
        }
    }
}

impl std::str::FromStr for FeatureRoles {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" => Ok(FeatureRoles::ColorPrognostic),
            "b" => Ok(FeatureRoles::CirclePrognostic),
            other => Err(Error::Config(format!(
                "unknown feature set `{other}` (expected `a` or `b`)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColoredDigitSpec {
    /// Probability a digit is rendered green.
    pub color_probability: f64,
    /// Digit classes counted as containing a circle or loop.
    pub circle_digits: BTreeSet<u8>,
    pub feature_roles: FeatureRoles,
    /// Square image side in pixels.
    pub image_size: usize,
}

impl Default for ColoredDigitSpec {
    fn default() -> Self {
        Self {
            color_probability: 0.5,
            circle_digits: [0u8, 6, 8, 9].into_iter().collect(),
            feature_roles: FeatureRoles::ColorPrognostic,
            image_size: 28,
        }
    }
}

impl ColoredDigitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.color_probability) {
            return Err(Error::InvalidParameter {
                name: "color_probability",
                reason: format!("must lie in [0, 1], got {}", self.color_probability),
            });
        }
        if self.image_size < 12 {
            return Err(Error::InvalidParameter {
                name: "image_size",
                reason: format!("must be at least 12 px, got {}", self.image_size),
            });
        }
        Ok(())
    }
}

/// A grayscale source digit with its class label.
#[derive(Debug, Clone)]
pub struct DigitImage {
    /// (height, width) intensities in [0, 1].
    pub pixels: Array2<f64>,
    pub class: u8,
}

/// One generated sample before it is written to disk.
#[derive(Debug, Clone)]
pub struct ColoredDigitSample {
    pub sample_id: String,
    /// (3, size, size) RGB in [0, 1].
    pub image: Array3<f64>,
    pub class: u8,
    pub x_color: f64,
    pub x_circle: f64,
    pub x_prog: f64,
    pub x_pred: f64,
}

// --- procedural digit rendering ----------------------------------------

/// A stroke in the unit square, y pointing down.
enum Stroke {
    Segment([f64; 2], [f64; 2]),
    /// Elliptical arc: center, radii, angle range in radians
    /// (0 = right, pi/2 = down). The sweep may run in either direction.
    Arc([f64; 2], [f64; 2], f64, f64),
}

fn template(class: u8) -> Vec<Stroke> {
    use Stroke::*;
    let deg = |d: f64| d * PI / 180.0;
    match class {
        0 => vec![Arc([0.5, 0.5], [0.21, 0.32], 0.0, deg(360.0))],
        1 => vec![
            Segment([0.5, 0.15], [0.5, 0.85]),
            Segment([0.36, 0.3], [0.5, 0.15]),
        ],
        2 => vec![
            Arc([0.5, 0.34], [0.2, 0.19], deg(180.0), deg(380.0)),
            Segment([0.68, 0.41], [0.3, 0.85]),
            Segment([0.3, 0.85], [0.72, 0.85]),
        ],
        3 => vec![
            Arc([0.47, 0.33], [0.18, 0.17], deg(215.0), deg(450.0)),
            Arc([0.47, 0.66], [0.19, 0.19], deg(270.0), deg(505.0)),
        ],
        4 => vec![
            Segment([0.62, 0.15], [0.28, 0.62]),
            Segment([0.28, 0.62], [0.78, 0.62]),
            Segment([0.62, 0.15], [0.62, 0.85]),
        ],
        5 => vec![
            Segment([0.68, 0.15], [0.34, 0.15]),
            Segment([0.34, 0.15], [0.32, 0.45]),
            Segment([0.32, 0.45], [0.39, 0.43]),
            Arc([0.46, 0.62], [0.2, 0.2], deg(250.0), deg(500.0)),
        ],
        6 => vec![
            Arc([0.52, 0.52], [0.24, 0.37], deg(270.0), deg(180.0)),
            Arc([0.5, 0.66], [0.175, 0.185], 0.0, deg(360.0)),
        ],
        7 => vec![
            Segment([0.28, 0.17], [0.72, 0.17]),
            Segment([0.72, 0.17], [0.42, 0.85]),
        ],
        8 => vec![
            Arc([0.5, 0.33], [0.16, 0.175], 0.0, deg(360.0)),
            Arc([0.5, 0.67], [0.19, 0.185], 0.0, deg(360.0)),
        ],
        9 => vec![
            Arc([0.48, 0.48], [0.24, 0.37], deg(90.0), deg(0.0)),
            Arc([0.5, 0.335], [0.175, 0.185], 0.0, deg(360.0)),
        ],
        _ => unreachable!("validated digit class"),
    }
}

/// Sample each stroke into a polyline in unit coordinates.
fn stroke_points(stroke: &Stroke) -> Vec<[f64; 2]> {
    match stroke {
        Stroke::Segment(a, b) => vec![*a, *b],
        Stroke::Arc(center, radii, a0, a1) => {
            let steps = 28;
            (0..=steps)
                .map(|i| {
                    let theta = a0 + (a1 - a0) * i as f64 / steps as f64;
                    [
                        center[0] + radii[0] * theta.cos(),
                        center[1] + radii[1] * theta.sin(),
                    ]
                })
                .collect()
        }
    }
}

fn dist_point_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let dx = p[0] - (a[0] + t * ab[0]);
    let dy = p[1] - (a[1] + t * ab[1]);
    (dx * dx + dy * dy).sqrt()
}

/// Render one digit class to a grayscale image with small random jitter in
/// placement, scale, rotation and stroke width.
pub fn render_digit(
    class: u8,
    image_size: usize,
    jitter_rng: &mut impl Rng,
) -> Result<Array2<f64>> {
    if class > 9 {
        return Err(Error::UnknownDigitClass(class));
    }
    let side = image_size as f64;
    let scale = side * (0.85 + 0.2 * jitter_rng.gen::<f64>());
    let angle = (jitter_rng.gen::<f64>() - 0.5) * 0.24;
    let shift_x = (jitter_rng.gen::<f64>() - 0.5) * 0.12 * side;
    let shift_y = (jitter_rng.gen::<f64>() - 0.5) * 0.12 * side;
    let stroke_w = side * (0.055 + 0.025 * jitter_rng.gen::<f64>());
    let intensity = 0.82 + 0.18 * jitter_rng.gen::<f64>();
    let (sin, cos) = angle.sin_cos();

    // Unit-square template points to pixel coordinates.
    let to_px = |p: [f64; 2]| -> [f64; 2] {
        let cx = p[0] - 0.5;
        let cy = p[1] - 0.5;
        [
            side / 2.0 + scale * (cos * cx - sin * cy) + shift_x,
            side / 2.0 + scale * (sin * cx + cos * cy) + shift_y,
        ]
    };

    let mut polylines: Vec<Vec<[f64; 2]>> = Vec::new();
    for stroke in template(class) {
        polylines.push(stroke_points(&stroke).into_iter().map(to_px).collect());
    }

    let mut out = Array2::<f64>::zeros((image_size, image_size));
    for y in 0..image_size {
        for x in 0..image_size {
            let p = [x as f64 + 0.5, y as f64 + 0.5];
            let mut d = f64::INFINITY;
            for line in &polylines {
                for w in line.windows(2) {
                    d = d.min(dist_point_segment(p, w[0], w[1]));
                }
            }
            // 1-pixel antialiasing ramp around the stroke boundary.
            let v = (stroke_w / 2.0 + 0.5 - d).clamp(0.0, 1.0);
            out[[y, x]] = v * intensity;
        }
    }
    Ok(out)
}

/// Synthesize `n` jittered digits with classes drawn uniformly, each from
/// its own per-index stream.
pub fn synthesize_digits(n: usize, image_size: usize, seed: u64) -> Result<Vec<DigitImage>> {
    if n == 0 {
        return Err(Error::EmptyDataset("synthesize_digits with n = 0".into()));
    }
    (0..n)
        .map(|i| {
            let mut stream = rng::index_stream(seed, "digit", i);
            let class = stream.gen_range(0..10u8);
            let pixels = render_digit(class, image_size, &mut stream)?;
            Ok(DigitImage { pixels, class })
        })
        .collect()
}

/// Color each source digit by a Bernoulli(`color_probability`) draw and
/// derive the two binary biomarkers. Sample ids are positional.
pub fn generate_colored_digits(
    source_digits: &[DigitImage],
    spec: &ColoredDigitSpec,
    seed: u64,
) -> Result<Vec<ColoredDigitSample>> {
    spec.validate()?;
    if source_digits.is_empty() {
        return Err(Error::EmptyDataset("no source digits".into()));
    }
    source_digits
        .iter()
        .enumerate()
        .map(|(i, digit)| {
            if digit.class > 9 {
                return Err(Error::UnknownDigitClass(digit.class));
            }
            let sample_id = format!("d{i:05}");
            let green = rng::record_stream(seed, "color", &sample_id).gen::<f64>()
                < spec.color_probability;
            let (h, w) = digit.pixels.dim();
            let mut image = Array3::<f64>::zeros((3, h, w));
            // Saturated digit-on-black: green digits use channel 1, the
            // fixed alternative color is red (channel 0).
            let channel = if green { 1 } else { 0 };
            for y in 0..h {
                for x in 0..w {
                    image[[channel, y, x]] = digit.pixels[[y, x]];
                }
            }
            let x_color = f64::from(green);
            let x_circle = f64::from(spec.circle_digits.contains(&digit.class));
            let (x_prog, x_pred) = spec.feature_roles.assign(x_color, x_circle);
            Ok(ColoredDigitSample {
                sample_id,
                image,
                class: digit.class,
                x_color,
                x_circle,
                x_prog,
                x_pred,
            })
        })
        .collect()
}

/// Generate, split and persist a colored-digits corpus:
/// `<root>/<split>/<sample_id>.png` plus `<root>/manifest.csv`.
pub fn build_colored_digits_corpus(
    n: usize,
    spec: &ColoredDigitSpec,
    fractions: &[f64],
    seed: u64,
    root: &Path,
) -> Result<DatasetManifest> {
    let digits = synthesize_digits(n, spec.image_size, seed)?;
    let samples = generate_colored_digits(&digits, spec, seed)?;

    let rows: Vec<ManifestRow> = samples
        .iter()
        .map(|s| ManifestRow {
            sample_id: s.sample_id.clone(),
            image_path: String::new(),
            x_prog: s.x_prog,
            x_pred: s.x_pred,
            split: Split::Train,
        })
        .collect();
    let mut manifest =
        crate::dataset::split_dataset(&DatasetManifest::new(rows)?, fractions, seed)?;

    for split in [Split::Train, Split::Val, Split::Test] {
        let dir = root.join(split.as_str());
        if manifest.rows.iter().any(|r| r.split == split) {
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        }
    }
    for (row, sample) in manifest.rows.iter_mut().zip(samples.iter()) {
        let path: PathBuf = root
            .join(row.split.as_str())
            .join(format!("{}.png", row.sample_id));
        imageio::save_rgb_png(&sample.image, &path)?;
        row.image_path = path.display().to_string();
    }
    manifest.write_csv(&root.join("manifest.csv"))?;
    Ok(manifest)
}
