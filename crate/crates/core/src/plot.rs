//! Log-log boxplot figure comparing the two-headed estimator against the
//! single-head baseline across b_pred/b_prog bins.

use std::path::Path;
use std::sync::OnceLock;

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::experiment::{BinStats, BinnedSummary, RunRecord, RunStatus};
use crate::model::ModelMode;

const FONT_PATH: &str = "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf";

/// Register a text font once; without one the figure is drawn unlabeled.
fn fonts_available() -> bool {
    static AVAILABLE: OnceLock<bool> = OnceLock::new();
    *AVAILABLE.get_or_init(|| {
        match std::fs::read(FONT_PATH) {
            Ok(bytes) => {
                let leaked: &'static [u8] = Box::leak(bytes.into_boxed_slice());
                plotters::style::register_font("sans-serif", FontStyle::Normal, leaked).is_ok()
            }
            Err(_) => false,
        }
    })
}

fn plot_err<E: std::fmt::Debug>(e: E) -> Error {
    Error::Plot(format!("{e:?}"))
}

/// Clamp a statistic into a positive range so it is drawable on log axes.
fn clamp_pos(v: f64, lo: f64, hi: f64) -> f64 {
    if !v.is_finite() {
        return hi;
    }
    v.clamp(lo, hi)
}

fn median_of(mut values: Vec<f64>) -> Option<f64> {
    values.retain(|v| v.is_finite());
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Some(values[values.len() / 2])
}

/// Render the comparison figure: one box per (mode, bin) at the bin's
/// geometric center, horizontal bars spanning the bin width, and
/// horizontal reference lines at the median experimental upper and lower
/// bounds.
pub fn render_ratio_boxplot(
    summaries: &[BinnedSummary],
    records: &[RunRecord],
    path: &Path,
) -> Result<()> {
    // Gather drawable bins and the data range.
    struct DrawBin<'a> {
        mode: ModelMode,
        stats: &'a BinStats,
        center: f64,
    }
    let mut draw_bins = Vec::new();
    let mut y_values = Vec::new();
    let mut x_values = Vec::new();
    for summary in summaries {
        for stats in summary.bins.iter().filter(|b| b.count > 0) {
            let center = if stats.lo > 0.0 {
                (stats.lo * stats.hi).sqrt()
            } else {
                stats.hi / 3.0
            };
            draw_bins.push(DrawBin {
                mode: summary.mode,
                stats,
                center,
            });
            x_values.push(center);
            if stats.hi.is_finite() && stats.hi > 0.0 {
                x_values.push(stats.hi);
            }
            for v in [stats.median, stats.q1, stats.q3, stats.min, stats.max] {
                if v.is_finite() && v > 0.0 {
                    y_values.push(v);
                }
            }
        }
    }

    let bounds_upper = median_of(
        records
            .iter()
            .filter(|r| r.status == RunStatus::Done)
            .map(|r| r.bound_upper)
            .collect(),
    );
    let bounds_lower = median_of(
        records
            .iter()
            .filter(|r| r.status == RunStatus::Done)
            .map(|r| r.bound_lower)
            .collect(),
    );
    for b in [bounds_upper, bounds_lower].into_iter().flatten() {
        if b > 0.0 && b.is_finite() {
            y_values.push(b);
        }
    }

    let (x_lo, x_hi) = range_of(&x_values, 1e-2, 1e1);
    let (y_lo, y_hi) = range_of(&y_values, 1e-2, 1e2);

    let root = BitMapBackend::new(path, (960, 640)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let with_text = fonts_available();

    let mut builder = ChartBuilder::on(&root);
    builder.margin(24);
    if with_text {
        builder
            .caption(
                "relative predictive strength vs. simulated effect ratio",
                ("sans-serif", 22),
            )
            .x_label_area_size(48)
            .y_label_area_size(64);
    }
    let mut chart = builder
        .build_cartesian_2d((x_lo..x_hi).log_scale(), (y_lo..y_hi).log_scale())
        .map_err(plot_err)?;

    if with_text {
        chart
            .configure_mesh()
            .x_desc("b_pred / b_prog")
            .y_desc("|t_pred / t_prog|")
            .max_light_lines(1)
            .draw()
            .map_err(plot_err)?;
    } else {
        chart
            .configure_mesh()
            .disable_x_axis()
            .disable_y_axis()
            .max_light_lines(1)
            .draw()
            .map_err(plot_err)?;
    }

    // Reference lines for the experimental bounds.
    if let Some(upper) = bounds_upper {
        let y = clamp_pos(upper, y_lo, y_hi);
        chart
            .draw_series(std::iter::once(PathElement::new(
                vec![(x_lo, y), (x_hi, y)],
                GREEN.stroke_width(2),
            )))
            .map_err(plot_err)?
            .label("upper bound (x_pred)")
            .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], GREEN.stroke_width(2)));
    }
    if let Some(lower) = bounds_lower {
        let y = clamp_pos(lower, y_lo, y_hi);
        chart
            .draw_series(std::iter::once(PathElement::new(
                vec![(x_lo, y), (x_hi, y)],
                MAGENTA.stroke_width(2),
            )))
            .map_err(plot_err)?
            .label("lower bound (x_prog)")
            .legend(|(x, y)| {
                PathElement::new(vec![(x, y), (x + 16, y)], MAGENTA.stroke_width(2))
            });
    }

    // Boxes: the two modes are offset multiplicatively around the center.
    let mode_color = |mode: ModelMode| match mode {
        ModelMode::TwoHead => RGBColor(204, 37, 41),
        ModelMode::SingleHead => RGBColor(57, 106, 177),
    };
    let mut rectangles: Vec<Rectangle<(f64, f64)>> = Vec::new();
    let mut paths: Vec<PathElement<(f64, f64)>> = Vec::new();
    let mut seen_modes = Vec::new();
    for bin in &draw_bins {
        let color = mode_color(bin.mode);
        let (f_lo, f_hi) = match bin.mode {
            ModelMode::TwoHead => (0.82, 0.98),
            ModelMode::SingleHead => (1.02, 1.22),
        };
        let x0 = clamp_pos(bin.center * f_lo, x_lo, x_hi);
        let x1 = clamp_pos(bin.center * f_hi, x_lo, x_hi);
        let xm = clamp_pos((x0 * x1).sqrt(), x_lo, x_hi);
        let q1 = clamp_pos(bin.stats.q1, y_lo, y_hi);
        let q3 = clamp_pos(bin.stats.q3, y_lo, y_hi);
        let med = clamp_pos(bin.stats.median, y_lo, y_hi);
        let min = clamp_pos(bin.stats.min, y_lo, y_hi);
        let max = clamp_pos(bin.stats.max, y_lo, y_hi);

        rectangles.push(Rectangle::new([(x0, q1), (x1, q3)], color.mix(0.25).filled()));
        rectangles.push(Rectangle::new([(x0, q1), (x1, q3)], color.stroke_width(1)));
        paths.push(PathElement::new(
            vec![(x0, med), (x1, med)],
            color.stroke_width(2),
        ));
        paths.push(PathElement::new(
            vec![(xm, min), (xm, q1)],
            color.stroke_width(1),
        ));
        paths.push(PathElement::new(
            vec![(xm, q3), (xm, max)],
            color.stroke_width(1),
        ));
        // Horizontal bar spanning the bin width at the median.
        let bin_lo = clamp_pos(bin.stats.lo.max(x_lo), x_lo, x_hi);
        let bin_hi = clamp_pos(bin.stats.hi, x_lo, x_hi);
        paths.push(PathElement::new(
            vec![(bin_lo, med), (bin_hi, med)],
            color.mix(0.5).stroke_width(1),
        ));
        if !seen_modes.contains(&bin.mode) {
            seen_modes.push(bin.mode);
        }
    }
    chart.draw_series(rectangles).map_err(plot_err)?;
    chart.draw_series(paths).map_err(plot_err)?;

    // One empty series per mode to carry the legend entry.
    for mode in seen_modes {
        let color = mode_color(mode);
        let label = match mode {
            ModelMode::TwoHead => "two-headed estimator",
            ModelMode::SingleHead => "single-head baseline",
        };
        chart
            .draw_series(std::iter::empty::<Rectangle<(f64, f64)>>())
            .map_err(plot_err)?
            .label(label)
            .legend(move |(x, y)| {
                Rectangle::new([(x, y - 5), (x + 16, y + 5)], color.mix(0.6).filled())
            });
    }

    if with_text {
        chart
            .configure_series_labels()
            .border_style(BLACK)
            .background_style(WHITE.mix(0.85))
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

fn range_of(values: &[f64], fallback_lo: f64, fallback_hi: f64) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        if v.is_finite() && v > 0.0 {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (fallback_lo, fallback_hi);
    }
    (lo / 2.0, hi * 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn figure_renders_for_minimal_data() {
        let stats = BinStats {
            lo: 0.0,
            hi: 1.0,
            count: 2,
            median: 3.0,
            q1: 2.0,
            q3: 4.0,
            min: 1.0,
            max: 5.0,
        };
        let summaries = vec![BinnedSummary {
            mode: ModelMode::TwoHead,
            bins: vec![stats],
            infinite: None,
            degenerate_count: 0,
            done_total: 2,
            failed_count: 0,
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fig.png");
        render_ratio_boxplot(&summaries, &[], &path).unwrap();
        let meta = std::fs::metadata(&path).unwrap();
        assert!(meta.len() > 0);
    }
}
