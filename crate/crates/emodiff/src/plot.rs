//! Minimal PNG line charts — enough to eyeball probability trajectories and
//! sweep curves without pulling in a plotting stack.

use image::{Rgb, RgbImage};

use crate::error::{EmodiffError, Result};

pub const PLOT_WIDTH: u32 = 640;
pub const PLOT_HEIGHT: u32 = 400;
const MARGIN: u32 = 40;

/// Distinct line colors, cycled when there are more series than entries.
const COLORS: [[u8; 3]; 8] = [
    [214, 69, 65],
    [65, 131, 215],
    [38, 166, 91],
    [244, 179, 80],
    [142, 68, 173],
    [0, 181, 204],
    [150, 40, 27],
    [108, 122, 137],
];

/// One named line.
pub struct Series {
    pub label: String,
    pub points: Vec<(f32, f32)>,
}

fn draw_line(img: &mut RgbImage, x0: i32, y0: i32, x1: i32, y1: i32, color: Rgb<u8>) {
    // Bresenham, clipped to the canvas.
    let (w, h) = (img.width() as i32, img.height() as i32);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let (mut x, mut y) = (x0, y0);
    loop {
        if (0..w).contains(&x) && (0..h).contains(&y) {
            img.put_pixel(x as u32, y as u32, color);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Render a set of series as a PNG line chart with axes and a legend strip
/// of colored swatches (no text rendering; series order matches swatch order
/// top to bottom).
pub fn plot_lines(series: &[Series], path: &std::path::Path) -> Result<()> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(EmodiffError::InvalidArgument("nothing to plot".into()));
    }
    let pts: Vec<(f32, f32)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    if pts.is_empty() {
        return Err(EmodiffError::InvalidArgument(
            "all points are non-finite".into(),
        ));
    }
    let (mut x_min, mut x_max) = (f32::INFINITY, f32::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f32::INFINITY, f32::NEG_INFINITY);
    for (x, y) in &pts {
        x_min = x_min.min(*x);
        x_max = x_max.max(*x);
        y_min = y_min.min(*y);
        y_max = y_max.max(*y);
    }
    if x_max == x_min {
        x_max = x_min + 1.0;
    }
    if y_max == y_min {
        y_max = y_min + 1.0;
    }

    let mut img = RgbImage::from_pixel(PLOT_WIDTH, PLOT_HEIGHT, Rgb([255, 255, 255]));
    let plot_w = (PLOT_WIDTH - 2 * MARGIN) as f32;
    let plot_h = (PLOT_HEIGHT - 2 * MARGIN) as f32;
    let to_px = |x: f32, y: f32| -> (i32, i32) {
        let px = MARGIN as f32 + (x - x_min) / (x_max - x_min) * plot_w;
        let py = (PLOT_HEIGHT - MARGIN) as f32 - (y - y_min) / (y_max - y_min) * plot_h;
        (px.round() as i32, py.round() as i32)
    };

    // Axes.
    let axis = Rgb([0, 0, 0]);
    let (ox, oy) = (MARGIN as i32, (PLOT_HEIGHT - MARGIN) as i32);
    draw_line(&mut img, ox, oy, (PLOT_WIDTH - MARGIN) as i32, oy, axis);
    draw_line(&mut img, ox, oy, ox, MARGIN as i32, axis);
    // Tick marks at the quarters.
    for k in 0..=4 {
        let tx = ox + (plot_w * k as f32 / 4.0) as i32;
        draw_line(&mut img, tx, oy, tx, oy + 4, axis);
        let ty = oy - (plot_h * k as f32 / 4.0) as i32;
        draw_line(&mut img, ox - 4, ty, ox, ty, axis);
    }

    for (si, s) in series.iter().enumerate() {
        let color = Rgb(COLORS[si % COLORS.len()]);
        let finite: Vec<(f32, f32)> = s
            .points
            .iter()
            .copied()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .collect();
        for w in finite.windows(2) {
            let (x0, y0) = to_px(w[0].0, w[0].1);
            let (x1, y1) = to_px(w[1].0, w[1].1);
            draw_line(&mut img, x0, y0, x1, y1, color);
        }
        // Legend swatch.
        let ly = MARGIN as i32 / 2 + 8 * si as i32;
        draw_line(
            &mut img,
            (PLOT_WIDTH - MARGIN) as i32 - 30,
            ly,
            (PLOT_WIDTH - MARGIN) as i32,
            ly,
            color,
        );
    }

    img.save(path)?;
    Ok(())
}

/// Plot per-emotion probability trajectories over the outer steps of a
/// synthesis trace (one series per emotion, in wheel-id order).
pub fn plot_trace_probs(
    trace: &crate::synthesis::SynthesisTrace,
    path: &std::path::Path,
) -> Result<()> {
    let n_emotions = trace
        .steps
        .first()
        .map(|s| s.probs.len())
        .ok_or_else(|| EmodiffError::InvalidArgument("empty trace".into()))?;
    let series: Vec<Series> = (0..n_emotions)
        .map(|e| Series {
            label: crate::emotion::EmotionLabel::from_id(e)
                .map(|l| l.name().to_string())
                .unwrap_or_else(|_| format!("class {e}")),
            points: trace
                .steps
                .iter()
                .map(|s| (s.step as f32, s.probs[e]))
                .collect(),
        })
        .collect();
    plot_lines(&series, path)
}

/// Plot accuracy and semantic score against eta from a sweep report.
/// Infinite etas are pinned just outside the finite range so they stay
/// visible.
pub fn plot_sweep(report: &crate::eval::SweepReport, path: &std::path::Path) -> Result<()> {
    let finite: Vec<f32> = report.etas.iter().copied().filter(|e| e.is_finite()).collect();
    let (lo, hi) = match (
        finite.iter().copied().reduce(f32::min),
        finite.iter().copied().reduce(f32::max),
    ) {
        (Some(lo), Some(hi)) => (lo, hi),
        _ => (0.0, 1.0),
    };
    let pad = (hi - lo).max(1.0) * 0.15;
    let x_of = |eta: f32| {
        if eta == f32::NEG_INFINITY {
            lo - pad
        } else if eta == f32::INFINITY {
            hi + pad
        } else {
            eta
        }
    };
    let xs: Vec<f32> = report.etas.iter().map(|&e| x_of(e)).collect();
    let series = vec![
        Series {
            label: "acc_agnostic".into(),
            points: xs
                .iter()
                .zip(&report.report.rows)
                .map(|(&x, r)| (x, r.acc_agnostic))
                .collect(),
        },
        Series {
            label: "semantic".into(),
            points: xs
                .iter()
                .zip(&report.report.rows)
                .map(|(&x, r)| (x, r.semantic))
                .collect(),
        },
    ];
    plot_lines(&series, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_a_decodable_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chart.png");
        let series = vec![
            Series {
                label: "a".into(),
                points: (0..20).map(|i| (i as f32, (i as f32 * 0.3).sin())).collect(),
            },
            Series {
                label: "b".into(),
                points: (0..20).map(|i| (i as f32, (i as f32 * 0.3).cos())).collect(),
            },
        ];
        plot_lines(&series, &path).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (PLOT_WIDTH, PLOT_HEIGHT));
        // Both line colors should appear somewhere.
        let has = |c: [u8; 3]| img.pixels().any(|p| p.0 == c);
        assert!(has(COLORS[0]) && has(COLORS[1]));
    }

    #[test]
    fn empty_input_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(plot_lines(&[], &dir.path().join("x.png")).is_err());
    }

    #[test]
    fn constant_series_does_not_panic() {
        let dir = tempfile::tempdir().unwrap();
        let series = vec![Series {
            label: "flat".into(),
            points: vec![(0.0, 0.5), (1.0, 0.5), (2.0, 0.5)],
        }];
        plot_lines(&series, &dir.path().join("flat.png")).unwrap();
    }
}
