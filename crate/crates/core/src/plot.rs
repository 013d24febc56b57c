//! Minimal line-chart rendering to PNG.
//!
//! Charts carry axes, a light grid and one colored polyline per series, with
//! no text. Series colors come from [`PALETTE`] in order.

use image::{Rgb, RgbImage};
use imageproc::drawing::{draw_filled_circle_mut, draw_filled_rect_mut, draw_hollow_rect_mut, draw_line_segment_mut};
use imageproc::rect::Rect;

pub const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [214, 39, 40],
    [44, 160, 44],
    [255, 127, 14],
    [148, 103, 189],
    [0, 0, 0],
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub width: u32,
    pub height: u32,
    pub series: Vec<Series>,
    /// Defaults to the data extent.
    pub x_range: Option<(f64, f64)>,
    pub y_range: Option<(f64, f64)>,
}

impl Figure {
    pub fn new(series: Vec<Series>) -> Self {
        Self {
            width: 640,
            height: 420,
            series,
            x_range: None,
            y_range: None,
        }
    }

    fn extent(&self, pick: impl Fn(&(f64, f64)) -> f64) -> (f64, f64) {
        let (lo, hi) = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(&pick))
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            return (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            return (lo - 0.5, hi + 0.5);
        }
        (lo, hi)
    }

    pub fn render(&self) -> RgbImage {
        let (w, h) = (self.width, self.height);
        let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
        let (left, right, top, bottom) = (50.0f32, w as f32 - 20.0, 20.0f32, h as f32 - 40.0);
        let (x0, x1) = self.x_range.unwrap_or_else(|| self.extent(|p| p.0));
        let (y0, y1) = self.y_range.unwrap_or_else(|| {
            let (a, b) = self.extent(|p| p.1);
            (a.min(0.0), b)
        });
        let to_px = |x: f64, y: f64| {
            let u = left + ((x - x0) / (x1 - x0)) as f32 * (right - left);
            let v = bottom - ((y - y0) / (y1 - y0)) as f32 * (bottom - top);
            (u, v)
        };

        let grid = Rgb([225, 225, 225]);
        for i in 0..=4 {
            let f = i as f32 / 4.0;
            let gx = left + f * (right - left);
            let gy = top + f * (bottom - top);
            draw_line_segment_mut(&mut img, (gx, top), (gx, bottom), grid);
            draw_line_segment_mut(&mut img, (left, gy), (right, gy), grid);
        }
        let axis = Rgb([60, 60, 60]);
        draw_line_segment_mut(&mut img, (left, bottom), (right, bottom), axis);
        draw_line_segment_mut(&mut img, (left, top), (left, bottom), axis);

        for (k, s) in self.series.iter().enumerate() {
            let color = Rgb(PALETTE[k % PALETTE.len()]);
            let pts: Vec<(f32, f32)> = s
                .points
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .map(|&(x, y)| to_px(x, y))
                .collect();
            for pair in pts.windows(2) {
                draw_line_segment_mut(&mut img, pair[0], pair[1], color);
            }
            if pts.len() <= 64 {
                for &(u, v) in &pts {
                    draw_filled_circle_mut(&mut img, (u.round() as i32, v.round() as i32), 3, color);
                }
            }
            // Legend swatch, one per series, top right.
            let sx = right as i32 - 16;
            let sy = top as i32 + 4 + 14 * k as i32;
            draw_filled_rect_mut(&mut img, Rect::at(sx, sy).of_size(10, 10), color);
        }
        draw_hollow_rect_mut(
            &mut img,
            Rect::at(left as i32, top as i32).of_size((right - left) as u32, (bottom - top) as u32),
            axis,
        );
        img
    }
}

/// Empirical CDF of `values` at no more than `max_points` evenly spaced
/// ranks, as `(value, fraction <= value)` pairs.
pub fn empirical_cdf(values: &[f64], max_points: usize) -> Vec<(f64, f64)> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() || max_points == 0 {
        return Vec::new();
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = max_points.min(n).max(1);
    (0..m)
        .map(|i| {
            let idx = if m == 1 { n - 1 } else { i * (n - 1) / (m - 1) };
            (v[idx], (idx + 1) as f64 / n as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_is_monotone_and_ends_at_one() {
        let vals: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64).collect();
        let cdf = empirical_cdf(&vals, 50);
        assert_eq!(cdf.len(), 50);
        assert!(cdf.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 < w[1].1));
        assert_eq!(cdf.last().unwrap().1, 1.0);
        assert_eq!(empirical_cdf(&[2.0], 10), vec![(2.0, 1.0)]);
        assert!(empirical_cdf(&[], 10).is_empty());
    }

    #[test]
    fn render_draws_series_pixels() {
        let fig = Figure::new(vec![Series {
            label: "a".into(),
            points: vec![(0.0, 0.0), (1.0, 1.0)],
        }]);
        let img = fig.render();
        assert_eq!(img.dimensions(), (640, 420));
        let c = Rgb(PALETTE[0]);
        assert!(img.pixels().filter(|p| **p == c).count() > 100);
    }
}
