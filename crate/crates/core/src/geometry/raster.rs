//! Supersampled coverage raster that only paints the left half of the canvas.
//! Full-width bands get exact per-row coverage instead of samples.
//! [`HalfRaster::finish`] resolves coverage to intensities and mirrors the left
//! half onto the right, so the result is symmetric bit for bit.

use crate::image::GrayImage;

/// Subsamples per pixel along each axis.
const SS: usize = 4;

pub(crate) struct HalfRaster {
    width: usize,
    height: usize,
    half: usize,
    /// `half*SS` x `height*SS` coverage samples.
    samples: Vec<bool>,
    /// Pixels painted solid by hairlines.
    solid: Vec<bool>,
    /// Exact coverage of each row by full-width horizontal bands.
    rows: Vec<f64>,
}

impl HalfRaster {
    pub fn new(width: usize, height: usize) -> Self {
        debug_assert!(width.is_multiple_of(2));
        let half = width / 2;
        HalfRaster {
            width,
            height,
            half,
            samples: vec![false; half * SS * height * SS],
            solid: vec![false; half * height],
            rows: vec![0.0; height],
        }
    }

    /// Capsule of the given width around segment `a`-`b` (pixel coordinates).
    pub fn stroke(&mut self, a: (f64, f64), b: (f64, f64), width: f64) {
        let r = 0.5 * width;
        let sw = self.half * SS;
        let sh = self.height * SS;
        let to_sample = |v: f64| v * SS as f64;
        let x0 = to_sample(a.0.min(b.0) - r).floor().max(0.0) as usize;
        let x1 = (to_sample(a.0.max(b.0) + r).ceil().max(0.0) as usize).min(sw);
        let y0 = to_sample(a.1.min(b.1) - r).floor().max(0.0) as usize;
        let y1 = (to_sample(a.1.max(b.1) + r).ceil().max(0.0) as usize).min(sh);
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = dx * dx + dy * dy;
        let r2 = r * r;
        for sy in y0..y1 {
            let py = (sy as f64 + 0.5) / SS as f64;
            let row = sy * sw;
            for sx in x0..x1 {
                let px = (sx as f64 + 0.5) / SS as f64;
                let t = if len2 > 0.0 {
                    (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (ex, ey) = (a.0 + t * dx - px, a.1 + t * dy - py);
                if ex * ex + ey * ey <= r2 {
                    self.samples[row + sx] = true;
                }
            }
        }
    }

    /// Horizontal band across the whole canvas, centered on pixel row
    /// coordinate `y`. Coverage is the exact overlap with each row.
    pub fn band(&mut self, y: f64, width: f64) {
        let (top, bottom) = (y - 0.5 * width, y + 0.5 * width);
        for (row, c) in self.rows.iter_mut().enumerate() {
            let overlap = (bottom.min(row as f64 + 1.0) - top.max(row as f64)).max(0.0);
            *c = 1.0 - (1.0 - *c) * (1.0 - overlap);
        }
    }

    pub fn stroke_polyline(&mut self, points: &[(f64, f64)], width: f64) {
        for w in points.windows(2) {
            self.stroke(w[0], w[1], width);
        }
    }

    /// One-pixel aliased line; consecutive pixels are 8-connected.
    pub fn hairline(&mut self, a: (f64, f64), b: (f64, f64)) {
        let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil().max(1.0) as usize;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let x = a.0 + t * (b.0 - a.0);
            let y = a.1 + t * (b.1 - a.1);
            self.plot(x.floor(), y.floor());
        }
    }

    pub fn hairline_polyline(&mut self, points: &[(f64, f64)]) {
        for w in points.windows(2) {
            self.hairline(w[0], w[1]);
        }
    }

    fn plot(&mut self, x: f64, y: f64) {
        if x < 0.0 || y < 0.0 {
            return;
        }
        let (x, y) = (x as usize, y as usize);
        if x < self.half && y < self.height {
            self.solid[y * self.half + x] = true;
        }
    }

    /// Dark structure on white: intensity = 255 * (1 - coverage).
    pub fn finish(self) -> GrayImage {
        let mut img = GrayImage::filled(self.width, self.height, 255);
        let sw = self.half * SS;
        let full = (SS * SS) as f64;
        for y in 0..self.height {
            let band = self.rows[y];
            for x in 0..self.half {
                let sampled = if self.solid[y * self.half + x] {
                    1.0
                } else {
                    let mut n = 0usize;
                    for sy in 0..SS {
                        let row = (y * SS + sy) * sw + x * SS;
                        n += self.samples[row..row + SS].iter().filter(|&&s| s).count();
                    }
                    n as f64 / full
                };
                // Bands and vertical strokes cross at right angles.
                let covered = 1.0 - (1.0 - sampled) * (1.0 - band);
                let v = (255.0 * (1.0 - covered)).round();
                img.set(x, y, v as u8);
                img.set(self.width - 1 - x, y, v as u8);
            }
        }
        img
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_is_mirror_symmetric() {
        let mut r = HalfRaster::new(32, 8);
        r.stroke((2.3, 1.7), (20.0, 6.1), 2.0);
        r.hairline((0.0, 7.5), (31.0, 0.2));
        let img = r.finish();
        assert!(img.is_mirror_symmetric());
        assert!(img.pixels().iter().any(|&v| v == 0));
    }

    #[test]
    fn horizontal_stroke_covers_full_rows() {
        let mut r = HalfRaster::new(16, 8);
        r.stroke((-2.0, 4.0), (18.0, 4.0), 2.0);
        let img = r.finish();
        for x in 0..16 {
            assert_eq!(img.get(x, 3), 0);
            assert_eq!(img.get(x, 4), 0);
            assert_eq!(img.get(x, 2), 255);
        }
    }

    #[test]
    fn band_edges_take_fractional_coverage() {
        let mut r = HalfRaster::new(16, 8);
        r.band(4.2, 2.5);
        r.stroke((4.0, 5.0), (4.0, 8.0), 1.0);
        let img = r.finish();
        // rows 2..=5 covered 0.05, 1, 1, 0.45
        for x in [0, 8, 15] {
            assert_eq!(img.get(x, 1), 255);
            assert_eq!(img.get(x, 2), 242);
            assert_eq!(img.get(x, 3), 0);
            assert_eq!(img.get(x, 4), 0);
        }
        assert_eq!(img.get(0, 5), 140);
        // pier half covering column 3 under the band edge: 1 - 0.5 * 0.55
        assert_eq!(img.get(3, 6), 128);
        assert_eq!(img.get(3, 5), 70);
    }

    #[test]
    fn hairline_pixels_are_eight_connected() {
        let mut r = HalfRaster::new(64, 32);
        r.hairline((1.2, 30.7), (30.9, 2.1));
        let img = r.finish();
        // walk the left half column by column: each painted column touches the next
        let cols: Vec<Vec<usize>> = (0..32)
            .map(|x| (0..32).filter(|&y| img.get(x, y) == 0).collect())
            .collect();
        for pair in cols
            .windows(2)
            .filter(|p| !p[0].is_empty() && !p[1].is_empty())
        {
            assert!(pair[0]
                .iter()
                .any(|&a| pair[1].iter().any(|&b| a.abs_diff(b) <= 1)));
        }
    }
}
