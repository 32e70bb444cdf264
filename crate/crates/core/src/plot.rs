//! Minimal PNG line plots and image dumps.
//!
//! No text rendering: panels carry curves, a frame, quartile grid lines and
//! optional dashed vertical markers. The numbers live in the CSVs written
//! next to every plot.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Series {
    pub points: Vec<(f64, f64)>,
    pub color: [u8; 3],
    pub dashed: bool,
}

impl Series {
    pub fn solid(points: Vec<(f64, f64)>, color: [u8; 3]) -> Self {
        Self {
            points,
            color,
            dashed: false,
        }
    }

    pub fn dashed(points: Vec<(f64, f64)>, color: [u8; 3]) -> Self {
        Self {
            points,
            color,
            dashed: true,
        }
    }
}

pub const BLUE: [u8; 3] = [31, 119, 180];
pub const ORANGE: [u8; 3] = [255, 127, 14];
pub const GREY: [u8; 3] = [150, 150, 150];

#[derive(Clone, Debug)]
pub struct LinePlot {
    pub width: u32,
    pub height: u32,
    pub log_x: bool,
    pub series: Vec<Series>,
    /// x positions of dashed vertical markers.
    pub markers: Vec<f64>,
}

const MARGIN: f64 = 40.0;

impl LinePlot {
    pub fn new(log_x: bool) -> Self {
        Self {
            width: 640,
            height: 480,
            log_x,
            series: Vec::new(),
            markers: Vec::new(),
        }
    }

    fn tx(&self, x: f64) -> f64 {
        if self.log_x {
            x.ln()
        } else {
            x
        }
    }

    fn bounds(&self) -> Option<(f64, f64, f64, f64)> {
        let pts = self
            .series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter(|(x, y)| x.is_finite() && y.is_finite() && (!self.log_x || *x > 0.0));
        let mut b: Option<(f64, f64, f64, f64)> = None;
        for &(x, y) in pts {
            let x = self.tx(x);
            b = Some(match b {
                None => (x, x, y, y),
                Some((x0, x1, y0, y1)) => (x0.min(x), x1.max(x), y0.min(y), y1.max(y)),
            });
        }
        b.map(|(x0, x1, y0, y1)| {
            let pad_x = if x1 > x0 { 0.0 } else { 0.5 };
            let span = y1 - y0;
            let pad_y = if span > 0.0 { 0.05 * span } else { 0.5f64.max(y0.abs() * 0.1) };
            (x0 - pad_x, x1 + pad_x, y0 - pad_y, y1 + pad_y)
        })
    }

    /// RGB8 pixels, row-major.
    pub fn render(&self) -> Vec<u8> {
        let mut canvas = Canvas::new(self.width, self.height);
        let (w, h) = (self.width as f64, self.height as f64);
        let (left, right, top, bottom) = (MARGIN, w - MARGIN / 2.0, MARGIN / 2.0, h - MARGIN);
        for i in 1..4 {
            let f = i as f64 / 4.0;
            let gx = left + f * (right - left);
            let gy = top + f * (bottom - top);
            canvas.line((gx, top), (gx, bottom), [225, 225, 225], false);
            canvas.line((left, gy), (right, gy), [225, 225, 225], false);
        }
        canvas.line((left, top), (right, top), [0, 0, 0], false);
        canvas.line((left, bottom), (right, bottom), [0, 0, 0], false);
        canvas.line((left, top), (left, bottom), [0, 0, 0], false);
        canvas.line((right, top), (right, bottom), [0, 0, 0], false);

        let Some((x0, x1, y0, y1)) = self.bounds() else {
            return canvas.pixels;
        };
        let map = |x: f64, y: f64| {
            let px = left + (self.tx(x) - x0) / (x1 - x0) * (right - left);
            let py = bottom - (y - y0) / (y1 - y0) * (bottom - top);
            (px, py)
        };
        for &m in &self.markers {
            if m.is_finite() && (!self.log_x || m > 0.0) {
                let (px, _) = map(m, y0);
                canvas.line((px, top), (px, bottom), [90, 90, 90], true);
            }
        }
        for s in &self.series {
            let pts: Vec<(f64, f64)> = s
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite() && (!self.log_x || *x > 0.0))
                .map(|&(x, y)| map(x, y))
                .collect();
            for w in pts.windows(2) {
                canvas.thick_line(w[0], w[1], s.color, s.dashed);
            }
            if !s.dashed {
                for &p in &pts {
                    canvas.dot(p, s.color);
                }
            }
        }
        canvas.pixels
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        write_png(path, self.width, self.height, png::ColorType::Rgb, &self.render())
    }
}

struct Canvas {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl Canvas {
    fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            pixels: vec![255; (width * height * 3) as usize],
        }
    }

    fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let i = ((y as u32 * self.width + x as u32) * 3) as usize;
        self.pixels[i..i + 3].copy_from_slice(&c);
    }

    fn line(&mut self, a: (f64, f64), b: (f64, f64), c: [u8; 3], dashed: bool) {
        let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
        for i in 0..=steps {
            if dashed && (i / 6) % 2 == 1 {
                continue;
            }
            let t = i as f64 / steps as f64;
            let x = a.0 + t * (b.0 - a.0);
            let y = a.1 + t * (b.1 - a.1);
            self.put(x.round() as i64, y.round() as i64, c);
        }
    }

    fn thick_line(&mut self, a: (f64, f64), b: (f64, f64), c: [u8; 3], dashed: bool) {
        for (dx, dy) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)] {
            self.line((a.0 + dx, a.1 + dy), (b.0 + dx, b.1 + dy), c, dashed);
        }
    }

    fn dot(&mut self, p: (f64, f64), c: [u8; 3]) {
        let (x, y) = (p.0.round() as i64, p.1.round() as i64);
        for dy in -2..=2 {
            for dx in -2..=2 {
                self.put(x + dx, y + dy, c);
            }
        }
    }
}

/// Writes an 8-bit grayscale image.
pub fn write_gray_png(path: &Path, width: u32, height: u32, pixels: &[u8]) -> Result<()> {
    write_png(path, width, height, png::ColorType::Grayscale, pixels)
}

fn write_png(
    path: &Path,
    width: u32,
    height: u32,
    color: png::ColorType,
    pixels: &[u8],
) -> Result<()> {
    let channels = match color {
        png::ColorType::Rgb => 3,
        _ => 1,
    };
    if pixels.len() != (width * height) as usize * channels {
        return Err(Error::dim("pixel buffer does not match image size"));
    }
    let file = File::create(path)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width, height);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header()?;
    writer.write_image_data(pixels)?;
    writer.finish()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_deterministic_and_draws_curves() {
        let mut plot = LinePlot::new(true);
        plot.series.push(Series::solid(vec![(0.1, 1.0), (1.0, 3.0), (10.0, 2.0)], BLUE));
        plot.markers.push(1.0);
        let a = plot.render();
        assert_eq!(a, plot.render());
        assert!(a.chunks(3).any(|p| p == BLUE));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.png");
        plot.write_png(&path).unwrap();
        assert!(std::fs::metadata(&path).unwrap().len() > 0);
    }

    #[test]
    fn empty_plot_renders_frame_only() {
        let plot = LinePlot::new(false);
        let px = plot.render();
        assert_eq!(px.len(), 640 * 480 * 3);
    }
}
