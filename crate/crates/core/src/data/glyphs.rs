//! Procedurally drawn 28×28 digit glyphs.
//!
//! Seven-segment skeletons with per-glyph jitter in size, slant, stroke
//! width and placement, rasterized with a one-pixel antialiasing ramp. They
//! stand in for MNIST so that everything runs offline.

use super::idx::IdxImages;
use crate::rng::Stream;

pub const GLYPH_SIDE: usize = 28;
pub const GLYPH_COUNT: usize = 64;

// Segment endpoints in a unit box, y pointing down.
const SEGMENTS: [((f64, f64), (f64, f64)); 7] = [
    ((0.0, 0.0), (1.0, 0.0)), // a: top
    ((1.0, 0.0), (1.0, 0.5)), // b: upper right
    ((1.0, 0.5), (1.0, 1.0)), // c: lower right
    ((0.0, 1.0), (1.0, 1.0)), // d: bottom
    ((0.0, 0.5), (0.0, 1.0)), // e: lower left
    ((0.0, 0.0), (0.0, 0.5)), // f: upper left
    ((0.0, 0.5), (1.0, 0.5)), // g: middle
];

const DIGITS: [&str; 10] = [
    "abcdef", "bc", "abged", "abgcd", "fgbc", "afgcd", "afgedc", "abc", "abcdefg", "abfgcd",
];

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Renders digit `digit` (0–9) with jitter drawn from `stream`.
pub fn render_glyph(digit: usize, stream: &mut Stream) -> Vec<u8> {
    let width = 9.0 + 4.0 * stream.uniform();
    let height = 15.0 + 4.0 * stream.uniform();
    let slant = 0.25 * (stream.uniform() - 0.5);
    let half_stroke = 0.9 + 0.8 * stream.uniform();
    let x0 = (GLYPH_SIDE as f64 - width) / 2.0 + 2.0 * (stream.uniform() - 0.5);
    let y0 = (GLYPH_SIDE as f64 - height) / 2.0 + 2.0 * (stream.uniform() - 0.5);
    let place = |(u, v): (f64, f64)| (x0 + u * width + slant * (1.0 - v) * height, y0 + v * height);
    let strokes: Vec<((f64, f64), (f64, f64))> = DIGITS[digit % 10]
        .bytes()
        .map(|c| {
            let (a, b) = SEGMENTS[(c - b'a') as usize];
            (place(a), place(b))
        })
        .collect();
    let mut pixels = vec![0u8; GLYPH_SIDE * GLYPH_SIDE];
    for r in 0..GLYPH_SIDE {
        for c in 0..GLYPH_SIDE {
            let p = (c as f64 + 0.5, r as f64 + 0.5);
            let d = strokes
                .iter()
                .map(|&(a, b)| segment_distance(p, a, b))
                .fold(f64::INFINITY, f64::min);
            let ink = (1.0 - (d - half_stroke)).clamp(0.0, 1.0);
            pixels[r * GLYPH_SIDE + c] = (255.0 * ink).round() as u8;
        }
    }
    pixels
}

/// The bundled set: [`GLYPH_COUNT`] glyphs cycling through the ten digits.
pub fn synthetic_digits() -> IdxImages {
    let mut pixels = Vec::with_capacity(GLYPH_COUNT * GLYPH_SIDE * GLYPH_SIDE);
    for i in 0..GLYPH_COUNT {
        let mut stream = Stream::derived(0, "data.glyph", &[i as u64]);
        pixels.extend(render_glyph(i % 10, &mut stream));
    }
    IdxImages::new(GLYPH_COUNT, GLYPH_SIDE, GLYPH_SIDE, pixels).expect("sizes match")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_set_is_stable_and_inked() {
        let a = synthetic_digits();
        assert_eq!(a, synthetic_digits());
        assert_eq!((a.count, a.rows, a.cols), (64, 28, 28));
        for i in 0..a.count {
            let img = a.image(i);
            let ink = img.iter().filter(|&&v| v > 128).count();
            assert!(ink > 20, "glyph {i} has {ink} inked pixels");
            // Nothing touches the border, so pasting never clips ink.
            for k in 0..28 {
                assert_eq!(img[k], 0);
                assert_eq!(img[27 * 28 + k], 0);
            }
        }
        assert_ne!(a.image(0), a.image(1));
    }
}
