//! Datasets: IDX ingestion, bundled glyphs, the localization canvas and
//! global standardization.

mod glyphs;
mod idx;

pub use glyphs::{render_glyph, synthetic_digits, GLYPH_COUNT, GLYPH_SIDE};
pub use idx::{load_idx_images, save_idx_images, IdxImages, IDX_IMAGE_MAGIC, IDX_LABEL_MAGIC};

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::generative::MixingModel;
use crate::rng::Stream;

pub const CANVAS_SIDE: usize = 40;
/// Largest paste offset that keeps a 28×28 digit inside the canvas.
pub const MAX_OFFSET: usize = CANVAS_SIDE - GLYPH_SIDE;
const CENTER_OFFSET: f64 = 6.0;

pub const DATASET_CSV: &str = "dataset.csv";
pub const IMAGES_BIN: &str = "images.bin";
const DATASET_HEADER: [&str; 7] = [
    "source_0",
    "source_1",
    "position_0",
    "position_1",
    "offset_row",
    "offset_col",
    "digit",
];

/// Digits pasted onto a blank canvas at positions drawn from a 2-D
/// linear-Gaussian generator.
#[derive(Clone, Debug, PartialEq)]
pub struct CanvasDataset {
    /// `n × 1600`, raw pixel values in `0..=255`.
    pub images: DMatrix<f64>,
    /// `n × 2`.
    pub sources: DMatrix<f64>,
    /// `n × 2`, `p = A s + η`.
    pub positions: DMatrix<f64>,
    /// `(row, col)` paste offsets.
    pub offsets: Vec<(usize, usize)>,
    /// Index into the digit set used for each row.
    pub digits: Vec<usize>,
    pub mixing: MixingModel,
}

impl CanvasDataset {
    pub fn len(&self) -> usize {
        self.images.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `clamp(round(6 + p), 0, 12)`.
pub fn paste_offset(p: f64) -> usize {
    let v = (CENTER_OFFSET + p).round();
    if v.is_nan() {
        return CENTER_OFFSET as usize;
    }
    v.clamp(0.0, MAX_OFFSET as f64) as usize
}

/// Pastes `digit` (28×28) into a zero 40×40 canvas, row offset first.
pub fn paste(digit: &[u8], offset: (usize, usize)) -> Vec<f64> {
    let mut canvas = vec![0.0; CANVAS_SIDE * CANVAS_SIDE];
    for r in 0..GLYPH_SIDE {
        for c in 0..GLYPH_SIDE {
            canvas[(r + offset.0) * CANVAS_SIDE + c + offset.1] = digit[r * GLYPH_SIDE + c] as f64;
        }
    }
    canvas
}

/// The localization dataset with `A_ij = 2δ_ij + 0.73`.
pub fn make_localization_dataset(digits: &IdxImages, n: usize, seed: u64) -> Result<CanvasDataset> {
    make_canvas_dataset(digits, &MixingModel::localization(), n, seed)
}

/// Draws `s ~ N(0, I)`, `p = A s + η`, picks one digit per example and
/// pastes it at `(offset(p₀), offset(p₁))` — `p₀` moves it down, `p₁`
/// right.
pub fn make_canvas_dataset(
    digits: &IdxImages,
    m: &MixingModel,
    n: usize,
    seed: u64,
) -> Result<CanvasDataset> {
    if digits.rows != GLYPH_SIDE || digits.cols != GLYPH_SIDE {
        return Err(Error::dim(format!(
            "digits must be {GLYPH_SIDE}x{GLYPH_SIDE}, got {}x{}",
            digits.rows, digits.cols
        )));
    }
    if digits.count == 0 {
        return Err(Error::invalid("digit set is empty"));
    }
    if m.n() != 2 {
        return Err(Error::dim(format!("canvas positions are 2-D, generator has N = {}", m.n())));
    }
    if n == 0 {
        return Err(Error::invalid("dataset size must be at least 1"));
    }
    let samples = m.sample(n, seed);
    let mut pick = Stream::derived(seed, "data.digit", &[]);
    let mut images = DMatrix::zeros(n, CANVAS_SIDE * CANVAS_SIDE);
    let mut offsets = Vec::with_capacity(n);
    let mut chosen = Vec::with_capacity(n);
    for i in 0..n {
        let d = pick.below(digits.count);
        let off = (
            paste_offset(samples.observations[(i, 0)]),
            paste_offset(samples.observations[(i, 1)]),
        );
        for (j, v) in paste(digits.image(d), off).into_iter().enumerate() {
            images[(i, j)] = v;
        }
        offsets.push(off);
        chosen.push(d);
    }
    Ok(CanvasDataset {
        images,
        sources: samples.sources,
        positions: samples.observations,
        offsets,
        digits: chosen,
        mixing: m.clone(),
    })
}

/// Global scalar standardization: `(x − mean)/std` over all entries. A
/// (near-)constant input maps to zeros with `std` recorded as 1.
pub fn standardize(data: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64, f64)> {
    if data.is_empty() {
        return Err(Error::invalid("cannot standardize an empty matrix"));
    }
    let count = data.len() as f64;
    let mean = data.sum() / count;
    let var = data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
    let std = var.sqrt();
    if !(std >= 1e-12) {
        return Ok((DMatrix::zeros(data.nrows(), data.ncols()), mean, 1.0));
    }
    Ok((data.map(|v| (v - mean) / std), mean, std))
}

/// Writes `dataset.csv` and `images.bin` into `dir`.
pub fn save_dataset(ds: &CanvasDataset, dir: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(dir.join(DATASET_CSV))?;
    w.write_record(DATASET_HEADER)?;
    for i in 0..ds.len() {
        w.write_record([
            format!("{:.16e}", ds.sources[(i, 0)]),
            format!("{:.16e}", ds.sources[(i, 1)]),
            format!("{:.16e}", ds.positions[(i, 0)]),
            format!("{:.16e}", ds.positions[(i, 1)]),
            ds.offsets[i].0.to_string(),
            ds.offsets[i].1.to_string(),
            ds.digits[i].to_string(),
        ])?;
    }
    w.flush()?;
    let mut bin = BufWriter::new(File::create(dir.join(IMAGES_BIN))?);
    for i in 0..ds.len() {
        for v in ds.images.row(i).iter() {
            bin.write_all(&v.to_le_bytes())?;
        }
    }
    bin.flush()?;
    Ok(())
}

/// Reads a dataset written by [`save_dataset`]; the generator is the
/// localization mixing.
pub fn load_dataset(dir: &Path) -> Result<CanvasDataset> {
    let mut rdr = csv::Reader::from_path(dir.join(DATASET_CSV))?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header != DATASET_HEADER {
        return Err(Error::invalid(format!("unexpected dataset header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |i: usize| {
            rec[i]
                .parse::<f64>()
                .map_err(|e| Error::invalid(format!("{}: {e}", DATASET_HEADER[i])))
        };
        let u = |i: usize| {
            rec[i]
                .parse::<usize>()
                .map_err(|e| Error::invalid(format!("{}: {e}", DATASET_HEADER[i])))
        };
        rows.push(([f(0)?, f(1)?], [f(2)?, f(3)?], (u(4)?, u(5)?), u(6)?));
    }
    let n = rows.len();
    let width = CANVAS_SIDE * CANVAS_SIDE;
    let mut bytes = Vec::new();
    BufReader::new(File::open(dir.join(IMAGES_BIN))?).read_to_end(&mut bytes)?;
    if bytes.len() != n * width * 8 {
        return Err(Error::Truncated {
            expected: n * width * 8,
            found: bytes.len(),
        });
    }
    let mut images = DMatrix::zeros(n, width);
    for (idx, chunk) in bytes.chunks_exact(8).enumerate() {
        images[(idx / width, idx % width)] = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
    }
    Ok(CanvasDataset {
        images,
        sources: DMatrix::from_fn(n, 2, |i, j| rows[i].0[j]),
        positions: DMatrix::from_fn(n, 2, |i, j| rows[i].1[j]),
        offsets: rows.iter().map(|r| r.2).collect(),
        digits: rows.iter().map(|r| r.3).collect(),
        mixing: MixingModel::localization(),
    })
}
