//! IDX image files (the MNIST distribution format).
//!
//! Big-endian: magic `0x00000803`, then count, rows and cols as u32, then
//! `count·rows·cols` raw bytes.

use std::path::Path;

use crate::error::{Error, Result};

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;
const HEADER: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count × rows × cols`, row-major.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn new(count: usize, rows: usize, cols: usize, pixels: Vec<u8>) -> Result<Self> {
        let expected = count
            .checked_mul(rows)
            .and_then(|v| v.checked_mul(cols))
            .ok_or_else(|| Error::DimensionOverflow(format!("{count}x{rows}x{cols}")))?;
        if pixels.len() != expected {
            return Err(Error::dim(format!(
                "{} pixels for {count} images of {rows}x{cols}",
                pixels.len()
            )));
        }
        Ok(Self {
            count,
            rows,
            cols,
            pixels,
        })
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let size = self.rows * self.cols;
        &self.pixels[i * size..(i + 1) * size]
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER {
            return Err(Error::Truncated {
                expected: HEADER,
                found: bytes.len(),
            });
        }
        let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
        match word(0) {
            IDX_IMAGE_MAGIC => {}
            IDX_LABEL_MAGIC => return Err(Error::IdxLabelFile(IDX_LABEL_MAGIC)),
            other => return Err(Error::IdxMagic(other)),
        }
        let (count, rows, cols) = (word(1) as usize, word(2) as usize, word(3) as usize);
        let body = count
            .checked_mul(rows)
            .and_then(|v| v.checked_mul(cols))
            .filter(|&v| v <= isize::MAX as usize - HEADER)
            .ok_or_else(|| Error::DimensionOverflow(format!("{count}x{rows}x{cols}")))?;
        let expected = HEADER + body;
        if bytes.len() != expected {
            return Err(Error::Truncated {
                expected,
                found: bytes.len(),
            });
        }
        Self::new(count, rows, cols, bytes[HEADER..].to_vec())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(HEADER + self.pixels.len());
        out.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
        for d in [self.count, self.rows, self.cols] {
            let d = u32::try_from(d).map_err(|_| Error::DimensionOverflow(format!("{d} > u32")))?;
            out.extend_from_slice(&d.to_be_bytes());
        }
        out.extend_from_slice(&self.pixels);
        Ok(out)
    }
}

pub fn load_idx_images(path: &Path) -> Result<IdxImages> {
    IdxImages::parse(&std::fs::read(path)?)
}

pub fn save_idx_images(images: &IdxImages, path: &Path) -> Result<()> {
    std::fs::write(path, images.to_bytes()?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(magic: u32, count: u32, rows: u32, cols: u32) -> Vec<u8> {
        [magic, count, rows, cols]
            .iter()
            .flat_map(|v| v.to_be_bytes())
            .collect()
    }

    #[test]
    fn parses_hand_built_file() {
        let mut bytes = header(0x803, 1, 2, 2);
        bytes.extend_from_slice(&[0, 128, 255, 7]);
        let img = IdxImages::parse(&bytes).unwrap();
        assert_eq!((img.count, img.rows, img.cols), (1, 2, 2));
        assert_eq!(img.pixels, vec![0, 128, 255, 7]);
        assert_eq!(img.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_bad_files() {
        let mut labels = header(0x801, 1, 1, 1);
        labels.push(0);
        assert!(matches!(IdxImages::parse(&labels), Err(Error::IdxLabelFile(0x801))));
        let mut other = header(0x1234, 1, 1, 1);
        other.push(0);
        assert!(matches!(IdxImages::parse(&other), Err(Error::IdxMagic(0x1234))));
        assert!(matches!(IdxImages::parse(&[]), Err(Error::Truncated { found: 0, .. })));
        let short = header(0x803, 2, 2, 2);
        assert!(matches!(
            IdxImages::parse(&short),
            Err(Error::Truncated { expected: 24, found: 16 })
        ));
        let mut long = header(0x803, 1, 1, 1);
        long.extend_from_slice(&[1, 2]);
        assert!(matches!(IdxImages::parse(&long), Err(Error::Truncated { .. })));
    }

    #[test]
    fn huge_header_does_not_allocate() {
        let bytes = header(0x803, u32::MAX, u32::MAX, u32::MAX);
        assert!(matches!(
            IdxImages::parse(&bytes),
            Err(Error::DimensionOverflow(_)) | Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.idx");
        let img = IdxImages::new(2, 1, 3, vec![1, 2, 3, 4, 5, 6]).unwrap();
        save_idx_images(&img, &path).unwrap();
        assert_eq!(load_idx_images(&path).unwrap(), img);
    }
}
