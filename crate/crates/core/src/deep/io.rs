//! Binary model container.
//!
//! Little-endian throughout: magic `BVAE`, format version (u32), layer
//! count (u32), then per layer `rows` (u32), `cols` (u32), the row-major
//! `rows × cols` weights as f64 and the `cols` bias entries as f64. Layers
//! are in [`MlpVae::layers`] order with weights stored `in × out`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{Dense, MlpVae};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: [u8; 4] = *b"BVAE";
pub const MODEL_VERSION: u32 = 1;

pub fn write_model<W: Write>(net: &MlpVae, mut w: W) -> Result<()> {
    w.write_all(&MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    let count = u32::try_from(net.layers().count())
        .map_err(|_| Error::ModelFormat("too many layers".into()))?;
    w.write_all(&count.to_le_bytes())?;
    for layer in net.layers() {
        let (rows, cols) = layer.w.shape();
        for d in [rows, cols] {
            let d = u32::try_from(d).map_err(|_| Error::ModelFormat("layer too large".into()))?;
            w.write_all(&d.to_le_bytes())?;
        }
        for r in 0..rows {
            for c in 0..cols {
                w.write_all(&layer.w[(r, c)].to_le_bytes())?;
            }
        }
        for v in layer.b.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_model(net: &MlpVae, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(net, &mut w)?;
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(f64::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::ModelFormat("unexpected end of file".into())
    } else {
        Error::Io(e)
    }
}

/// Upper bound on a single layer's element count, guarding allocation
/// against corrupt headers.
const MAX_LAYER_ELEMS: usize = 1 << 28;

pub fn read_model<R: Read>(mut r: R) -> Result<MlpVae> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if magic != MODEL_MAGIC {
        return Err(Error::ModelFormat(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != MODEL_VERSION {
        return Err(Error::ModelFormat(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    if count > 1024 {
        return Err(Error::ModelFormat(format!("implausible layer count {count}")));
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        if rows.checked_mul(cols).is_none_or(|e| e > MAX_LAYER_ELEMS) {
            return Err(Error::ModelFormat(format!("layer of {rows}x{cols} is too large")));
        }
        let mut w = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                w[(i, j)] = read_f64(&mut r)?;
            }
        }
        let mut b = DVector::zeros(cols);
        for j in 0..cols {
            b[j] = read_f64(&mut r)?;
        }
        layers.push(Dense { w, b });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::ModelFormat("trailing bytes after the last layer".into()));
    }
    MlpVae::from_layers(layers)
}

pub fn load_model(path: &Path) -> Result<MlpVae> {
    read_model(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let net = MlpVae::glorot(4, &[5, 3], 2, 7).unwrap();
        let mut buf = Vec::new();
        write_model(&net, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"BVAE");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 7);
        let expected = 12 + net.layers().count() * 8 + net.num_params() * 8;
        assert_eq!(buf.len(), expected);
        assert_eq!(read_model(buf.as_slice()).unwrap(), net);
    }

    #[test]
    fn weights_are_row_major() {
        let mut net = MlpVae::zeros(2, &[3], 1).unwrap();
        net.encoder[0].w = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut buf = Vec::new();
        write_model(&net, &mut buf).unwrap();
        let first: Vec<f64> = buf[20..20 + 48]
            .chunks(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(first, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let net = MlpVae::zeros(2, &[3], 1).unwrap();
        let mut buf = Vec::new();
        write_model(&net, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_model(bad.as_slice()), Err(Error::ModelFormat(_))));
        assert!(matches!(read_model(&buf[..buf.len() - 3]), Err(Error::ModelFormat(_))));
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_model(extra.as_slice()).is_err());
        assert!(read_model(&[][..]).is_err());
    }
}
