//! Binary feature store: the precomputed backbone outputs the rest of the
//! pipeline consumes instead of raw images.
//!
//! Layout (little-endian): magic `KGSP`, u32 version (1), u32 n_rows,
//! u32 dim, then `n_rows * dim` 32-bit floats in row-major order.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"KGSP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    n_rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureStore {
    pub fn new(n_rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n_rows * dim {
            return Err(Error::Features(format!(
                "{n_rows} rows x {dim} dims needs {} values, got {}",
                n_rows * dim,
                data.len()
            )));
        }
        let store = FeatureStore { n_rows, dim, data };
        store.check_finite()?;
        Ok(store)
    }

    fn check_finite(&self) -> Result<()> {
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Features(format!(
                "non-finite value in row {} (column {})",
                pos / self.dim,
                pos % self.dim
            )));
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Gathers the given rows into a `len x dim` f64 tensor.
    pub fn gather(&self, rows: &[usize]) -> Result<Tensor> {
        let mut values = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            if r >= self.n_rows {
                return Err(Error::Features(format!(
                    "row {r} out of bounds (store has {} rows)",
                    self.n_rows
                )));
            }
            values.extend(self.row(r).iter().map(|&v| f64::from(v)));
        }
        Tensor::matrix(rows.len(), self.dim, values)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut magic = [0u8; 4];
        reader
            .read_exact(&mut magic)
            .map_err(|e| Error::io(path, e))?;
        if &magic != MAGIC {
            return Err(Error::Features(format!(
                "{}: bad magic {magic:?}, not a feature file",
                path.display()
            )));
        }
        let version = reader
            .read_u32::<LittleEndian>()
            .map_err(|e| Error::io(path, e))?;
        if version != VERSION {
            return Err(Error::Features(format!(
                "{}: unsupported version {version}",
                path.display()
            )));
        }
        let n_rows = reader
            .read_u32::<LittleEndian>()
            .map_err(|e| Error::io(path, e))? as usize;
        let dim = reader
            .read_u32::<LittleEndian>()
            .map_err(|e| Error::io(path, e))? as usize;
        let mut data = vec![0f32; n_rows * dim];
        reader.read_f32_into::<LittleEndian>(&mut data).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Features(format!(
                    "{}: header says {n_rows} rows x {dim} dims but the payload is short",
                    path.display()
                ))
            } else {
                Error::io(path, e)
            }
        })?;
        let mut trailing = [0u8; 1];
        match reader.read(&mut trailing) {
            Ok(0) => {}
            Ok(_) => {
                return Err(Error::Features(format!(
                    "{}: trailing bytes after {n_rows} rows",
                    path.display()
                )))
            }
            Err(e) => return Err(Error::io(path, e)),
        }
        FeatureStore::new(n_rows, dim, data).map_err(|e| match e {
            Error::Features(msg) => Error::Features(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writer.write_all(MAGIC).map_err(io)?;
        writer.write_u32::<LittleEndian>(VERSION).map_err(io)?;
        writer
            .write_u32::<LittleEndian>(self.n_rows as u32)
            .map_err(io)?;
        writer.write_u32::<LittleEndian>(self.dim as u32).map_err(io)?;
        for &v in &self.data {
            writer.write_f32::<LittleEndian>(v).map_err(io)?;
        }
        writer.flush().map_err(io)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    #[test]
    fn round_trip_is_bit_identical() {
        let mut rng = substream(9, "test");
        let data: Vec<f32> = (0..12).map(|_| rng.random::<f32>() * 8.0 - 4.0).collect();
        let store = FeatureStore::new(3, 4, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feat.kgsp");
        store.save(&path).unwrap();
        let loaded = FeatureStore::load(&path).unwrap();
        assert_eq!(store, loaded);
        let bytes1 = std::fs::read(&path).unwrap();
        loaded.save(&path).unwrap();
        assert_eq!(bytes1, std::fs::read(&path).unwrap());
    }

    #[test]
    fn short_payload_is_an_error() {
        let store = FeatureStore::new(10, 2, vec![0.5; 20]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feat.kgsp");
        store.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 8); // drop the last row
        std::fs::write(&path, bytes).unwrap();
        let err = FeatureStore::load(&path).unwrap_err();
        assert!(err.to_string().contains("short"), "{err}");
    }

    #[test]
    fn nan_payload_names_the_row() {
        let store = FeatureStore::new(3, 2, vec![0.0; 6]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feat.kgsp");
        store.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // Overwrite row 1, column 0 with a NaN (header is 16 bytes).
        let offset = 16 + 2 * 4;
        bytes[offset..offset + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        let err = FeatureStore::load(&path).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
    }

    #[test]
    fn bad_magic_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feat.kgsp");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        let err = FeatureStore::load(&path).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn gather_converts_rows_to_f64() {
        let store = FeatureStore::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let t = store.gather(&[2, 0]).unwrap();
        assert_eq!(t.shape(), &[2, 2]);
        assert_eq!(t.values(), &[5.0, 6.0, 1.0, 2.0]);
        assert!(store.gather(&[3]).is_err());
    }
}
