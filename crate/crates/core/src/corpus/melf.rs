//! "MELF" binary matrix format.
//!
//! Layout: magic bytes `MELF`, u32 LE row count, u32 LE column count, then
//! rows*cols f32 LE values in row-major order. Used for mel-spectrograms,
//! exported acoustic embeddings and cached semantic matrices.

use crate::{Error, Mat, Real, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"MELF";

/// Writes a matrix; values are stored as f32.
pub fn write_matrix(path: &Path, m: &Mat) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(m.nrows() as u32).to_le_bytes())?;
    w.write_all(&(m.ncols() as u32).to_le_bytes())?;
    for v in m.iter() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a matrix written by [`write_matrix`].
pub fn read_matrix(path: &Path) -> Result<Mat> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}, expected MELF",
            path.display(),
            magic
        )));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let rows = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let cols = u32::from_le_bytes(b4) as usize;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        r.read_exact(&mut b4)?;
        data.push(f32::from_le_bytes(b4) as Real);
    }
    Mat::from_shape_vec((rows, cols), data)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Writes a mel-spectrogram (frame shift metadata is not stored).
pub fn write_mel(path: &Path, mel: &super::Mel) -> Result<()> {
    write_matrix(path, mel.data())
}

/// Reads a mel-spectrogram, attaching the given frame shift metadata.
pub fn read_mel(path: &Path, frame_shift_ms: Real) -> Result<super::Mel> {
    super::Mel::new(read_matrix(path)?, frame_shift_ms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matrix_roundtrip_is_exact_for_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mel");
        // Values that are exactly representable in f32.
        let m = array![[0.5, -1.25, 3.0], [0.0, 7.5, -0.125]];
        write_matrix(&path, &m).unwrap();
        assert_eq!(read_matrix(&path).unwrap(), m);
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.mel");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
        let err = read_matrix(&path).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }
}
