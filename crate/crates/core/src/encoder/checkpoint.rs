//! Binary checkpoints.
//!
//! Layout (little-endian): magic `GLCK1`; `u8` architecture tag (0 linear,
//! 1 mlp2); `u64` hidden width (0 for linear); `u8` normalize flag; `u64`
//! d_in; `u64` d_out; `u8` head flag; `u64` tensor count; then per tensor
//! `u64` rows, `u64` cols and rows·cols `f64` in row-major order. Encoder
//! tensors come first, followed by head weight and bias when present.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Architecture, ClassifierHead, EncoderParams};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"GLCK1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoder: EncoderParams,
    pub head: Option<ClassifierHead>,
}

pub fn save_checkpoint(path: impl AsRef<Path>, encoder: &EncoderParams, head: Option<&ClassifierHead>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    let (tag, hidden) = match encoder.arch {
        Architecture::Linear => (0u8, 0u64),
        Architecture::Mlp2 { hidden } => (1u8, hidden as u64),
    };
    w.write_all(&[tag])?;
    w.write_all(&hidden.to_le_bytes())?;
    w.write_all(&[u8::from(encoder.normalize)])?;
    w.write_all(&(encoder.d_in as u64).to_le_bytes())?;
    w.write_all(&(encoder.d_out as u64).to_le_bytes())?;
    w.write_all(&[u8::from(head.is_some())])?;
    let mut tensors: Vec<&Matrix> = encoder.tensors.iter().collect();
    if let Some(h) = head {
        tensors.push(&h.weight);
        tensors.push(&h.bias);
    }
    w.write_all(&(tensors.len() as u64).to_le_bytes())?;
    for t in tensors {
        w.write_all(&(t.nrows() as u64).to_le_bytes())?;
        w.write_all(&(t.ncols() as u64).to_le_bytes())?;
        for i in 0..t.nrows() {
            for j in 0..t.ncols() {
                w.write_all(&t[(i, j)].to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    src: String,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Parse {
                path: self.src.clone(),
                line: 0,
                msg: format!("truncated checkpoint at byte {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<usize> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        src: path.display().to_string(),
    };
    let bad = |msg: &str| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        msg: msg.into(),
    };
    if r.take(5)? != CHECKPOINT_MAGIC {
        return Err(bad("missing GLCK1 magic"));
    }
    let tag = r.u8()?;
    let hidden = r.u64()?;
    let arch = match tag {
        0 => Architecture::Linear,
        1 => Architecture::Mlp2 { hidden },
        _ => return Err(bad("unknown architecture tag")),
    };
    let normalize = r.u8()? != 0;
    let d_in = r.u64()?;
    let d_out = r.u64()?;
    let has_head = r.u8()? != 0;
    let count = r.u64()?;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = r.u64()?;
        let cols = r.u64()?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(r.f64()?);
        }
        tensors.push(Matrix::from_row_slice(rows, cols, &data));
    }
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes after checkpoint"));
    }
    let head = if has_head {
        if tensors.len() < 2 {
            return Err(bad("head flag set but tensors missing"));
        }
        let bias = tensors.pop().unwrap();
        let weight = tensors.pop().unwrap();
        Some(ClassifierHead { weight, bias })
    } else {
        None
    };
    let encoder = EncoderParams {
        arch,
        d_in,
        d_out,
        normalize,
        tensors,
    };
    encoder.validate()?;
    Ok(Checkpoint { encoder, head })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ck");
        let enc = EncoderParams::init(Architecture::Mlp2 { hidden: 7 }, 5, 3, true, 2).unwrap();
        let head = ClassifierHead::init(3, 4, 9);
        save_checkpoint(&path, &enc, Some(&head)).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.encoder, enc);
        assert_eq!(ck.head.as_ref(), Some(&head));

        let enc = EncoderParams::init(Architecture::Linear, 2, 2, false, 1).unwrap();
        save_checkpoint(&path, &enc, None).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.encoder, enc);
        assert!(ck.head.is_none());
    }

    #[test]
    fn garbage_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ck");
        fs::write(&path, b"GLCK1\x07").unwrap();
        assert!(load_checkpoint(&path).is_err());
        fs::write(&path, b"NOPE!").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
