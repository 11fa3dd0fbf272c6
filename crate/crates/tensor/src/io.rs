//! `MRMT` tensor files: magic `MRMT`, u16 version, u16 rank, u32 extents,
//! then f32 payload. Everything little-endian, row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"MRMT";
pub const VERSION: u16 = 1;

pub fn write_tensor<S: Scalar>(mut w: impl Write, t: &Tensor<S>) -> Result<()> {
    let rank = u16::try_from(t.rank()).map_err(|_| TensorError::Format(format!("rank {} too large", t.rank())))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&rank.to_le_bytes())?;
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| TensorError::Format(format!("extent {d} too large")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.numel() * 4);
    for v in t.data() {
        buf.extend_from_slice(&(v.f64() as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor<S: Scalar>(mut r: impl Read) -> Result<Tensor<S>> {
    let mut head = [0u8; 8];
    r.read_exact(&mut head).map_err(|e| TensorError::Format(format!("truncated header: {e}")))?;
    if &head[..4] != MAGIC {
        return Err(TensorError::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != VERSION {
        return Err(TensorError::Format(format!("unsupported version {version}")));
    }
    let rank = u16::from_le_bytes([head[6], head[7]]) as usize;
    let mut shape = Vec::with_capacity(rank);
    let mut b = [0u8; 4];
    for _ in 0..rank {
        r.read_exact(&mut b).map_err(|e| TensorError::Format(format!("truncated shape: {e}")))?;
        shape.push(u32::from_le_bytes(b) as usize);
    }
    let n: usize = shape.iter().product();
    let mut payload = vec![0u8; n * 4];
    r.read_exact(&mut payload).map_err(|e| TensorError::Format(format!("truncated payload: {e}")))?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(TensorError::Format("trailing bytes after payload".into()));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| S::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    Tensor::new(shape, data)
}

pub fn save<S: Scalar>(path: impl AsRef<Path>, t: &Tensor<S>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load<S: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<S>> {
    read_tensor(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::new([2, 1], vec![1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[..4], b"MRMT");
        assert_eq!(&buf[4..8], &[1, 0, 2, 0]);
        assert_eq!(&buf[8..16], &[2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&buf[16..20], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), 24);
        let back: Tensor<f32> = read_tensor(&buf[..]).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(read_tensor::<f32>(&b"MRMX\x01\x00\x00\x00"[..]).is_err());
        assert!(read_tensor::<f32>(&b"MRMT\x02\x00\x00\x00"[..]).is_err());
        assert!(read_tensor::<f32>(&b"MRMT\x01\x00\x01\x00\x02\x00\x00\x00\x00"[..]).is_err());
    }

    #[test]
    fn scalar_tensor_round_trips() {
        let t = Tensor::<f32>::scalar(3.5);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(read_tensor::<f32>(&buf[..]).unwrap(), t);
    }
}
