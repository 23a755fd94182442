//! GTF tensor container: magic `GTF1`, u8 rank, rank little-endian u32 dims,
//! then the payload as little-endian f32. Used for checkpoints and fixtures.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"GTF1";

pub fn write<S: Scalar, W: Write>(mut w: W, t: &Tensor<S>) -> Result<()> {
    let rank = t.shape().len();
    if rank > u8::MAX as usize {
        return Err(Error::Format(format!("rank {rank} exceeds GTF limit")));
    }
    w.write_all(MAGIC)?;
    w.write_all(&[rank as u8])?;
    for &d in t.shape() {
        if d > u32::MAX as usize {
            return Err(Error::Format(format!("dim {d} exceeds u32")));
        }
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in t.as_slice() {
        w.write_all(&(v.to_f64_lossy() as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read<S: Scalar, R: Read>(mut r: R) -> Result<Tensor<S>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad GTF magic {magic:?}")));
    }
    let mut rank = [0u8; 1];
    r.read_exact(&mut rank)?;
    let mut shape = Vec::with_capacity(rank[0] as usize);
    for _ in 0..rank[0] {
        let mut d = [0u8; 4];
        r.read_exact(&mut d)?;
        shape.push(u32::from_le_bytes(d) as usize);
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    let mut buf = [0u8; 4];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        data.push(S::of(f32::from_le_bytes(buf) as f64));
    }
    Tensor::from_vec(&shape, data)
}

pub fn save<S: Scalar>(path: &Path, t: &Tensor<S>) -> Result<()> {
    let f = File::create(path)?;
    write(BufWriter::new(f), t)
}

pub fn load<S: Scalar>(path: &Path) -> Result<Tensor<S>> {
    let f = File::open(path)?;
    read(BufReader::new(f))
}
