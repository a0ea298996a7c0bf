//! Checkpoint container. Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "FOTSKIT1"
//! count   u32      number of records
//! record: name_len u32, name bytes (UTF-8),
//!         rank u32, extents u32 * rank,
//!         payload f32 * product(extents)
//! ```
//!
//! Tensors are stored as raw f32 in row-major order; save/load round-trips
//! bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{FotsError, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"FOTSKIT1";

pub fn save(path: &Path, records: &[(&str, &Tensor<f32>)]) -> Result<()> {
    let file = File::create(path).map_err(|e| FotsError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| FotsError::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&(records.len() as u32).to_le_bytes()).map_err(io)?;
    for (name, t) in records {
        let nb = name.as_bytes();
        w.write_all(&(nb.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(nb).map_err(io)?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes()).map_err(io)?;
        for &e in t.shape() {
            w.write_all(&(e as u32).to_le_bytes()).map_err(io)?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let file = File::open(path).map_err(|e| FotsError::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |msg: &str| FotsError::data(path, msg);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let count = read_u32(&mut r).map_err(|_| bad("truncated record count"))? as usize;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let name_len = read_u32(&mut r).map_err(|_| bad("truncated record"))? as usize;
        if name_len > 4096 {
            return Err(bad(&format!("record {i}: implausible name length {name_len}")));
        }
        let mut nb = vec![0u8; name_len];
        r.read_exact(&mut nb).map_err(|_| bad("truncated name"))?;
        let name = String::from_utf8(nb).map_err(|_| bad("record name is not UTF-8"))?;
        let rank = read_u32(&mut r).map_err(|_| bad("truncated rank"))? as usize;
        if rank > 8 {
            return Err(bad(&format!("record {name}: implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r).map_err(|_| bad("truncated extents"))? as usize);
        }
        let n: usize = shape.iter().product();
        let mut payload = vec![0u8; n * 4];
        r.read_exact(&mut payload)
            .map_err(|_| bad(&format!("record {name}: truncated payload")))?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push((name, Tensor::from_vec(&shape, data)));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| FotsError::io(path, e))? != 0 {
        return Err(bad("trailing bytes after last record"));
    }
    Ok(out)
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = std::env::temp_dir().join("fots-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rt.ck");
        // include values that expose any lossy conversion
        let a = Tensor::from_vec(&[2, 3], vec![1.0f32, -0.0, f32::MIN_POSITIVE, 3.25e-7, 1e30, -7.5]);
        let b = Tensor::from_vec(&[1], vec![42.0f32]);
        save(&path, &[("net.w", &a), ("net.b", &b)]).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].0, "net.w");
        assert_eq!(loaded[0].1.shape(), &[2, 3]);
        for (x, y) in loaded[0].1.data().iter().zip(a.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(loaded[1].1.data(), b.data());
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = std::env::temp_dir().join("fots-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bogus.ck");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(load(&path).is_err());
        std::fs::remove_file(&path).ok();
    }
}
