//! Binary tensor containers with bit-exact round trips.
//!
//! Single tensor ("CSLT"): magic, version u16 LE, rank u8 (always 4 here),
//! dims as u32 LE, then the f32 payload row-major in NCHW order.
//!
//! Named sequence ("CSLW"): magic, version u16 LE, count u32 LE, then per
//! entry a name (length u16 LE + UTF-8 bytes) and the tensor record without
//! a repeated magic (rank u8, dims, payload).

use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, Context};
use csl_core::tensor::{Shape, Tensor};

const TENSOR_MAGIC: &[u8; 4] = b"CSLT";
const WEIGHTS_MAGIC: &[u8; 4] = b"CSLW";
const VERSION: u16 = 1;

fn write_record(out: &mut impl Write, t: &Tensor<f32>) -> anyhow::Result<()> {
    let s = t.shape();
    out.write_all(&[4u8])?;
    for dim in [s.batch, s.channels, s.height, s.width] {
        let v = u32::try_from(dim).context("dimension exceeds u32")?;
        out.write_all(&v.to_le_bytes())?;
    }
    for v in t.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u16(r: &mut impl Read) -> anyhow::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> anyhow::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_record(r: &mut impl Read) -> anyhow::Result<Tensor<f32>> {
    let mut rank = [0u8; 1];
    r.read_exact(&mut rank)?;
    if rank[0] != 4 {
        bail!("unsupported tensor rank {} (expected 4)", rank[0]);
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = read_u32(r)? as usize;
    }
    let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
    let mut data = vec![0f32; shape.volume()];
    for v in &mut data {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        *v = f32::from_le_bytes(b);
    }
    Ok(Tensor::new(shape, data)?)
}

/// Writes a single tensor file.
pub fn write_tensor(path: &Path, t: &Tensor<f32>) -> anyhow::Result<()> {
    let mut out = Vec::new();
    out.write_all(TENSOR_MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    write_record(&mut out, t)?;
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// Reads a single tensor file.
pub fn read_tensor(path: &Path) -> anyhow::Result<Tensor<f32>> {
    let data = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut r = data.as_slice();
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        bail!(
            "{}: bad magic {:?} (expected \"CSLT\")",
            path.display(),
            magic
        );
    }
    let version = read_u16(&mut r)?;
    if version != VERSION {
        bail!("{}: unsupported version {version}", path.display());
    }
    read_record(&mut r)
}

/// Writes a sequence of named tensors.
pub fn write_named_tensors(path: &Path, entries: &[(String, Tensor<f32>)]) -> anyhow::Result<()> {
    let mut out = Vec::new();
    out.write_all(WEIGHTS_MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    let count = u32::try_from(entries.len()).context("too many entries")?;
    out.write_all(&count.to_le_bytes())?;
    for (name, t) in entries {
        let len = u16::try_from(name.len()).context("name too long")?;
        out.write_all(&len.to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        write_record(&mut out, t)?;
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// Reads a sequence of named tensors.
pub fn read_named_tensors(path: &Path) -> anyhow::Result<Vec<(String, Tensor<f32>)>> {
    let data = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut r = data.as_slice();
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != WEIGHTS_MAGIC {
        bail!(
            "{}: bad magic {:?} (expected \"CSLW\")",
            path.display(),
            magic
        );
    }
    let version = read_u16(&mut r)?;
    if version != VERSION {
        bail!("{}: unsupported version {version}", path.display());
    }
    let count = read_u32(&mut r)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u16(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).context("entry name is not UTF-8")?;
        entries.push((name, read_record(&mut r)?));
    }
    Ok(entries)
}

/// True when the file starts with the named-sequence magic.
pub fn is_weights_file(path: &Path) -> anyhow::Result<bool> {
    let mut magic = [0u8; 4];
    let mut f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    f.read_exact(&mut magic)?;
    Ok(&magic == WEIGHTS_MAGIC)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(seed: u32) -> Tensor<f32> {
        Tensor::from_fn(Shape::new(1, 2, 3, 4), |b, c, y, x| {
            (seed as usize + b * 29 + c * 13 + y * 5 + x) as f32 * 0.37 - 2.0
        })
    }

    #[test]
    fn tensor_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.cslt");
        let t = sample(1);
        write_tensor(&path, &t).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        for (a, b) in back.data().iter().zip(t.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn named_round_trip_preserves_order_and_names() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.cslw");
        let entries = vec![
            ("level0".to_string(), sample(0)),
            ("level1".to_string(), sample(7)),
        ];
        write_named_tensors(&path, &entries).unwrap();
        let back = read_named_tensors(&path).unwrap();
        assert_eq!(back.len(), 2);
        for ((na, ta), (nb, tb)) in back.iter().zip(&entries) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data());
        }
        assert!(is_weights_file(&path).unwrap());
        let single = dir.path().join("s.cslt");
        write_tensor(&single, &sample(3)).unwrap();
        assert!(!is_weights_file(&single).unwrap());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cslt");
        std::fs::write(&path, b"NOPE....").unwrap();
        let err = read_tensor(&path).unwrap_err().to_string();
        assert!(err.contains("bad magic"), "{err}");
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.cslt");
        write_tensor(&path, &sample(2)).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, bytes).unwrap();
        assert!(read_tensor(&path).is_err());
    }
}
