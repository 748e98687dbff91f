//! `CKPT` checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CKPT" | u32 version=1 | u32 n_entries
//! per entry: u16 name_len | name (UTF-8) | u8 rank | rank × u32 dims | f32 payload
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{ParamStore, Scalar, Tensor};

const MAGIC: &[u8; 4] = b"CKPT";
const VERSION: u32 = 1;

pub fn write_checkpoint<T: Scalar, W: Write>(mut w: W, store: &ParamStore<T>) -> Result<()> {
    let io = |e| Error::io("writing checkpoint", e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(store.len() as u32).to_le_bytes()).map_err(io)?;
    for (name, t) in store.iter() {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len())
            .map_err(|_| Error::InvalidArgument(format!("parameter name too long: {name}")))?;
        let rank = u8::try_from(t.rank())
            .map_err(|_| Error::InvalidArgument(format!("rank too large: {name}")))?;
        w.write_all(&len.to_le_bytes()).map_err(io)?;
        w.write_all(bytes).map_err(io)?;
        w.write_all(&[rank]).map_err(io)?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes()).map_err(io)?;
        }
        let mut payload = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            payload.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
        w.write_all(&payload).map_err(io)?;
    }
    Ok(())
}

fn take<'a>(buf: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if buf.len() < n {
        return Err(Error::Truncated(format!("checkpoint ends inside {what}")));
    }
    let (head, tail) = buf.split_at(n);
    *buf = tail;
    Ok(head)
}

fn u32_at(buf: &mut &[u8], what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(take(buf, 4, what)?.try_into().expect("4 bytes")))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamStore<f32>> {
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)
        .map_err(|e| Error::io("reading checkpoint", e))?;
    let mut buf = raw.as_slice();
    if take(&mut buf, 4, "magic")? != MAGIC {
        return Err(Error::UnrecognizedFormat("checkpoint magic is not CKPT".into()));
    }
    let version = u32_at(&mut buf, "version")?;
    if version != VERSION {
        return Err(Error::UnrecognizedFormat(format!("checkpoint version {version}")));
    }
    let n = u32_at(&mut buf, "entry count")?;
    let mut store = ParamStore::new();
    for _ in 0..n {
        let len = u16::from_le_bytes(take(&mut buf, 2, "name length")?.try_into().expect("2 bytes"));
        let name = std::str::from_utf8(take(&mut buf, len as usize, "name")?)
            .map_err(|_| Error::UnrecognizedFormat("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = take(&mut buf, 1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32_at(&mut buf, "dims")? as usize);
        }
        let count: usize = shape.iter().product();
        let payload = take(&mut buf, count * 4, "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        store.insert(name, Tensor::new(&shape, data)?);
    }
    Ok(store)
}

pub fn save_checkpoint<T: Scalar>(path: &Path, store: &ParamStore<T>) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, store)?;
    std::fs::write(path, buf).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore<f32>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_checkpoint(std::io::BufReader::new(f))
}
