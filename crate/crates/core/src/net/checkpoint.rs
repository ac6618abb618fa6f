//! Binary checkpoint: `SKEM` magic, format version, length-prefixed config
//! JSON, step, then named little-endian `f64` tensors. Adam state is stored
//! as extra tensors named `adam.m.*` / `adam.v.*` plus the step counter.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::params::ParamStore;
use crate::net::tape::Tensor;

pub const MAGIC: &[u8; 4] = b"SKEM";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub step: u64,
    pub adam_t: u64,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_store(config: serde_json::Value, step: u64, store: &ParamStore) -> Checkpoint {
        let mut tensors: Vec<(String, Tensor)> = store.names().iter().cloned().zip(store.tensors().iter().cloned()).collect();
        for (i, name) in store.names().iter().enumerate() {
            let shape = store.tensors()[i].shape.clone();
            tensors.push((format!("adam.m.{name}"), Tensor::new(shape.clone(), store.adam_m[i].clone())));
            tensors.push((format!("adam.v.{name}"), Tensor::new(shape, store.adam_v[i].clone())));
        }
        Checkpoint { config, step, adam_t: store.adam_t, tensors }
    }

    /// Copies values and optimiser state into a store built from the same
    /// configuration.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        let n = store.len();
        if self.tensors.len() != 3 * n {
            return Err(Error::Checkpoint(format!("shape mismatch: {} tensors, model has {}", self.tensors.len() / 3, n)));
        }
        for (i, name) in store.names().to_vec().iter().enumerate() {
            let expect = [name.clone(), format!("adam.m.{name}"), format!("adam.v.{name}")];
            let found = [&self.tensors[i], &self.tensors[n + 2 * i], &self.tensors[n + 2 * i + 1]];
            for (e, (fname, t)) in expect.iter().zip(found) {
                if e != fname {
                    return Err(Error::Checkpoint(format!("shape mismatch: expected tensor {e}, found {fname}")));
                }
                if t.shape != store.tensors()[i].shape {
                    return Err(Error::Checkpoint(format!(
                        "shape mismatch: {fname} is {:?}, model expects {:?}",
                        t.shape,
                        store.tensors()[i].shape
                    )));
                }
            }
            store.tensors_mut()[i].data.clone_from(&self.tensors[i].1.data);
            store.adam_m[i].clone_from(&self.tensors[n + 2 * i].1.data);
            store.adam_v[i].clone_from(&self.tensors[n + 2 * i + 1].1.data);
        }
        store.adam_t = self.adam_t;
        Ok(())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let json = serde_json::to_vec(&self.config)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&self.adam_t.to_le_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
            for &d in &t.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in &t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Checkpoint> {
        let mut rd = Reader(r);
        let mut magic = [0u8; 4];
        rd.exact(&mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = rd.u32("version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let len = rd.u64("config length")? as usize;
        let json = rd.bytes(len, "config")?;
        let config = serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(format!("config JSON: {e}")))?;
        let step = rd.u64("step")?;
        let adam_t = rd.u64("optimiser step")?;
        let count = rd.u32("tensor count")?;
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = rd.u32("tensor name length")? as usize;
            let name = String::from_utf8(rd.bytes(name_len, "tensor name")?).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = rd.u32("tensor rank")?;
            let shape = (0..rank).map(|_| rd.u64("tensor dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = rd.bytes(n * 8, "tensor data")?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            tensors.push((name, Tensor::new(shape, data)));
        }
        let mut extra = [0u8; 1];
        if rd.0.read(&mut extra)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after tensors".into()));
        }
        Ok(Checkpoint { config, step, adam_t, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::read(BufReader::new(File::open(path)?))
    }
}

struct Reader<R>(R);

impl<R: Read> Reader<R> {
    fn exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        self.0.read_exact(buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Checkpoint(format!("truncated while reading {what}")),
            _ => Error::Io(e),
        })
    }

    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        (&mut self.0).take(n as u64).read_to_end(&mut buf)?;
        if buf.len() != n {
            return Err(Error::Checkpoint(format!("truncated while reading {what}")));
        }
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.exact(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }
}
