//! Single-file weight blobs.
//!
//! Layout (little endian): magic `DHACKPT\0`, u32 format version, config
//! hash (u32 length + UTF-8), u8 scalar width in bytes, u32 metadata count
//! with (key, value) strings, u32 tensor count, then per tensor its name,
//! u32 rank, u64 dims and raw values.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use dha_nn::{ParamSet, Scalar, Tensor};

use crate::error::{DhaError, IoContext, Result};

pub const MAGIC: &[u8; 8] = b"DHACKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<S> {
    pub config_hash: String,
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor<S>)>,
}

fn corrupt(path: &Path, msg: impl Into<String>) -> DhaError {
    DhaError::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: msg.into(),
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_u32::<LE>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_str<R: Read>(r: &mut R, path: &Path) -> Result<String> {
    let n = r.read_u32::<LE>().at(path)? as usize;
    if n > 1 << 20 {
        return Err(corrupt(path, "string length out of range"));
    }
    let mut buf = vec![0; n];
    r.read_exact(&mut buf).at(path)?;
    String::from_utf8(buf).map_err(|_| corrupt(path, "invalid UTF-8"))
}

impl<S: Scalar> Checkpoint<S> {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Self {
            config_hash: config_hash.into(),
            meta: BTreeMap::new(),
            tensors: Vec::new(),
        }
    }

    /// Append every tensor of `params` under `prefix.` + its name.
    pub fn push_params(&mut self, prefix: &str, params: &ParamSet<S>) {
        for (name, t) in params.names().iter().zip(params.tensors()) {
            self.tensors.push((format!("{prefix}.{name}"), t.clone()));
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<S>) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Overwrite `params` from the tensors stored under `prefix.`.
    pub fn load_params(&self, prefix: &str, params: &mut ParamSet<S>) -> Result<()> {
        let names: Vec<String> = params.names().to_vec();
        for (name, dst) in names.iter().zip(params.tensors_mut()) {
            let key = format!("{prefix}.{name}");
            let src = self
                .get(&key)
                .ok_or_else(|| DhaError::Invalid(format!("checkpoint has no tensor `{key}`")))?;
            if src.shape() != dst.shape() {
                return Err(DhaError::Invalid(format!(
                    "tensor `{key}` has shape {:?}, network expects {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src.clone();
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).at(path)?;
        let mut w = BufWriter::new(file);
        (|| -> std::io::Result<()> {
            w.write_all(MAGIC)?;
            w.write_u32::<LE>(FORMAT_VERSION)?;
            write_str(&mut w, &self.config_hash)?;
            w.write_u8(S::WIDTH)?;
            w.write_u32::<LE>(self.meta.len() as u32)?;
            for (k, v) in &self.meta {
                write_str(&mut w, k)?;
                write_str(&mut w, v)?;
            }
            w.write_u32::<LE>(self.tensors.len() as u32)?;
            for (name, t) in &self.tensors {
                write_str(&mut w, name)?;
                w.write_u32::<LE>(t.shape().len() as u32)?;
                for &d in t.shape() {
                    w.write_u64::<LE>(d as u64)?;
                }
                for &v in t.data() {
                    w.write_all(&v.to_le_bytes_vec())?;
                }
            }
            w.flush()
        })()
        .at(path)
    }

    /// Read a checkpoint, converting stored values to `S` if the file was
    /// written at the other precision.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(DhaError::Missing(path.to_path_buf()));
        }
        let mut r = BufReader::new(File::open(path).at(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).at(path)?;
        if &magic != MAGIC {
            return Err(corrupt(path, "not a checkpoint file"));
        }
        let version = r.read_u32::<LE>().at(path)?;
        if version != FORMAT_VERSION {
            return Err(corrupt(path, format!("format version {version}, expected {FORMAT_VERSION}")));
        }
        let config_hash = read_str(&mut r, path)?;
        let width = r.read_u8().at(path)?;
        if width != 4 && width != 8 {
            return Err(corrupt(path, format!("scalar width {width}")));
        }
        let n_meta = r.read_u32::<LE>().at(path)?;
        let mut meta = BTreeMap::new();
        for _ in 0..n_meta {
            let k = read_str(&mut r, path)?;
            meta.insert(k, read_str(&mut r, path)?);
        }
        let n = r.read_u32::<LE>().at(path)?;
        let mut tensors = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let name = read_str(&mut r, path)?;
            let rank = r.read_u32::<LE>().at(path)? as usize;
            if rank > 8 {
                return Err(corrupt(path, format!("tensor `{name}` has rank {rank}")));
            }
            let shape = (0..rank)
                .map(|_| r.read_u64::<LE>().map(|d| d as usize))
                .collect::<std::io::Result<Vec<_>>>()
                .at(path)?;
            let numel: usize = shape.iter().product();
            let mut bytes = vec![0u8; numel * width as usize];
            r.read_exact(&mut bytes).at(path)?;
            let data: Vec<S> = if width == 4 {
                bytes.chunks_exact(4).map(|b| S::lit(f32::from_le_slice(b) as f64)).collect()
            } else {
                bytes.chunks_exact(8).map(|b| S::lit(f64::from_le_slice(b))).collect()
            };
            tensors.push((name, Tensor::new(shape, data)?));
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest).at(path)?;
        if !rest.is_empty() {
            return Err(corrupt(path, "trailing bytes"));
        }
        Ok(Self {
            config_hash,
            meta,
            tensors,
        })
    }

    /// Fails unless the stored hash equals `expected`.
    pub fn check_hash(&self, expected: &str, path: &Path) -> Result<()> {
        if self.config_hash != expected {
            return Err(DhaError::HashMismatch {
                path: path.to_path_buf(),
                expected: expected.to_string(),
                found: self.config_hash.clone(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint<f32> {
        let mut ps = ParamSet::<f32>::new();
        ps.add("w", Tensor::new(vec![2, 2], vec![1.0, -2.5, 3.25, 1e-7]).unwrap());
        ps.add("b", Tensor::new(vec![1], vec![0.5]).unwrap());
        let mut c = Checkpoint::new("abc123");
        c.meta.insert("iteration".into(), "500".into());
        c.push_params("seg", &ps);
        c
    }

    #[test]
    fn round_trip_and_cast() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let c = sample();
        c.save(&p).unwrap();
        assert_eq!(Checkpoint::<f32>::load(&p).unwrap(), c);
        let wide = Checkpoint::<f64>::load(&p).unwrap();
        assert_eq!(wide.get("seg.w").unwrap().data()[1], -2.5);
    }

    #[test]
    fn load_params_checks_names_and_shapes() {
        let c = sample();
        let mut ps = ParamSet::<f32>::new();
        ps.add("w", Tensor::zeros(&[2, 2]));
        c.load_params("seg", &mut ps).unwrap();
        assert_eq!(ps.tensors()[0].data()[2], 3.25);
        let mut wrong = ParamSet::<f32>::new();
        wrong.add("w", Tensor::zeros(&[4]));
        assert!(c.load_params("seg", &mut wrong).is_err());
        assert!(c.load_params("gen", &mut ps).is_err());
    }

    #[test]
    fn rejects_corruption_and_hash_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        sample().save(&p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.push(0);
        std::fs::write(&p, &bytes).unwrap();
        assert!(Checkpoint::<f32>::load(&p).is_err());
        std::fs::write(&p, b"garbage").unwrap();
        assert!(Checkpoint::<f32>::load(&p).is_err());
        assert!(matches!(Checkpoint::<f32>::load(&dir.path().join("nope")), Err(DhaError::Missing(_))));
        assert!(sample().check_hash("other", &p).is_err());
    }
}
