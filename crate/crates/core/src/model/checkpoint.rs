//! Binary parameter checkpoints.
//!
//! Layout: magic "CLMB", version u32, config digest u64, tensor count u32,
//! then per tensor: name length u32 + UTF-8 name, rank u32, extents u64 each,
//! and little-endian f64 data. Loading refuses a digest that does not match
//! the live config.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Parameters};
use crate::numerics::Tensor;

const MAGIC: &[u8; 4] = b"CLMB";
const VERSION: u32 = 1;

pub fn write_named_tensors(
    path: &Path,
    digest: u64,
    tensors: &[(String, &Tensor)],
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&digest.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &e in t.shape() {
            buf.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, &buf)
        .map_err(|source| Error::Io { path: path.display().to_string(), source })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                path: self.path.display().to_string(),
                line: None,
                msg: "truncated checkpoint".into(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_named_tensors(path: &Path) -> Result<(u64, Vec<(String, Tensor)>)> {
    let bytes = std::fs::read(path)
        .map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    let mut r = Reader { bytes: &bytes, pos: 0, path };
    let bad = |msg: &str| Error::Format {
        path: path.display().to_string(),
        line: None,
        msg: msg.to_string(),
    };
    if r.take(4)? != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let digest = r.u64()?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| bad("tensor name is not UTF-8"))?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_bits(r.u64()?));
        }
        tensors.push((name, Tensor::new(shape, data)?));
    }
    Ok((digest, tensors))
}

/// Save model parameters keyed by the config digest.
pub fn save(path: &Path, params: &Parameters, config: &ModelConfig) -> Result<()> {
    write_named_tensors(path, config.digest(), &params.named())
}

/// Load parameters; refuses a checkpoint whose config digest differs.
pub fn load(path: &Path, config: &ModelConfig) -> Result<Parameters> {
    let (digest, tensors) = read_named_tensors(path)?;
    if digest != config.digest() {
        return Err(Error::Stale { expected: config.digest(), found: digest });
    }
    let mut params = Parameters::zeros(config)?;
    let mut loaded = 0usize;
    {
        let mut named = params.named_mut();
        for (name, tensor) in tensors {
            let slot = named.iter_mut().find(|(n, _)| *n == name).ok_or_else(|| Error::Format {
                path: path.display().to_string(),
                line: None,
                msg: format!("unexpected tensor '{name}'"),
            })?;
            if slot.1.shape() != tensor.shape() {
                return Err(Error::Format {
                    path: path.display().to_string(),
                    line: None,
                    msg: format!(
                        "tensor '{name}' has shape {:?}, expected {:?}",
                        tensor.shape(),
                        slot.1.shape()
                    ),
                });
            }
            slot.1.data_mut().copy_from_slice(tensor.data());
            loaded += 1;
        }
    }
    let expected = params.named().len();
    if loaded != expected {
        return Err(Error::Format {
            path: path.display().to_string(),
            line: None,
            msg: format!("checkpoint holds {loaded} tensors, model needs {expected}"),
        });
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn temp_path(name: &str) -> PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("climber_ckpt_{}_{}", std::process::id(), name));
        p
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let config = ModelConfig::small(8, 2, 2, 2, 4, 64);
        let params = Parameters::init(&config, 42).unwrap();
        let path = temp_path("roundtrip");
        save(&path, &params, &config).unwrap();
        let loaded = load(&path, &config).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(loaded, params);
        assert_eq!(loaded.digest(), params.digest());
    }

    #[test]
    fn config_digest_mismatch_is_refused() {
        let config = ModelConfig::small(8, 2, 1, 1, 4, 64);
        let params = Parameters::init(&config, 1).unwrap();
        let path = temp_path("digest");
        save(&path, &params, &config).unwrap();
        let mut other = config.clone();
        other.budget = 8;
        let err = load(&path, &other).unwrap_err();
        std::fs::remove_file(&path).ok();
        assert!(matches!(err, Error::Stale { .. }), "{err}");
    }

    #[test]
    fn garbage_file_is_a_format_error() {
        let path = temp_path("garbage");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        let config = ModelConfig::small(8, 2, 1, 1, 4, 64);
        let err = load(&path, &config).unwrap_err();
        std::fs::remove_file(&path).ok();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }
}
