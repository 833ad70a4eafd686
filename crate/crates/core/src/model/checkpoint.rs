//! Binary checkpoint: header, JSON model config, named little-endian tensors.

use std::io::{Read, Write};
use std::path::Path;

use super::params::Parameters;
use super::ModelConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TEPCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

const MOMENT_M: &str = "adam.m.";
const MOMENT_V: &str = "adam.v.";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub params: Parameters<f32>,
    /// AdamW first and second moments, present for resumable checkpoints.
    pub moments: Option<(Parameters<f32>, Parameters<f32>)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Validation(format!("corrupt checkpoint: {}", msg.into()))
}

fn write_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f32]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| bad("unexpected end of file"))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: Parameters<f32>) -> Self {
        Checkpoint {
            config,
            step: 0,
            params,
            moments: None,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let cfg = serde_json::to_vec(&self.config).map_err(|e| Error::Validation(e.to_string()))?;
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(&cfg);
        out.extend_from_slice(&self.step.to_le_bytes());

        let mut tensors: Vec<(String, Vec<usize>, &[f32])> = self
            .params
            .tensors()
            .into_iter()
            .map(|t| (t.name, t.shape, t.data))
            .collect();
        if let Some((m, v)) = &self.moments {
            for (prefix, p) in [(MOMENT_M, m), (MOMENT_V, v)] {
                tensors.extend(
                    p.tensors()
                        .into_iter()
                        .map(|t| (format!("{prefix}{}", t.name), t.shape, t.data)),
                );
            }
        }
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, shape, data) in &tensors {
            write_tensor(&mut out, name, shape, data);
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut c = Cursor { buf, at: 0 };
        if c.take(8)? != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = c.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let cfg_len = c.u32()? as usize;
        let config: ModelConfig =
            serde_json::from_slice(c.take(cfg_len)?).map_err(|e| bad(format!("config: {e}")))?;
        config.validate()?;
        let step = c.u64()?;
        let count = c.u32()? as usize;

        let mut params = Parameters::<f32>::zeros(&config);
        let mut m = Parameters::<f32>::zeros(&config);
        let mut v = Parameters::<f32>::zeros(&config);
        let mut seen_params = 0usize;
        let mut seen_moments = 0usize;
        {
            let mut slots: Vec<(String, &mut [f32])> = params.tensors_mut();
            let n_params = slots.len();
            slots.extend(
                m.tensors_mut()
                    .into_iter()
                    .map(|(n, s)| (format!("{MOMENT_M}{n}"), s)),
            );
            slots.extend(
                v.tensors_mut()
                    .into_iter()
                    .map(|(n, s)| (format!("{MOMENT_V}{n}"), s)),
            );
            let mut filled = vec![false; slots.len()];
            for _ in 0..count {
                let name_len = c.u32()? as usize;
                let name = std::str::from_utf8(c.take(name_len)?)
                    .map_err(|_| bad("tensor name is not utf-8"))?
                    .to_string();
                let ndim = c.u32()? as usize;
                let mut numel = 1usize;
                for _ in 0..ndim {
                    numel = numel
                        .checked_mul(c.u64()? as usize)
                        .ok_or_else(|| bad("tensor too large"))?;
                }
                let ix = slots
                    .iter()
                    .position(|(n, _)| *n == name)
                    .ok_or_else(|| bad(format!("unknown tensor '{name}'")))?;
                if filled[ix] {
                    return Err(bad(format!("duplicate tensor '{name}'")));
                }
                let dst = &mut slots[ix].1;
                if dst.len() != numel {
                    return Err(bad(format!(
                        "tensor '{name}' has {numel} values, expected {}",
                        dst.len()
                    )));
                }
                let raw = c.take(numel * 4)?;
                for (o, b) in dst.iter_mut().zip(raw.chunks_exact(4)) {
                    *o = f32::from_le_bytes(b.try_into().unwrap());
                }
                filled[ix] = true;
                if ix < n_params {
                    seen_params += 1;
                } else {
                    seen_moments += 1;
                }
            }
            if seen_params != n_params {
                let missing = slots[..n_params]
                    .iter()
                    .zip(&filled)
                    .find(|(_, f)| !**f)
                    .map(|((n, _), _)| n.clone())
                    .unwrap_or_default();
                return Err(bad(format!("missing tensor '{missing}'")));
            }
            if seen_moments != 0 && seen_moments != 2 * n_params {
                return Err(bad("incomplete optimizer state"));
            }
        }
        if c.at != buf.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Checkpoint {
            config,
            step,
            params,
            moments: (seen_moments > 0).then_some((m, v)),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let cfg = ModelConfig {
            vocab_size: 12,
            hidden: 8,
            heads: 2,
            ffn: 12,
            max_len: 16,
            ..Default::default()
        };
        let p = Parameters::init(&cfg, 3).unwrap();
        Checkpoint::new(cfg, p)
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let mut ck = sample();
        ck.step = 42;
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);

        let m = Parameters::init(&ck.config, 8).unwrap();
        let v = Parameters::init(&ck.config, 9).unwrap();
        ck.moments = Some((m, v));
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let ck = sample();
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        assert!(matches!(
            Checkpoint::load(dir.path().join("nope.bin")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes().unwrap();
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad_magic).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut version = bytes;
        version[8] = 9;
        assert!(Checkpoint::from_bytes(&version).is_err());
    }
}
