//! Checkpoint archive: the model configuration plus every named parameter
//! as raw little-endian f64 data. The layout is fixed and independent of
//! platform, so identical models produce identical bytes.
//!
//! ```text
//! magic "RTFNCKPT" | u32 version | u32 cfg_len | cfg key=value text
//! u32 param_count | per param: u32 name_len, name, u32 ndim, u64 dims..., f64 data...
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Decoder, RtfnConfig, RtfnModel};
use crate::tensor::{Parameter, Tensor};

const MAGIC: &[u8; 8] = b"RTFNCKPT";
const VERSION: u32 = 1;

/// Serialize `params` (in the given order) with the configuration.
pub fn save_checkpoint(path: impl AsRef<Path>, cfg: &RtfnConfig, params: &[&Parameter]) -> Result<()> {
    let path = path.as_ref();
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let cfg_text = cfg.to_kv();
    buf.extend_from_slice(&(cfg_text.len() as u32).to_le_bytes());
    buf.extend_from_slice(cfg_text.as_bytes());
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        let shape = p.value.shape();
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Read back the configuration and the named parameter tensors.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(RtfnConfig, Vec<(String, Tensor)>)> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };
    let magic = cur.take(8)?;
    if magic != MAGIC {
        return Err(Error::Data(format!("{}: not a checkpoint file", path.display())));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let cfg_len = cur.u32()? as usize;
    let cfg_text = std::str::from_utf8(cur.take(cfg_len)?)
        .map_err(|_| Error::Data(format!("{}: config block is not UTF-8", path.display())))?;
    let cfg = RtfnConfig::from_kv(cfg_text)?;
    let count = cur.u32()? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::Data(format!("{}: parameter name is not UTF-8", path.display())))?
            .to_string();
        let ndim = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes")));
        }
        params.push((name, Tensor::new(shape, data)?));
    }
    Ok((cfg, params))
}

/// Save a model (and optionally its decoder) in canonical parameter order.
pub fn save_model(
    path: impl AsRef<Path>,
    model: &RtfnModel,
    decoder: Option<&Decoder>,
) -> Result<()> {
    let mut params = model.params();
    if let Some(dec) = decoder {
        params.extend(dec.params());
    }
    save_checkpoint(path, &model.config, &params)
}

/// Load parameter values into an existing model/decoder pair by name.
/// Every destination parameter must be present in the checkpoint with a
/// matching shape.
pub fn load_into(
    path: impl AsRef<Path>,
    model: &mut RtfnModel,
    decoder: Option<&mut Decoder>,
) -> Result<()> {
    let path = path.as_ref();
    let (_, entries) = load_checkpoint(path)?;
    let mut by_name: std::collections::HashMap<String, Tensor> = entries.into_iter().collect();
    let mut targets = model.params_mut();
    if let Some(dec) = decoder {
        targets.extend(dec.params_mut());
    }
    for p in targets {
        let t = by_name.remove(&p.name).ok_or_else(|| {
            Error::Data(format!("{}: checkpoint is missing {}", path.display(), p.name))
        })?;
        if t.shape() != p.value.shape() {
            return Err(Error::ShapeMismatch {
                op: "load_checkpoint",
                lhs: p.value.shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
        p.value = t;
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Data(format!(
                "{}: truncated checkpoint",
                self.path.display()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Purpose;
    use crate::rng::{self, Rng};

    fn tiny_model() -> RtfnModel {
        let cfg = RtfnConfig {
            lstman_depth: 1,
            hidden: 4,
            tfn_channels: 4,
            ..RtfnConfig::new(2, 1, 8)
        };
        let mut r = Rng::with_stream(cfg.seed, rng::STREAM_INIT);
        RtfnModel::new(&cfg, Purpose::Supervised, &mut r).unwrap()
    }

    #[test]
    fn round_trip_preserves_values_and_config() {
        let model = tiny_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_model(&path, &model, None).unwrap();
        let (cfg, entries) = load_checkpoint(&path).unwrap();
        assert_eq!(cfg, model.config);
        assert_eq!(entries.len(), model.params().len());
        for ((name, t), p) in entries.iter().zip(model.params()) {
            assert_eq!(name, &p.name);
            assert_eq!(t, &p.value);
        }
    }

    #[test]
    fn load_into_restores_a_perturbed_model() {
        let model = tiny_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_model(&path, &model, None).unwrap();

        let mut other = tiny_model();
        for p in other.params_mut() {
            p.value = p.value.map(|v| v + 1.0);
        }
        load_into(&path, &mut other, None).unwrap();
        for (a, b) in other.params().iter().zip(model.params()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn checkpoint_bytes_are_stable() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save_model(&p1, &tiny_model(), None).unwrap();
        save_model(&p2, &tiny_model(), None).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn garbage_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
