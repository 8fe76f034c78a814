//! `SEDM` checkpoints: little-endian header `(c, D, H, C, flags, classes)`
//! followed by the parameter blocks as f32 in declared order.

use std::path::Path;

use super::{Architecture, SedModel};
use crate::binio::write_atomic;
use crate::error::{Error, Result};
use crate::labels::ClassList;

pub const SEDM_MAGIC: &[u8; 4] = b"SEDM";

impl SedModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let a = &self.arch;
        let mut out = SEDM_MAGIC.to_vec();
        for v in [a.context, a.input_dim, a.hidden, a.n_classes, a.sequence_offset as usize] {
            out.extend((v as u32).to_le_bytes());
        }
        for name in self.classes.names() {
            out.extend((name.len() as u32).to_le_bytes());
            out.extend(name.as_bytes());
        }
        for p in &self.params {
            out.extend((*p as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::BadFormat {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < 24 || &bytes[..4] != SEDM_MAGIC {
            return Err(bad("missing SEDM header"));
        }
        let mut pos = 4;
        let read_u32 = |pos: &mut usize| -> Result<usize> {
            let chunk = bytes.get(*pos..*pos + 4).ok_or_else(|| bad("truncated header"))?;
            *pos += 4;
            Ok(u32::from_le_bytes(chunk.try_into().unwrap()) as usize)
        };
        let context = read_u32(&mut pos)?;
        let input_dim = read_u32(&mut pos)?;
        let hidden = read_u32(&mut pos)?;
        let n_classes = read_u32(&mut pos)?;
        let flags = read_u32(&mut pos)?;
        let mut names = Vec::with_capacity(n_classes);
        for _ in 0..n_classes {
            let len = read_u32(&mut pos)?;
            let raw = bytes.get(pos..pos + len).ok_or_else(|| bad("truncated class list"))?;
            names.push(String::from_utf8(raw.to_vec()).map_err(|_| bad("class name is not UTF-8"))?);
            pos += len;
        }
        let classes = ClassList::new(names)?;
        let arch = Architecture {
            context,
            input_dim,
            hidden,
            n_classes,
            sequence_offset: flags & 1 == 1,
        };
        let body = &bytes[pos..];
        if body.len() != arch.n_params() * 4 {
            return Err(bad("parameter block size does not match header"));
        }
        let params: Vec<f64> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!("checkpoint {}", path.display())));
        }
        Ok(Self { arch, classes, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
