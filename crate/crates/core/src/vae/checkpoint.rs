//! OAVM checkpoints.
//!
//! ```text
//! "OAVM" | version u32 | layer count u32 | (in u32, out u32) per layer
//!        | beta f64 | n_z u32 | parameters as f64
//! ```
//! All values little-endian.

use std::fs;
use std::path::Path;

use super::model::{Architecture, LayerShape, VaeModel};
use crate::error::{io_at, Error, Result};

pub const MAGIC: &[u8; 4] = b"OAVM";
pub const VERSION: u32 = 1;

pub fn encode_checkpoint(model: &VaeModel) -> Vec<u8> {
    let layers = model.arch().layers();
    let mut out = Vec::with_capacity(32 + layers.len() * 8 + model.params().len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for l in layers {
        out.extend_from_slice(&(l.input as u32).to_le_bytes());
        out.extend_from_slice(&(l.output as u32).to_le_bytes());
    }
    out.extend_from_slice(&model.beta.to_le_bytes());
    out.extend_from_slice(&(model.latent_dim() as u32).to_le_bytes());
    for p in model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.pos as u64, "checkpoint truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<VaeModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::format(0, "bad magic, expected \"OAVM\""));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    if count > 64 {
        return Err(Error::format(8, format!("implausible layer count {count}")));
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let input = r.u32()? as usize;
        let output = r.u32()? as usize;
        layers.push(LayerShape { input, output });
    }
    let table_end = r.pos;
    let arch = Architecture::from_layers(&layers).map_err(|e| Error::format(12, e.to_string()))?;
    let beta = r.f64()?;
    let nz = r.u32()? as usize;
    if nz != arch.latent {
        return Err(Error::format(
            table_end as u64 + 8,
            format!("latent size {nz} disagrees with the layer table ({})", arch.latent),
        ));
    }
    let n = arch.param_count();
    let start = r.pos;
    let payload = r.take(n * 8)?;
    let params = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos as u64, "trailing bytes after parameters"));
    }
    VaeModel::from_params(arch, beta, params).map_err(|e| Error::format(start as u64, e.to_string()))
}

pub fn save_checkpoint(model: &VaeModel, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model)).map_err(io_at(path))
}

pub fn load_checkpoint(path: &Path) -> Result<VaeModel> {
    decode_checkpoint(&fs::read(path).map_err(io_at(path))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let arch = Architecture {
            input: 10,
            hidden: [4, 3],
            latent: 2,
        };
        let m = VaeModel::new(arch, 0.25, 42).unwrap();
        let bytes = encode_checkpoint(&m);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn corrupt_checkpoints() {
        let arch = Architecture {
            input: 3,
            hidden: [2, 2],
            latent: 1,
        };
        let bytes = encode_checkpoint(&VaeModel::new(arch, 0.0, 1).unwrap());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'Z';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format { offset: 0, .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
        let mut table = bytes;
        table[12] = 9; // enc1 input no longer matches dec3 output
        assert!(decode_checkpoint(&table).is_err());
    }
}
