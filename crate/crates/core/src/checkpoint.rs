//! Binary checkpoint container.
//!
//! ```text
//! magic     8 bytes  "SVXCKPT\0"
//! version   u32      currently 1
//! length    u64      payload byte count
//! payload
//!   step    u64
//!   stage   u32 length + UTF-8
//!   2 grids (density, color/feature), each:
//!     name        u32 length + UTF-8
//!     channels    u32
//!     resolution  3 x u64
//!     bounds      6 x f64 (min xyz, max xyz)
//!     values      f32 x channels*Nx*Ny*Nz, channel-major then x, y, z
//!   activation  alpha_init, voxel_size, shift as f64
//!   distance_unit f64
//!   network     u8 flag; if 1: feature_dim, hidden, hidden_layers,
//!               pe_freqs as u32, u64 count, f32 params
//! checksum  32 bytes SHA-256 of the payload
//! ```
//!
//! All integers and floats are little-endian. A JSON sidecar with the same
//! stem holds the training config and step. Files are written to a temporary
//! name and renamed into place.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::num::Real;
use crate::render::{ColorNet, ColorNetConfig, RadianceField};
use crate::voxel::{Aabb, DensityActivation, VoxelGrid};

pub const MAGIC: &[u8; 8] = b"SVXCKPT\0";
pub const FORMAT_VERSION: u32 = 1;
const HEADER: usize = 8 + 4 + 8;
const CHECKSUM: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub step: usize,
    pub stage: String,
    pub config: TrainConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub field: RadianceField<f32>,
    pub step: usize,
    pub stage: String,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_grid<T: Real>(out: &mut Vec<u8>, name: &str, g: &VoxelGrid<T>) {
    put_str(out, name);
    out.extend_from_slice(&(g.channels() as u32).to_le_bytes());
    for n in g.resolution() {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for v in g.bounds().min.iter().chain(&g.bounds().max) {
        out.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    for v in g.values() {
        out.extend_from_slice(&v.as_f32().to_le_bytes());
    }
}

/// Encodes the container in memory.
pub fn encode<T: Real>(field: &RadianceField<T>, step: usize, stage: &str) -> Vec<u8> {
    let mut p = Vec::new();
    p.extend_from_slice(&(step as u64).to_le_bytes());
    put_str(&mut p, stage);
    put_grid(&mut p, "density", &field.density);
    put_grid(&mut p, "color", &field.color);
    let a = &field.activation;
    for v in [a.alpha_init(), a.voxel_size(), a.shift(), field.distance_unit] {
        p.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    match &field.net {
        None => p.push(0),
        Some(net) => {
            p.push(1);
            let c = net.config();
            for v in [c.feature_dim, c.hidden, c.hidden_layers, c.pe_freqs] {
                p.extend_from_slice(&(v as u32).to_le_bytes());
            }
            p.extend_from_slice(&(net.params().len() as u64).to_le_bytes());
            for v in net.params() {
                p.extend_from_slice(&v.as_f32().to_le_bytes());
            }
        }
    }
    let mut out = Vec::with_capacity(HEADER + p.len() + CHECKSUM);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(p.len() as u64).to_le_bytes());
    out.extend_from_slice(&p);
    out.extend_from_slice(&Sha256::digest(&p));
    out
}

fn integrity(msg: impl Into<String>) -> Error {
    Error::CheckpointIntegrity(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(integrity("payload ends early"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn count(&mut self, bound: usize) -> Result<usize> {
        let n = self.u64()?;
        if n > bound as u64 {
            return Err(integrity(format!("count {n} exceeds the payload")));
        }
        Ok(n as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| integrity("string is not UTF-8"))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| integrity("size overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect())
    }

    fn grid(&mut self, expect: &str) -> Result<VoxelGrid<f32>> {
        let name = self.string()?;
        if name != expect {
            return Err(integrity(format!("expected grid {expect:?}, found {name:?}")));
        }
        let channels = self.u32()? as usize;
        let limit = self.buf.len();
        let res = [self.count(limit)?, self.count(limit)?, self.count(limit)?];
        let mut b = [0.0; 6];
        for v in &mut b {
            *v = self.f64()?;
        }
        let bounds = Aabb::new([b[0], b[1], b[2]], [b[3], b[4], b[5]])
            .map_err(|e| integrity(e.to_string()))?
            .cast::<f32>();
        let n = res
            .iter()
            .try_fold(channels, |a, &r| a.checked_mul(r))
            .ok_or_else(|| integrity("grid size overflow"))?;
        let values = self.f32s(n)?;
        VoxelGrid::from_values(channels, res, bounds, values).map_err(|e| integrity(e.to_string()))
    }
}

/// Decodes a container, checking magic, version, length and checksum before
/// reading any field.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < HEADER || &bytes[..8] != MAGIC {
        return Err(integrity("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    if bytes.len() as u64 != HEADER as u64 + len + CHECKSUM as u64 {
        return Err(integrity(format!(
            "file has {} bytes, header announces {}",
            bytes.len(),
            HEADER as u64 + len + CHECKSUM as u64
        )));
    }
    let payload = &bytes[HEADER..HEADER + len as usize];
    if Sha256::digest(payload).as_slice() != &bytes[HEADER + len as usize..] {
        return Err(integrity("checksum mismatch"));
    }
    let mut r = Reader { buf: payload, pos: 0 };
    let step = r.u64()? as usize;
    let stage = r.string()?;
    let density = r.grid("density")?;
    let color = r.grid("color")?;
    let (alpha, vs, shift, unit) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let activation =
        DensityActivation::from_parts(alpha as f32, vs as f32, shift as f32).map_err(|e| integrity(e.to_string()))?;
    let net = match r.u8()? {
        0 => None,
        1 => {
            let c = ColorNetConfig {
                feature_dim: r.u32()? as usize,
                hidden: r.u32()? as usize,
                hidden_layers: r.u32()? as usize,
                pe_freqs: r.u32()? as usize,
            };
            let n = r.count(payload.len())?;
            let params = r.f32s(n)?;
            Some(ColorNet::from_params(c, params).map_err(|e| integrity(e.to_string()))?)
        }
        f => return Err(integrity(format!("bad network flag {f}"))),
    };
    if r.pos != payload.len() {
        return Err(integrity("trailing bytes in payload"));
    }
    let field = RadianceField::new(density, color, net, activation, unit as f32)
        .map_err(|e| integrity(e.to_string()))?;
    Ok(Checkpoint { field, step, stage })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes the container and its JSON sidecar.
pub fn save_checkpoint<T: Real>(field: &RadianceField<T>, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    field.validate()?;
    write_atomic(path, &encode(field, meta.step, &meta.stage))?;
    let json = serde_json::to_string_pretty(meta).expect("metadata serializes");
    write_atomic(&sidecar_path(path), json.as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn load_checkpoint_meta(path: &Path) -> Result<CheckpointMeta> {
    let p = sidecar_path(path);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: p,
        message: e.to_string(),
    })
}
