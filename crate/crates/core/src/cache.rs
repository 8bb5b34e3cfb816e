//! Binary cache of the radial kernel tables.
//!
//! Layout (little endian): a 32-byte header (8-byte magic, u32 version, u32
//! dimension, 16-byte key), then length-prefixed f64 arrays, then the first
//! 8 bytes of the SHA-256 of the array section. The key hashes the model
//! parameters, the truncation radius and the table resolution. A cache that
//! fails any check is ignored and rebuilt.

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel::{Kernel, KernelResolution, RadialTables, Truncation};
use crate::model::PotentialModel;
use crate::tables::{Pchip, RadialTable};
use crate::util::UniformTable;

const MAGIC: &[u8; 8] = b"WBRWKTAB";
const VERSION: u32 = 2;

pub fn cache_key<const D: usize, M: PotentialModel<D>>(
    model: &M,
    trunc: &Truncation,
    res: &KernelResolution,
) -> [u8; 16] {
    let text = format!(
        "{}|R={:e}|knots={},{}|xi={:e},{:e}|v{VERSION}",
        model.params_key(),
        trunc.radius,
        res.radial_knots,
        res.abel_knots,
        res.xi_spacing,
        res.z_max
    );
    let d = Sha256::digest(text.as_bytes());
    let mut k = [0u8; 16];
    k.copy_from_slice(&d[..16]);
    k
}

fn put_array(buf: &mut Vec<u8>, a: &[f64]) {
    buf.extend_from_slice(&(a.len() as u64).to_le_bytes());
    for v in a {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(dim: usize, key: &[u8; 16], t: &RadialTables) -> Vec<u8> {
    let mut body = Vec::new();
    put_array(&mut body, &t.envelope.r);
    put_array(&mut body, &t.envelope.cdf);
    put_array(&mut body, &[t.envelope.mass, t.envelope_mass]);
    put_array(&mut body, t.abel.xs());
    put_array(&mut body, t.abel.ys());
    put_array(&mut body, &[t.xi.x0, t.xi.dx]);
    put_array(&mut body, &t.xi.values);
    put_array(&mut body, &t.kinks);
    let mut out = Vec::with_capacity(body.len() + 40);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(key);
    out.extend_from_slice(&body);
    out.extend_from_slice(&Sha256::digest(&body)[..8]);
    out
}

pub fn decode(bytes: &[u8], dim: usize, key: &[u8; 16]) -> Result<RadialTables> {
    let bad = |m: &str| Error::Format(format!("kernel cache: {m}"));
    if bytes.len() < 40 {
        return Err(bad("truncated"));
    }
    if &bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad("version mismatch"));
    }
    let d = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes"));
    if d as usize != dim {
        return Err(bad("dimension mismatch"));
    }
    if &bytes[16..32] != key {
        return Err(bad("key mismatch"));
    }
    let body = &bytes[32..bytes.len() - 8];
    if Sha256::digest(body)[..8] != bytes[bytes.len() - 8..] {
        return Err(bad("checksum mismatch"));
    }
    let mut pos = 0usize;
    let mut arrays: Vec<Vec<f64>> = Vec::with_capacity(8);
    while pos < body.len() {
        if pos + 8 > body.len() {
            return Err(bad("truncated array header"));
        }
        let n = u64::from_le_bytes(body[pos..pos + 8].try_into().expect("8 bytes")) as usize;
        pos += 8;
        let end = n
            .checked_mul(8)
            .and_then(|b| pos.checked_add(b))
            .filter(|&e| e <= body.len())
            .ok_or_else(|| bad("truncated array"))?;
        arrays.push(
            body[pos..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        );
        pos = end;
    }
    if arrays.len() != 8 || arrays[2].len() != 2 || arrays[5].len() != 2 {
        return Err(bad("unexpected array layout"));
    }
    let mut it = arrays.into_iter();
    let r = it.next().expect("8 arrays");
    let cdf = it.next().expect("8 arrays");
    let masses = it.next().expect("8 arrays");
    let ax = it.next().expect("8 arrays");
    let ay = it.next().expect("8 arrays");
    let grid = it.next().expect("8 arrays");
    let xi = it.next().expect("8 arrays");
    let kinks = it.next().expect("8 arrays");
    Ok(RadialTables {
        envelope: RadialTable::from_parts(r, cdf, masses[0])?,
        envelope_mass: masses[1],
        abel: Pchip::new(ax, ay)?,
        xi: UniformTable::new(grid[0], grid[1], xi)?,
        kinks,
    })
}

/// What happened to the cache file while building a kernel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CacheStatus {
    Disabled,
    Hit,
    /// the file was missing or invalid; tables were rebuilt and rewritten
    Rebuilt(String),
}

/// Kernel for `model`, reading tables from `path` when valid and writing
/// them otherwise. Write failures are not fatal.
pub fn load_or_build<const D: usize, M: PotentialModel<D>>(
    model: M,
    trunc: Truncation,
    res: KernelResolution,
    path: Option<&Path>,
) -> Result<(Kernel<D, M>, CacheStatus)> {
    let Some(path) = path else {
        return Ok((Kernel::with_resolution(model, trunc, res)?, CacheStatus::Disabled));
    };
    if model.radial_profile(0.0, 0.0).is_none() {
        return Ok((Kernel::with_resolution(model, trunc, res)?, CacheStatus::Disabled));
    }
    let key = cache_key::<D, M>(&model, &trunc, &res);
    let reason = match std::fs::read(path) {
        Ok(bytes) => match decode(&bytes, D, &key) {
            Ok(tables) => return Ok((Kernel::from_tables(model, trunc, res, tables), CacheStatus::Hit)),
            Err(e) => e.to_string(),
        },
        Err(e) => format!("kernel cache unreadable: {e}"),
    };
    let kernel = Kernel::with_resolution(model, trunc, res)?;
    if let Some(t) = kernel.radial_tables() {
        let bytes = encode(D, &key, t);
        let tmp = path.with_extension("tmp");
        let written = std::fs::File::create(&tmp)
            .and_then(|mut f| f.write_all(&bytes))
            .and_then(|_| std::fs::rename(&tmp, path));
        if let Err(e) = written {
            return Ok((kernel, CacheStatus::Rebuilt(format!("{reason}; write failed: {e}"))));
        }
    }
    Ok((kernel, CacheStatus::Rebuilt(reason)))
}
