//! Binary checkpoint with a JSON schedule sidecar.
//!
//! Layout (little-endian): `"CFCK"`, version `u32 = 1`, descriptor length `u32`,
//! descriptor bytes, parameter count `u64`, parameters as `f32`, sidecar length
//! `u32`, sidecar JSON `{T, beta_1, beta_T, eta, train_seed}`.

use serde::{Deserialize, Serialize};

use super::{DenoiserParams, ARCH_DESCRIPTOR, PARAM_COUNT};
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

const MAGIC: &[u8; 4] = b"CFCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    #[serde(rename = "T")]
    pub timesteps: usize,
    pub beta_1: f64,
    #[serde(rename = "beta_T")]
    pub beta_t: f64,
    pub eta: f64,
    pub train_seed: u64,
}

impl CheckpointMeta {
    pub fn new(sched: &NoiseSchedule, train_seed: u64) -> Self {
        let c = sched.config();
        Self {
            timesteps: c.timesteps,
            beta_1: c.beta_start,
            beta_t: c.beta_end,
            eta: c.eta,
            train_seed,
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.timesteps, self.beta_1, self.beta_t, self.eta)
    }
}

/// Serialise parameters and schedule. Parameters are stored as `f32`.
pub fn save_checkpoint(params: &DenoiserParams, meta: &CheckpointMeta) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 4 * PARAM_COUNT);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ARCH_DESCRIPTOR.len() as u32).to_le_bytes());
    out.extend_from_slice(ARCH_DESCRIPTOR.as_bytes());
    out.extend_from_slice(&(PARAM_COUNT as u64).to_le_bytes());
    for &v in params.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let sidecar = serde_json::to_vec(meta).expect("metadata serialises");
    out.extend_from_slice(&(sidecar.len() as u32).to_le_bytes());
    out.extend_from_slice(&sidecar);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let left = self.bytes.len() - self.pos;
        if left < n {
            return Err(Error::parse(
                self.pos,
                format!("truncated {what}: expected {n} bytes, found {left}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<(DenoiserParams, CheckpointMeta)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::parse(0, "bad magic, expected CFCK"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::parse(4, format!("unsupported version {version}")));
    }
    let dlen = r.u32("descriptor length")? as usize;
    let at = r.pos;
    let desc = r.take(dlen, "descriptor")?;
    if desc != ARCH_DESCRIPTOR.as_bytes() {
        return Err(Error::parse(
            at,
            format!("architecture mismatch: {}", String::from_utf8_lossy(desc)),
        ));
    }
    let at = r.pos;
    let count = r.u64("parameter count")?;
    if count != PARAM_COUNT as u64 {
        return Err(Error::parse(
            at,
            format!("expected {PARAM_COUNT} parameters, header says {count}"),
        ));
    }
    let at = r.pos;
    let raw = r.take(4 * PARAM_COUNT, "parameters")?;
    let values: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let params = DenoiserParams::from_values(values).map_err(|_| Error::parse(at, "non-finite parameter"))?;
    let slen = r.u32("sidecar length")? as usize;
    let at = r.pos;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(slen, "sidecar")?)
        .map_err(|e| Error::parse(at, format!("bad sidecar: {e}")))?;
    if r.pos != bytes.len() {
        return Err(Error::parse(r.pos, "trailing bytes after sidecar"));
    }
    meta.schedule().map_err(|e| Error::parse(at, format!("invalid schedule: {e}")))?;
    Ok((params, meta))
}
