//! `MHD1` head checkpoints and their JSON sidecars.
//!
//! Layout: magic `MHD1`, u32 header length, JSON header
//! `{d, d_u, use_context, dropout_rate}`, then the f64 parameters of W_z,
//! W_1, b_1, W_2, b_2 (row-major, little-endian).

use std::fs::{self, File};
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use maple_core::{Checkpoint, HeadConfig, HeadParams};
use serde::{Deserialize, Serialize};

use crate::emb::write_atomic;
use crate::error::{MapleError, Result};

pub const MAGIC: &[u8; 4] = b"MHD1";

pub fn write_head_to(mut w: impl Write, config: &HeadConfig, params: &HeadParams) -> std::io::Result<()> {
    let header = serde_json::to_vec(config).expect("head config serializes");
    w.write_all(MAGIC)?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    for x in params.as_slice() {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()
}

pub fn read_head_from(mut r: impl Read) -> Result<(HeadConfig, HeadParams)> {
    let bad = |msg: &str| MapleError::Data(msg.to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated checkpoint"))?;
    if &magic != MAGIC {
        return Err(bad("not an MHD1 checkpoint"));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len).map_err(|_| bad("truncated checkpoint header"))?;
    let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut header).map_err(|_| bad("truncated checkpoint header"))?;
    let config: HeadConfig = serde_json::from_slice(&header).map_err(|e| MapleError::Data(format!("checkpoint header: {e}")))?;
    config.validate()?;
    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(|e| MapleError::Data(e.to_string()))?;
    if body.len() != config.param_count() * 8 {
        return Err(MapleError::Data(format!(
            "checkpoint holds {} bytes of parameters, header implies {}",
            body.len(),
            config.param_count() * 8
        )));
    }
    let data = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let params = HeadParams::from_vec(&config, data)?;
    Ok((config, params))
}

pub fn write_head(path: &Path, config: &HeadConfig, params: &HeadParams) -> Result<()> {
    write_atomic(path, |w| write_head_to(w, config, params))
}

pub fn read_head(path: &Path) -> Result<(HeadConfig, HeadParams)> {
    let file = File::open(path).map_err(|e| MapleError::io(path, e))?;
    read_head_from(BufReader::new(file)).map_err(|e| match e {
        MapleError::Data(msg) => MapleError::data(path, msg),
        other => other,
    })
}

/// Metadata stored next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub fold: usize,
    pub test_prompts: Vec<String>,
    pub regime: String,
    pub dev_qwk: Option<f64>,
    pub tasks_seen: usize,
    /// Hex fingerprint of the training configuration.
    pub config_hash: String,
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint, sidecar: &Sidecar) -> Result<()> {
    write_head(path, &checkpoint.head, &checkpoint.params)?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    fs::write(&side, json + "\n").map_err(|e| MapleError::io(&side, e))
}

/// Loads a checkpoint; the sidecar is optional.
pub fn load_checkpoint(path: &Path) -> Result<(Checkpoint, Option<Sidecar>)> {
    let (head, params) = read_head(path)?;
    let side = sidecar_path(path);
    let sidecar: Option<Sidecar> = match fs::read_to_string(&side) {
        Ok(text) => Some(serde_json::from_str(&text).map_err(|e| MapleError::data(&side, e))?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(MapleError::io(&side, e)),
    };
    let config_hash = sidecar.as_ref().and_then(|s| u64::from_str_radix(&s.config_hash, 16).ok()).unwrap_or(0);
    let checkpoint = Checkpoint {
        params,
        head,
        dev_qwk: sidecar.as_ref().and_then(|s| s.dev_qwk),
        tasks_seen: sidecar.as_ref().map_or(0, |s| s.tasks_seen),
        config_hash,
    };
    Ok((checkpoint, sidecar))
}
