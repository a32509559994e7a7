//! Bit-exact checkpoint files.
//!
//! A checkpoint is a pretty-printed JSON envelope. Every weight matrix and
//! scaling vector is stored as base64 of its row-major little-endian `f64`
//! bytes; the optional mask as base64 of one `0`/`1` byte per weight. A
//! SHA-256 over all decoded payload bytes guards against corruption.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::net::{Mask, MaskLayer, Network};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Run metadata stored alongside the weights.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub seed: Option<u64>,
    pub config_digest: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    version: u32,
    dims: Vec<usize>,
    activation: String,
    weights: Vec<String>,
    scaling: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_digest: Option<String>,
    checksum: String,
}

fn f64_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn mask_bytes(layer: &MaskLayer) -> Vec<u8> {
    layer.bits().iter().map(|&k| u8::from(k)).collect()
}

pub fn to_string(net: &Network, mask: Option<&Mask>, meta: &CheckpointMeta) -> Result<String> {
    if let Some(m) = mask {
        m.check_matches(net.weights())?;
    }
    let mut hasher = Sha256::new();
    let mut encode = |bytes: Vec<u8>| {
        hasher.update(&bytes);
        B64.encode(bytes)
    };
    let weights = net
        .weights()
        .iter()
        .map(|w| encode(f64_bytes(w.as_slice())))
        .collect();
    let scaling = net.scaling().iter().map(|g| encode(f64_bytes(g))).collect();
    let mask = mask.map(|m| m.layers().iter().map(|l| encode(mask_bytes(l))).collect());
    let env = Envelope {
        version: CHECKPOINT_VERSION,
        dims: net.dims().to_vec(),
        activation: "relu".into(),
        weights,
        scaling,
        mask,
        seed: meta.seed,
        config_digest: meta.config_digest.clone(),
        checksum: hex::encode(hasher.finalize()),
    };
    let mut text = serde_json::to_string_pretty(&env).map_err(|e| Error::Parse(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn from_str(text: &str) -> Result<(Network, Option<Mask>, CheckpointMeta)> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    let version = value
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::CorruptCheckpoint("missing version".into()))?;
    if version != u64::from(CHECKPOINT_VERSION) {
        return Err(Error::CheckpointVersion {
            found: version as u32,
            expected: CHECKPOINT_VERSION,
        });
    }
    let env: Envelope =
        serde_json::from_value(value).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    if env.activation != "relu" {
        return Err(Error::CorruptCheckpoint(format!(
            "unsupported activation {:?}",
            env.activation
        )));
    }
    if env.dims.len() < 2 || env.weights.len() != env.dims.len() - 1 {
        return Err(Error::CorruptCheckpoint(
            "dims and weight count disagree".into(),
        ));
    }

    let mut hasher = Sha256::new();
    let mut decode = |s: &str, expected_len: usize, what: &str| -> Result<Vec<u8>> {
        let bytes = B64
            .decode(s)
            .map_err(|e| Error::CorruptCheckpoint(format!("{what}: {e}")))?;
        if bytes.len() != expected_len {
            return Err(Error::CorruptCheckpoint(format!(
                "{what}: {} bytes, expected {expected_len}",
                bytes.len()
            )));
        }
        hasher.update(&bytes);
        Ok(bytes)
    };
    let to_f64 = |bytes: Vec<u8>| -> Vec<f64> {
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect()
    };

    let mut weights = Vec::with_capacity(env.weights.len());
    for (l, (s, pair)) in env.weights.iter().zip(env.dims.windows(2)).enumerate() {
        let (r, c) = (pair[0], pair[1]);
        let bytes = decode(s, r * c * 8, &format!("weights[{l}]"))?;
        weights.push(Matrix::from_vec(r, c, to_f64(bytes))?);
    }
    let hidden = &env.dims[1..env.dims.len() - 1];
    if env.scaling.len() != hidden.len() {
        return Err(Error::CorruptCheckpoint(
            "scaling count disagrees with dims".into(),
        ));
    }
    let mut scaling = Vec::with_capacity(hidden.len());
    for (j, (s, &n)) in env.scaling.iter().zip(hidden).enumerate() {
        scaling.push(to_f64(decode(s, n * 8, &format!("scaling[{j}]"))?));
    }
    let mask = match &env.mask {
        None => None,
        Some(layers) => {
            if layers.len() != weights.len() {
                return Err(Error::CorruptCheckpoint("mask layer count".into()));
            }
            let mut out = Vec::with_capacity(layers.len());
            for (l, (s, w)) in layers.iter().zip(&weights).enumerate() {
                let bytes = decode(s, w.rows() * w.cols(), &format!("mask[{l}]"))?;
                if bytes.iter().any(|&b| b > 1) {
                    return Err(Error::CorruptCheckpoint(format!(
                        "mask[{l}]: non-binary byte"
                    )));
                }
                out.push(MaskLayer::from_bits(
                    w.rows(),
                    w.cols(),
                    bytes.into_iter().map(|b| b == 1).collect(),
                )?);
            }
            Some(Mask::from_layers(out))
        }
    };
    let digest = hex::encode(hasher.finalize());
    if digest != env.checksum {
        return Err(Error::CorruptCheckpoint("checksum mismatch".into()));
    }
    let net = Network::new(weights, scaling)
        .map_err(|e| Error::CorruptCheckpoint(format!("inconsistent shapes: {e}")))?;
    let meta = CheckpointMeta {
        seed: env.seed,
        config_digest: env.config_digest,
    };
    Ok((net, mask, meta))
}

/// Writes the checkpoint via a temporary file and rename, so readers never see a partial file.
pub fn save_checkpoint(
    net: &Network,
    mask: Option<&Mask>,
    meta: &CheckpointMeta,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let text = to_string(net, mask, meta)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Network, Option<Mask>, CheckpointMeta)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text)
}
