//! Versioned JSON container for model weights.
//!
//! Floats are written in shortest round-trip form and parsed with correct
//! rounding, so save → load is bit-exact.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const FORMAT_TAG: &str = "rmlab-model";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Policy,
    Gold,
    Reward,
}

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    format: &'a str,
    version: u32,
    kind: ModelKind,
    model: &'a T,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
    kind: ModelKind,
}

#[derive(Deserialize)]
struct EnvelopeIn<T> {
    model: T,
}

pub fn to_bytes<T: Serialize>(kind: ModelKind, model: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec(&EnvelopeOut {
        format: FORMAT_TAG,
        version: MODEL_FORMAT_VERSION,
        kind,
        model,
    })?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn from_bytes<T: DeserializeOwned>(kind: ModelKind, bytes: &[u8]) -> Result<T> {
    let header: Header = serde_json::from_slice(bytes).map_err(|e| Error::Parse {
        line: e.line(),
        msg: e.to_string(),
    })?;
    if header.format != FORMAT_TAG {
        return Err(Error::Parse {
            line: 1,
            msg: format!("not a model file (format tag `{}`)", header.format),
        });
    }
    if header.version != MODEL_FORMAT_VERSION {
        return Err(Error::Version {
            found: header.version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    if header.kind != kind {
        return Err(Error::input(format!(
            "expected a {kind:?} model, found {:?}",
            header.kind
        )));
    }
    let env: EnvelopeIn<T> = serde_json::from_slice(bytes).map_err(|e| Error::Parse {
        line: e.line(),
        msg: e.to_string(),
    })?;
    Ok(env.model)
}

pub fn save_model<T: Serialize>(path: &Path, kind: ModelKind, model: &T) -> Result<Vec<u8>> {
    let bytes = to_bytes(kind, model)?;
    fs::write(path, &bytes)?;
    Ok(bytes)
}

pub fn load_model<T: DeserializeOwned>(path: &Path, kind: ModelKind) -> Result<T> {
    from_bytes(kind, &fs::read(path)?)
}

/// Hex SHA-256 of a byte string.
pub fn fingerprint(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
