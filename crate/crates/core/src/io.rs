//! Artifact headers and JSON-lines helpers shared by every on-disk format.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Lines, Write};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("malformed artifact: {0}")]
    Format(String),
}

/// First line (or top-level fields) of every artifact.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArtifactHeader<T> {
    pub kind: String,
    pub version: u32,
    pub config_hash: String,
    #[serde(flatten)]
    pub body: T,
}

impl<T> ArtifactHeader<T> {
    pub fn new(kind: &str, config_hash: &str, body: T) -> Self {
        ArtifactHeader {
            kind: kind.to_string(),
            version: FORMAT_VERSION,
            config_hash: config_hash.to_string(),
            body,
        }
    }

    pub fn check_kind(&self, kind: &str) -> Result<(), IoError> {
        if self.kind != kind {
            return Err(IoError::Format(format!(
                "expected a `{kind}` artifact, found `{}`",
                self.kind
            )));
        }
        if self.version != FORMAT_VERSION {
            return Err(IoError::Format(format!(
                "unsupported {kind} version {}",
                self.version
            )));
        }
        Ok(())
    }
}

pub fn write_json_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<(), IoError> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_header<R: BufRead, T: DeserializeOwned>(
    lines: &mut Lines<R>,
    kind: &str,
) -> Result<ArtifactHeader<T>, IoError> {
    let first = lines
        .next()
        .ok_or_else(|| IoError::Format(format!("empty `{kind}` file")))??;
    let header: ArtifactHeader<T> = serde_json::from_str(&first)?;
    header.check_kind(kind)?;
    Ok(header)
}
