//! Self-describing JSON container for model files and attribution reports.
//! The layout is documented in `docs/formats.md`.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::{AttributionMap, ChannelScores, Selection};
use crate::models::{ArchName, ModelId, TrainedModel, MODEL_SCHEMA_VERSION};

pub const CONTAINER_FORMAT: &str = "squat-model";

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed container: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a {CONTAINER_FORMAT} container (format {0:?})")]
    WrongFormat(String),
    #[error("unsupported schema version {0}")]
    UnsupportedVersion(u32),
    #[error("expected a {expected} record, found {found}")]
    WrongRecord { expected: &'static str, found: &'static str },
}

/// Attribution results for one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub model: ModelId,
    pub arch: ArchName,
    /// Version tag of the explained model.
    pub model_version: String,
    pub map: AttributionMap,
    pub scores: ChannelScores,
    pub selections: Vec<Selection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Record {
    Model(TrainedModel),
    Attribution(AttributionReport),
}

impl Record {
    fn kind(&self) -> &'static str {
        match self {
            Record::Model(_) => "model",
            Record::Attribution(_) => "attribution",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Container {
    pub format: String,
    pub schema_version: u32,
    pub record: Record,
}

impl Container {
    pub fn new(record: Record) -> Self {
        Self {
            format: CONTAINER_FORMAT.to_string(),
            schema_version: MODEL_SCHEMA_VERSION,
            record,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("containers serialize");
        out.push(b'\n');
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
            schema_version: u32,
        }
        let header: Header = serde_json::from_slice(bytes)?;
        if header.format != CONTAINER_FORMAT {
            return Err(ContainerError::WrongFormat(header.format));
        }
        if header.schema_version != MODEL_SCHEMA_VERSION {
            return Err(ContainerError::UnsupportedVersion(header.schema_version));
        }
        Ok(serde_json::from_slice(bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ContainerError> {
        Ok(fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, ContainerError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<(), ContainerError> {
    Container::new(Record::Model(model.clone())).save(path)
}

pub fn load_model(path: &Path) -> Result<TrainedModel, ContainerError> {
    match Container::load(path)?.record {
        Record::Model(m) => Ok(m),
        other => Err(ContainerError::WrongRecord {
            expected: "model",
            found: other.kind(),
        }),
    }
}

pub fn save_attribution(report: &AttributionReport, path: &Path) -> Result<(), ContainerError> {
    Container::new(Record::Attribution(report.clone())).save(path)
}

pub fn load_attribution(path: &Path) -> Result<AttributionReport, ContainerError> {
    match Container::load(path)?.record {
        Record::Attribution(r) => Ok(r),
        other => Err(ContainerError::WrongRecord {
            expected: "attribution",
            found: other.kind(),
        }),
    }
}

/// Parameter vectors as base64 of consecutive little-endian IEEE-754 f64.
pub(crate) mod f64_blob {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn encode(values: &[f64]) -> String {
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        STANDARD.encode(bytes)
    }

    pub fn decode(text: &str) -> Result<Vec<f64>, String> {
        let bytes = STANDARD.decode(text).map_err(|e| e.to_string())?;
        if bytes.len() % 8 != 0 {
            return Err(format!("blob length {} is not a multiple of 8", bytes.len()));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn serialize<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&encode(values))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let text = String::deserialize(d)?;
        decode(&text).map_err(de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn blob_round_trips_bit_exact(values in proptest::collection::vec(any::<f64>(), 0..64)) {
            let back = f64_blob::decode(&f64_blob::encode(&values)).unwrap();
            prop_assert_eq!(values.len(), back.len());
            for (a, b) in values.iter().zip(&back) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn blob_layout_is_little_endian() {
        assert_eq!(f64_blob::encode(&[1.0]), "AAAAAAAA8D8=");
        assert!(f64_blob::decode("AAAA").is_err());
    }

    #[test]
    fn rejects_foreign_and_future_containers() {
        let foreign = br#"{"format":"other","schema_version":1,"record":{}}"#;
        assert!(matches!(Container::from_bytes(foreign), Err(ContainerError::WrongFormat(_))));
        let future = br#"{"format":"squat-model","schema_version":99,"record":{}}"#;
        assert!(matches!(Container::from_bytes(future), Err(ContainerError::UnsupportedVersion(99))));
    }
}
