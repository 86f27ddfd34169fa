//! The model container: one JSON document with a version, a fingerprint,
//! and a body holding everything `sample` needs.
//!
//! The fingerprint is the SHA-256 of the body's exact serialized bytes, so
//! any edit to the body (or to the fingerprint) is detected on load.

use std::path::Path;

use kgsynth_core::encoder::{Encoder, GmmOptions};
use kgsynth_core::gan::{TrainState, TrainStatus, TrainingConfig};
use kgsynth_core::knowledge::{KnowledgeBase, RuleSet};
use kgsynth_core::schema::TableSchema;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBody {
    /// Raw (unmasked) schema of the training data.
    pub schema: TableSchema,
    pub rules: RuleSet,
    pub rules_hash: String,
    pub gmm: GmmOptions,
    pub training: TrainingConfig,
    /// Layout plus the fitted continuous encodings.
    pub encoder: Encoder,
    /// Networks, optimizer moments, condition law, history and the
    /// accountant's final state.
    pub state: TrainState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub version: u32,
    pub fingerprint: String,
    pub body: ModelBody,
}

#[derive(Serialize)]
struct Container<'a> {
    format_version: u32,
    fingerprint: &'a str,
    body: &'a RawValue,
}

#[derive(Deserialize)]
struct Header {
    format_version: u32,
}

#[derive(Deserialize)]
struct ContainerIn<'a> {
    fingerprint: String,
    #[serde(borrow)]
    body: &'a RawValue,
}

fn digest(bytes: &str) -> String {
    hex::encode(Sha256::digest(bytes.as_bytes()))
}

impl ModelArtifact {
    pub fn new(body: ModelBody) -> CliResult<Self> {
        let text = body_json(&body)?;
        Ok(Self {
            version: ARTIFACT_VERSION,
            fingerprint: digest(&text),
            body,
        })
    }

    pub fn budget_exhausted(&self) -> bool {
        self.body.state.status == TrainStatus::BudgetExhausted
    }

    pub fn knowledge_base(&self) -> CliResult<KnowledgeBase> {
        Ok(KnowledgeBase::new(self.body.rules.clone(), &self.body.schema)?)
    }

    pub fn to_json(&self) -> CliResult<String> {
        let text = body_json(&self.body)?;
        let raw = RawValue::from_string(text).map_err(|e| CliError::Artifact(e.to_string()))?;
        let container = Container {
            format_version: self.version,
            fingerprint: &self.fingerprint,
            body: &raw,
        };
        serde_json::to_string(&container).map_err(|e| CliError::Artifact(e.to_string()))
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        let corrupt = |e: serde_json::Error| CliError::Artifact(format!("unreadable artifact: {e}"));
        let header: Header = serde_json::from_str(text).map_err(corrupt)?;
        if header.format_version != ARTIFACT_VERSION {
            return Err(CliError::Artifact(format!(
                "artifact format version {} is not supported (this build reads version {ARTIFACT_VERSION})",
                header.format_version
            )));
        }
        let container: ContainerIn = serde_json::from_str(text).map_err(corrupt)?;
        let actual = digest(container.body.get());
        if actual != container.fingerprint {
            return Err(CliError::Artifact(format!(
                "fingerprint mismatch: stored {}, computed {actual}",
                container.fingerprint
            )));
        }
        let body: ModelBody = serde_json::from_str(container.body.get()).map_err(corrupt)?;
        Ok(Self {
            version: header.format_version,
            fingerprint: container.fingerprint,
            body,
        })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_json()?)
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read model {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

fn body_json(body: &ModelBody) -> CliResult<String> {
    serde_json::to_string(body).map_err(|e| CliError::Artifact(format!("cannot serialize model: {e}")))
}
