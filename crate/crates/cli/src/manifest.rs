use canon_sampler::model_file::ModelFile;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// `sha256` of the canonical JSON of a model.
pub fn model_hash(file: &ModelFile) -> String {
    let digest = Sha256::digest(file.canonical_json().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// `meta.json` of an output directory.
#[derive(Serialize)]
pub struct RunManifest<P: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    /// Arguments reproducing the run, fully resolved.
    pub argv: Vec<String>,
    pub seed: u64,
    pub model: ModelFile,
    pub model_hash: String,
    pub outputs: Vec<String>,
    pub plan: P,
}

impl<P: Serialize> RunManifest<P> {
    pub fn new(command: &str, argv: Vec<String>, seed: u64, model: ModelFile, outputs: Vec<String>, plan: P) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            argv,
            seed,
            model_hash: model_hash(&model),
            model,
            outputs,
            plan,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}
