//! Config layering and the JSON manifests written next to every artifact.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use dsdiora::train::short_hash;
use dsdiora::{Error, Result};

/// Reads a TOML config, or returns the defaults when no file is given.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_owned(),
        line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
        message: e.message().to_owned(),
    })
}

/// Hash of any serializable config, in the same form as the training hash.
pub fn hash_of<T: Serialize>(config: &T) -> String {
    short_hash(serde_json::to_string(config).expect("config serializes").as_bytes())
}

/// Sidecar path for a file artifact: `pred.txt` -> `pred.txt.manifest.json`.
pub fn sidecar(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}

pub struct Manifest {
    pub command: &'static str,
    pub config_hash: String,
    pub config: Value,
    pub vocab_hash: Option<String>,
    pub inputs: Vec<(&'static str, PathBuf)>,
    pub outputs: Vec<PathBuf>,
}

impl Manifest {
    pub fn new(command: &'static str, config_hash: String, config: Value) -> Self {
        Manifest {
            command,
            config_hash,
            config,
            vocab_hash: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let inputs: serde_json::Map<String, Value> = self
            .inputs
            .iter()
            .map(|(k, p)| ((*k).to_owned(), json!(p.display().to_string())))
            .collect();
        let value = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "config_hash": self.config_hash,
            "vocab_hash": self.vocab_hash,
            "config": self.config,
            "inputs": inputs,
            "outputs": self.outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        });
        let text = serde_json::to_string_pretty(&value).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::Io {
            path: path.to_owned(),
            source: e,
        })
    }
}

/// `(config_hash, vocab_hash)` recorded in an artifact's sidecar, if any.
pub fn read_sidecar(artifact: &Path) -> Result<Option<(Option<String>, Option<String>)>> {
    let path = sidecar(artifact);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let get = |k: &str| v.get(k).and_then(Value::as_str).map(str::to_owned);
    Ok(Some((get("config_hash"), get("vocab_hash"))))
}
