use std::io;
use std::path::{Path, PathBuf};

use fractalp_core::config::Config;
use serde_json::json;
use sha2::{Digest, Sha256};

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects output files and writes them, plus a replay manifest, on finish.
pub struct Sink {
    dir: PathBuf,
    command: String,
    config: Config,
    files: Vec<(String, String)>,
}

impl Sink {
    pub fn new(dir: &Path, command: &str, config: &Config) -> Self {
        Sink {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            config: config.clone(),
            files: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, contents: String) {
        self.files.push((name.into(), contents));
    }

    pub fn json(&mut self, name: &str, value: &impl serde::Serialize) -> String {
        let text = serde_json::to_string_pretty(value).expect("serializable");
        self.add(name, text.clone());
        text
    }

    pub fn finish(self) -> io::Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        let config_json = serde_json::to_string(&self.config).expect("serializable");
        let mut outputs = Vec::new();
        for (name, contents) in &self.files {
            std::fs::write(self.dir.join(name), contents)?;
            outputs.push(json!({ "file": name, "sha256": sha256_hex(contents.as_bytes()) }));
        }
        let manifest = json!({
            "command": self.command,
            "config": self.config,
            "config_hash": sha256_hex(config_json.as_bytes()),
            "seed": self.config.seed,
            "versions": { "fractalp": env!("CARGO_PKG_VERSION") },
            "outputs": outputs,
        });
        let text = serde_json::to_string_pretty(&manifest).expect("serializable");
        std::fs::write(self.dir.join(format!("manifest_{}.json", self.command)), text)
    }
}
