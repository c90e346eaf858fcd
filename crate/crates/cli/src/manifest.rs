//! `<output>.manifest` sidecars: one `key=value` per line.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub params: Vec<(String, String)>,
    pub seeds: Vec<u64>,
    pub version: String,
    pub timestamp_unix: u64,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        let timestamp_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            command: command.to_string(),
            params: Vec::new(),
            seeds: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp_unix,
        }
    }

    pub fn param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.push((key.to_string(), value.to_string()));
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seeds.push(seed);
        self
    }

    pub fn render(&self) -> String {
        let mut out = format!("command={}\n", self.command);
        for (k, v) in &self.params {
            out.push_str(&format!("{k}={v}\n"));
        }
        if !self.seeds.is_empty() {
            let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
            out.push_str(&format!("seeds={}\n", seeds.join(",")));
        }
        out.push_str(&format!("version={}\n", self.version));
        out.push_str(&format!("timestamp_unix={}\n", self.timestamp_unix));
        out
    }

    /// Path of the sidecar for `output`.
    pub fn sidecar_path(output: &Path) -> PathBuf {
        let mut name = output.as_os_str().to_owned();
        name.push(".manifest");
        PathBuf::from(name)
    }

    pub fn write_for(&self, output: &Path) -> io::Result<PathBuf> {
        let path = Self::sidecar_path(output);
        fs::write(&path, self.render())?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_key_values() {
        let mut m = RunManifest::new("solve")
            .param("p", 0.5)
            .param("c", 5)
            .seed(3)
            .seed(4);
        m.timestamp_unix = 10;
        let text = m.render();
        assert!(text.starts_with("command=solve\np=0.5\nc=5\nseeds=3,4\nversion="));
        assert!(text.ends_with("timestamp_unix=10\n"));
        assert_eq!(
            RunManifest::sidecar_path(Path::new("out/a.csv")),
            PathBuf::from("out/a.csv.manifest")
        );
    }
}
