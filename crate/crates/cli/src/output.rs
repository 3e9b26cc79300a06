use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pixdisc::{Error, Result};
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Clone, Debug, Serialize)]
pub struct DatasetDigest {
    pub split: String,
    pub images: usize,
    pub digest: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Value,
    pub datasets: Vec<DatasetDigest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub codebook_digest: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub version: &'static str,
    pub duration_secs: f64,
}

pub struct ManifestBuilder {
    started: Instant,
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn new(subcommand: &str, config: &impl Serialize) -> Self {
        ManifestBuilder {
            started: Instant::now(),
            manifest: RunManifest {
                subcommand: subcommand.to_string(),
                config: serde_json::to_value(config).unwrap_or(Value::Null),
                datasets: Vec::new(),
                codebook_digest: None,
                seed: None,
                version: env!("CARGO_PKG_VERSION"),
                duration_secs: 0.0,
            },
        }
    }

    pub fn dataset(&mut self, split: &str, images: usize, digest: String) {
        self.manifest.datasets.push(DatasetDigest {
            split: split.to_string(),
            images,
            digest,
        });
    }

    pub fn codebook(&mut self, digest: String) {
        self.manifest.codebook_digest = Some(digest);
    }

    pub fn seed(&mut self, seed: u64) {
        self.manifest.seed = Some(seed);
    }

    pub fn finish(&self) -> RunManifest {
        let mut m = self.manifest.clone();
        m.duration_secs = self.started.elapsed().as_secs_f64();
        m
    }
}

/// Writes through a temporary file in the destination directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut builder = tempfile::Builder::new();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(std::fs::Permissions::from_mode(0o644));
    }
    let mut tmp = builder.tempfile_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// `{"manifest": ..., "report": ...}` as pretty JSON.
pub fn write_report(path: &Path, manifest: &RunManifest, report: &impl Serialize) -> Result<()> {
    let doc = json!({ "manifest": manifest, "report": report });
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// CSV outputs get their manifest in a sibling `<name>.manifest.json`.
pub fn write_csv(path: &Path, manifest: &RunManifest, csv: &str) -> Result<()> {
    write_atomic(path, csv.as_bytes())?;
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    write_atomic(&path.with_file_name(name), text.as_bytes())
}
