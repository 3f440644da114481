//! JSON-lines I/O with line-numbered errors and a provenance header.
//!
//! Every output file starts with one `{"meta": ...}` line carrying the tool
//! version and the config and prompt checksums; readers of pipeline outputs
//! skip it.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Provenance stamped into every output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub tool_version: String,
    pub config_checksum: String,
    pub prompt_checksum: String,
}

impl RunMeta {
    pub fn new(config_checksum: String) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            config_checksum,
            prompt_checksum: redraft_core::prompts::assets_checksum(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MetaLine {
    meta: RunMeta,
}

/// Read typed records with their 1-based line numbers, skipping a leading
/// meta line when present. Errors carry `path:line`.
pub fn read_jsonl_numbered<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        if index == 0 && serde_json::from_str::<MetaLine>(&line).is_ok() {
            continue;
        }
        let record: T = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: bad record", path.display(), index + 1))?;
        out.push((index + 1, record));
    }
    Ok(out)
}

/// Read typed records, skipping a leading meta line when present.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    Ok(read_jsonl_numbered(path)?
        .into_iter()
        .map(|(_, record)| record)
        .collect())
}

/// Extract one string key per existing output line, for resume accounting.
pub fn read_existing_keys<F>(path: &Path, key_of: F) -> Result<Vec<String>>
where
    F: Fn(&serde_json::Value) -> Option<String>,
{
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut keys = Vec::new();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if index == 0 && serde_json::from_str::<MetaLine>(&line).is_ok() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: bad record", path.display(), index + 1))?;
        if let Some(key) = key_of(&value) {
            keys.push(key);
        }
    }
    Ok(keys)
}

/// Line-oriented writer that stamps the meta header exactly once, at file
/// creation. Reopening appends.
pub struct JsonlWriter {
    path: PathBuf,
    writer: BufWriter<File>,
}

impl JsonlWriter {
    /// Create the file with a meta header, failing if it already exists.
    pub fn create(path: &Path, meta: &RunMeta) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new()
            .create_new(true)
            .write(true)
            .open(path)
            .with_context(|| format!("creating {}", path.display()))?;
        let mut writer = Self {
            path: path.to_owned(),
            writer: BufWriter::new(file),
        };
        writer.write_line(&MetaLine { meta: meta.clone() })?;
        Ok(writer)
    }

    /// Open for appending; the file must already exist.
    pub fn append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .with_context(|| format!("appending to {}", path.display()))?;
        Ok(Self {
            path: path.to_owned(),
            writer: BufWriter::new(file),
        })
    }

    /// Create or append depending on prior existence plus the resume flag.
    pub fn open(path: &Path, meta: &RunMeta, resume: bool) -> Result<Self> {
        if path.exists() {
            if !resume {
                bail!(
                    "output {} already exists; pass --resume to continue or delete it",
                    path.display()
                );
            }
            Self::append(path)
        } else {
            Self::create(path, meta)
        }
    }

    /// Serialize one record and flush so interrupts leave a clean prefix.
    pub fn write_line<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.writer, record)?;
        self.writer.write_all(b"\n")?;
        self.writer
            .flush()
            .with_context(|| format!("flushing {}", self.path.display()))?;
        Ok(())
    }
}

/// Write a whole JSON document (reports, stats) with embedded meta.
pub fn write_json_report<T: Serialize>(path: &Path, meta: &RunMeta, body: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut value = serde_json::to_value(body)?;
    if let Some(object) = value.as_object_mut() {
        object.insert("meta".into(), serde_json::to_value(meta)?);
    }
    let text = serde_json::to_string_pretty(&value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
