//! Per-item checkpointing. One append-only JSONL file per stage: a header
//! binding the checkpoint to a config checksum, then one line per completed
//! item id. A run resumes only when the checksum still matches.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Curate,
    Rubrics,
    Synthesize,
    Reward,
    Bench,
    Patterns,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Curate => "curate",
            Stage::Rubrics => "rubrics",
            Stage::Synthesize => "synthesize",
            Stage::Reward => "reward",
            Stage::Bench => "bench",
            Stage::Patterns => "patterns",
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    stage: Stage,
    config_checksum: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct DoneLine {
    done: String,
}

#[derive(Debug)]
pub struct Checkpoint {
    path: PathBuf,
    file: File,
    completed: HashSet<String>,
}

impl Checkpoint {
    pub fn path_for(dir: &Path, stage: Stage) -> PathBuf {
        dir.join(format!("{}.checkpoint.jsonl", stage.as_str()))
    }

    /// Open or create the stage checkpoint. An existing checkpoint requires
    /// `resume` and a matching config checksum.
    pub fn open(dir: &Path, stage: Stage, config_checksum: &str, resume: bool) -> Result<Self> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating checkpoint dir {}", dir.display()))?;
        let path = Self::path_for(dir, stage);
        let mut completed = HashSet::new();

        if path.exists() {
            if !resume {
                bail!(
                    "checkpoint {} already exists; pass --resume to continue or delete it to start over",
                    path.display()
                );
            }
            let reader = BufReader::new(
                File::open(&path).with_context(|| format!("opening {}", path.display()))?,
            );
            let mut lines = reader.lines();
            let header_line = lines
                .next()
                .transpose()?
                .with_context(|| format!("checkpoint {} is empty", path.display()))?;
            let header: Header = serde_json::from_str(&header_line)
                .with_context(|| format!("checkpoint {} has a bad header", path.display()))?;
            if header.config_checksum != config_checksum {
                bail!(
                    "refusing to resume: config changed since checkpoint {} was written \
                     (checkpoint {}, current {})",
                    path.display(),
                    header.config_checksum,
                    config_checksum
                );
            }
            if header.stage != stage {
                bail!(
                    "checkpoint {} belongs to stage {}",
                    path.display(),
                    header.stage.as_str()
                );
            }
            for line in lines {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let done: DoneLine = serde_json::from_str(&line)
                    .with_context(|| format!("bad line in checkpoint {}", path.display()))?;
                completed.insert(done.done);
            }
        }

        let fresh = !path.exists();
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .with_context(|| format!("opening {}", path.display()))?;
        if fresh {
            let header = Header {
                stage,
                config_checksum: config_checksum.to_owned(),
            };
            serde_json::to_writer(&mut file, &header)?;
            file.write_all(b"\n")?;
            file.flush()?;
        }
        Ok(Self {
            path,
            file,
            completed,
        })
    }

    pub fn is_done(&self, id: &str) -> bool {
        self.completed.contains(id)
    }

    pub fn completed_count(&self) -> usize {
        self.completed.len()
    }

    /// Record completion durably before moving to the next item.
    pub fn mark_done(&mut self, id: &str) -> Result<()> {
        serde_json::to_writer(
            &mut self.file,
            &DoneLine {
                done: id.to_owned(),
            },
        )?;
        self.file.write_all(b"\n")?;
        self.file
            .flush()
            .with_context(|| format!("flushing {}", self.path.display()))?;
        self.completed.insert(id.to_owned());
        Ok(())
    }
}
