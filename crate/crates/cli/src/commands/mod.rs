//! Subcommand implementations.

use std::collections::HashSet;
use std::path::Path;

use anyhow::Result;

use crate::jsonl::read_existing_keys;

pub mod bench;
pub mod curate;
pub mod patterns;
pub mod reward;
pub mod rubrics;
pub mod synthesize;

/// Ids already present in an output file, keyed by `field`. Unioned with the
/// checkpoint so a crash between the output write and the checkpoint mark
/// never duplicates a line on resume.
pub(crate) fn keys_in_output(path: &Path, field: &'static str) -> Result<HashSet<String>> {
    Ok(read_existing_keys(path, |value| {
        value.get(field).and_then(|v| v.as_str()).map(String::from)
    })?
    .into_iter()
    .collect())
}

/// What a finished stage reports back to `main` for exit-code handling.
#[derive(Debug, Default)]
pub struct StageOutcome {
    pub processed: usize,
    pub item_errors: usize,
    pub summary: String,
}

impl StageOutcome {
    pub fn new(processed: usize, item_errors: usize, summary: impl Into<String>) -> Self {
        Self {
            processed,
            item_errors,
            summary: summary.into(),
        }
    }
}
