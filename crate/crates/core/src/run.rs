//! Run-directory layout shared by the training loops.

use std::path::PathBuf;

use crate::error::Error;

/// Where training artifacts go. Without a directory nothing is written.
#[derive(Clone, Debug, Default)]
pub struct RunFiles {
    pub dir: Option<PathBuf>,
    pub resume: bool,
}

impl RunFiles {
    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            resume: false,
        }
    }

    pub fn best(&self) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join("best.ckpt"))
    }

    pub(crate) fn last(&self) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join("last.ckpt"))
    }

    pub(crate) fn optimizer(&self) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join("last.optim.ckpt"))
    }

    pub(crate) fn log(&self) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join("train_log.jsonl"))
    }
}

pub(crate) fn non_finite(what: &str, files: &RunFiles) -> Error {
    let last = files
        .best()
        .filter(|p| p.exists())
        .map_or_else(|| "no checkpoint written yet".to_string(), |p| format!("last good checkpoint {}", p.display()));
    Error::NonFinite(format!("{what}; {last}"))
}
