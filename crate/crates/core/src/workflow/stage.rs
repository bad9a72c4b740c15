use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::digest::Hasher;
use crate::error::{Error, Result};

pub const STAGE_FILE: &str = "stage.json";
pub const LOG_FILE: &str = "stage.log";

/// Bumped whenever a stage's output layout changes.
const LAYOUT: &str = "1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub key: String,
    pub complete: bool,
}

pub fn read_record(dir: &Path) -> Option<StageRecord> {
    let text = fs::read_to_string(dir.join(STAGE_FILE)).ok()?;
    serde_json::from_str(&text).ok()
}

/// Cache key over a stage name and its length-prefixed inputs.
pub fn stage_key(stage: &str, parts: &[&[u8]]) -> String {
    let mut h = Hasher::new();
    h.field(LAYOUT.as_bytes()).field(stage.as_bytes());
    for p in parts {
        h.field(p);
    }
    h.finish()
}

pub fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("stage settings serialize")
}

/// Outcome of running or reusing a stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageOutput {
    pub dir: PathBuf,
    pub key: String,
    pub cached: bool,
}

/// A stage directory being written. Log lines go to stderr as they arrive
/// and to `stage.log` when the stage finishes.
pub struct Stage {
    pub dir: PathBuf,
    pub key: String,
    name: String,
    lines: Vec<String>,
}

pub enum Opened {
    Cached(StageOutput),
    Fresh(Stage),
}

impl Stage {
    /// Reuses a complete stage with the same key. An incomplete stage with
    /// the same key is reopened untouched so it can resume; anything else
    /// in `dir` is cleared.
    pub fn open(dir: &Path, name: &str, key: String) -> Result<Opened> {
        match read_record(dir) {
            Some(r) if r.key == key && r.complete => {
                return Ok(Opened::Cached(StageOutput {
                    dir: dir.to_path_buf(),
                    key,
                    cached: true,
                }))
            }
            Some(r) if r.key == key => {}
            _ if dir.exists() => fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?,
            _ => {}
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let stage = Self {
            dir: dir.to_path_buf(),
            key,
            name: name.to_string(),
            lines: Vec::new(),
        };
        stage.write_record(false)?;
        Ok(Opened::Fresh(stage))
    }

    fn write_record(&self, complete: bool) -> Result<()> {
        let rec = StageRecord {
            stage: self.name.clone(),
            key: self.key.clone(),
            complete,
        };
        let p = self.dir.join(STAGE_FILE);
        let mut text = serde_json::to_string_pretty(&rec).expect("stage record serializes");
        text.push('\n');
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    pub fn log(&mut self, line: impl Into<String>) {
        let line = line.into();
        eprintln!("[{}] {line}", self.name);
        self.lines.push(line);
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    pub fn write(&self, file: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.path(file);
        fs::write(&p, contents).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    pub fn finish(self) -> Result<StageOutput> {
        let mut text = self.lines.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        self.write(LOG_FILE, text)?;
        self.write_record(true)?;
        Ok(StageOutput {
            dir: self.dir,
            key: self.key,
            cached: false,
        })
    }
}
