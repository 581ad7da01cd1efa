//! Tab-separated dataset manifests.
//!
//! A manifest names every sample in a dataset, one per line:
//!
//! ```text
//! id<TAB>image_path<TAB>target_path<TAB>split<TAB>task
//! ```
//!
//! Paths are kept as written and resolved relative to the manifest's own
//! directory, so a dataset folder can be copied or mounted anywhere.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::sample::{load_sample, Sample};
use crate::error::{Error, Result};

/// What kind of target a sample carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Segmentation,
    SuperResolution,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::Segmentation => write!(f, "seg"),
            Task::SuperResolution => write!(f, "sr"),
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Task> {
        match s {
            "seg" => Ok(Task::Segmentation),
            "sr" => Ok(Task::SuperResolution),
            other => Err(Error::Config(format!("unknown task '{}' (expected seg or sr)", other))),
        }
    }
}

/// One manifest row.
#[derive(Clone, Debug)]
pub struct Entry {
    pub id: String,
    pub image_path: String,
    pub target_path: String,
    pub split: String,
    pub task: Task,
}

/// A parsed manifest plus the directory its paths resolve against.
#[derive(Clone, Debug)]
pub struct Manifest {
    dir: PathBuf,
    entries: Vec<Entry>,
}

impl Manifest {
    /// Reads and validates a manifest file.
    ///
    /// Every referenced file must exist; ids must be unique.
    pub fn read(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path)?;
        let dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let lineno = lineno + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(Error::Data(format!(
                    "{}:{}: expected 5 tab-separated fields, found {}",
                    path.display(),
                    lineno,
                    fields.len()
                )));
            }
            let entry = Entry {
                id: fields[0].to_string(),
                image_path: fields[1].to_string(),
                target_path: fields[2].to_string(),
                split: fields[3].to_string(),
                task: fields[4].parse().map_err(|e| {
                    Error::Data(format!("{}:{}: {}", path.display(), lineno, e))
                })?,
            };
            if !seen.insert(entry.id.clone()) {
                return Err(Error::Data(format!(
                    "{}:{}: duplicate sample id '{}'",
                    path.display(),
                    lineno,
                    entry.id
                )));
            }
            for p in [&entry.image_path, &entry.target_path] {
                if !dir.join(p).is_file() {
                    return Err(Error::Data(format!(
                        "{}:{}: referenced file {} does not exist",
                        path.display(),
                        lineno,
                        dir.join(p).display()
                    )));
                }
            }
            entries.push(entry);
        }
        Ok(Manifest { dir, entries })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    /// Entries belonging to one split, in file order.
    pub fn split(&self, name: &str) -> Vec<&Entry> {
        self.entries.iter().filter(|e| e.split == name).collect()
    }

    /// Loads every sample of a split into memory.
    pub fn load_split(&self, name: &str) -> Result<Vec<Sample>> {
        let entries = self.split(name);
        if entries.is_empty() {
            return Err(Error::Data(format!("manifest has no samples in split '{}'", name)));
        }
        entries
            .iter()
            .map(|e| {
                load_sample(
                    &e.id,
                    &self.dir.join(&e.image_path),
                    &self.dir.join(&e.target_path),
                    e.task,
                )
            })
            .collect()
    }

    /// Writes entries to `path` in manifest format.
    pub fn write(path: &Path, entries: &[Entry]) -> Result<()> {
        let mut out = String::new();
        for e in entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.id, e.image_path, e.target_path, e.split, e.task
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}
