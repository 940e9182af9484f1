use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use log::debug;

use crate::{Error, Result};

pub const DEFAULT_TIMESTAMP_PATTERN: &str = "%Y%m%d_%H%M%S";
const DAY_DIR_FORMAT: &str = "%Y%m%d";

/// A listed image: its unique file name and the capture time parsed from it.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StoreEntry {
    pub captured_at: NaiveDateTime,
    pub name: String,
}

/// Source of captured frames.
pub trait ImageStore: Send + Sync {
    /// Files captured on `day`, in no particular order.
    fn list(&self, day: NaiveDate) -> Result<Vec<StoreEntry>>;
    /// Every file in the store.
    fn list_all(&self) -> Result<Vec<StoreEntry>>;
    fn fetch(&self, name: &str) -> Result<Vec<u8>>;
    /// Capture time encoded in a file name.
    fn timestamp(&self, name: &str) -> Option<NaiveDateTime>;
}

/// Finds the first substring of the file stem that parses with `pattern`.
pub fn parse_timestamp(name: &str, pattern: &str) -> Option<NaiveDateTime> {
    let stem = Path::new(name).file_stem()?.to_str()?;
    stem.char_indices()
        .find_map(|(i, _)| NaiveDateTime::parse_and_remainder(&stem[i..], pattern).ok().map(|(t, _)| t))
}

/// Images under `root/YYYYMMDD/`, one directory per capture day. Files
/// placed directly in `root` are listed too, under the day in their name.
#[derive(Clone, Debug)]
pub struct LocalDirStore {
    root: PathBuf,
    pattern: String,
}

impl LocalDirStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self::with_pattern(root, DEFAULT_TIMESTAMP_PATTERN)
    }

    pub fn with_pattern(root: impl Into<PathBuf>, pattern: &str) -> Self {
        Self {
            root: root.into(),
            pattern: pattern.to_string(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn scan(&self, dir: &Path, out: &mut Vec<StoreEntry>) -> Result<()> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
            let path = entry.path();
            if !path.is_file() || !crate::maskgen::is_image_file(&path) {
                continue;
            }
            let name = entry.file_name().to_string_lossy().into_owned();
            match parse_timestamp(&name, &self.pattern) {
                Some(captured_at) => out.push(StoreEntry { captured_at, name }),
                None => debug!("ignoring {name}: no timestamp"),
            }
        }
        Ok(())
    }

    fn path_of(&self, name: &str) -> Option<PathBuf> {
        if name.contains(['/', '\\']) || name.starts_with('.') {
            return None;
        }
        let day = self.timestamp(name)?.date().format(DAY_DIR_FORMAT).to_string();
        let nested = self.root.join(day).join(name);
        if nested.is_file() {
            return Some(nested);
        }
        let flat = self.root.join(name);
        flat.is_file().then_some(flat)
    }
}

impl ImageStore for LocalDirStore {
    fn list(&self, day: NaiveDate) -> Result<Vec<StoreEntry>> {
        let mut out = Vec::new();
        let dir = self.root.join(day.format(DAY_DIR_FORMAT).to_string());
        if dir.is_dir() {
            self.scan(&dir, &mut out)?;
        }
        let mut flat = Vec::new();
        self.scan(&self.root, &mut flat)?;
        out.extend(flat.into_iter().filter(|e| e.captured_at.date() == day));
        Ok(out)
    }

    fn list_all(&self) -> Result<Vec<StoreEntry>> {
        let mut out = Vec::new();
        self.scan(&self.root, &mut out)?;
        let entries = std::fs::read_dir(&self.root).map_err(|e| Error::io(format!("listing {}", self.root.display()), e))?;
        for entry in entries {
            let entry = entry?;
            let is_day = entry
                .file_name()
                .to_str()
                .is_some_and(|n| NaiveDate::parse_from_str(n, DAY_DIR_FORMAT).is_ok());
            if is_day && entry.path().is_dir() {
                self.scan(&entry.path(), &mut out)?;
            }
        }
        out.sort();
        Ok(out)
    }

    fn fetch(&self, name: &str) -> Result<Vec<u8>> {
        let path = self
            .path_of(name)
            .ok_or_else(|| Error::InvalidArgument(format!("{name} is not in the store")))?;
        std::fs::read(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
    }

    fn timestamp(&self, name: &str) -> Option<NaiveDateTime> {
        parse_timestamp(name, &self.pattern)
    }
}
