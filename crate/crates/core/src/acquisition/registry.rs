use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use log::warn;

use crate::{Error, Result};

pub const REGISTRY_HEADER: &str = "name,captured_at,processed_at,foam_pct,mask_path,status";
const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Status {
    Ok,
    Invalid,
    Failed,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Ok => "OK",
            Status::Invalid => "INVALID",
            Status::Failed => "FAILED",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "OK" => Some(Status::Ok),
            "INVALID" => Some(Status::Invalid),
            "FAILED" => Some(Status::Failed),
            _ => None,
        }
    }
}

/// One processed frame. `foam_pct` and `mask_path` are set exactly when the
/// status is OK. `error` is kept in memory only.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub name: String,
    pub captured_at: NaiveDateTime,
    pub processed_at: NaiveDateTime,
    pub foam_pct: Option<f64>,
    pub mask_path: Option<PathBuf>,
    pub status: Status,
    pub error: Option<String>,
}

impl ImageRecord {
    fn fields(&self) -> [String; 6] {
        [
            self.name.clone(),
            self.captured_at.format(TIME_FORMAT).to_string(),
            self.processed_at.format(TIME_FORMAT).to_string(),
            self.foam_pct.map(|v| v.to_string()).unwrap_or_default(),
            self.mask_path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            self.status.as_str().to_string(),
        ]
    }

    fn from_fields(r: &csv::StringRecord) -> Option<Self> {
        if r.len() != 6 {
            return None;
        }
        let time = |s: &str| NaiveDateTime::parse_from_str(s, TIME_FORMAT).ok();
        let status = Status::parse(&r[5])?;
        let foam_pct = if r[3].is_empty() { None } else { Some(r[3].parse().ok()?) };
        let mask_path = (!r[4].is_empty()).then(|| PathBuf::from(&r[4]));
        if (status == Status::Ok) != foam_pct.is_some() {
            return None;
        }
        Some(Self {
            name: r[0].to_string(),
            captured_at: time(&r[1])?,
            processed_at: time(&r[2])?,
            foam_pct,
            mask_path,
            status,
            error: None,
        })
    }
}

/// Append-only CSV of processed frames with an in-memory index by name.
///
/// Each record is written with a single write followed by `fsync`. A final
/// line without its newline (a write cut short) is dropped and truncated
/// away when the registry is opened.
#[derive(Debug)]
pub struct Registry {
    path: PathBuf,
    file: File,
    records: Vec<ImageRecord>,
    index: HashMap<String, usize>,
}

impl Registry {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
        let ctx = |e| Error::io(format!("opening registry {}", path.display()), e);
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path).map_err(ctx)?;
        let mut text = Vec::new();
        file.read_to_end(&mut text).map_err(ctx)?;

        let complete = match text.iter().rposition(|&b| b == b'\n') {
            Some(i) => i + 1,
            None => 0,
        };
        if complete < text.len() {
            warn!("registry {}: dropping incomplete final line", path.display());
            file.set_len(complete as u64).map_err(ctx)?;
            file.seek(SeekFrom::End(0)).map_err(ctx)?;
        }
        let text = &text[..complete];

        let mut reg = Self {
            path: path.to_path_buf(),
            file,
            records: Vec::new(),
            index: HashMap::new(),
        };
        if text.is_empty() {
            reg.write_line(format!("{REGISTRY_HEADER}\n").as_bytes())?;
            return Ok(reg);
        }
        let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(text);
        let header = reader
            .headers()
            .map_err(|e| Error::Config(format!("registry {}: {e}", path.display())))?;
        if header.iter().collect::<Vec<_>>().join(",") != REGISTRY_HEADER {
            return Err(Error::Config(format!("registry {} has an unexpected header", path.display())));
        }
        for (line, row) in reader.records().enumerate() {
            match row.ok().as_ref().and_then(ImageRecord::from_fields) {
                Some(rec) if !reg.index.contains_key(&rec.name) => {
                    reg.index.insert(rec.name.clone(), reg.records.len());
                    reg.records.push(rec);
                }
                Some(rec) => warn!("registry {}: duplicate row for {}", path.display(), rec.name),
                None => warn!("registry {}: skipping malformed row {}", path.display(), line + 2),
            }
        }
        Ok(reg)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, name: &str) -> Option<&ImageRecord> {
        self.index.get(name).map(|&i| &self.records[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Persists a record. Names are unique: appending a known name fails.
    pub fn append(&mut self, rec: ImageRecord) -> Result<()> {
        if self.contains(&rec.name) {
            return Err(Error::InvalidArgument(format!("{} is already registered", rec.name)));
        }
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(rec.fields())
            .map_err(|e| Error::Config(format!("encoding registry row: {e}")))?;
        let line = w.into_inner().map_err(|e| Error::Config(format!("encoding registry row: {e}")))?;
        self.write_line(&line)?;
        self.index.insert(rec.name.clone(), self.records.len());
        self.records.push(rec);
        Ok(())
    }

    fn write_line(&mut self, bytes: &[u8]) -> Result<()> {
        let ctx = |e| Error::io(format!("appending to {}", self.path.display()), e);
        self.file.write_all(bytes).map_err(ctx)?;
        self.file.sync_data().map_err(ctx)
    }
}
