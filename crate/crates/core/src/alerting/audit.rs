use crate::model::AlertRecord;
use serde::{Deserialize, Serialize};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

/// One line of the JSON-lines audit file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditEntry {
    Fired { alert: AlertRecord },
    Acknowledged { id: u64, at: i64 },
}

#[derive(Debug)]
pub struct AuditLog {
    file: File,
}

impl AuditLog {
    /// Opens for append, creating the file if needed.
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        Ok(AuditLog {
            file: OpenOptions::new().create(true).append(true).open(path)?,
        })
    }

    fn write(&mut self, entry: &AuditEntry) -> io::Result<()> {
        let mut line = serde_json::to_string(entry)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())
    }

    pub fn fired(&mut self, alert: &AlertRecord) -> io::Result<()> {
        self.write(&AuditEntry::Fired {
            alert: alert.clone(),
        })
    }

    pub fn acknowledged(&mut self, id: u64, at: i64) -> io::Result<()> {
        self.write(&AuditEntry::Acknowledged { id, at })
    }
}

pub fn read_audit(path: impl AsRef<Path>) -> io::Result<Vec<AuditEntry>> {
    BufReader::new(File::open(path)?)
        .lines()
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}
