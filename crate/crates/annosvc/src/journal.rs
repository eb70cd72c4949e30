//! Append-only JSON-lines journal.
//!
//! ```text
//! {"op":"open","fingerprint":"9f2c…","tasks":1200}
//! {"op":"session","id":"5be1…","ts":1718000000000}
//! {"op":"lease","task":17,"session":"5be1…","expires":1718000900000}
//! {"op":"record","task":17,"session":"5be1…","judgment":"a1","ts":1718000042000}
//! ```
//!
//! Every append is flushed with `fdatasync` before it is acknowledged. A
//! trailing line without its newline is the remains of an interrupted write
//! and is cut off on open; any other malformed line is an error.

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{AnnoError, Result};
use crate::model::AnnotationRecord;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Entry {
    /// First line; ties the journal to one task set.
    Open { fingerprint: String, tasks: u64 },
    Session { id: String, ts: u64 },
    Lease { task: u64, session: String, expires: u64 },
    Record(AnnotationRecord),
}

impl Entry {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("journal entry serializes");
        s.push('\n');
        s
    }
}

/// Parses journal text. Returns the entries and the byte length of the
/// complete lines they came from; an unterminated tail is not included.
pub fn parse_journal(text: &str) -> Result<(Vec<Entry>, usize)> {
    let mut entries = Vec::new();
    let mut consumed = 0;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let Some(body) = line.strip_suffix('\n') else {
            break;
        };
        consumed += line.len();
        if body.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(body).map_err(|e| AnnoError::Journal {
            line: i + 1,
            message: e.to_string(),
        })?;
        entries.push(e);
    }
    Ok((entries, consumed))
}

pub struct Journal {
    path: PathBuf,
    file: File,
}

impl Journal {
    /// Opens or creates the journal and returns its entries.
    pub fn open(path: &Path) -> Result<(Self, Vec<Entry>)> {
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let text = String::from_utf8_lossy(&bytes);
        let (entries, consumed) = parse_journal(&text)?;
        if consumed < bytes.len() {
            log::warn!(
                "{}: dropping {} bytes of an interrupted write",
                path.display(),
                bytes.len() - consumed
            );
            file.set_len(consumed as u64)?;
            file.sync_all()?;
        }
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
            },
            entries,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, entry: &Entry) -> Result<()> {
        self.file.write_all(entry.to_line().as_bytes())?;
        self.file.sync_data()?;
        Ok(())
    }

    /// Replaces the journal with `entries` through a synced temporary file
    /// and an atomic rename.
    pub fn rewrite(&mut self, entries: &[Entry]) -> Result<()> {
        let tmp = self.path.with_extension("compact.tmp");
        {
            let mut f = File::create(&tmp)?;
            let mut buf = String::new();
            for e in entries {
                buf.push_str(&e.to_line());
            }
            f.write_all(buf.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &self.path)?;
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            // Directory fsync makes the rename durable; not every platform
            // allows opening a directory, so failure here is only logged.
            if let Err(e) = File::open(dir).and_then(|d| d.sync_all()) {
                log::debug!("directory sync of {} failed: {e}", dir.display());
            }
        }
        self.file = OpenOptions::new().read(true).append(true).open(&self.path)?;
        Ok(())
    }

    pub fn read_all(&self) -> Result<String> {
        Ok(fs::read_to_string(&self.path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Judgment;

    fn record(task: u64) -> Entry {
        Entry::Record(AnnotationRecord {
            task,
            session: "s".into(),
            judgment: Judgment::Tie,
            ts: 5,
        })
    }

    #[test]
    fn line_format() {
        assert_eq!(
            record(3).to_line(),
            "{\"op\":\"record\",\"task\":3,\"session\":\"s\",\"judgment\":\"tie\",\"ts\":5}\n"
        );
        let open = Entry::Open {
            fingerprint: "ab".into(),
            tasks: 2,
        };
        assert_eq!(parse_journal(&open.to_line()).unwrap().0, vec![open]);
    }

    #[test]
    fn torn_tail_is_ignored_and_bad_lines_are_located() {
        let text = format!("{}{}{{\"op\":\"rec", record(1).to_line(), record(2).to_line());
        let (entries, consumed) = parse_journal(&text).unwrap();
        assert_eq!(entries, vec![record(1), record(2)]);
        assert_eq!(consumed, text.len() - 10);
        let bad = format!("{}{{\"op\":\"record\"}}\n{}", record(1).to_line(), record(2).to_line());
        match parse_journal(&bad) {
            Err(AnnoError::Journal { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reopen_truncates_interrupted_write() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        {
            let (mut j, entries) = Journal::open(&path).unwrap();
            assert!(entries.is_empty());
            j.append(&record(1)).unwrap();
            j.file.write_all(b"{\"op\":\"record\",\"ta").unwrap();
        }
        let (mut j, entries) = Journal::open(&path).unwrap();
        assert_eq!(entries, vec![record(1)]);
        j.append(&record(2)).unwrap();
        let (_, entries) = Journal::open(&path).unwrap();
        assert_eq!(entries, vec![record(1), record(2)]);
    }

    #[test]
    fn rewrite_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        let (mut j, _) = Journal::open(&path).unwrap();
        for t in 0..5 {
            j.append(&record(t)).unwrap();
        }
        j.rewrite(&[record(4)]).unwrap();
        j.append(&record(9)).unwrap();
        let (_, entries) = Journal::open(&path).unwrap();
        assert_eq!(entries, vec![record(4), record(9)]);
    }
}
