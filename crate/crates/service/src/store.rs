//! One JSON file per session in a data directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::session::SessionRecord;

#[derive(Clone, Debug)]
pub struct Store {
    dir: PathBuf,
}

/// Session ids are generated by the service; anything else cannot name a
/// stored session.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_hexdigit() || b == b'-')
}

impl Store {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    /// Writes the record atomically: a reader or a crash sees either the old
    /// or the new file, never a partial one.
    pub fn save(&self, record: &SessionRecord) -> Result<()> {
        let tmp = self.dir.join(format!(".{}.tmp", record.session_id));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&serde_json::to_vec(record)?)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, self.path(&record.session_id))?;
        Ok(())
    }

    pub fn load(&self, id: &str) -> Result<Option<SessionRecord>> {
        if !valid_id(id) {
            return Ok(None);
        }
        match fs::read(self.path(id)) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn list(&self) -> Result<Vec<String>> {
        let mut ids: Vec<String> = fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".json")).map(str::to_string))
            .filter(|id| valid_id(id))
            .collect();
        ids.sort();
        Ok(ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_cannot_escape_the_directory() {
        assert!(valid_id("0f3a-9c"));
        assert!(!valid_id("../etc/passwd"));
        assert!(!valid_id(""));
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        assert!(store.load("..%2f").unwrap().is_none());
        assert!(store.list().unwrap().is_empty());
    }
}
