use std::fs::{self, File, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use crate::Failure;

const LOCK_FILE: &str = ".lock";

/// An owned run directory. Files are only ever added; the lock file is
/// removed on drop.
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    /// Creates `<out>/<run_id>`; fails if it already exists.
    pub fn create(out: &Path, run_id: &str) -> Result<Self, Failure> {
        fs::create_dir_all(out)
            .map_err(|e| Failure::Validation(format!("cannot create {}: {e}", out.display())))?;
        let path = out.join(run_id);
        match fs::create_dir(&path) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                return Err(Failure::Validation(format!(
                    "run directory {} already exists; choose another --run-id",
                    path.display()
                )))
            }
            Err(e) => {
                return Err(Failure::Validation(format!(
                    "cannot create {}: {e}",
                    path.display()
                )))
            }
        }
        Self::lock(path)
    }

    /// Takes ownership of an existing run directory.
    pub fn open(path: &Path) -> Result<Self, Failure> {
        if !path.is_dir() {
            return Err(Failure::Validation(format!(
                "run directory {} not found",
                path.display()
            )));
        }
        Self::lock(path.to_path_buf())
    }

    fn lock(path: PathBuf) -> Result<Self, Failure> {
        match OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(path.join(LOCK_FILE))
        {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunDir { path })
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(Failure::Validation(format!(
                "run directory {} is locked by another process",
                path.display()
            ))),
            Err(e) => Err(Failure::Validation(format!(
                "cannot lock {}: {e}",
                path.display()
            ))),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Writes a new file. An existing file with identical content is left
    /// alone; different content is refused.
    pub fn write(&self, name: &str, contents: &str) -> Result<(), Failure> {
        let target = self.file(name);
        if let Ok(existing) = fs::read(&target) {
            if existing == contents.as_bytes() {
                return Ok(());
            }
            return Err(Failure::Validation(format!(
                "{} already exists with different content; run directories are append-only",
                target.display()
            )));
        }
        fs::write(&target, contents).map_err(|e| io_failure(&target, e))
    }

    /// Opens a new file for incremental appends.
    pub fn create_stream(&self, name: &str) -> Result<File, Failure> {
        let target = self.file(name);
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&target)
            .map_err(|e| io_failure(&target, e))
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.path.join(LOCK_FILE));
    }
}

pub fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Validation(format!("cannot write {}: {e}", path.display()))
}
