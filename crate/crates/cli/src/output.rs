use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};

const LOCK_NAME: &str = ".lock";

/// Output directory held for the duration of a run.
#[derive(Debug)]
pub struct RunDir {
    path: PathBuf,
    lock: PathBuf,
}

impl RunDir {
    pub fn acquire(path: &Path) -> CliResult<Self> {
        fs::create_dir_all(path).map_err(|e| CliError::io(path, e))?;
        let lock = path.join(LOCK_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id()).map_err(|e| CliError::io(&lock, e))?;
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(CliError::Locked(path.to_path_buf()));
            }
            Err(e) => return Err(CliError::io(&lock, e)),
        }
        Ok(Self {
            path: path.to_path_buf(),
            lock,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn create(&self, name: &str) -> CliResult<BufWriter<File>> {
        let p = self.path.join(name);
        File::create(&p).map(BufWriter::new).map_err(|e| CliError::io(p, e))
    }

    pub fn write_text(&self, name: &str, text: &str) -> CliResult<()> {
        let p = self.path.join(name);
        fs::write(&p, text).map_err(|e| CliError::io(p, e))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
        text.push('\n');
        self.write_text(name, &text)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}
