//! One writer per output directory.
//!
//! The lock is a file named `.pqda.lock` holding the owner's process id. It is
//! created with `create_new`, so two runs cannot both succeed. A lock left
//! behind by a killed process is taken over once that process no longer
//! exists (checked through `/proc`; where that is unavailable a leftover lock
//! must be removed by hand).

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

pub const LOCK_NAME: &str = ".pqda.lock";

#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(LOCK_NAME);
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    writeln!(f, "{}", std::process::id()).map_err(|e| CliError::io(&path, e))?;
                    return Ok(DirLock { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    if !is_stale(&path) {
                        return Err(CliError::Locked(dir.to_path_buf()));
                    }
                    match std::fs::remove_file(&path) {
                        Ok(()) => {}
                        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                        Err(e) => return Err(CliError::io(&path, e)),
                    }
                }
                Err(e) => return Err(CliError::io(&path, e)),
            }
        }
        Err(CliError::Locked(dir.to_path_buf()))
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn is_stale(path: &Path) -> bool {
    let Ok(text) = std::fs::read_to_string(path) else {
        return false;
    };
    let Ok(pid) = text.trim().parse::<u32>() else {
        return false;
    };
    let proc = Path::new("/proc");
    proc.is_dir() && pid != std::process::id() && !proc.join(pid.to_string()).exists()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_acquire_fails_until_release() {
        let dir = tempfile::tempdir().unwrap();
        let lock = DirLock::acquire(dir.path()).unwrap();
        let err = DirLock::acquire(dir.path()).unwrap_err();
        assert!(matches!(err, CliError::Locked(_)));
        assert_eq!(err.exit_code(), 3);
        drop(lock);
        assert!(!dir.path().join(LOCK_NAME).exists());
        DirLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn dead_owner_is_taken_over() {
        if !Path::new("/proc/self").exists() {
            return;
        }
        let dir = tempfile::tempdir().unwrap();
        // pid_max on Linux is at most 2^22, so this id cannot be running.
        std::fs::write(dir.path().join(LOCK_NAME), "4999999\n").unwrap();
        let _lock = DirLock::acquire(dir.path()).unwrap();
        let owner = std::fs::read_to_string(dir.path().join(LOCK_NAME)).unwrap();
        assert_eq!(owner.trim(), std::process::id().to_string());
    }

    #[test]
    fn unreadable_owner_is_respected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(LOCK_NAME), "not a pid").unwrap();
        assert!(DirLock::acquire(dir.path()).is_err());
    }
}
