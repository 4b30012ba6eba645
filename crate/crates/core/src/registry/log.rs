use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use super::{replay_into, Prepared, Registry, RegistryError, UpdateRequest};
use crate::Timestamp;

fn io_err(path: &Path, e: std::io::Error) -> RegistryError {
    RegistryError::Io(format!("{}: {e}", path.display()))
}

pub fn read_log_file(path: &Path) -> Result<Vec<String>, RegistryError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|e| io_err(path, e))
}

/// Append-only log. Every line is flushed and synced before the update it
/// records becomes visible.
#[derive(Debug)]
pub struct LogWriter {
    path: PathBuf,
    file: File,
}

impl LogWriter {
    pub fn open(path: &Path) -> Result<Self, RegistryError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| io_err(path, e))?;
        Ok(LogWriter { path: path.to_path_buf(), file })
    }

    pub fn append(&mut self, line: &str) -> Result<(), RegistryError> {
        debug_assert!(!line.contains('\n'));
        self.file
            .write_all(format!("{line}\n").as_bytes())
            .and_then(|_| self.file.sync_data())
            .map_err(|e| io_err(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// A registry shared between connections.
///
/// Updates hold the write lock from validation through the log append, so
/// all updates are totally ordered and the log order is the acceptance
/// order. Readers take the read lock and always see whole records.
#[derive(Debug)]
pub struct SharedRegistry {
    state: RwLock<Registry>,
    log: Option<Mutex<LogWriter>>,
}

impl SharedRegistry {
    pub fn in_memory(registry: Registry) -> Self {
        SharedRegistry { state: RwLock::new(registry), log: None }
    }

    /// Replays `path` (if it exists) into `registry`, then appends to it.
    pub fn open(mut registry: Registry, path: &Path) -> Result<Self, RegistryError> {
        if path.exists() {
            let lines = read_log_file(path)?;
            replay_into(&mut registry, lines.iter().map(String::as_str))?;
        }
        let log = LogWriter::open(path)?;
        Ok(SharedRegistry { state: RwLock::new(registry), log: Some(Mutex::new(log)) })
    }

    pub fn apply(&self, req: &UpdateRequest, now: Timestamp) -> Result<Prepared, RegistryError> {
        let mut state = self.state.write().expect("registry lock poisoned");
        let prepared = state.prepare(req, now)?;
        self.persist(&prepared)?;
        state.commit(prepared.clone());
        Ok(prepared)
    }

    pub fn create_sponsored(&self, password: &str, now: Timestamp) -> Result<Prepared, RegistryError> {
        let mut state = self.state.write().expect("registry lock poisoned");
        let prepared = state.prepare_sponsored(password, &mut rand::thread_rng(), now)?;
        self.persist(&prepared)?;
        state.commit(prepared.clone());
        Ok(prepared)
    }

    fn persist(&self, prepared: &Prepared) -> Result<(), RegistryError> {
        match &self.log {
            Some(log) => log.lock().expect("log lock poisoned").append(&prepared.log_line),
            None => Ok(()),
        }
    }

    /// Runs `f` against a consistent view of the registry.
    pub fn read<T>(&self, f: impl FnOnce(&Registry) -> T) -> T {
        f(&self.state.read().expect("registry lock poisoned"))
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<(), RegistryError> {
        let text = self.read(Registry::snapshot_text);
        std::fs::write(path, text).map_err(|e| io_err(path, e))
    }
}
