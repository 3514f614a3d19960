//! Audit documents on disk.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use bbp_core::audit::{export_state, import_state, AuditError, AuditState};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Audit {
        path: PathBuf,
        #[source]
        source: AuditError,
    },
}

pub struct Loaded {
    pub state: AuditState,
    pub warnings: Vec<String>,
}

pub fn load(path: &Path) -> Result<Loaded, StoreError> {
    let bytes = fs::read(path).map_err(|source| StoreError::Io {
        path: path.to_owned(),
        source,
    })?;
    let (state, warnings) = import_state(&bytes).map_err(|source| StoreError::Audit {
        path: path.to_owned(),
        source,
    })?;
    Ok(Loaded { state, warnings })
}

/// Write through a sibling temporary file, then rename.
pub fn save(path: &Path, state: &AuditState) -> Result<(), StoreError> {
    let io_err = |source| StoreError::Io {
        path: path.to_owned(),
        source,
    };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, export_state(state)).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

/// `<dir>/<audit_id>.json`
pub fn audit_path(dir: &Path, audit_id: &str) -> PathBuf {
    dir.join(format!("{audit_id}.json"))
}

/// Every `*.json` audit in `dir`, in file-name order.
pub fn load_dir(dir: &Path) -> Result<Vec<Loaded>, StoreError> {
    let io_err = |source| StoreError::Io {
        path: dir.to_owned(),
        source,
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io_err)?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
    paths.sort();
    paths.iter().map(|p| load(p)).collect()
}
