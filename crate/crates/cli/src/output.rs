use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Output directory whose files all carry the config hash and version.
pub struct OutputDir {
    pub dir: PathBuf,
    pub hash: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

impl OutputDir {
    pub fn create(dir: &Path, hash: String) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(OutputDir { dir: dir.to_path_buf(), hash })
    }

    /// Writes through a temporary file and a rename.
    fn write_atomic(&self, name: &str, content: &str) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, content).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        Ok(path)
    }

    /// JSON object with `version` and `config_hash` prepended.
    pub fn write_json<T: Serialize>(&self, name: &str, body: &T) -> Result<PathBuf, CliError> {
        let mut map = Map::new();
        map.insert("version".into(), Value::String(VERSION.into()));
        map.insert("config_hash".into(), Value::String(self.hash.clone()));
        match serde_json::to_value(body).map_err(|e| CliError::Other(e.to_string()))? {
            Value::Object(fields) => map.extend(fields),
            other => {
                map.insert("data".into(), other);
            }
        }
        let mut text = serde_json::to_string_pretty(&Value::Object(map)).map_err(|e| CliError::Other(e.to_string()))?;
        text.push('\n');
        self.write_atomic(name, &text)
    }

    /// CSV with a leading `#` comment line holding the hash and version.
    pub fn write_csv(&self, name: &str, body: &str) -> Result<PathBuf, CliError> {
        let text = format!("# config_hash={} version={}\n{body}", self.hash, VERSION);
        self.write_atomic(name, &text)
    }
}
