use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde_json::Value;

use crate::failure::Failure;

pub const SCHEMA_VERSION: u64 = 1;

/// A parsed config file with its envelope fields split off.
pub struct Loaded<T> {
    pub echo: Value,
    pub seed: u64,
    pub body: T,
    pub base_dir: PathBuf,
}

impl<T> Loaded<T> {
    /// Resolves a path named in the config relative to the config file.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

/// Reads `path`, checks `schema_version` and takes the optional `seed`
/// (overridden by `seed_flag`) before decoding the rest into `T`.
pub fn load<T: DeserializeOwned>(path: Option<&Path>, seed_flag: Option<u64>) -> Result<Loaded<T>, Failure> {
    let path = path.ok_or_else(|| Failure::Config("this command needs --config <file>".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
    let echo: Value =
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: invalid JSON: {e}", path.display())))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    from_value(echo, seed_flag, base_dir)
}

pub fn from_value<T: DeserializeOwned>(
    echo: Value,
    seed_flag: Option<u64>,
    base_dir: PathBuf,
) -> Result<Loaded<T>, Failure> {
    let Value::Object(mut map) = echo.clone() else {
        return Err(Failure::Config("config must be a JSON object".into()));
    };
    match map.remove("schema_version") {
        None => return Err(Failure::Config("missing field `schema_version`".into())),
        Some(v) if v.as_u64() == Some(SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(Failure::Config(format!("schema_version: unsupported value {v}, expected {SCHEMA_VERSION}")))
        }
    }
    let seed = match map.remove("seed") {
        None => 0,
        Some(v) => {
            v.as_u64().ok_or_else(|| Failure::Config(format!("seed: expected a 64-bit unsigned integer, got {v}")))?
        }
    };
    let body = serde_path_to_error::deserialize(Value::Object(map)).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            Failure::Config(e.inner().to_string())
        } else {
            Failure::Config(format!("{path}: {}", e.inner()))
        }
    })?;
    Ok(Loaded { echo, seed: seed_flag.unwrap_or(seed), body, base_dir })
}
