use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};
use workbench_core::Error;

/// Failure of a command, mapped onto the process exit status.
#[derive(Debug)]
pub enum CliError {
    /// Missing or malformed option; carries the subcommand path for the usage line.
    Usage { path: Vec<&'static str>, message: String },
    /// A check the command performs did not pass.
    Failed(String),
    Core(Error),
}

impl CliError {
    pub fn usage(path: &[&'static str], message: impl Into<String>) -> Self {
        CliError::Usage {
            path: path.to_vec(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_io() => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage { message, .. } | CliError::Failed(message) => write!(f, "{message}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Options shared by every subcommand plus the parsed `--config` object.
/// Command-line flags take precedence over config keys.
pub struct Context {
    pub path: Vec<&'static str>,
    config: Map<String, Value>,
    seed_flag: Option<u64>,
    pub out: PathBuf,
}

impl Context {
    pub fn new(
        path: Vec<&'static str>,
        config_path: Option<&Path>,
        seed: Option<u64>,
        out: PathBuf,
    ) -> CliResult<Self> {
        let config = match config_path {
            None => Map::new(),
            Some(p) => {
                let text = fs::read_to_string(p)?;
                match serde_json::from_str::<Value>(&text) {
                    Ok(Value::Object(map)) => map,
                    Ok(_) => {
                        return Err(CliError::usage(
                            &path,
                            format!("config {} must hold a JSON object", p.display()),
                        ))
                    }
                    Err(e) => {
                        return Err(CliError::usage(
                            &path,
                            format!("config {}: {e}", p.display()),
                        ))
                    }
                }
            }
        };
        Ok(Self {
            path,
            config,
            seed_flag: seed,
            out,
        })
    }

    pub fn usage_error(&self, message: impl Into<String>) -> CliError {
        CliError::usage(&self.path, message)
    }

    /// Flag value, else config key, else `None`.
    pub fn lookup<T: DeserializeOwned>(&self, key: &str, flag: Option<T>) -> CliResult<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.config.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| self.usage_error(format!("config key '{key}': {e}"))),
        }
    }

    pub fn or<T: DeserializeOwned>(&self, key: &str, flag: Option<T>, default: T) -> CliResult<T> {
        Ok(self.lookup(key, flag)?.unwrap_or(default))
    }

    pub fn require<T: DeserializeOwned>(&self, key: &str, flag: Option<T>) -> CliResult<T> {
        self.lookup(key, flag)?
            .ok_or_else(|| self.usage_error(format!("missing required option --{key}")))
    }

    pub fn seed(&self) -> CliResult<u64> {
        self.or("seed", self.seed_flag, 0)
    }

    /// Creates the output directory and returns the path of `name` inside it.
    pub fn output(&self, name: &str) -> CliResult<PathBuf> {
        fs::create_dir_all(&self.out)?;
        Ok(self.out.join(name))
    }

    pub fn write_text(&self, name: &str, text: &str) -> CliResult<PathBuf> {
        let path = self.output(name)?;
        fs::write(&path, text)?;
        Ok(path)
    }

    pub fn write_json<T: serde::Serialize>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).map_err(Error::Json)?;
        text.push('\n');
        self.write_text(name, &text)
    }
}

/// Legendre-table cache directory: `WORKBENCH_CACHE_DIR`, else a directory
/// under the system temporary directory.
pub fn cache_dir() -> PathBuf {
    match std::env::var_os("WORKBENCH_CACHE_DIR") {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => std::env::temp_dir().join("workbench-cache"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn context(config: &str) -> (tempfile::TempDir, Context) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, config).unwrap();
        let ctx = Context::new(vec!["grid", "build"], Some(&path), None, dir.path().join("out")).unwrap();
        (dir, ctx)
    }

    #[test]
    fn flags_win_over_config() {
        let (_dir, ctx) = context(r#"{"nlat": 12, "seed": 4}"#);
        assert_eq!(ctx.require::<usize>("nlat", None).unwrap(), 12);
        assert_eq!(ctx.require("nlat", Some(20usize)).unwrap(), 20);
        assert_eq!(ctx.or("nlon", None, 7usize).unwrap(), 7);
        assert_eq!(ctx.seed().unwrap(), 4);
    }

    #[test]
    fn bad_config_values_are_usage_errors() {
        let (_dir, ctx) = context(r#"{"nlat": "many"}"#);
        let err = ctx.require::<usize>("nlat", None).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(matches!(err, CliError::Usage { .. }));
        assert!(matches!(ctx.require::<usize>("M", None), Err(CliError::Usage { .. })));
    }

    #[test]
    fn config_must_be_an_object() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, "[1, 2]").unwrap();
        let err = Context::new(vec![], Some(&path), None, dir.path().into()).err().unwrap();
        assert_eq!(err.exit_code(), 1);
        let err = Context::new(vec![], Some(&dir.path().join("none.json")), None, dir.path().into())
            .err()
            .unwrap();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn validation_errors_exit_one() {
        let e: CliError = Error::InvalidArgument("x".into()).into();
        assert_eq!(e.exit_code(), 1);
        assert_eq!(CliError::Failed("x".into()).exit_code(), 1);
    }
}
