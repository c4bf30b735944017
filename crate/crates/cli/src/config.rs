//! Flat key=value config files backing every subcommand's flags.
//!
//! Lines are `key = value` (spaces optional); `#` starts a comment. A flag
//! given on the command line beats the file entry; keys no subcommand field
//! consumed are rejected so typos fail loudly.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

#[derive(Debug, Default)]
pub struct FileConfig {
    entries: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)?;
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::usage(format!(
                    "{}:{}: expected key=value, got {raw:?}",
                    path.display(),
                    i + 1
                )));
            };
            if entries.insert(key.trim().to_string(), value.trim().to_string()).is_some() {
                return Err(CliError::usage(format!(
                    "{}:{}: duplicate key {:?}",
                    path.display(),
                    i + 1,
                    key.trim()
                )));
            }
        }
        Ok(FileConfig { entries })
    }

    /// Resolve one setting: flag wins, then the file, then the default.
    pub fn resolve<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match (flag, self.entries.remove(key)) {
            (Some(v), _) => Ok(v),
            (None, Some(raw)) => raw.parse().map_err(|e| {
                CliError::usage(format!("config key {key}={raw:?}: {e}"))
            }),
            (None, None) => Ok(default),
        }
    }

    /// Like [`resolve`] but with no default; `None` means unset.
    pub fn resolve_opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match (flag, self.entries.remove(key)) {
            (Some(v), _) => Ok(Some(v)),
            (None, Some(raw)) => raw
                .parse()
                .map(Some)
                .map_err(|e| CliError::usage(format!("config key {key}={raw:?}: {e}"))),
            (None, None) => Ok(None),
        }
    }

    /// Every key must have been consumed by now.
    pub fn finish(self) -> Result<(), CliError> {
        if self.entries.is_empty() {
            Ok(())
        } else {
            let keys: Vec<&str> = self.entries.keys().map(String::as_str).collect();
            Err(CliError::usage(format!("unknown config keys: {}", keys.join(", "))))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_config(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn flags_override_file_entries_which_override_defaults() {
        let f = write_config("beta = 2.5\n# comment\nepochs=7\n");
        let mut cfg = FileConfig::load(Some(f.path())).unwrap();
        assert_eq!(cfg.resolve("beta", Some(9.0), 1.0).unwrap(), 9.0);
        assert_eq!(cfg.resolve("epochs", None::<usize>, 40).unwrap(), 7);
        assert_eq!(cfg.resolve("lr", None, 0.5).unwrap(), 0.5);
        cfg.finish().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let f = write_config("betaa = 2.5\n");
        let mut cfg = FileConfig::load(Some(f.path())).unwrap();
        let _ = cfg.resolve("beta", None, 1.0).unwrap();
        let err = cfg.finish().unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
        assert!(err.to_string().contains("betaa"));
    }

    #[test]
    fn malformed_lines_and_duplicates_fail() {
        let f = write_config("just words\n");
        assert!(FileConfig::load(Some(f.path())).is_err());
        let f = write_config("a=1\na=2\n");
        assert!(FileConfig::load(Some(f.path())).is_err());
    }

    #[test]
    fn unparsable_values_name_the_key() {
        let f = write_config("epochs = soon\n");
        let mut cfg = FileConfig::load(Some(f.path())).unwrap();
        let err = cfg.resolve("epochs", None::<usize>, 1).unwrap_err();
        assert!(err.to_string().contains("epochs"));
        assert_eq!(err.exit_code(), 2);
    }
}
