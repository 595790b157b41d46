//! Config-file defaults for command flags.
//!
//! A TOML file holds one table per subcommand whose keys are long flag names
//! (`-` or `_` both accepted). Precedence is flags > environment > file: a
//! file value is spliced into the argument list only when the flag is absent
//! from the command line and its environment variable is unset.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{ArgAction, Command};

#[derive(Debug, thiserror::Error)]
pub enum ConfigFileError {
    #[error("cannot read config file {path}: {source}", path = .0.display(), source = .1)]
    Read(PathBuf, #[source] std::io::Error),

    #[error("config file {path}: {reason}", path = .0.display(), reason = .1)]
    Parse(PathBuf, String),

    #[error("config file: [{command}] has no option {key:?}")]
    UnknownKey { command: String, key: String },

    #[error("config file: [{command}] {key} must be a string, number, boolean or a list of them")]
    BadValue { command: String, key: String },
}

fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    for (i, a) in argv.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return argv.get(i + 1).map(PathBuf::from);
        }
        if let Some(rest) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(rest));
        }
    }
    std::env::var_os("ATLAS_CONFIG").map(PathBuf::from)
}

fn scalar(v: &toml::Value) -> Option<String> {
    match v {
        toml::Value::String(s) => Some(s.clone()),
        toml::Value::Integer(i) => Some(i.to_string()),
        toml::Value::Float(x) => Some(x.to_string()),
        toml::Value::Boolean(b) => Some(b.to_string()),
        _ => None,
    }
}

fn present(argv: &[OsString], long: &str) -> bool {
    let flag = format!("--{long}");
    let prefix = format!("--{long}=");
    argv.iter().any(|a| {
        let s = a.to_string_lossy();
        s == flag || s.starts_with(&prefix)
    })
}

/// `argv` with file defaults for the chosen subcommand inserted right after
/// the subcommand name.
pub fn with_file_defaults(root: &Command, argv: Vec<OsString>) -> Result<Vec<OsString>, ConfigFileError> {
    with_file_defaults_env(root, argv, |k| std::env::var_os(k).is_some())
}

pub fn with_file_defaults_env(
    root: &Command,
    argv: Vec<OsString>,
    env_is_set: impl Fn(&str) -> bool,
) -> Result<Vec<OsString>, ConfigFileError> {
    let Some(path) = config_path(&argv) else { return Ok(argv) };
    let text = fs::read_to_string(&path).map_err(|e| ConfigFileError::Read(path.clone(), e))?;
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigFileError::Parse(path.clone(), e.to_string()))?;

    let Some((pos, sub)) = argv
        .iter()
        .enumerate()
        .skip(1)
        .find_map(|(i, a)| root.find_subcommand(a.to_string_lossy().as_ref()).map(|c| (i, c)))
    else {
        return Ok(argv);
    };
    let name = sub.get_name().to_string();
    let Some(section) = table.get(&name).and_then(toml::Value::as_table) else { return Ok(argv) };

    let mut injected: Vec<OsString> = Vec::new();
    for (key, value) in section {
        let long = key.replace('_', "-");
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(long.as_str()))
            .ok_or_else(|| ConfigFileError::UnknownKey { command: name.clone(), key: key.clone() })?;
        if present(&argv, &long) {
            continue;
        }
        if let Some(env) = arg.get_env() {
            if env_is_set(&env.to_string_lossy()) {
                continue;
            }
        }
        let bad = || ConfigFileError::BadValue { command: name.clone(), key: key.clone() };
        match (arg.get_action(), value) {
            (ArgAction::SetTrue, toml::Value::Boolean(b)) => {
                if *b {
                    injected.push(format!("--{long}").into());
                }
            }
            (_, toml::Value::Array(items)) => {
                for item in items {
                    injected.push(format!("--{long}").into());
                    injected.push(scalar(item).ok_or_else(bad)?.into());
                }
            }
            (_, v) => {
                injected.push(format!("--{long}").into());
                injected.push(scalar(v).ok_or_else(bad)?.into());
            }
        }
    }
    let mut out = argv;
    out.splice(pos + 1..pos + 1, injected);
    Ok(out)
}
