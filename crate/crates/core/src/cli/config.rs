use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: expected \"key = value\"")]
    Syntax { path: PathBuf, line: usize },
    #[error("--config needs a path")]
    MissingPath,
}

impl ConfigError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ConfigError::Io { .. } => super::EXIT_IO,
            _ => super::EXIT_USAGE,
        }
    }
}

/// Parses "key = value" lines; `#` starts a comment.
pub fn parse_config(text: &str, path: &std::path::Path) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            path: path.to_path_buf(),
            line: i + 1,
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Syntax {
                path: path.to_path_buf(),
                line: i + 1,
            });
        }
        out.push((k.replace('_', "-"), v.to_string()));
    }
    Ok(out)
}

/// Splices the entries of a `--config` file in as `--key value` pairs right
/// after the subcommand, so explicit flags that follow override them and
/// unknown keys are rejected by the parser like unknown flags.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, ConfigError> {
    let mut path = None;
    let mut rest = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = Some(PathBuf::from(it.next().ok_or(ConfigError::MissingPath)?));
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else {
        return Ok(rest);
    };
    let text = fs::read_to_string(&path).map_err(|source| ConfigError::Io {
        path: path.clone(),
        source,
    })?;
    let entries = parse_config(&text, &path)?;
    // program name, then the first non-flag token is the subcommand
    let at = rest
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map_or(rest.len(), |p| p + 2);
    // list-valued flags append in clap, so explicit flags must drop their config entry
    let explicit: std::collections::HashSet<String> = rest
        .iter()
        .filter_map(|a| {
            let s = a.to_string_lossy();
            let name = s.strip_prefix("--")?;
            Some(name.split('=').next().unwrap_or(name).to_string())
        })
        .collect();
    let injected: Vec<OsString> = entries
        .into_iter()
        .filter(|(k, _)| !explicit.contains(k))
        .flat_map(|(k, v)| [OsString::from(format!("--{k}")), OsString::from(v)])
        .collect();
    rest.splice(at..at, injected);
    Ok(rest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_underscores() {
        let p = std::path::Path::new("x");
        let e = parse_config("# recipe\nshots = 4\n\nz_init = gaussian  # trailing\n", p).unwrap();
        assert_eq!(e, vec![("shots".into(), "4".into()), ("z-init".into(), "gaussian".into())]);
        assert!(parse_config("shots 4", p).is_err());
        assert!(parse_config("= 4", p).is_err());
    }

    #[test]
    fn injects_after_subcommand_unless_explicit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.conf");
        fs::write(&path, "epochs = 3\nshots = 2\n").unwrap();
        let args: Vec<OsString> = ["palmlab", "--config", path.to_str().unwrap(), "run", "--epochs", "5"]
            .iter()
            .map(OsString::from)
            .collect();
        let out = expand_config(args).unwrap();
        let out: Vec<String> = out.iter().map(|s| s.to_string_lossy().into_owned()).collect();
        assert_eq!(out, vec!["palmlab", "run", "--shots", "2", "--epochs", "5"]);
    }
}
