//! Command implementations behind the `emarch` binary. Each command validates
//! its inputs before touching the filesystem and writes outputs through a
//! temporary file that is renamed into place on success.

pub mod commands;
pub mod config;
pub mod svg;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

/// Failure class, mapped onto the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Failure {
    Usage,
    Data,
    Runtime,
}

impl Failure {
    pub fn exit_code(self) -> u8 {
        match self {
            Failure::Usage => 1,
            Failure::Data => 2,
            Failure::Runtime => 3,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Failure,
    pub error: anyhow::Error,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage(msg: impl fmt::Display) -> CliError {
    CliError {
        kind: Failure::Usage,
        error: anyhow::anyhow!("{msg}"),
    }
}

/// Tags a fallible result with its failure class and a context line.
pub trait Tag<T> {
    fn data(self, ctx: impl fmt::Display) -> CliResult<T>;
    fn runtime(self, ctx: impl fmt::Display) -> CliResult<T>;
}

impl<T, E> Tag<T> for Result<T, E>
where
    E: Into<anyhow::Error>,
{
    fn data(self, ctx: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| CliError {
            kind: Failure::Data,
            error: e.into().context(ctx.to_string()),
        })
    }

    fn runtime(self, ctx: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| CliError {
            kind: Failure::Runtime,
            error: e.into().context(ctx.to_string()),
        })
    }
}

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp{}", std::process::id()))
}

/// Writes `bytes` to `path` via a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).runtime(format!("creating {}", dir.display()))?;
    }
    let tmp = temp_sibling(path);
    let res = fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, path));
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    res.runtime(format!("writing {}", path.display()))
}

/// Fills a fresh directory through `fill` and renames it to `dir` on success.
/// Refuses to replace a non-empty directory.
pub fn write_dir_atomic<T>(dir: &Path, fill: impl FnOnce(&Path) -> CliResult<T>) -> CliResult<T> {
    if dir.exists()
        && fs::read_dir(dir)
            .map(|mut d| d.next().is_some())
            .unwrap_or(true)
    {
        return Err(usage(format!(
            "output directory {} exists and is not empty",
            dir.display()
        )));
    }
    if let Some(parent) = dir.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(parent).runtime(format!("creating {}", parent.display()))?;
    }
    let tmp = temp_sibling(dir);
    let _ = fs::remove_dir_all(&tmp);
    fs::create_dir_all(&tmp).runtime(format!("creating {}", tmp.display()))?;
    match fill(&tmp) {
        Ok(v) => {
            if dir.exists() {
                fs::remove_dir(dir).runtime(format!("replacing {}", dir.display()))?;
            }
            fs::rename(&tmp, dir).runtime(format!("renaming into {}", dir.display()))?;
            Ok(v)
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&tmp);
            Err(e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_leaves_no_temp() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("a/b.txt");
        write_atomic(&p, b"hi").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"hi");
        assert_eq!(fs::read_dir(d.path().join("a")).unwrap().count(), 1);
    }

    #[test]
    fn failed_dir_fill_leaves_nothing() {
        let d = tempfile::tempdir().unwrap();
        let out = d.path().join("ds");
        let r: CliResult<()> = write_dir_atomic(&out, |tmp| {
            fs::write(tmp.join("x"), b"1").unwrap();
            Err(usage("boom"))
        });
        assert_eq!(r.unwrap_err().kind, Failure::Usage);
        assert!(!out.exists());
        assert_eq!(fs::read_dir(d.path()).unwrap().count(), 0);
    }

    #[test]
    fn non_empty_output_dir_is_refused() {
        let d = tempfile::tempdir().unwrap();
        fs::write(d.path().join("x"), b"1").unwrap();
        let r = write_dir_atomic(d.path(), |_| Ok(()));
        assert_eq!(r.unwrap_err().kind, Failure::Usage);
    }
}
