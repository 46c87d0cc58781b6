//! Run directory layout: `runs/<name>/{config,checkpoints,reports,plots,logs}`.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

/// Environment variable overriding where run directories are created.
pub const RUN_ROOT_ENV: &str = "INSINET_RUN_ROOT";

#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    /// Resolves the run root: explicit path beats the environment variable
    /// beats `./runs`.
    pub fn resolve(explicit_root: Option<&Path>, name: &str) -> RunDir {
        let base = explicit_root
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(RUN_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"));
        RunDir {
            root: base.join(name),
        }
    }

    pub fn create(&self) -> Result<()> {
        for sub in ["config", "checkpoints", "reports", "plots", "logs"] {
            std::fs::create_dir_all(self.root.join(sub))
                .with_context(|| format!("creating {}", self.root.join(sub).display()))?;
        }
        Ok(())
    }

    pub fn config(&self, file: &str) -> PathBuf {
        self.root.join("config").join(file)
    }

    pub fn checkpoint(&self, file: &str) -> PathBuf {
        self.root.join("checkpoints").join(file)
    }

    pub fn report(&self, file: &str) -> PathBuf {
        self.root.join("reports").join(file)
    }

    pub fn plot(&self, file: &str) -> PathBuf {
        self.root.join("plots").join(file)
    }

    pub fn log(&self, file: &str) -> PathBuf {
        self.root.join("logs").join(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn creates_all_subdirectories() {
        let tmp = tempfile::tempdir().unwrap();
        let run = RunDir::resolve(Some(tmp.path()), "demo");
        run.create().unwrap();
        for sub in ["config", "checkpoints", "reports", "plots", "logs"] {
            assert!(tmp.path().join("demo").join(sub).is_dir());
        }
    }

    #[test]
    fn explicit_root_wins() {
        let run = RunDir::resolve(Some(Path::new("/x")), "n");
        assert_eq!(run.root, Path::new("/x/n"));
    }
}
