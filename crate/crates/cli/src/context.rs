use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chronocon::cohort::{load_cohort, split_patients, Cohort};
use chronocon::config::Config;
use chronocon::synthetic;

use crate::args::Cli;
use crate::CliResult;

/// Settings shared by every subcommand.
pub struct Context {
    pub config: Config,
    pub config_path: Option<PathBuf>,
    pub cohort_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub jobs: usize,
}

impl Context {
    pub fn from_cli(cli: &Cli) -> CliResult<Self> {
        let mut config = match &cli.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        if let Some(seed) = cli.seed {
            config.cohort.seed = seed;
            config.split.seed = seed;
            config.train.seed = seed;
        }
        Ok(Self {
            config,
            config_path: cli.config.clone(),
            cohort_path: cli.cohort.clone(),
            seed: cli.seed,
            out_dir: cli.out_dir.clone(),
            jobs: cli.jobs.max(1),
        })
    }

    /// The unsplit cohort: read from `--cohort`, or simulated.
    pub fn raw_cohort(&self) -> CliResult<Cohort> {
        match &self.cohort_path {
            Some(p) => Ok(load_cohort(p, &self.config.score_max(), self.config.cohort.label_max)?),
            None => Ok(synthetic::generate(&self.config.cohort)?.0),
        }
    }

    /// The cohort with its patient-level split assigned.
    pub fn cohort(&self) -> CliResult<Cohort> {
        let raw = self.raw_cohort()?;
        Ok(split_patients(&raw, self.config.split.fractions(), self.config.split.seed)?)
    }

    pub fn output(&self, explicit: &Option<PathBuf>, default_name: &str) -> PathBuf {
        explicit
            .clone()
            .unwrap_or_else(|| self.out_dir.join(default_name))
    }

    /// Global flags to hand to a child process.
    pub fn child_args(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(p) = &self.config_path {
            out.push("--config".into());
            out.push(p.display().to_string());
        }
        if let Some(p) = &self.cohort_path {
            out.push("--cohort".into());
            out.push(p.display().to_string());
        }
        if let Some(s) = self.seed {
            out.push("--seed".into());
            out.push(s.to_string());
        }
        out.push("--out-dir".into());
        out.push(self.out_dir.display().to_string());
        out
    }
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    ensure_parent(path)?;
    let name = path
        .file_name()
        .ok_or_else(|| format!("not a file path: {}", path.display()))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Renders with `render` into memory, then writes atomically.
pub fn write_with(
    path: &Path,
    render: impl FnOnce(&mut Vec<u8>) -> chronocon::Result<()>,
) -> CliResult<()> {
    let mut buf = Vec::new();
    render(&mut buf)?;
    write_atomic(path, &buf)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}
