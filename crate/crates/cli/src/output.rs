//! Atomic output files with `#` provenance headers.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::config::RunConfig;

/// Comment lines identifying the producing command and its settings.
pub fn provenance(command: &str, config: &RunConfig, with_sampler: bool) -> Vec<String> {
    let mut lines = vec![
        format!("qwork {}: {command}", env!("CARGO_PKG_VERSION")),
        format!("scenario: {}", config.scenario.tag()),
        format!("beta: {}", config.beta),
    ];
    if with_sampler {
        lines.push(format!("seed: {}", config.seed));
        lines.push(format!("M: {}", config.m_qubits));
        lines.push(format!("e_max: {}", config.scenario.e_max()));
    }
    lines
}

/// Writes `dir/name` through a temporary file in the same directory, so the
/// target is either absent, the old version or the complete new version.
pub fn write_atomic(
    dir: &Path,
    name: &str,
    header: &[String],
    body: impl FnOnce(&mut dyn Write) -> Result<()>,
) -> Result<PathBuf> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let target = dir.join(name);
    let tmp = tempfile::Builder::new()
        .prefix(&format!(".{name}."))
        .tempfile_in(dir)
        .with_context(|| format!("cannot create a temporary file in {}", dir.display()))?;
    {
        let mut out = BufWriter::new(tmp.as_file());
        for line in header {
            writeln!(out, "# {line}")?;
        }
        body(&mut out)?;
        out.flush()?;
    }
    tmp.as_file().sync_all()?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        fs::set_permissions(tmp.path(), fs::Permissions::from_mode(0o644))?;
    }
    tmp.persist(&target)
        .with_context(|| format!("cannot write {}", target.display()))?;
    Ok(target)
}
