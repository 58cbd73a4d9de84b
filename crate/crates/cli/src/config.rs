//! Run configuration: command-line flags layered over an optional TOML file.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use qwork_core::phase_estimation::{SamplerConfig, MAX_ANCILLA_QUBITS};
use qwork_core::scenarios::ScenarioSpec;
use serde::Deserialize;

pub const DEFAULT_N_QUBITS: u32 = 4;
pub const DEFAULT_M_QUBITS: u32 = 5;
pub const DEFAULT_E_MAX: f64 = 1.0;
pub const DEFAULT_BETA: f64 = 1.0;
pub const DEFAULT_K_GRID: [usize; 3] = [100, 1000, 10_000];
pub const DEFAULT_K: usize = 10_000;
pub const DEFAULT_OUT: &str = "out";
pub const DEFAULT_OMEGA1: f64 = 0.6;
pub const DEFAULT_OMEGA2: f64 = 1.0;
pub const DEFAULT_THETA: f64 = std::f64::consts::FRAC_PI_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Gue,
    TwoLevelSg,
    Custom,
}

/// Distribution the `sample` command draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleFrom {
    /// Ancilla outcomes of the phase-estimation sampler.
    Pd,
    /// The exact work distribution.
    Exact,
}

impl fmt::Display for SampleFrom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SampleFrom::Pd => "pd",
            SampleFrom::Exact => "exact",
        })
    }
}

/// Settings shared by every subcommand. Each one may also come from the
/// config file; flags win.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML file with any of the settings below (flag names with `_`).
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub scenario: Option<ScenarioKind>,
    /// System size for the GUE scenario.
    #[arg(long)]
    pub n_qubits: Option<u32>,
    /// Ancilla size M (D = 2^M outcomes).
    #[arg(long)]
    pub m_qubits: Option<u32>,
    /// Spectral bound: every Hamiltonian lies in [-e_max/2, e_max/2].
    #[arg(long)]
    pub e_max: Option<f64>,
    /// Inverse temperature of the thermal initial state.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Ascending sample counts for the convergence table.
    #[arg(long, value_delimiter = ',')]
    pub k_grid: Option<Vec<usize>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Initial Hamiltonian (custom scenario, spectral JSON).
    #[arg(long)]
    pub h: Option<PathBuf>,
    /// Final Hamiltonian (custom scenario, spectral JSON).
    #[arg(long)]
    pub h_tilde: Option<PathBuf>,
    /// Drive unitary (custom scenario, spectral JSON or `identity`).
    #[arg(long)]
    pub u: Option<String>,
    /// Drive rotation angle (two-level scenario).
    #[arg(long, allow_negative_numbers = true)]
    pub theta: Option<f64>,
    /// Initial level splitting (two-level scenario).
    #[arg(long)]
    pub omega1: Option<f64>,
    /// Final level splitting (two-level scenario).
    #[arg(long)]
    pub omega2: Option<f64>,
    /// Number of samples (`sample`).
    #[arg(long)]
    pub k: Option<usize>,
    /// Source distribution (`sample`).
    #[arg(long, value_enum)]
    pub from: Option<SampleFrom>,
    /// Ancilla sizes for the sup-norm summary (`compare`); defaults to M..M+3.
    #[arg(long, value_delimiter = ',')]
    pub m_sweep: Option<Vec<u32>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    scenario: Option<ScenarioKind>,
    n_qubits: Option<u32>,
    m_qubits: Option<u32>,
    e_max: Option<f64>,
    beta: Option<f64>,
    k_grid: Option<Vec<usize>>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    h: Option<PathBuf>,
    h_tilde: Option<PathBuf>,
    u: Option<String>,
    theta: Option<f64>,
    omega1: Option<f64>,
    omega2: Option<f64>,
    k: Option<usize>,
    from: Option<SampleFrom>,
    m_sweep: Option<Vec<u32>>,
}

impl FileConfig {
    fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let mut file: FileConfig = toml::from_str(&text)
            .with_context(|| format!("malformed config file {}", path.display()))?;
        // Matrix paths in a config file are relative to the file itself.
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut file.h, &mut file.h_tilde].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(u) = &mut file.u {
            if u != "identity" && Path::new(u).is_relative() {
                *u = base.join(&*u).to_string_lossy().into_owned();
            }
        }
        Ok(file)
    }
}

/// Fully resolved and validated settings for one command.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scenario: ScenarioSpec,
    pub m_qubits: u32,
    pub beta: f64,
    pub k_grid: Vec<usize>,
    pub seed: u64,
    pub out: PathBuf,
    pub k: usize,
    pub from: SampleFrom,
    pub m_sweep: Vec<u32>,
}

impl RunConfig {
    pub fn resolve(args: &RunArgs) -> Result<Self> {
        let file = match &args.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        macro_rules! pick {
            ($field:ident, $default:expr) => {
                args.$field
                    .clone()
                    .or(file.$field.clone())
                    .unwrap_or_else(|| $default)
            };
        }
        let kind = pick!(scenario, ScenarioKind::Gue);
        let e_max = pick!(e_max, DEFAULT_E_MAX);
        let seed = pick!(seed, 0);
        let m_qubits = pick!(m_qubits, DEFAULT_M_QUBITS);
        let scenario = match kind {
            ScenarioKind::Gue => ScenarioSpec::Gue {
                n_qubits: pick!(n_qubits, DEFAULT_N_QUBITS),
                e_max,
                seed,
            },
            ScenarioKind::TwoLevelSg => ScenarioSpec::TwoLevelSg {
                omega1: pick!(omega1, DEFAULT_OMEGA1),
                omega2: pick!(omega2, DEFAULT_OMEGA2),
                theta: pick!(theta, DEFAULT_THETA),
                e_max,
            },
            ScenarioKind::Custom => {
                let h = args.h.clone().or(file.h.clone());
                let h_tilde = args.h_tilde.clone().or(file.h_tilde.clone());
                let (Some(h), Some(h_tilde)) = (h, h_tilde) else {
                    bail!("the custom scenario needs both --h and --h-tilde");
                };
                let u = args.u.clone().or(file.u.clone());
                ScenarioSpec::Custom {
                    h,
                    h_tilde,
                    u: u.filter(|u| u != "identity").map(PathBuf::from),
                    e_max,
                }
            }
        };
        let config = Self {
            scenario,
            m_qubits,
            beta: pick!(beta, DEFAULT_BETA),
            k_grid: pick!(k_grid, DEFAULT_K_GRID.to_vec()),
            seed,
            out: pick!(out, PathBuf::from(DEFAULT_OUT)),
            k: pick!(k, DEFAULT_K),
            from: pick!(from, SampleFrom::Pd),
            m_sweep: pick!(m_sweep, (m_qubits..m_qubits.saturating_add(4)).collect()),
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        let e_max = self.scenario.e_max();
        if !e_max.is_finite() || e_max <= 0.0 {
            bail!("e_max must be positive, got {e_max}");
        }
        if !self.beta.is_finite() || self.beta <= 0.0 {
            bail!("beta must be positive, got {}", self.beta);
        }
        self.sampler()?;
        if self.k == 0 {
            bail!("K must be >= 1");
        }
        if self.k_grid.is_empty()
            || self.k_grid[0] == 0
            || self.k_grid.windows(2).any(|p| p[0] >= p[1])
        {
            bail!(
                "k-grid must be a strictly ascending list of positive counts, got {:?}",
                self.k_grid
            );
        }
        if self.m_sweep.is_empty() {
            bail!("m-sweep must not be empty");
        }
        for &m in &self.m_sweep {
            if !(1..=MAX_ANCILLA_QUBITS).contains(&m) {
                bail!("m-sweep entry {m} outside 1..={MAX_ANCILLA_QUBITS}");
            }
        }
        Ok(())
    }

    pub fn sampler(&self) -> Result<SamplerConfig> {
        Ok(SamplerConfig::new(self.m_qubits, self.scenario.e_max())?)
    }
}
