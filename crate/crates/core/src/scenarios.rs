//! Canonical quench protocols.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::c64;
use crate::error::{Error, Result};
use crate::spectral::{random_hamiltonian, HermitianOperator, UnitaryMatrix};
use crate::work::QuenchProtocol;
use crate::Mat;

/// Largest GUE system accepted, in qubits.
pub const MAX_GUE_QUBITS: u32 = 12;

/// A protocol recipe, as written in run configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScenarioSpec {
    /// Sudden quench between two independent GUE Hamiltonians.
    Gue {
        n_qubits: u32,
        e_max: f64,
        seed: u64,
    },
    /// `H = (ω₁/2) Z`, `H̃ = (ω₂/2) Z`, drive `exp(-iθX/2)`.
    TwoLevelSg {
        omega1: f64,
        omega2: f64,
        theta: f64,
        e_max: f64,
    },
    /// Matrices from spectral JSON files; `u = None` means the identity drive.
    Custom {
        h: PathBuf,
        h_tilde: PathBuf,
        u: Option<PathBuf>,
        e_max: f64,
    },
}

impl ScenarioSpec {
    pub fn build(&self) -> Result<QuenchProtocol> {
        match self {
            ScenarioSpec::Gue {
                n_qubits,
                e_max,
                seed,
            } => build_gue_quench(*n_qubits, *e_max, *seed),
            ScenarioSpec::TwoLevelSg {
                omega1,
                omega2,
                theta,
                e_max,
            } => build_two_level_sg(*omega1, *omega2, *theta, *e_max),
            ScenarioSpec::Custom {
                h,
                h_tilde,
                u,
                e_max,
            } => load_custom(h, h_tilde, u.as_deref(), *e_max),
        }
    }

    pub fn e_max(&self) -> f64 {
        match self {
            ScenarioSpec::Gue { e_max, .. }
            | ScenarioSpec::TwoLevelSg { e_max, .. }
            | ScenarioSpec::Custom { e_max, .. } => *e_max,
        }
    }

    /// Short label used in output provenance.
    pub fn tag(&self) -> String {
        match self {
            ScenarioSpec::Gue {
                n_qubits,
                e_max,
                seed,
            } => format!("gue(n_qubits={n_qubits}, e_max={e_max}, seed={seed})"),
            ScenarioSpec::TwoLevelSg {
                omega1,
                omega2,
                theta,
                e_max,
            } => format!(
                "two-level-sg(omega1={omega1}, omega2={omega2}, theta={theta}, e_max={e_max})"
            ),
            ScenarioSpec::Custom {
                h,
                h_tilde,
                u,
                e_max,
            } => format!(
                "custom(h={}, h_tilde={}, u={}, e_max={e_max})",
                h.display(),
                h_tilde.display(),
                u.as_ref()
                    .map_or("identity".to_string(), |p| p.display().to_string())
            ),
        }
    }
}

/// GUE draws with seeds `seed` and `seed ^ 1`, each rescaled onto
/// `[-e_max/2, e_max/2]`, and no drive.
pub fn build_gue_quench(n_qubits: u32, e_max: f64, seed: u64) -> Result<QuenchProtocol> {
    if !(1..=MAX_GUE_QUBITS).contains(&n_qubits) {
        return Err(Error::validation(format!(
            "GUE scenarios support 1..={MAX_GUE_QUBITS} qubits, got {n_qubits}"
        )));
    }
    let dim = 1usize << n_qubits;
    let h = random_hamiltonian(dim, e_max, seed)?;
    let h_tilde = random_hamiltonian(dim, e_max, seed ^ 1)?;
    QuenchProtocol::new(h, h_tilde, UnitaryMatrix::identity(dim), e_max)
}

fn pauli_z(scale: f64) -> Result<HermitianOperator> {
    HermitianOperator::from_real_diagonal(&[scale, -scale])
}

/// Two-level quench with gaps `ω₁`, `ω₂` and an `x`-rotation by `θ`.
pub fn build_two_level_sg(
    omega1: f64,
    omega2: f64,
    theta: f64,
    e_max: f64,
) -> Result<QuenchProtocol> {
    if !theta.is_finite() {
        return Err(Error::validation(format!(
            "theta must be finite, got {theta}"
        )));
    }
    for (name, omega) in [("omega1", omega1), ("omega2", omega2)] {
        if !(omega > 0.0 && omega <= e_max) {
            return Err(Error::validation(format!(
                "{name} must lie in (0, e_max = {e_max}], got {omega}"
            )));
        }
    }
    let (s, c) = (theta / 2.0).sin_cos();
    let u = Mat::from_fn(2, 2, |i, j| {
        if i == j {
            c64::new(c, 0.0)
        } else {
            c64::new(0.0, -s)
        }
    });
    QuenchProtocol::new(
        pauli_z(omega1 / 2.0)?,
        pauli_z(omega2 / 2.0)?,
        UnitaryMatrix::new(u)?,
        e_max,
    )
}

/// Protocol from spectral JSON files; `u = None` selects the identity drive.
pub fn load_custom(
    h: &Path,
    h_tilde: &Path,
    u: Option<&Path>,
    e_max: f64,
) -> Result<QuenchProtocol> {
    let h = HermitianOperator::load(h)?;
    let h_tilde = HermitianOperator::load(h_tilde)?;
    let u = match u {
        Some(path) => UnitaryMatrix::load(path)?,
        None => UnitaryMatrix::identity(h.dim()),
    };
    QuenchProtocol::new(h, h_tilde, u, e_max)
}

/// Writes the three matrices of `protocol` as spectral JSON files.
pub fn save_protocol(protocol: &QuenchProtocol, h: &Path, h_tilde: &Path, u: &Path) -> Result<()> {
    protocol.h_initial().save(h)?;
    protocol.h_final().save(h_tilde)?;
    protocol.drive().save(u)
}
