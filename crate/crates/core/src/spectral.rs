//! Dense complex linear algebra for finite-dimensional Hamiltonians.
//!
//! Hermitian eigendecompositions, unitary propagators, Gibbs states and
//! reproducible random Hamiltonians with a prescribed spectral window.
//! Eigensolves are delegated to `faer`; everything downstream works in the
//! eigenbases returned here.

use std::fs;
use std::ops::Range;
use std::path::Path;

use faer::{Mat, MatRef, Side};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::c64;
use crate::error::{Error, Result};

/// Hermiticity tolerance, relative to the largest entry magnitude.
pub const HERMITICITY_TOL: f64 = 1e-12;
/// Tolerance for structural identities (unitarity, trace, reconstruction).
pub const STRUCTURAL_TOL: f64 = 1e-10;
/// Slack allowed when checking a spectrum against its `±e_max/2` window.
pub const SPECTRAL_BOUND_TOL: f64 = 1e-12;

pub(crate) fn max_abs(m: MatRef<'_, c64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            best = best.max(m[(i, j)].norm());
        }
    }
    best
}

/// Largest `|m_ij - conj(m_ji)|` and where it occurs.
fn hermiticity_defect(m: MatRef<'_, c64>) -> (f64, usize, usize) {
    let n = m.nrows();
    let mut worst = (0.0, 0, 0);
    for j in 0..n {
        for i in j..n {
            let dev = (m[(i, j)] - m[(j, i)].conj()).norm();
            if dev > worst.0 {
                worst = (dev, i, j);
            }
        }
    }
    worst
}

/// `max_ij |a_ij - b_ij|`.
pub fn max_abs_diff(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let mut best = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            best = best.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    best
}

fn require_square(m: MatRef<'_, c64>, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::validation(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

fn require_finite(m: MatRef<'_, c64>, what: &str) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let z = m[(i, j)];
            if !z.re.is_finite() || !z.im.is_finite() {
                return Err(Error::validation(format!(
                    "{what} has a non-finite entry at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// `(m + m^†) / 2`, used to remove rounding-level anti-Hermitian parts.
pub(crate) fn hermitian_part(m: MatRef<'_, c64>) -> Mat<c64> {
    let n = m.nrows();
    Mat::from_fn(n, n, |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5)
}

/// A Hamiltonian in some fixed orthonormal basis, in energy units.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    matrix: Mat<c64>,
}

impl HermitianOperator {
    pub fn new(matrix: Mat<c64>) -> Result<Self> {
        let dim = require_square(matrix.as_ref(), "Hermitian operator")?;
        if dim < 2 {
            return Err(Error::validation(format!(
                "Hermitian operator must have dim >= 2, got {dim}"
            )));
        }
        require_finite(matrix.as_ref(), "Hermitian operator")?;
        let scale = max_abs(matrix.as_ref());
        let (dev, i, j) = hermiticity_defect(matrix.as_ref());
        if dev > HERMITICITY_TOL * scale {
            return Err(Error::validation(format!(
                "operator is not Hermitian: entry ({i}, {j}) differs from the conjugate of ({j}, {i}) by {dev:e} (largest entry magnitude {scale:e})"
            )));
        }
        Ok(Self { matrix })
    }

    pub fn from_real_diagonal(diagonal: &[f64]) -> Result<Self> {
        let n = diagonal.len();
        Self::new(Mat::from_fn(n, n, |i, j| {
            if i == j {
                c64::new(diagonal[i], 0.0)
            } else {
                c64::new(0.0, 0.0)
            }
        }))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> MatRef<'_, c64> {
        self.matrix.as_ref()
    }

    /// `op * factor`; a positive or negative real rescaling keeps Hermiticity.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            matrix: Mat::from_fn(self.dim(), self.dim(), |i, j| self.matrix[(i, j)] * factor),
        }
    }

    pub fn to_json(&self) -> MatrixJson {
        MatrixJson::from_matrix(self.matrix.as_ref())
    }

    pub fn from_json(doc: &MatrixJson) -> Result<Self> {
        Self::new(doc.to_matrix()?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_json().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        MatrixJson::load(path)
            .and_then(|doc| Self::from_json(&doc))
            .map_err(|e| e.in_file(path))
    }
}

/// Row-major JSON encoding of a square complex matrix:
/// `{ "dim": n, "re": [n² reals], "im": [n² reals] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub dim: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl MatrixJson {
    pub fn from_matrix(m: MatRef<'_, c64>) -> Self {
        let n = m.nrows();
        let mut re = Vec::with_capacity(n * n);
        let mut im = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                re.push(m[(i, j)].re);
                im.push(m[(i, j)].im);
            }
        }
        Self { dim: n, re, im }
    }

    pub fn to_matrix(&self) -> Result<Mat<c64>> {
        let n = self.dim;
        let expected = n
            .checked_mul(n)
            .ok_or_else(|| Error::validation(format!("field \"dim\" = {n} is too large")))?;
        if self.re.len() != expected {
            return Err(Error::validation(format!(
                "field \"re\" has {} entries, expected dim² = {expected}",
                self.re.len()
            )));
        }
        if self.im.len() != expected {
            return Err(Error::validation(format!(
                "field \"im\" has {} entries, expected dim² = {expected}",
                self.im.len()
            )));
        }
        Ok(Mat::from_fn(n, n, |i, j| {
            c64::new(self.re[i * n + j], self.im[i * n + j])
        }))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::from(e).in_file(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Eigenvalues in ascending order and the unitary whose columns are the
/// matching eigenvectors.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    eigenvectors: Mat<c64>,
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> MatRef<'_, c64> {
        self.eigenvectors.as_ref()
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues[self.dim() - 1]
    }

    /// `V diag(f(E)) V^†`.
    pub fn apply_function(&self, f: impl Fn(f64) -> c64) -> Mat<c64> {
        let n = self.dim();
        let v = self.eigenvectors.as_ref();
        let scaled = Mat::from_fn(n, n, |i, k| v[(i, k)] * f(self.eigenvalues[k]));
        scaled.as_ref() * v.adjoint()
    }

    pub fn reconstruct(&self) -> Mat<c64> {
        self.apply_function(|e| c64::new(e, 0.0))
    }

    /// Groups of consecutive (ascending) eigenvalues whose neighbours lie
    /// within `tol` of each other: the numerically degenerate levels.
    pub fn degenerate_clusters(&self, tol: f64) -> Vec<Range<usize>> {
        let mut clusters = Vec::new();
        let mut start = 0;
        for k in 1..=self.dim() {
            if k == self.dim() || self.eigenvalues[k] - self.eigenvalues[k - 1] > tol {
                clusters.push(start..k);
                start = k;
            }
        }
        clusters
    }

    pub fn within_bound(&self, e_max: f64) -> bool {
        let half = 0.5 * e_max;
        self.min() >= -half - SPECTRAL_BOUND_TOL && self.max() <= half + SPECTRAL_BOUND_TOL
    }
}

pub fn eigendecompose(op: &HermitianOperator) -> Result<SpectralDecomposition> {
    let evd = op
        .matrix
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("Hermitian eigensolver did not converge: {e:?}")))?;
    let n = op.dim();
    let s = evd.S().column_vector();
    let u = evd.U();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[a].re.total_cmp(&s[b].re));
    let eigenvalues = order.iter().map(|&k| s[k].re).collect();
    let eigenvectors = Mat::from_fn(n, n, |i, k| u[(i, order[k])]);
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// A unitary matrix, e.g. the driving evolution between the two measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryMatrix {
    matrix: Mat<c64>,
}

impl UnitaryMatrix {
    pub fn new(matrix: Mat<c64>) -> Result<Self> {
        let n = require_square(matrix.as_ref(), "unitary")?;
        if n == 0 {
            return Err(Error::validation("unitary must be non-empty"));
        }
        require_finite(matrix.as_ref(), "unitary")?;
        let gram = matrix.adjoint() * matrix.as_ref();
        let defect = max_abs_diff(gram.as_ref(), Mat::<c64>::identity(n, n).as_ref());
        if defect > STRUCTURAL_TOL {
            return Err(Error::validation(format!(
                "matrix is not unitary: max |U^†U - I| = {defect:e}"
            )));
        }
        Ok(Self { matrix })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: Mat::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> MatRef<'_, c64> {
        self.matrix.as_ref()
    }

    pub fn to_json(&self) -> MatrixJson {
        MatrixJson::from_matrix(self.matrix.as_ref())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_json().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        MatrixJson::load(path)
            .and_then(|doc| Self::new(doc.to_matrix()?))
            .map_err(|e| e.in_file(path))
    }
}

/// A normalized, positive semidefinite, Hermitian state.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: Mat<c64>,
}

impl DensityMatrix {
    pub fn new(matrix: Mat<c64>) -> Result<Self> {
        let n = require_square(matrix.as_ref(), "density matrix")?;
        if n == 0 {
            return Err(Error::validation("density matrix must be non-empty"));
        }
        require_finite(matrix.as_ref(), "density matrix")?;
        let (dev, i, j) = hermiticity_defect(matrix.as_ref());
        if dev > HERMITICITY_TOL {
            return Err(Error::validation(format!(
                "density matrix is not Hermitian at ({i}, {j}): deviation {dev:e}"
            )));
        }
        let trace: f64 = (0..n).map(|k| matrix[(k, k)].re).sum();
        if (trace - 1.0).abs() > STRUCTURAL_TOL {
            return Err(Error::validation(format!(
                "density matrix trace is {trace}, expected 1"
            )));
        }
        if n >= 2 {
            let herm = HermitianOperator {
                matrix: hermitian_part(matrix.as_ref()),
            };
            let lowest = eigendecompose(&herm)?.min();
            if lowest < -STRUCTURAL_TOL {
                return Err(Error::validation(format!(
                    "density matrix is not positive semidefinite: eigenvalue {lowest:e}"
                )));
            }
        } else if matrix[(0, 0)].re < -STRUCTURAL_TOL {
            return Err(Error::validation(
                "density matrix is not positive semidefinite",
            ));
        }
        Ok(Self { matrix })
    }

    /// Skips the eigenvalue check; for states that are positive by construction.
    pub(crate) fn from_psd_unchecked(matrix: Mat<c64>) -> Self {
        Self { matrix }
    }

    /// `|psi><psi|` for a (not necessarily normalized) nonzero vector.
    pub fn pure(psi: &[c64]) -> Result<Self> {
        let norm2: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if !(norm2 > 0.0) || !norm2.is_finite() {
            return Err(Error::validation(
                "pure state vector must be nonzero and finite",
            ));
        }
        let n = psi.len();
        Ok(Self::from_psd_unchecked(Mat::from_fn(n, n, |i, j| {
            psi[i] * psi[j].conj() / norm2
        })))
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        let mut m = Mat::<c64>::zeros(dim, dim);
        for k in 0..dim {
            m[(k, k)] = c64::new(1.0 / dim as f64, 0.0);
        }
        Self::from_psd_unchecked(m)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> MatRef<'_, c64> {
        self.matrix.as_ref()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|k| self.matrix[(k, k)].re).sum()
    }

    /// `Tr(rho^2)`.
    pub fn purity(&self) -> f64 {
        let n = self.dim();
        let mut acc = 0.0;
        for j in 0..n {
            for i in 0..n {
                acc += self.matrix[(i, j)].norm_sqr();
            }
        }
        acc
    }

    /// `Tr(rho * op)` for a Hermitian observable (real part).
    pub fn expectation(&self, op: MatRef<'_, c64>) -> f64 {
        let n = self.dim();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += (self.matrix[(i, j)] * op[(j, i)]).re;
            }
        }
        acc
    }

    /// `U rho U^†`.
    pub fn evolve(&self, u: &UnitaryMatrix) -> Self {
        let out = u.matrix() * self.matrix.as_ref() * u.matrix().adjoint();
        Self::from_psd_unchecked(hermitian_part(out.as_ref()))
    }
}

/// `exp(-i op t)` built from the spectral decomposition.
pub fn propagator(op: &HermitianOperator, t: f64) -> Result<UnitaryMatrix> {
    Ok(propagator_from(&eigendecompose(op)?, t))
}

pub fn propagator_from(spectrum: &SpectralDecomposition, t: f64) -> UnitaryMatrix {
    UnitaryMatrix {
        matrix: spectrum.apply_function(|e| c64::cis(-e * t)),
    }
}

/// `ln Tr exp(-beta op)`, evaluated with the ground energy factored out.
pub fn log_partition_function(spectrum: &SpectralDecomposition, beta: f64) -> f64 {
    let e0 = spectrum.min();
    let shifted: f64 = spectrum
        .eigenvalues()
        .iter()
        .map(|&e| (-beta * (e - e0)).exp())
        .sum();
    -beta * e0 + shifted.ln()
}

fn check_beta(beta: f64) -> Result<()> {
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::validation(format!(
            "inverse temperature must be finite and >= 0, got {beta}"
        )));
    }
    Ok(())
}

/// Gibbs state `exp(-beta op)/Z` and the partition function `Z`.
pub fn thermal_state(op: &HermitianOperator, beta: f64) -> Result<(DensityMatrix, f64)> {
    check_beta(beta)?;
    let spectrum = eigendecompose(op)?;
    thermal_state_from(&spectrum, beta)
}

pub fn thermal_state_from(
    spectrum: &SpectralDecomposition,
    beta: f64,
) -> Result<(DensityMatrix, f64)> {
    check_beta(beta)?;
    let e0 = spectrum.min();
    let boltzmann: Vec<f64> = spectrum
        .eigenvalues()
        .iter()
        .map(|&e| (-beta * (e - e0)).exp())
        .collect();
    let shifted_z: f64 = boltzmann.iter().sum();
    let n = spectrum.dim();
    let v = spectrum.eigenvectors();
    let weighted = Mat::from_fn(n, n, |i, k| v[(i, k)] * (boltzmann[k] / shifted_z));
    let rho = weighted.as_ref() * v.adjoint();
    let z = (-beta * e0 + shifted_z.ln()).exp();
    Ok((
        DensityMatrix::from_psd_unchecked(hermitian_part(rho.as_ref())),
        z,
    ))
}

fn gue_matrix(dim: usize, seed: u64) -> Mat<c64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = Vec::with_capacity(dim * dim);
    for _ in 0..dim * dim {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        draws.push(c64::new(re, im));
    }
    let a = |i: usize, j: usize| draws[i * dim + j];
    Mat::from_fn(dim, dim, |i, j| (a(i, j) + a(j, i).conj()) * 0.5)
}

/// Affine map `a*op + b*I` taking the spectrum exactly onto `[-e_max/2, e_max/2]`.
pub fn rescale_spectrum(op: &HermitianOperator, e_max: f64) -> Result<HermitianOperator> {
    if !(e_max > 0.0) || !e_max.is_finite() {
        return Err(Error::validation(format!(
            "e_max must be positive, got {e_max}"
        )));
    }
    let spectrum = eigendecompose(op)?;
    let (lo, hi) = (spectrum.min(), spectrum.max());
    let width = hi - lo;
    if !(width > f64::EPSILON * lo.abs().max(hi.abs())) {
        return Err(Error::validation(
            "cannot rescale an operator proportional to the identity",
        ));
    }
    let a = e_max / width;
    let n = op.dim();
    let matrix = Mat::from_fn(n, n, |i, j| {
        if i == j {
            c64::new(a * (op.matrix[(i, i)].re - lo) - 0.5 * e_max, 0.0)
        } else {
            op.matrix[(i, j)] * a
        }
    });
    HermitianOperator::new(matrix)
}

/// GUE draw, deterministic in `seed`, rescaled so its spectrum spans exactly
/// `[-e_max/2, e_max/2]`.
pub fn random_hamiltonian(dim: usize, e_max: f64, seed: u64) -> Result<HermitianOperator> {
    if dim < 2 {
        return Err(Error::validation(format!("dim must be >= 2, got {dim}")));
    }
    let raw = HermitianOperator::new(gue_matrix(dim, seed))?;
    rescale_spectrum(&raw, e_max)
}

/// Haar-typical unitary `exp(-i G)` for a GUE generator `G`; used for
/// nontrivial drives in tests and custom scenarios.
pub fn random_unitary(dim: usize, seed: u64) -> Result<UnitaryMatrix> {
    if dim < 2 {
        return Err(Error::validation(format!("dim must be >= 2, got {dim}")));
    }
    let generator = HermitianOperator::new(gue_matrix(dim, seed))?;
    propagator(&generator, 1.0)
}

pub fn spectral_bound_check(op: &HermitianOperator, e_max: f64) -> Result<bool> {
    Ok(eigendecompose(op)?.within_bound(e_max))
}
