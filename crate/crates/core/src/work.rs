//! Two-point-measurement work statistics and the equivalent single-time POVM.
//!
//! A [`QuenchProtocol`] fixes the initial and final Hamiltonians and the
//! driving unitary. Work values are the gaps `w = Ẽ_m - E_n` between final
//! and initial levels. Gaps that agree to within `1e-9 * e_max` are the same
//! outcome, and levels closer than that tolerance are treated as one
//! degenerate eigenspace, so every quantity here is computed through
//! eigenspace projectors and does not depend on the eigenvector gauge.

use std::io::{Read, Write};
use std::ops::Range;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::c64;
use crate::error::{Error, Result};
use crate::spectral::{
    self, hermitian_part, log_partition_function, DensityMatrix, HermitianOperator,
    SpectralDecomposition, UnitaryMatrix, STRUCTURAL_TOL,
};

/// Gaps (and levels) closer than this multiple of `e_max` are merged.
pub const GAP_MERGE_REL_TOL: f64 = 1e-9;
/// Point masses at or below this value are dropped from a distribution.
pub const MIN_POINT_MASS: f64 = 1e-15;
/// Outcomes with smaller probability have no post-measurement state.
pub const MIN_OUTCOME_PROBABILITY: f64 = 1e-14;

/// Initial Hamiltonian `H`, final Hamiltonian `H̃`, drive `U_E` and the
/// spectral half-width bound `e_max` shared by both Hamiltonians.
#[derive(Debug, Clone)]
pub struct QuenchProtocol {
    h_initial: HermitianOperator,
    h_final: HermitianOperator,
    drive: UnitaryMatrix,
    e_max: f64,
    initial: SpectralDecomposition,
    final_: SpectralDecomposition,
}

impl QuenchProtocol {
    pub fn new(
        h_initial: HermitianOperator,
        h_final: HermitianOperator,
        drive: UnitaryMatrix,
        e_max: f64,
    ) -> Result<Self> {
        if !(e_max > 0.0) || !e_max.is_finite() {
            return Err(Error::validation(format!(
                "e_max must be positive, got {e_max}"
            )));
        }
        let dim = h_initial.dim();
        if h_final.dim() != dim {
            return Err(Error::DimensionMismatch {
                what: "final Hamiltonian",
                expected: dim,
                found: h_final.dim(),
            });
        }
        if drive.dim() != dim {
            return Err(Error::DimensionMismatch {
                what: "drive unitary",
                expected: dim,
                found: drive.dim(),
            });
        }
        let initial = spectral::eigendecompose(&h_initial)?;
        let final_ = spectral::eigendecompose(&h_final)?;
        for (name, s) in [("initial", &initial), ("final", &final_)] {
            if !s.within_bound(e_max) {
                return Err(Error::validation(format!(
                    "{name} Hamiltonian spectrum [{}, {}] exceeds [-e_max/2, e_max/2] with e_max = {e_max}",
                    s.min(),
                    s.max()
                )));
            }
        }
        Ok(Self {
            h_initial,
            h_final,
            drive,
            e_max,
            initial,
            final_,
        })
    }

    pub fn dim(&self) -> usize {
        self.h_initial.dim()
    }

    pub fn e_max(&self) -> f64 {
        self.e_max
    }

    pub fn h_initial(&self) -> &HermitianOperator {
        &self.h_initial
    }

    pub fn h_final(&self) -> &HermitianOperator {
        &self.h_final
    }

    pub fn drive(&self) -> &UnitaryMatrix {
        &self.drive
    }

    pub fn initial_spectrum(&self) -> &SpectralDecomposition {
        &self.initial
    }

    pub fn final_spectrum(&self) -> &SpectralDecomposition {
        &self.final_
    }

    pub fn merge_tol(&self) -> f64 {
        GAP_MERGE_REL_TOL * self.e_max
    }

    /// `<φ̃_m| U_E |φ_n>` at row `m`, column `n`.
    pub fn transition_amplitudes(&self) -> Mat<c64> {
        let vf = self.final_.eigenvectors();
        let vi = self.initial.eigenvectors();
        vf.adjoint() * (self.drive.matrix() * vi)
    }

    /// `ln Z` of the initial and final Hamiltonians at inverse temperature `beta`.
    pub fn log_partition_functions(&self, beta: f64) -> (f64, f64) {
        (
            log_partition_function(&self.initial, beta),
            log_partition_function(&self.final_, beta),
        )
    }

    /// `ΔF = -(1/β) ln(Z̃/Z)`.
    pub fn free_energy_difference(&self, beta: f64) -> Result<f64> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::validation(format!(
                "beta must be positive, got {beta}"
            )));
        }
        let (log_z, log_z_tilde) = self.log_partition_functions(beta);
        Ok(-(log_z_tilde - log_z) / beta)
    }

    /// Gibbs state of the initial Hamiltonian.
    pub fn thermal_initial_state(&self, beta: f64) -> Result<DensityMatrix> {
        Ok(spectral::thermal_state_from(&self.initial, beta)?.0)
    }

    fn check_state(&self, rho: &DensityMatrix) -> Result<()> {
        if rho.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "density matrix",
                expected: self.dim(),
                found: rho.dim(),
            });
        }
        Ok(())
    }
}

/// Levels snapped to their cluster mean, plus the clusters themselves.
pub(crate) struct LevelStructure {
    pub energies: Vec<f64>,
    pub clusters: Vec<Range<usize>>,
}

pub(crate) fn level_structure(spectrum: &SpectralDecomposition, tol: f64) -> LevelStructure {
    let clusters = spectrum.degenerate_clusters(tol);
    let mut energies = spectrum.eigenvalues().to_vec();
    for c in &clusters {
        if c.len() > 1 {
            let mean = spectrum.eigenvalues()[c.clone()].iter().sum::<f64>() / c.len() as f64;
            energies[c.clone()].iter_mut().for_each(|e| *e = mean);
        }
    }
    LevelStructure { energies, clusters }
}

/// Sorts `(gap, payload)` pairs and splits them into runs whose consecutive
/// gaps differ by at most `tol`.
fn group_gaps<T: Ord>(items: &mut [(f64, T)], tol: f64) -> Vec<Range<usize>> {
    items.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    let mut groups = Vec::new();
    let mut start = 0;
    for k in 1..=items.len() {
        if k == items.len() || items[k].0 - items[k - 1].0 > tol {
            groups.push(start..k);
            start = k;
        }
    }
    groups
}

fn group_center<T>(items: &[(f64, T)]) -> f64 {
    items.iter().map(|(g, _)| g).sum::<f64>() / items.len() as f64
}

/// One atom of a discrete work distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkPoint {
    pub w: f64,
    pub p: f64,
}

/// Point masses at strictly ascending work values, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<WorkPoint>", into = "Vec<WorkPoint>")]
pub struct WorkDistribution {
    points: Vec<WorkPoint>,
}

impl TryFrom<Vec<WorkPoint>> for WorkDistribution {
    type Error = Error;

    fn try_from(points: Vec<WorkPoint>) -> Result<Self> {
        Self::new(points)
    }
}

impl From<WorkDistribution> for Vec<WorkPoint> {
    fn from(d: WorkDistribution) -> Self {
        d.points
    }
}

impl WorkDistribution {
    pub fn new(points: Vec<WorkPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::validation("work distribution has no points"));
        }
        for (k, pt) in points.iter().enumerate() {
            if !pt.w.is_finite() || !pt.p.is_finite() || pt.p <= 0.0 {
                return Err(Error::validation(format!(
                    "work point {k} = ({}, {}) must have finite w and positive finite p",
                    pt.w, pt.p
                )));
            }
        }
        if let Some(k) = points.windows(2).position(|pair| pair[1].w <= pair[0].w) {
            return Err(Error::validation(format!(
                "work values must be strictly ascending (points {k} and {})",
                k + 1
            )));
        }
        let total: f64 = points.iter().map(|pt| pt.p).sum();
        if (total - 1.0).abs() > STRUCTURAL_TOL {
            return Err(Error::validation(format!(
                "work distribution masses sum to {total}, expected 1"
            )));
        }
        Ok(Self { points })
    }

    /// A single point mass.
    pub fn delta(w: f64) -> Result<Self> {
        Self::new(vec![WorkPoint { w, p: 1.0 }])
    }

    pub fn points(&self) -> &[WorkPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.points.iter().map(|pt| pt.p).sum()
    }

    /// Mass at `w`, matching within `tol`; zero if no point is that close.
    pub fn mass_at(&self, w: f64, tol: f64) -> f64 {
        let idx = self.points.partition_point(|pt| pt.w < w - tol);
        self.points[idx..]
            .iter()
            .take_while(|pt| pt.w <= w + tol)
            .map(|pt| pt.p)
            .sum()
    }

    pub fn max_abs_work(&self) -> f64 {
        self.points.iter().map(|pt| pt.w.abs()).fold(0.0, f64::max)
    }

    /// `ln Σ_k p_k exp(-beta w_k)`, computed with a max shift.
    pub fn log_exp_average(&self, beta: f64) -> f64 {
        let shift = self
            .points
            .iter()
            .map(|pt| -beta * pt.w)
            .fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = self
            .points
            .iter()
            .map(|pt| pt.p * (-beta * pt.w - shift).exp())
            .sum();
        shift + sum.ln()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["w", "p"])?;
        for pt in &self.points {
            writer.write_record([pt.w.to_string(), pt.p.to_string()])?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Reads the `w,p` table written by [`write_csv`](Self::write_csv);
    /// lines starting with `#` are provenance comments.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(input);
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["w", "p"] {
            return Err(Error::validation(format!(
                "expected CSV columns w,p, found {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut points = Vec::new();
        for row in reader.deserialize() {
            points.push(row?);
        }
        Self::new(points)
    }
}

/// The two-point-measurement work distribution of `rho` under `protocol`.
///
/// `p_n` is the weight of the initial eigenspace (`Tr ρ Π_n`, so coherences
/// between distinct levels are dephased by the first measurement) and the
/// transition weight into each final level is taken from `Π̃_m U_E Π_n`.
pub fn exact_work_distribution(
    protocol: &QuenchProtocol,
    rho: &DensityMatrix,
) -> Result<WorkDistribution> {
    protocol.check_state(rho)?;
    let tol = protocol.merge_tol();
    let initial = level_structure(&protocol.initial, tol);
    let final_ = level_structure(&protocol.final_, tol);
    let amps = protocol.transition_amplitudes();
    let vi = protocol.initial.eigenvectors();
    let rho_eig = vi.adjoint() * (rho.matrix() * vi);
    let dim = protocol.dim();

    let mut entries: Vec<(f64, usize)> = Vec::with_capacity(dim * initial.clusters.len());
    let mut masses: Vec<f64> = Vec::with_capacity(dim * initial.clusters.len());
    for cluster in &initial.clusters {
        let e_n = initial.energies[cluster.start];
        if cluster.len() == 1 {
            let n = cluster.start;
            let p_n = rho_eig[(n, n)].re;
            for m in 0..dim {
                entries.push((final_.energies[m] - e_n, masses.len()));
                masses.push(amps[(m, n)].norm_sqr() * p_n);
            }
        } else {
            for m in 0..dim {
                let mut mass = 0.0;
                for n in cluster.clone() {
                    for n2 in cluster.clone() {
                        mass += (amps[(m, n)] * rho_eig[(n, n2)] * amps[(m, n2)].conj()).re;
                    }
                }
                entries.push((final_.energies[m] - e_n, masses.len()));
                masses.push(mass);
            }
        }
    }

    let groups = group_gaps(&mut entries, tol);
    let mut points = Vec::with_capacity(groups.len());
    for g in groups {
        let run = &entries[g];
        let p: f64 = run.iter().map(|&(_, k)| masses[k]).sum();
        if p > MIN_POINT_MASS {
            points.push(WorkPoint {
                w: group_center(run),
                p,
            });
        }
    }
    WorkDistribution::new(points)
}

/// Kraus operator for the work outcome `w`.
#[derive(Debug, Clone)]
pub struct KrausOperator {
    pub w: f64,
    pub matrix: Mat<c64>,
}

impl KrausOperator {
    /// POVM element `W(w) = A_w^† A_w`.
    pub fn povm_element(&self) -> Mat<c64> {
        self.matrix.adjoint() * self.matrix.as_ref()
    }

    /// `Tr(A_w ρ A_w^†)`.
    pub fn probability(&self, rho: &DensityMatrix) -> f64 {
        rho.expectation(self.povm_element().as_ref())
    }

    pub fn rank(&self, tol: f64) -> usize {
        let w = self.povm_element();
        let Ok(herm) = HermitianOperator::new(hermitian_part(w.as_ref())) else {
            return 0;
        };
        match spectral::eigendecompose(&herm) {
            Ok(s) => s.eigenvalues().iter().filter(|&&e| e > tol).count(),
            Err(_) => 0,
        }
    }
}

/// The Kraus decomposition `{A_w}` of the work POVM, ascending in `w`.
#[derive(Debug, Clone)]
pub struct KrausSet {
    dim: usize,
    merge_tol: f64,
    operators: Vec<KrausOperator>,
}

impl KrausSet {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn operators(&self) -> &[KrausOperator] {
        &self.operators
    }

    pub fn len(&self) -> usize {
        self.operators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.operators.is_empty()
    }

    /// Operator whose outcome lies within the gap-merge tolerance of `w`.
    pub fn find(&self, w: f64) -> Option<&KrausOperator> {
        self.operators
            .iter()
            .filter(|op| (op.w - w).abs() <= self.merge_tol)
            .min_by(|a, b| (a.w - w).abs().total_cmp(&(b.w - w).abs()))
    }

    /// `Σ_w A_w^† A_w`.
    pub fn completeness_sum(&self) -> Mat<c64> {
        let mut sum = Mat::<c64>::zeros(self.dim, self.dim);
        for op in &self.operators {
            let w = op.povm_element();
            sum = Mat::from_fn(self.dim, self.dim, |i, j| sum[(i, j)] + w[(i, j)]);
        }
        sum
    }

    /// `max |Σ_w A_w^† A_w - I|`.
    pub fn completeness_defect(&self) -> f64 {
        spectral::max_abs_diff(
            self.completeness_sum().as_ref(),
            Mat::<c64>::identity(self.dim, self.dim).as_ref(),
        )
    }

    /// `(A_w ρ A_w^† / P(w), P(w))`.
    pub fn post_measurement_state(
        &self,
        rho: &DensityMatrix,
        w: f64,
    ) -> Result<(DensityMatrix, f64)> {
        if rho.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "density matrix",
                expected: self.dim,
                found: rho.dim(),
            });
        }
        let op = self.find(w).ok_or(Error::UnrealizableGap { w })?;
        let a = op.matrix.as_ref();
        let unnormalized = a * rho.matrix() * a.adjoint();
        let probability: f64 = (0..self.dim).map(|k| unnormalized[(k, k)].re).sum();
        if !(probability > MIN_OUTCOME_PROBABILITY) {
            return Err(Error::ZeroProbability { w, probability });
        }
        let herm = hermitian_part(unnormalized.as_ref());
        let normalized = Mat::from_fn(self.dim, self.dim, |i, j| herm[(i, j)] / probability);
        Ok((DensityMatrix::new(normalized)?, probability))
    }
}

/// `A_w = Σ_{Ẽ_m - E_n = w} <φ̃_m|U_E|φ_n> |φ̃_m><φ_n|` for every gap with a
/// nonzero amplitude.
///
/// Operators are stored densely, so this is meant for systems of modest
/// dimension (the number of outcomes grows like `dim²`).
pub fn kraus_operators(protocol: &QuenchProtocol) -> KrausSet {
    let tol = protocol.merge_tol();
    let dim = protocol.dim();
    let initial = level_structure(&protocol.initial, tol);
    let final_ = level_structure(&protocol.final_, tol);
    let amps = protocol.transition_amplitudes();
    let vi = protocol.initial.eigenvectors();
    let vf = protocol.final_.eigenvectors();

    let mut pairs: Vec<(f64, (usize, usize))> = Vec::with_capacity(dim * dim);
    for n in 0..dim {
        for m in 0..dim {
            pairs.push((final_.energies[m] - initial.energies[n], (m, n)));
        }
    }
    let groups = group_gaps(&mut pairs, tol);
    let mut operators = Vec::with_capacity(groups.len());
    for g in groups {
        let run = &pairs[g];
        let weight: f64 = run.iter().map(|&(_, (m, n))| amps[(m, n)].norm_sqr()).sum();
        // Identically vanishing outcomes are left out.
        if weight <= 1e-30 {
            continue;
        }
        let mut a = Mat::<c64>::zeros(dim, dim);
        for &(_, (m, n)) in run {
            let amp = amps[(m, n)];
            for j in 0..dim {
                let right = amp * vi[(j, n)].conj();
                for i in 0..dim {
                    a[(i, j)] += vf[(i, m)] * right;
                }
            }
        }
        operators.push(KrausOperator {
            w: group_center(run),
            matrix: a,
        });
    }
    KrausSet {
        dim,
        merge_tol: tol,
        operators,
    }
}

/// State left behind after observing work `w`, with the outcome probability.
pub fn post_measurement_state(
    protocol: &QuenchProtocol,
    rho: &DensityMatrix,
    w: f64,
) -> Result<(DensityMatrix, f64)> {
    protocol.check_state(rho)?;
    kraus_operators(protocol).post_measurement_state(rho, w)
}

/// Both sides of `<exp(-β w)> = Z̃/Z` for a thermal initial state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JarzynskiCheck {
    /// `Σ_k p_k exp(-β w_k)` over the exact work distribution.
    pub lhs: f64,
    /// `Z̃/Z` from the two partition functions.
    pub rhs: f64,
    /// `-(1/β) ln(Z̃/Z)`.
    pub delta_f: f64,
}

impl JarzynskiCheck {
    pub fn relative_error(&self) -> f64 {
        ((self.lhs - self.rhs) / self.rhs).abs()
    }
}

pub fn jarzynski_exact(protocol: &QuenchProtocol, beta: f64) -> Result<JarzynskiCheck> {
    let delta_f = protocol.free_energy_difference(beta)?;
    let rho = protocol.thermal_initial_state(beta)?;
    let dist = exact_work_distribution(protocol, &rho)?;
    Ok(JarzynskiCheck {
        lhs: dist.log_exp_average(beta).exp(),
        rhs: (-beta * delta_f).exp(),
        delta_f,
    })
}

/// `Tr(U_E ρ U_E^† H̃) - Tr(ρ H)`: the mean work when `ρ` commutes with `H`.
pub fn mean_work_trace_formula(protocol: &QuenchProtocol, rho: &DensityMatrix) -> f64 {
    let evolved = rho.evolve(&protocol.drive);
    evolved.expectation(protocol.h_final.matrix()) - rho.expectation(protocol.h_initial.matrix())
}
