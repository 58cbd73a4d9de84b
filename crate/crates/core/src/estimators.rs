//! Jarzynski free-energy estimation from work samples.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase_estimation::{
    convolve_distribution, sample, sample_exact, CoarseGrainedDistribution, SamplerConfig,
};
use crate::work::{exact_work_distribution, QuenchProtocol, WorkDistribution};

/// Mixes the `P_D` stream seed away from the `P(w)` stream seed.
pub const PD_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

/// Where a sample set came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSource {
    /// Ancilla size for `P_D` samples, absent for exact samples.
    pub m_qubits: Option<u32>,
    pub e_max: f64,
    pub tag: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkSampleSet {
    samples: Vec<f64>,
    bins: Option<Vec<usize>>,
    seed: u64,
    source: SampleSource,
}

impl WorkSampleSet {
    pub fn new(
        samples: Vec<f64>,
        bins: Option<Vec<usize>>,
        seed: u64,
        source: SampleSource,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::validation("a sample set needs K >= 1 samples"));
        }
        if let Some(w) = samples.iter().find(|w| !w.is_finite()) {
            return Err(Error::validation(format!("non-finite work sample {w}")));
        }
        if let Some(b) = &bins {
            if b.len() != samples.len() {
                return Err(Error::DimensionMismatch {
                    what: "sample outcome list",
                    expected: samples.len(),
                    found: b.len(),
                });
            }
        }
        Ok(Self {
            samples,
            bins,
            seed,
            source,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Ancilla outcomes `x`, when the samples came from `P_D`.
    pub fn bins(&self) -> Option<&[usize]> {
        self.bins.as_deref()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn k(&self) -> usize {
        self.samples.len()
    }

    pub fn source(&self) -> &SampleSource {
        &self.source
    }

    /// The first `k` samples.
    pub fn prefix(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.k() {
            return Err(Error::validation(format!(
                "prefix length {k} outside 1..={}",
                self.k()
            )));
        }
        Ok(Self {
            samples: self.samples[..k].to_vec(),
            bins: self.bins.as_ref().map(|b| b[..k].to_vec()),
            seed: self.seed,
            source: self.source.clone(),
        })
    }

    /// `#`-prefixed provenance lines followed by an `index,x,w` table; `x`
    /// is empty for exact samples.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# seed: {}", self.seed)?;
        writeln!(out, "# K: {}", self.k())?;
        match self.source.m_qubits {
            Some(m) => writeln!(out, "# M: {m}")?,
            None => writeln!(out, "# M: none")?,
        }
        writeln!(out, "# e_max: {}", self.source.e_max)?;
        writeln!(out, "# source: {}", self.source.tag)?;
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["index", "x", "w"])?;
        for (i, w) in self.samples.iter().enumerate() {
            let x = self
                .bins
                .as_ref()
                .map(|b| b[i].to_string())
                .unwrap_or_default();
            writer.write_record([i.to_string(), x, w.to_string()])?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(mut input: R) -> Result<Self> {
        let mut text = String::new();
        input.read_to_string(&mut text)?;
        let mut seed = None;
        let mut k = None;
        let mut m_qubits = None;
        let mut e_max = None;
        let mut tag = None;
        for line in text.lines().filter_map(|l| l.strip_prefix('#')) {
            let Some((key, value)) = line.split_once(':') else {
                continue;
            };
            let value = value.trim();
            let bad = |what: &str| {
                Error::validation(format!("header field {what}: cannot parse {value:?}"))
            };
            match key.trim() {
                "seed" => seed = Some(value.parse::<u64>().map_err(|_| bad("seed"))?),
                "K" => k = Some(value.parse::<usize>().map_err(|_| bad("K"))?),
                "M" if value == "none" => m_qubits = Some(None),
                "M" => m_qubits = Some(Some(value.parse::<u32>().map_err(|_| bad("M"))?)),
                "e_max" => e_max = Some(value.parse::<f64>().map_err(|_| bad("e_max"))?),
                "source" => tag = Some(value.to_string()),
                _ => {}
            }
        }
        let missing =
            |what: &str| Error::validation(format!("sample file lacks the '{what}' header"));
        let seed = seed.ok_or_else(|| missing("seed"))?;
        let k = k.ok_or_else(|| missing("K"))?;
        let m_qubits = m_qubits.ok_or_else(|| missing("M"))?;
        let e_max = e_max.ok_or_else(|| missing("e_max"))?;
        let tag = tag.ok_or_else(|| missing("source"))?;

        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut samples = Vec::new();
        let mut bins = Vec::new();
        for (row, record) in reader
            .deserialize::<(usize, Option<usize>, f64)>()
            .enumerate()
        {
            let (index, x, w) = record?;
            if index != row {
                return Err(Error::validation(format!("row {row} has index {index}")));
            }
            if x.is_some() != m_qubits.is_some() {
                return Err(Error::validation(format!(
                    "row {row}: outcome column must be filled exactly for P_D samples"
                )));
            }
            if let Some(x) = x {
                bins.push(x);
            }
            samples.push(w);
        }
        if samples.len() != k {
            return Err(Error::validation(format!(
                "header says K = {k} but the table has {} rows",
                samples.len()
            )));
        }
        let bins = m_qubits.map(|_| bins);
        Self::new(
            samples,
            bins,
            seed,
            SampleSource {
                m_qubits,
                e_max,
                tag,
            },
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyEstimate {
    pub delta_f_hat: f64,
    pub beta: f64,
    pub k: usize,
    /// Delta-method standard error; absent for a single sample.
    pub std_error: Option<f64>,
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::validation(format!(
            "beta must be positive, got {beta}"
        )));
    }
    Ok(())
}

/// `ΔF̂ = -(1/β) ln((1/K) Σ exp(-β w_i))` with a delta-method error bar.
pub fn estimate_free_energy(samples: &WorkSampleSet, beta: f64) -> Result<FreeEnergyEstimate> {
    check_beta(beta)?;
    estimate_from_slice(samples.samples(), beta)
}

fn estimate_from_slice(w: &[f64], beta: f64) -> Result<FreeEnergyEstimate> {
    let k = w.len();
    let shift = w
        .iter()
        .map(|&wi| -beta * wi)
        .fold(f64::NEG_INFINITY, f64::max);
    // a_i = exp(-β w_i - shift) lies in (0, 1]; sd/mean does not depend on the shift.
    let a: Vec<f64> = w.iter().map(|&wi| (-beta * wi - shift).exp()).collect();
    let mean = a.iter().sum::<f64>() / k as f64;
    let delta_f_hat = -(mean.ln() + shift) / beta;
    let std_error = (k >= 2).then(|| {
        let var = a.iter().map(|ai| (ai - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
        var.sqrt() / (beta * mean * (k as f64).sqrt())
    });
    if !delta_f_hat.is_finite() {
        return Err(Error::Numerical(format!(
            "free-energy estimate is {delta_f_hat}"
        )));
    }
    Ok(FreeEnergyEstimate {
        delta_f_hat,
        beta,
        k,
        std_error,
    })
}

/// `Σ p_k exp(-β w_k)`.
pub fn exact_exponential_average(dist: &WorkDistribution, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    Ok(dist.log_exp_average(beta).exp())
}

/// `-(1/β) ln Σ p_k exp(-β w_k)`, evaluated in log space.
pub fn free_energy_from_distribution(dist: &WorkDistribution, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    Ok(-dist.log_exp_average(beta) / beta)
}

/// Raw moments `Σ p_k w_k^r` for each requested order `r >= 1`.
pub fn work_moments(dist: &WorkDistribution, orders: &[u32]) -> Result<Vec<f64>> {
    if let Some(&r) = orders.iter().find(|&&r| r == 0) {
        return Err(Error::validation(format!(
            "moment order must be >= 1, got {r}"
        )));
    }
    Ok(orders
        .iter()
        .map(|&r| {
            dist.points()
                .iter()
                .map(|pt| pt.p * pt.w.powi(r as i32))
                .sum()
        })
        .collect())
}

/// One row of a convergence table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "dF_exactP")]
    pub df_exact_p: f64,
    #[serde(rename = "dF_PD")]
    pub df_pd: f64,
    #[serde(rename = "stderr_exactP")]
    pub stderr_exact_p: Option<f64>,
    #[serde(rename = "stderr_PD")]
    pub stderr_pd: Option<f64>,
    #[serde(rename = "dF_true")]
    pub df_true: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub beta: f64,
    pub seed: u64,
    pub m_qubits: u32,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        for row in &self.rows {
            writer.serialize(row)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn read_rows<R: Read>(input: R) -> Result<Vec<ConvergenceRow>> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(input);
        Ok(reader
            .deserialize()
            .collect::<std::result::Result<_, _>>()?)
    }
}

fn check_k_grid(k_grid: &[usize]) -> Result<()> {
    if k_grid.is_empty() {
        return Err(Error::validation("K grid is empty"));
    }
    if k_grid[0] == 0 {
        return Err(Error::validation("K grid entries must be >= 1"));
    }
    if k_grid.windows(2).any(|pair| pair[0] >= pair[1]) {
        return Err(Error::validation(format!(
            "K grid must be strictly ascending, got {k_grid:?}"
        )));
    }
    Ok(())
}

/// Convergence of both estimators along `k_grid`, using nested prefixes of a
/// single draw of `max(k_grid)` samples from each source.
pub fn convergence_table(
    exact: &WorkDistribution,
    pd: &CoarseGrainedDistribution,
    df_true: f64,
    beta: f64,
    k_grid: &[usize],
    seed: u64,
) -> Result<ConvergenceTable> {
    check_beta(beta)?;
    check_k_grid(k_grid)?;
    let k_max = *k_grid.last().expect("non-empty grid");
    let from_p = sample_exact(exact, pd.e_max(), k_max, seed)?;
    let from_pd = sample(pd, k_max, seed ^ PD_SEED_SALT)?;
    let mut rows = Vec::with_capacity(k_grid.len());
    for &k in k_grid {
        let a = estimate_from_slice(&from_p.samples()[..k], beta)?;
        let b = estimate_from_slice(&from_pd.samples()[..k], beta)?;
        rows.push(ConvergenceRow {
            k,
            df_exact_p: a.delta_f_hat,
            df_pd: b.delta_f_hat,
            stderr_exact_p: a.std_error,
            stderr_pd: b.std_error,
            df_true,
        });
    }
    Ok(ConvergenceTable {
        beta,
        seed,
        m_qubits: pd.config().m_qubits(),
        rows,
    })
}

/// [`convergence_table`] for a thermal initial state at `beta`, with `P_D`
/// from the filter convolution and the reference `ΔF` from the partition
/// functions.
pub fn convergence_curve(
    protocol: &QuenchProtocol,
    config: &SamplerConfig,
    beta: f64,
    k_grid: &[usize],
    seed: u64,
) -> Result<ConvergenceTable> {
    check_beta(beta)?;
    check_k_grid(k_grid)?;
    let rho = protocol.thermal_initial_state(beta)?;
    let exact = exact_work_distribution(protocol, &rho)?;
    let pd = convolve_distribution(&exact, config)?;
    let df_true = protocol.free_energy_difference(beta)?;
    convergence_table(&exact, &pd, df_true, beta, k_grid, seed)
}

/// Seed-ensemble behaviour of the estimator at a fixed `K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub k: usize,
    pub runs: usize,
    /// Mean of `ΔF̂ - ΔF` over seeds.
    pub mean_bias: f64,
    pub mean_std_error: f64,
    /// Spread of `ΔF̂` across seeds.
    pub seed_spread: f64,
    /// Fraction of runs with `|ΔF̂ - ΔF| <= 3 std_error`.
    pub coverage: f64,
}

/// Runs the estimator on `seeds` independent sample sets from `draw`.
pub fn bias_report(
    df_true: f64,
    beta: f64,
    k: usize,
    seeds: impl IntoIterator<Item = u64>,
    mut draw: impl FnMut(usize, u64) -> Result<WorkSampleSet>,
) -> Result<BiasReport> {
    check_beta(beta)?;
    if k < 2 {
        return Err(Error::validation("bias report needs K >= 2"));
    }
    let mut estimates = Vec::new();
    let mut errors = Vec::new();
    let mut covered = 0usize;
    for seed in seeds {
        let est = estimate_free_energy(&draw(k, seed)?, beta)?;
        let se = est.std_error.expect("K >= 2");
        if (est.delta_f_hat - df_true).abs() <= 3.0 * se {
            covered += 1;
        }
        estimates.push(est.delta_f_hat);
        errors.push(se);
    }
    let runs = estimates.len();
    if runs < 2 {
        return Err(Error::validation("bias report needs at least two seeds"));
    }
    let mean = estimates.iter().sum::<f64>() / runs as f64;
    let spread =
        (estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (runs - 1) as f64).sqrt();
    Ok(BiasReport {
        k,
        runs,
        mean_bias: mean - df_true,
        mean_std_error: errors.iter().sum::<f64>() / runs as f64,
        seed_spread: spread,
        coverage: covered as f64 / runs as f64,
    })
}

/// Least-squares slope of `ln(std_error)` against `ln(K)`.
pub fn std_error_slope(rows: &[(usize, f64)]) -> Result<f64> {
    if rows.len() < 2 {
        return Err(Error::validation("slope needs at least two points"));
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|&(k, se)| ((k as f64).ln(), se.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}
