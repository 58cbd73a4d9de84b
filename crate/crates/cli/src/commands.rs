use std::path::PathBuf;

use anyhow::Result;
use qwork_core::estimators::{convergence_curve, exact_exponential_average, work_moments};
use qwork_core::phase_estimation::{
    convolve_distribution, l1_distance, rectangular_coarse_grain, sample, sample_exact,
    simulate_circuit, sup_norm_distance, SamplerConfig,
};
use qwork_core::work::{exact_work_distribution, QuenchProtocol, WorkDistribution};
use serde::Serialize;

use crate::config::{RunConfig, SampleFrom};
use crate::output::{provenance, write_atomic};

/// The circuit column of `compare` is produced only up to this many joint
/// amplitudes.
pub const CIRCUIT_COLUMN_LIMIT: usize = 1 << 20;

fn thermal_distribution(config: &RunConfig) -> Result<(QuenchProtocol, WorkDistribution)> {
    let protocol = config.scenario.build()?;
    let rho = protocol.thermal_initial_state(config.beta)?;
    let dist = exact_work_distribution(&protocol, &rho)?;
    Ok((protocol, dist))
}

#[derive(Serialize)]
struct ExactSummary {
    scenario: String,
    dim: usize,
    beta: f64,
    e_max: f64,
    support_size: usize,
    /// Raw moments of orders 1 to 4.
    moments: Vec<f64>,
    variance: f64,
    log_z: f64,
    log_z_tilde: f64,
    z: f64,
    z_tilde: f64,
    delta_f: f64,
    exp_average: f64,
    jarzynski_relative_error: f64,
}

pub fn exact(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let (protocol, dist) = thermal_distribution(config)?;
    let header = provenance("exact", config, false);
    let csv_path = write_atomic(&config.out, "work_distribution.csv", &header, |out| {
        Ok(dist.write_csv(out)?)
    })?;

    let moments = work_moments(&dist, &[1, 2, 3, 4])?;
    let (log_z, log_z_tilde) = protocol.log_partition_functions(config.beta);
    let delta_f = protocol.free_energy_difference(config.beta)?;
    let exp_average = exact_exponential_average(&dist, config.beta)?;
    let ratio = (log_z_tilde - log_z).exp();
    let summary = ExactSummary {
        scenario: config.scenario.tag(),
        dim: protocol.dim(),
        beta: config.beta,
        e_max: protocol.e_max(),
        support_size: dist.len(),
        variance: moments[1] - moments[0] * moments[0],
        moments,
        log_z,
        log_z_tilde,
        z: log_z.exp(),
        z_tilde: log_z_tilde.exp(),
        delta_f,
        exp_average,
        jarzynski_relative_error: ((exp_average - ratio) / ratio).abs(),
    };
    let json_path = write_atomic(&config.out, "exact_summary.json", &[], |out| {
        serde_json::to_writer_pretty(&mut *out, &summary)?;
        writeln!(out)?;
        Ok(())
    })?;
    println!(
        "support size {}, exact dF = {}, Jarzynski relative error {:e}",
        summary.support_size, summary.delta_f, summary.jarzynski_relative_error
    );
    Ok(vec![csv_path, json_path])
}

pub fn compare(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let (protocol, dist) = thermal_distribution(config)?;
    let sampler = config.sampler()?;
    let cg = rectangular_coarse_grain(&dist, &sampler)?;
    let pd = convolve_distribution(&dist, &sampler)?;
    let circuit = if protocol.dim() * sampler.d() <= CIRCUIT_COLUMN_LIMIT {
        let rho = protocol.thermal_initial_state(config.beta)?;
        Some(simulate_circuit(&protocol, &rho, &sampler)?)
    } else {
        None
    };

    let mut header = provenance("compare", config, true);
    header.push(format!(
        "sup_norm_cg_vs_pd: {}",
        sup_norm_distance(&cg, &pd)?
    ));
    if let Some(c) = &circuit {
        header.push(format!(
            "sup_norm_circuit_vs_convolution: {}",
            sup_norm_distance(c, &pd)?
        ));
    }
    let table_path = write_atomic(&config.out, "compare.csv", &header, |out| {
        let mut writer = csv::Writer::from_writer(out);
        let mut columns = vec!["x", "w", "P_cg", "P_D_convolution"];
        if circuit.is_some() {
            columns.push("P_D_circuit");
        }
        writer.write_record(&columns)?;
        for (x, w, p_cg) in cg.rows() {
            let mut record = vec![
                x.to_string(),
                w.to_string(),
                p_cg.to_string(),
                pd.values()[x].to_string(),
            ];
            if let Some(c) = &circuit {
                record.push(c.values()[x].to_string());
            }
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    })?;

    let mut sweep = Vec::with_capacity(config.m_sweep.len());
    for &m in &config.m_sweep {
        let s = SamplerConfig::new(m, protocol.e_max())?;
        let a = rectangular_coarse_grain(&dist, &s)?;
        let b = convolve_distribution(&dist, &s)?;
        sweep.push((m, s.d(), sup_norm_distance(&a, &b)?, l1_distance(&a, &b)?));
    }
    let sweep_path = write_atomic(
        &config.out,
        "compare_sweep.csv",
        &provenance("compare", config, false),
        |out| {
            let mut writer = csv::Writer::from_writer(out);
            writer.write_record(["M", "D", "sup_norm", "l1_norm"])?;
            for (m, d, sup, l1) in &sweep {
                writer.write_record([
                    m.to_string(),
                    d.to_string(),
                    sup.to_string(),
                    l1.to_string(),
                ])?;
            }
            writer.flush()?;
            Ok(())
        },
    )?;
    for (m, _, sup, _) in &sweep {
        println!("M = {m}: sup-norm |P_cg - P_D| = {sup:e}");
    }
    Ok(vec![table_path, sweep_path])
}

pub fn jarzynski(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let protocol = config.scenario.build()?;
    let sampler = config.sampler()?;
    let table = convergence_curve(
        &protocol,
        &sampler,
        config.beta,
        &config.k_grid,
        config.seed,
    )?;
    let mut header = provenance("jarzynski", config, true);
    if let Some(row) = table.rows.first() {
        header.push(format!("dF_true: {}", row.df_true));
    }
    let path = write_atomic(&config.out, "convergence.csv", &header, |out| {
        Ok(table.write_csv(out)?)
    })?;
    for row in &table.rows {
        println!(
            "K = {}: dF(P) = {}, dF(P_D) = {}, exact {}",
            row.k, row.df_exact_p, row.df_pd, row.df_true
        );
    }
    Ok(vec![path])
}

pub fn sample_cmd(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let (protocol, dist) = thermal_distribution(config)?;
    let samples = match config.from {
        SampleFrom::Pd => sample(
            &convolve_distribution(&dist, &config.sampler()?)?,
            config.k,
            config.seed,
        )?,
        SampleFrom::Exact => sample_exact(&dist, protocol.e_max(), config.k, config.seed)?,
    };
    let mut header = provenance("sample", config, false);
    header.push(format!("from: {}", config.from));
    let path = write_atomic(&config.out, "samples.csv", &header, |out| {
        Ok(samples.write_csv(out)?)
    })?;
    println!("{} samples written", samples.k());
    Ok(vec![path])
}
