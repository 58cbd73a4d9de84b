use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qwork_core::estimators::{ConvergenceTable, WorkSampleSet};
use qwork_core::phase_estimation::{
    convolve_distribution, CoarseGrainedDistribution, CoarseKind, SamplerConfig,
};
use qwork_core::scenarios::build_gue_quench;
use qwork_core::spectral::HermitianOperator;
use qwork_core::work::{exact_work_distribution, WorkDistribution};
use statrs::distribution::{ChiSquared, ContinuousCDF};

const PI_STR: &str = "3.141592653589793";

fn qwork(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qwork"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) {
    let out = qwork(args);
    assert!(
        out.status.success(),
        "qwork {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn out_dir(tmp: &Path, name: &str) -> String {
    tmp.join(name).to_string_lossy().into_owned()
}

fn qubit_flip_args(command: &str, out: &str) -> Vec<String> {
    [
        command,
        "--scenario",
        "two-level-sg",
        "--omega1",
        "1",
        "--omega2",
        "1",
        "--theta",
        PI_STR,
        "--e-max",
        "1",
        "--out",
        out,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn as_strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

#[test]
fn exact_qubit_flip_has_two_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(tmp.path(), "flip");
    run_ok(&as_strs(&qubit_flip_args("exact", &out)));
    let dist = WorkDistribution::read_csv(
        fs::File::open(Path::new(&out).join("work_distribution.csv")).unwrap(),
    )
    .unwrap();
    assert_eq!(dist.len(), 2);
    let z = 2.0 * 0.5f64.cosh();
    assert!((dist.mass_at(1.0, 1e-12) - (0.5f64).exp() / z).abs() < 1e-12);
    let summary: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(Path::new(&out).join("exact_summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["support_size"], 2);
    assert!(summary["delta_f"].as_f64().unwrap().abs() < 1e-12);
}

#[test]
fn exact_trivial_custom_protocol_has_one_row() {
    let tmp = tempfile::tempdir().unwrap();
    let h = tmp.path().join("h.json");
    build_gue_quench(2, 1.0, 3)
        .unwrap()
        .h_initial()
        .save(&h)
        .unwrap();
    let out = out_dir(tmp.path(), "trivial");
    let h = h.to_string_lossy();
    run_ok(&[
        "exact",
        "--scenario",
        "custom",
        "--h",
        &h,
        "--h-tilde",
        &h,
        "--u",
        "identity",
        "--out",
        &out,
    ]);
    let dist = WorkDistribution::read_csv(
        fs::File::open(Path::new(&out).join("work_distribution.csv")).unwrap(),
    )
    .unwrap();
    assert_eq!(dist.len(), 1);
    assert_eq!(dist.points()[0].w, 0.0);
}

#[test]
fn input_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(tmp.path(), "x");
    let missing = tmp.path().join("missing.json");
    let missing = missing.to_string_lossy();
    for args in [
        vec![
            "exact",
            "--scenario",
            "custom",
            "--h",
            &missing,
            "--h-tilde",
            &missing,
            "--out",
            &out,
        ],
        vec!["exact", "--scenario", "custom", "--out", &out],
        vec!["exact", "--beta", "-1", "--out", &out],
        vec!["sample", "--k", "0", "--out", &out],
        vec!["jarzynski", "--k-grid", "100,10", "--out", &out],
        vec!["compare", "--m-qubits", "0", "--out", &out],
        vec!["exact", "--n-qubits", "13", "--out", &out],
        vec![
            "exact",
            "--scenario",
            "two-level-sg",
            "--omega1",
            "2",
            "--out",
            &out,
        ],
        vec!["exact", "--no-such-flag"],
    ] {
        let result = qwork(&args);
        assert_eq!(result.status.code(), Some(2), "{args:?}");
        assert!(!result.stderr.is_empty());
    }

    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "bogus_key = 3\n").unwrap();
    let result = qwork(&["exact", "--config", &cfg.to_string_lossy(), "--out", &out]);
    assert_eq!(result.status.code(), Some(2));

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"dim":2,"re":[0,1,0,0],"im":[0,0,0,0]}"#).unwrap();
    let bad = bad.to_string_lossy();
    let result = qwork(&[
        "exact",
        "--scenario",
        "custom",
        "--h",
        &bad,
        "--h-tilde",
        &bad,
        "--out",
        &out,
    ]);
    assert_eq!(result.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&result.stderr).contains("bad.json"));
}

#[test]
fn config_file_with_flag_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let h = tmp.path().join("h.json");
    let ht = tmp.path().join("ht.json");
    HermitianOperator::from_real_diagonal(&[-0.5, 0.5])
        .unwrap()
        .save(&h)
        .unwrap();
    HermitianOperator::from_real_diagonal(&[-1.0, 1.0])
        .unwrap()
        .save(&ht)
        .unwrap();
    let cfg = tmp.path().join("run.toml");
    // Matrix paths are relative to the config file.
    fs::write(
        &cfg,
        "scenario = \"custom\"\nh = \"h.json\"\nh_tilde = \"ht.json\"\ne_max = 2.0\nbeta = 3.0\nk_grid = [10, 20]\nseed = 4\n",
    )
    .unwrap();
    let out = out_dir(tmp.path(), "cfg");
    run_ok(&[
        "jarzynski",
        "--config",
        &cfg.to_string_lossy(),
        "--beta",
        "1",
        "--k-grid",
        "5000",
        "--out",
        &out,
    ]);
    let text = fs::read_to_string(Path::new(&out).join("convergence.csv")).unwrap();
    assert!(text.contains("# beta: 1\n"));
    assert!(text.contains("# seed: 4\n"));
    let rows = ConvergenceTable::read_rows(text.as_bytes()).unwrap();
    assert_eq!(rows.len(), 1);
    let expected = -(1f64.cosh() / 0.5f64.cosh()).ln();
    assert!((rows[0].df_true - expected).abs() < 1e-12);
    assert!((rows[0].df_exact_p - expected).abs() < 4.0 * rows[0].stderr_exact_p.unwrap());
}

#[test]
fn jarzynski_qubit_flip_converges_to_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(tmp.path(), "jar");
    let mut args = qubit_flip_args("jarzynski", &out);
    args.extend(["--k-grid".to_string(), "100,1000,10000".to_string()]);
    run_ok(&as_strs(&args));
    let rows = ConvergenceTable::read_rows(
        fs::File::open(Path::new(&out).join("convergence.csv")).unwrap(),
    )
    .unwrap();
    assert_eq!(rows.len(), 3);
    for row in &rows {
        assert_eq!(row.df_true, 0.0);
        assert!(row.df_exact_p.abs() < 4.0 * row.stderr_exact_p.unwrap());
        assert!(row.df_pd.abs() < 4.0 * row.stderr_pd.unwrap());
    }
    assert!(rows[2].stderr_exact_p.unwrap() < rows[0].stderr_exact_p.unwrap());
}

fn read_compare(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .unwrap();
    let header = reader.headers().unwrap().iter().map(String::from).collect();
    let rows = reader
        .records()
        .map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn compare_bin_centered_scenario_has_zero_gap() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(tmp.path(), "cmp");
    let mut args = qubit_flip_args("compare", &out);
    args.extend(["--m-sweep".to_string(), "3,4,5".to_string()]);
    run_ok(&as_strs(&args));
    let (header, rows) = read_compare(&Path::new(&out).join("compare.csv"));
    assert_eq!(header, ["x", "w", "P_cg", "P_D_convolution", "P_D_circuit"]);
    assert_eq!(rows.len(), 32);
    for col in 2..5 {
        assert!((rows.iter().map(|r| r[col]).sum::<f64>() - 1.0).abs() < 1e-9);
    }
    for r in &rows {
        assert!((r[2] - r[3]).abs() < 1e-12 && (r[3] - r[4]).abs() < 1e-10);
    }
    let (header, sweep) = read_compare(&Path::new(&out).join("compare_sweep.csv"));
    assert_eq!(header, ["M", "D", "sup_norm", "l1_norm"]);
    assert_eq!(sweep.len(), 3);
    assert!(sweep.iter().all(|r| r[2] < 1e-12));
}

#[test]
fn compare_columns_are_normalized_and_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(tmp.path(), "gue");
    run_ok(&[
        "compare",
        "--n-qubits",
        "3",
        "--m-qubits",
        "4",
        "--seed",
        "12",
        "--out",
        &out,
    ]);
    let path = Path::new(&out).join("compare.csv");
    let (_, rows) = read_compare(&path);
    for col in 2..5 {
        assert!((rows.iter().map(|r| r[col]).sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let max_gap = rows.iter().map(|r| (r[3] - r[4]).abs()).fold(0.0, f64::max);
    assert!(max_gap < 1e-10);
    // The P_D column re-validates as a coarse-grained table.
    let config = SamplerConfig::new(4, 1.0).unwrap();
    let mut table = String::from("x,w,p\n");
    for r in &rows {
        table += &format!("{},{},{}\n", r[0], r[1], r[3]);
    }
    CoarseGrainedDistribution::read_csv(table.as_bytes(), CoarseKind::Filtered, config).unwrap();
}

#[test]
fn sample_matches_pd_by_chi_square() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(tmp.path(), "s");
    run_ok(&[
        "sample",
        "--n-qubits",
        "3",
        "--m-qubits",
        "4",
        "--seed",
        "2",
        "--k",
        "100000",
        "--beta",
        "1",
        "--out",
        &out,
    ]);
    let set = WorkSampleSet::read_csv(fs::File::open(Path::new(&out).join("samples.csv")).unwrap())
        .unwrap();
    assert_eq!(set.k(), 100_000);
    assert_eq!(set.seed(), 2);

    let p = build_gue_quench(3, 1.0, 2).unwrap();
    let dist = exact_work_distribution(&p, &p.thermal_initial_state(1.0).unwrap()).unwrap();
    let config = SamplerConfig::new(4, 1.0).unwrap();
    let pd = convolve_distribution(&dist, &config).unwrap();
    let mut counts = vec![0.0; config.d()];
    for &x in set.bins().unwrap() {
        counts[x] += 1.0;
    }
    // Pool bins with small expected counts into one cell.
    let k = set.k() as f64;
    let (mut stat, mut cells, mut pooled_obs, mut pooled_exp) = (0.0, 0usize, 0.0, 0.0);
    for (obs, p) in counts.iter().zip(pd.values()) {
        let expected = k * p;
        if expected >= 5.0 {
            stat += (obs - expected).powi(2) / expected;
            cells += 1;
        } else {
            pooled_obs += obs;
            pooled_exp += expected;
        }
    }
    if pooled_exp >= 5.0 {
        stat += (pooled_obs - pooled_exp) * (pooled_obs - pooled_exp) / pooled_exp;
        cells += 1;
    }
    let p_value = 1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(stat);
    assert!(
        p_value > 0.001,
        "chi-square {stat} on {} dof, p = {p_value}",
        cells - 1
    );
}

#[test]
fn sample_from_exact_distribution() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(tmp.path(), "e");
    let mut args = qubit_flip_args("sample", &out);
    args.extend(["--from", "exact", "--k", "50"].map(String::from));
    run_ok(&as_strs(&args));
    let set = WorkSampleSet::read_csv(fs::File::open(Path::new(&out).join("samples.csv")).unwrap())
        .unwrap();
    assert!(set.bins().is_none());
    assert!(set.samples().iter().all(|&w| w == 1.0 || w == -1.0));
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            let bytes = fs::read(&p).unwrap();
            (p.file_name().unwrap().into(), bytes)
        })
        .collect();
    files.sort();
    files
}

#[test]
fn reruns_are_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    for command in ["exact", "compare", "jarzynski", "sample"] {
        let a = out_dir(tmp.path(), &format!("{command}-a"));
        let b = out_dir(tmp.path(), &format!("{command}-b"));
        for out in [&a, &b] {
            run_ok(&[
                command,
                "--n-qubits",
                "3",
                "--m-qubits",
                "4",
                "--seed",
                "9",
                "--k-grid",
                "10,100",
                "--k",
                "500",
                "--out",
                out,
            ]);
        }
        let (sa, sb) = (snapshot(Path::new(&a)), snapshot(Path::new(&b)));
        assert!(!sa.is_empty());
        assert_eq!(sa, sb, "{command}");
    }
}
