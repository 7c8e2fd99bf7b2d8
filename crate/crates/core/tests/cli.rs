use std::path::Path;
use std::process::{Command, Output};

use eotrack::experiment::{
    read_csv, summarize, ExperimentConfig, ResultRecord, RgweRow, Summary, RECORDS_FILE, RGWE_FILE,
    SUMMARY_FILE,
};

fn eotrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eotrack"))
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"
seed = 4
runs = 2
variants = ["dvbeot", "non-coop", "centralized"]

[scenario]
preset = "s1"
scans = 12
measurement_rate = 8.0

[network]
nodes = 6
side = 1.2
radius = 0.8
"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn validate_accepts_defaults_and_a_file() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(eotrack(&["validate"]).status.code(), Some(0));
    let cfg = write(dir.path(), "small.toml", SMALL);
    assert_eq!(
        eotrack(&["validate", "--config", &cfg]).status.code(),
        Some(0)
    );
}

#[test]
fn validation_errors_exit_2_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = eotrack(&["validate", "--runs", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`runs`"));

    let cfg = write(dir.path(), "bad.toml", "[network]\nnodez = 3\n");
    let o = eotrack(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("network.nodez"), "{}", stderr(&o));

    let cfg = write(dir.path(), "bad.toml", "[filter]\nrho = -1.0\n");
    let o = eotrack(&["validate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("filter"), "{}", stderr(&o));

    let cfg = write(
        dir.path(),
        "bad.toml",
        "[network]\nedge_list = \"missing.txt\"\n",
    );
    let o = eotrack(&["validate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("network.edge_list"));

    assert_eq!(
        eotrack(&["validate", "--config", "no/such/file.toml"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p.csv");
    let o = eotrack(&[
        "plot-data",
        "--kind",
        "rgwe-vs-scan",
        "--results",
        "no/such/dir",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("records.csv"));
    let o = eotrack(&["gen-network", "--nodes", "20", "--radius", "0.01"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gen_network_is_seeded() {
    let a = eotrack(&["gen-network", "--seed", "9"]);
    let b = eotrack(&["gen-network", "--seed", "9"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let net =
        eotrack::consensus::SensorNetwork::parse_edge_list(&String::from_utf8(a.stdout).unwrap())
            .unwrap();
    assert_eq!(net.n_nodes(), 20);
}

#[test]
fn run_writes_consistent_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("res");
    let o = eotrack(&[
        "run",
        "--config",
        &cfg_path,
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "11",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let records: Vec<ResultRecord> = read_csv(&out.join(RECORDS_FILE)).unwrap();
    let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
    // Six nodes for the distributed variants, one fusion center for centralized.
    assert_eq!(records.len(), 2 * 12 * (6 + 6 + 1));

    let rgwe: Vec<RgweRow> = read_csv(&out.join(RGWE_FILE)).unwrap();
    assert_eq!(rgwe.len(), 12 * cfg.variants.len());
    let recomputed = eotrack::experiment::aggregate_rgwe(&records, &cfg.variants).unwrap();
    for (a, b) in rgwe.iter().zip(&recomputed) {
        assert_eq!((a.variant, a.scan), (b.variant, b.scan));
        assert!((a.rgwe - b.rgwe).abs() <= 1e-12 * b.rgwe);
    }

    let summary: Summary =
        serde_json::from_str(&std::fs::read_to_string(out.join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(summary.config.seed, 11);
    assert!(summary.provenance.starts_with("eotrack "));
    for (a, b) in summary
        .variants
        .iter()
        .zip(summarize(&recomputed, &cfg.variants))
    {
        assert!((a.mean_rgwe - b.mean_rgwe).abs() <= 1e-12 * b.mean_rgwe);
    }

    let plot = dir.path().join("scan.csv");
    let o = eotrack(&[
        "plot-data",
        "--kind",
        "rgwe-vs-scan",
        "--results",
        out.to_str().unwrap(),
        "--out",
        plot.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let rows: Vec<RgweRow> = read_csv(&plot).unwrap();
    assert_eq!(rows.len(), 12 * 3);

    let ell = dir.path().join("ell.csv");
    let o = eotrack(&[
        "plot-data",
        "--kind",
        "ellipses",
        "--results",
        out.to_str().unwrap(),
        "--config",
        &cfg_path,
        "--run",
        "2",
        "--out",
        ell.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(std::fs::read_to_string(&ell).unwrap().lines().count() > 64 * 12);
}

#[test]
fn flags_override_file_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("res");
    let o = eotrack(&[
        "run",
        "--config",
        &cfg_path,
        "--variants",
        "dvbeot-no-r",
        "--runs",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rgwe: Vec<RgweRow> = read_csv(&out.join(RGWE_FILE)).unwrap();
    assert!(rgwe.iter().all(|r| r.variant.name() == "dvbeot-no-r"));
    assert_eq!(rgwe.len(), 12);
}

#[test]
fn sweeps_emit_one_row_per_value_and_variant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("vb.csv");
    let o = eotrack(&[
        "plot-data",
        "--kind",
        "rgwe-vs-vb-iteration",
        "--config",
        &cfg_path,
        "--values",
        "1,5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        std::fs::read_to_string(&out).unwrap().lines().count(),
        1 + 2 * 3
    );
    let o = eotrack(&[
        "plot-data",
        "--kind",
        "histogram",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
