use eotrack::dfilter::VariantKind;
use eotrack::experiment::{
    read_csv, run_experiment_in_memory, write_csv, ExperimentConfig, ResultRecord,
};
use eotrack::plot::{sweep, SweepRow};

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed: 8,
        runs: 2,
        variants: VariantKind::ALL.to_vec(),
        ..ExperimentConfig::default()
    };
    cfg.scenario.scans = Some(10);
    cfg.network.nodes = 5;
    cfg.network.side = 1.0;
    cfg
}

#[test]
fn records_roundtrip_bit_exactly() {
    let res = run_experiment_in_memory(&small())
        .map_err(|(e, _)| e)
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.csv");
    write_csv(&path, &res.records).unwrap();
    let back: Vec<ResultRecord> = read_csv(&path).unwrap();
    assert_eq!(back.len(), res.records.len());
    for (a, b) in back.iter().zip(&res.records) {
        assert_eq!(a, b);
        assert_eq!(a.gwd2.to_bits(), b.gwd2.to_bits());
    }
    // Neglected noise leaves the noise columns empty.
    assert!(back
        .iter()
        .filter(|r| r.variant == VariantKind::DvbeotNoR)
        .all(|r| r.r11.is_none()));
}

#[test]
fn one_record_per_run_scan_node_variant() {
    let cfg = small();
    let res = run_experiment_in_memory(&cfg).map_err(|(e, _)| e).unwrap();
    let mut keys: Vec<_> = res
        .records
        .iter()
        .map(|r| (r.run, r.scan, r.node, r.variant))
        .collect();
    let n = keys.len();
    keys.sort();
    keys.dedup();
    assert_eq!(keys.len(), n);
    assert_eq!(n, 2 * 10 * (4 * 5 + 1));
}

#[test]
fn parallel_runs_do_not_change_results() {
    let cfg = small();
    let a = run_experiment_in_memory(&cfg).map_err(|(e, _)| e).unwrap();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap();
    let b = pool.install(|| run_experiment_in_memory(&cfg).map_err(|(e, _)| e).unwrap());
    assert_eq!(a.records, b.records);
}

/// Past thirty consensus rounds the error curve is flat.
#[test]
fn rgwe_flat_beyond_thirty_rounds() {
    let cfg = ExperimentConfig {
        seed: 6,
        runs: 4,
        variants: vec![VariantKind::Dvbeot],
        ..ExperimentConfig::default()
    };
    let rows: Vec<SweepRow> = sweep(&cfg, &[30, 60], |c, v| c.filter.rounds = v).unwrap();
    let (l30, l60) = (rows[0].mean_rgwe, rows[1].mean_rgwe);
    assert!((l30 - l60).abs() < 0.02 * l60, "L=30 {l30}, L=60 {l60}");
}
