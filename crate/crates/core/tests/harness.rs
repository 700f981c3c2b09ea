use beepvote::dvb2::IdMode;
use beepvote::harness::{
    emit, read_rows, run_sweep, write_rows, Algo, ExperimentConfig, OutputFormat, CSV_HEADER,
};
use beepvote::{Error, TopologyKind};

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        topology: TopologyKind::ALL.to_vec(),
        nodes: vec![12, 20],
        delta: vec![0.6, 0.8],
        trials: 40,
        master_seed: 9,
        ..Default::default()
    }
}

#[test]
fn rows_do_not_depend_on_worker_count() {
    let mut one = small_config();
    one.workers = Some(1);
    let mut four = small_config();
    four.workers = Some(4);
    assert_eq!(run_sweep(&one).unwrap(), run_sweep(&four).unwrap());
}

#[test]
fn sweep_yields_one_row_per_point_in_order() {
    let cfg = small_config();
    let rows = run_sweep(&cfg).unwrap();
    assert_eq!(rows.len(), 3 * 2 * 2);
    let points = cfg.points();
    for (row, p) in rows.iter().zip(&points) {
        assert_eq!(row.topology, p.topology.name());
        assert_eq!(row.n, p.nodes);
        assert_eq!(row.delta, p.delta);
        assert_eq!(row.trials, 40);
        assert_eq!(row.errors, 0);
        assert!(row.ci95_lo <= row.success_rate && row.success_rate <= row.ci95_hi);
    }
}

#[test]
fn emitted_rows_round_trip() {
    let rows = run_sweep(&small_config()).unwrap();
    let expected: Vec<_> = rows.iter().map(|r| r.rounded()).collect();
    let dir = tempfile::tempdir().unwrap();
    for (format, name) in [
        (OutputFormat::Csv, "rows.csv"),
        (OutputFormat::Json, "rows.json"),
    ] {
        let path = dir.path().join(name);
        emit(&rows, format, &path).unwrap();
        assert_eq!(read_rows(&path, format).unwrap(), expected, "{format}");
    }
}

#[test]
fn empty_csv_is_header_only() {
    let mut buf = Vec::new();
    write_rows(&[], OutputFormat::Csv, &mut buf).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap().trim_end(),
        CSV_HEADER.join(",")
    );
}

#[test]
fn io_errors_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("missing").join("out.csv");
    let err = emit(&[], OutputFormat::Csv, &path).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("out.csv"), "{err}");
}

#[test]
fn config_file_drives_a_dvb2_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.conf");
    std::fs::write(
        &path,
        "# small dvb2 run\nalgo = dvb2\ntopology = mesh\nnodes = 16\ndelta = 0.7\ntrials = 10\nid_mode = preassigned\nmaster_seed = 3\n",
    )
    .unwrap();
    let cfg = ExperimentConfig::from_path(&path).unwrap();
    assert_eq!(cfg.algo, Algo::Dvb2);
    assert_eq!(cfg.id_mode, IdMode::PreassignedUniqueIds);
    let rows = run_sweep(&cfg).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].algo, "dvb2");
    assert_eq!(rows[0].success_rate, 1.0);
}

#[test]
fn bad_config_is_rejected() {
    assert!(matches!(
        ExperimentConfig::parse("colour = red"),
        Err(Error::Config(_))
    ));
    assert!(ExperimentConfig::parse("trials = many").is_err());
    let missing = std::path::Path::new("/nonexistent/beepvote.conf");
    let err = ExperimentConfig::from_path(missing).unwrap_err();
    assert!(err.to_string().contains("beepvote.conf"));
}
