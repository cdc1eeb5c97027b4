use qdep::io::{
    format_sweep_csv, parse_sample_csv, read_joint_json, read_sample_csv, write_atomic, write_joint_json,
    write_sample_csv, IoError, SWEEP_HEADER,
};
use qdep::qdep_core::{DiscreteJoint, KernelFamily, Sample};
use qdep::simlab::{run_sweep, Generator, SweepPlan};

#[test]
fn parses_header_and_rows() {
    let s = parse_sample_csv("a,b\n1,2\n3.5,-4e-1\n".as_bytes()).unwrap();
    assert_eq!(s.names, ["a", "b"]);
    assert_eq!(s.sample.column(1), [2.0, -0.4]);
}

#[test]
fn accepts_crlf() {
    let s = parse_sample_csv("x,y\r\n1,2\r\n3,4\r\n".as_bytes()).unwrap();
    assert_eq!(s.sample.n(), 2);
}

#[test]
fn non_numeric_cell_reports_its_line() {
    let mut text = String::from("x,y\n");
    for i in 0..8 {
        if i == 5 {
            text.push_str("1.0,abc\n");
        } else {
            text.push_str("1.0,2.0\n");
        }
    }
    let err = parse_sample_csv(text.as_bytes()).unwrap_err();
    assert!(matches!(err, IoError::NotANumber { line: 7, .. }), "{err}");
    assert!(err.to_string().contains("line 7"));
}

#[test]
fn non_finite_cell_is_rejected() {
    let err = parse_sample_csv("x,y\n1,2\n3,inf\n".as_bytes()).unwrap_err();
    assert!(matches!(err, IoError::NonFinite { line: 3, .. }), "{err}");
    let err = parse_sample_csv("x,y\n1,2\nNaN,1\n".as_bytes()).unwrap_err();
    assert!(err.to_string().contains("line 3"));
}

#[test]
fn ragged_rows_and_short_files_are_rejected() {
    let err = parse_sample_csv("x,y\n1,2\n3\n".as_bytes()).unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");
    assert!(parse_sample_csv("x\n1\n2\n".as_bytes()).is_err());
    assert!(parse_sample_csv("x,y\n1,2\n".as_bytes()).is_err());
}

#[test]
fn sample_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    let sample = Sample::from_columns(vec![vec![0.1, 1.0 / 3.0, -2e-300], vec![1e300, 7.0, f64::MIN_POSITIVE]]).unwrap();
    let names = vec!["first".to_string(), "second".to_string()];
    write_sample_csv(&path, &names, &sample).unwrap();
    let back = read_sample_csv(&path).unwrap();
    assert_eq!(back.names, names);
    assert_eq!(back.sample, sample);
}

#[test]
fn joint_json_round_trip_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("law.json");
    let joint = DiscreteJoint::new(vec![vec![0.0, 1.0], vec![2.0, 3.0]], vec![0.25, 0.75]).unwrap();
    write_joint_json(&path, &joint).unwrap();
    assert_eq!(read_joint_json(&path).unwrap(), joint);
    std::fs::write(&path, r#"{"atoms": [[0, 1]], "probs": [0.5]}"#).unwrap();
    assert!(read_joint_json(&path).is_err());
    std::fs::write(&path, r#"{"atoms": [[0, 1]], "probs": [1.0], "extra": 1}"#).unwrap();
    assert!(read_joint_json(&path).is_err());
}

#[test]
fn atomic_write_replaces_and_leaves_no_temporaries() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.txt");
    std::fs::write(&path, "old").unwrap();
    write_atomic(&path, |w| w.write_all(b"new")).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "new");
    let failed = write_atomic(&path, |_| Err(std::io::Error::other("boom")));
    assert!(failed.is_err());
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "new");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn sweep_csv_has_one_row_per_cell() {
    let plan = SweepPlan {
        scenario: Generator::BivariateGaussian { rho: 0.4 },
        kernel: KernelFamily::SquareCauchy,
        h_grid: vec![0.5, 1.0, 2.0],
        n_grid: vec![20, 40],
        replicates: 100,
        alpha: 0.05,
        seed: 3,
        variance: false,
        keep_values: false,
    };
    let result = run_sweep(&plan, 1).unwrap();
    let mut buf = Vec::new();
    format_sweep_csv(&result, &mut buf).unwrap();
    let mut rdr = csv::Reader::from_reader(buf.as_slice());
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), SWEEP_HEADER);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| &r[8] == "power"));
    assert!(rows.iter().all(|r| r[18].is_empty()));
}
