use std::fs;
use std::path::Path;

use prefbo_core::env::{
    load_embedding_dataset, write_embedding_dataset, write_synthetic_dataset, DatasetFormat,
};
use prefbo_core::Error;

fn load(path: &Path) -> prefbo_core::Result<prefbo_core::env::EmbeddingDataset> {
    load_embedding_dataset(path, DatasetFormat::from_path(path), None)
}

#[test]
fn synthetic_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("items.csv");
    write_synthetic_dataset(&first, 275, 32, &[], 5).unwrap();
    let a = load(&first).unwrap();
    assert_eq!(a.items.len(), 275);
    assert_eq!(a.dim, 32);

    for (name, format) in [
        ("again.csv", DatasetFormat::Csv),
        ("again.tsv", DatasetFormat::Tsv),
    ] {
        let second = dir.path().join(name);
        write_embedding_dataset(&a, &second, format).unwrap();
        let b = load(&second).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.table().unwrap(), b.table().unwrap());
    }
}

#[test]
fn per_user_tables_are_scaled_separately() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("users.csv");
    write_synthetic_dataset(&path, 40, 4, &["ann", "bo"], 6).unwrap();
    let all = load(&path).unwrap();
    assert_eq!(all.users(), vec!["ann".to_string(), "bo".to_string()]);
    let bo = load_embedding_dataset(&path, DatasetFormat::Csv, Some("bo")).unwrap();
    assert_eq!(bo.items.len(), 40);
    assert_eq!(bo, all.for_user("bo").unwrap());
    let f = bo.scaled_utilities();
    let lo = f.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!((lo + 3.0).abs() < 1e-12 && (hi - 3.0).abs() < 1e-12);
    assert!(matches!(
        load_embedding_dataset(&path, DatasetFormat::Csv, Some("cy")),
        Err(Error::Schema(_))
    ));
}

#[test]
fn extreme_and_degenerate_scaling() {
    let dir = tempfile::tempdir().unwrap();
    let two = dir.path().join("two.csv");
    fs::write(&two, "id,u_1,utility\na,0.1,1\nb,0.9,5\n").unwrap();
    assert_eq!(load(&two).unwrap().scaled_utilities(), vec![-3.0, 3.0]);

    let one = dir.path().join("one.csv");
    fs::write(&one, "id,u_1,u_2,utility\na,0.1,0.2,4\n").unwrap();
    assert_eq!(load(&one).unwrap().scaled_utilities(), vec![0.0]);
}

fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn malformed_rows_report_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "bad.csv",
        "id,u_1,u_2,utility\na,0.1,0.2,3\nb,0.3,oops,4\n",
    );
    match load(&p) {
        Err(Error::Parse { line, message }) => {
            assert_eq!(line, 3);
            assert!(message.contains("u_2"), "{message}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
    let p = write(dir.path(), "inf.csv", "id,u_1,utility\na,0.1,3\nb,inf,4\n");
    assert!(matches!(load(&p), Err(Error::Parse { line: 3, .. })));
}

#[test]
fn schema_violations_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("empty.csv", ""),
        ("header.csv", "id,x_1,utility\na,0.1,3\n"),
        ("order.csv", "id,u_2,u_1,utility\na,0.1,0.2,3\n"),
        ("nodim.csv", "id,utility\na,3\n"),
        ("ragged.csv", "id,u_1,u_2,utility\na,0.1,0.2,3\nb,0.4,5\n"),
        ("norows.csv", "id,u_1,utility\n"),
    ];
    for (name, body) in cases {
        let p = write(dir.path(), name, body);
        assert!(
            matches!(load(&p), Err(Error::Schema(_))),
            "{name}: {:?}",
            load(&p)
        );
    }
}

#[test]
fn missing_file_is_an_io_error() {
    let err = load(Path::new("/nonexistent/items.csv")).unwrap_err();
    assert!(matches!(err, Error::Csv(_) | Error::Io(_)), "{err:?}");
}
