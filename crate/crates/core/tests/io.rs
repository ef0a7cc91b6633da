use std::io::Write;

use proptest::prelude::*;
use vkdnw_core::io::{eval_report, format_f64, ingest_accuracy_table, ingest_score_table, write_accuracy_table};
use vkdnw_core::Error;

fn file_with(name: &str, text: &str) -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(name);
    std::fs::File::create(&path)
        .unwrap()
        .write_all(text.as_bytes())
        .unwrap();
    (dir, path)
}

/// Accuracies 100, 90, ..., 10 under a proxy whose ranking lists the
/// architectures in `order` (indices into that list), best first.
fn toy_tables(order: [usize; 10]) -> (String, String) {
    let mut acc = String::from("arch_id,accuracy\n");
    for i in 0..10 {
        acc += &format!("net{i},{}\n", 100 - 10 * i);
    }
    let mut scores = String::from("arch_id,proxy_name,value\n");
    for (pos, &i) in order.iter().enumerate() {
        scores += &format!("net{i},toy,{}\n", 10 - pos);
    }
    (acc, scores)
}

#[test]
fn toy_rankings_reproduce_the_worked_example() {
    let seeds = [0, 1, 2, 3, 4];
    let cases = [
        ([2, 3, 0, 1, 4, 5, 6, 7, 8, 9], "damaged_top"),
        ([0, 1, 2, 3, 4, 5, 9, 8, 7, 6], "perfect_top"),
    ];
    let mut means = Vec::new();
    for (order, name) in cases {
        let (acc, scores) = toy_tables(order);
        let (_d1, acc_path) = file_with(&format!("{name}.csv"), &acc);
        let (_d2, score_path) = file_with("scores.csv", &scores);
        let acc = ingest_accuracy_table(&acc_path).unwrap();
        assert_eq!(acc.dataset_tag, name);
        let report = eval_report(&ingest_score_table(&score_path).unwrap(), &acc, 5, &seeds).unwrap();
        means.push(report.proxies[0].ndcg_mean);
    }
    assert!((means[0] - 0.5).abs() <= 1e-3, "{}", means[0]);
    assert_eq!(means[1], 1.0);
}

#[test]
fn tie_free_reports_agree_across_seeds() {
    let (acc, scores) = toy_tables([3, 1, 0, 2, 7, 5, 9, 8, 6, 4]);
    let (_d1, acc_path) = file_with("acc.csv", &acc);
    let (_d2, score_path) = file_with("scores.csv", &scores);
    let report = eval_report(
        &ingest_score_table(&score_path).unwrap(),
        &ingest_accuracy_table(&acc_path).unwrap(),
        4,
        &[0, 7, 99, u64::MAX],
    )
    .unwrap();
    let ndcg = &report.proxies[0].ndcg;
    assert!(ndcg.iter().all(|v| *v == ndcg[0]));
    let mut a = Vec::new();
    let mut b = Vec::new();
    report.write_csv(&mut a).unwrap();
    report.write_csv(&mut b).unwrap();
    assert_eq!(a, b);
}

#[test]
fn missing_files_and_bad_rows_are_errors() {
    assert!(matches!(
        ingest_accuracy_table(std::path::Path::new("/nonexistent/acc.csv")),
        Err(Error::Io(_))
    ));
    let (_d, path) = file_with("bad.csv", "arch_id,accuracy\na,50\nb,-1\n");
    assert!(matches!(
        ingest_accuracy_table(&path),
        Err(Error::OutOfRange { line: 3, .. })
    ));
}

proptest! {
    #[test]
    fn accuracy_tables_round_trip(
        values in prop::collection::vec(0.0f64..=100.0, 1..40),
        rotation in 0usize..40,
    ) {
        let rows: Vec<(String, String)> = values
            .iter()
            .enumerate()
            .map(|(i, v)| (format!("arch{i:03}"), format_f64(*v)))
            .collect();
        let mut shuffled = rows.clone();
        let shift = rotation % shuffled.len();
        shuffled.rotate_left(shift);
        shuffled.reverse();
        let mut text = String::from("arch_id,accuracy\n");
        for (id, v) in &shuffled {
            text += &format!("{id},{v}\n");
        }
        let (_d, path) = file_with("t.csv", &text);
        let table = ingest_accuracy_table(&path).unwrap();
        let mut out = Vec::new();
        write_accuracy_table(&table, &mut out).unwrap();
        let mut expected = String::from("arch_id,accuracy\n");
        for (id, v) in &rows {
            expected += &format!("{id},{v}\n");
        }
        prop_assert_eq!(String::from_utf8(out).unwrap(), expected);
    }
}
