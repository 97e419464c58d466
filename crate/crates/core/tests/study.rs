use std::fs;

use forestfill::harness::{
    read_result_rows, summarize, write_records, write_summary, ResultRow, StudyConfig,
};
use forestfill::simulation::run_study;

const MINIMAL: &str = r#"
n_replicates = 2
scenarios = ["uncorrelated"]
patterns = ["two_cells"]
n_trees = 10
"#;

fn run(config: &StudyConfig) -> Vec<u8> {
    let out = run_study(&config.scenario_configs().unwrap(), None).unwrap();
    let mut bytes = Vec::new();
    write_records(&mut bytes, &out.records).unwrap();
    bytes
}

#[test]
fn minimal_study_writes_one_row_per_strategy_and_replicate() {
    let config = StudyConfig::from_toml(MINIMAL).unwrap();
    let bytes = run(&config);
    let text = String::from_utf8(bytes.clone()).unwrap();
    assert_eq!(text.lines().count(), 1 + 6);
    assert_eq!(bytes, run(&config));
}

#[test]
fn summary_round_trip_preserves_group_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = StudyConfig::from_toml(MINIMAL).unwrap();
    let results = dir.path().join("results.csv");
    fs::write(&results, run(&config)).unwrap();

    let rows = read_result_rows(fs::File::open(&results).unwrap()).unwrap();
    let summary = summarize(&rows);
    assert_eq!(summary.len(), 3);
    assert_eq!(summary.iter().map(|s| s.n_rows).sum::<usize>(), rows.len());
    for s in &summary {
        assert_eq!(s.n_rows, 2);
        assert_eq!(s.iteration_counts.iter().sum::<usize>(), 2 - s.n_failed);
    }
    let mut out = Vec::new();
    write_summary(&mut out, &summary).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().next().unwrap().contains("frac_max_iterations"));
}

#[test]
fn medians_use_lower_middle_value() {
    let config = StudyConfig::from_toml(MINIMAL).unwrap();
    let out = run_study(&config.scenario_configs().unwrap(), None).unwrap();
    let base: ResultRow = (&out.records[0]).into();
    let with = |v: f64| {
        let mut r = base.clone();
        r.values.as_mut().unwrap().insert("corr_x1x2", v);
        r
    };
    let single = summarize(&[with(0.25)]);
    assert_eq!(single[0].median("corr_x1x2"), 0.25);
    let three = summarize(&[with(3.0), with(1.0), with(2.0)]);
    assert_eq!(three[0].median("corr_x1x2"), 2.0);
    let four = summarize(&[with(4.0), with(1.0), with(3.0), with(2.0)]);
    assert_eq!(four[0].median("corr_x1x2"), 2.0);
}
