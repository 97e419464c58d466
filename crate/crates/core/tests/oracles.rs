use forestfill::amputation::{ampute, AmputationSpec, PatternKind};
use forestfill::dataset::{read_csv, write_csv, DataMatrix, MissingMask};
use forestfill::harness::lower_quantile;
use forestfill::imputer::{impute, ImputationStrategy, StopReason};
use forestfill::metrics::{regress, sample_sd, scenario_truth};
use forestfill::simulation::{generate_scenario, ScenarioConfig, ScenarioKind};
use forestfill::{ImputerParams, SeedSpec};

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    lower_quantile(v, 0.5)
}

#[test]
fn duplicate_feature_cell_is_recovered() {
    let n = 60;
    let data = generate_scenario(ScenarioKind::Weak, n, &SeedSpec::new(5)).unwrap();
    let x1 = data.column(1).to_vec();
    let cols = vec![data.column(0).to_vec(), x1.clone(), x1.clone()];
    let data = DataMatrix::from_columns(cols).unwrap();
    let target = 17;
    let mut mask = MissingMask::none(n, 3);
    mask.set(target, 2, true);

    let r = impute(
        &data,
        &mask,
        &ImputerParams::default(),
        ImputationStrategy::Sequential,
    )
    .unwrap();
    let v = r.imputed.get(target, 2);
    let observed: Vec<f64> = (0..n).filter(|&i| i != target).map(|i| x1[i]).collect();
    let lo = observed.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = observed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(v >= lo && v <= hi, "{v} outside [{lo}, {hi}]");
    assert!(
        (v - x1[target]).abs() <= sample_sd(&observed),
        "{v} vs {}",
        x1[target]
    );
}

#[test]
fn complete_file_round_trips_without_iterations() {
    let csv = "a,b,c\n1,2.5,-3\n0.1,4,1e-3\n7,8,9\n";
    let (data, mask) = read_csv(csv.as_bytes()).unwrap();
    let r = impute(
        &data,
        &mask,
        &ImputerParams::default(),
        ImputationStrategy::Sequential,
    )
    .unwrap();
    assert_eq!(r.iterations_performed, 0);
    assert_eq!(r.stopped_by, StopReason::DifferenceIncreased);
    let mut out = Vec::new();
    write_csv(&mut out, &r.imputed, None).unwrap();
    assert_eq!(
        String::from_utf8(out).unwrap(),
        "a,b,c\n1,2.5,-3\n0.1,4,0.001\n7,8,9\n"
    );
}

#[test]
fn single_missing_cell_is_filled_and_rest_preserved() {
    let mut csv = String::from("y,x1,x2\n");
    for i in 0..30 {
        let x = i as f64 * 0.37;
        if i == 11 {
            csv.push_str(&format!("{},{},NA\n", 2.0 * x, x));
        } else {
            csv.push_str(&format!("{},{},{}\n", 2.0 * x, x, x + 1.0));
        }
    }
    let (data, mask) = read_csv(csv.as_bytes()).unwrap();
    let r = impute(
        &data,
        &mask,
        &ImputerParams::default(),
        ImputationStrategy::Sequential,
    )
    .unwrap();
    assert!(r.iterations_performed >= 1);
    let mut out = Vec::new();
    write_csv(&mut out, &r.imputed, None).unwrap();
    let text = String::from_utf8(out).unwrap();
    for (a, b) in csv.lines().zip(text.lines()) {
        if !a.contains("NA") {
            assert_eq!(a, b);
        }
    }
    assert!(r.imputed.get(11, 2).is_finite());
}

#[test]
fn complete_data_regression_recovers_truth() {
    for kind in ScenarioKind::ALL {
        let truth = scenario_truth(kind).true_coefs;
        let mut fits: [Vec<f64>; 3] = Default::default();
        for rep in 0..500u64 {
            let d = generate_scenario(kind, 200, &SeedSpec::new(77).with_path(&[rep])).unwrap();
            let fit = regress(d.column(0), &[d.column(1), d.column(2)]).unwrap();
            for k in 0..3 {
                fits[k].push(fit.coefficients[k]);
            }
        }
        for k in 0..3 {
            let m = median(&mut fits[k]);
            assert!(
                (m - truth[k]).abs() <= 0.05,
                "{kind:?} coef {k}: {m} vs {}",
                truth[k]
            );
        }
    }
}

#[test]
fn amputation_targets_high_outcomes() {
    for pattern in [PatternKind::TwoCells, PatternKind::OneCell] {
        let config = ScenarioConfig::new(ScenarioKind::Uncorrelated, pattern);
        let spec = AmputationSpec::for_pattern(pattern, 0.5);
        let mut props = 0.0;
        let mut higher = 0;
        for rep in 0..500u64 {
            let d = generate_scenario(config.scenario, 200, &config.data_seed(rep)).unwrap();
            let out = ampute(&d, &spec, &config.amputation_seed(rep)).unwrap();
            props += out.realized_prop;
            let incomplete = |i: usize| out.mask.is_missing(i, 1) || out.mask.is_missing(i, 2);
            let (mut a, mut na, mut b, mut nb) = (0.0, 0.0, 0.0, 0.0);
            for (i, &y) in d.column(0).iter().enumerate() {
                if incomplete(i) {
                    a += y;
                    na += 1.0;
                } else {
                    b += y;
                    nb += 1.0;
                }
            }
            if a / na > b / nb {
                higher += 1;
            }
        }
        assert!((props / 500.0 - 0.5).abs() <= 0.02);
        assert!(higher > 495, "{higher}");
    }
}
