use forestfill::dataset::{imputation_order, initialize_missing, DataMatrix, MissingMask};
use forestfill::imputer::{impute, ImputationStrategy};
use forestfill::{ForestParams, ImputerParams, SeedSpec};
use proptest::prelude::*;

/// Data, mask and imputer settings for a small random problem. Column 0 is
/// always complete and every column keeps at least two observed rows.
fn problem() -> impl Strategy<Value = (DataMatrix, MissingMask, ImputerParams)> {
    (10usize..30, 2usize..5).prop_flat_map(|(n, p)| {
        (
            proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, n), p),
            proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, n), p),
            0.0f64..0.5,
            2usize..8,
            1usize..4,
            any::<u64>(),
        )
            .prop_map(move |(cols, draws, rate, trees, iters, seed)| {
                let mask: Vec<Vec<bool>> = draws
                    .iter()
                    .enumerate()
                    .map(|(j, d)| {
                        d.iter()
                            .enumerate()
                            .map(|(i, &u)| j > 0 && i >= 2 && u < rate)
                            .collect()
                    })
                    .collect();
                let params = ImputerParams {
                    forest: ForestParams {
                        n_trees: trees,
                        ..ForestParams::default()
                    },
                    max_iterations: iters,
                    seed: SeedSpec::new(seed),
                };
                (
                    DataMatrix::from_columns(cols).unwrap(),
                    MissingMask::from_columns(mask).unwrap(),
                    params,
                )
            })
    })
}

fn keep_one_column(mask: &MissingMask) -> MissingMask {
    let target = (0..mask.n_cols()).find(|&j| mask.missing_count(j) > 0);
    let cols = (0..mask.n_cols())
        .map(|j| {
            if Some(j) == target {
                mask.column(j).to_vec()
            } else {
                vec![false; mask.n_rows()]
            }
        })
        .collect();
    MissingMask::from_columns(cols).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn one_chunk_matches_sequential((data, mask, params) in problem()) {
        let seq = impute(&data, &mask, &params, ImputationStrategy::Sequential).unwrap();
        let one = impute(&data, &mask, &params, ImputationStrategy::ParallelForests { chunks: 1 }).unwrap();
        prop_assert_eq!(seq, one);
    }

    #[test]
    fn variables_matches_sequential_with_one_incomplete_column((data, mask, params) in problem(), workers in 1usize..4) {
        let mask = keep_one_column(&mask);
        let seq = impute(&data, &mask, &params, ImputationStrategy::Sequential).unwrap();
        let var = impute(&data, &mask, &params, ImputationStrategy::ParallelVariables { workers }).unwrap();
        prop_assert_eq!(seq, var);
    }

    #[test]
    fn observed_cells_are_untouched((data, mask, params) in problem(), chunks in 1usize..4) {
        for s in [
            ImputationStrategy::Sequential,
            ImputationStrategy::ParallelForests { chunks },
            ImputationStrategy::ParallelVariables { workers: chunks },
        ] {
            let r = impute(&data, &mask, &params, s).unwrap();
            prop_assert!(r.iterations_performed <= params.max_iterations);
            for j in 0..data.n_cols() {
                for i in 0..data.n_rows() {
                    let v = r.imputed.get(i, j);
                    prop_assert!(v.is_finite());
                    if !mask.is_missing(i, j) {
                        prop_assert_eq!(v.to_bits(), data.get(i, j).to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn thread_count_does_not_change_results((data, mask, params) in problem()) {
        let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
        for s in [
            ImputationStrategy::Sequential,
            ImputationStrategy::ParallelForests { chunks: 3 },
            ImputationStrategy::ParallelVariables { workers: 3 },
        ] {
            let a = pool(1).install(|| impute(&data, &mask, &params, s).unwrap());
            let b = pool(4).install(|| impute(&data, &mask, &params, s).unwrap());
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn mean_initialization_is_idempotent((data, mask, _p) in problem()) {
        let once = initialize_missing(&data, &mask).unwrap();
        let twice = initialize_missing(&once, &mask).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn imputation_order_sorts_incomplete_columns((_d, mask, _p) in problem()) {
        let order = imputation_order(&mask);
        let incomplete: Vec<usize> = (0..mask.n_cols()).filter(|&j| mask.missing_count(j) > 0).collect();
        let mut sorted = order.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, incomplete);
        for w in order.windows(2) {
            let (a, b) = (mask.missing_count(w[0]), mask.missing_count(w[1]));
            prop_assert!(a < b || (a == b && w[0] < w[1]));
        }
    }
}
