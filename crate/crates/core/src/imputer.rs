//! The missForest iteration engine.
//!
//! Each cycle visits the incomplete columns in [`imputation_order`], fits a
//! forest on the rows where the column is observed (all other columns as
//! predictors) and overwrites the masked cells with the forest's predictions.
//! The three strategies differ only in when those writes become visible:
//!
//! * `Sequential` writes each column's predictions before the next column is
//!   fitted.
//! * `ParallelForests` has the same data flow; each forest is grown as
//!   independent chunks of trees that are merged before predicting.
//! * `ParallelVariables` fits every column against a snapshot taken at the
//!   start of the cycle and applies all predictions after the last column
//!   finishes.
//!
//! Random streams are keyed by `(iteration, column, chunk)` under the
//! caller's seed, so the physical thread count never changes a result.

use rayon::prelude::*;

use crate::dataset::{imputation_order, initialize_missing, DataMatrix, MissingMask};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, merge_forests, oob_nrmse, ForestParams};
use crate::stochastic::SeedSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ImputationStrategy {
    Sequential,
    ParallelForests { chunks: usize },
    ParallelVariables { workers: usize },
}

impl ImputationStrategy {
    pub fn label(&self) -> &'static str {
        match self {
            ImputationStrategy::Sequential => "sequential",
            ImputationStrategy::ParallelForests { .. } => "forests",
            ImputationStrategy::ParallelVariables { .. } => "variables",
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ImputationStrategy::ParallelForests { chunks: 0 } => {
                Err(Error::InvalidInput("chunks must be at least 1".into()))
            }
            ImputationStrategy::ParallelVariables { workers: 0 } => {
                Err(Error::InvalidInput("workers must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputerParams {
    /// Forest settings. Its `seed` is ignored: every forest draws from a
    /// path under `seed` below.
    pub forest: ForestParams,
    pub max_iterations: usize,
    pub seed: SeedSpec,
}

impl Default for ImputerParams {
    fn default() -> Self {
        Self {
            forest: ForestParams::default(),
            max_iterations: 10,
            seed: SeedSpec::new(0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StopReason {
    /// The difference rose above the previous cycle's (also used when there
    /// was nothing to impute).
    DifferenceIncreased,
    MaxIterations,
}

impl StopReason {
    pub fn label(&self) -> &'static str {
        match self {
            StopReason::DifferenceIncreased => "difference_increased",
            StopReason::MaxIterations => "max_iterations",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputationResult {
    pub imputed: DataMatrix,
    pub iterations_performed: usize,
    pub stopped_by: StopReason,
    pub diff_trace: Vec<f64>,
    /// OOB NRMSE pooled over the imputed columns for the cycle that produced
    /// `imputed`: `sqrt(mean_j(mse_j / var_j))`. `None` when nothing was
    /// imputed or some forest had no out-of-bag rows.
    pub oob_nrmse_final: Option<f64>,
}

/// Tree counts per chunk: sizes differ by at most one, larger chunks first.
pub fn chunk_sizes(n_trees: usize, chunks: usize) -> Vec<usize> {
    assert!(chunks >= 1, "chunks must be at least 1");
    let (base, extra) = (n_trees / chunks, n_trees % chunks);
    (0..chunks).map(|c| base + usize::from(c < extra)).collect()
}

/// `Σ(new − old)² / Σ new²` over every cell of `columns`.
pub fn iteration_diff(new: &DataMatrix, old: &DataMatrix, columns: &[usize]) -> Result<f64> {
    if new.n_rows() != old.n_rows() || new.n_cols() != old.n_cols() {
        return Err(Error::Shape("matrices differ in shape".into()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for &j in columns {
        for (a, b) in new.column(j).iter().zip(old.column(j)) {
            num += (a - b) * (a - b);
            den += a * a;
        }
    }
    if den == 0.0 {
        return Err(Error::DegenerateDiff);
    }
    Ok(num / den)
}

/// Per-column training layout; fixed across iterations.
struct Target {
    col: usize,
    observed: Vec<usize>,
    missing: Vec<usize>,
    response: Vec<f64>,
}

struct ColumnFill {
    predictions: Vec<f64>,
    oob: Option<f64>,
}

pub fn impute(
    data: &DataMatrix,
    mask: &MissingMask,
    params: &ImputerParams,
    strategy: ImputationStrategy,
) -> Result<ImputationResult> {
    mask.check_shape(data)?;
    strategy.validate()?;
    if params.max_iterations == 0 {
        return Err(Error::InvalidInput(
            "max_iterations must be at least 1".into(),
        ));
    }
    if data.n_cols() < 2 {
        return Err(Error::InvalidInput(
            "imputation needs at least two columns".into(),
        ));
    }

    let order = imputation_order(mask);
    if order.is_empty() {
        return Ok(ImputationResult {
            imputed: data.clone(),
            iterations_performed: 0,
            stopped_by: StopReason::DifferenceIncreased,
            diff_trace: Vec::new(),
            oob_nrmse_final: None,
        });
    }
    let mut working = initialize_missing(data, mask)?;
    let targets: Vec<Target> = order
        .iter()
        .map(|&col| {
            let observed = mask.observed_rows(col);
            let response = observed.iter().map(|&i| data.get(i, col)).collect();
            Target {
                col,
                observed,
                missing: mask.missing_rows(col),
                response,
            }
        })
        .collect();

    let mut trace = Vec::with_capacity(params.max_iterations);
    let mut prev_oob = None;
    for iteration in 0..params.max_iterations {
        let iter_seed = params.seed.child(iteration as u64);
        let mut next = working.clone();
        let mut oob_terms = Vec::with_capacity(targets.len());
        match strategy {
            ImputationStrategy::Sequential => {
                for t in &targets {
                    let fill = fill_column(&next, t, &params.forest, &iter_seed, 1)?;
                    write_fill(&mut next, t, &fill);
                    oob_terms.push(fill.oob);
                }
            }
            ImputationStrategy::ParallelForests { chunks } => {
                for t in &targets {
                    let fill = fill_column(&next, t, &params.forest, &iter_seed, chunks)?;
                    write_fill(&mut next, t, &fill);
                    oob_terms.push(fill.oob);
                }
            }
            ImputationStrategy::ParallelVariables { .. } => {
                let snapshot = &working;
                let fills = targets
                    .par_iter()
                    .map(|t| fill_column(snapshot, t, &params.forest, &iter_seed, 1))
                    .collect::<Result<Vec<_>>>()?;
                for (t, fill) in targets.iter().zip(&fills) {
                    write_fill(&mut next, t, fill);
                    oob_terms.push(fill.oob);
                }
            }
        }

        let diff = iteration_diff(&next, &working, &order)
            .map_err(|e| Error::ImputationFailure(e.to_string()))?;
        let oob = pool_oob(&oob_terms);
        let increased = trace.last().is_some_and(|&prev| diff > prev);
        trace.push(diff);
        let last = iteration + 1 == params.max_iterations;
        if last {
            // the cap wins: the final cycle's matrix is kept even if the
            // difference rose
            return Ok(ImputationResult {
                imputed: next,
                iterations_performed: trace.len(),
                stopped_by: StopReason::MaxIterations,
                diff_trace: trace,
                oob_nrmse_final: oob,
            });
        }
        if increased {
            return Ok(ImputationResult {
                imputed: working,
                iterations_performed: trace.len(),
                stopped_by: StopReason::DifferenceIncreased,
                diff_trace: trace,
                oob_nrmse_final: prev_oob,
            });
        }
        working = next;
        prev_oob = oob;
    }
    unreachable!("loop returns on its final iteration")
}

fn pool_oob(terms: &[Option<f64>]) -> Option<f64> {
    let squares: Option<Vec<f64>> = terms.iter().map(|t| t.map(|e| e * e)).collect();
    squares.map(|s| (s.iter().sum::<f64>() / s.len() as f64).sqrt())
}

fn write_fill(matrix: &mut DataMatrix, target: &Target, fill: &ColumnFill) {
    let col = matrix.column_mut(target.col);
    for (&i, &v) in target.missing.iter().zip(&fill.predictions) {
        col[i] = v;
    }
}

/// Fits the forest for one target column against `current` and predicts its
/// masked rows. With `chunks > 1` the trees are grown as separate chunk
/// forests (concurrently) and merged in chunk order.
fn fill_column(
    current: &DataMatrix,
    target: &Target,
    forest_params: &ForestParams,
    iter_seed: &SeedSpec,
    chunks: usize,
) -> Result<ColumnFill> {
    let predictors = current.columns_except(target.col);
    let gather = |rows: &[usize]| -> Vec<Vec<f64>> {
        predictors
            .iter()
            .map(|c| rows.iter().map(|&i| c[i]).collect())
            .collect()
    };
    let train = gather(&target.observed);
    let train_refs: Vec<&[f64]> = train.iter().map(Vec::as_slice).collect();
    let var_seed = iter_seed.child(target.col as u64);

    let fit_chunk = |(chunk, n_trees): (usize, usize)| {
        let p = ForestParams {
            n_trees,
            seed: var_seed.child(chunk as u64),
            ..forest_params.clone()
        };
        fit_forest(&train_refs, &target.response, &p)
    };
    let forest = if chunks == 1 {
        fit_chunk((0, forest_params.n_trees))?
    } else {
        let sizes: Vec<(usize, usize)> = chunk_sizes(forest_params.n_trees, chunks)
            .into_iter()
            .enumerate()
            .filter(|&(_, n)| n > 0)
            .collect();
        let parts = sizes
            .into_par_iter()
            .map(fit_chunk)
            .collect::<Result<Vec<_>>>()?;
        merge_forests(parts)?
    };

    let query = gather(&target.missing);
    let query_refs: Vec<&[f64]> = query.iter().map(Vec::as_slice).collect();
    let predictions = forest.predict(&query_refs)?;
    let oob = oob_nrmse(&forest, &target.response).ok();
    Ok(ColumnFill { predictions, oob })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::stochastic::{sample_mvn, MvnSpec};

    #[test]
    fn chunk_sizes_balance() {
        assert_eq!(chunk_sizes(100, 3), vec![34, 33, 33]);
        assert_eq!(chunk_sizes(100, 1), vec![100]);
        assert_eq!(chunk_sizes(5, 8), vec![1, 1, 1, 1, 1, 0, 0, 0]);
    }

    #[test]
    fn diff_identities() {
        let m = DataMatrix::from_columns(vec![vec![2.0, 2.0]]).unwrap();
        assert_eq!(iteration_diff(&m, &m, &[0]).unwrap(), 0.0);
        let old = DataMatrix::from_columns(vec![vec![1.0, 2.0]]).unwrap();
        assert_eq!(iteration_diff(&m, &old, &[0]).unwrap(), 0.125);
        let zero = DataMatrix::from_columns(vec![vec![0.0, 0.0]]).unwrap();
        assert_eq!(
            iteration_diff(&zero, &old, &[0]),
            Err(Error::DegenerateDiff)
        );
    }

    #[test]
    fn diff_matches_naive_double_loop() {
        let new = DataMatrix::from_rows(
            vec!["a".into(), "b".into(), "c".into()],
            &[
                vec![1.0, -2.0, 9.0],
                vec![0.5, 3.0, 9.0],
                vec![4.0, 1.5, 9.0],
            ],
        )
        .unwrap();
        let old = DataMatrix::from_rows(
            vec!["a".into(), "b".into(), "c".into()],
            &[
                vec![1.5, -2.0, 1.0],
                vec![0.5, 2.0, 1.0],
                vec![3.0, 1.0, 1.0],
            ],
        )
        .unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..3 {
            for j in 0..2 {
                num += (new.get(i, j) - old.get(i, j)).powi(2);
                den += new.get(i, j).powi(2);
            }
        }
        // 0.25 + 1 + 0 + 0 + 1 + 0.25 over 1 + 4 + 0.25 + 9 + 16 + 2.25
        assert!((num / den - 2.5 / 32.5).abs() < 1e-15);
        assert_eq!(iteration_diff(&new, &old, &[0, 1]).unwrap(), num / den);
    }

    fn small_problem(seed: u64, n: usize) -> (DataMatrix, MissingMask) {
        let cov = Matrix::from_rows(&[
            vec![4.0, 1.5, 1.0],
            vec![1.5, 2.0, 0.5],
            vec![1.0, 0.5, 3.0],
        ])
        .unwrap();
        let spec = MvnSpec::new(vec![1.0, 2.0, -1.0], cov).unwrap();
        let data = sample_mvn(&spec, n, &SeedSpec::new(seed)).unwrap();
        let mut mask = MissingMask::none(n, 3);
        for i in 0..n {
            if i % 3 == 1 {
                mask.set(i, 1, true);
            }
            if i % 4 == 2 {
                mask.set(i, 2, true);
            }
        }
        (data, mask)
    }

    fn params(n_trees: usize) -> ImputerParams {
        ImputerParams {
            forest: ForestParams {
                n_trees,
                ..Default::default()
            },
            max_iterations: 6,
            seed: SeedSpec::new(99),
        }
    }

    #[test]
    fn nothing_missing_is_identity() {
        let (data, _) = small_problem(1, 30);
        let r = impute(
            &data,
            &MissingMask::none(30, 3),
            &params(5),
            ImputationStrategy::Sequential,
        )
        .unwrap();
        assert_eq!(r.imputed, data);
        assert_eq!(r.iterations_performed, 0);
        assert!(r.diff_trace.is_empty());
    }

    #[test]
    fn observed_cells_are_preserved() {
        let (data, mask) = small_problem(2, 60);
        for strategy in [
            ImputationStrategy::Sequential,
            ImputationStrategy::ParallelForests { chunks: 3 },
            ImputationStrategy::ParallelVariables { workers: 3 },
        ] {
            let r = impute(&data, &mask, &params(10), strategy).unwrap();
            for j in 0..3 {
                for i in 0..60 {
                    if !mask.is_missing(i, j) {
                        assert_eq!(r.imputed.get(i, j).to_bits(), data.get(i, j).to_bits());
                    }
                }
            }
            assert_eq!(r.diff_trace.len(), r.iterations_performed);
            assert!(r.diff_trace.iter().all(|d| d.is_finite() && *d > 0.0));
            if r.stopped_by == StopReason::DifferenceIncreased && r.iterations_performed >= 2 {
                let k = r.diff_trace.len();
                assert!(r.diff_trace[k - 1] > r.diff_trace[k - 2]);
            }
        }
    }

    #[test]
    fn one_chunk_matches_sequential() {
        let (data, mask) = small_problem(3, 50);
        let a = impute(&data, &mask, &params(8), ImputationStrategy::Sequential).unwrap();
        let b = impute(
            &data,
            &mask,
            &params(8),
            ImputationStrategy::ParallelForests { chunks: 1 },
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fully_missing_column_is_rejected() {
        let (data, mut mask) = small_problem(4, 20);
        for i in 0..20 {
            mask.set(i, 2, true);
        }
        let r = impute(&data, &mask, &params(3), ImputationStrategy::Sequential);
        assert!(matches!(r, Err(Error::UnimputableColumn { col: 2, .. })));
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let (data, mask) = small_problem(5, 20);
        assert!(impute(
            &data,
            &mask,
            &params(3),
            ImputationStrategy::ParallelForests { chunks: 0 }
        )
        .is_err());
        assert!(impute(
            &data,
            &mask,
            &params(3),
            ImputationStrategy::ParallelVariables { workers: 0 }
        )
        .is_err());
        let p = ImputerParams {
            max_iterations: 0,
            ..params(3)
        };
        assert!(impute(&data, &mask, &p, ImputationStrategy::Sequential).is_err());
        let single = DataMatrix::from_columns(vec![vec![1.0, 2.0]]).unwrap();
        let m = MissingMask::from_columns(vec![vec![false, true]]).unwrap();
        assert!(impute(&single, &m, &params(3), ImputationStrategy::Sequential).is_err());
    }

    #[test]
    fn cap_of_one_iteration() {
        let (data, mask) = small_problem(6, 40);
        let p = ImputerParams {
            max_iterations: 1,
            ..params(5)
        };
        let r = impute(&data, &mask, &p, ImputationStrategy::Sequential).unwrap();
        assert_eq!(r.iterations_performed, 1);
        assert_eq!(r.stopped_by, StopReason::MaxIterations);
        assert!(r.oob_nrmse_final.is_some());
    }
}
