//! Scenario definitions and the replicate pipeline:
//! generate → ampute → impute with every strategy → measure.
//!
//! All strategies of a replicate consume the same complete data and mask, and
//! the imputation seed path leaves out the strategy, so strategies that are
//! structurally equivalent produce identical rows.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amputation::{ampute, AmputationSpec, PatternKind};
use crate::dataset::{DataMatrix, MissingMask};
use crate::error::{Error, Result};
use crate::imputer::{impute, ImputationResult, ImputationStrategy, ImputerParams};
use crate::linalg::Matrix;
use crate::metrics::{
    coef_relative_bias, nrmse, pearson, regress, relative_bias_mean, relative_bias_sd,
    scenario_truth, Measures, MetricsRecord,
};
use crate::stochastic::{sample_mvn, MvnSpec, SeedSpec};

// First path component of each stage's stream.
const STREAM_DATA: u64 = 1;
const STREAM_AMPUTE: u64 = 2;
const STREAM_IMPUTE: u64 = 3;

/// Replicates may fail individually; a study fails above this fraction.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Independent covariates, `Y | X ~ N(x1 + x2, 1)`.
    Uncorrelated,
    /// Equicorrelated with ρ = 0.25.
    Weak,
    /// Equicorrelated with ρ = 0.75.
    Strong,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 3] = [
        ScenarioKind::Uncorrelated,
        ScenarioKind::Weak,
        ScenarioKind::Strong,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            ScenarioKind::Uncorrelated => "uncorrelated",
            ScenarioKind::Weak => "weak",
            ScenarioKind::Strong => "strong",
        }
    }

    fn code(&self) -> u64 {
        match self {
            ScenarioKind::Uncorrelated => 0,
            ScenarioKind::Weak => 1,
            ScenarioKind::Strong => 2,
        }
    }

    pub fn rho(&self) -> f64 {
        match self {
            ScenarioKind::Uncorrelated => 0.0,
            ScenarioKind::Weak => 0.25,
            ScenarioKind::Strong => 0.75,
        }
    }

    /// Means of `(Y, X1, X2)`.
    pub fn mean(&self) -> [f64; 3] {
        match self {
            ScenarioKind::Uncorrelated => [2.0, 1.0, 1.0],
            _ => [1.0, 1.0, 1.0],
        }
    }

    /// Covariance of `(Y, X1, X2)`.
    pub fn covariance(&self) -> Matrix {
        let rows = match self {
            ScenarioKind::Uncorrelated => vec![
                vec![21.0, 10.0, 10.0],
                vec![10.0, 10.0, 0.0],
                vec![10.0, 0.0, 10.0],
            ],
            _ => {
                let c = 10.0 * self.rho();
                vec![vec![10.0, c, c], vec![c, 10.0, c], vec![c, c, 10.0]]
            }
        };
        Matrix::from_rows(&rows).expect("3x3 literal")
    }

    pub fn mvn_spec(&self) -> Result<MvnSpec> {
        MvnSpec::new(self.mean().to_vec(), self.covariance())?.with_names(&["Y", "X1", "X2"])
    }
}

impl PatternKind {
    fn code(&self) -> u64 {
        match self {
            PatternKind::TwoCells => 0,
            PatternKind::OneCell => 1,
        }
    }
}

/// Complete `(Y, X1, X2)` data for a scenario.
pub fn generate_scenario(kind: ScenarioKind, n: usize, seed: &SeedSpec) -> Result<DataMatrix> {
    sample_mvn(&kind.mvn_spec()?, n, seed)
}

/// One cell of the study grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub pattern: PatternKind,
    pub n_obs: usize,
    pub n_replicates: usize,
    pub strategies: Vec<ImputationStrategy>,
    /// `imputer.seed` is replaced per replicate.
    pub imputer: ImputerParams,
    pub prop: f64,
    pub master_seed: u64,
    /// Wall-clock milliseconds per imputation; off by default so that
    /// results are byte-reproducible.
    pub record_timings: bool,
}

impl ScenarioConfig {
    pub fn new(scenario: ScenarioKind, pattern: PatternKind) -> Self {
        Self {
            scenario,
            pattern,
            n_obs: 200,
            n_replicates: 500,
            strategies: vec![
                ImputationStrategy::Sequential,
                ImputationStrategy::ParallelForests { chunks: 3 },
                ImputationStrategy::ParallelVariables { workers: 3 },
            ],
            imputer: ImputerParams::default(),
            prop: 0.5,
            master_seed: 2020,
            record_timings: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_obs < 10 {
            return Err(Error::Config(format!(
                "n_obs must be at least 10, got {}",
                self.n_obs
            )));
        }
        if self.n_replicates == 0 {
            return Err(Error::Config("n_replicates must be at least 1".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("at least one strategy is required".into()));
        }
        Ok(())
    }

    fn master(&self) -> SeedSpec {
        SeedSpec::new(self.master_seed)
    }

    pub fn data_seed(&self, replicate: u64) -> SeedSpec {
        self.master()
            .with_path(&[STREAM_DATA, self.scenario.code(), replicate])
    }

    pub fn amputation_seed(&self, replicate: u64) -> SeedSpec {
        self.master().with_path(&[
            STREAM_AMPUTE,
            self.scenario.code(),
            self.pattern.code(),
            replicate,
        ])
    }

    /// Shared by every strategy of the replicate.
    pub fn imputation_seed(&self, replicate: u64) -> SeedSpec {
        self.master().with_path(&[
            STREAM_IMPUTE,
            self.scenario.code(),
            self.pattern.code(),
            replicate,
        ])
    }
}

#[derive(Debug, Clone)]
pub struct ReplicateBundle {
    pub complete: Option<DataMatrix>,
    pub mask: Option<MissingMask>,
    pub results: Vec<(
        ImputationStrategy,
        std::result::Result<ImputationResult, String>,
    )>,
    pub records: Vec<MetricsRecord>,
}

fn measure(
    complete: &DataMatrix,
    mask: &MissingMask,
    realized_prop: f64,
    result: &ImputationResult,
    scenario: ScenarioKind,
) -> Result<Measures> {
    let imp = &result.imputed;
    let truth = scenario_truth(scenario);
    let fit = regress(imp.column(0), &[imp.column(1), imp.column(2)])?;
    let coef = coef_relative_bias(&fit.coefficients, &truth.true_coefs)?;
    let nrmse_oob = result
        .oob_nrmse_final
        .ok_or_else(|| Error::ImputationFailure("out-of-bag error unavailable".into()))?;
    Ok(Measures {
        iterations: result.iterations_performed,
        stopped_by: result.stopped_by,
        realized_prop,
        rel_bias_mean: [
            relative_bias_mean(imp.column(1), complete.column(1))?,
            relative_bias_mean(imp.column(2), complete.column(2))?,
        ],
        rel_bias_sd: [
            relative_bias_sd(imp.column(1), complete.column(1))?,
            relative_bias_sd(imp.column(2), complete.column(2))?,
        ],
        coef_bias: [coef[0], coef[1], coef[2]],
        nrmse_true: nrmse(complete, imp, mask)?,
        nrmse_oob,
        corr_x1x2: pearson(imp.column(1), imp.column(2))?,
    })
}

pub fn run_replicate(config: &ScenarioConfig, replicate: u64) -> ReplicateBundle {
    let record = |strategy: &ImputationStrategy, elapsed_ms: u64, outcome| MetricsRecord {
        replicate,
        scenario: config.scenario.label().into(),
        pattern: config.pattern.label().into(),
        strategy: strategy.label().into(),
        max_iterations: config.imputer.max_iterations,
        elapsed_ms,
        outcome,
    };

    let prepared = generate_scenario(config.scenario, config.n_obs, &config.data_seed(replicate))
        .and_then(|complete| {
            let spec = AmputationSpec::for_pattern(config.pattern, config.prop);
            let amputed = ampute(&complete, &spec, &config.amputation_seed(replicate))?;
            if amputed.mask.total_missing() == 0 {
                return Err(Error::AmputationFailure("no cell was masked".into()));
            }
            Ok((complete, amputed))
        });
    let (complete, amputed) = match prepared {
        Ok(p) => p,
        Err(e) => {
            let msg = e.to_string();
            return ReplicateBundle {
                complete: None,
                mask: None,
                results: config
                    .strategies
                    .iter()
                    .map(|s| (*s, Err(msg.clone())))
                    .collect(),
                records: config
                    .strategies
                    .iter()
                    .map(|s| record(s, 0, Err(msg.clone())))
                    .collect(),
            };
        }
    };

    let params = ImputerParams {
        seed: config.imputation_seed(replicate),
        ..config.imputer.clone()
    };
    let mut results = Vec::with_capacity(config.strategies.len());
    let mut records = Vec::with_capacity(config.strategies.len());
    for strategy in &config.strategies {
        let start = Instant::now();
        let result = impute(&complete, &amputed.mask, &params, *strategy);
        let elapsed_ms = if config.record_timings {
            start.elapsed().as_millis() as u64
        } else {
            0
        };
        let outcome = result.as_ref().map_err(|e| e.clone()).and_then(|r| {
            measure(
                &complete,
                &amputed.mask,
                amputed.realized_prop,
                r,
                config.scenario,
            )
        });
        records.push(record(
            strategy,
            elapsed_ms,
            outcome.map_err(|e| e.to_string()),
        ));
        results.push((*strategy, result.map_err(|e| e.to_string())));
    }
    ReplicateBundle {
        complete: Some(complete),
        mask: Some(amputed.mask),
        results,
        records,
    }
}

#[derive(Debug, Clone)]
pub struct StudyOutput {
    /// Ordered by (config, replicate, strategy).
    pub records: Vec<MetricsRecord>,
    pub total_replicates: usize,
    pub failed_replicates: usize,
}

impl StudyOutput {
    /// Errors when more than [`MAX_FAILURE_FRACTION`] of replicates failed.
    pub fn check(&self) -> Result<()> {
        if self.failed_replicates as f64 > MAX_FAILURE_FRACTION * self.total_replicates as f64 {
            return Err(Error::TooManyFailures {
                failed: self.failed_replicates,
                total: self.total_replicates,
            });
        }
        Ok(())
    }
}

/// Runs every replicate of every config on the current rayon pool.
/// `progress` is called with `(finished, total)` as replicates complete.
pub fn run_study(
    configs: &[ScenarioConfig],
    progress: Option<&(dyn Fn(usize, usize) + Sync)>,
) -> Result<StudyOutput> {
    for c in configs {
        c.validate()?;
    }
    let jobs: Vec<(usize, u64)> = configs
        .iter()
        .enumerate()
        .flat_map(|(k, c)| (0..c.n_replicates as u64).map(move |r| (k, r)))
        .collect();
    let total = jobs.len();
    let done = std::sync::atomic::AtomicUsize::new(0);
    let per_replicate: Vec<Vec<MetricsRecord>> = jobs
        .par_iter()
        .map(|&(k, r)| {
            let records = run_replicate(&configs[k], r).records;
            let finished = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
            if let Some(report) = progress {
                report(finished, total);
            }
            records
        })
        .collect();
    let failed_replicates = per_replicate
        .iter()
        .filter(|recs| recs.iter().any(|r| !r.is_ok()))
        .count();
    Ok(StudyOutput {
        records: per_replicate.into_iter().flatten().collect(),
        total_replicates: total,
        failed_replicates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::ForestParams;

    fn quick(scenario: ScenarioKind, pattern: PatternKind) -> ScenarioConfig {
        let mut c = ScenarioConfig::new(scenario, pattern);
        c.n_obs = 60;
        c.n_replicates = 2;
        c.imputer = ImputerParams {
            forest: ForestParams {
                n_trees: 10,
                ..Default::default()
            },
            max_iterations: 4,
            ..Default::default()
        };
        c
    }

    #[test]
    fn covariances_match_definition() {
        let s = ScenarioKind::Strong.covariance();
        assert_eq!(s[(0, 1)], 7.5);
        assert_eq!(s[(2, 2)], 10.0);
        let u = ScenarioKind::Uncorrelated.covariance();
        assert_eq!(u[(1, 2)], 0.0);
        assert_eq!(u[(0, 0)], 21.0);
    }

    #[test]
    fn generation_is_deterministic_and_named() {
        let s = SeedSpec::new(1).child(2);
        let a = generate_scenario(ScenarioKind::Weak, 50, &s).unwrap();
        assert_eq!(a, generate_scenario(ScenarioKind::Weak, 50, &s).unwrap());
        assert_eq!(a.names(), &["Y".to_string(), "X1".into(), "X2".into()]);
    }

    #[test]
    fn one_chunk_rows_equal_sequential_rows() {
        let mut c = quick(ScenarioKind::Strong, PatternKind::TwoCells);
        c.strategies = vec![
            ImputationStrategy::Sequential,
            ImputationStrategy::ParallelForests { chunks: 1 },
        ];
        let b = run_replicate(&c, 0);
        let (a, f) = (&b.records[0], &b.records[1]);
        assert_eq!(a.outcome, f.outcome);
        let m = a.outcome.as_ref().unwrap();
        assert!(m.nrmse_true > 0.0 && m.iterations >= 1);
    }

    #[test]
    fn study_cardinality_and_order() {
        let configs: Vec<ScenarioConfig> = ScenarioKind::ALL
            .iter()
            .flat_map(|&s| [PatternKind::TwoCells, PatternKind::OneCell].map(|p| quick(s, p)))
            .collect();
        let out = run_study(&configs, None).unwrap();
        assert_eq!(out.records.len(), 18 * 2);
        assert_eq!(out.failed_replicates, 0);
        out.check().unwrap();
        let keys: Vec<(String, String, u64, String)> = out
            .records
            .iter()
            .map(|r| {
                (
                    r.scenario.clone(),
                    r.pattern.clone(),
                    r.replicate,
                    r.strategy.clone(),
                )
            })
            .collect();
        assert_eq!(
            keys[0],
            (
                "uncorrelated".into(),
                "two_cells".into(),
                0,
                "sequential".into()
            )
        );
        assert_eq!(
            keys[4],
            (
                "uncorrelated".into(),
                "two_cells".into(),
                1,
                "forests".into()
            )
        );
        assert_eq!(
            keys[35],
            ("strong".into(), "one_cell".into(), 1, "variables".into())
        );
    }

    #[test]
    fn invalid_config_rejected() {
        let mut c = quick(ScenarioKind::Weak, PatternKind::OneCell);
        c.n_obs = 5;
        assert!(matches!(run_study(&[c], None), Err(Error::Config(_))));
    }

    #[test]
    fn failure_threshold() {
        let ok = StudyOutput {
            records: vec![],
            total_replicates: 200,
            failed_replicates: 2,
        };
        assert!(ok.check().is_ok());
        let bad = StudyOutput {
            failed_replicates: 3,
            ..ok
        };
        assert_eq!(
            bad.check(),
            Err(Error::TooManyFailures {
                failed: 3,
                total: 200
            })
        );
    }
}
