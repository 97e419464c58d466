//! Study configuration, results CSV I/O and the per-group summary table.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::Deserialize;

use crate::amputation::PatternKind;
use crate::dataset::format_value;
use crate::error::{Error, Result};
use crate::forest::ForestParams;
use crate::imputer::{ImputationStrategy, ImputerParams, StopReason};
use crate::metrics::{MetricsRecord, RECORD_HEADER};
use crate::simulation::{ScenarioConfig, ScenarioKind};
use crate::stochastic::SeedSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    Sequential,
    Forests,
    Variables,
}

impl StrategyName {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(Self::Sequential),
            "forests" => Ok(Self::Forests),
            "variables" => Ok(Self::Variables),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }

    pub fn with_decomposition(self, chunks: usize, workers: usize) -> ImputationStrategy {
        match self {
            Self::Sequential => ImputationStrategy::Sequential,
            Self::Forests => ImputationStrategy::ParallelForests { chunks },
            Self::Variables => ImputationStrategy::ParallelVariables { workers },
        }
    }
}

/// Study configuration file (TOML). Every key is optional; the defaults
/// describe the full desk study.
///
/// ```toml
/// master_seed = 2020
/// n_obs = 200
/// n_replicates = 500
/// scenarios = ["uncorrelated", "weak", "strong"]
/// patterns = ["two_cells", "one_cell"]
/// strategies = ["sequential", "forests", "variables"]
/// n_trees = 100
/// max_iterations = 10
/// chunks = 3
/// workers = 3
/// min_node_size = 5
/// # mtry = 1
/// # max_depth = 12
/// prop = 0.5
/// record_timings = false
/// ```
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub master_seed: u64,
    pub n_obs: usize,
    pub n_replicates: usize,
    pub scenarios: Vec<ScenarioKind>,
    pub patterns: Vec<PatternKind>,
    pub strategies: Vec<StrategyName>,
    pub n_trees: usize,
    pub max_iterations: usize,
    pub chunks: usize,
    pub workers: usize,
    pub min_node_size: usize,
    pub mtry: Option<usize>,
    pub max_depth: Option<usize>,
    pub prop: f64,
    pub record_timings: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            master_seed: 2020,
            n_obs: 200,
            n_replicates: 500,
            scenarios: ScenarioKind::ALL.to_vec(),
            patterns: vec![PatternKind::TwoCells, PatternKind::OneCell],
            strategies: vec![
                StrategyName::Sequential,
                StrategyName::Forests,
                StrategyName::Variables,
            ],
            n_trees: 100,
            max_iterations: 10,
            chunks: 3,
            workers: 3,
            min_node_size: 5,
            mtry: None,
            max_depth: None,
            prop: 0.5,
            record_timings: false,
        }
    }
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Expands the grid into one config per (scenario, pattern), scenario-major.
    pub fn scenario_configs(&self) -> Result<Vec<ScenarioConfig>> {
        if self.scenarios.is_empty() || self.patterns.is_empty() || self.strategies.is_empty() {
            return Err(Error::Config(
                "scenarios, patterns and strategies must be non-empty".into(),
            ));
        }
        if self.n_trees == 0 || self.max_iterations == 0 || self.chunks == 0 || self.workers == 0 {
            return Err(Error::Config(
                "n_trees, max_iterations, chunks and workers must be at least 1".into(),
            ));
        }
        if self.min_node_size == 0 || self.mtry == Some(0) {
            return Err(Error::Config(
                "min_node_size and mtry must be at least 1".into(),
            ));
        }
        if !(self.prop > 0.0 && self.prop < 1.0) {
            return Err(Error::Config(format!(
                "prop must lie in (0, 1), got {}",
                self.prop
            )));
        }
        let imputer = ImputerParams {
            forest: ForestParams {
                n_trees: self.n_trees,
                mtry: self.mtry,
                min_node_size: self.min_node_size,
                max_depth: self.max_depth,
                seed: SeedSpec::new(self.master_seed),
            },
            max_iterations: self.max_iterations,
            seed: SeedSpec::new(self.master_seed),
        };
        let strategies: Vec<ImputationStrategy> = self
            .strategies
            .iter()
            .map(|s| s.with_decomposition(self.chunks, self.workers))
            .collect();
        let mut out = Vec::new();
        for &scenario in &self.scenarios {
            for &pattern in &self.patterns {
                let config = ScenarioConfig {
                    scenario,
                    pattern,
                    n_obs: self.n_obs,
                    n_replicates: self.n_replicates,
                    strategies: strategies.clone(),
                    imputer: imputer.clone(),
                    prop: self.prop,
                    master_seed: self.master_seed,
                    record_timings: self.record_timings,
                };
                config.validate()?;
                out.push(config);
            }
        }
        Ok(out)
    }
}

pub fn write_records<W: Write>(writer: W, records: &[MetricsRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(RECORD_HEADER)?;
    for r in records {
        wtr.write_record(r.to_fields())?;
    }
    wtr.flush()?;
    Ok(())
}

/// Metrics summarised per group, in output order.
pub const SUMMARY_METRICS: [&str; 12] = [
    "iterations",
    "realized_prop",
    "rel_bias_mean_x1",
    "rel_bias_mean_x2",
    "rel_bias_sd_x1",
    "rel_bias_sd_x2",
    "coef_bias_b0",
    "coef_bias_b1",
    "coef_bias_b2",
    "nrmse_true",
    "nrmse_oob",
    "corr_x1x2",
];

/// The part of a result row that the summary needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scenario: String,
    pub pattern: String,
    pub strategy: String,
    pub max_iterations: usize,
    /// `None` for failed rows.
    pub values: Option<HashMap<&'static str, f64>>,
    pub stopped_at_max: bool,
}

impl From<&MetricsRecord> for ResultRow {
    fn from(r: &MetricsRecord) -> Self {
        let values = r.outcome.as_ref().ok().map(|m| {
            let v = [
                m.iterations as f64,
                m.realized_prop,
                m.rel_bias_mean[0],
                m.rel_bias_mean[1],
                m.rel_bias_sd[0],
                m.rel_bias_sd[1],
                m.coef_bias[0].value,
                m.coef_bias[1].value,
                m.coef_bias[2].value,
                m.nrmse_true,
                m.nrmse_oob,
                m.corr_x1x2,
            ];
            SUMMARY_METRICS.iter().copied().zip(v).collect()
        });
        let stopped_at_max =
            matches!(&r.outcome, Ok(m) if m.stopped_by == StopReason::MaxIterations);
        Self {
            scenario: r.scenario.clone(),
            pattern: r.pattern.clone(),
            strategy: r.strategy.clone(),
            max_iterations: r.max_iterations,
            values,
            stopped_at_max,
        }
    }
}

/// Reads a results CSV; columns are located by header name.
pub fn read_result_rows<R: Read>(reader: R) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema(e.to_string()))?
        .clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let required = [
        "scenario",
        "pattern",
        "strategy",
        "status",
        "max_iterations",
        "stopped_by",
    ];
    for name in required.iter().chain(SUMMARY_METRICS.iter()) {
        if !index.contains_key(name) {
            return Err(Error::Schema(format!("missing column {name:?}")));
        }
    }
    let mut rows = Vec::new();
    for (n, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Schema(e.to_string()))?;
        let line = n + 2;
        let field = |name: &str| record.get(index[name]).unwrap_or("");
        let number = |name: &str| -> Result<f64> {
            let v: f64 = field(name).parse().map_err(|_| {
                Error::Schema(format!(
                    "line {line}: {name} = {:?} is not a number",
                    field(name)
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Schema(format!("line {line}: {name} is not finite")));
            }
            Ok(v)
        };
        let max_iterations = field("max_iterations")
            .parse()
            .map_err(|_| Error::Schema(format!("line {line}: bad max_iterations")))?;
        let ok = match field("status") {
            "ok" => true,
            "failed" => false,
            other => {
                return Err(Error::Schema(format!(
                    "line {line}: unknown status {other:?}"
                )))
            }
        };
        let values = if ok {
            let mut v = HashMap::new();
            for name in SUMMARY_METRICS {
                v.insert(name, number(name)?);
            }
            Some(v)
        } else {
            None
        };
        rows.push(ResultRow {
            scenario: field("scenario").to_string(),
            pattern: field("pattern").to_string(),
            strategy: field("strategy").to_string(),
            max_iterations,
            stopped_at_max: ok && field("stopped_by") == StopReason::MaxIterations.label(),
            values,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantiles {
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
}

/// Order statistic `sorted[floor(q · (n − 1))]`; for even counts the median
/// is the lower of the two middle values.
pub fn lower_quantile(sorted: &[f64], q: f64) -> f64 {
    let k = (q * (sorted.len() - 1) as f64).floor() as usize;
    sorted[k]
}

pub fn quantiles(values: &[f64]) -> Option<Quantiles> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(Quantiles {
        median: lower_quantile(&v, 0.5),
        p25: lower_quantile(&v, 0.25),
        p75: lower_quantile(&v, 0.75),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scenario: String,
    pub pattern: String,
    pub strategy: String,
    pub n_rows: usize,
    pub n_failed: usize,
    pub metrics: Vec<(&'static str, Option<Quantiles>)>,
    /// `iteration_counts[k]` is the number of runs that performed `k + 1`
    /// iterations.
    pub iteration_counts: Vec<usize>,
    /// Fraction of successful runs that stopped at the iteration cap.
    pub frac_max_iterations: f64,
}

impl SummaryRow {
    pub fn metric(&self, name: &str) -> Option<Quantiles> {
        self.metrics
            .iter()
            .find(|(n, _)| *n == name)
            .and_then(|(_, q)| *q)
    }

    pub fn median(&self, name: &str) -> f64 {
        self.metric(name).map_or(f64::NAN, |q| q.median)
    }
}

/// Groups rows by (scenario, pattern, strategy) in order of first appearance.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let max_iter = rows.iter().map(|r| r.max_iterations).max().unwrap_or(0);
    let mut order: Vec<(String, String, String)> = Vec::new();
    let mut groups: HashMap<(String, String, String), Vec<&ResultRow>> = HashMap::new();
    for r in rows {
        let key = (r.scenario.clone(), r.pattern.clone(), r.strategy.clone());
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let members = &groups[&key];
            let ok: Vec<&HashMap<&str, f64>> =
                members.iter().filter_map(|r| r.values.as_ref()).collect();
            let metrics = SUMMARY_METRICS
                .iter()
                .map(|&name| {
                    let v: Vec<f64> = ok.iter().map(|m| m[name]).collect();
                    (name, quantiles(&v))
                })
                .collect();
            let mut iteration_counts = vec![0; max_iter];
            for m in &ok {
                let k = m["iterations"] as usize;
                if (1..=max_iter).contains(&k) {
                    iteration_counts[k - 1] += 1;
                }
            }
            let at_max = members.iter().filter(|r| r.stopped_at_max).count();
            let frac_max_iterations = if ok.is_empty() {
                0.0
            } else {
                at_max as f64 / ok.len() as f64
            };
            SummaryRow {
                scenario: key.0,
                pattern: key.1,
                strategy: key.2,
                n_rows: members.len(),
                n_failed: members.len() - ok.len(),
                metrics,
                iteration_counts,
                frac_max_iterations,
            }
        })
        .collect()
}

pub fn write_summary<W: Write>(writer: W, summary: &[SummaryRow]) -> Result<()> {
    let max_iter = summary
        .iter()
        .map(|s| s.iteration_counts.len())
        .max()
        .unwrap_or(0);
    let mut header: Vec<String> = ["scenario", "pattern", "strategy", "n_rows", "n_failed"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for m in SUMMARY_METRICS {
        header.extend([
            format!("{m}_median"),
            format!("{m}_p25"),
            format!("{m}_p75"),
        ]);
    }
    header.push("frac_max_iterations".into());
    header.extend((1..=max_iter).map(|k| format!("iter_{k}")));

    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(&header)?;
    for s in summary {
        let mut f = vec![
            s.scenario.clone(),
            s.pattern.clone(),
            s.strategy.clone(),
            s.n_rows.to_string(),
            s.n_failed.to_string(),
        ];
        for (_, q) in &s.metrics {
            match q {
                Some(q) => f.extend([q.median, q.p25, q.p75].map(format_value)),
                None => f.extend(std::iter::repeat(String::new()).take(3)),
            }
        }
        f.push(format_value(s.frac_max_iterations));
        f.extend(
            (0..max_iter).map(|k| s.iteration_counts.get(k).copied().unwrap_or(0).to_string()),
        );
        wtr.write_record(&f)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(strategy: &str, iterations: f64, at_max: bool) -> ResultRow {
        let values = SUMMARY_METRICS
            .iter()
            .map(|&n| (n, if n == "iterations" { iterations } else { 0.5 }))
            .collect();
        ResultRow {
            scenario: "weak".into(),
            pattern: "one_cell".into(),
            strategy: strategy.into(),
            max_iterations: 10,
            values: Some(values),
            stopped_at_max: at_max,
        }
    }

    #[test]
    fn lower_median_convention() {
        assert_eq!(quantiles(&[3.0, 1.0, 2.0]).unwrap().median, 2.0);
        assert_eq!(quantiles(&[4.0, 1.0, 3.0, 2.0]).unwrap().median, 2.0);
        assert_eq!(
            quantiles(&[7.0]).unwrap(),
            Quantiles {
                median: 7.0,
                p25: 7.0,
                p75: 7.0
            }
        );
        assert!(quantiles(&[]).is_none());
    }

    #[test]
    fn summary_groups_and_histogram() {
        let mut rows = vec![
            row("sequential", 3.0, false),
            row("variables", 10.0, true),
            row("sequential", 2.0, false),
        ];
        rows.push(ResultRow {
            values: None,
            ..row("variables", 0.0, false)
        });
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!(
            (s[0].strategy.as_str(), s[0].n_rows, s[0].n_failed),
            ("sequential", 2, 0)
        );
        assert_eq!(s[0].median("iterations"), 2.0);
        assert_eq!(s[0].iteration_counts[1..3], [1, 1]);
        assert_eq!((s[1].n_rows, s[1].n_failed), (2, 1));
        assert_eq!(s[1].frac_max_iterations, 1.0);
        assert_eq!(s[1].iteration_counts[9], 1);
        assert_eq!(s.iter().map(|g| g.n_rows).sum::<usize>(), rows.len());
    }

    #[test]
    fn config_defaults_and_overrides() {
        let c = StudyConfig::from_toml("").unwrap();
        assert_eq!(c, StudyConfig::default());
        let c = StudyConfig::from_toml(
            "n_replicates = 2\nscenarios = [\"strong\"]\nstrategies = [\"forests\"]\nchunks = 4",
        )
        .unwrap();
        let cells = c.scenario_configs().unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(
            cells[0].strategies,
            vec![ImputationStrategy::ParallelForests { chunks: 4 }]
        );
        assert!(StudyConfig::from_toml("bogus = 1").is_err());
        assert!(StudyConfig::from_toml("prop = 1.5")
            .unwrap()
            .scenario_configs()
            .is_err());
    }

    #[test]
    fn results_csv_schema_is_checked() {
        assert!(matches!(
            read_result_rows("a,b\n1,2\n".as_bytes()),
            Err(Error::Schema(_))
        ));
    }
}
