//! MAR amputation driven by a single fully observed weight column.
//!
//! Each row is first assigned a missingness pattern, independently of the
//! data. The weight column is standardised, and row `i` becomes incomplete
//! with probability `logistic(z_i + b)`, where the shift `b` is solved so the
//! probabilities average to the target proportion. An incomplete row loses
//! every column of its assigned pattern.

use rand::Rng;

use crate::dataset::{DataMatrix, MissingMask};
use crate::error::{Error, Result};
use crate::stochastic::SeedSpec;

const SHIFT_BRACKET: (f64, f64) = (-50.0, 50.0);
const SHIFT_TOLERANCE: f64 = 1e-6;
const MAX_BISECTIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    /// Both covariates missing together.
    TwoCells,
    /// Exactly one covariate missing, each with probability one half.
    OneCell,
}

impl PatternKind {
    pub fn label(&self) -> &'static str {
        match self {
            PatternKind::TwoCells => "two_cells",
            PatternKind::OneCell => "one_cell",
        }
    }
}

/// Probability increases with the weight value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mechanism {
    #[default]
    RightTailLogistic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmputationSpec {
    pub patterns: Vec<Vec<usize>>,
    pub pattern_freq: Vec<f64>,
    pub weight_column: usize,
    pub prop: f64,
    pub mechanism: Mechanism,
}

/// Patterns for a `(Y, X1, X2)` layout.
pub fn scenario_patterns(kind: PatternKind) -> (Vec<Vec<usize>>, Vec<f64>) {
    match kind {
        PatternKind::TwoCells => (vec![vec![1, 2]], vec![1.0]),
        PatternKind::OneCell => (vec![vec![1], vec![2]], vec![0.5, 0.5]),
    }
}

impl AmputationSpec {
    /// Amputation of `X1`/`X2` weighted by `Y` (column 0).
    pub fn for_pattern(kind: PatternKind, prop: f64) -> Self {
        let (patterns, pattern_freq) = scenario_patterns(kind);
        Self {
            patterns,
            pattern_freq,
            weight_column: 0,
            prop,
            mechanism: Mechanism::RightTailLogistic,
        }
    }

    fn validate(&self, n_cols: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidInput(msg));
        if self.weight_column >= n_cols {
            return fail(format!("weight column {} out of range", self.weight_column));
        }
        if self.patterns.is_empty() || self.patterns.len() != self.pattern_freq.len() {
            return fail("need one frequency per pattern and at least one pattern".into());
        }
        for p in &self.patterns {
            if p.is_empty() {
                return fail("empty pattern".into());
            }
            if p.contains(&self.weight_column) {
                return fail("patterns may not include the weight column".into());
            }
            if let Some(c) = p.iter().find(|&&c| c >= n_cols) {
                return fail(format!("pattern column {c} out of range"));
            }
        }
        if self.pattern_freq.iter().any(|&f| !(f > 0.0)) {
            return fail("pattern frequencies must be positive".into());
        }
        let total: f64 = self.pattern_freq.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return fail(format!("pattern frequencies sum to {total}"));
        }
        if !(self.prop > 0.0 && self.prop < 1.0) {
            return fail(format!("proportion {} outside (0, 1)", self.prop));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmputationOutcome {
    pub mask: MissingMask,
    /// Fraction of rows that became incomplete.
    pub realized_prop: f64,
    /// Solved logistic offset.
    pub shift: f64,
    /// Pattern index assigned to each row.
    pub assigned: Vec<usize>,
    /// Missingness probability of each row.
    pub probabilities: Vec<f64>,
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Solves `mean(logistic(z + b)) = prop` for `b` by bisection.
pub fn solve_shift(z: &[f64], prop: f64) -> Result<f64> {
    let mean_prob = |b: f64| z.iter().map(|&v| logistic(v + b)).sum::<f64>() / z.len() as f64;
    let (mut lo, mut hi) = SHIFT_BRACKET;
    if mean_prob(lo) > prop || mean_prob(hi) < prop {
        return Err(Error::AmputationFailure(format!(
            "no shift in [{lo}, {hi}] reaches proportion {prop}"
        )));
    }
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let err = mean_prob(mid) - prop;
        if err.abs() < SHIFT_TOLERANCE {
            return Ok(mid);
        }
        if err < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::AmputationFailure(
        "shift bisection did not converge".into(),
    ))
}

pub fn ampute(
    data: &DataMatrix,
    spec: &AmputationSpec,
    seed: &SeedSpec,
) -> Result<AmputationOutcome> {
    spec.validate(data.n_cols())?;
    let n = data.n_rows();
    let mut rng = seed.rng();

    let assigned: Vec<usize> = (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (k, &f) in spec.pattern_freq.iter().enumerate() {
                acc += f;
                if u < acc {
                    return k;
                }
            }
            spec.pattern_freq.len() - 1
        })
        .collect();

    let w = data.column(spec.weight_column);
    let mean = w.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    if !(sd > 0.0) {
        return Err(Error::AmputationFailure(
            "weight column has zero variance".into(),
        ));
    }
    let z: Vec<f64> = w.iter().map(|v| (v - mean) / sd).collect();
    let shift = solve_shift(&z, spec.prop)?;
    let probabilities: Vec<f64> = z.iter().map(|&v| logistic(v + shift)).collect();

    let mut mask = MissingMask::none(n, data.n_cols());
    let mut incomplete = 0usize;
    for i in 0..n {
        if rng.gen::<f64>() < probabilities[i] {
            incomplete += 1;
            for &c in &spec.patterns[assigned[i]] {
                mask.set(i, c, true);
            }
        }
    }
    Ok(AmputationOutcome {
        mask,
        realized_prop: incomplete as f64 / n as f64,
        shift,
        assigned,
        probabilities,
    })
}
