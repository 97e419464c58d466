//! Evaluation statistics comparing imputed data with the complete data, and
//! the long-format result record.

use crate::dataset::{format_value, DataMatrix, MissingMask};
use crate::error::{Error, Result};
use crate::imputer::StopReason;
use crate::linalg::{lstsq, LeastSquares, Matrix};
use crate::simulation::ScenarioKind;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n−1 denominator).
pub fn sample_sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

fn same_length(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!(
            "vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// `mean(v_imp) / mean(v_true) − 1` over all values.
pub fn relative_bias_mean(v_imp: &[f64], v_true: &[f64]) -> Result<f64> {
    same_length(v_imp, v_true)?;
    let t = mean(v_true);
    if t == 0.0 {
        return Err(Error::ZeroDenominator("relative bias of the mean"));
    }
    Ok(mean(v_imp) / t - 1.0)
}

/// `sd(v_imp) / sd(v_true) − 1` over all values.
pub fn relative_bias_sd(v_imp: &[f64], v_true: &[f64]) -> Result<f64> {
    same_length(v_imp, v_true)?;
    if v_true.len() < 2 {
        return Err(Error::InvalidInput(
            "standard deviation needs two values".into(),
        ));
    }
    let t = sample_sd(v_true);
    if t == 0.0 {
        return Err(Error::ZeroDenominator(
            "relative bias of the standard deviation",
        ));
    }
    Ok(sample_sd(v_imp) / t - 1.0)
}

/// Least squares on a design that already carries its intercept column.
pub fn ols_fit(design: &Matrix, y: &[f64]) -> Result<LeastSquares> {
    lstsq(design, y)
}

/// Regresses `y` on an intercept plus `covariates`.
pub fn regress(y: &[f64], covariates: &[&[f64]]) -> Result<LeastSquares> {
    let n = y.len();
    if covariates.iter().any(|c| c.len() != n) {
        return Err(Error::Shape(
            "covariate length differs from response".into(),
        ));
    }
    let mut design = Matrix::zeros(n, covariates.len() + 1);
    for i in 0..n {
        design[(i, 0)] = 1.0;
        for (k, c) in covariates.iter().enumerate() {
            design[(i, k + 1)] = c[i];
        }
    }
    ols_fit(&design, y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasKind {
    /// `(est − β) / β`
    Relative,
    /// `est − β`, used where the true coefficient is zero.
    Absolute,
}

impl BiasKind {
    pub fn label(&self) -> &'static str {
        match self {
            BiasKind::Relative => "relative",
            BiasKind::Absolute => "absolute",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefBias {
    pub value: f64,
    pub kind: BiasKind,
}

pub fn coef_relative_bias(est: &[f64], truth: &[f64]) -> Result<Vec<CoefBias>> {
    if est.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} estimates for {} coefficients",
            est.len(),
            truth.len()
        )));
    }
    Ok(est
        .iter()
        .zip(truth)
        .map(|(&e, &b)| {
            if b == 0.0 {
                CoefBias {
                    value: e - b,
                    kind: BiasKind::Absolute,
                }
            } else {
                CoefBias {
                    value: (e - b) / b,
                    kind: BiasKind::Relative,
                }
            }
        })
        .collect())
}

/// `sqrt(mean((true − imp)²) / var(true))` pooled over every masked cell.
pub fn nrmse(x_true: &DataMatrix, x_imp: &DataMatrix, mask: &MissingMask) -> Result<f64> {
    mask.check_shape(x_true)?;
    mask.check_shape(x_imp)?;
    let mut truth = Vec::new();
    let mut sq_err = 0.0;
    for j in 0..mask.n_cols() {
        for i in mask.missing_rows(j) {
            let t = x_true.get(i, j);
            sq_err += (t - x_imp.get(i, j)).powi(2);
            truth.push(t);
        }
    }
    let m = truth.len();
    if m < 2 {
        return Err(Error::DegenerateNrmse);
    }
    let var = sample_sd(&truth).powi(2);
    if var == 0.0 {
        return Err(Error::DegenerateNrmse);
    }
    Ok((sq_err / m as f64 / var).sqrt())
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    same_length(a, b)?;
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::DegenerateCorrelation);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Population quantities implied by a scenario's generating distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTruth {
    /// `(Y, X1, X2)`
    pub true_means: [f64; 3],
    pub true_sds: [f64; 3],
    /// Intercept and slopes of `E[Y | X1, X2]`.
    pub true_coefs: [f64; 3],
    pub true_resid_var: f64,
    pub true_rho: f64,
}

pub fn scenario_truth(scenario: ScenarioKind) -> ScenarioTruth {
    let (true_coefs, true_resid_var) = match scenario {
        ScenarioKind::Uncorrelated => ([0.0, 1.0, 1.0], 1.0),
        ScenarioKind::Weak => ([0.6, 0.2, 0.2], 9.0),
        ScenarioKind::Strong => ([1.0 / 7.0, 3.0 / 7.0, 3.0 / 7.0], 25.0 / 7.0),
    };
    let cov = scenario.covariance();
    ScenarioTruth {
        true_means: scenario.mean(),
        true_sds: [cov[(0, 0)].sqrt(), cov[(1, 1)].sqrt(), cov[(2, 2)].sqrt()],
        true_coefs,
        true_resid_var,
        true_rho: scenario.rho(),
    }
}

/// Statistics of one successful imputation.
#[derive(Debug, Clone, PartialEq)]
pub struct Measures {
    pub iterations: usize,
    pub stopped_by: StopReason,
    pub realized_prop: f64,
    /// `[X1, X2]`
    pub rel_bias_mean: [f64; 2],
    pub rel_bias_sd: [f64; 2],
    /// Intercept, X1, X2.
    pub coef_bias: [CoefBias; 3],
    pub nrmse_true: f64,
    pub nrmse_oob: f64,
    pub corr_x1x2: f64,
}

/// One long-format result row: a replicate imputed by one strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub replicate: u64,
    pub scenario: String,
    pub pattern: String,
    pub strategy: String,
    pub max_iterations: usize,
    pub elapsed_ms: u64,
    /// Failure message when any stage of the replicate failed.
    pub outcome: std::result::Result<Measures, String>,
}

/// Column order of the results CSV.
pub const RECORD_HEADER: [&str; 22] = [
    "replicate",
    "scenario",
    "pattern",
    "strategy",
    "status",
    "iterations",
    "max_iterations",
    "stopped_by",
    "realized_prop",
    "rel_bias_mean_x1",
    "rel_bias_mean_x2",
    "rel_bias_sd_x1",
    "rel_bias_sd_x2",
    "coef_bias_b0",
    "coef_bias_b1",
    "coef_bias_b2",
    "coef_b0_kind",
    "nrmse_true",
    "nrmse_oob",
    "corr_x1x2",
    "elapsed_ms",
    "error",
];

impl MetricsRecord {
    pub fn is_ok(&self) -> bool {
        self.outcome.is_ok()
    }

    pub fn to_fields(&self) -> Vec<String> {
        let mut f = vec![
            self.replicate.to_string(),
            self.scenario.clone(),
            self.pattern.clone(),
            self.strategy.clone(),
        ];
        match &self.outcome {
            Ok(m) => {
                f.push("ok".into());
                f.push(m.iterations.to_string());
                f.push(self.max_iterations.to_string());
                f.push(m.stopped_by.label().into());
                let values = [
                    m.realized_prop,
                    m.rel_bias_mean[0],
                    m.rel_bias_mean[1],
                    m.rel_bias_sd[0],
                    m.rel_bias_sd[1],
                    m.coef_bias[0].value,
                    m.coef_bias[1].value,
                    m.coef_bias[2].value,
                ];
                f.extend(values.iter().map(|&v| format_value(v)));
                f.push(m.coef_bias[0].kind.label().into());
                f.extend(
                    [m.nrmse_true, m.nrmse_oob, m.corr_x1x2]
                        .iter()
                        .map(|&v| format_value(v)),
                );
                f.push(self.elapsed_ms.to_string());
                f.push(String::new());
            }
            Err(msg) => {
                f.push("failed".into());
                f.push(String::new());
                f.push(self.max_iterations.to_string());
                f.extend(std::iter::repeat(String::new()).take(13));
                f.push(self.elapsed_ms.to_string());
                f.push(msg.clone());
            }
        }
        debug_assert_eq!(f.len(), RECORD_HEADER.len());
        f
    }
}
