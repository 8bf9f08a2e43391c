//! Residual diagnostics: pooled first-order autocorrelation regressions and
//! per-variable Shapiro-Wilk normality tests.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{PvarError, Result};
use crate::pvar::PvarModel;
use crate::stats::t_quantile;
use crate::swilk::shapiro_wilk;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutocorrelationRow {
    pub variable: String,
    pub coef: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityRow {
    pub variable: String,
    pub w: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub autocorrelation: Vec<AutocorrelationRow>,
    /// All autocorrelation CIs contain zero.
    pub clean: bool,
    pub normality: Vec<NormalityRow>,
}

/// Regress each residual on its own first lag (pooled within units, with an
/// intercept) and report 95% intervals.
pub fn residual_autocorrelation_check(model: &PvarModel) -> Result<DiagnosticsReport> {
    autocorrelation_of(&model.residuals, model.periods_per_unit(), &model.var_names)
}

/// Same check on an arbitrary residual panel whose rows are unit-major with
/// `periods` rows per unit.
pub fn autocorrelation_of(
    residuals: &DMatrix<f64>,
    periods: usize,
    names: &[String],
) -> Result<DiagnosticsReport> {
    if periods < 3 {
        return Err(PvarError::TooFewPeriods {
            needed: 3,
            available: periods,
        });
    }
    let units = residuals.nrows() / periods;
    let mut rows = Vec::with_capacity(residuals.ncols());
    for (k, name) in names.iter().enumerate().take(residuals.ncols()) {
        let mut lag = Vec::with_capacity(units * (periods - 1));
        let mut cur = Vec::with_capacity(units * (periods - 1));
        for i in 0..units {
            for s in 1..periods {
                lag.push(residuals[(i * periods + s - 1, k)]);
                cur.push(residuals[(i * periods + s, k)]);
            }
        }
        let n = lag.len() as f64;
        let (mx, my) = (lag.iter().sum::<f64>() / n, cur.iter().sum::<f64>() / n);
        let sxx: f64 = lag.iter().map(|x| (x - mx).powi(2)).sum();
        let sxy: f64 = lag.iter().zip(&cur).map(|(x, y)| (x - mx) * (y - my)).sum();
        if !(sxx > 0.0) {
            return Err(PvarError::DegenerateResiduals(format!(
                "`{name}` residuals have no variance"
            )));
        }
        let coef = sxy / sxx;
        let ssr: f64 = lag
            .iter()
            .zip(&cur)
            .map(|(x, y)| (y - my - coef * (x - mx)).powi(2))
            .sum();
        let se = (ssr / (n - 2.0) / sxx).sqrt();
        let half = t_quantile(0.975, n - 2.0) * se;
        rows.push(AutocorrelationRow {
            variable: name.clone(),
            coef,
            ci_lo: coef - half,
            ci_hi: coef + half,
        });
    }
    Ok(DiagnosticsReport {
        clean: rows.iter().all(|r| r.ci_lo <= 0.0 && 0.0 <= r.ci_hi),
        autocorrelation: rows,
        normality: Vec::new(),
    })
}

/// Shapiro-Wilk test of each variable's pooled residuals.
pub fn normality_test(model: &PvarModel) -> Result<DiagnosticsReport> {
    if model.nobs < 8 {
        return Err(PvarError::TooFewObservations {
            needed: 8,
            available: model.nobs,
        });
    }
    let normality = model
        .var_names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let sw = shapiro_wilk(&model.residual_series(k))?;
            Ok(NormalityRow {
                variable: name.clone(),
                w: sw.w,
                p_value: sw.p_value,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DiagnosticsReport {
        normality,
        ..Default::default()
    })
}

/// Both checks in one report.
pub fn diagnose(model: &PvarModel) -> Result<DiagnosticsReport> {
    let mut report = residual_autocorrelation_check(model)?;
    report.normality = normality_test(model)?.normality;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn strong_autocorrelation_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (units, periods) = (5, 60);
        let mut r = DMatrix::zeros(units * periods, 1);
        for i in 0..units {
            let mut prev = 0.0;
            for s in 0..periods {
                let e: f64 = StandardNormal.sample(&mut rng);
                prev = 0.9 * prev + e;
                r[(i * periods + s, 0)] = prev;
            }
        }
        let report = autocorrelation_of(&r, periods, &["x".into()]).unwrap();
        assert!(!report.clean);
        let row = &report.autocorrelation[0];
        assert!(row.ci_lo <= row.coef && row.coef <= row.ci_hi);
        assert!(row.coef > 0.7);
    }

    #[test]
    fn short_panels_and_flat_residuals_error() {
        let r = DMatrix::from_element(4, 1, 1.0);
        assert!(autocorrelation_of(&r, 2, &["x".into()]).is_err());
        assert!(matches!(
            autocorrelation_of(&r, 4, &["x".into()]),
            Err(PvarError::DegenerateResiduals(_))
        ));
    }
}
