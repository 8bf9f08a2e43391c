//! Lag-order selection by model-selection criteria on the pooled Gaussian
//! quasi-likelihood.
//!
//! All candidate orders are estimated on the sample of the largest order,
//! `n = N (T - p_max)`. With `L(p)` the pooled log-likelihood and
//! `q = m^2 p` slope parameters:
//!
//! * MAIC = -2L + 2q
//! * MBIC = -2L + q ln n
//! * MQIC = -2L + 2q ln ln n
//!
//! The constant `n m (1 + ln 2 pi)` is dropped from `-2L`, leaving
//! `n ln det(Sigma_ML)`. Ties go to the smaller order.

use serde::{Deserialize, Serialize};

use crate::error::{PvarError, Result};
use crate::panel::PanelDataset;
use crate::pvar::{fit_on_sample, FitOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagCriteria {
    pub p: usize,
    pub mbic: f64,
    pub maic: f64,
    pub mqic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagSelectionReport {
    pub rows: Vec<LagCriteria>,
    pub nobs: usize,
    pub best_mbic: usize,
    pub best_maic: usize,
    pub best_mqic: usize,
}

impl LagSelectionReport {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["p", "mbic", "maic", "mqic"])?;
        for r in &self.rows {
            w.write_record([
                r.p.to_string(),
                format!("{:?}", r.mbic),
                format!("{:?}", r.maic),
                format!("{:?}", r.mqic),
            ])?;
        }
        w.flush().map_err(|e| PvarError::Io {
            path: "<csv writer>".into(),
            source: e,
        })
    }
}

fn argmin(rows: &[LagCriteria], key: impl Fn(&LagCriteria) -> f64) -> usize {
    let mut best = &rows[0];
    for r in &rows[1..] {
        if key(r) < key(best) {
            best = r;
        }
    }
    best.p
}

pub fn select_lag(ds: &PanelDataset, p_max: usize) -> Result<LagSelectionReport> {
    if p_max == 0 {
        return Err(PvarError::InvalidConfig("p_max must be at least 1".into()));
    }
    let opts = FitOptions {
        dof_correction: false,
    };
    let mut rows = Vec::with_capacity(p_max);
    let mut nobs = 0;
    for p in 1..=p_max {
        let model = fit_on_sample(ds, p, p_max, opts)?;
        let n = model.nobs as f64;
        nobs = model.nobs;
        let det = model.sigma.determinant();
        if det <= 0.0 || !det.is_finite() {
            return Err(PvarError::DegenerateResiduals(format!(
                "residual covariance determinant {det:e} at p = {p}"
            )));
        }
        let m = model.n_vars() as f64;
        let q = m * m * p as f64;
        let fit = n * det.ln();
        rows.push(LagCriteria {
            p,
            mbic: fit + q * n.ln(),
            maic: fit + 2.0 * q,
            mqic: fit + 2.0 * q * n.ln().ln(),
        });
    }
    Ok(LagSelectionReport {
        best_mbic: argmin(&rows, |r| r.mbic),
        best_maic: argmin(&rows, |r| r.maic),
        best_mqic: argmin(&rows, |r| r.mqic),
        rows,
        nobs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_go_to_the_smaller_order() {
        let rows = vec![
            LagCriteria { p: 1, mbic: 1.0, maic: 0.0, mqic: 2.0 },
            LagCriteria { p: 2, mbic: 1.0, maic: -1.0, mqic: 2.0 },
        ];
        assert_eq!(argmin(&rows, |r| r.mbic), 1);
        assert_eq!(argmin(&rows, |r| r.maic), 2);
    }

    #[test]
    fn zero_p_max_is_rejected() {
        let ds = PanelDataset::from_fn(
            vec!["a".into(), "b".into()],
            (0..10).collect(),
            vec!["x".into()],
            |i, s, _| ((i * 7 + s * 3) % 5) as f64,
        )
        .unwrap();
        assert!(matches!(select_lag(&ds, 0), Err(PvarError::InvalidConfig(_))));
        let report = select_lag(&ds, 2).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.nobs, 16);
    }
}
