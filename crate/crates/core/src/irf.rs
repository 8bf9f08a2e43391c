//! Impulse responses from the moving-average representation of the fitted
//! panel VAR.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{PvarError, Result};
use crate::inference::ConfidenceSet;
use crate::iv::{Normalization, StructuralColumn};
use crate::pvar::{companion_matrix, PvarModel};

/// Default shock: a one percent move in the policy variable.
pub const DEFAULT_SHOCK_SIZE: f64 = 0.01;

/// `C_0 .. C_H`, the top-left `m x m` blocks of the companion matrix powers.
pub fn ma_coefficients(phi: &[DMatrix<f64>], horizon: usize) -> Vec<DMatrix<f64>> {
    let m = phi.first().map_or(0, |f| f.nrows());
    let companion = companion_matrix(phi);
    let mut power = DMatrix::identity(companion.nrows(), companion.ncols());
    let mut out = Vec::with_capacity(horizon + 1);
    for h in 0..=horizon {
        if h > 0 {
            power = &companion * &power;
        }
        out.push(power.view((0, 0), (m, m)).clone_owned());
    }
    out
}

/// Running sums `C_0 + .. + C_h`.
pub fn cumulative_ma(ma: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let mut acc: Option<DMatrix<f64>> = None;
    ma.iter()
        .map(|c| {
            let next = match acc.take() {
                Some(a) => a + c,
                None => c.clone(),
            };
            acc = Some(next.clone());
            next
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrfResult {
    pub var_names: Vec<String>,
    /// `responses[(h, s)]`: response of variable `s` at horizon `h`.
    pub responses: DMatrix<f64>,
    pub cumulative: DMatrix<f64>,
    pub shock_size: f64,
    pub normalization: Normalization,
}

impl IrfResult {
    pub fn horizon(&self) -> usize {
        self.responses.nrows() - 1
    }
}

/// Responses to a structural shock of `shock_size`. Under the unit
/// normalization the impact vector is `gamma / gamma_0`, so the policy
/// variable moves by exactly `shock_size` and outcome `j` by
/// `shock_size * beta_j`. Under the standardized normalization the impact
/// vector is the one standard deviation column and `shock_size` counts
/// standard deviations.
pub fn irf_point(
    model: &PvarModel,
    column: &StructuralColumn,
    horizon: usize,
    shock_size: f64,
) -> Result<IrfResult> {
    irf_from_phi(&model.phi, &model.var_names, column, horizon, shock_size)
}

pub fn irf_from_phi(
    phi: &[DMatrix<f64>],
    var_names: &[String],
    column: &StructuralColumn,
    horizon: usize,
    shock_size: f64,
) -> Result<IrfResult> {
    let m = var_names.len();
    if column.gamma.len() != m || phi.iter().any(|f| f.nrows() != m || f.ncols() != m) {
        return Err(PvarError::DimensionMismatch(
            "structural column does not match the model".into(),
        ));
    }
    let impact = match column.normalization {
        Normalization::Unit => {
            if !(column.gamma[0].abs() > 0.0) {
                return Err(PvarError::WeakDenominator {
                    value: column.gamma[0],
                });
            }
            column.unit_impact()
        }
        Normalization::Standardized => column.r_col.clone(),
    };
    let impact = nalgebra::DVector::from_vec(impact);
    let ma = ma_coefficients(phi, horizon);
    let responses = DMatrix::from_fn(horizon + 1, m, |h, s| {
        if h == 0 {
            // C_0 = I
            shock_size * impact[s]
        } else {
            shock_size * (ma[h].row(s) * &impact)[(0, 0)]
        }
    });
    Ok(cumulative(IrfResult {
        var_names: var_names.to_vec(),
        cumulative: responses.clone(),
        responses,
        shock_size,
        normalization: column.normalization,
    }))
}

/// Recompute `cumulative` as prefix sums of `responses`.
pub fn cumulative(mut irf: IrfResult) -> IrfResult {
    let mut cum = irf.responses.clone();
    for h in 1..cum.nrows() {
        for s in 0..cum.ncols() {
            cum[(h, s)] = cum[(h - 1, s)] + irf.responses[(h, s)];
        }
    }
    irf.cumulative = cum;
    irf
}

/// Confidence sets indexed `[h][s]`, already in response units.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IrfBands {
    pub point: Vec<Vec<ConfidenceSet>>,
    pub cumulative: Vec<Vec<ConfidenceSet>>,
}

fn fmt_bound(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:?}")
    }
}

/// Plot-data CSV: `horizon,variable,set,segment,response,cumulative,cs_lo,cs_hi`.
/// `set` is `irf` or `cirf`; a confidence set with several segments emits
/// one row per segment.
pub fn write_irf_csv<W: std::io::Write>(
    irf: &IrfResult,
    bands: Option<&IrfBands>,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "horizon", "variable", "set", "segment", "response", "cumulative", "cs_lo", "cs_hi",
    ])?;
    for h in 0..=irf.horizon() {
        for (s, name) in irf.var_names.iter().enumerate() {
            let resp = format!("{:?}", irf.responses[(h, s)]);
            let cum = format!("{:?}", irf.cumulative[(h, s)]);
            let Some(b) = bands else {
                w.write_record([&h.to_string(), name, "irf", "0", &resp, &cum, "", ""])?;
                continue;
            };
            for (label, set) in [("irf", &b.point[h][s]), ("cirf", &b.cumulative[h][s])] {
                if set.segments.is_empty() {
                    w.write_record([&h.to_string(), name, label, "0", &resp, &cum, "", ""])?;
                }
                for (k, (lo, hi)) in set.segments.iter().enumerate() {
                    w.write_record([
                        &h.to_string(),
                        name,
                        label,
                        &k.to_string(),
                        &resp,
                        &cum,
                        &fmt_bound(*lo),
                        &fmt_bound(*hi),
                    ])?;
                }
            }
        }
    }
    w.flush().map_err(|e| PvarError::Io {
        path: "<csv writer>".into(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recursion(phi: &[DMatrix<f64>], horizon: usize) -> Vec<DMatrix<f64>> {
        let m = phi[0].nrows();
        let mut c = vec![DMatrix::identity(m, m)];
        for h in 1..=horizon {
            let mut next = DMatrix::zeros(m, m);
            for (l, f) in phi.iter().enumerate() {
                if h > l {
                    next += f * &c[h - l - 1];
                }
            }
            c.push(next);
        }
        c
    }

    #[test]
    fn no_dynamics_gives_zero_ma_terms() {
        let ma = ma_coefficients(&[DMatrix::zeros(2, 2)], 4);
        assert_eq!(ma[0], DMatrix::identity(2, 2));
        assert!(ma[1..].iter().all(|c| c.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn scalar_geometric_decay() {
        let ma = ma_coefficients(&[DMatrix::from_element(1, 1, 0.5)], 6);
        for (k, c) in ma.iter().enumerate() {
            assert_eq!(c[(0, 0)], 0.5_f64.powi(k as i32));
        }
    }

    #[test]
    fn two_lags_match_direct_recursion() {
        let phi = vec![
            DMatrix::from_row_slice(2, 2, &[0.4, -0.2, 0.3, 0.1]),
            DMatrix::from_row_slice(2, 2, &[-0.15, 0.05, 0.2, -0.1]),
        ];
        let a = ma_coefficients(&phi, 12);
        let b = recursion(&phi, 12);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs().max() < 1e-12);
        }
    }

    #[test]
    fn cumulative_prefix_sums() {
        let responses = DMatrix::from_column_slice(3, 1, &[1.0, 0.5, 0.25]);
        let irf = cumulative(IrfResult {
            var_names: vec!["x".into()],
            cumulative: DMatrix::zeros(3, 1),
            responses,
            shock_size: 1.0,
            normalization: Normalization::Unit,
        });
        assert_eq!(irf.cumulative.as_slice(), &[1.0, 1.5, 1.75]);
        let zero = cumulative(IrfResult {
            responses: DMatrix::zeros(4, 2),
            cumulative: DMatrix::from_element(4, 2, 9.0),
            ..irf
        });
        assert!(zero.cumulative.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn impact_is_shock_times_beta() {
        let col = StructuralColumn::unit(0.46, &[0.8]).unwrap();
        let phi = vec![DMatrix::from_row_slice(2, 2, &[-0.1, -0.03, 0.8, 0.34])];
        let irf = irf_from_phi(&phi, &["w".into(), "y".into()], &col, 3, 0.01).unwrap();
        assert_eq!(irf.responses[(0, 0)], 0.01);
        assert!((irf.responses[(0, 1)] - 0.01 * 0.8 / 0.46).abs() < 1e-15);
        let zero = irf_from_phi(&[DMatrix::zeros(2, 2)], &["w".into(), "y".into()], &col, 3, 0.01)
            .unwrap();
        assert!(zero.responses.rows(1, 3).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn csv_has_documented_columns() {
        let col = StructuralColumn::unit(0.5, &[1.0]).unwrap();
        let irf = irf_from_phi(&[DMatrix::zeros(2, 2)], &["w".into(), "y".into()], &col, 1, 1.0)
            .unwrap();
        let mut buf = Vec::new();
        write_irf_csv(&irf, None, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "horizon,variable,set,segment,response,cumulative,cs_lo,cs_hi"
        );
        assert_eq!(lines.next().unwrap(), "0,w,irf,0,1.0,1.0,,");
        assert_eq!(text.lines().count(), 5);
    }
}
