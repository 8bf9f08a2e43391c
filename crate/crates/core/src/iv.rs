//! External-instrument identification of the policy shock's impact column.
//!
//! The policy residual comes first. Each projection on the instrument is a
//! pooled regression with an intercept, so the instrument enters in
//! deviation from its grand mean.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PvarError, Result};
use crate::linalg::{demeaned, dot};
use crate::panel::InstrumentSeries;
use crate::pvar::PvarModel;
use crate::stats::t_quantile;

/// F statistics above this are reported as capped.
pub const F_CAP: f64 = 1e12;

/// Largest |corr(W, Z)| treated as a zero first stage.
pub const WEAK_DENOMINATOR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceMode {
    #[default]
    Iid,
    Cluster,
}

/// Variance estimator for a pooled regression, with the unit of each
/// observation when clustering.
#[derive(Debug, Clone, Copy)]
pub enum Variance<'a> {
    Iid,
    Cluster(&'a [usize]),
}

impl<'a> Variance<'a> {
    pub fn for_mode(mode: VarianceMode, clusters: &'a [usize]) -> Self {
        match mode {
            VarianceMode::Iid => Variance::Iid,
            VarianceMode::Cluster => Variance::Cluster(clusters),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// A shock that moves the policy variable by one unit on impact.
    #[default]
    Unit,
    /// A one standard deviation structural shock.
    Standardized,
}

/// Slope of a simple regression with intercept, plus its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Slope {
    pub coef: f64,
    pub se: f64,
    pub df: f64,
}

pub(crate) fn instrument_ss(z: &[f64]) -> Result<(Vec<f64>, f64)> {
    let zc = demeaned(z);
    let szz = dot(&zc, &zc);
    let scale = z.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if !(szz > (f64::EPSILON * scale).powi(2) * z.len() as f64) {
        return Err(PvarError::DegenerateInstrument);
    }
    Ok((zc, szz))
}

/// Number of distinct clusters and per-cluster sums of `score`.
pub(crate) fn cluster_sums(clusters: &[usize], score: impl Fn(usize) -> f64) -> Vec<f64> {
    let g = clusters.iter().max().map_or(0, |m| m + 1);
    let mut sums = vec![0.0; g];
    for (r, &c) in clusters.iter().enumerate() {
        sums[c] += score(r);
    }
    sums
}

pub(crate) fn slope(y: &[f64], z: &[f64], variance: Variance<'_>) -> Result<Slope> {
    if y.len() != z.len() {
        return Err(PvarError::DimensionMismatch(format!(
            "{} outcomes vs {} instrument values",
            y.len(),
            z.len()
        )));
    }
    let n = y.len() as f64;
    if n < 3.0 {
        return Err(PvarError::TooFewObservations {
            needed: 3,
            available: y.len(),
        });
    }
    let (zc, szz) = instrument_ss(z)?;
    let yc = demeaned(y);
    let coef = dot(&yc, &zc) / szz;
    let resid: Vec<f64> = yc.iter().zip(&zc).map(|(y, z)| y - coef * z).collect();
    match variance {
        Variance::Iid => {
            let s2 = dot(&resid, &resid) / (n - 2.0);
            Ok(Slope {
                coef,
                se: (s2 / szz).sqrt(),
                df: n - 2.0,
            })
        }
        Variance::Cluster(clusters) => {
            if clusters.len() != y.len() {
                return Err(PvarError::DimensionMismatch("cluster ids".into()));
            }
            let sums = cluster_sums(clusters, |r| zc[r] * resid[r]);
            let g = sums.len() as f64;
            if g < 2.0 {
                return Err(PvarError::TooFewObservations {
                    needed: 2,
                    available: sums.len(),
                });
            }
            let meat: f64 = sums.iter().map(|s| s * s).sum::<f64>() * g / (g - 1.0);
            Ok(Slope {
                coef,
                se: meat.sqrt() / szz,
                df: g - 1.0,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstStage {
    pub delta: f64,
    pub se: f64,
    pub ci: (f64, f64),
    pub f_stat: f64,
    /// The F statistic hit [`F_CAP`] (perfect or near-perfect fit).
    pub f_capped: bool,
}

/// Regress the policy residual on the instrument; 95% interval and F.
pub fn first_stage(w: &[f64], z: &[f64], variance: Variance<'_>) -> Result<FirstStage> {
    let s = slope(w, z, variance)?;
    let half = t_quantile(0.975, s.df) * s.se;
    let raw_f = (s.coef / s.se).powi(2);
    let f_capped = !(raw_f < F_CAP);
    Ok(FirstStage {
        delta: s.coef,
        se: s.se,
        ci: (s.coef - half, s.coef + half),
        f_stat: if f_capped { F_CAP } else { raw_f },
        f_capped,
    })
}

/// `rho = cov(Y, Z) / var(Z)`.
pub fn reduced_form(y: &[f64], z: &[f64]) -> Result<f64> {
    if y.len() != z.len() {
        return Err(PvarError::DimensionMismatch("reduced form lengths".into()));
    }
    let (zc, szz) = instrument_ss(z)?;
    Ok(dot(&demeaned(y), &zc) / szz)
}

/// `beta_j = rho_j / delta`.
pub fn iv_ratio(rho: &[f64], delta: f64) -> Result<Vec<f64>> {
    if !(delta.abs() > 1e-12) {
        return Err(PvarError::WeakDenominator { value: delta });
    }
    Ok(rho.iter().map(|r| r / delta).collect())
}

/// Ratio without the absolute tolerance, for callers that already checked
/// the scale-free first-stage correlation.
pub(crate) fn ratio(rho: &[f64], delta: f64) -> Result<Vec<f64>> {
    if delta == 0.0 || !delta.is_finite() {
        return Err(PvarError::WeakDenominator { value: delta });
    }
    Ok(rho.iter().map(|r| r / delta).collect())
}

/// Anderson-Rubin statistic for `H0: beta = beta0`: the squared t statistic
/// of the slope of `Y - beta0 W` on `Z`, asymptotically chi-squared(1).
pub fn ar_statistic_point(
    y: &[f64],
    w: &[f64],
    z: &[f64],
    beta0: f64,
    variance: Variance<'_>,
) -> Result<f64> {
    if y.len() != w.len() {
        return Err(PvarError::DimensionMismatch("AR series lengths".into()));
    }
    let u: Vec<f64> = y.iter().zip(w).map(|(y, w)| y - beta0 * w).collect();
    let s = slope(&u, z, variance)?;
    Ok(if s.coef == 0.0 {
        0.0
    } else if s.se == 0.0 {
        f64::INFINITY
    } else {
        (s.coef / s.se).powi(2)
    })
}

/// First column of the structural impact matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralColumn {
    /// Unit normalization: `(delta, beta_1..beta_J)`. Standardized: the
    /// impact of a one standard deviation shock on every variable.
    pub r_col: Vec<f64>,
    /// `(delta, rho_1..rho_J)`: projections of the residuals on `Z`.
    pub gamma: Vec<f64>,
    pub normalization: Normalization,
}

impl StructuralColumn {
    pub fn unit(delta: f64, rho: &[f64]) -> Result<Self> {
        let beta = ratio(rho, delta)?;
        let mut r_col = vec![delta];
        r_col.extend(beta);
        let mut gamma = vec![delta];
        gamma.extend_from_slice(rho);
        Ok(Self {
            r_col,
            gamma,
            normalization: Normalization::Unit,
        })
    }

    /// Impact direction scaled so the policy variable moves by one unit.
    pub fn unit_impact(&self) -> Vec<f64> {
        let d = self.gamma[0];
        self.gamma.iter().map(|g| g / d).collect()
    }
}

/// Scale for a one standard deviation shock from the partition of the
/// residual covariance (policy first). Returns `c` with
/// `r_col = c .* (delta, rho)`.
pub fn standardized_shock_scale(
    sigma: &DMatrix<f64>,
    delta: f64,
    rho: &[f64],
) -> Result<(Vec<f64>, StructuralColumn)> {
    let j = rho.len();
    if sigma.nrows() != j + 1 || sigma.ncols() != j + 1 {
        return Err(PvarError::DimensionMismatch(
            "sigma must be (J+1) x (J+1)".into(),
        ));
    }
    let ratio = DVector::from_vec(self::ratio(rho, delta)?);
    let s11 = sigma[(0, 0)];
    let s21 = sigma.view((1, 0), (j, 1)).clone_owned();
    let s22 = sigma.view((1, 1), (j, j)).clone_owned();
    let q = &ratio * ratio.transpose() * s11 - (&s21 * ratio.transpose() + &ratio * s21.transpose())
        + s22;
    let q_inv = q.clone().try_inverse().ok_or(PvarError::SingularQ)?;
    if !q_inv.iter().all(|v| v.is_finite()) {
        return Err(PvarError::SingularQ);
    }
    let gap = &s21 - &ratio * s11;
    let r12_sq = (gap.transpose() * q_inv * &gap)[(0, 0)];
    let r11_sq = s11 - r12_sq;
    if !(r11_sq >= 0.0) {
        return Err(PvarError::NormalizationFailure(r11_sq));
    }
    let r11 = r11_sq.sqrt();
    let c = vec![r11 / delta; j + 1];
    let mut r_col = vec![r11];
    r_col.extend(ratio.iter().map(|b| r11 * b));
    let mut gamma = vec![delta];
    gamma.extend_from_slice(rho);
    Ok((
        c,
        StructuralColumn {
            r_col,
            gamma,
            normalization: Normalization::Standardized,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvEstimate {
    pub delta: f64,
    #[serde(rename = "ci")]
    pub delta_ci: (f64, f64),
    pub delta_se: f64,
    #[serde(rename = "f")]
    pub f_stat: f64,
    pub f_capped: bool,
    pub rho: Vec<f64>,
    pub beta: Vec<f64>,
    /// AR statistic of `H0: beta_j = 0` for each outcome.
    #[serde(rename = "ar")]
    pub ar_stat: Vec<f64>,
    pub shock_scale: Option<Vec<f64>>,
    pub normalization: Normalization,
    pub variance: VarianceMode,
    pub nobs: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IdentifyOptions {
    pub variance: VarianceMode,
    pub normalization: Normalization,
}

#[derive(Debug, Clone)]
pub struct Identification {
    pub estimate: IvEstimate,
    pub column: StructuralColumn,
}

/// Instrument values aligned with the model's pooled residual rows.
pub fn aligned_instrument(model: &PvarModel, z: &InstrumentSeries) -> Result<Vec<f64>> {
    z.pooled_on(&model.unit_ids, &model.time_ids)
}

/// First stage, reduced forms, IV ratios and (optionally) the standardized
/// scale, from a fitted model and an instrument.
pub fn identify(
    model: &PvarModel,
    z: &InstrumentSeries,
    opts: IdentifyOptions,
) -> Result<Identification> {
    let zp = aligned_instrument(model, z)?;
    identify_pooled(model, &zp, opts)
}

pub fn identify_pooled(
    model: &PvarModel,
    z: &[f64],
    opts: IdentifyOptions,
) -> Result<Identification> {
    let clusters = model.clusters();
    let variance = Variance::for_mode(opts.variance, &clusters);
    let w = model.residual_series(0);
    let fs = first_stage(&w, z, variance)?;
    let (zc, szz) = instrument_ss(z)?;
    let corr = fs.delta * (szz / dot(&demeaned(&w), &demeaned(&w))).sqrt();
    if !(corr.abs() > WEAK_DENOMINATOR_TOL) {
        return Err(PvarError::WeakDenominator { value: fs.delta });
    }
    let outcomes: Vec<Vec<f64>> = (1..model.n_vars()).map(|k| model.residual_series(k)).collect();
    let rho: Vec<f64> = outcomes
        .iter()
        .map(|y| dot(&demeaned(y), &zc) / szz)
        .collect();
    let beta = ratio(&rho, fs.delta)?;
    let ar_stat = outcomes
        .iter()
        .map(|y| ar_statistic_point(y, &w, z, 0.0, variance))
        .collect::<Result<Vec<_>>>()?;
    let (column, shock_scale) = match opts.normalization {
        Normalization::Unit => (StructuralColumn::unit(fs.delta, &rho)?, None),
        Normalization::Standardized => {
            let (c, col) = standardized_shock_scale(&model.sigma, fs.delta, &rho)?;
            (col, Some(c))
        }
    };
    Ok(Identification {
        estimate: IvEstimate {
            delta: fs.delta,
            delta_ci: fs.ci,
            delta_se: fs.se,
            f_stat: fs.f_stat,
            f_capped: fs.f_capped,
            rho,
            beta,
            ar_stat,
            shock_scale,
            normalization: opts.normalization,
            variance: opts.variance,
            nobs: z.len(),
        },
        column,
    })
}
