//! Fixed-effects panel VAR estimated by the within (LSDV) transformation.
//!
//! Each unit's dependent vector and lag block are demeaned over that unit's
//! estimation sample, then every equation is fit by pooled OLS on the
//! demeaned lags. The within estimator carries the usual Nickell bias of
//! order 1/T; no bias correction is applied.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PvarError, Result};
use crate::linalg::{matrix_from_rows, ols, rows_to_vec};
use crate::panel::PanelDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Divide the residual cross-product by `n - m p` instead of `n`.
    pub dof_correction: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            dof_correction: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PvarModel {
    pub p: usize,
    pub var_names: Vec<String>,
    pub unit_ids: Vec<String>,
    /// Periods covered by the residuals (the last `T - p` of the input).
    pub time_ids: Vec<i64>,
    /// Slope matrices, `phi[l]` multiplies `x_{t-l-1}`.
    pub phi: Vec<DMatrix<f64>>,
    /// Per-unit intercepts of the within regression.
    pub intercepts: Vec<DVector<f64>>,
    /// Fixed effects `mu_i` with `intercept_i = (I - sum phi) mu_i`; absent
    /// when `I - sum phi` is singular.
    pub mu: Option<Vec<DVector<f64>>>,
    pub sigma: DMatrix<f64>,
    /// Pooled residuals, one row per (unit, period), unit-major.
    pub residuals: DMatrix<f64>,
    /// Demeaned lag design, rows aligned with `residuals`.
    pub design: DMatrix<f64>,
    /// `(X'X)^{-1}` of the demeaned design.
    pub xtx_inv: DMatrix<f64>,
    pub nobs: usize,
    pub dof: usize,
    pub spectral_radius: f64,
    pub stationary: bool,
}

impl PvarModel {
    pub fn n_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn periods_per_unit(&self) -> usize {
        self.time_ids.len()
    }

    /// Residual of variable `k` for unit `i` at residual period `s`.
    pub fn residual(&self, i: usize, s: usize, k: usize) -> f64 {
        self.residuals[(i * self.periods_per_unit() + s, k)]
    }

    /// Pooled residual series of one variable.
    pub fn residual_series(&self, k: usize) -> Vec<f64> {
        self.residuals.column(k).iter().copied().collect()
    }

    /// Unit index of each pooled row.
    pub fn clusters(&self) -> Vec<usize> {
        let t = self.periods_per_unit();
        (0..self.nobs).map(|r| r / t).collect()
    }

    pub fn companion(&self) -> DMatrix<f64> {
        companion_matrix(&self.phi)
    }

    /// Homoskedastic standard errors of the slope entries, `se[l][(k, j)]`
    /// for the coefficient of lag `l+1` of variable `j` in equation `k`.
    pub fn phi_std_errors(&self) -> Vec<DMatrix<f64>> {
        let m = self.n_vars();
        (0..self.p)
            .map(|l| {
                DMatrix::from_fn(m, m, |k, j| {
                    let r = l * m + j;
                    (self.sigma[(k, k)] * self.xtx_inv[(r, r)]).sqrt()
                })
            })
            .collect()
    }

    pub fn to_doc(&self) -> PvarModelDoc {
        PvarModelDoc {
            p: self.p,
            var_names: self.var_names.clone(),
            unit_ids: self.unit_ids.clone(),
            phi: self.phi.iter().map(rows_to_vec).collect(),
            sigma: rows_to_vec(&self.sigma),
            mu: self
                .mu
                .as_ref()
                .map(|mu| mu.iter().map(|v| v.iter().copied().collect()).collect()),
            nobs: self.nobs,
            spectral_radius: self.spectral_radius,
            stationary: self.stationary,
        }
    }
}

/// JSON form of a fitted model. Matrices are row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvarModelDoc {
    pub p: usize,
    pub var_names: Vec<String>,
    pub unit_ids: Vec<String>,
    pub phi: Vec<Vec<Vec<f64>>>,
    pub sigma: Vec<Vec<f64>>,
    pub mu: Option<Vec<Vec<f64>>>,
    pub nobs: usize,
    pub spectral_radius: f64,
    pub stationary: bool,
}

impl PvarModelDoc {
    pub fn phi_matrices(&self) -> Result<Vec<DMatrix<f64>>> {
        self.phi.iter().map(|rows| matrix_from_rows(rows)).collect()
    }

    pub fn sigma_matrix(&self) -> Result<DMatrix<f64>> {
        matrix_from_rows(&self.sigma)
    }
}

/// `[phi_1 .. phi_p]` on top, identity blocks on the subdiagonal.
pub fn companion_matrix(phi: &[DMatrix<f64>]) -> DMatrix<f64> {
    let p = phi.len();
    let m = phi.first().map_or(0, |f| f.nrows());
    let mut c = DMatrix::zeros(m * p, m * p);
    for (l, f) in phi.iter().enumerate() {
        c.view_mut((0, l * m), (m, m)).copy_from(f);
    }
    for l in 1..p {
        c.view_mut((l * m, (l - 1) * m), (m, m))
            .copy_from(&DMatrix::identity(m, m));
    }
    c
}

pub fn spectral_radius(phi: &[DMatrix<f64>]) -> f64 {
    let c = companion_matrix(phi);
    if c.nrows() == 0 {
        return 0.0;
    }
    c.complex_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

pub fn fit_pvar(ds: &PanelDataset, p: usize) -> Result<PvarModel> {
    fit_pvar_with(ds, p, FitOptions::default())
}

pub fn fit_pvar_with(ds: &PanelDataset, p: usize, opts: FitOptions) -> Result<PvarModel> {
    fit_on_sample(ds, p, p, opts)
}

/// Fit using dependent periods `start..T` (`start >= p`), so that models of
/// different order can share one estimation sample.
pub(crate) fn fit_on_sample(
    ds: &PanelDataset,
    p: usize,
    start: usize,
    opts: FitOptions,
) -> Result<PvarModel> {
    if p == 0 {
        return Err(PvarError::InvalidConfig("lag order must be positive".into()));
    }
    let (n_units, t_all, m) = (ds.n_units(), ds.n_periods(), ds.n_vars());
    if n_units < 2 {
        return Err(PvarError::TooFewObservations {
            needed: 2,
            available: n_units,
        });
    }
    let start = start.max(p);
    let needed = start + m * p + 2;
    if t_all < needed {
        return Err(PvarError::TooFewPeriods {
            needed,
            available: t_all,
        });
    }
    let t_eff = t_all - start;
    let n = n_units * t_eff;
    let k = m * p;

    let mut y = DMatrix::zeros(n, m);
    let mut x = DMatrix::zeros(n, k);
    let mut y_means = Vec::with_capacity(n_units);
    let mut x_means = Vec::with_capacity(n_units);
    for i in 0..n_units {
        let rows = i * t_eff..(i + 1) * t_eff;
        for (r, s) in rows.clone().zip(start..t_all) {
            for v in 0..m {
                y[(r, v)] = ds.get(i, s, v);
            }
            for l in 0..p {
                for v in 0..m {
                    x[(r, l * m + v)] = ds.get(i, s - l - 1, v);
                }
            }
        }
        let ym = y.rows(i * t_eff, t_eff).row_mean();
        let xm = x.rows(i * t_eff, t_eff).row_mean();
        for r in rows {
            for v in 0..m {
                y[(r, v)] -= ym[v];
            }
            for c in 0..k {
                x[(r, c)] -= xm[c];
            }
        }
        y_means.push(ym.transpose());
        x_means.push(xm.transpose());
    }

    let (b, xtx_inv) = ols(&x, &y)?;
    let residuals = &y - &x * &b;
    let dof = if opts.dof_correction { n - k } else { n };
    let sigma = {
        let s = residuals.transpose() * &residuals / dof as f64;
        (&s + s.transpose()) * 0.5
    };
    // equation k's coefficients are column k of b
    let phi: Vec<DMatrix<f64>> = (0..p)
        .map(|l| DMatrix::from_fn(m, m, |eq, v| b[(l * m + v, eq)]))
        .collect();

    let intercepts: Vec<DVector<f64>> = y_means
        .iter()
        .zip(&x_means)
        .map(|(ym, xm)| {
            let mut a = ym.clone();
            for (l, f) in phi.iter().enumerate() {
                a -= f * xm.rows(l * m, m);
            }
            a
        })
        .collect();
    let long_run = phi
        .iter()
        .fold(DMatrix::identity(m, m), |acc, f| acc - f);
    let mu = long_run
        .lu()
        .try_inverse()
        .map(|inv| intercepts.iter().map(|a| &inv * a).collect());

    let radius = spectral_radius(&phi);
    Ok(PvarModel {
        p,
        var_names: ds.var_names().to_vec(),
        unit_ids: ds.unit_ids().to_vec(),
        time_ids: ds.time_ids()[start..].to_vec(),
        phi,
        intercepts,
        mu,
        sigma,
        residuals,
        design: x,
        xtx_inv,
        nobs: n,
        dof,
        spectral_radius: radius,
        stationary: radius < 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_panel(series: [&[f64]; 2]) -> PanelDataset {
        let t = series[0].len();
        PanelDataset::from_fn(
            vec!["a".into(), "b".into()],
            (0..t as i64).collect(),
            vec!["x".into()],
            |i, s, _| series[i][s],
        )
        .unwrap()
    }

    #[test]
    fn hand_solvable_scalar_panel() {
        // unit a: 1,2,4,3 ; unit b: 0,1,0,2
        let ds = scalar_panel([&[1.0, 2.0, 4.0, 3.0], &[0.0, 1.0, 0.0, 2.0]]);
        let model = fit_pvar(&ds, 1).unwrap();
        // demeaned pairs (lag, current):
        // a: lags (1,2,4) mean 7/3, current (2,4,3) mean 3
        // b: lags (0,1,0) mean 1/3, current (1,0,2) mean 1
        let xa = [1.0 - 7.0 / 3.0, 2.0 - 7.0 / 3.0, 4.0 - 7.0 / 3.0];
        let ya = [-1.0, 1.0, 0.0];
        let xb = [-1.0 / 3.0, 2.0 / 3.0, -1.0 / 3.0];
        let yb = [0.0, -1.0, 1.0];
        let sxy: f64 = xa.iter().zip(&ya).chain(xb.iter().zip(&yb)).map(|(a, b)| a * b).sum();
        let sxx: f64 = xa.iter().chain(&xb).map(|a| a * a).sum();
        let phi = sxy / sxx;
        assert!((model.phi[0][(0, 0)] - phi).abs() < 1e-12);
        let ssr: f64 = xa
            .iter()
            .zip(&ya)
            .chain(xb.iter().zip(&yb))
            .map(|(x, y)| (y - phi * x).powi(2))
            .sum();
        assert!((model.sigma[(0, 0)] - ssr / 5.0).abs() < 1e-12);
        assert_eq!(model.nobs, 6);
        assert_eq!(model.time_ids, vec![1, 2, 3]);
    }

    #[test]
    fn residuals_are_mean_zero_per_unit() {
        let ds = scalar_panel([&[1.0, 2.0, 4.0, 3.0, 5.0], &[0.0, 1.0, 0.0, 2.0, 2.5]]);
        let model = fit_pvar(&ds, 1).unwrap();
        for i in 0..2 {
            let mean: f64 = (0..4).map(|s| model.residual(i, s, 0)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-14);
        }
    }

    #[test]
    fn too_few_periods_and_singular_design() {
        let ds = scalar_panel([&[1.0, 2.0, 3.0], &[0.0, 1.0, 0.5]]);
        assert!(matches!(fit_pvar(&ds, 1), Err(PvarError::TooFewPeriods { .. })));
        let flat = scalar_panel([&[1.0; 6], &[2.0; 6]]);
        assert!(matches!(fit_pvar(&flat, 1), Err(PvarError::SingularDesign(_))));
    }

    #[test]
    fn companion_layout_and_radius() {
        let phi = vec![
            DMatrix::from_row_slice(1, 1, &[0.5]),
            DMatrix::from_row_slice(1, 1, &[0.2]),
        ];
        let c = companion_matrix(&phi);
        assert_eq!(c, DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 1.0, 0.0]));
        // roots of z^2 - 0.5 z - 0.2
        let expected = (0.5 + (0.25_f64 + 0.8).sqrt()) / 2.0;
        assert!((spectral_radius(&phi) - expected).abs() < 1e-12);
    }

    #[test]
    fn model_doc_round_trips_through_json() {
        let ds = scalar_panel([&[1.0, 2.0, 4.0, 3.0, 5.0], &[0.0, 1.0, 0.0, 2.0, 2.5]]);
        let doc = fit_pvar(&ds, 1).unwrap().to_doc();
        let text = serde_json::to_string(&doc).unwrap();
        assert!(text.contains("\"phi\"") && text.contains("\"sigma\""));
        let back: PvarModelDoc = serde_json::from_str(&text).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.phi_matrices().unwrap()[0].nrows(), 1);
    }
}
