//! Anderson-Rubin confidence sets for impulse responses, by test inversion.
//!
//! For a candidate response `lambda0` at horizon `h` of variable `s` the
//! statistic is
//!
//! ```text
//! G(lambda0) = e_s' M_h(Phi) Gamma - lambda0 e_1' Gamma
//! AR(lambda0) = n G^2 / sigma^2(lambda0)
//! ```
//!
//! where `Gamma = E[x~ Z]` stacks the covariances of the reduced-form
//! residuals with the instrument (policy first), `M_h` is `C_h` for point
//! responses or `C_0 + .. + C_h` for cumulative ones, and `sigma^2` is the
//! delta-method variance over the joint limit of the slope estimates and
//! `Gamma`. `lambda0` is accepted when `AR <= chi2_1(1 - alpha)`.
//!
//! Since `G` is linear in `lambda0`, `sigma^2(lambda0)` is a quadratic and is
//! stored by its three coefficients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PvarError, Result};
use crate::exec::Exec;
use crate::irf::{cumulative_ma, ma_coefficients};
use crate::iv::{first_stage, instrument_ss, Variance, VarianceMode};
use crate::linalg::dot;
use crate::panel::InstrumentSeries;
use crate::pvar::PvarModel;
use crate::stats::{chi2_quantile, normal_quantile};

/// Points in the default inversion grid.
pub const DEFAULT_GRID_POINTS: usize = 2001;
/// Default grid half-width in Wald standard errors.
pub const DEFAULT_GRID_HALF_WIDTH: f64 = 20.0;
/// Each expansion multiplies the half-width by this factor.
pub const GRID_EXPANSION: f64 = 4.0;
pub const MAX_GRID_EXPANSIONS: usize = 3;
/// First-stage F below which plug-in sets carry a weak-instrument warning.
pub const WEAK_F_THRESHOLD: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Point,
    Cumulative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMethod {
    /// Forward differences with step `1e-6 (1 + |phi|)`.
    #[default]
    FiniteDifference,
    /// Product-rule recursion on `C_k = sum_l Phi_l C_{k-l}`.
    Exact,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct InferenceOptions {
    pub variance: VarianceMode,
    pub derivative: DerivativeMethod,
    pub exec: Exec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub n_points: usize,
}

impl GridSpec {
    fn point(&self, i: usize) -> f64 {
        if i + 1 == self.n_points {
            return self.hi;
        }
        self.lo + (self.hi - self.lo) * i as f64 / (self.n_points - 1) as f64
    }

    fn validate(&self) -> Result<()> {
        if self.n_points < 2 || !(self.lo < self.hi) || !self.lo.is_finite() || !self.hi.is_finite()
        {
            return Err(PvarError::InvalidConfig(format!("bad grid {self:?}")));
        }
        Ok(())
    }
}

/// Union of disjoint, ordered intervals. Bounds may be infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSet {
    pub level: f64,
    pub segments: Vec<(f64, f64)>,
    pub unbounded: bool,
    /// The test rejected every grid point although the grid covered the
    /// point estimate.
    pub empty_on_grid: bool,
    /// Plug-in sets only: first-stage F below [`WEAK_F_THRESHOLD`].
    pub weak_warning: bool,
    pub grid: Option<GridSpec>,
}

impl ConfidenceSet {
    pub fn point(level: f64, value: f64) -> Self {
        Self {
            level,
            segments: vec![(value, value)],
            unbounded: false,
            empty_on_grid: false,
            weak_warning: false,
            grid: None,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.segments.iter().any(|(lo, hi)| *lo <= x && x <= *hi)
    }

    /// Total length; infinite for unbounded sets.
    pub fn width(&self) -> f64 {
        self.segments.iter().map(|(lo, hi)| hi - lo).sum()
    }

    /// Multiply every bound by `k` (e.g. to express unit-shock sets for a
    /// shock of size `k`).
    pub fn scaled(&self, k: f64) -> Self {
        let mut segments: Vec<(f64, f64)> = self
            .segments
            .iter()
            .map(|(lo, hi)| {
                let (a, b) = (lo * k, hi * k);
                if a <= b {
                    (a, b)
                } else {
                    (b, a)
                }
            })
            .collect();
        segments.sort_by(|x, y| x.0.total_cmp(&y.0));
        Self {
            segments,
            grid: None,
            ..self.clone()
        }
    }
}

/// Everything the AR and plug-in sets need from a fitted model and an
/// instrument: slope matrices, `Gamma`, the joint asymptotic covariance of
/// `(vec B, Gamma)` and the MA terms with their derivatives.
#[derive(Debug, Clone)]
pub struct IrfMoments {
    pub n: usize,
    pub m: usize,
    pub gamma: DVector<f64>,
    /// Asymptotic covariance of `sqrt(n) (vec B, Gamma)`; `vec B` stacks the
    /// equations, each over regressors ordered (lag, variable).
    pub cov: DMatrix<f64>,
    pub first_stage_f: f64,
    ma: Vec<DMatrix<f64>>,
    cum: Vec<DMatrix<f64>>,
    /// `[q][h]`: derivative of `C_h` with respect to slope parameter `q`.
    dma: Vec<Vec<DMatrix<f64>>>,
    dcum: Vec<Vec<DMatrix<f64>>>,
}

/// Index of `phi[l][(eq, j)]` in `vec B`.
fn slope_index(m: usize, p: usize, eq: usize, l: usize, j: usize) -> usize {
    eq * m * p + l * m + j
}

fn ma_derivatives_fd(phi: &[DMatrix<f64>], horizon: usize) -> Vec<Vec<DMatrix<f64>>> {
    let (p, m) = (phi.len(), phi[0].nrows());
    let base = ma_coefficients(phi, horizon);
    let mut out = vec![Vec::new(); m * m * p];
    for eq in 0..m {
        for l in 0..p {
            for j in 0..m {
                let mut bumped = phi.to_vec();
                let step = 1e-6 * (1.0 + phi[l][(eq, j)].abs());
                bumped[l][(eq, j)] += step;
                let shifted = ma_coefficients(&bumped, horizon);
                out[slope_index(m, p, eq, l, j)] = shifted
                    .iter()
                    .zip(&base)
                    .map(|(a, b)| (a - b) / step)
                    .collect();
            }
        }
    }
    out
}

/// Exact derivatives: `dC_k = sum_l (dPhi_l C_{k-l} + Phi_l dC_{k-l})`.
pub fn ma_derivatives_exact(phi: &[DMatrix<f64>], horizon: usize) -> Vec<Vec<DMatrix<f64>>> {
    let (p, m) = (phi.len(), phi[0].nrows());
    let base = ma_coefficients(phi, horizon);
    let mut out = vec![Vec::new(); m * m * p];
    for eq in 0..m {
        for lag in 0..p {
            for j in 0..m {
                let mut d: Vec<DMatrix<f64>> = vec![DMatrix::zeros(m, m)];
                for k in 1..=horizon {
                    let mut dk = DMatrix::zeros(m, m);
                    for (l, f) in phi.iter().enumerate() {
                        if k < l + 1 {
                            break;
                        }
                        let prev = k - l - 1;
                        if l == lag {
                            // dPhi_l = E_{eq,j}: row eq gains row j of C_prev
                            let row = base[prev].row(j).clone_owned();
                            let mut r = dk.row_mut(eq);
                            r += row;
                        }
                        dk += f * &d[prev];
                    }
                    d.push(dk);
                }
                out[slope_index(m, p, eq, lag, j)] = d;
            }
        }
    }
    out
}

fn cumulate(d: &[Vec<DMatrix<f64>>]) -> Vec<Vec<DMatrix<f64>>> {
    d.iter().map(|seq| cumulative_ma(seq)).collect()
}

impl IrfMoments {
    pub fn new(
        model: &PvarModel,
        z: &[f64],
        horizon: usize,
        opts: InferenceOptions,
    ) -> Result<Self> {
        let (n, m, p) = (model.nobs, model.n_vars(), model.p);
        if z.len() != n {
            return Err(PvarError::DimensionMismatch(format!(
                "instrument has {} values for {n} residual rows",
                z.len()
            )));
        }
        let (zc, szz) = instrument_ss(z)?;
        let nf = n as f64;
        let gamma = DVector::from_fn(m, |k, _| {
            dot(model.residuals.column(k).as_slice(), &zc) / nf
        });
        // residuals of each reduced-form residual on the instrument
        let proj: Vec<f64> = (0..m).map(|k| gamma[k] * nf / szz).collect();
        let e = DMatrix::from_fn(n, m, |r, k| model.residuals[(r, k)] - proj[k] * zc[r]);

        let nb = m * m * p;
        let dim = nb + m;
        let mut cov = DMatrix::zeros(dim, dim);
        match opts.variance {
            VarianceMode::Iid => {
                let q_inv = &model.xtx_inv * nf;
                for a in 0..m {
                    for b in 0..m {
                        let s = model.sigma[(a, b)];
                        let mut block = cov.view_mut((a * m * p, b * m * p), (m * p, m * p));
                        block.copy_from(&(&q_inv * s));
                    }
                }
                let omega = e.transpose() * &e / (nf - 2.0);
                let vz = szz / nf;
                cov.view_mut((nb, nb), (m, m)).copy_from(&(omega * vz));
            }
            VarianceMode::Cluster => {
                let clusters = model.clusters();
                let q_inv = &model.xtx_inv * nf;
                let lead = &model.design * &q_inv; // row r: (Q^{-1} x_r)'
                let g = model.n_units();
                let mut sums = DMatrix::zeros(g, dim);
                for (r, &c) in clusters.iter().enumerate() {
                    for eq in 0..m {
                        let eps = model.residuals[(r, eq)];
                        for reg in 0..m * p {
                            sums[(c, eq * m * p + reg)] += lead[(r, reg)] * eps;
                        }
                    }
                    for k in 0..m {
                        sums[(c, nb + k)] += e[(r, k)] * zc[r];
                    }
                }
                let gf = g as f64;
                cov = sums.transpose() * &sums / nf * (gf / (gf - 1.0));
            }
        }

        let clusters = model.clusters();
        let fs = first_stage(
            model.residuals.column(0).as_slice(),
            z,
            Variance::for_mode(opts.variance, &clusters),
        )?;

        let ma = ma_coefficients(&model.phi, horizon);
        let dma = match opts.derivative {
            DerivativeMethod::FiniteDifference => ma_derivatives_fd(&model.phi, horizon),
            DerivativeMethod::Exact => ma_derivatives_exact(&model.phi, horizon),
        };
        Ok(Self {
            n,
            m,
            gamma,
            cov,
            first_stage_f: fs.f_stat,
            cum: cumulative_ma(&ma),
            dcum: cumulate(&dma),
            ma,
            dma,
        })
    }

    pub fn horizon(&self) -> usize {
        self.ma.len() - 1
    }

    /// The scalar inference problem for one response.
    pub fn problem(&self, h: usize, s: usize, target: Target) -> ArProblem {
        let (mats, derivs) = match target {
            Target::Point => (&self.ma, &self.dma),
            Target::Cumulative => (&self.cum, &self.dcum),
        };
        let resp = &mats[h];
        let row = resp.row(s).transpose();
        let c = row.dot(&self.gamma);
        let d = self.gamma[0];
        let nb = derivs.len();
        let mut g0 = DVector::zeros(nb + self.m);
        for (q, dq) in derivs.iter().enumerate() {
            g0[q] = dq[h].row(s).transpose().dot(&self.gamma);
        }
        g0.rows_mut(nb, self.m).copy_from(&row);
        let mut e1 = DVector::zeros(nb + self.m);
        e1[nb] = 1.0;
        let vg = &self.cov * &g0;
        let ve = &self.cov * &e1;
        ArProblem {
            n: self.n,
            c,
            d,
            var0: g0.dot(&vg),
            var1: g0.dot(&ve),
            var2: e1.dot(&ve),
            first_stage_f: self.first_stage_f,
            degenerate_policy_impact: h == 0 && s == 0,
        }
    }
}

/// `AR(lambda0) = n (c - lambda0 d)^2 / (var0 - 2 lambda0 var1 + lambda0^2 var2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArProblem {
    pub n: usize,
    pub c: f64,
    pub d: f64,
    pub var0: f64,
    pub var1: f64,
    pub var2: f64,
    pub first_stage_f: f64,
    /// Own impact of the policy variable, fixed at one by normalization.
    pub degenerate_policy_impact: bool,
}

impl ArProblem {
    /// Plug-in estimate `c / d`.
    pub fn estimate(&self) -> f64 {
        self.c / self.d
    }

    /// Asymptotic variance of `sqrt(n) G(lambda0)`.
    pub fn variance(&self, lambda0: f64) -> f64 {
        (self.var0 - 2.0 * lambda0 * self.var1 + lambda0 * lambda0 * self.var2).max(0.0)
    }

    pub fn statistic(&self, lambda0: f64) -> f64 {
        let g = self.c - lambda0 * self.d;
        let v = self.variance(lambda0);
        if g == 0.0 {
            0.0
        } else if v == 0.0 {
            f64::INFINITY
        } else {
            self.n as f64 * g * g / v
        }
    }

    pub fn accepts(&self, lambda0: f64, critical: f64) -> bool {
        self.statistic(lambda0) <= critical
    }

    /// Delta-method standard error of the plug-in estimate.
    pub fn wald_se(&self) -> f64 {
        (self.variance(self.estimate()) / self.n as f64).sqrt() / self.d.abs()
    }

    pub fn default_grid(&self) -> GridSpec {
        let est = self.estimate();
        let se = self.wald_se();
        let (center, half) = if est.is_finite() && se.is_finite() && se > 0.0 {
            (est, DEFAULT_GRID_HALF_WIDTH * se)
        } else if est.is_finite() {
            (est, DEFAULT_GRID_HALF_WIDTH * (1.0 + est.abs()))
        } else {
            (0.0, 1e4)
        };
        GridSpec {
            lo: center - half,
            hi: center + half,
            n_points: DEFAULT_GRID_POINTS,
        }
    }

    /// Invert the AR test over `grid` (the default grid, with expansion,
    /// when `None`).
    pub fn ar_set(&self, alpha: f64, grid: Option<GridSpec>, exec: Exec) -> Result<ConfidenceSet> {
        check_alpha(alpha)?;
        let level = 1.0 - alpha;
        if self.degenerate_policy_impact {
            return Ok(ConfidenceSet::point(level, 1.0));
        }
        let crit = chi2_quantile(level, 1.0);
        let custom = grid.is_some();
        let mut spec = grid.unwrap_or_else(|| self.default_grid());
        spec.validate()?;
        let mut expansions = 0;
        let (points, accepted) = loop {
            let points = self.grid_points(&spec);
            let acc = exec.map_range(points.len(), |i| self.accepts(points[i], crit));
            let edge = acc[0] || acc[acc.len() - 1];
            if custom || !edge || expansions == MAX_GRID_EXPANSIONS {
                break (points, acc);
            }
            let center = 0.5 * (spec.lo + spec.hi);
            let half = 0.5 * (spec.hi - spec.lo) * GRID_EXPANSION;
            spec.lo = center - half;
            spec.hi = center + half;
            expansions += 1;
        };

        let last = points.len() - 1;
        let mut segments = Vec::new();
        let mut i = 0;
        while i <= last {
            if !accepted[i] {
                i += 1;
                continue;
            }
            let start = i;
            while i < last && accepted[i + 1] {
                i += 1;
            }
            let lo = if start == 0 {
                f64::NEG_INFINITY
            } else {
                self.boundary(points[start - 1], points[start], crit)
            };
            let hi = if i == last {
                f64::INFINITY
            } else {
                self.boundary(points[i + 1], points[i], crit)
            };
            segments.push((lo, hi));
            i += 1;
        }

        let mut empty_on_grid = false;
        if segments.is_empty() {
            let est = self.estimate();
            if custom && !(spec.lo <= est && est <= spec.hi) {
                return Err(PvarError::GridInsufficient(format!(
                    "no grid point accepted on [{}, {}] and the estimate {est} lies outside",
                    spec.lo, spec.hi
                )));
            }
            empty_on_grid = true;
        }
        let unbounded = segments
            .iter()
            .any(|(lo, hi)| lo.is_infinite() || hi.is_infinite());
        Ok(ConfidenceSet {
            level,
            segments,
            unbounded,
            empty_on_grid,
            weak_warning: false,
            grid: Some(spec),
        })
    }

    /// Stationary points of the statistic: the zero at the estimate and the
    /// maximum at `(c var1 - d var0) / (c var2 - d var1)`.
    pub fn stationary_points(&self) -> Vec<f64> {
        let argmax = (self.c * self.var1 - self.d * self.var0)
            / (self.c * self.var2 - self.d * self.var1);
        [self.estimate(), argmax]
            .into_iter()
            .filter(|v| v.is_finite())
            .collect()
    }

    /// Uniform grid plus any stationary points inside it, so a rejection
    /// region narrower than the grid spacing is never skipped.
    fn grid_points(&self, spec: &GridSpec) -> Vec<f64> {
        let mut pts: Vec<f64> = (0..spec.n_points).map(|i| spec.point(i)).collect();
        pts.extend(
            self.stationary_points()
                .into_iter()
                .filter(|v| spec.lo < *v && *v < spec.hi),
        );
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// Bisect between a rejected and an accepted point.
    fn boundary(&self, mut rejected: f64, mut accepted: f64, crit: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (rejected + accepted);
            if mid == rejected || mid == accepted {
                break;
            }
            if self.accepts(mid, crit) {
                accepted = mid;
            } else {
                rejected = mid;
            }
        }
        accepted
    }

    /// Wald interval `estimate +/- z_{1-alpha/2} se`.
    pub fn plug_in_set(&self, alpha: f64) -> Result<ConfidenceSet> {
        check_alpha(alpha)?;
        let level = 1.0 - alpha;
        if self.degenerate_policy_impact {
            return Ok(ConfidenceSet::point(level, 1.0));
        }
        let est = self.estimate();
        let se = self.wald_se();
        let half = normal_quantile(1.0 - alpha / 2.0) * se;
        let mut set = if se == 0.0 {
            ConfidenceSet::point(level, est)
        } else {
            ConfidenceSet {
                level,
                segments: vec![(est - half, est + half)],
                unbounded: false,
                empty_on_grid: false,
                weak_warning: false,
                grid: None,
            }
        };
        set.weak_warning = self.first_stage_f < WEAK_F_THRESHOLD;
        Ok(set)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PvarError::InvalidConfig(format!("alpha {alpha} not in (0, 1)")));
    }
    Ok(())
}

fn moments_for(
    model: &PvarModel,
    z: &InstrumentSeries,
    h: usize,
    opts: InferenceOptions,
) -> Result<IrfMoments> {
    let zp = z.pooled_on(&model.unit_ids, &model.time_ids)?;
    IrfMoments::new(model, &zp, h, opts)
}

fn check_variable(model: &PvarModel, s: usize) -> Result<()> {
    if s >= model.n_vars() {
        return Err(PvarError::InvalidConfig(format!("no variable {s}")));
    }
    Ok(())
}

/// Delta-method variance of `sqrt(n) G(lambda0)` for the point response of
/// variable `s` at horizon `h`.
pub fn variance_lambda(
    model: &PvarModel,
    z: &InstrumentSeries,
    h: usize,
    s: usize,
    lambda0: f64,
    opts: InferenceOptions,
) -> Result<f64> {
    check_variable(model, s)?;
    let v = moments_for(model, z, h, opts)?
        .problem(h, s, Target::Point)
        .variance(lambda0);
    if !v.is_finite() {
        return Err(PvarError::SingularCovariance(format!("variance {v}")));
    }
    Ok(v)
}

/// AR confidence set for the unit-shock response of variable `s` at
/// horizon `h`.
pub fn ar_confidence_set(
    model: &PvarModel,
    z: &InstrumentSeries,
    h: usize,
    s: usize,
    alpha: f64,
    grid: Option<GridSpec>,
    opts: InferenceOptions,
) -> Result<ConfidenceSet> {
    check_variable(model, s)?;
    moments_for(model, z, h, opts)?
        .problem(h, s, Target::Point)
        .ar_set(alpha, grid, opts.exec)
}

pub fn plug_in_confidence_set(
    model: &PvarModel,
    z: &InstrumentSeries,
    h: usize,
    s: usize,
    alpha: f64,
    opts: InferenceOptions,
) -> Result<ConfidenceSet> {
    check_variable(model, s)?;
    moments_for(model, z, h, opts)?
        .problem(h, s, Target::Point)
        .plug_in_set(alpha)
}

/// AR sets for every horizon and variable, point and cumulative, scaled to
/// a shock of `shock_size`.
pub fn irf_bands(
    model: &PvarModel,
    z: &InstrumentSeries,
    horizon: usize,
    alpha: f64,
    shock_size: f64,
    opts: InferenceOptions,
) -> Result<crate::irf::IrfBands> {
    let moments = moments_for(model, z, horizon, opts)?;
    let mut bands = crate::irf::IrfBands::default();
    for h in 0..=horizon {
        let mut point = Vec::with_capacity(model.n_vars());
        let mut cum = Vec::with_capacity(model.n_vars());
        for s in 0..model.n_vars() {
            point.push(
                moments
                    .problem(h, s, Target::Point)
                    .ar_set(alpha, None, opts.exec)?
                    .scaled(shock_size),
            );
            let cum_problem = ArProblem {
                degenerate_policy_impact: false,
                ..moments.problem(h, s, Target::Cumulative)
            };
            let cum_set = if h == 0 && s == 0 {
                ConfidenceSet::point(1.0 - alpha, 1.0)
            } else {
                cum_problem.ar_set(alpha, None, opts.exec)?
            };
            cum.push(cum_set.scaled(shock_size));
        }
        bands.point.push(point);
        bands.cumulative.push(cum);
    }
    Ok(bands)
}
