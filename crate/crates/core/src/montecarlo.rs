//! Coverage study for the AR confidence sets on simulated panels.
//!
//! Each replication draws a panel from a structural VAR with unit fixed
//! effects, builds an external instrument, refits the model and records
//! whether the AR (and plug-in) sets contain the true responses.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{PvarError, Result};
use crate::exec::Exec;
use crate::inference::{ConfidenceSet, InferenceOptions, IrfMoments, Target};
use crate::irf::{cumulative_ma, ma_coefficients};
use crate::iv::VarianceMode;
use crate::panel::{InstrumentSeries, PanelDataset};
use crate::pvar::{fit_pvar, spectral_radius};

/// What the instrument loads on besides its own noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstrumentLoading {
    /// The policy shock's contribution to the policy residual, `R11 eta_1`.
    #[default]
    PolicyShock,
    /// The full reduced-form policy residual. Only a valid instrument when
    /// the other shocks do not move the policy variable on impact.
    ReducedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    #[serde(alias = "N")]
    pub n_units: usize,
    #[serde(alias = "T")]
    pub n_periods: usize,
    /// Slope matrices by lag, each row-major.
    pub phi: Vec<Vec<Vec<f64>>>,
    pub sigma: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub mu_z: f64,
    /// Standard deviation of the instrument noise.
    pub sigma_z: f64,
    /// Instrument loading. When absent it is solved from
    /// `target_concentration`.
    pub gamma: Option<f64>,
    pub target_concentration: f64,
    pub loading: InstrumentLoading,
    #[serde(alias = "H")]
    pub horizon: usize,
    pub reps: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Outcome whose responses are scored.
    pub response_var: usize,
    pub burn_in: usize,
    pub allow_nonstationary: bool,
    pub variance: VarianceMode,
    pub exec: Exec,
}

impl Default for McConfig {
    fn default() -> Self {
        Self::baseline_calibration()
    }
}

impl McConfig {
    /// Ten units over 39 periods with the bivariate (policy, output)
    /// estimates as the data generating process.
    pub fn baseline_calibration() -> Self {
        Self {
            n_units: 10,
            n_periods: 39,
            phi: vec![vec![vec![-0.10, -0.03], vec![0.80, 0.34]]],
            sigma: vec![vec![1.0e-4, -1.95e-4], vec![-1.95e-4, 9.0e-4]],
            b: vec![1.0, 1.0],
            mu_z: 0.0,
            sigma_z: 0.005,
            gamma: None,
            target_concentration: 204.0,
            loading: InstrumentLoading::PolicyShock,
            horizon: 10,
            reps: 2000,
            alpha: 0.05,
            seed: 20240501,
            response_var: 1,
            burn_in: 200,
            allow_nonstationary: false,
            variance: VarianceMode::Iid,
            exec: Exec::default(),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| PvarError::InvalidConfig(e.to_string()))
    }

    pub fn phi_matrices(&self) -> Result<Vec<DMatrix<f64>>> {
        let m = self.sigma.len();
        if self.phi.is_empty() {
            return Err(PvarError::InvalidConfig("phi needs at least one lag".into()));
        }
        self.phi.iter().map(|rows| square(rows, m, "phi")).collect()
    }

    pub fn sigma_matrix(&self) -> Result<DMatrix<f64>> {
        square(&self.sigma, self.sigma.len(), "sigma")
    }

    /// Pooled observations per replication after losing `p` initial periods.
    pub fn effective_nobs(&self) -> usize {
        self.n_units * self.n_periods.saturating_sub(self.phi.len())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PvarError::InvalidConfig(msg));
        let m = self.sigma.len();
        if m < 1 || self.b.len() != m {
            return bad(format!("b has {} entries for {m} variables", self.b.len()));
        }
        self.phi_matrices()?;
        if self.reps < 1 {
            return bad("reps must be at least 1".into());
        }
        if self.n_units < 2 {
            return bad("need at least two units".into());
        }
        if self.response_var >= m {
            return bad(format!("response_var {} out of range", self.response_var));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} not in (0, 1)", self.alpha));
        }
        if !(self.sigma_z >= 0.0) || !self.mu_z.is_finite() {
            return bad("instrument noise must be finite and non-negative".into());
        }
        if self.gamma.is_none() && !(self.target_concentration >= 0.0) {
            return bad("target_concentration must be non-negative".into());
        }
        Ok(())
    }
}

fn square(rows: &[Vec<f64>], m: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != m || rows.iter().any(|r| r.len() != m) {
        return Err(PvarError::InvalidConfig(format!("{what} must be {m} x {m}")));
    }
    Ok(DMatrix::from_fn(m, m, |i, j| rows[i][j]))
}

/// Structural data generating process.
#[derive(Debug, Clone, PartialEq)]
pub struct Dgp {
    pub phi: Vec<DMatrix<f64>>,
    pub sigma: DMatrix<f64>,
    /// Impact matrix with `R R' = Sigma`; column 0 is the identified shock.
    pub r: DMatrix<f64>,
}

impl Dgp {
    pub fn n_vars(&self) -> usize {
        self.sigma.nrows()
    }

    /// True responses to a unit policy impact, `(H+1) x m`.
    pub fn true_irf(&self, horizon: usize) -> DMatrix<f64> {
        let ma = ma_coefficients(&self.phi, horizon);
        responses(&ma, &self.r)
    }

    pub fn true_cumulative_irf(&self, horizon: usize) -> DMatrix<f64> {
        let ma = cumulative_ma(&ma_coefficients(&self.phi, horizon));
        responses(&ma, &self.r)
    }
}

fn responses(ma: &[DMatrix<f64>], r: &DMatrix<f64>) -> DMatrix<f64> {
    let col = r.column(0) / r[(0, 0)];
    let m = r.nrows();
    DMatrix::from_fn(ma.len(), m, |h, s| ma[h].row(s).dot(&col.transpose()))
}

/// Impact matrix whose first column is `b / sqrt(b' Sigma^{-1} b)`, the
/// unique scaling that admits a completion with `R R' = Sigma`.
///
/// The whitened column `L^{-1} b` is completed to an orthonormal basis by a
/// Householder reflection and colored by the Cholesky factor `L`.
pub fn build_dgp(phi: Vec<DMatrix<f64>>, sigma: DMatrix<f64>, b: &[f64]) -> Result<Dgp> {
    let m = sigma.nrows();
    if b.len() != m || phi.iter().any(|f| f.shape() != (m, m)) {
        return Err(PvarError::DimensionMismatch(
            "phi, sigma and b disagree on the number of variables".into(),
        ));
    }
    let chol = sigma.clone().cholesky().ok_or_else(|| {
        PvarError::FactorizationError("sigma is not positive definite".into())
    })?;
    let l = chol.l();
    let bv = DVector::from_column_slice(b);
    let w = l
        .solve_lower_triangular(&bv)
        .ok_or_else(|| PvarError::FactorizationError("triangular solve failed".into()))?;
    let norm = w.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(PvarError::FactorizationError("b must be non-zero".into()));
    }
    let w = w / norm;
    let mut v = -w.clone();
    v[0] += 1.0;
    let vv = v.dot(&v);
    let q = if vv < 1e-28 {
        DMatrix::identity(m, m)
    } else {
        DMatrix::identity(m, m) - (&v * v.transpose()) * (2.0 / vv)
    };
    let r = &l * q;
    Ok(Dgp { phi, sigma, r })
}

/// Instrument loading that gives population concentration `mu2` with `n`
/// pooled observations.
pub fn gamma_for_concentration(dgp: &Dgp, cfg: &McConfig, mu2: f64, n: usize) -> Result<f64> {
    let r11 = dgp.r[(0, 0)];
    let s11 = dgp.sigma[(0, 0)];
    let share = mu2 / (n as f64 + mu2);
    // cov(W, Z) = gamma kappa and var(Z) = gamma^2 v + sigma_z^2; the first
    // stage R^2 must equal `share`
    let (kappa, v) = match cfg.loading {
        InstrumentLoading::PolicyShock => (r11 * r11, r11 * r11),
        InstrumentLoading::ReducedForm => (s11, s11),
    };
    let denom = kappa * kappa - share * v * s11;
    if !(denom > 0.0) {
        return Err(PvarError::InvalidConfig(format!(
            "concentration {mu2} is not attainable"
        )));
    }
    Ok((share * s11 * cfg.sigma_z * cfg.sigma_z / denom).sqrt())
}

/// Population concentration `n R^2 / (1 - R^2)` of the first stage.
pub fn population_concentration(dgp: &Dgp, cfg: &McConfig, gamma: f64, n: usize) -> f64 {
    let r11 = dgp.r[(0, 0)];
    let s11 = dgp.sigma[(0, 0)];
    let (cov, var_load) = match cfg.loading {
        InstrumentLoading::PolicyShock => (gamma * r11 * r11, gamma * gamma * r11 * r11),
        InstrumentLoading::ReducedForm => (gamma * s11, gamma * gamma * s11),
    };
    let var_z = var_load + cfg.sigma_z * cfg.sigma_z;
    if var_z == 0.0 {
        return 0.0;
    }
    let r2 = cov * cov / (var_z * s11);
    if r2 >= 1.0 {
        return f64::INFINITY;
    }
    n as f64 * r2 / (1.0 - r2)
}

/// RNG for one replication: the master seed on stream `rep`.
pub fn rep_rng(master: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(rep);
    rng
}

fn normals(rng: &mut ChaCha8Rng, k: usize) -> DVector<f64> {
    DVector::from_fn(k, |_, _| StandardNormal.sample(rng))
}

/// Draw one panel and its instrument. Fixed effects are standard normal
/// intercepts; each unit starts at its mean and runs `burn_in` periods
/// before the `n_periods` that are kept.
pub fn simulate_panel(
    dgp: &Dgp,
    cfg: &McConfig,
    gamma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(PanelDataset, InstrumentSeries)> {
    let m = dgp.n_vars();
    let p = dgp.phi.len();
    let (n, t) = (cfg.n_units, cfg.n_periods);
    let sum_phi = dgp.phi.iter().fold(DMatrix::zeros(m, m), |a, f| a + f);
    let lr = DMatrix::identity(m, m) - sum_phi;
    let lr_inv = lr.try_inverse();

    let mut values = Vec::with_capacity(n * t * m);
    let mut z = Vec::with_capacity(n * t);
    for _ in 0..n {
        let a = normals(rng, m);
        let start = match &lr_inv {
            Some(inv) => inv * &a,
            None => DVector::zeros(m),
        };
        let mut hist: Vec<DVector<f64>> = vec![start; p];
        for s in 0..cfg.burn_in + t {
            let eta = normals(rng, m);
            let e = &dgp.r * &eta;
            let mut x = &a + &e;
            for (l, f) in dgp.phi.iter().enumerate() {
                x += f * &hist[hist.len() - 1 - l];
            }
            let nu: f64 = StandardNormal.sample(rng);
            if s >= cfg.burn_in {
                values.extend(x.iter().copied());
                let load = match cfg.loading {
                    InstrumentLoading::PolicyShock => dgp.r[(0, 0)] * eta[0],
                    InstrumentLoading::ReducedForm => e[0],
                };
                z.push(cfg.mu_z + gamma * load + cfg.sigma_z * nu);
            }
            hist.remove(0);
            hist.push(x);
        }
    }
    let units: Vec<String> = (1..=n).map(|i| i.to_string()).collect();
    let times: Vec<i64> = (1..=t as i64).collect();
    let names: Vec<String> = (0..m).map(|k| format!("x{k}")).collect();
    let ds = PanelDataset::new(units.clone(), times.clone(), names, values)?;
    let inst = InstrumentSeries::new(units, times, z)?;
    Ok((ds, inst))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub horizon: usize,
    pub coverage_irf: f64,
    pub coverage_cirf: f64,
    /// Mean AR-set width over bounded sets.
    pub mean_width: f64,
    pub frac_unbounded: f64,
    pub coverage_plugin: f64,
    pub coverage_plugin_cirf: f64,
    pub mean_width_cirf: f64,
    pub frac_unbounded_cirf: f64,
    pub true_irf: f64,
    pub true_cirf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub rows: Vec<McRow>,
    pub reps: usize,
    pub failed_reps: usize,
    pub gamma: f64,
    pub design_concentration: f64,
    /// Mean first-stage F minus one across successful replications, floored
    /// at zero.
    pub realized_concentration: f64,
    pub impact_column: Vec<f64>,
    pub config: McConfig,
}

impl McReport {
    pub fn row(&self, h: usize) -> &McRow {
        &self.rows[h]
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| PvarError::Io {
            path: "<mc csv>".into(),
            source: e,
        })?;
        Ok(())
    }

    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            reps: usize,
            failed_reps: usize,
            gamma: f64,
            design_concentration: f64,
            realized_concentration: f64,
            impact_column: &'a [f64],
            config: &'a McConfig,
        }
        Ok(serde_json::to_string_pretty(&Summary {
            reps: self.reps,
            failed_reps: self.failed_reps,
            gamma: self.gamma,
            design_concentration: self.design_concentration,
            realized_concentration: self.realized_concentration,
            impact_column: &self.impact_column,
            config: &self.config,
        })?)
    }
}

/// One replication's containment record, `[h]` per field.
#[derive(Debug, Clone, PartialEq)]
pub struct RepOutcome {
    pub first_stage_f: f64,
    pub ar: Vec<SetOutcome>,
    pub ar_cum: Vec<SetOutcome>,
    pub plugin: Vec<bool>,
    pub plugin_cum: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetOutcome {
    pub covers: bool,
    pub width: f64,
    pub unbounded: bool,
}

impl SetOutcome {
    fn of(set: &ConfidenceSet, truth: f64) -> Self {
        Self {
            covers: set.contains(truth),
            width: set.width(),
            unbounded: set.unbounded,
        }
    }
}

/// Simulate, refit and score one replication.
pub fn run_replication(
    dgp: &Dgp,
    cfg: &McConfig,
    gamma: f64,
    rep: u64,
    truth: &DMatrix<f64>,
    truth_cum: &DMatrix<f64>,
) -> Result<RepOutcome> {
    let mut rng = rep_rng(cfg.seed, rep);
    let (ds, inst) = simulate_panel(dgp, cfg, gamma, &mut rng)?;
    let model = fit_pvar(&ds, dgp.phi.len())?;
    let z = inst.pooled_on(&model.unit_ids, &model.time_ids)?;
    let opts = InferenceOptions {
        variance: cfg.variance,
        exec: Exec::Sequential,
        ..Default::default()
    };
    let moments = IrfMoments::new(&model, &z, cfg.horizon, opts)?;
    let s = cfg.response_var;
    let mut out = RepOutcome {
        first_stage_f: moments.first_stage_f,
        ar: Vec::new(),
        ar_cum: Vec::new(),
        plugin: Vec::new(),
        plugin_cum: Vec::new(),
    };
    for h in 0..=cfg.horizon {
        for (target, t) in [(Target::Point, truth), (Target::Cumulative, truth_cum)] {
            let problem = moments.problem(h, s, target);
            let ar = problem.ar_set(cfg.alpha, None, Exec::Sequential)?;
            let plug = problem.plug_in_set(cfg.alpha)?;
            let truth = t[(h, s)];
            match target {
                Target::Point => {
                    out.ar.push(SetOutcome::of(&ar, truth));
                    out.plugin.push(plug.contains(truth));
                }
                Target::Cumulative => {
                    out.ar_cum.push(SetOutcome::of(&ar, truth));
                    out.plugin_cum.push(plug.contains(truth));
                }
            }
        }
    }
    Ok(out)
}

/// Resolved DGP and instrument loading for a configuration.
pub fn prepare(cfg: &McConfig) -> Result<(Dgp, f64)> {
    cfg.validate()?;
    let dgp = build_dgp(cfg.phi_matrices()?, cfg.sigma_matrix()?, &cfg.b)?;
    let rho = spectral_radius(&dgp.phi);
    if rho >= 1.0 && !cfg.allow_nonstationary {
        return Err(PvarError::Nonstationary(rho));
    }
    let gamma = match cfg.gamma {
        Some(g) => g,
        None => gamma_for_concentration(&dgp, cfg, cfg.target_concentration, cfg.effective_nobs())?,
    };
    Ok((dgp, gamma))
}

pub fn coverage_experiment(cfg: &McConfig) -> Result<McReport> {
    let (dgp, gamma) = prepare(cfg)?;
    let truth = dgp.true_irf(cfg.horizon);
    let truth_cum = dgp.true_cumulative_irf(cfg.horizon);
    let outcomes = cfg.exec.map_range(cfg.reps, |rep| {
        run_replication(&dgp, cfg, gamma, rep as u64, &truth, &truth_cum)
    });

    let mut ok = Vec::with_capacity(outcomes.len());
    let mut failed = 0;
    for (rep, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(o) => ok.push(o),
            Err(e) => {
                log::warn!("replication {rep} failed: {e}");
                failed += 1;
            }
        }
    }
    if ok.is_empty() {
        return Err(PvarError::InvalidConfig("every replication failed".into()));
    }
    if failed * 100 >= cfg.reps {
        log::warn!("{failed} of {} replications failed", cfg.reps);
    }

    let k = ok.len() as f64;
    let frac = |f: &dyn Fn(&RepOutcome) -> bool| ok.iter().filter(|o| f(o)).count() as f64 / k;
    let mean_bounded = |sets: &dyn Fn(&RepOutcome) -> SetOutcome| {
        let (sum, cnt) = ok.iter().map(sets).filter(|s| !s.unbounded).fold(
            (0.0, 0usize),
            |(a, c), s| (a + s.width, c + 1),
        );
        if cnt == 0 {
            f64::NAN
        } else {
            sum / cnt as f64
        }
    };
    let s = cfg.response_var;
    let rows = (0..=cfg.horizon)
        .map(|h| McRow {
            horizon: h,
            coverage_irf: frac(&|o| o.ar[h].covers),
            coverage_cirf: frac(&|o| o.ar_cum[h].covers),
            mean_width: mean_bounded(&|o| o.ar[h]),
            frac_unbounded: frac(&|o| o.ar[h].unbounded),
            coverage_plugin: frac(&|o| o.plugin[h]),
            coverage_plugin_cirf: frac(&|o| o.plugin_cum[h]),
            mean_width_cirf: mean_bounded(&|o| o.ar_cum[h]),
            frac_unbounded_cirf: frac(&|o| o.ar_cum[h].unbounded),
            true_irf: truth[(h, s)],
            true_cirf: truth_cum[(h, s)],
        })
        .collect();
    // E[F] is about 1 + mu^2 with one instrument
    let realized = (ok.iter().map(|o| o.first_stage_f).sum::<f64>() / k - 1.0).max(0.0);
    Ok(McReport {
        rows,
        reps: cfg.reps,
        failed_reps: failed,
        gamma,
        design_concentration: population_concentration(&dgp, cfg, gamma, cfg.effective_nobs()),
        realized_concentration: realized,
        impact_column: dgp.r.column(0).iter().copied().collect(),
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_sigma_equal_b() {
        let dgp = build_dgp(vec![DMatrix::zeros(2, 2)], DMatrix::identity(2, 2), &[1.0, 1.0])
            .unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((dgp.r[(0, 0)] - h).abs() < 1e-15);
        assert!((dgp.r[(1, 0)] - h).abs() < 1e-15);
        assert!((dgp.true_irf(0)[(0, 1)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn reconstruction_holds() {
        let cfg = McConfig::baseline_calibration();
        let dgp = build_dgp(cfg.phi_matrices().unwrap(), cfg.sigma_matrix().unwrap(), &cfg.b)
            .unwrap();
        let err = (&dgp.r * dgp.r.transpose() - &dgp.sigma).abs().max();
        assert!(err < 1e-15, "{err}");
        // first column proportional to b
        assert!((dgp.r[(0, 0)] - dgp.r[(1, 0)]).abs() < 1e-15);
    }

    #[test]
    fn gamma_inverts_concentration() {
        let cfg = McConfig::baseline_calibration();
        let (dgp, gamma) = prepare(&cfg).unwrap();
        let mu2 = population_concentration(&dgp, &cfg, gamma, cfg.effective_nobs());
        assert!((mu2 - 204.0).abs() < 1e-8, "{mu2}");
        let lit = McConfig {
            loading: InstrumentLoading::ReducedForm,
            ..cfg
        };
        let g = gamma_for_concentration(&dgp, &lit, 50.0, 380).unwrap();
        assert!((population_concentration(&dgp, &lit, g, 380) - 50.0).abs() < 1e-8);
    }

    #[test]
    fn streams_do_not_depend_on_rep_count() {
        use rand::RngCore;
        let a: Vec<u64> = (0..3).map(|_| rep_rng(7, 5).next_u64()).collect();
        assert!(a.iter().all(|v| *v == a[0]));
        assert_ne!(rep_rng(7, 5).next_u64(), rep_rng(7, 6).next_u64());
    }

    #[test]
    fn config_round_trips_and_rejects_unknown_fields() {
        let cfg = McConfig::baseline_calibration();
        let back = McConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, back);
        let partial = McConfig::from_json(r#"{"N": 4, "reps": 3}"#).unwrap();
        assert_eq!((partial.n_units, partial.reps), (4, 3));
        assert!(McConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn nonstationary_dgp_is_rejected_unless_allowed() {
        let mut cfg = McConfig::baseline_calibration();
        cfg.phi = vec![vec![vec![1.01, 0.0], vec![0.0, 0.5]]];
        assert!(matches!(prepare(&cfg), Err(PvarError::Nonstationary(_))));
        cfg.allow_nonstationary = true;
        assert!(prepare(&cfg).is_ok());
    }
}
