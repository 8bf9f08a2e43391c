#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pvariv::pvar::spectral_radius;
use pvariv::{InstrumentSeries, PanelDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Slope matrices with spectral radius below `max_radius`.
pub fn random_stable_phi(rng: &mut ChaCha8Rng, m: usize, p: usize, max_radius: f64) -> Vec<DMatrix<f64>> {
    loop {
        let phi: Vec<DMatrix<f64>> = (0..p)
            .map(|_| DMatrix::from_fn(m, m, |_, _| rng.random_range(-0.6..0.6) / p as f64))
            .collect();
        if spectral_radius(&phi) < max_radius {
            return phi;
        }
    }
}

/// Lower-triangular impact matrix with a positive diagonal.
pub fn random_impact(rng: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            rng.random_range(0.5..1.5)
        } else if i > j {
            rng.random_range(-0.8..0.8)
        } else {
            0.0
        }
    })
}

pub struct Fixture {
    pub phi: Vec<DMatrix<f64>>,
    pub impact: DMatrix<f64>,
    pub data: PanelDataset,
    pub z: InstrumentSeries,
    /// Structural shocks, `[unit][period]`.
    pub shocks: Vec<Vec<DVector<f64>>>,
}

/// Simulate `x_t = a_i + sum_l Phi_l x_{t-l} + R eta_t` with a 100-period
/// burn-in and an instrument `z = gamma eta_1 + noise`.
pub fn simulate(
    rng: &mut ChaCha8Rng,
    phi: &[DMatrix<f64>],
    impact: &DMatrix<f64>,
    n: usize,
    t: usize,
    gamma: f64,
) -> Fixture {
    let m = impact.nrows();
    let p = phi.len();
    let burn = 100;
    let mut values = Vec::with_capacity(n * t * m);
    let mut z = Vec::with_capacity(n * t);
    let mut shocks = Vec::with_capacity(n);
    for _ in 0..n {
        let a = DVector::from_fn(m, |_, _| 3.0 * normal(rng));
        let mut hist = vec![DVector::zeros(m); p];
        let mut unit_shocks = Vec::with_capacity(t);
        for s in 0..burn + t {
            let eta = DVector::from_fn(m, |_, _| normal(rng));
            let mut x = &a + impact * &eta;
            for l in 0..p {
                x += &phi[l] * &hist[p - 1 - l];
            }
            let noise = normal(rng);
            if s >= burn {
                values.extend(x.iter().copied());
                z.push(gamma * eta[0] + noise);
                unit_shocks.push(eta);
            }
            hist.remove(0);
            hist.push(x);
        }
        shocks.push(unit_shocks);
    }
    let units: Vec<String> = (0..n).map(|i| format!("u{i:02}")).collect();
    let times: Vec<i64> = (0..t as i64).map(|s| 2000 + s).collect();
    let names: Vec<String> = (0..m).map(|k| format!("v{k}")).collect();
    Fixture {
        phi: phi.to_vec(),
        impact: impact.clone(),
        data: PanelDataset::new(units.clone(), times.clone(), names, values).unwrap(),
        z: InstrumentSeries::new(units, times, z).unwrap(),
        shocks,
    }
}

/// A random stable fixture with `m` variables and `p` lags.
pub fn random_fixture(seed: u64, m: usize, p: usize, n: usize, t: usize, gamma: f64) -> Fixture {
    let mut r = rng(seed);
    let phi = random_stable_phi(&mut r, m, p, 0.9);
    let impact = random_impact(&mut r, m);
    simulate(&mut r, &phi, &impact, n, t, gamma)
}

/// OLS with an intercept by explicit normal equations: `(intercept, slopes)`.
pub fn ols_with_intercept(y: &[f64], xs: &[&[f64]]) -> (f64, Vec<f64>) {
    let n = y.len();
    let k = xs.len() + 1;
    let x = DMatrix::from_fn(n, k, |r, c| if c == 0 { 1.0 } else { xs[c - 1][r] });
    let yv = DVector::from_column_slice(y);
    let coef = (x.transpose() * &x)
        .lu()
        .solve(&(x.transpose() * yv))
        .expect("oracle normal equations");
    (coef[0], coef.iter().skip(1).copied().collect())
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}
