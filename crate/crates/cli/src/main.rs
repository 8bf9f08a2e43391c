//! `pvariv`: lag selection, estimation, impulse responses and Monte Carlo
//! coverage from the command line.
//!
//! Exit codes: 0 success, 2 data or configuration error, 3 numerical failure.

mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pvariv::{
    ar_confidence_set, build_instrument, coverage_experiment, diagnostics::diagnose, fit_pvar,
    growth_transform, identify, irf::write_irf_csv, irf_bands, irf_point, load_csv, select_lag,
    CsvSchema, GrowthSpec, IdentifyOptions, InferenceOptions, InstrumentMode, InstrumentSeries,
    LagSelectionReport, McConfig, Normalization, PanelDataset, PvarError, PvarModel,
    VarianceMode, DEFAULT_SHOCK_SIZE,
};

use config::{Lags, RunConfig, Transform};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Pvar(#[from] PvarError),
    #[error("{0}")]
    Config(String),
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Pvar(e) if !e.is_data_error() => 3,
            _ => 2,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "pvariv", version, about = "Panel VARs identified with an external instrument")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tabulate the lag selection criteria.
    Lagselect(DataArgs),
    /// Fit the model and identify the policy shock.
    Estimate(DataArgs),
    /// Impulse responses with Anderson-Rubin confidence sets.
    Irf(DataArgs),
    /// Monte Carlo coverage experiment.
    Mc(McArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VarianceArg {
    Iid,
    Cluster,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NormalizationArg {
    Unit,
    Standardized,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InstrumentArg {
    Common,
    Share,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// TOML file with defaults for any of these options; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, value_enum)]
    variance: Option<VarianceArg>,
}

#[derive(Args, Debug)]
struct DataArgs {
    #[command(flatten)]
    common: Common,
    /// Panel CSV with `unit` and `time` columns.
    #[arg(long)]
    input: Option<PathBuf>,
    /// `growth` builds k-period growth of spending and output from levels;
    /// `none` reads already transformed variables.
    #[arg(long, value_enum)]
    transform: Option<Transform>,
    #[arg(long)]
    growth_k: Option<usize>,
    /// Spending and output columns, in that order.
    #[arg(long, value_delimiter = ',')]
    vars: Option<Vec<String>>,
    /// Instrument column when `--transform none`.
    #[arg(long)]
    instrument: Option<String>,
    #[arg(long, value_enum)]
    instrument_mode: Option<InstrumentArg>,
    /// Lag order, or `auto` for the MBIC choice up to `--p-max`.
    #[arg(long)]
    lags: Option<Lags>,
    #[arg(long)]
    p_max: Option<usize>,
    #[arg(long, value_enum)]
    normalization: Option<NormalizationArg>,
    /// Shock size: policy-variable units (unit) or standard deviations.
    #[arg(long)]
    shock_size: Option<f64>,
}

#[derive(Args, Debug)]
struct McArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    units: Option<usize>,
    #[arg(long)]
    periods: Option<usize>,
    /// Target concentration parameter of the first stage.
    #[arg(long)]
    concentration: Option<f64>,
}

fn apply_common(cfg: &mut RunConfig, c: &Common) {
    if let Some(v) = &c.out {
        cfg.out = v.clone();
    }
    if let Some(v) = c.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = c.horizon {
        cfg.horizon = v;
    }
    if let Some(v) = c.variance {
        cfg.variance = match v {
            VarianceArg::Iid => VarianceMode::Iid,
            VarianceArg::Cluster => VarianceMode::Cluster,
        };
    }
}

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn data_config(a: &DataArgs) -> CliResult<RunConfig> {
    let mut cfg = load_config(a.common.config.as_deref())?;
    apply_common(&mut cfg, &a.common);
    if let Some(v) = &a.input {
        cfg.input = Some(v.clone());
    }
    if let Some(v) = a.transform {
        cfg.transform = v;
    }
    if let Some(v) = a.growth_k {
        cfg.growth_k = v;
    }
    if let Some(v) = &a.vars {
        cfg.vars = v.clone();
    }
    if let Some(v) = &a.instrument {
        cfg.instrument = Some(v.clone());
    }
    if let Some(v) = a.instrument_mode {
        cfg.instrument_mode = match v {
            InstrumentArg::Common => InstrumentMode::CommonAggregate,
            InstrumentArg::Share => InstrumentMode::ShareWeighted,
        };
    }
    if let Some(v) = a.lags {
        cfg.lags = v;
    }
    if let Some(v) = a.p_max {
        cfg.p_max = v;
    }
    if let Some(v) = a.normalization {
        cfg.normalization = match v {
            NormalizationArg::Unit => Normalization::Unit,
            NormalizationArg::Standardized => Normalization::Standardized,
        };
    }
    if let Some(v) = a.shock_size {
        cfg.shock_size = Some(v);
    }
    cfg.validate().map_err(CliError::Config)?;
    Ok(cfg)
}

/// Write via a temporary file in the same directory, then rename.
fn write_atomic(dir: &Path, name: &str, fill: impl FnOnce(&mut fs::File) -> CliResult<()>) -> CliResult<()> {
    let path = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    let werr = |source| CliError::Write { path: path.display().to_string(), source };
    let mut f = fs::File::create(&tmp).map_err(werr)?;
    fill(&mut f)?;
    f.sync_all().map_err(werr)?;
    fs::rename(&tmp, &path).map_err(werr)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> CliResult<()> {
    write_atomic(dir, name, |f| {
        serde_json::to_writer_pretty(&mut *f, value)
            .map_err(|e| CliError::Pvar(PvarError::Serialization(e.to_string())))?;
        writeln!(f).map_err(|source| CliError::Write { path: name.into(), source })
    })
}

fn prepare_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.display().to_string(), source })
}

fn load_data(cfg: &RunConfig) -> CliResult<(PanelDataset, InstrumentSeries)> {
    let input = cfg
        .input
        .as_ref()
        .ok_or_else(|| CliError::Config("no input file (use --input or `input` in the config)".into()))?;
    let (spend, gdp) = (cfg.vars[0].as_str(), cfg.vars[1].as_str());
    match cfg.transform {
        Transform::Growth => {
            let raw = load_csv(input, &CsvSchema::with_vars(&[spend, gdp]))?;
            let k = cfg.growth_k;
            let ds = growth_transform(
                &raw,
                &[
                    GrowthSpec::new(&format!("{spend}_growth"), spend, gdp, k),
                    GrowthSpec::new(&format!("{gdp}_growth"), gdp, gdp, k),
                ],
            )?;
            let z = build_instrument(&raw, spend, gdp, cfg.instrument_mode, k)?;
            Ok((ds, z))
        }
        Transform::None => {
            let inst = cfg
                .instrument
                .as_deref()
                .ok_or_else(|| CliError::Config("--transform none needs --instrument".into()))?;
            let raw = load_csv(input, &CsvSchema::with_vars(&[spend, gdp, inst]))?;
            let z = InstrumentSeries::from_column(&raw, inst)?;
            Ok((raw.select(&[spend, gdp])?, z))
        }
    }
}

fn choose_lag(cfg: &RunConfig, ds: &PanelDataset) -> CliResult<(usize, Option<LagSelectionReport>)> {
    match cfg.lags {
        Lags::Fixed(p) => Ok((p, None)),
        Lags::Auto => {
            let report = select_lag(ds, cfg.p_max)?;
            log::info!("MBIC selects p = {}", report.best_mbic);
            Ok((report.best_mbic, Some(report)))
        }
    }
}

fn fit(cfg: &RunConfig) -> CliResult<(PvarModel, InstrumentSeries, Option<LagSelectionReport>)> {
    let (ds, z) = load_data(cfg)?;
    let (p, report) = choose_lag(cfg, &ds)?;
    let model = fit_pvar(&ds, p)?;
    if !model.stationary {
        log::warn!("estimated model is not stationary (spectral radius {:.4})", model.spectral_radius);
    }
    Ok((model, z, report))
}

fn write_lag_table(dir: &Path, report: &LagSelectionReport) -> CliResult<()> {
    write_atomic(dir, "lagselect.csv", |f| Ok(report.write_csv(f)?))
}

fn inference_opts(cfg: &RunConfig) -> InferenceOptions {
    InferenceOptions { variance: cfg.variance, ..InferenceOptions::default() }
}

fn run_lagselect(a: &DataArgs) -> CliResult<()> {
    let cfg = data_config(a)?;
    let (ds, _) = load_data(&cfg)?;
    let report = select_lag(&ds, cfg.p_max)?;
    prepare_out(&cfg.out)?;
    write_lag_table(&cfg.out, &report)?;
    println!("p,mbic,maic,mqic");
    for r in &report.rows {
        println!("{},{:.4},{:.4},{:.4}", r.p, r.mbic, r.maic, r.mqic);
    }
    println!("selected: mbic={} maic={} mqic={}", report.best_mbic, report.best_maic, report.best_mqic);
    Ok(())
}

fn run_estimate(a: &DataArgs) -> CliResult<()> {
    let cfg = data_config(a)?;
    let (model, z, report) = fit(&cfg)?;
    let id = identify(&model, &z, IdentifyOptions { variance: cfg.variance, normalization: cfg.normalization })?;
    let est = &id.estimate;
    if est.f_stat < 10.0 {
        log::warn!("weak instrument: first-stage F = {:.2}", est.f_stat);
    }
    let diag = diagnose(&model)?;
    let opts = inference_opts(&cfg);
    let ar_sets = (1..model.n_vars())
        .map(|s| ar_confidence_set(&model, &z, 0, s, cfg.alpha, None, opts))
        .collect::<pvariv::Result<Vec<_>>>()?;

    prepare_out(&cfg.out)?;
    if let Some(r) = &report {
        write_lag_table(&cfg.out, r)?;
    }
    write_json(&cfg.out, "model.json", &model.to_doc())?;
    write_json(&cfg.out, "iv.json", est)?;
    write_json(&cfg.out, "diagnostics.json", &diag)?;
    write_atomic(&cfg.out, "phi.csv", |f| {
        let mut w = csv::Writer::from_writer(f);
        w.write_record(["equation", "lag", "regressor", "coef", "se", "t"]).map_err(csv_err)?;
        let se = model.phi_std_errors();
        for (l, (phi, se)) in model.phi.iter().zip(&se).enumerate() {
            for (i, eq) in model.var_names.iter().enumerate() {
                for (j, reg) in model.var_names.iter().enumerate() {
                    let (c, s) = (phi[(i, j)], se[(i, j)]);
                    w.write_record([eq, &(l + 1).to_string(), reg, &format!("{c:?}"), &format!("{s:?}"), &format!("{:?}", c / s)])
                        .map_err(csv_err)?;
                }
            }
        }
        w.flush().map_err(|source| CliError::Write { path: "phi.csv".into(), source })
    })?;
    write_atomic(&cfg.out, "iv.csv", |f| {
        let mut w = csv::Writer::from_writer(f);
        w.write_record(["outcome", "delta", "delta_ci_lo", "delta_ci_hi", "f", "beta", "ar_stat", "segment", "ar_lo", "ar_hi"])
            .map_err(csv_err)?;
        for (j, set) in ar_sets.iter().enumerate() {
            let head = [
                model.var_names[j + 1].clone(),
                format!("{:?}", est.delta),
                format!("{:?}", est.delta_ci.0),
                format!("{:?}", est.delta_ci.1),
                format!("{:?}", est.f_stat),
                format!("{:?}", est.beta[j]),
                format!("{:?}", est.ar_stat[j]),
            ];
            for (k, (lo, hi)) in set.segments.iter().enumerate() {
                let mut row = head.to_vec();
                row.extend([k.to_string(), format!("{lo:?}"), format!("{hi:?}")]);
                w.write_record(&row).map_err(csv_err)?;
            }
            if set.segments.is_empty() {
                let mut row = head.to_vec();
                row.extend(["0".into(), String::new(), String::new()]);
                w.write_record(&row).map_err(csv_err)?;
            }
        }
        w.flush().map_err(|source| CliError::Write { path: "iv.csv".into(), source })
    })?;

    println!("p = {}, N = {}, observations = {}", model.p, model.n_units(), model.nobs);
    println!("first stage: delta = {:.4} [{:.4}, {:.4}], F = {:.2}", est.delta, est.delta_ci.0, est.delta_ci.1, est.f_stat);
    for (j, set) in ar_sets.iter().enumerate() {
        let segs: Vec<String> = set.segments.iter().map(|(a, b)| format!("[{a:.4}, {b:.4}]")).collect();
        println!(
            "{}: beta = {:.4}, AR(beta=0) = {:.2}, {:.0}% AR set {}",
            model.var_names[j + 1],
            est.beta[j],
            est.ar_stat[j],
            100.0 * (1.0 - cfg.alpha),
            if segs.is_empty() { "empty".into() } else { segs.join(" U ") }
        );
    }
    if !diag.clean {
        log::warn!("residual autocorrelation detected; consider more lags");
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Pvar(PvarError::from(e))
}

fn run_irf(a: &DataArgs) -> CliResult<()> {
    let cfg = data_config(a)?;
    let (model, z, report) = fit(&cfg)?;
    let id = identify(&model, &z, IdentifyOptions { variance: cfg.variance, normalization: cfg.normalization })?;
    let shock = cfg.shock_size.unwrap_or(match cfg.normalization {
        Normalization::Unit => DEFAULT_SHOCK_SIZE,
        Normalization::Standardized => 1.0,
    });
    let irf = irf_point(&model, &id.column, cfg.horizon, shock)?;
    let bands = match cfg.normalization {
        Normalization::Unit => Some(irf_bands(&model, &z, cfg.horizon, cfg.alpha, shock, inference_opts(&cfg))?),
        Normalization::Standardized => {
            log::warn!("confidence sets are only available under the unit normalization; writing point responses");
            None
        }
    };
    prepare_out(&cfg.out)?;
    if let Some(r) = &report {
        write_lag_table(&cfg.out, r)?;
    }
    write_atomic(&cfg.out, "irf.csv", |f| Ok(write_irf_csv(&irf, bands.as_ref(), f)?))?;
    if let Some(b) = &bands {
        write_json(&cfg.out, "bands.json", b)?;
    }
    println!("horizon,{}", irf.var_names.join(","));
    for h in 0..=irf.horizon() {
        let row: Vec<String> = (0..irf.var_names.len()).map(|s| format!("{:.6}", irf.responses[(h, s)])).collect();
        println!("{h},{}", row.join(","));
    }
    Ok(())
}

fn run_mc(a: &McArgs) -> CliResult<()> {
    let mut cfg = load_config(a.common.config.as_deref())?;
    apply_common(&mut cfg, &a.common);
    let mut mc = cfg.mc.take().unwrap_or_else(McConfig::baseline_calibration);
    if let Some(v) = a.common.alpha {
        mc.alpha = v;
    }
    if let Some(v) = a.common.horizon {
        mc.horizon = v;
    }
    if a.common.variance.is_some() {
        mc.variance = cfg.variance;
    }
    if let Some(v) = a.reps {
        mc.reps = v;
    }
    if let Some(v) = a.seed {
        mc.seed = v;
    }
    if let Some(v) = a.units {
        mc.n_units = v;
    }
    if let Some(v) = a.periods {
        mc.n_periods = v;
    }
    if let Some(v) = a.concentration {
        mc.target_concentration = v;
        mc.gamma = None;
    }
    let report = coverage_experiment(&mc)?;
    prepare_out(&cfg.out)?;
    write_atomic(&cfg.out, "mc.csv", |f| Ok(report.write_csv(f)?))?;
    let summary = report.summary_json()?;
    write_atomic(&cfg.out, "mc_summary.json", |f| {
        writeln!(f, "{summary}").map_err(|source| CliError::Write { path: "mc_summary.json".into(), source })
    })?;
    println!(
        "reps = {} (failed {}), gamma = {:.4}, concentration design {:.2} realized {:.2}",
        report.reps, report.failed_reps, report.gamma, report.design_concentration, report.realized_concentration
    );
    println!("horizon,coverage_irf,coverage_cirf,coverage_plugin,frac_unbounded");
    for r in &report.rows {
        println!("{},{:.4},{:.4},{:.4},{:.4}", r.horizon, r.coverage_irf, r.coverage_cirf, r.coverage_plugin, r.frac_unbounded);
    }
    Ok(())
}

fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("PVARIV_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("PVARIV_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| match &cli.command {
        Command::Lagselect(a) => run_lagselect(a),
        Command::Estimate(a) => run_estimate(a),
        Command::Irf(a) => run_irf(a),
        Command::Mc(a) => run_mc(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
