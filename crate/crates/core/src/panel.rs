//! Balanced panel storage, CSV ingestion, growth transforms and the
//! aggregate (Bartik-type) instrument.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PvarError, Result};

/// Balanced N x T x m panel. Values are stored unit-major, then time, then
/// variable.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    unit_ids: Vec<String>,
    time_ids: Vec<i64>,
    var_names: Vec<String>,
    values: Vec<f64>,
}

impl PanelDataset {
    pub fn new(
        unit_ids: Vec<String>,
        time_ids: Vec<i64>,
        var_names: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let (n, t, m) = (unit_ids.len(), time_ids.len(), var_names.len());
        if n == 0 || t == 0 || m == 0 {
            return Err(PvarError::InvalidConfig("empty panel".into()));
        }
        if values.len() != n * t * m {
            return Err(PvarError::DimensionMismatch(format!(
                "expected {} values for {n}x{t}x{m}, got {}",
                n * t * m,
                values.len()
            )));
        }
        if time_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PvarError::InvalidConfig(
                "time ids must be strictly increasing".into(),
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (i, rest) = (pos / (t * m), pos % (t * m));
            return Err(PvarError::UnbalancedPanel(format!(
                "non-finite value for unit `{}` at time {} in `{}`",
                unit_ids[i],
                time_ids[rest / m],
                var_names[rest % m]
            )));
        }
        Ok(Self {
            unit_ids,
            time_ids,
            var_names,
            values,
        })
    }

    /// Build from a closure over (unit, period, variable) indices.
    pub fn from_fn(
        unit_ids: Vec<String>,
        time_ids: Vec<i64>,
        var_names: Vec<String>,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let (n, t, m) = (unit_ids.len(), time_ids.len(), var_names.len());
        let mut values = Vec::with_capacity(n * t * m);
        for i in 0..n {
            for s in 0..t {
                for k in 0..m {
                    values.push(f(i, s, k));
                }
            }
        }
        Self::new(unit_ids, time_ids, var_names, values)
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn n_periods(&self) -> usize {
        self.time_ids.len()
    }

    pub fn n_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn time_ids(&self) -> &[i64] {
        &self.time_ids
    }

    pub fn var_names(&self) -> &[String] {
        &self.var_names
    }

    #[inline]
    pub fn get(&self, unit: usize, period: usize, var: usize) -> f64 {
        self.values[(unit * self.time_ids.len() + period) * self.var_names.len() + var]
    }

    /// Observation vector of one unit at one period.
    pub fn row(&self, unit: usize, period: usize) -> &[f64] {
        let m = self.var_names.len();
        let start = (unit * self.time_ids.len() + period) * m;
        &self.values[start..start + m]
    }

    pub fn var_index(&self, name: &str) -> Result<usize> {
        self.var_names
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| PvarError::MissingColumn(name.to_string()))
    }

    /// Time series of one variable for one unit.
    pub fn series(&self, unit: usize, var: usize) -> Vec<f64> {
        (0..self.n_periods()).map(|s| self.get(unit, s, var)).collect()
    }

    /// Keep (and reorder) the named variables.
    pub fn select(&self, names: &[&str]) -> Result<Self> {
        let idx = names
            .iter()
            .map(|n| self.var_index(n))
            .collect::<Result<Vec<_>>>()?;
        Self::from_fn(
            self.unit_ids.clone(),
            self.time_ids.clone(),
            names.iter().map(|s| s.to_string()).collect(),
            |i, s, k| self.get(i, s, idx[k]),
        )
    }

    /// Drop the first `k` periods.
    pub fn drop_leading(&self, k: usize) -> Result<Self> {
        if k >= self.n_periods() {
            return Err(PvarError::TooFewPeriods {
                needed: k + 1,
                available: self.n_periods(),
            });
        }
        Self::from_fn(
            self.unit_ids.clone(),
            self.time_ids[k..].to_vec(),
            self.var_names.clone(),
            |i, s, v| self.get(i, s + k, v),
        )
    }

    /// Long-format CSV: `unit,time,<var>...`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["unit".to_string(), "time".to_string()];
        header.extend(self.var_names.iter().cloned());
        w.write_record(&header)?;
        for (i, unit) in self.unit_ids.iter().enumerate() {
            for (s, time) in self.time_ids.iter().enumerate() {
                let mut rec = vec![unit.clone(), time.to_string()];
                rec.extend(self.row(i, s).iter().map(|v| format!("{v:?}")));
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| PvarError::Io {
            path: "<csv writer>".into(),
            source: e,
        })
    }
}

/// Which CSV columns hold the unit label, the (integer) period and each
/// variable. An empty `vars` list means every remaining column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub unit: String,
    pub time: String,
    /// `(dataset name, csv column)` pairs, in output order.
    pub vars: Vec<(String, String)>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            unit: "unit".into(),
            time: "time".into(),
            vars: Vec::new(),
        }
    }
}

impl CsvSchema {
    pub fn with_vars(names: &[&str]) -> Self {
        Self {
            vars: names
                .iter()
                .map(|n| (n.to_string(), n.to_string()))
                .collect(),
            ..Self::default()
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<PanelDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| PvarError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    read_csv(file, schema)
}

/// Natural ordering for unit labels: numeric when both parse as integers.
fn unit_order(a: &str, b: &str) -> Ordering {
    match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.cmp(b),
    }
}

pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PvarError::MissingColumn(name.to_string()))
    };
    let unit_col = col(&schema.unit)?;
    let time_col = col(&schema.time)?;
    let vars: Vec<(String, usize)> = if schema.vars.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != unit_col && *i != time_col)
            .map(|(i, h)| (h.to_string(), i))
            .collect()
    } else {
        schema
            .vars
            .iter()
            .map(|(name, c)| Ok((name.clone(), col(c)?)))
            .collect::<Result<_>>()?
    };
    if vars.is_empty() {
        return Err(PvarError::InvalidConfig("no variable columns".into()));
    }

    let mut cells: HashMap<(String, i64), Vec<f64>> = HashMap::new();
    let mut units = BTreeSet::new();
    let mut times = BTreeSet::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let unit = rec.get(unit_col).unwrap_or("").to_string();
        let time_raw = rec.get(time_col).unwrap_or("");
        let time: i64 = time_raw.parse().map_err(|_| PvarError::ParseError {
            line,
            message: format!("time `{time_raw}` is not an integer"),
        })?;
        let mut obs = Vec::with_capacity(vars.len());
        for (name, c) in &vars {
            let raw = rec.get(*c).unwrap_or("");
            if raw.is_empty() {
                return Err(PvarError::UnbalancedPanel(format!(
                    "empty `{name}` for unit `{unit}` at time {time}"
                )));
            }
            let v: f64 = raw.parse().map_err(|_| PvarError::ParseError {
                line,
                message: format!("`{raw}` in column `{name}` is not numeric"),
            })?;
            obs.push(v);
        }
        if cells.insert((unit.clone(), time), obs).is_some() {
            return Err(PvarError::DuplicateKey { unit, time });
        }
        units.insert(unit);
        times.insert(time);
    }

    let mut unit_ids: Vec<String> = units.into_iter().collect();
    unit_ids.sort_by(|a, b| unit_order(a, b));
    let time_ids: Vec<i64> = times.into_iter().collect();
    let m = vars.len();
    let mut values = Vec::with_capacity(unit_ids.len() * time_ids.len() * m);
    for u in &unit_ids {
        for t in &time_ids {
            let obs = cells.get(&(u.clone(), *t)).ok_or_else(|| {
                PvarError::UnbalancedPanel(format!("no row for unit `{u}` at time {t}"))
            })?;
            values.extend_from_slice(obs);
        }
    }
    PanelDataset::new(
        unit_ids,
        time_ids,
        vars.into_iter().map(|(n, _)| n).collect(),
        values,
    )
}

/// One output variable `(num_t - num_{t-k}) / den_{t-k}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthSpec {
    pub name: String,
    pub numerator: String,
    pub denominator: String,
    pub horizon_k: usize,
}

impl GrowthSpec {
    pub fn new(name: &str, numerator: &str, denominator: &str, horizon_k: usize) -> Self {
        Self {
            name: name.into(),
            numerator: numerator.into(),
            denominator: denominator.into(),
            horizon_k,
        }
    }
}

/// Apply the growth specs; the result has `T - k` periods.
pub fn growth_transform(ds: &PanelDataset, specs: &[GrowthSpec]) -> Result<PanelDataset> {
    let k = match specs.first() {
        Some(s) => s.horizon_k,
        None => return Err(PvarError::InvalidConfig("no growth specs".into())),
    };
    if k == 0 || specs.iter().any(|s| s.horizon_k != k) {
        return Err(PvarError::InvalidConfig(
            "all growth specs must share one positive horizon".into(),
        ));
    }
    if ds.n_periods() <= k {
        return Err(PvarError::TooFewPeriods {
            needed: k + 1,
            available: ds.n_periods(),
        });
    }
    let cols = specs
        .iter()
        .map(|s| Ok((ds.var_index(&s.numerator)?, ds.var_index(&s.denominator)?)))
        .collect::<Result<Vec<_>>>()?;
    for (spec, &(_, den)) in specs.iter().zip(&cols) {
        for i in 0..ds.n_units() {
            for s in 0..ds.n_periods() - k {
                if ds.get(i, s, den) <= 0.0 {
                    return Err(PvarError::DegenerateDenominator {
                        var: spec.denominator.clone(),
                        unit: ds.unit_ids[i].clone(),
                        time: ds.time_ids[s],
                    });
                }
            }
        }
    }
    PanelDataset::from_fn(
        ds.unit_ids.clone(),
        ds.time_ids[k..].to_vec(),
        specs.iter().map(|s| s.name.clone()).collect(),
        |i, s, v| {
            let (num, den) = cols[v];
            (ds.get(i, s + k, num) - ds.get(i, s, num)) / ds.get(i, s, den)
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstrumentMode {
    /// National growth of the spending aggregate, identical across units.
    #[default]
    CommonAggregate,
    /// National growth scaled by each unit's sample-mean spending share.
    ShareWeighted,
}

/// Instrument values on an N x T grid aligned to a panel's labels.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentSeries {
    unit_ids: Vec<String>,
    time_ids: Vec<i64>,
    values: Vec<f64>,
    pub mode: Option<InstrumentMode>,
}

impl InstrumentSeries {
    pub fn new(unit_ids: Vec<String>, time_ids: Vec<i64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != unit_ids.len() * time_ids.len() {
            return Err(PvarError::DimensionMismatch(
                "instrument values do not match N x T".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PvarError::InvalidConfig("non-finite instrument value".into()));
        }
        Ok(Self {
            unit_ids,
            time_ids,
            values,
            mode: None,
        })
    }

    /// Use one column of an already transformed panel as the instrument.
    pub fn from_column(ds: &PanelDataset, var: &str) -> Result<Self> {
        let k = ds.var_index(var)?;
        let values = (0..ds.n_units())
            .flat_map(|i| (0..ds.n_periods()).map(move |s| (i, s)))
            .map(|(i, s)| ds.get(i, s, k))
            .collect();
        Self::new(ds.unit_ids.clone(), ds.time_ids.clone(), values)
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn time_ids(&self) -> &[i64] {
        &self.time_ids
    }

    pub fn get(&self, unit: usize, period: usize) -> f64 {
        self.values[unit * self.time_ids.len() + period]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Pooled (unit-major) values on the given time ids, one block per unit.
    pub fn pooled_on(&self, unit_ids: &[String], time_ids: &[i64]) -> Result<Vec<f64>> {
        if unit_ids != self.unit_ids.as_slice() {
            return Err(PvarError::DimensionMismatch(
                "instrument units differ from model units".into(),
            ));
        }
        let pos = time_ids
            .iter()
            .map(|t| {
                self.time_ids.iter().position(|x| x == t).ok_or_else(|| {
                    PvarError::DimensionMismatch(format!("instrument has no period {t}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((0..self.unit_ids.len())
            .flat_map(|i| pos.iter().map(move |&s| self.get(i, s)))
            .collect())
    }
}

/// Aggregate spending instrument over horizon `k`, aligned with
/// `growth_transform` output of the same horizon.
pub fn build_instrument(
    ds: &PanelDataset,
    spending_var: &str,
    gdp_var: &str,
    mode: InstrumentMode,
    k: usize,
) -> Result<InstrumentSeries> {
    let exp = ds.var_index(spending_var)?;
    let gdp = ds.var_index(gdp_var)?;
    let (n, t) = (ds.n_units(), ds.n_periods());
    if k == 0 || t <= k {
        return Err(PvarError::TooFewPeriods {
            needed: k + 1,
            available: t,
        });
    }
    let national = |var: usize, s: usize| (0..n).map(|i| ds.get(i, s, var)).sum::<f64>();
    let mut growth = Vec::with_capacity(t - k);
    for s in k..t {
        let den = national(gdp, s - k);
        if den <= 0.0 {
            return Err(PvarError::DegenerateDenominator {
                var: gdp_var.into(),
                unit: "<national>".into(),
                time: ds.time_ids[s - k],
            });
        }
        growth.push((national(exp, s) - national(exp, s - k)) / den);
    }
    let shares: Vec<f64> = match mode {
        InstrumentMode::CommonAggregate => vec![1.0; n],
        InstrumentMode::ShareWeighted => {
            let mut shares = vec![0.0; n];
            for s in 0..t {
                let total = national(exp, s);
                if total <= 0.0 {
                    return Err(PvarError::DegenerateDenominator {
                        var: spending_var.into(),
                        unit: "<national>".into(),
                        time: ds.time_ids[s],
                    });
                }
                for (i, share) in shares.iter_mut().enumerate() {
                    *share += ds.get(i, s, exp) / total / t as f64;
                }
            }
            shares
        }
    };
    let values = shares
        .iter()
        .flat_map(|&sh| growth.iter().map(move |g| sh * g))
        .collect();
    let mut z = InstrumentSeries::new(ds.unit_ids.clone(), ds.time_ids[k..].to_vec(), values)?;
    z.mode = Some(mode);
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_csv() -> &'static str {
        "unit,time,exp,gdp\nA,2000,1,10\nA,2001,2,11\nA,2002,4,12\nB,2000,3,20\nB,2001,3,21\nB,2002,3,22\n"
    }

    #[test]
    fn loads_complete_tiny_file() {
        let ds = read_csv(tiny_csv().as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!((ds.n_units(), ds.n_periods(), ds.n_vars()), (2, 3, 2));
        assert_eq!(ds.get(1, 2, 1), 22.0);
        assert_eq!(ds.var_names(), &["exp".to_string(), "gdp".to_string()]);
    }

    #[test]
    fn missing_row_is_unbalanced() {
        let text = tiny_csv().replace("B,2001,3,21\n", "");
        let err = read_csv(text.as_bytes(), &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, PvarError::UnbalancedPanel(_)), "{err}");
    }

    #[test]
    fn duplicate_and_non_numeric_rows() {
        let dup = format!("{}A,2000,1,10\n", tiny_csv());
        assert!(matches!(
            read_csv(dup.as_bytes(), &CsvSchema::default()),
            Err(PvarError::DuplicateKey { .. })
        ));
        let bad = tiny_csv().replace("B,2001,3,21", "B,2001,x,21");
        assert!(matches!(
            read_csv(bad.as_bytes(), &CsvSchema::default()),
            Err(PvarError::ParseError { .. })
        ));
    }

    #[test]
    fn rows_are_sorted_whatever_the_file_order() {
        let text = "unit,time,y\n10,2,1\n2,1,2\n10,1,3\n2,2,4\n";
        let ds = read_csv(text.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!(ds.unit_ids(), &["2".to_string(), "10".to_string()]);
        assert_eq!(ds.series(1, 0), vec![3.0, 1.0]);
    }

    #[test]
    fn schema_renames_columns() {
        let schema = CsvSchema {
            unit: "unit".into(),
            time: "time".into(),
            vars: vec![("output".into(), "gdp".into())],
        };
        let ds = read_csv(tiny_csv().as_bytes(), &schema).unwrap();
        assert_eq!(ds.var_names(), &["output".to_string()]);
        assert!(matches!(
            read_csv(tiny_csv().as_bytes(), &CsvSchema::with_vars(&["nope"])),
            Err(PvarError::MissingColumn(_))
        ));
    }

    #[test]
    fn growth_by_hand() {
        let ds = PanelDataset::from_fn(
            vec!["a".into()],
            vec![1, 2, 3],
            vec!["num".into(), "den".into()],
            |_, s, v| if v == 0 { [1.0, 2.0, 4.0][s] } else { 1.0 },
        )
        .unwrap();
        let g = growth_transform(&ds, &[GrowthSpec::new("g", "num", "den", 1)]).unwrap();
        assert_eq!(g.series(0, 0), vec![1.0, 2.0]);
        assert_eq!(g.time_ids(), &[2, 3]);
    }

    #[test]
    fn constant_series_have_zero_growth() {
        let ds = PanelDataset::from_fn(
            vec!["a".into(), "b".into()],
            (0..6).collect(),
            vec!["x".into()],
            |i, _, _| 5.0 + i as f64,
        )
        .unwrap();
        for k in 1..=2 {
            let g = growth_transform(&ds, &[GrowthSpec::new("g", "x", "x", k)]).unwrap();
            assert_eq!(g.n_periods(), 6 - k);
            assert!(g.series(1, 0).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn non_positive_denominator_is_rejected() {
        let ds = PanelDataset::from_fn(
            vec!["a".into()],
            vec![1, 2, 3],
            vec!["x".into(), "d".into()],
            |_, s, v| if v == 1 && s == 1 { 0.0 } else { 1.0 },
        )
        .unwrap();
        assert!(matches!(
            growth_transform(&ds, &[GrowthSpec::new("g", "x", "d", 1)]),
            Err(PvarError::DegenerateDenominator { .. })
        ));
    }

    fn two_unit_spending() -> PanelDataset {
        // national spending 10 -> 11 with national gdp 10
        PanelDataset::from_fn(
            vec!["a".into(), "b".into()],
            vec![0, 1],
            vec!["exp".into(), "gdp".into()],
            |_, s, v| if v == 0 { [5.0, 5.5][s] } else { 5.0 },
        )
        .unwrap()
    }

    #[test]
    fn common_aggregate_symmetry() {
        let z = build_instrument(
            &two_unit_spending(),
            "exp",
            "gdp",
            InstrumentMode::CommonAggregate,
            1,
        )
        .unwrap();
        assert!((z.get(0, 0) - 0.10).abs() < 1e-15);
        assert_eq!(z.get(0, 0), z.get(1, 0));
        assert_eq!(z.time_ids(), &[1]);
    }

    #[test]
    fn share_weighted_by_hand() {
        // shares 0.25 / 0.75 in both periods, national growth 10%
        let ds = PanelDataset::from_fn(
            vec!["a".into(), "b".into()],
            vec![0, 1],
            vec!["exp".into(), "gdp".into()],
            |i, s, v| match v {
                0 => [[2.5, 2.75], [7.5, 8.25]][i][s],
                _ => 5.0,
            },
        )
        .unwrap();
        let z = build_instrument(&ds, "exp", "gdp", InstrumentMode::ShareWeighted, 1).unwrap();
        assert!((z.get(0, 0) - 0.025).abs() < 1e-15);
        assert!((z.get(1, 0) - 0.075).abs() < 1e-15);
    }

    #[test]
    fn pooled_alignment_by_time_id() {
        let z = InstrumentSeries::new(
            vec!["a".into(), "b".into()],
            vec![1, 2, 3],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        )
        .unwrap();
        let pooled = z.pooled_on(&["a".into(), "b".into()], &[2, 3]).unwrap();
        assert_eq!(pooled, vec![2.0, 3.0, 5.0, 6.0]);
        assert!(z.pooled_on(&["a".into(), "b".into()], &[4]).is_err());
    }
}
