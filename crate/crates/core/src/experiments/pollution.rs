//! Pollution-style data pipeline: schema-driven CSV ingestion, synthetic
//! proxies of a measured anchor, leave-one-group-out selection of `lambda`,
//! and a generator of pollution-shaped CSV files for testing.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{empirical_mspe, fit_ols, fit_par, fit_ptar, fit_xpar, fit_xtar, FitSpec, Method};
use crate::experiments::config::ExperimentSetup;
use crate::experiments::results::{ResultRow, ResultTable};
use crate::moments::moments_from_data;
use crate::simulate::{derive_seed, rng_from_seed};

pub const DEFAULT_PROXY_SVR: f64 = 0.9;
pub const DEFAULT_LAMBDA_GRID: [f64; 9] = [0.0, 1.0, 2.0, 3.0, 5.0, 10.0, 15.0, 20.0, 40.0];
pub const DEFAULT_MISSING: [&str; 4] = ["", "NA", "NaN", "nan"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    X,
    Y,
    /// Measured anchor; synthetic proxies are built from it.
    #[serde(alias = "a", alias = "proxy")]
    Anchor,
    W,
    Z,
    Group,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Log,
    Log1p,
    Standardize,
    OneHot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub role: Role,
    #[serde(default)]
    pub transforms: Vec<Transform>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DerivedOp {
    MeanOf { mean_of: Vec<String> },
    Difference { difference: [String; 2] },
}

/// A numeric column computed from source columns before transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedSpec {
    pub name: String,
    #[serde(flatten)]
    pub op: DerivedOp,
    pub role: Role,
    #[serde(default)]
    pub transforms: Vec<Transform>,
}

/// Keeps rows whose `column` equals one of the given values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowFilter {
    pub column: String,
    pub equals: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub note: Option<String>,
    pub columns: Vec<ColumnSpec>,
    #[serde(default)]
    pub derived: Vec<DerivedSpec>,
    /// Cell values treated as missing.
    #[serde(default = "default_missing")]
    pub missing: Vec<String>,
    #[serde(default)]
    pub filters: Vec<RowFilter>,
}

fn default_missing() -> Vec<String> {
    DEFAULT_MISSING.iter().map(|s| s.to_string()).collect()
}

impl Schema {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Schema = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::from_json(&text)
    }

    /// Built-in schema name or file path.
    pub fn resolve(arg: &str) -> Result<Self> {
        match arg {
            "pollution" => Self::from_json(crate::bundles::POLLUTION_SCHEMA),
            path => Self::load(path),
        }
    }

    fn outputs(&self) -> impl Iterator<Item = (&str, Role, &[Transform])> {
        self.columns
            .iter()
            .map(|c| (c.name.as_str(), c.role, c.transforms.as_slice()))
            .chain(self.derived.iter().map(|d| (d.name.as_str(), d.role, d.transforms.as_slice())))
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (name, role, transforms) in self.outputs() {
            if !seen.insert(name) {
                return Err(Error::Config(format!("schema names column '{name}' twice")));
            }
            let one_hot = transforms.contains(&Transform::OneHot);
            if one_hot && (role != Role::X || transforms.len() > 1) {
                return Err(Error::Config(format!(
                    "one_hot on '{name}' is only allowed alone and on role x"
                )));
            }
            if role == Role::Group && !transforms.is_empty() {
                return Err(Error::Config(format!("group column '{name}' takes no transforms")));
            }
        }
        let count = |r: Role| self.outputs().filter(|(_, role, _)| *role == r).count();
        if count(Role::Y) != 1 {
            return Err(Error::Config(format!(
                "schema must map exactly one column to role y, found {}",
                count(Role::Y)
            )));
        }
        if count(Role::X) == 0 {
            return Err(Error::Config("schema maps no column to role x".into()));
        }
        if count(Role::Group) > 1 {
            return Err(Error::Config("schema maps more than one column to role group".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    /// Rows removed by the schema filters.
    pub rows_filtered: usize,
    /// Rows removed because a used cell was missing.
    pub rows_dropped: usize,
    pub rows_kept: usize,
    pub x_names: Vec<String>,
    /// Kept indicator levels of each one-hot column (reference level first).
    pub one_hot_levels: Vec<(String, Vec<String>)>,
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<(Dataset, IngestReport)> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    ingest_reader(std::io::BufReader::new(file), schema)
}

enum Cell {
    Num(f64),
    Text(String),
}

fn numeric(raw: &str, column: &str, line: usize) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|_| {
        Error::Data(format!("non-numeric value '{raw}' in column '{column}' (data row {line})"))
    })
}

fn apply_numeric(values: &mut [f64], transforms: &[Transform], column: &str) -> Result<()> {
    for t in transforms {
        match t {
            Transform::Log => {
                if let Some(v) = values.iter().find(|v| !(**v > 0.0)) {
                    return Err(Error::Data(format!("log of non-positive value {v} in '{column}'")));
                }
                values.iter_mut().for_each(|v| *v = v.ln());
            }
            Transform::Log1p => {
                if let Some(v) = values.iter().find(|v| !(**v > -1.0)) {
                    return Err(Error::Data(format!("log1p of value {v} <= -1 in '{column}'")));
                }
                values.iter_mut().for_each(|v| *v = v.ln_1p());
            }
            Transform::Standardize => {
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                let sd = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
                if !(sd > 0.0) {
                    return Err(Error::Data(format!("column '{column}' is constant and cannot be standardized")));
                }
                values.iter_mut().for_each(|v| *v = (*v - mean) / sd);
            }
            Transform::OneHot => unreachable!("validated"),
        }
    }
    Ok(())
}

/// Reads a CSV with named columns and maps it to a [`Dataset`] per `schema`.
///
/// Rows with a missing value in any used column are dropped before
/// transforms are applied. CSV columns the schema does not mention are
/// ignored.
pub fn ingest_reader<R: Read>(input: R, schema: &Schema) -> Result<(Dataset, IngestReport)> {
    schema.validate()?;
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let index = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("column '{name}' named in the schema is not in the file")))
    };

    // Source columns read from the file, with whether they are categorical.
    struct Source {
        idx: usize,
        text: bool,
    }
    let mut sources: Vec<(String, Source)> = Vec::new();
    let mut need = |name: &str, text: bool| -> Result<()> {
        if let Some((_, s)) = sources.iter_mut().find(|(n, _)| n == name) {
            s.text |= text;
        } else {
            sources.push((name.to_string(), Source { idx: index(name)?, text }));
        }
        Ok(())
    };
    for c in &schema.columns {
        if c.role != Role::Drop {
            let text = c.role == Role::Group || c.transforms.contains(&Transform::OneHot);
            need(&c.name, text)?;
        }
    }
    for d in &schema.derived {
        let names: Vec<&String> = match &d.op {
            DerivedOp::MeanOf { mean_of } => mean_of.iter().collect(),
            DerivedOp::Difference { difference } => difference.iter().collect(),
        };
        if names.is_empty() {
            return Err(Error::Config(format!("derived column '{}' has no sources", d.name)));
        }
        for n in names {
            need(n, false)?;
        }
    }
    let filters: Vec<(usize, &RowFilter)> = schema
        .filters
        .iter()
        .map(|f| Ok((index(&f.column)?, f)))
        .collect::<Result<_>>()?;

    let mut rows_read = 0;
    let mut rows_filtered = 0;
    let mut rows_dropped = 0;
    let mut kept: Vec<Vec<Cell>> = Vec::new();
    'rows: for rec in rd.records() {
        let rec = rec?;
        rows_read += 1;
        for (i, f) in &filters {
            let v = rec.get(*i).unwrap_or("").trim();
            if !f.equals.iter().any(|e| e == v) {
                rows_filtered += 1;
                continue 'rows;
            }
        }
        let mut cells = Vec::with_capacity(sources.len());
        for (name, s) in &sources {
            let raw = rec.get(s.idx).unwrap_or("").trim();
            if schema.missing.iter().any(|m| m == raw) {
                rows_dropped += 1;
                continue 'rows;
            }
            cells.push(if s.text {
                Cell::Text(raw.to_string())
            } else {
                Cell::Num(numeric(raw, name, rows_read)?)
            });
        }
        kept.push(cells);
    }
    let n = kept.len();
    if n == 0 {
        return Err(Error::Data("no complete rows left after ingestion".into()));
    }
    let src = |name: &str| sources.iter().position(|(n, _)| n == name).expect("registered source");
    let num_col = |name: &str| -> Vec<f64> {
        let j = src(name);
        kept.iter()
            .map(|r| match &r[j] {
                Cell::Num(v) => *v,
                Cell::Text(t) => t.parse().unwrap_or(f64::NAN),
            })
            .collect()
    };

    let mut x_cols: Vec<Vec<f64>> = Vec::new();
    let mut x_names: Vec<String> = Vec::new();
    let mut y: Option<Vec<f64>> = None;
    let mut blocks: [Vec<Vec<f64>>; 3] = Default::default();
    let mut groups: Option<Vec<String>> = None;
    let mut one_hot_levels = Vec::new();

    let mut place = |name: &str, role: Role, values: Vec<f64>| match role {
        Role::X => {
            x_cols.push(values);
            x_names.push(name.to_string());
        }
        Role::Y => y = Some(values),
        Role::Anchor => blocks[0].push(values),
        Role::W => blocks[1].push(values),
        Role::Z => blocks[2].push(values),
        Role::Group | Role::Drop => {}
    };

    for c in &schema.columns {
        match c.role {
            Role::Drop => {}
            Role::Group => {
                let j = src(&c.name);
                groups = Some(
                    kept.iter()
                        .map(|r| match &r[j] {
                            Cell::Text(t) => t.clone(),
                            Cell::Num(v) => v.to_string(),
                        })
                        .collect(),
                );
            }
            role if c.transforms.contains(&Transform::OneHot) => {
                let j = src(&c.name);
                let labels: Vec<&str> = kept
                    .iter()
                    .map(|r| match &r[j] {
                        Cell::Text(t) => t.as_str(),
                        Cell::Num(_) => unreachable!("one-hot sources are text"),
                    })
                    .collect();
                let levels: Vec<String> = labels
                    .iter()
                    .copied()
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .map(str::to_string)
                    .collect();
                for level in levels.iter().skip(1) {
                    let col = labels.iter().map(|l| if l == level { 1.0 } else { 0.0 }).collect();
                    place(&format!("{}={}", c.name, level), role, col);
                }
                one_hot_levels.push((c.name.clone(), levels));
            }
            role => {
                let mut v = num_col(&c.name);
                apply_numeric(&mut v, &c.transforms, &c.name)?;
                place(&c.name, role, v);
            }
        }
    }
    for d in &schema.derived {
        let mut v = match &d.op {
            DerivedOp::MeanOf { mean_of } => {
                let cols: Vec<Vec<f64>> = mean_of.iter().map(|s| num_col(s)).collect();
                (0..n)
                    .map(|i| cols.iter().map(|c| c[i]).sum::<f64>() / cols.len() as f64)
                    .collect()
            }
            DerivedOp::Difference { difference: [a, b] } => {
                let (a, b) = (num_col(a), num_col(b));
                a.iter().zip(&b).map(|(p, q)| p - q).collect::<Vec<f64>>()
            }
        };
        apply_numeric(&mut v, &d.transforms, &d.name)?;
        place(&d.name, d.role, v);
    }

    let matrix = |cols: &[Vec<f64>]| DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    let y = y.ok_or_else(|| Error::Config("schema maps no column to role y".into()))?;
    let mut data = Dataset::new(matrix(&x_cols), DVector::from_vec(y))?.with_x_names(x_names.clone())?;
    let [a, w, z] = blocks;
    if !a.is_empty() {
        data = data.with_a(matrix(&a))?;
    }
    if !w.is_empty() {
        data = data.with_w(matrix(&w))?;
    }
    if !z.is_empty() {
        data = data.with_z(matrix(&z))?;
    }
    if let Some(g) = groups {
        data = data.with_groups(g)?;
    }
    let report = IngestReport {
        rows_read,
        rows_filtered,
        rows_dropped,
        rows_kept: n,
        x_names,
        one_hot_levels,
    };
    Ok((data, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyProxies {
    pub columns: Vec<DVector<f64>>,
    pub noise_variance: f64,
}

/// Copies of `column` plus independent Gaussian noise of variance
/// `var(column) (1 - svr) / svr`, with the in-sample variance (divisor `n`).
pub fn make_noisy_proxies(column: &DVector<f64>, svr: f64, count: usize, seed: u64) -> Result<NoisyProxies> {
    if !(svr > 0.0 && svr < 1.0) {
        return Err(Error::param("svr", format!("must lie strictly between 0 and 1, got {svr}")));
    }
    if !(1..=2).contains(&count) {
        return Err(Error::param("count", format!("one or two proxies, got {count}")));
    }
    let n = column.len();
    if n < 2 {
        return Err(Error::Data("proxy synthesis needs at least two rows".into()));
    }
    let mean = column.mean();
    let var = column.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    if !(var > 0.0) {
        return Err(Error::Data("cannot build proxies of a constant column".into()));
    }
    let noise_variance = var * (1.0 - svr) / svr;
    let sd = noise_variance.sqrt();
    let columns = (0..count)
        .map(|k| {
            let mut rng = rng_from_seed(derive_seed(seed, &[k as u64]));
            DVector::from_fn(n, |i, _| column[i] + sd * rng.sample::<f64, _>(StandardNormal))
        })
        .collect();
    Ok(NoisyProxies { columns, noise_variance })
}

/// Training/validation row indices, one fold per group in order of first
/// appearance.
pub fn group_folds(data: &Dataset) -> Result<Vec<(String, Vec<usize>, Vec<usize>)>> {
    let groups = data
        .groups
        .as_ref()
        .ok_or_else(|| Error::Data("cross-validation needs group labels".into()))?;
    let levels = data.group_levels();
    if levels.len() < 2 {
        return Err(Error::Data(format!(
            "leave-one-group-out needs at least two groups, found {}",
            levels.len()
        )));
    }
    Ok(levels
        .into_iter()
        .map(|g| {
            let (val, train): (Vec<usize>, Vec<usize>) = (0..groups.len()).partition(|&i| groups[i] == g);
            (g, train, val)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub lambda: f64,
    /// Unweighted mean validation MSE per candidate, in ascending `lambda`.
    pub scores: Vec<(f64, f64)>,
}

/// Leave-one-group-out choice of `lambda` for an untargeted estimator
/// fitted on centred moments. Folds are averaged without weights; ties go
/// to the smallest `lambda`.
pub fn loog_cv_lambda(data: &Dataset, grid: &[f64], method: Method) -> Result<CvResult> {
    if grid.is_empty() {
        return Err(Error::param("lambda_grid", "must not be empty"));
    }
    let mut grid = grid.to_vec();
    if grid.iter().any(|l| !l.is_finite()) {
        return Err(Error::param("lambda_grid", "entries must be finite"));
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let specs = grid
        .iter()
        .map(|&l| FitSpec::untargeted(method, l))
        .collect::<Result<Vec<_>>>()?;
    let folds = group_folds(data)?;
    let mut totals = vec![0.0; grid.len()];
    for (_, train, val) in &folds {
        let m = moments_from_data(&data.select_rows(train), true)?;
        let val = data.select_rows(val);
        for (t, spec) in totals.iter_mut().zip(&specs) {
            *t += empirical_mspe(&spec.fit(&m)?, &val)?;
        }
    }
    let scores: Vec<(f64, f64)> = grid
        .iter()
        .zip(&totals)
        .map(|(&l, &t)| (l, t / folds.len() as f64))
        .collect();
    let mut best = scores[0];
    for &(l, s) in &scores[1..] {
        if s < best.1 - 1e-12 * best.1.abs() {
            best = (l, s);
        }
    }
    Ok(CvResult { lambda: best.0, scores })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub proxy_svr: f64,
    pub lambda_grid: Vec<f64>,
    /// Estimator whose cross-validated `lambda` is shared by PAR and xPAR.
    pub cv_method: Method,
    pub seed: u64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            proxy_svr: DEFAULT_PROXY_SVR,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            cv_method: Method::Par,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub held_out: String,
    pub lambda: f64,
    pub noise_variance: f64,
    pub cv_scores: Vec<(f64, f64)>,
    /// Held-out MSE per estimator.
    pub mse: Vec<(Method, f64)>,
}

fn anchor_column(d: &Dataset) -> DVector<f64> {
    d.a.as_ref().map(|a| a.column(0).into_owned()).unwrap_or_else(|| DVector::zeros(d.n()))
}

/// For each group: train on the others with two synthetic proxies of the
/// anchor, choose `lambda` by leave-one-group-out CV on the training groups,
/// fit OLS, PAR, xPAR, PTAR and xTAR and score them on the held-out group.
/// Targeted fits aim at the held-out mean and variance of the proxy.
pub fn run_pipeline(data: &Dataset, opts: &PipelineOptions) -> Result<Vec<Scenario>> {
    let anchor = data
        .a
        .as_ref()
        .ok_or_else(|| Error::Config("the pipeline needs a column with role anchor".into()))?;
    if anchor.ncols() != 1 {
        return Err(Error::dim("anchor columns", 1, anchor.ncols()));
    }
    let folds = group_folds(data)?;
    let mut out = Vec::with_capacity(folds.len());
    for (k, (held_out, train_idx, test_idx)) in folds.into_iter().enumerate() {
        let train = data.select_rows(&train_idx);
        let test = data.select_rows(&test_idx);
        let seed = derive_seed(opts.seed, &[k as u64]);
        let temp = anchor_column(&train);
        let proxies = make_noisy_proxies(&temp, opts.proxy_svr, 2, seed)?;
        let col = |v: &DVector<f64>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        let mut train = train.with_w(col(&proxies.columns[0]))?.with_z(col(&proxies.columns[1]))?;
        train.a = None;

        // Test-season proxy distribution, used only as a target.
        let test_temp = anchor_column(&test);
        let mut rng = rng_from_seed(derive_seed(seed, &[2]));
        let sd = proxies.noise_variance.sqrt();
        let w_test: Vec<f64> = test_temp.iter().map(|t| t + sd * rng.sample::<f64, _>(StandardNormal)).collect();
        let nt = w_test.len() as f64;
        let mu = w_test.iter().sum::<f64>() / nt;
        let var = w_test.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / nt;
        let (mu, var) = (DVector::from_element(1, mu), DMatrix::from_element(1, 1, var));

        let cv = loog_cv_lambda(&train, &opts.lambda_grid, opts.cv_method)?;
        let m = moments_from_data(&train, true)?;
        let fits = [
            fit_ols(&m)?,
            fit_par(&m, cv.lambda)?,
            fit_xpar(&m, cv.lambda)?,
            fit_ptar(&m, &mu, &var)?,
            fit_xtar(&m, &mu, &var)?,
        ];
        let mse = fits
            .iter()
            .map(|p| Ok((p.method, empirical_mspe(p, &test)?)))
            .collect::<Result<Vec<_>>>()?;
        out.push(Scenario {
            held_out,
            lambda: cv.lambda,
            noise_variance: proxies.noise_variance,
            cv_scores: cv.scores,
            mse,
        });
    }
    Ok(out)
}

/// Pipeline of an experiment bundle; rows per replicate (proxy noise draw)
/// and held-out group with metrics `test_mse` and `cv_lambda`.
pub fn run_custom_experiment(setup: &ExperimentSetup) -> Result<ResultTable> {
    let cfg = &setup.config;
    let schema = match &cfg.schema {
        Some(s) if s == "pollution" => Schema::resolve(s)?,
        Some(s) => Schema::load(setup.resolve_path(s))?,
        None => Schema::resolve("pollution")?,
    };
    let (data, report) = match cfg.data.as_deref() {
        None | Some("synthetic-pollution") => {
            ingest_reader(crate::bundles::SYNTHETIC_POLLUTION_CSV.as_bytes(), &schema)?
        }
        Some(p) => ingest_csv(setup.resolve_path(p), &schema)?,
    };
    log::info!(
        "ingested {} rows ({} dropped for missing values, {} filtered)",
        report.rows_kept,
        report.rows_dropped,
        report.rows_filtered
    );
    let mut opts = PipelineOptions {
        seed: cfg.seed,
        ..Default::default()
    };
    if let Some(s) = cfg.proxy_svr {
        opts.proxy_svr = s;
    }
    if !cfg.lambda_grid.is_empty() {
        opts.lambda_grid = cfg.lambda_grid.clone();
    }
    let mut rows = Vec::new();
    for rep in 0..cfg.replicates {
        let seed = derive_seed(cfg.seed, &[rep as u64]);
        let scenarios = run_pipeline(&data, &PipelineOptions { seed, ..opts.clone() })?;
        for s in scenarios {
            let row = |estimator: &str, lambda: Option<f64>, metric: &str, value: f64| ResultRow {
                experiment: "custom".into(),
                estimator: estimator.into(),
                replicate: Some(rep),
                n: Some(data.n()),
                svr: Some(opts.proxy_svr),
                lambda,
                cell: s.held_out.clone(),
                metric: metric.into(),
                value,
                seed: Some(seed),
            };
            rows.push(row(opts.cv_method.as_str(), None, "cv_lambda", s.lambda));
            for (method, mse) in &s.mse {
                let lambda = matches!(method, Method::Par | Method::Xpar).then_some(s.lambda);
                rows.push(row(method.as_str(), lambda, "test_mse", *mse));
            }
        }
    }
    Ok(ResultTable::from_rows(rows))
}

/// Knobs of the pollution-shaped generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPollution {
    pub rows_per_season: usize,
    /// Scale of the between-season temperature mean differences.
    pub shift: f64,
    /// Probability that a PM2.5 site reading is missing.
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticPollution {
    fn default() -> Self {
        SyntheticPollution {
            rows_per_season: 500,
            shift: 1.0,
            missing_rate: 0.01,
            seed: 2013,
        }
    }
}

pub const POLLUTION_HEADER: [&str; 18] = [
    "No", "year", "month", "day", "hour", "season", "PM_Dongsi", "PM_Dongsihuan", "PM_Nongzhanguan",
    "PM_US Post", "DEWP", "HUMI", "PRES", "TEMP", "cbwd", "Iws", "precipitation", "Iprec",
];

const SEASON_TEMP: [f64; 4] = [13.0, 26.0, 12.0, -2.0];
const WIND_LEVELS: [&str; 5] = ["NE", "NW", "SE", "SW", "cv"];

/// Writes a CSV with the column layout of the hourly city pollution data.
///
/// Temperature acts as the anchor: its mean differs by season (scaled by
/// `shift`) and it drives dew point, humidity, pressure and log PM2.5. A
/// hidden factor confounds the weather covariates and the response.
pub fn write_synthetic_pollution<W: std::io::Write>(cfg: &SyntheticPollution, out: W) -> Result<()> {
    let mut rng = rng_from_seed(cfg.seed);
    let mut normal = move || -> f64 { rng.sample(StandardNormal) };
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(POLLUTION_HEADER)?;
    let mean_temp = SEASON_TEMP.iter().sum::<f64>() / 4.0;
    let mut no = 0usize;
    for (s, base) in SEASON_TEMP.iter().enumerate() {
        let season_mean = mean_temp + cfg.shift * (base - mean_temp);
        for i in 0..cfg.rows_per_season {
            no += 1;
            let h = normal();
            let temp = season_mean + 4.0 * normal();
            let dewp = 0.6 * temp - 5.0 + 3.0 * h + 2.0 * normal();
            let humi = 70.0 - 1.2 * temp + 6.0 * h + 5.0 * normal();
            let pres = 1025.0 - 0.5 * temp - 1.5 * h + 2.0 * normal();
            let wind = WIND_LEVELS[((normal() + 1.2 * h).abs() * 2.0) as usize % WIND_LEVELS.len()];
            let iws = (1.5 + 0.6 * normal() - 0.4 * h).exp();
            let rain = if normal() > 1.5 { (normal() - 0.5).exp() } else { 0.0 };
            let iprec = rain + if normal() > 1.0 { normal().abs() * 3.0 } else { 0.0 };
            let log_pm = 4.2 + 0.04 * dewp - 0.01 * humi - 0.2 * (1.0 + iws).ln() - 0.3 * rain.ln_1p()
                + 0.06 * (temp - mean_temp)
                + 0.5 * h
                + 0.2 * normal();
            let mut sites = Vec::with_capacity(4);
            for _ in 0..4 {
                let v = (log_pm + 0.1 * normal()).exp();
                let missing = normal().abs() < cfg.missing_rate * 1.2533;
                sites.push(if missing { "NA".to_string() } else { format!("{v:.1}") });
            }
            let day_of_season = i * 90 / cfg.rows_per_season.max(1);
            let month = 3 * s + day_of_season / 30 + 3;
            let month = (month - 1) % 12 + 1;
            let mut rec = vec![
                no.to_string(),
                "2013".into(),
                month.to_string(),
                (day_of_season % 30 + 1).to_string(),
                (i % 24).to_string(),
                (s + 1).to_string(),
            ];
            rec.extend(sites);
            rec.extend([
                format!("{dewp:.1}"),
                format!("{humi:.1}"),
                format!("{pres:.1}"),
                format!("{temp:.1}"),
                wind.to_string(),
                format!("{iws:.2}"),
                format!("{rain:.1}"),
                format!("{iprec:.1}"),
            ]);
            wr.write_record(&rec)?;
        }
    }
    wr.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

pub fn synthetic_pollution_csv(cfg: &SyntheticPollution) -> Result<String> {
    let mut buf = Vec::new();
    write_synthetic_pollution(cfg, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Data(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY_SCHEMA: &str = r#"{
        "columns": [
            {"name": "t", "role": "x", "transforms": ["log"]},
            {"name": "dir", "role": "x", "transforms": ["one_hot"]},
            {"name": "r", "role": "y"},
            {"name": "g", "role": "group"},
            {"name": "junk", "role": "drop"}
        ]
    }"#;

    fn toy() -> String {
        let mut s = String::from("t,dir,r,g,junk\n");
        let dirs = ["NE", "NW", "SE", "SW", "cv"];
        for i in 0..10 {
            let t = 1.0 + i as f64 * 0.37;
            s.push_str(&format!("{t},{},{},{},x\n", dirs[i % 5], i, i % 2));
        }
        s.push_str("2.0,NE,NaN,0,x\n");
        s
    }

    #[test]
    fn missing_row_dropped_and_reported() {
        let schema = Schema::from_json(TOY_SCHEMA).unwrap();
        let (d, rep) = ingest_reader(toy().as_bytes(), &schema).unwrap();
        assert_eq!((d.n(), rep.rows_read, rep.rows_dropped), (10, 11, 1));
    }

    #[test]
    fn log_round_trips() {
        let schema = Schema::from_json(TOY_SCHEMA).unwrap();
        let (d, _) = ingest_reader(toy().as_bytes(), &schema).unwrap();
        for i in 0..10 {
            let t = 1.0 + i as f64 * 0.37;
            assert!((d.x[(i, 0)].exp() - t).abs() < 1e-12);
        }
    }

    #[test]
    fn one_hot_drops_reference_level() {
        let schema = Schema::from_json(TOY_SCHEMA).unwrap();
        let (d, rep) = ingest_reader(toy().as_bytes(), &schema).unwrap();
        assert_eq!(d.d_x(), 1 + 4);
        assert_eq!(d.x_names[1..], ["dir=NW", "dir=SE", "dir=SW", "dir=cv"]);
        assert_eq!(rep.one_hot_levels[0].1[0], "NE");
        // reference rows have all-zero indicators, everyone else exactly one
        for i in 0..10 {
            let s: f64 = (1..5).map(|j| d.x[(i, j)]).sum();
            assert_eq!(s, if i % 5 == 0 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn non_numeric_cell_is_an_error() {
        let schema = Schema::from_json(TOY_SCHEMA).unwrap();
        let err = ingest_reader("t,dir,r,g,junk\nabc,NE,1,0,x\n".as_bytes(), &schema).unwrap_err();
        assert!(err.to_string().contains("non-numeric"));
    }

    #[test]
    fn schema_without_y_rejected() {
        let err = Schema::from_json(r#"{"columns": [{"name": "a", "role": "x"}]}"#).unwrap_err();
        assert!(err.to_string().contains("role y"));
    }

    #[test]
    fn proxy_noise_matches_svr() {
        let col = DVector::from_fn(20_000, |i, _| ((i * 7919) % 1000) as f64 / 1000.0);
        let p = make_noisy_proxies(&col, 0.9, 2, 3).unwrap();
        let var = |v: &DVector<f64>| {
            let m = v.mean();
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
        };
        assert!((p.noise_variance - var(&col) / 9.0).abs() < 1e-12);
        for w in &p.columns {
            let svr = var(&col) / var(w);
            assert!((svr - 0.9).abs() < 0.02 * 0.9, "{svr}");
        }
        assert_ne!(p.columns[0], p.columns[1]);
        assert!(make_noisy_proxies(&DVector::from_element(5, 1.0), 0.9, 1, 0).is_err());
        assert!(make_noisy_proxies(&col, 1.0, 1, 0).is_err());
    }

    #[test]
    fn single_lambda_grid_and_single_group() {
        let n = 40;
        let x = DMatrix::from_fn(n, 2, |i, j| ((i * (j + 3)) as f64 * 0.7).sin());
        let y = DVector::from_fn(n, |i, _| (i as f64 * 0.3).cos());
        let w = DMatrix::from_fn(n, 1, |i, _| (i as f64 * 1.1).sin());
        let d = Dataset::new(x, y)
            .unwrap()
            .with_w(w)
            .unwrap()
            .with_groups((0..n).map(|i| (i % 2).to_string()).collect())
            .unwrap();
        assert_eq!(loog_cv_lambda(&d, &[3.0], Method::Par).unwrap().lambda, 3.0);
        let mut one = d.clone();
        one.groups = Some(vec!["a".into(); n]);
        assert!(loog_cv_lambda(&one, &[0.0, 1.0], Method::Par).is_err());
    }

    #[test]
    fn folds_partition_rows() {
        let x = DMatrix::from_fn(9, 1, |i, _| i as f64);
        let d = Dataset::new(x, DVector::zeros(9))
            .unwrap()
            .with_groups((0..9).map(|i| (i % 3).to_string()).collect())
            .unwrap();
        let folds = group_folds(&d).unwrap();
        let mut seen = vec![0; 9];
        for (_, train, val) in &folds {
            assert_eq!(train.len() + val.len(), 9);
            for &i in val {
                seen[i] += 1;
                assert!(!train.contains(&i));
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn bundled_csv_matches_generator() {
        let text = synthetic_pollution_csv(&SyntheticPollution::default()).unwrap();
        assert!(text == crate::bundles::SYNTHETIC_POLLUTION_CSV, "regenerate data/synthetic_pollution.csv");
    }

    #[test]
    fn bundled_schema_ingests_bundled_csv() {
        let schema = Schema::resolve("pollution").unwrap();
        let (d, rep) = ingest_reader(crate::bundles::SYNTHETIC_POLLUTION_CSV.as_bytes(), &schema).unwrap();
        assert!(rep.rows_dropped > 0);
        assert_eq!(d.group_levels().len(), 4);
        assert_eq!(d.a.as_ref().unwrap().ncols(), 1);
        assert_eq!(rep.one_hot_levels[0].1.len(), 5);
    }
}
