use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use proxy_anchor::bundles;
use proxy_anchor::estimators::{empirical_mspe, FitSpec, LinearPredictor, Method, Standardizer};
use proxy_anchor::experiments::pollution::{ingest_csv, ingest_reader, loog_cv_lambda, make_noisy_proxies, Schema, DEFAULT_LAMBDA_GRID};
use proxy_anchor::experiments::{emit_results, run_experiment, ExperimentKind, ExperimentSetup, OutputFormat};
use proxy_anchor::identifiability::scan_family;
use proxy_anchor::robustness::{build_set, omega_w_population, worst_case_mspe, SetKind};
use proxy_anchor::scm::{mspe_under_intervention, InterventionSpec, LinearScm, ProxyModel, ScmConfig};
use proxy_anchor::simulate::{simulate_with, NoiseDistribution, SimulationOptions};
use proxy_anchor::{moments_from_data, Dataset};
use serde_json::json;

use crate::args::*;
use crate::CliError;

/// `println!` that ignores a closed stdout (e.g. piping into `head`).
macro_rules! out {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

/// Directory for relative output paths and default experiment files.
pub const OUT_DIR_ENV: &str = "PROXY_ANCHOR_OUT_DIR";

pub fn dispatch(cli: &Cli) -> CliResult {
    let g = &cli.global;
    match &cli.command {
        Command::Simulate(a) => simulate(g, a),
        Command::Fit(a) => fit(g, a),
        Command::Evaluate(a) => evaluate(g, a),
        Command::WorstCase(a) => worst_case(g, a),
        Command::Identify(a) => identify(g, a),
        Command::Experiment(a) => experiment(g, a),
        Command::Cv(a) => cv(g, a),
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn out_dir() -> Option<PathBuf> {
    std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn output_path(p: &Path) -> CliResult<PathBuf> {
    let path = match out_dir() {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    };
    if let Some(parent) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| proxy_anchor::Error::io(parent, e))?;
    }
    Ok(path)
}

fn print_json(value: &serde_json::Value) -> CliResult {
    out!("{}", serde_json::to_string_pretty(value).map_err(proxy_anchor::Error::from)?);
    Ok(())
}

/// `"1,0;0,1"` as a matrix; rows separated by `;`.
pub fn parse_matrix(text: &str, what: &str) -> CliResult<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = text
        .split(';')
        .map(|r| r.split(',').map(|v| v.trim().parse::<f64>()).collect::<Result<_, _>>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("--{what}: expected numbers like '1,0;0,1', got '{text}'")))?;
    let cols = rows.first().map_or(0, Vec::len);
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(usage(format!("--{what}: rows must have equal, non-zero length")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn load_model(m: &ModelArgs) -> CliResult<(LinearScm, Option<ProxyModel>)> {
    let (scm, proxies) = ScmConfig::from_json(&bundles::resolve(&m.scm)?)?.build()?;
    let proxies = match m.svr {
        Some(svr) => Some(ProxyModel::isotropic(scm.dims().d_a, svr, true)?),
        None => proxies,
    };
    Ok((scm, proxies))
}

fn intervention(mean: &Option<Vec<f64>>, cov: &Option<String>) -> CliResult<Option<InterventionSpec>> {
    match (mean, cov) {
        (None, None) => Ok(None),
        (None, Some(_)) => Err(usage("--intervention-cov needs --intervention")),
        (Some(m), None) => Ok(Some(InterventionSpec::Deterministic(DVector::from_column_slice(m)))),
        (Some(m), Some(c)) => Ok(Some(InterventionSpec::Random {
            mean: DVector::from_column_slice(m),
            cov: parse_matrix(c, "intervention-cov")?,
        })),
    }
}

fn simulate(g: &Global, a: &SimulateArgs) -> CliResult {
    let (scm, proxies) = load_model(&a.model)?;
    let noise: NoiseDistribution = a.noise.parse()?;
    let spec = intervention(&a.intervention, &a.intervention_cov)?;
    let opts = SimulationOptions { noise, ..Default::default() };
    let data = simulate_with(&scm, proxies.as_ref(), a.n, g.seed.unwrap_or(0), spec.as_ref(), &opts)?;
    match &a.out {
        Some(p) => {
            let path = output_path(p)?;
            data.write_csv(&path)?;
            match g.format {
                Format::Json => print_json(&json!({ "rows": data.n(), "path": path }))?,
                Format::Text => eprintln!("wrote {} rows to {}", data.n(), path.display()),
            }
        }
        None => data.write_csv_to(std::io::stdout().lock())?,
    }
    Ok(())
}

/// Reads a dataset, through a schema when given, and optionally attaches
/// synthetic proxies of the anchor column.
fn load_data(a: &DataArgs, seed: u64) -> CliResult<Dataset> {
    let mut data = match (&a.schema, &a.data) {
        (Some(s), Some(path)) => ingest_csv(path, &Schema::resolve(s)?)?.0,
        (Some(s), None) if s == "pollution" => {
            ingest_reader(bundles::SYNTHETIC_POLLUTION_CSV.as_bytes(), &Schema::resolve(s)?)?.0
        }
        (None, Some(path)) => Dataset::read_csv(path)?,
        _ => return Err(usage("--data is required (only the pollution schema has bundled data)")),
    };
    if let Some(svr) = a.proxy_svr {
        let anchor = data
            .a
            .as_ref()
            .filter(|a| a.ncols() == 1)
            .ok_or_else(|| usage("--proxy-svr needs exactly one anchor column"))?;
        let col = anchor.column(0).into_owned();
        let p = make_noisy_proxies(&col, svr, 2, seed)?;
        let n = data.n();
        data = data
            .with_w(DMatrix::from_column_slice(n, 1, p.columns[0].as_slice()))?
            .with_z(DMatrix::from_column_slice(n, 1, p.columns[1].as_slice()))?;
    }
    Ok(data)
}

fn method(s: &str) -> CliResult<Method> {
    s.parse().map_err(|e: proxy_anchor::Error| usage(e.to_string()))
}

fn fit(g: &Global, a: &FitArgs) -> CliResult {
    let method = method(&a.method)?;
    let spec = if method.is_targeted() {
        let (Some(mean), Some(cov)) = (&a.target_mean, &a.target_cov) else {
            return Err(usage(format!("{method} needs --target-mean and --target-cov")));
        };
        let (mean, cov) = (DVector::from_column_slice(mean), parse_matrix(cov, "target-cov")?);
        match method {
            Method::Tar => FitSpec::Tar { mean, cov },
            Method::Ptar => FitSpec::Ptar { mean, cov },
            _ => FitSpec::Xtar { mean, cov },
        }
    } else {
        if method != Method::Ols && a.lambda.is_none() {
            return Err(usage(format!("{method} needs --lambda")));
        }
        FitSpec::untargeted(method, a.lambda.unwrap_or(0.0))?
    };
    let data = load_data(&a.data, g.seed.unwrap_or(0))?;
    let (predictor, names) = if a.standardize {
        let s = Standardizer::fit(&data)?;
        let scaled = s.apply(&data)?;
        let p = spec.fit(&moments_from_data(&scaled, !a.no_intercept)?)?;
        (s.attach(p), data.x_names.clone())
    } else {
        (spec.fit(&moments_from_data(&data, !a.no_intercept)?)?, data.x_names.clone())
    };
    if let Some(p) = &a.out {
        predictor.save(output_path(p)?)?;
    }
    match g.format {
        Format::Json => out!("{}", predictor.to_json()?),
        Format::Text => {
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "method\t{}", predictor.method);
            if let Some(l) = predictor.lambda {
                let _ = writeln!(out, "lambda\t{l}");
            }
            let _ = writeln!(out, "alpha\t{}", predictor.alpha);
            let (gamma, _) = predictor.raw_coefficients();
            for (j, v) in gamma.iter().enumerate() {
                let name = names.get(j).cloned().unwrap_or_else(|| format!("x{}", j + 1));
                let _ = writeln!(out, "{name}\t{v}");
            }
        }
    }
    Ok(())
}

fn evaluate(g: &Global, a: &EvaluateArgs) -> CliResult {
    let predictor = LinearPredictor::load(&a.predictor)?;
    let (mspe, source) = match (&a.data, &a.scm) {
        (Some(path), _) => (empirical_mspe(&predictor, &Dataset::read_csv(path)?)?, "empirical"),
        (None, Some(scm)) => {
            let (scm, _) = load_model(&ModelArgs { scm: scm.clone(), svr: None })?;
            let spec = intervention(&a.intervention, &a.intervention_cov)?.unwrap_or_else(|| {
                let d_a = scm.dims().d_a;
                InterventionSpec::Random { mean: DVector::zeros(d_a), cov: scm.sigma_a().clone() }
            });
            (mspe_under_intervention(&scm, &predictor, &spec)?, "population")
        }
        (None, None) => return Err(usage("evaluate needs --data or --scm")),
    };
    match g.format {
        Format::Json => print_json(&json!({ "mspe": mspe, "source": source })),
        Format::Text => {
            out!("{source} mspe\t{mspe}");
            Ok(())
        }
    }
}

fn worst_case(g: &Global, a: &WorstCaseArgs) -> CliResult {
    let predictor = LinearPredictor::load(&a.predictor)?;
    let (scm, proxies) = load_model(&a.model)?;
    let (kind, omega) = match a.set {
        SetArg::Ols => (SetKind::Ols, None),
        SetArg::Ar => (SetKind::Ar, None),
        SetArg::Par => {
            let p = proxies.as_ref().ok_or_else(|| usage("--set par needs a model with proxies (or --svr)"))?;
            (SetKind::Par, Some(omega_w_population(scm.sigma_a(), p)?))
        }
    };
    let set = build_set(kind, scm.sigma_a(), a.lambda, omega.as_ref())?;
    let wc = worst_case_mspe(&scm, &predictor, &set)?;
    match g.format {
        Format::Json => print_json(&serde_json::to_value(wc.record(&set)).map_err(proxy_anchor::Error::from)?),
        Format::Text => {
            out!("worst-case mspe\t{}", wc.value);
            let nu: Vec<String> = wc.nu_star.iter().map(|v| v.to_string()).collect();
            out!("maximizer\t{}", nu.join(","));
            Ok(())
        }
    }
}

fn identify(g: &Global, a: &IdentifyArgs) -> CliResult {
    let cfg = bundles::SuppBConfig::from_json(&bundles::resolve(&a.config)?)?;
    let lambda = a.lambda.unwrap_or(cfg.lambda);
    let step = a.step.unwrap_or(cfg.grid_step);
    let scan = scan_family(&cfg.covariance()?, lambda, step)?;
    if let Some(p) = &a.out {
        let path = output_path(p)?;
        let file = std::fs::File::create(&path).map_err(|e| proxy_anchor::Error::io(&path, e))?;
        scan.write_csv_to(std::io::BufWriter::new(file))?;
    }
    let gamma_par = scan.rows.first().map(|r| r.gamma_par);
    match g.format {
        Format::Json => print_json(&json!({
            "lambda": lambda,
            "step": step,
            "feasible_rho_w": scan.feasible_range(),
            "gamma_par": gamma_par,
            "gamma_ar_range": scan.gamma_ar_range(),
            "rows": scan.rows,
        })),
        Format::Text if a.out.is_none() => Ok(scan.write_csv_to(std::io::stdout().lock())?),
        Format::Text => {
            if let Some((lo, hi)) = scan.feasible_range() {
                out!("feasible rho_w\t[{lo}, {hi}]");
            }
            if let Some(v) = gamma_par {
                out!("gamma_par\t{v}");
            }
            if let Some((lo, hi)) = scan.gamma_ar_range() {
                out!("gamma_ar range\t[{lo}, {hi}]");
            }
            Ok(())
        }
    }
}

fn experiment(g: &Global, a: &ExperimentArgs) -> CliResult {
    let kind: ExperimentKind = a.kind.parse().map_err(|e: proxy_anchor::Error| usage(e.to_string()))?;
    let mut setup = ExperimentSetup::resolve(a.config.as_deref().unwrap_or(kind.default_bundle()))?;
    if setup.config.kind != kind {
        return Err(CliError::Domain(proxy_anchor::Error::Config(format!(
            "configuration is for experiment '{}', not '{}'",
            setup.config.kind.as_str(),
            kind.as_str()
        ))));
    }
    if let Some(m) = a.m {
        setup.config.replicates = m;
    }
    if let Some(n) = a.n {
        setup.config.sample_sizes = vec![n];
    }
    if let Some(seed) = g.seed {
        setup.config.seed = seed;
    }
    if g.jobs.is_some() {
        setup.config.jobs = g.jobs;
    }
    let format = match g.format {
        Format::Json => OutputFormat::Json,
        Format::Text => OutputFormat::Csv,
    };
    let ext = if format == OutputFormat::Json { "json" } else { "csv" };
    let target = match (&a.out, out_dir(), &setup.config.output) {
        (Some(p), _, _) => Some((output_path(p)?, format)),
        (None, Some(dir), _) => Some((dir.join(format!("{}.{ext}", kind.as_str())), format)),
        (None, None, Some(spec)) => Some((setup.resolve_path(&spec.path), spec.format)),
        (None, None, None) => None,
    };
    let table = run_experiment(&setup)?;
    match target {
        Some((path, format)) => {
            let written = emit_results(&table, format, &path)?;
            for p in written {
                eprintln!("wrote {}", p.display());
            }
        }
        None => match format {
            OutputFormat::Json => print_json(&serde_json::to_value(&table).map_err(proxy_anchor::Error::from)?)?,
            OutputFormat::Csv => {
                let mut out = std::io::stdout().lock();
                let _ = writeln!(out, "estimator,n,svr,cell,metric,count,mean,median");
                for s in &table.summary {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{},{}",
                        s.estimator,
                        s.n.map_or(String::new(), |v| v.to_string()),
                        s.svr.map_or(String::new(), |v| v.to_string()),
                        s.cell,
                        s.metric,
                        s.count,
                        s.mean,
                        s.median
                    );
                }
            }
        },
    }
    Ok(())
}

fn cv(g: &Global, a: &CvArgs) -> CliResult {
    let method = method(&a.method)?;
    if method.is_targeted() {
        return Err(usage(format!("cross-validation selects lambda; {method} has no lambda")));
    }
    let data = load_data(&a.data, g.seed.unwrap_or(0))?;
    let grid = a.grid.clone().unwrap_or_else(|| DEFAULT_LAMBDA_GRID.to_vec());
    let res = loog_cv_lambda(&data, &grid, method)?;
    match g.format {
        Format::Json => print_json(&json!({ "method": method, "lambda": res.lambda, "scores": res.scores })),
        Format::Text => {
            out!("lambda\t{}", res.lambda);
            for (l, s) in &res.scores {
                out!("{l}\t{s}");
            }
            Ok(())
        }
    }
}
