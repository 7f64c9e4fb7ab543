use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::config::OutputFormat;

/// One measurement. Population-level values have no replicate or seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub estimator: String,
    pub replicate: Option<usize>,
    pub n: Option<usize>,
    pub svr: Option<f64>,
    pub lambda: Option<f64>,
    /// Free-form grid label, e.g. a test distribution or coefficient group.
    pub cell: String,
    pub metric: String,
    pub value: f64,
    pub seed: Option<u64>,
}

/// Replicate statistics of one cell; population rows are not summarized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub estimator: String,
    pub n: Option<usize>,
    pub svr: Option<f64>,
    pub lambda: Option<f64>,
    pub cell: String,
    pub metric: String,
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
}

/// Linearly interpolated quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        len => {
            let pos = q.clamp(0.0, 1.0) * (len - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

type Key = (String, String, Option<usize>, Option<u64>, Option<u64>, String, String);

fn key_of(r: &ResultRow) -> Key {
    (
        r.experiment.clone(),
        r.estimator.clone(),
        r.n,
        r.svr.map(f64::to_bits),
        r.lambda.map(f64::to_bits),
        r.cell.clone(),
        r.metric.clone(),
    )
}

/// Query over the raw rows.
#[derive(Debug, Clone, Default)]
pub struct Filter<'a> {
    pub estimator: Option<&'a str>,
    pub metric: Option<&'a str>,
    pub cell: Option<&'a str>,
    pub n: Option<usize>,
    pub svr: Option<f64>,
    /// Only replicate rows (`Some(true)`) or only population rows.
    pub replicated: Option<bool>,
}

impl Filter<'_> {
    fn accepts(&self, r: &ResultRow) -> bool {
        self.estimator.is_none_or(|e| r.estimator == e)
            && self.metric.is_none_or(|m| r.metric == m)
            && self.cell.is_none_or(|c| r.cell == c)
            && self.n.is_none_or(|n| r.n == Some(n))
            && self.svr.is_none_or(|s| r.svr.is_some_and(|v| (v - s).abs() < 1e-12))
            && self.replicated.is_none_or(|rep| r.replicate.is_some() == rep)
    }
}

impl ResultTable {
    pub fn from_rows(rows: Vec<ResultRow>) -> Self {
        let mut t = ResultTable {
            rows,
            summary: Vec::new(),
        };
        t.summary = t.summarize();
        t
    }

    /// Summaries recomputed from the raw rows, in order of first appearance.
    pub fn summarize(&self) -> Vec<SummaryRow> {
        let mut order: Vec<Key> = Vec::new();
        let mut groups: HashMap<Key, (usize, Vec<f64>)> = HashMap::new();
        for (i, r) in self.rows.iter().enumerate() {
            if r.replicate.is_none() {
                continue;
            }
            let k = key_of(r);
            let entry = groups.entry(k.clone()).or_insert_with(|| {
                order.push(k);
                (i, Vec::new())
            });
            entry.1.push(r.value);
        }
        order
            .into_iter()
            .map(|k| {
                let (first, mut values) = groups.remove(&k).unwrap_or_default();
                let r = &self.rows[first];
                let count = values.len();
                let mean = values.iter().sum::<f64>() / count as f64;
                let sd = if count > 1 {
                    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1) as f64).sqrt()
                } else {
                    0.0
                };
                values.sort_by(f64::total_cmp);
                SummaryRow {
                    experiment: r.experiment.clone(),
                    estimator: r.estimator.clone(),
                    n: r.n,
                    svr: r.svr,
                    lambda: r.lambda,
                    cell: r.cell.clone(),
                    metric: r.metric.clone(),
                    count,
                    mean,
                    sd,
                    median: quantile_sorted(&values, 0.5),
                    q25: quantile_sorted(&values, 0.25),
                    q75: quantile_sorted(&values, 0.75),
                }
            })
            .collect()
    }

    pub fn select<'a>(&'a self, f: &'a Filter<'a>) -> impl Iterator<Item = &'a ResultRow> + 'a {
        self.rows.iter().filter(move |r| f.accepts(r))
    }

    pub fn values(&self, f: &Filter<'_>) -> Vec<f64> {
        self.select(f).map(|r| r.value).collect()
    }

    /// Values keyed by replicate index.
    pub fn by_replicate(&self, f: &Filter<'_>) -> HashMap<usize, f64> {
        self.select(f)
            .filter_map(|r| r.replicate.map(|i| (i, r.value)))
            .collect()
    }

    /// Fraction of replicates where `pred(a, b)` holds for the paired values
    /// selected by `fa` and `fb`.
    pub fn paired_fraction(&self, fa: &Filter<'_>, fb: &Filter<'_>, pred: impl Fn(f64, f64) -> bool) -> f64 {
        let a = self.by_replicate(fa);
        let b = self.by_replicate(fb);
        let mut total = 0usize;
        let mut hits = 0usize;
        for (i, va) in &a {
            if let Some(vb) = b.get(i) {
                total += 1;
                if pred(*va, *vb) {
                    hits += 1;
                }
            }
        }
        if total == 0 {
            f64::NAN
        } else {
            hits as f64 / total as f64
        }
    }

    pub fn summary_for(&self, f: &Filter<'_>) -> Vec<&SummaryRow> {
        self.summary
            .iter()
            .filter(|s| {
                f.estimator.is_none_or(|e| s.estimator == e)
                    && f.metric.is_none_or(|m| s.metric == m)
                    && f.cell.is_none_or(|c| s.cell == c)
                    && f.n.is_none_or(|n| s.n == Some(n))
                    && f.svr.is_none_or(|v| s.svr.is_some_and(|x| (x - v).abs() < 1e-12))
            })
            .collect()
    }

    pub fn extend(&mut self, other: ResultTable) {
        self.rows.extend(other.rows);
        self.summary = self.summarize();
    }
}

const RAW_HEADER: [&str; 10] = [
    "experiment", "estimator", "replicate", "n", "svr", "lambda", "cell", "metric", "value", "seed",
];
const SUMMARY_HEADER: [&str; 13] = [
    "experiment", "estimator", "n", "svr", "lambda", "cell", "metric", "count", "mean", "sd", "median",
    "q25", "q75",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt<T: std::str::FromStr>(s: &str, what: &str) -> Result<Option<T>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::Data(format!("cannot parse {what} value '{s}'")))
}

fn parse_req<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    parse_opt(s, what)?.ok_or_else(|| Error::Data(format!("missing {what} value")))
}

/// Companion path of the summary table: `out.csv` -> `out_summary.csv`.
pub fn summary_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path.extension().map(|e| e.to_string_lossy().into_owned());
    let name = match ext {
        Some(e) => format!("{stem}_summary.{e}"),
        None => format!("{stem}_summary"),
    };
    path.with_file_name(name)
}

pub fn write_raw_csv<W: std::io::Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(RAW_HEADER)?;
    for r in rows {
        wr.write_record([
            r.experiment.clone(),
            r.estimator.clone(),
            opt(r.replicate),
            opt(r.n),
            opt(r.svr),
            opt(r.lambda),
            r.cell.clone(),
            r.metric.clone(),
            r.value.to_string(),
            opt(r.seed),
        ])?;
    }
    wr.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

pub fn write_summary_csv<W: std::io::Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(SUMMARY_HEADER)?;
    for s in rows {
        wr.write_record([
            s.experiment.clone(),
            s.estimator.clone(),
            opt(s.n),
            opt(s.svr),
            opt(s.lambda),
            s.cell.clone(),
            s.metric.clone(),
            s.count.to_string(),
            s.mean.to_string(),
            s.sd.to_string(),
            s.median.to_string(),
            s.q25.to_string(),
            s.q75.to_string(),
        ])?;
    }
    wr.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    if found.iter().ne(expected.iter().copied()) {
        return Err(Error::Data(format!(
            "unexpected result header; expected {}",
            expected.join(",")
        )));
    }
    Ok(())
}

pub fn read_raw_csv<R: std::io::Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_reader(input);
    check_header(rd.headers()?, &RAW_HEADER)?;
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        rows.push(ResultRow {
            experiment: f(0).to_string(),
            estimator: f(1).to_string(),
            replicate: parse_opt(f(2), "replicate")?,
            n: parse_opt(f(3), "n")?,
            svr: parse_opt(f(4), "svr")?,
            lambda: parse_opt(f(5), "lambda")?,
            cell: f(6).to_string(),
            metric: f(7).to_string(),
            value: parse_req(f(8), "value")?,
            seed: parse_opt(f(9), "seed")?,
        });
    }
    Ok(rows)
}

pub fn read_summary_csv<R: std::io::Read>(input: R) -> Result<Vec<SummaryRow>> {
    let mut rd = csv::Reader::from_reader(input);
    check_header(rd.headers()?, &SUMMARY_HEADER)?;
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        rows.push(SummaryRow {
            experiment: f(0).to_string(),
            estimator: f(1).to_string(),
            n: parse_opt(f(2), "n")?,
            svr: parse_opt(f(3), "svr")?,
            lambda: parse_opt(f(4), "lambda")?,
            cell: f(5).to_string(),
            metric: f(6).to_string(),
            count: parse_req(f(7), "count")?,
            mean: parse_req(f(8), "mean")?,
            sd: parse_req(f(9), "sd")?,
            median: parse_req(f(10), "median")?,
            q25: parse_req(f(11), "q25")?,
            q75: parse_req(f(12), "q75")?,
        });
    }
    Ok(rows)
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufWriter::new(f))
}

/// Writes the raw rows to `path` and, for CSV, the summary to
/// [`summary_path`]. JSON holds both tables in one document.
/// Returns the files written.
pub fn emit_results(table: &ResultTable, format: OutputFormat, path: &Path) -> Result<Vec<PathBuf>> {
    match format {
        OutputFormat::Csv => {
            write_raw_csv(&table.rows, create(path)?)?;
            let sp = summary_path(path);
            write_summary_csv(&table.summary, create(&sp)?)?;
            Ok(vec![path.to_path_buf(), sp])
        }
        OutputFormat::Json => {
            serde_json::to_writer_pretty(create(path)?, table)?;
            Ok(vec![path.to_path_buf()])
        }
    }
}

pub fn read_results(path: &Path, format: OutputFormat) -> Result<ResultTable> {
    let open = |p: &Path| std::fs::File::open(p).map_err(|e| Error::io(p, e));
    match format {
        OutputFormat::Csv => {
            let rows = read_raw_csv(open(path)?)?;
            let summary = read_summary_csv(open(&summary_path(path))?)?;
            Ok(ResultTable { rows, summary })
        }
        OutputFormat::Json => Ok(serde_json::from_reader(std::io::BufReader::new(open(path)?))?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(est: &str, rep: Option<usize>, value: f64) -> ResultRow {
        ResultRow {
            experiment: "t".into(),
            estimator: est.into(),
            replicate: rep,
            n: Some(10),
            svr: Some(0.1 + 0.2),
            lambda: Some(5.0),
            cell: String::new(),
            metric: "mspe".into(),
            value,
            seed: rep.map(|r| r as u64 * 7),
        }
    }

    #[test]
    fn empty_table_writes_headers_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        emit_results(&ResultTable::default(), OutputFormat::Csv, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.trim(), RAW_HEADER.join(","));
        assert_eq!(read_results(&p, OutputFormat::Csv).unwrap(), ResultTable::default());
    }

    #[test]
    fn round_trip_both_formats() {
        let t = ResultTable::from_rows(vec![
            row("par", Some(0), 1.0 / 3.0),
            row("par", Some(1), 2.5),
            row("ols", None, 4.0),
        ]);
        let dir = tempfile::tempdir().unwrap();
        for (fmt, name) in [(OutputFormat::Csv, "r.csv"), (OutputFormat::Json, "r.json")] {
            let p = dir.path().join(name);
            emit_results(&t, fmt, &p).unwrap();
            assert_eq!(read_results(&p, fmt).unwrap(), t);
        }
    }

    #[test]
    fn summaries_skip_population_rows() {
        let t = ResultTable::from_rows(vec![
            row("par", Some(0), 1.0),
            row("par", Some(1), 3.0),
            row("par", Some(2), 2.0),
            row("par", None, 100.0),
        ]);
        assert_eq!(t.summary.len(), 1);
        let s = &t.summary[0];
        assert_eq!((s.count, s.median, s.q25, s.q75), (3, 2.0, 1.5, 2.5));
        assert!((s.sd - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile_sorted(&[0.0, 10.0], 0.25), 2.5);
        assert!(quantile_sorted(&[], 0.5).is_nan());
    }

    #[test]
    fn summary_path_suffix() {
        assert_eq!(summary_path(Path::new("a/b.csv")), PathBuf::from("a/b_summary.csv"));
    }
}
