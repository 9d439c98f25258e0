//! Report files: per-sample rows, aggregates, statistics, plot data,
//! clamp warnings and timings.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::error::{csv_err, io_err, HarnessError, Result};
use crate::metrics::{fmt_f64, mean, parse_f64, std_dev};

pub const REPORT_COLUMNS: [&str; 11] = [
    "id", "family", "method", "t", "tau", "v_hat", "i_start", "steps", "mse", "psnr", "residual",
];

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub id: usize,
    pub family: String,
    pub method: String,
    pub t: f64,
    pub tau: f64,
    pub v_hat: Option<f64>,
    pub i_start: usize,
    pub steps: usize,
    pub mse: f64,
    pub psnr: f64,
    pub residual: f64,
}

impl MetricsRow {
    fn record(&self) -> [String; 11] {
        [
            self.id.to_string(),
            self.family.clone(),
            self.method.clone(),
            fmt_f64(self.t),
            fmt_f64(self.tau),
            self.v_hat.map(fmt_f64).unwrap_or_default(),
            self.i_start.to_string(),
            self.steps.to_string(),
            fmt_f64(self.mse),
            fmt_f64(self.psnr),
            fmt_f64(self.residual),
        ]
    }

    fn parse(rec: &csv::StringRecord, path: &Path, line: usize) -> Result<Self> {
        let err = |message: String| HarnessError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if rec.len() != REPORT_COLUMNS.len() {
            return Err(err(format!("expected {} fields, found {}", REPORT_COLUMNS.len(), rec.len())));
        }
        let float = |k: usize| parse_f64(&rec[k]).ok_or_else(|| err(format!("bad number {:?} in {}", &rec[k], REPORT_COLUMNS[k])));
        let int = |k: usize| {
            rec[k]
                .parse::<usize>()
                .map_err(|_| err(format!("bad integer {:?} in {}", &rec[k], REPORT_COLUMNS[k])))
        };
        Ok(Self {
            id: int(0)?,
            family: rec[1].to_string(),
            method: rec[2].to_string(),
            t: float(3)?,
            tau: float(4)?,
            v_hat: if rec[5].is_empty() { None } else { Some(float(5)?) },
            i_start: int(6)?,
            steps: int(7)?,
            mse: float(8)?,
            psnr: float(9)?,
            residual: float(10)?,
        })
    }
}

/// Stable sort by sample id; rows of one sample keep their relative order.
pub fn sort_rows(rows: &mut [MetricsRow]) {
    rows.sort_by_key(|r| r.id);
}

/// Writes `#`-prefixed header lines (config, then notes) followed by the CSV.
pub fn write_report(path: &Path, config_toml: &str, notes: &[String], rows: &[MetricsRow]) -> Result<()> {
    let mut out = String::new();
    out.push_str("# config\n");
    for line in config_toml.lines() {
        let _ = writeln!(out, "# {line}");
    }
    for note in notes {
        let _ = writeln!(out, "# note: {note}");
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_COLUMNS).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r.record()).map_err(csv_err(path))?;
    }
    let body = w.into_inner().map_err(|e| HarnessError::Invalid(e.to_string()))?;
    out.push_str(std::str::from_utf8(&body).expect("csv output is UTF-8"));
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_report(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let skipped = text.lines().take_while(|l| l.starts_with('#')).count();
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(csv_err(path))?.clone();
    if headers.iter().ne(REPORT_COLUMNS) {
        return Err(HarnessError::Parse {
            path: path.to_path_buf(),
            line: skipped + 1,
            message: format!("unexpected header {headers:?}"),
        });
    }
    reader
        .records()
        .enumerate()
        .map(|(k, rec)| MetricsRow::parse(&rec.map_err(csv_err(path))?, path, skipped + k + 2))
        .collect()
}

/// Config text embedded in a report header.
pub fn read_report_config(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = String::new();
    for line in text.lines().skip(1) {
        if !line.starts_with('#') || line.starts_with("# note: ") {
            break;
        }
        out.push_str(line.strip_prefix("# ").unwrap_or(""));
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub family: String,
    pub method: String,
    pub n: usize,
    pub mean_mse: f64,
    pub mean_psnr: f64,
    pub mean_residual: f64,
    pub mean_v_hat: f64,
    pub mean_steps: f64,
    pub std_steps: f64,
}

/// One aggregate per `(family, method)` in order of first appearance.
pub fn summarize(rows: &[MetricsRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for r in rows {
        let k = (r.family.as_str(), r.method.as_str());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(family, method)| {
            let group: Vec<&MetricsRow> = rows.iter().filter(|r| r.family == family && r.method == method).collect();
            let col = |f: fn(&MetricsRow) -> f64| group.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let v: Vec<f64> = group.iter().filter_map(|r| r.v_hat).collect();
            let steps = col(|r| r.steps as f64);
            SummaryRow {
                family: family.to_string(),
                method: method.to_string(),
                n: group.len(),
                mean_mse: mean(&col(|r| r.mse)),
                mean_psnr: mean(&col(|r| r.psnr)),
                mean_residual: mean(&col(|r| r.residual)),
                mean_v_hat: mean(&v),
                mean_steps: mean(&steps),
                std_steps: std_dev(&steps),
            }
        })
        .collect()
}

pub fn summary_csv(summary: &[SummaryRow]) -> String {
    let mut out =
        String::from("family,method,n,mean_mse,mean_psnr,mean_residual,mean_v_hat,mean_steps,std_steps\n");
    for s in summary {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            s.family,
            s.method,
            s.n,
            fmt_f64(s.mean_mse),
            fmt_f64(s.mean_psnr),
            fmt_f64(s.mean_residual),
            fmt_f64(s.mean_v_hat),
            fmt_f64(s.mean_steps),
            fmt_f64(s.std_steps)
        );
    }
    out
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
    reader
        .records()
        .enumerate()
        .map(|(k, rec)| {
            let rec = rec.map_err(csv_err(path))?;
            let err = |m: &str| HarnessError::Parse {
                path: path.to_path_buf(),
                line: k + 2,
                message: m.to_string(),
            };
            let f = |i: usize| parse_f64(&rec[i]).ok_or_else(|| err("bad number"));
            Ok(SummaryRow {
                family: rec[0].to_string(),
                method: rec[1].to_string(),
                n: rec[2].parse().map_err(|_| err("bad count"))?,
                mean_mse: f(3)?,
                mean_psnr: f(4)?,
                mean_residual: f(5)?,
                mean_v_hat: f(6)?,
                mean_steps: f(7)?,
                std_steps: f(8)?,
            })
        })
        .collect()
}

pub type Stats = Vec<(String, f64)>;

pub fn stats_csv(stats: &Stats) -> String {
    let mut out = String::from("name,value\n");
    for (k, v) in stats {
        let _ = writeln!(out, "{k},{}", fmt_f64(*v));
    }
    out
}

pub fn read_stats(path: &Path) -> Result<Stats> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
    reader
        .records()
        .enumerate()
        .map(|(k, rec)| {
            let rec = rec.map_err(csv_err(path))?;
            let v = parse_f64(&rec[1]).ok_or_else(|| HarnessError::Parse {
                path: path.to_path_buf(),
                line: k + 2,
                message: format!("bad value {:?}", &rec[1]),
            })?;
            Ok((rec[0].to_string(), v))
        })
        .collect()
}

pub fn stat(stats: &Stats, name: &str) -> Option<f64> {
    stats.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
}

/// A clamped noise-correction event.
#[derive(Debug, Clone, PartialEq)]
pub struct WarningRow {
    pub id: usize,
    pub family: String,
    pub method: String,
    pub requested: f64,
}

pub fn warnings_csv(rows: &[WarningRow]) -> String {
    let mut out = String::from("id,family,method,requested_c_vhat\n");
    for w in rows {
        let _ = writeln!(out, "{},{},{},{}", w.id, w.family, w.method, fmt_f64(w.requested));
    }
    out
}

pub fn plotdata_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("x,y\n");
    for (x, y) in points {
        let _ = writeln!(out, "{},{}", fmt_f64(*x), fmt_f64(*y));
    }
    out
}

/// Accumulated wall-clock per `(family, method)`.
#[derive(Debug, Clone, Default)]
pub struct Timings {
    entries: Vec<(String, String, usize, Duration)>,
}

impl Timings {
    pub fn add(&mut self, family: &str, method: &str, d: Duration) {
        match self.entries.iter_mut().find(|e| e.0 == family && e.1 == method) {
            Some(e) => {
                e.2 += 1;
                e.3 += d;
            }
            None => self.entries.push((family.into(), method.into(), 1, d)),
        }
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("family,method,n,total_seconds,mean_seconds\n");
        for (f, m, n, d) in &self.entries {
            let s = d.as_secs_f64();
            let _ = writeln!(out, "{f},{m},{n},{s:.6},{:.6}", s / *n as f64);
        }
        out
    }
}

/// Everything one experiment writes into its directory.
#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub rows: Vec<MetricsRow>,
    pub notes: Vec<String>,
    pub plots: Vec<(String, Vec<(f64, f64)>)>,
    pub warnings: Vec<WarningRow>,
    pub timings: Timings,
}

pub struct ReportPaths {
    pub dir: PathBuf,
}

impl ReportPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
    pub fn report(&self) -> PathBuf {
        self.dir.join("report.csv")
    }
    pub fn summary(&self) -> PathBuf {
        self.dir.join("summary.csv")
    }
    pub fn stats(&self) -> PathBuf {
        self.dir.join("stats.csv")
    }
    pub fn warnings(&self) -> PathBuf {
        self.dir.join("warnings.csv")
    }
    pub fn timing(&self) -> PathBuf {
        self.dir.join("timing.csv")
    }
    pub fn plot(&self, name: &str) -> PathBuf {
        self.dir.join(format!("plotdata_{name}.csv"))
    }
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text).map_err(io_err(path))
}

/// Writes all files, then re-derives summary and statistics from the
/// written `report.csv` and checks they match byte for byte.
pub fn write_experiment(
    dir: &Path,
    config_toml: &str,
    mut output: ExperimentOutput,
    stats_fn: impl Fn(&[MetricsRow]) -> Result<Stats>,
) -> Result<Stats> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let paths = ReportPaths::new(dir);
    sort_rows(&mut output.rows);
    write_report(&paths.report(), config_toml, &output.notes, &output.rows)?;
    let summary = summary_csv(&summarize(&output.rows));
    write(paths.summary(), &summary)?;
    let stats = stats_fn(&output.rows)?;
    write(paths.stats(), &stats_csv(&stats))?;
    write(paths.warnings(), &warnings_csv(&output.warnings))?;
    write(paths.timing(), &output.timings.csv())?;
    for (name, points) in &output.plots {
        write(paths.plot(name), &plotdata_csv(points))?;
    }
    audit(dir, &stats_fn)?;
    Ok(stats)
}

pub fn audit(dir: &Path, stats_fn: &impl Fn(&[MetricsRow]) -> Result<Stats>) -> Result<()> {
    let paths = ReportPaths::new(dir);
    let rows = read_report(&paths.report())?;
    let fail = |path: PathBuf, message: &str| HarnessError::Audit {
        path,
        message: message.to_string(),
    };
    let summary = fs::read_to_string(paths.summary()).map_err(io_err(paths.summary()))?;
    if summary != summary_csv(&summarize(&rows)) {
        return Err(fail(paths.summary(), "aggregates differ from recomputation over report.csv"));
    }
    let stats = fs::read_to_string(paths.stats()).map_err(io_err(paths.stats()))?;
    if stats != stats_csv(&stats_fn(&rows)?) {
        return Err(fail(paths.stats(), "statistics differ from recomputation over report.csv"));
    }
    Ok(())
}
